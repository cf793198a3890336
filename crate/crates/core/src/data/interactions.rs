use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        Interaction {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
        }
    }
}

/// Reads `user_id<TAB>item_id<TAB>timestamp` rows; `#` lines and blank lines
/// are skipped.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<Interaction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, &path.display().to_string())
}

pub fn parse_interactions(text: &str, origin: &str) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(err("empty user or item id".into()));
        }
        let timestamp: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(format!("timestamp `{}` is not an integer", fields[2].trim())))?;
        if timestamp < 0 {
            return Err(err(format!("negative timestamp {timestamp}")));
        }
        out.push(Interaction::new(user, item, timestamp));
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("{origin}: no interactions")));
    }
    Ok(out)
}

pub fn format_interactions(rows: &[Interaction]) -> String {
    let mut s = String::with_capacity(rows.len() * 24);
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}", r.user_id, r.item_id, r.timestamp);
    }
    s
}

pub fn write_interactions(path: impl AsRef<Path>, rows: &[Interaction]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_interactions(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_in_order() {
        let rows = parse_interactions("u1\ti1\t10\nu1\ti2\t11\nu2\ti1\t5\n", "t").unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2], Interaction::new("u2", "i1", 5));
    }

    #[test]
    fn comments_are_skipped() {
        let text = "# header\nu1\ti1\t10\n# mid\n\nu2\ti9\t3\n";
        let rows = parse_interactions(text, "t").unwrap();
        let hand = vec![Interaction::new("u1", "i1", 10), Interaction::new("u2", "i9", 3)];
        assert_eq!(rows, hand);
    }

    #[test]
    fn bad_timestamp_names_line() {
        match parse_interactions("u1\ti1\t10\nu1\ti2\tnoon\n", "f.tsv") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, "f.tsv");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_interactions("# only\n", "t"), Err(Error::Empty(_))));
        assert!(parse_interactions("u\ti\n", "t").is_err());
    }
}
