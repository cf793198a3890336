//! Text container for named tensors: a header line carrying a fingerprint,
//! then one `name<TAB>d1xd2<TAB>v1,v2,…` line per tensor. Values are written in
//! shortest round-trip form, so a load reproduces every bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "# dualtok-tensors v1";

pub fn format_tensors<'a>(fingerprint: &str, tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> String {
    let mut out = format!("{MAGIC} fingerprint={fingerprint}\n");
    for (name, t) in tensors {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = write!(out, "{name}\t{}\t", shape.join("x"));
        for (i, v) in t.data().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

/// Parses a container, returning its fingerprint and tensors in file order.
pub fn parse_tensors(text: &str, origin: &str) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut lines = text.lines().enumerate();
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let (_, header) = lines.next().ok_or_else(|| Error::Empty(format!("{origin}: empty checkpoint")))?;
    let fingerprint = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.trim().strip_prefix("fingerprint="))
        .ok_or_else(|| err(1, "missing checkpoint header".into()))?
        .to_string();
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(err(n + 1, "expected name, shape and values".into()));
        }
        let shape = parts[1]
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(n + 1, format!("bad shape `{}`", parts[1])))?;
        let data = parts[2]
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(n + 1, "bad tensor value".into()))?;
        let t = Tensor::new(shape, data).map_err(|e| err(n + 1, e.to_string()))?;
        out.push((parts[0].to_string(), t));
    }
    Ok((fingerprint, out))
}

pub fn save_store(path: impl AsRef<Path>, fingerprint: &str, store: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_tensors(fingerprint, store.iter())).map_err(|e| Error::io(path, e))
}

/// Loads values into an already-built store, checking the fingerprint, the
/// parameter names and every shape.
pub fn load_into_store(path: impl AsRef<Path>, fingerprint: &str, store: &mut ParamStore) -> Result<()> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (found, tensors) = parse_tensors(&text, &path.display().to_string())?;
    if found != fingerprint {
        return Err(Error::StaleCheckpoint {
            expected: fingerprint.to_string(),
            found,
        });
    }
    if tensors.len() != store.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store.id(&name)?;
        store.set_value(id, t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::randn(&[3, 2], 1.0, &mut rng)).unwrap();
        store.add("b", Tensor::row_vector(vec![1e-300, -0.1, 1.0 / 3.0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tensors");
        save_store(&path, "abc", &store).unwrap();
        let mut fresh = ParamStore::new();
        fresh.add("a.w", Tensor::zeros(&[3, 2])).unwrap();
        fresh.add("b", Tensor::zeros(&[1, 3])).unwrap();
        load_into_store(&path, "abc", &mut fresh).unwrap();
        for ((_, a), (_, b)) in store.iter().zip(fresh.iter()) {
            assert_eq!(a, b);
        }
        match load_into_store(&path, "other", &mut fresh) {
            Err(Error::StaleCheckpoint { found, .. }) => assert_eq!(found, "abc"),
            other => panic!("{other:?}"),
        }
    }
}
