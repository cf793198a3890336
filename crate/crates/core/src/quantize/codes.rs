use std::collections::HashMap;
use std::fmt::Write as _;

use super::RqVae;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::Channel;

/// Per-item code lists of one channel, indexed like the dataset's items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemCodes {
    pub channel: Channel,
    pub codebook_size: usize,
    pub codes: Vec<Vec<usize>>,
}

impl ItemCodes {
    pub fn new(channel: Channel, codebook_size: usize, codes: Vec<Vec<usize>>) -> Result<Self> {
        let levels = codes.first().map_or(0, Vec::len);
        for (i, c) in codes.iter().enumerate() {
            if c.len() != levels || c.iter().any(|&k| k >= codebook_size) {
                return Err(Error::Contract(format!(
                    "item {i}: codes {c:?} do not fit {levels} levels of size {codebook_size}"
                )));
            }
        }
        Ok(ItemCodes {
            channel,
            codebook_size,
            codes,
        })
    }

    pub fn levels(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn usage(&self) -> Vec<LevelUsage> {
        (0..self.levels())
            .map(|l| LevelUsage::from_indices(self.codes.iter().map(|c| c[l]), self.codebook_size))
            .collect()
    }
}

/// Histogram of one level's indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelUsage {
    pub counts: Vec<usize>,
    /// `exp` of the usage entropy (nats).
    pub perplexity: f64,
}

impl LevelUsage {
    pub fn from_indices(indices: impl IntoIterator<Item = usize>, codebook_size: usize) -> Self {
        let mut counts = vec![0usize; codebook_size];
        for k in indices {
            counts[k] += 1;
        }
        let total: usize = counts.iter().sum();
        let entropy: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln()
            })
            .sum();
        LevelUsage {
            counts,
            perplexity: entropy.exp(),
        }
    }

    pub fn used(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Per-level index histogram of `data` (`[n, input_dim]`) and its perplexity.
pub fn codebook_usage(model: &RqVae, store: &ParamStore, data: &Tensor) -> Result<Vec<LevelUsage>> {
    let codes = model.encode_all(store, data)?;
    Ok(ItemCodes::new(model.channel, model.codebook_size(), codes)?.usage())
}

/// `item_id<TAB>channel<TAB>idx1,idx2,…` lines.
pub fn format_codes(item_ids: &[String], codes: &ItemCodes) -> Result<String> {
    if item_ids.len() != codes.len() {
        return Err(Error::Shape(format!("{} ids for {} code lists", item_ids.len(), codes.len())));
    }
    let mut s = String::new();
    for (id, c) in item_ids.iter().zip(&codes.codes) {
        let list: Vec<String> = c.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(s, "{id}\t{}\t{}", codes.channel, list.join(","));
    }
    Ok(s)
}

/// Parses code lines back, ordered by `item_ids`.
pub fn parse_codes(text: &str, item_ids: &[String], codebook_size: usize) -> Result<ItemCodes> {
    let mut by_id: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut channel = None;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let err = |msg: &str| Error::Parse {
            path: "codes".into(),
            line: n + 1,
            msg: msg.to_string(),
        };
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(err("expected item, channel and codes"));
        }
        let ch: Channel = parts[1].parse()?;
        if channel.is_some_and(|c| c != ch) {
            return Err(err("mixed channels"));
        }
        channel = Some(ch);
        let list = parts[2]
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<Vec<usize>, _>>()
            .map_err(|_| err("bad code index"))?;
        by_id.insert(parts[0], list);
    }
    let codes = item_ids
        .iter()
        .map(|id| {
            by_id.remove(id.as_str()).ok_or_else(|| Error::Lookup {
                kind: "item",
                id: id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ItemCodes::new(channel.ok_or_else(|| Error::Empty("no codes".into()))?, codebook_size, codes)
}
