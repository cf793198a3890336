use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::Channel;

/// One vector per item id, all of the same dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub channel: Channel,
    item_ids: Vec<String>,
    lookup: HashMap<String, usize>,
    vectors: Tensor,
}

impl EmbeddingTable {
    /// `vectors` is `[item_ids.len(), d]`.
    pub fn new(channel: Channel, item_ids: Vec<String>, vectors: Tensor) -> Result<Self> {
        if vectors.shape().len() != 2 || vectors.rows() != item_ids.len() {
            return Err(Error::Shape(format!(
                "{} ids but vectors of shape {:?}",
                item_ids.len(),
                vectors.shape()
            )));
        }
        if let Some(r) = (0..vectors.rows()).find(|&r| vectors.row(r).iter().any(|v| !v.is_finite())) {
            return Err(Error::Contract(format!("non-finite embedding for item `{}`", item_ids[r])));
        }
        let mut lookup = HashMap::with_capacity(item_ids.len());
        for (i, id) in item_ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate item `{id}` in embedding table")));
            }
        }
        Ok(EmbeddingTable {
            channel,
            item_ids,
            lookup,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    /// The stored vector for `item`.
    pub fn embed_item(&self, item: &str) -> Result<&[f64]> {
        self.lookup
            .get(item)
            .map(|&i| self.vectors.row(i))
            .ok_or_else(|| Error::Lookup {
                kind: "item",
                id: item.to_string(),
            })
    }

    /// Rows reordered to follow `ids`; every id must be present.
    pub fn aligned(&self, ids: &[String]) -> Result<Tensor> {
        let mut out = Tensor::zeros(&[ids.len(), self.dim()]);
        for (r, id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.embed_item(id)?);
        }
        Ok(out)
    }

    /// `item_id<TAB>v1,v2,…` lines in shortest round-trip float form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, id) in self.item_ids.iter().enumerate() {
            s.push_str(id);
            s.push('\t');
            for (k, v) in self.vectors.row(i).iter().enumerate() {
                if k > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the text form; stable as long as the table is unchanged.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

pub fn load_semantic_embeddings(path: impl AsRef<Path>, expected_dim: usize) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string(), expected_dim, Channel::Semantic)
}

pub fn parse_embeddings(text: &str, origin: &str, expected_dim: usize, channel: Channel) -> Result<EmbeddingTable> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: n + 1,
            msg,
        };
        let (id, values) = line.split_once('\t').ok_or_else(|| err("expected item_id<TAB>values".into()))?;
        let row = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(format!("item `{id}`: non-numeric value")))?;
        if row.len() != expected_dim {
            return Err(err(format!("item `{id}` has {} values, expected {expected_dim}", row.len())));
        }
        ids.push(id.to_string());
        data.extend(row);
    }
    if ids.is_empty() {
        return Err(Error::Empty(format!("{origin}: no embeddings")));
    }
    let vectors = Tensor::matrix(ids.len(), expected_dim, data)?;
    EmbeddingTable::new(channel, ids, vectors)
}
