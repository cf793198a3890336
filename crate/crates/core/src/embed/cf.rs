use rand::seq::SliceRandom;

use super::EmbeddingTable;
use crate::data::SequenceDataset;
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Adam, AdamConfig, Graph, LayerNorm, NodeId, ParamId, ParamStore, Tensor, TransformerBlock};
use crate::Channel;

#[derive(Clone, Debug, PartialEq)]
pub struct CfConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Longest training window, in items.
    pub max_len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig {
            dim: 64,
            layers: 2,
            heads: 2,
            max_len: 50,
            epochs: 10,
            lr: 1e-3,
            batch_size: 64,
        }
    }
}

/// Self-attentive next-item model whose input item table doubles as the
/// output projection.
#[derive(Clone, Debug)]
pub struct CfEncoder {
    pub store: ParamStore,
    pub items: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
    pub config: CfConfig,
}

/// Output of [`train_cf_encoder`].
#[derive(Clone, Debug)]
pub struct CfTraining {
    pub encoder: CfEncoder,
    pub table: EmbeddingTable,
    /// Item table after every epoch, `[num_items, dim]` each.
    pub history: Vec<Tensor>,
    /// Mean next-item cross-entropy per epoch.
    pub losses: Vec<f64>,
}

impl CfEncoder {
    pub fn new(num_items: usize, config: &CfConfig, seed: u64) -> Result<Self> {
        if num_items < 2 || config.dim == 0 || config.max_len == 0 || config.layers == 0 {
            return Err(Error::Config("collaborative encoder needs ≥2 items and positive sizes".into()));
        }
        let mut rng = seeded_rng(seed, 0xCF);
        let mut store = ParamStore::new();
        let items = store.add("cf.items", Tensor::randn(&[num_items, config.dim], 0.1, &mut rng))?;
        let positions = store.add("cf.pos", Tensor::randn(&[config.max_len, config.dim], 0.02, &mut rng))?;
        let blocks = (0..config.layers)
            .map(|l| TransformerBlock::new(&mut store, &format!("cf.block{l}"), config.dim, config.heads, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(&mut store, "cf.ln", config.dim)?;
        Ok(CfEncoder {
            store,
            items,
            positions,
            blocks,
            final_norm,
            config: config.clone(),
        })
    }

    pub fn num_items(&self) -> usize {
        self.store.value(self.items).rows()
    }

    /// Hidden states for packed windows; returns `[rows, dim]`.
    fn hidden(&self, g: &mut Graph, windows: &[&[usize]]) -> NodeId {
        let mut idx = Vec::new();
        let mut pos = Vec::new();
        let mut segments = Vec::new();
        for w in windows {
            segments.push((idx.len(), w.len()));
            idx.extend_from_slice(w);
            pos.extend(0..w.len());
        }
        let table = g.param(&self.store, self.items);
        let ptable = g.param(&self.store, self.positions);
        let e = g.gather(table, &idx);
        let p = g.gather(ptable, &pos);
        let mut x = g.add(e, p);
        for b in &self.blocks {
            x = b.forward(g, &self.store, x, &segments);
        }
        self.final_norm.forward(g, &self.store, x)
    }

    /// Mean cross-entropy of predicting `seq[t+1]` from `seq[..=t]`.
    fn loss(&self, g: &mut Graph, sequences: &[&[usize]]) -> NodeId {
        let inputs: Vec<&[usize]> = sequences.iter().map(|s| &s[..s.len() - 1]).collect();
        let targets: Vec<usize> = sequences.iter().flat_map(|s| s[1..].iter().copied()).collect();
        let h = self.hidden(g, &inputs);
        let table = g.param(&self.store, self.items);
        let logits = g.matmul_t(h, table);
        let logp = g.log_softmax_rows(logits);
        let picked = g.pick_per_row(logp, &targets);
        let m = g.mean(picked);
        g.scale(m, -1.0)
    }

    /// Scores over all items for the item following `history`.
    pub fn next_item_scores(&self, history: &[usize]) -> Vec<f64> {
        let start = history.len().saturating_sub(self.config.max_len);
        let window = &history[start..];
        let mut g = Graph::new();
        let h = self.hidden(&mut g, &[window]);
        let last = g.value(h).row(window.len() - 1).to_vec();
        let table = self.store.value(self.items);
        (0..table.rows()).map(|i| crate::numerics::tensor::dot(&last, table.row(i))).collect()
    }
}

/// Training windows: the last `max_len + 1` items of each training prefix.
fn windows(dataset: &SequenceDataset, max_len: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for u in 0..dataset.num_users() {
        let s = dataset.train_items(u)?;
        if s.len() >= 2 {
            out.push(s[s.len().saturating_sub(max_len + 1)..].to_vec());
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("no training prefix has two or more items".into()));
    }
    Ok(out)
}

/// Trains on the training prefixes with a full-softmax next-item objective.
pub fn train_cf_encoder(dataset: &SequenceDataset, config: &CfConfig, seed: u64) -> Result<CfTraining> {
    let mut encoder = CfEncoder::new(dataset.num_items(), config, seed)?;
    let mut data = windows(dataset, config.max_len)?;
    let mut rng = seeded_rng(seed, 0xCF01);
    let mut adam = Adam::all(AdamConfig::with_lr(config.lr), &encoder.store);
    let mut history = Vec::with_capacity(config.epochs);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for _ in 0..config.epochs {
        data.shuffle(&mut rng);
        let (mut total, mut rows) = (0.0, 0usize);
        for batch in data.chunks(config.batch_size.max(1)) {
            let seqs: Vec<&[usize]> = batch.iter().map(|s| s.as_slice()).collect();
            let n: usize = seqs.iter().map(|s| s.len() - 1).sum();
            let mut g = Graph::new();
            let loss = encoder.loss(&mut g, &seqs);
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    stage: "collaborative encoder".into(),
                    step,
                    loss: value,
                });
            }
            encoder.store.zero_grad();
            g.backward(loss, &mut encoder.store)?;
            adam.step(&mut encoder.store)?;
            total += value * n as f64;
            rows += n;
            step += 1;
        }
        losses.push(total / rows as f64);
        history.push(encoder.store.value(encoder.items).clone());
    }
    let table = EmbeddingTable::new(
        Channel::Collaborative,
        dataset.item_ids.clone(),
        encoder.store.value(encoder.items).clone(),
    )?;
    Ok(CfTraining {
        encoder,
        table,
        history,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{leave_last_out_split, synth_longtail, Interaction, SynthConfig};

    fn small_config() -> CfConfig {
        CfConfig {
            dim: 16,
            layers: 1,
            heads: 2,
            max_len: 12,
            epochs: 3,
            lr: 5e-3,
            batch_size: 16,
        }
    }

    #[test]
    fn alternating_sequences_are_learned_exactly() {
        let mut rows = Vec::new();
        for u in 0..12 {
            let len = 6 + u % 3;
            for t in 0..len {
                let item = if (t + u) % 2 == 0 { "a" } else { "b" };
                rows.push(Interaction::new(format!("u{u}"), item, t as i64));
            }
        }
        let ds = leave_last_out_split(&SequenceDataset::from_interactions(&rows).unwrap()).dataset;
        let cfg = CfConfig {
            epochs: 40,
            ..small_config()
        };
        let trained = train_cf_encoder(&ds, &cfg, 3).unwrap();
        let mut hits = 0;
        for u in 0..ds.num_users() {
            let scores = trained.encoder.next_item_scores(ds.train_items(u).unwrap());
            let best = if scores[0] >= scores[1] { 0 } else { 1 };
            hits += (best == ds.valid_item(u).unwrap()) as usize;
        }
        assert_eq!(hits, ds.num_users());
    }

    #[test]
    fn seeded_runs_agree_and_loss_falls() {
        let cfg = SynthConfig {
            num_items: 80,
            num_users: 60,
            min_len: 6,
            max_len: 12,
            ..SynthConfig::default()
        };
        let out = synth_longtail(&cfg, 1).unwrap();
        let a = train_cf_encoder(&out.dataset, &small_config(), 9).unwrap();
        let b = train_cf_encoder(&out.dataset, &small_config(), 9).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.losses, b.losses);
        assert!(a.losses[1] < a.losses[0] && a.losses[2] < a.losses[1], "{:?}", a.losses);
        assert_eq!(a.history.len(), 3);
        for id in a.table.item_ids() {
            let v = a.table.embed_item(id).unwrap();
            assert!(v.iter().all(|x| x.is_finite()));
            assert!(v.iter().map(|x| x * x).sum::<f64>() > 0.0);
        }
    }
}
