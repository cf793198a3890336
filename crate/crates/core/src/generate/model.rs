use rand::Rng;

use super::vocab::{mask_columns, ItemTokenLayout, TokenVocab, BOS, NULL};
use crate::error::{Error, Result};
use crate::numerics::tensor::log_softmax_in_place;
use crate::numerics::{Graph, KvCache, LayerNorm, Linear, NodeId, ParamId, ParamStore, Tensor, TransformerBlock};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    /// Longest history fed to the model, in items (including the target).
    pub context_items: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            layers: 2,
            heads: 4,
            dim: 128,
            context_items: 20,
        }
    }
}

/// Causal transformer over item slot tokens. Parameters live under `gen.` in
/// a shared store.
#[derive(Clone, Debug)]
pub struct Generator {
    pub vocab: TokenVocab,
    pub config: GeneratorConfig,
    pub tokens: ParamId,
    pub positions: ParamId,
    pub segments: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
    pub output: Linear,
}

/// Packed teacher-forcing input for one batch.
struct Packed {
    tokens: Vec<usize>,
    positions: Vec<usize>,
    segments: Vec<usize>,
    mask_rows: Vec<usize>,
    mask_cols: Vec<usize>,
    spans: Vec<(usize, usize)>,
    /// Rows whose output is scored, with the token they should predict.
    target_rows: Vec<usize>,
    targets: Vec<usize>,
}

/// Incremental decoding state after some prefix.
#[derive(Clone, Debug)]
pub struct DecodeState {
    caches: Vec<KvCache>,
    next_position: usize,
    /// Log-probabilities of the next token.
    pub log_probs: Vec<f64>,
}

impl Generator {
    pub fn new(store: &mut ParamStore, vocab: TokenVocab, config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.layers == 0 || config.dim == 0 || config.context_items < 2 {
            return Err(Error::Config("generator needs ≥1 layer, positive width and a context of ≥2 items".into()));
        }
        let d = config.dim;
        let slots = config.context_items * vocab.levels;
        Ok(Generator {
            tokens: store.add("gen.tokens", Tensor::randn(&[vocab.size(), d], 0.1, rng))?,
            positions: store.add("gen.pos", Tensor::randn(&[slots, d], 0.02, rng))?,
            segments: store.add("gen.seg", Tensor::randn(&[super::vocab::NUM_SEGMENTS, d], 0.02, rng))?,
            blocks: (0..config.layers)
                .map(|l| TransformerBlock::new(store, &format!("gen.block{l}"), d, config.heads, rng))
                .collect::<Result<_>>()?,
            final_norm: LayerNorm::new(store, "gen.ln", d)?,
            output: Linear::new(store, "gen.out", d, vocab.size(), rng)?,
            vocab,
            config,
        })
    }

    fn levels(&self) -> usize {
        self.vocab.levels
    }

    /// BOS followed by every slot of `items`, truncated to the context.
    fn item_tokens(&self, items: &[usize], layouts: &[ItemTokenLayout]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut tokens = vec![BOS];
        let mut rows = vec![0];
        let mut cols = vec![2 * self.levels()];
        for &i in items {
            tokens.extend_from_slice(&layouts[i].tokens);
            rows.extend(std::iter::repeat_n(i, self.levels()));
            cols.extend(mask_columns(&layouts[i], &self.vocab));
        }
        (tokens, rows, cols)
    }

    fn pack(&self, windows: &[&[usize]], layouts: &[ItemTokenLayout]) -> Packed {
        let l = self.levels();
        let mut p = Packed {
            tokens: Vec::new(),
            positions: Vec::new(),
            segments: Vec::new(),
            mask_rows: Vec::new(),
            mask_cols: Vec::new(),
            spans: Vec::new(),
            target_rows: Vec::new(),
            targets: Vec::new(),
        };
        for w in windows.iter().filter(|w| w.len() >= 2) {
            let w = &w[w.len().saturating_sub(self.config.context_items)..];
            let (tokens, rows, cols) = self.item_tokens(w, layouts);
            let n = tokens.len() - 1;
            let start = p.tokens.len();
            p.spans.push((start, n));
            for pos in 0..n {
                p.tokens.push(tokens[pos]);
                p.positions.push(pos);
                p.segments.push(self.vocab.segment(tokens[pos]));
                p.mask_rows.push(rows[pos]);
                p.mask_cols.push(cols[pos]);
                if pos >= l {
                    p.target_rows.push(start + pos);
                    p.targets.push(tokens[pos + 1]);
                }
            }
        }
        p
    }

    /// Input embeddings: `m·E[tok] + (1 − m)·E[NULL]` with `m` read from the
    /// `[rows, 2L + 1]` mask table, or plain `E[tok]` without one.
    fn embed(&self, g: &mut Graph, store: &ParamStore, p: &Packed, masks: Option<NodeId>) -> NodeId {
        let table = g.param(store, self.tokens);
        let tok = g.gather(table, &p.tokens);
        let x = match masks {
            Some(m) => {
                let null = g.gather(table, &vec![NULL; p.tokens.len()]);
                let diff = g.sub(tok, null);
                let rows = g.gather(m, &p.mask_rows);
                let m = g.pick_per_row(rows, &p.mask_cols);
                let scaled = g.mul_col(diff, m);
                g.add(null, scaled)
            }
            None => tok,
        };
        let pt = g.param(store, self.positions);
        let pos = g.gather(pt, &p.positions);
        let st = g.param(store, self.segments);
        let seg = g.gather(st, &p.segments);
        let x = g.add(x, pos);
        g.add(x, seg)
    }

    fn hidden(&self, g: &mut Graph, store: &ParamStore, p: &Packed, masks: Option<NodeId>) -> NodeId {
        let mut x = self.embed(g, store, p, masks);
        for b in &self.blocks {
            x = b.forward(g, store, x, &p.spans);
        }
        self.final_norm.forward(g, store, x)
    }

    /// Teacher-forced next-slot cross-entropy, averaged over every slot of every
    /// item after the first. Windows with fewer than two items are skipped;
    /// `None` when nothing is left.
    ///
    /// `masks`, when given, is the `[num_items, 2L + 1]` table built by
    /// [`mask_table`] and scales each input slot.
    pub fn arg_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        windows: &[&[usize]],
        layouts: &[ItemTokenLayout],
        masks: Option<NodeId>,
    ) -> Option<NodeId> {
        let p = self.pack(windows, layouts);
        if p.targets.is_empty() {
            return None;
        }
        let h = self.hidden(g, store, &p, masks);
        let h = g.gather(h, &p.target_rows);
        let logits = self.output.forward(g, store, h);
        let logp = g.log_softmax_rows(logits);
        let picked = g.pick_per_row(logp, &p.targets);
        let m = g.mean(picked);
        Some(g.scale(m, -1.0))
    }

    /// Next-token distributions at every position of `BOS + tokens`, by the
    /// taped forward; row `t` conditions on `BOS` and `tokens[..t]`.
    pub fn teacher_forced_probs(&self, store: &ParamStore, tokens: &[usize]) -> Tensor {
        let mut all = vec![BOS];
        all.extend_from_slice(tokens);
        let n = all.len();
        let p = Packed {
            positions: (0..n).collect(),
            segments: all.iter().map(|&t| self.vocab.segment(t)).collect(),
            mask_rows: vec![0; n],
            mask_cols: vec![0; n],
            spans: vec![(0, n)],
            target_rows: Vec::new(),
            targets: Vec::new(),
            tokens: all,
        };
        let mut g = Graph::new();
        let h = self.hidden(&mut g, store, &p, None);
        let logits = self.output.forward(&mut g, store, h);
        let probs = g.softmax_rows(logits);
        g.value(probs).clone()
    }

    fn next_log_probs(&self, store: &ParamStore, hidden: &[f64]) -> Vec<f64> {
        let h = self.final_norm.apply_row(store, hidden);
        let mut z = self.output.apply(store, &h);
        log_softmax_in_place(&mut z);
        z
    }

    fn embed_one(&self, store: &ParamStore, token: usize, position: usize) -> Vec<f64> {
        let e = store.value(self.tokens).row(token);
        let p = store.value(self.positions).row(position);
        let s = store.value(self.segments).row(self.vocab.segment(token));
        e.iter().zip(p).zip(s).map(|((a, b), c)| a + b + c).collect()
    }

    /// Runs `BOS` and the slots of the last `context_items − 1` history items.
    pub fn start(&self, store: &ParamStore, history: &[&ItemTokenLayout]) -> DecodeState {
        let keep = history.len().min(self.config.context_items - 1);
        let mut state = DecodeState {
            caches: vec![KvCache::default(); self.blocks.len()],
            next_position: 0,
            log_probs: Vec::new(),
        };
        self.advance(store, &mut state, BOS);
        for lay in &history[history.len() - keep..] {
            for &t in &lay.tokens {
                self.advance(store, &mut state, t);
            }
        }
        state
    }

    /// Feeds one token and refreshes `state.log_probs`.
    pub fn advance(&self, store: &ParamStore, state: &mut DecodeState, token: usize) {
        let mut x = self.embed_one(store, token, state.next_position);
        for (b, cache) in self.blocks.iter().zip(state.caches.iter_mut()) {
            x = b.step(store, &x, cache);
        }
        state.next_position += 1;
        state.log_probs = self.next_log_probs(store, &x);
    }
}

/// `[num_items, 2L + 1]` mask table: collaborative masks, semantic masks and a
/// constant-one column, from a `[num_items, 1]` routing ratio node.
pub fn mask_table(g: &mut Graph, alpha: NodeId, levels: usize, tau_m: f64) -> NodeId {
    let (col, sem) = crate::route::soft_masks_graph(g, alpha, levels, tau_m);
    let n = g.value(alpha).rows();
    let ones = g.constant(Tensor::filled(&[n, 1], 1.0));
    g.concat_cols(&[col, sem, ones])
}
