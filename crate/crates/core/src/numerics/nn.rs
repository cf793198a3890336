//! Small layers shared by the trainable modules. Each layer owns parameter
//! ids in a [`ParamStore`] and has a tape forward plus a plain forward used at
//! inference time.

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weight = store.add(format!("{name}.w"), Tensor::uniform(&[input, output], limit, rng))?;
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[1, output]))?;
        Ok(Linear {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }

    /// Row-major `[rows, input]` → `[rows, output]`.
    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let rows = x.len() / self.input;
        let mut out = Vec::with_capacity(rows * self.output);
        let bias = store.value(self.bias).data();
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm(
            x,
            false,
            store.value(self.weight).data(),
            false,
            &mut out,
            rows,
            self.input,
            self.output,
            1.0,
        );
        out
    }
}

/// Two affine maps with a ReLU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            first: Linear::new(store, &format!("{name}.0"), input, hidden, rng)?,
            second: Linear::new(store, &format!("{name}.1"), hidden, output, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let h = self.first.forward(g, store, x);
        let h = g.relu(h);
        self.second.forward(g, store, h)
    }

    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut h = self.first.apply(store, x);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        self.second.apply(store, &h)
    }

    pub fn input(&self) -> usize {
        self.first.input
    }

    pub fn output(&self) -> usize {
        self.second.output
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(&[1, dim], 1.0))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[1, dim]))?,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }

    pub fn apply_row(&self, store: &ParamStore, row: &[f64]) -> Vec<f64> {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let (g, b) = (store.value(self.gamma).data(), store.value(self.beta).data());
        row.iter()
            .enumerate()
            .map(|(i, v)| (v - mean) * inv * g[i] + b[i])
            .collect()
    }
}

/// Pre-norm causal self-attention block with a GELU feed-forward.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Keys and values of the rows processed so far, for incremental decoding.
#[derive(Clone, Debug, Default)]
pub struct KvCache {
    keys: Vec<f64>,
    values: Vec<f64>,
}

impl KvCache {
    pub fn len(&self, dim: usize) -> usize {
        self.keys.len() / dim
    }
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(crate::Error::Config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim)?,
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), dim, dim, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), dim, 2 * dim, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), 2 * dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// `x` is `[N, dim]` holding the packed `segments`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        segments: &[(usize, usize)],
    ) -> NodeId {
        let d = self.dim;
        let h = self.ln1.forward(g, store, x);
        let qkv = self.qkv.forward(g, store, h);
        let q = g.slice_cols(qkv, 0, d);
        let k = g.slice_cols(qkv, d, d);
        let v = g.slice_cols(qkv, 2 * d, d);
        let att = g.causal_attention(q, k, v, segments, self.heads);
        let att = self.proj.forward(g, store, att);
        let x = g.add(x, att);
        let h = self.ln2.forward(g, store, x);
        let h = self.ff1.forward(g, store, h);
        let h = g.gelu(h);
        let h = self.ff2.forward(g, store, h);
        g.add(x, h)
    }

    /// Processes one new row given the cache of earlier rows, appending to it.
    pub fn step(&self, store: &ParamStore, x: &[f64], cache: &mut KvCache) -> Vec<f64> {
        let d = self.dim;
        let dh = d / self.heads;
        let h = self.ln1.apply_row(store, x);
        let qkv = self.qkv.apply(store, &h);
        cache.keys.extend_from_slice(&qkv[d..2 * d]);
        cache.values.extend_from_slice(&qkv[2 * d..]);
        let n = cache.len(d);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut att = vec![0.0; d];
        let mut scores = vec![0.0; n];
        for hd in 0..self.heads {
            let c = hd * dh..(hd + 1) * dh;
            let q = &qkv[c.clone()];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = super::tensor::dot(q, &cache.keys[j * d + c.start..j * d + c.end]) * scale;
            }
            super::tensor::softmax_in_place(&mut scores);
            for (j, &p) in scores.iter().enumerate() {
                let vr = &cache.values[j * d + c.start..j * d + c.end];
                for (o, v) in att[c.clone()].iter_mut().zip(vr) {
                    *o += p * v;
                }
            }
        }
        let att = self.proj.apply(store, &att);
        let x: Vec<f64> = x.iter().zip(&att).map(|(a, b)| a + b).collect();
        let h = self.ln2.apply_row(store, &x);
        let mut h = self.ff1.apply(store, &h);
        h.iter_mut().for_each(|v| *v = super::graph::gelu(*v));
        let h = self.ff2.apply(store, &h);
        x.iter().zip(&h).map(|(a, b)| a + b).collect()
    }
}
