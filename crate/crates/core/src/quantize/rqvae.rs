use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::squared_distance;
use crate::numerics::{Graph, Mlp, NodeId, ParamId, ParamStore, Tensor};
use crate::Channel;

/// Shape of the map between embedding space and code space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    /// Requires `code_dim == input_dim`.
    Identity,
    /// Two-layer ReLU perceptron with the given hidden width.
    Mlp { hidden: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RqVaeConfig {
    pub codebook_size: usize,
    pub levels: usize,
    pub code_dim: usize,
    pub transform: Transform,
    /// Commitment weight.
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Lloyd iterations run on each level after k-means++ seeding.
    pub kmeans_iters: usize,
    pub reinit_dead_codes: bool,
}

impl Default for RqVaeConfig {
    fn default() -> Self {
        RqVaeConfig {
            codebook_size: 512,
            levels: 3,
            code_dim: 64,
            transform: Transform::Mlp { hidden: 128 },
            beta: 0.25,
            epochs: 20,
            lr: 1e-3,
            batch_size: 256,
            kmeans_iters: 10,
            reinit_dead_codes: true,
        }
    }
}

impl RqVaeConfig {
    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook size must be at least 2".into()));
        }
        if self.levels == 0 || self.code_dim == 0 {
            return Err(Error::Config("levels and code dimension must be positive".into()));
        }
        if self.transform == Transform::Identity && self.code_dim != input_dim {
            return Err(Error::Config(format!(
                "identity transform needs code_dim == input dim ({} vs {input_dim})",
                self.code_dim
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config("commitment weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// One channel's quantizer. Parameters live in a shared [`ParamStore`] under
/// the channel's prefix.
#[derive(Clone, Debug)]
pub struct RqVae {
    pub channel: Channel,
    pub input_dim: usize,
    pub config: RqVaeConfig,
    pub encoder: Option<Mlp>,
    pub decoder: Option<Mlp>,
    pub codebooks: Vec<ParamId>,
}

/// Tape nodes of one quantizer forward pass.
#[derive(Clone, Debug)]
pub struct RqForward {
    /// `recon + codebook + β·commitment`.
    pub total: NodeId,
    pub recon: NodeId,
    pub codebook: NodeId,
    pub commitment: NodeId,
    /// Decoded vectors `[B, input_dim]`; gradients reach the decoder and, straight
    /// through, the encoder.
    pub reconstruction: NodeId,
    /// Per row, one index per level.
    pub codes: Vec<Vec<usize>>,
}

impl RqVae {
    pub fn new(
        store: &mut ParamStore,
        channel: Channel,
        input_dim: usize,
        config: &RqVaeConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate(input_dim)?;
        let p = channel.as_str();
        let (encoder, decoder) = match config.transform {
            Transform::Identity => (None, None),
            Transform::Mlp { hidden } => (
                Some(Mlp::new(store, &format!("{p}.enc"), input_dim, hidden, config.code_dim, rng)?),
                Some(Mlp::new(store, &format!("{p}.dec"), config.code_dim, hidden, input_dim, rng)?),
            ),
        };
        let codebooks = (0..config.levels)
            .map(|l| {
                store.add(
                    format!("{p}.codebook{l}"),
                    Tensor::randn(&[config.codebook_size, config.code_dim], 0.1, rng),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RqVae {
            channel,
            input_dim,
            config: config.clone(),
            encoder,
            decoder,
            codebooks,
        })
    }

    pub fn levels(&self) -> usize {
        self.codebooks.len()
    }

    pub fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    /// Encoder output for each row of `x` (`[rows, input_dim]`).
    pub fn latent(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        match &self.encoder {
            Some(m) => m.apply(store, x),
            None => x.to_vec(),
        }
    }

    /// Index of the nearest codeword of level `level`; ties go to the lower index.
    pub fn nearest(&self, store: &ParamStore, level: usize, r: &[f64]) -> usize {
        let cb = store.value(self.codebooks[level]);
        let mut best = (f64::INFINITY, 0);
        for k in 0..cb.rows() {
            let d = squared_distance(r, cb.row(k));
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    /// Greedy residual codes of one latent, plus the residual norm after each level.
    pub fn quantize_latent(&self, store: &ParamStore, z: &[f64]) -> (Vec<usize>, Vec<f64>) {
        let mut r = z.to_vec();
        let mut codes = Vec::with_capacity(self.levels());
        let mut norms = Vec::with_capacity(self.levels());
        for level in 0..self.levels() {
            let k = self.nearest(store, level, &r);
            let c = store.value(self.codebooks[level]).row(k);
            r.iter_mut().zip(c).for_each(|(a, b)| *a -= b);
            codes.push(k);
            norms.push(r.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        (codes, norms)
    }

    /// Codes for one embedding and the residual-norm trace.
    pub fn encode(&self, store: &ParamStore, embedding: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
        if embedding.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "embedding has {} values, quantizer expects {}",
                embedding.len(),
                self.input_dim
            )));
        }
        Ok(self.quantize_latent(store, &self.latent(store, embedding)))
    }

    /// Codes for every row of `[n, input_dim]`.
    pub fn encode_all(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<Vec<usize>>> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape(format!("inputs have {} columns, expected {}", x.cols(), self.input_dim)));
        }
        let z = self.latent(store, x.data());
        Ok(z.chunks(self.config.code_dim).map(|r| self.quantize_latent(store, r).0).collect())
    }

    /// Sum of the selected codewords (the decoder input).
    pub fn codeword_sum(&self, store: &ParamStore, codes: &[usize]) -> Result<Vec<f64>> {
        if codes.len() > self.levels() {
            return Err(Error::Shape(format!("{} codes for {} levels", codes.len(), self.levels())));
        }
        let mut s = vec![0.0; self.config.code_dim];
        for (level, &k) in codes.iter().enumerate() {
            if k >= self.codebook_size() {
                return Err(Error::Contract(format!(
                    "code {k} at level {level} is outside a codebook of {}",
                    self.codebook_size()
                )));
            }
            let c = store.value(self.codebooks[level]).row(k);
            s.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        Ok(s)
    }

    /// Decoder applied to the summed codewords.
    pub fn decode(&self, store: &ParamStore, codes: &[usize]) -> Result<Vec<f64>> {
        let s = self.codeword_sum(store, codes)?;
        Ok(match &self.decoder {
            Some(m) => m.apply(store, &s),
            None => s,
        })
    }

    /// Taped loss on a batch `x` (`[B, input_dim]` constant node).
    ///
    /// Level `j` picks `idx_j = argmin_k ‖r_{j−1} − C_{j,k}‖²` (frozen on
    /// replay), with `r_0 = z = encoder(x)` and `r_j = r_{j−1} − sg(q_j)`.
    /// The decoder sees `z + sg(Σ_j q_j − z)`: the value is the codeword sum and
    /// the reconstruction gradient passes straight through to the encoder.
    /// Codewords learn only from the codebook term.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> RqForward {
        let rows = g.value(x).rows();
        let z = match &self.encoder {
            Some(m) => m.forward(g, store, x),
            None => x,
        };
        let mut r = z;
        let mut quantized: Option<NodeId> = None;
        let mut codebook_terms = Vec::new();
        let mut commit_terms = Vec::new();
        let mut codes = vec![Vec::with_capacity(self.levels()); rows];
        for level in 0..self.levels() {
            let idx = g.freeze_indices(|g| {
                let rv = g.value(r);
                (0..rows).map(|i| self.nearest(store, level, rv.row(i))).collect()
            });
            for (c, &k) in codes.iter_mut().zip(&idx) {
                c.push(k);
            }
            let cb = g.param(store, self.codebooks[level]);
            let q = g.gather(cb, &idx);
            let r_sg = g.detach(r);
            let q_sg = g.detach(q);
            let d_cb = g.sub(r_sg, q);
            let d_cb = g.square(d_cb);
            codebook_terms.push(g.row_sum(d_cb));
            let d_cm = g.sub(r, q_sg);
            let d_cm = g.square(d_cm);
            commit_terms.push(g.row_sum(d_cm));
            quantized = Some(match quantized {
                Some(acc) => g.add(acc, q),
                None => q,
            });
            r = g.sub(r, q_sg);
        }
        let quantized = quantized.expect("at least one level");
        let gap = g.sub(quantized, z);
        let gap = g.detach(gap);
        let dec_in = g.add(z, gap);
        let reconstruction = match &self.decoder {
            Some(m) => m.forward(g, store, dec_in),
            None => dec_in,
        };
        let diff = g.sub(x, reconstruction);
        let sq = g.square(diff);
        let per_row = g.row_sum(sq);
        let recon = g.mean(per_row);
        let cb_rows = g.concat_cols(&codebook_terms);
        let cb_sum = g.row_sum(cb_rows);
        let codebook = g.mean(cb_sum);
        let cm_rows = g.concat_cols(&commit_terms);
        let cm_sum = g.row_sum(cm_rows);
        let commitment = g.mean(cm_sum);
        let weighted = g.scale(commitment, self.config.beta);
        let t = g.add(recon, codebook);
        let total = g.add(t, weighted);
        RqForward {
            total,
            recon,
            codebook,
            commitment,
            reconstruction,
            codes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_model(codewords: &[Vec<Vec<f64>>]) -> (ParamStore, RqVae) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = codewords[0][0].len();
        let cfg = RqVaeConfig {
            codebook_size: codewords[0].len(),
            levels: codewords.len(),
            code_dim: d,
            transform: Transform::Identity,
            ..RqVaeConfig::default()
        };
        let mut store = ParamStore::new();
        let m = RqVae::new(&mut store, Channel::Semantic, d, &cfg, &mut rng).unwrap();
        for (l, cw) in codewords.iter().enumerate() {
            store.set_value(m.codebooks[l], Tensor::from_rows(cw).unwrap()).unwrap();
        }
        (store, m)
    }

    #[test]
    fn nearest_codeword_by_hand() {
        let (s, m) = identity_model(&[vec![vec![0.0, 0.0], vec![1.0, 1.0]]]);
        assert_eq!(m.encode(&s, &[0.9, 0.9]).unwrap().0, vec![1]);
        let (codes, norms) = m.encode(&s, &[1.0, 1.0]).unwrap();
        assert_eq!((codes, norms), (vec![1], vec![0.0]));
        assert_eq!(m.encode(&s, &[0.5, 0.5]).unwrap().0, vec![0]);
    }

    #[test]
    fn identity_decode_returns_codewords() {
        let (s, m) = identity_model(&[vec![vec![0.0, 0.0], vec![1.0, 2.0]], vec![vec![0.5, 0.0], vec![0.0, 0.5]]]);
        assert_eq!(m.decode(&s, &[1]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(m.decode(&s, &[1, 0]).unwrap(), vec![1.5, 2.0]);
        assert!(m.decode(&s, &[2]).is_err());
    }

    #[test]
    fn equal_sums_decode_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = RqVaeConfig {
            codebook_size: 3,
            levels: 2,
            code_dim: 2,
            transform: Transform::Mlp { hidden: 4 },
            ..RqVaeConfig::default()
        };
        let mut store = ParamStore::new();
        let m = RqVae::new(&mut store, Channel::Semantic, 3, &cfg, &mut rng).unwrap();
        // level0[0] + level1[1] == level0[1] + level1[0]
        store.set_value(m.codebooks[0], Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]]).unwrap()).unwrap();
        store.set_value(m.codebooks[1], Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(m.decode(&store, &[0, 1]).unwrap(), m.decode(&store, &[1, 0]).unwrap());
    }

    #[test]
    fn loss_is_zero_on_a_codeword_and_beta_term_is_separable() {
        let (s, m) = identity_model(&[vec![vec![0.0, 0.0], vec![1.0, 1.0]]]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let f = m.forward(&mut g, &s, x);
        assert_eq!(g.value(f.total).item(), 0.0);

        let run = |beta: f64| {
            let mut m2 = m.clone();
            m2.config.beta = beta;
            let mut g = Graph::new();
            let x = g.constant(Tensor::matrix(2, 2, vec![0.8, 0.9, 0.1, -0.2]).unwrap());
            let f = m2.forward(&mut g, &s, x);
            (g.value(f.total).item(), g.value(f.commitment).item())
        };
        let (with, commit) = run(0.25);
        let (without, _) = run(0.0);
        assert!((with - without - 0.25 * commit).abs() < 1e-15);
        assert!(commit > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences_with_frozen_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = RqVaeConfig {
            codebook_size: 6,
            levels: 3,
            code_dim: 4,
            transform: Transform::Mlp { hidden: 8 },
            ..RqVaeConfig::default()
        };
        let mut store = ParamStore::new();
        let m = RqVae::new(&mut store, Channel::Collaborative, 5, &cfg, &mut rng).unwrap();
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let report = grad_check(
            |g, s| {
                let xn = g.constant(x.clone());
                Ok(m.forward(g, s, xn).total)
            },
            &mut store,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst());
    }
}
