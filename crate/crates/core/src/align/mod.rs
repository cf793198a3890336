//! Contrastive alignment between the two channels' reconstructed embeddings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::log_softmax_in_place;
use crate::numerics::{Graph, Mlp, NodeId, ParamStore, Tensor};

/// Affine, ReLU, affine into the shared space.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub mlp: Mlp,
}

impl ProjectionHead {
    /// The output bias starts small but non-zero so that a row whose hidden
    /// units are all inactive still projects to a usable direction.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, shared: usize, rng: &mut impl Rng) -> Result<Self> {
        let mlp = Mlp::new(store, name, input, shared, shared, rng)?;
        *store.value_mut(mlp.second.bias) = Tensor::randn(&[1, shared], 0.01, rng);
        Ok(ProjectionHead { mlp })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        self.mlp.forward(g, store, x)
    }

    pub fn output(&self) -> usize {
        self.mlp.output()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcaConfig {
    pub temperature: f64,
    /// Average the semantic→collaborative and collaborative→semantic directions.
    pub symmetric: bool,
}

impl Default for CcaConfig {
    fn default() -> Self {
        CcaConfig {
            temperature: 0.1,
            symmetric: false,
        }
    }
}

/// In-batch InfoNCE with cosine similarity: row `i` of `sem` is the anchor,
/// row `i` of `col` its positive and the other rows of `col` its negatives.
/// Both inputs are projected first.
pub fn cca_loss(
    g: &mut Graph,
    store: &ParamStore,
    sem: NodeId,
    col: NodeId,
    sem_head: &ProjectionHead,
    col_head: &ProjectionHead,
    config: &CcaConfig,
) -> Result<NodeId> {
    let a = sem_head.forward(g, store, sem);
    let b = col_head.forward(g, store, col);
    info_nce(g, a, b, config)
}

/// InfoNCE over already-projected rows.
pub fn info_nce(g: &mut Graph, anchors: NodeId, positives: NodeId, config: &CcaConfig) -> Result<NodeId> {
    let n = g.value(anchors).rows();
    if n < 2 || g.value(positives).rows() != n {
        return Err(Error::Contract(format!(
            "contrastive loss needs two equal batches of at least 2 rows, got {n} and {}",
            g.value(positives).rows()
        )));
    }
    if !(config.temperature > 0.0) {
        return Err(Error::Config("contrastive temperature must be positive".into()));
    }
    for node in [anchors, positives] {
        let v = g.value(node);
        if (0..n).any(|r| v.row(r).iter().all(|x| *x == 0.0)) {
            return Err(Error::Contract("zero-norm projection; cosine similarity undefined".into()));
        }
    }
    let a = g.l2_normalize_rows(anchors);
    let b = g.l2_normalize_rows(positives);
    let diag: Vec<usize> = (0..n).collect();
    let sim = g.matmul_t(a, b);
    let logits = g.scale(sim, 1.0 / config.temperature);
    let forward = {
        let lp = g.log_softmax_rows(logits);
        let p = g.pick_per_row(lp, &diag);
        g.mean(p)
    };
    let total = if config.symmetric {
        let sim_t = g.matmul_t(b, a);
        let logits_t = g.scale(sim_t, 1.0 / config.temperature);
        let lp = g.log_softmax_rows(logits_t);
        let p = g.pick_per_row(lp, &diag);
        let back = g.mean(p);
        let s = g.add(forward, back);
        g.scale(s, 0.5)
    } else {
        forward
    };
    Ok(g.scale(total, -1.0))
}

/// The same objective evaluated on a given cosine-similarity matrix.
pub fn info_nce_from_similarities(sim: &[Vec<f64>], temperature: f64) -> Result<f64> {
    let n = sim.len();
    if n < 2 || sim.iter().any(|r| r.len() != n) {
        return Err(Error::Contract("similarity matrix must be square with at least 2 rows".into()));
    }
    let mut total = 0.0;
    for (i, row) in sim.iter().enumerate() {
        let mut l: Vec<f64> = row.iter().map(|s| s / temperature).collect();
        log_softmax_in_place(&mut l);
        total -= l[i];
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, seeded_rng, Tensor};

    #[test]
    fn equal_similarities_give_log_n() {
        for n in [2usize, 5, 8] {
            let sim = vec![vec![0.3; n]; n];
            let l = info_nce_from_similarities(&sim, 0.1).unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-12);
        }
        // identical projected rows: every cosine is 1
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(&[4, 3], 0.5));
        let l = info_nce(&mut g, x, x, &CcaConfig::default()).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn two_item_closed_form() {
        let sim = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let l = info_nce_from_similarities(&sim, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((l - (-(e / (e + 1.0 / e)).ln())).abs() < 1e-12);
        assert!((l - 0.126_928).abs() < 1e-6);
    }

    #[test]
    fn raising_the_positive_lowers_the_loss() {
        let mut prev = f64::INFINITY;
        for p in [0.0, 0.2, 0.5, 0.9] {
            let sim = vec![vec![p, 0.1, -0.3], vec![0.1, 0.4, 0.0], vec![0.2, 0.2, 0.2]];
            let l = info_nce_from_similarities(&sim, 0.1).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn rejects_degenerate_batches() {
        let mut g = Graph::new();
        let one = g.constant(Tensor::filled(&[1, 3], 1.0));
        assert!(info_nce(&mut g, one, one, &CcaConfig::default()).is_err());
        let z = g.constant(Tensor::zeros(&[2, 3]));
        let x = g.constant(Tensor::filled(&[2, 3], 1.0));
        assert!(info_nce(&mut g, x, z, &CcaConfig::default()).is_err());
    }

    #[test]
    fn scale_invariant_and_non_negative() {
        let mut rng = seeded_rng(1, 2);
        let a = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let eval = |s: f64| {
            let mut g = Graph::new();
            let mut a2 = a.clone();
            let mut b2 = b.clone();
            a2.data_mut().iter_mut().for_each(|v| *v *= s);
            b2.data_mut().iter_mut().for_each(|v| *v *= s);
            let (an, bn) = (g.constant(a2), g.constant(b2));
            let l = info_nce(&mut g, an, bn, &CcaConfig { temperature: 0.1, symmetric: true }).unwrap();
            g.value(l).item()
        };
        let base = eval(1.0);
        assert!(base >= 0.0);
        assert!((eval(7.5) - base).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(3, 4);
        let mut store = ParamStore::new();
        let hs = ProjectionHead::new(&mut store, "ps", 5, 4, &mut rng).unwrap();
        let hc = ProjectionHead::new(&mut store, "pc", 3, 4, &mut rng).unwrap();
        let xs = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let xc = Tensor::randn(&[4, 3], 1.0, &mut rng);
        for symmetric in [false, true] {
            let cfg = CcaConfig { temperature: 0.1, symmetric };
            let report = grad_check(
                |g, s| {
                    let (a, b) = (g.constant(xs.clone()), g.constant(xc.clone()));
                    cca_loss(g, s, a, b, &hs, &hc, &cfg)
                },
                &mut store,
                1e-6,
                1e-5,
            )
            .unwrap();
            assert!(report.passed(), "{:?}", report.worst());
        }
    }
}
