//! Popularity-aware token allocation: how many of an item's `L` code slots
//! come from the collaborative channel and how many from the semantic one.

use std::fmt::Write as _;

use rand::Rng;

use crate::data::ItemStats;
use crate::error::{Error, Result};
use crate::numerics::tensor::{sigmoid, softmax_in_place};
use crate::numerics::{Graph, Mlp, NodeId, ParamStore, Tensor};

pub const NUM_FEATURES: usize = 4;

/// `σ(w·ln(pop) + b)`: the share of collaborative tokens under the fixed gate.
pub fn baseline_gate(pop: f64, w: f64, b: f64) -> Result<f64> {
    if !(pop > 0.0) {
        return Err(Error::Contract(format!("popularity must be positive, got {pop}")));
    }
    Ok(sigmoid(w * pop.ln() + b))
}

/// Floor split of the gate: `(⌊g·L⌋, L − ⌊g·L⌋)`.
pub fn baseline_allocate(g: f64, total: usize) -> (usize, usize) {
    let col = ((g.clamp(0.0, 1.0) * total as f64).floor() as usize).min(total);
    (col, total - col)
}

/// Round-half-up split: `L_col = ⌊α·L + ½⌋`.
pub fn hard_allocate(alpha: f64, total: usize) -> (usize, usize) {
    let col = ((alpha.clamp(0.0, 1.0) * total as f64 + 0.5).floor() as usize).min(total);
    (col, total - col)
}

/// `m_k = σ((share·L − (k − ½))/τ_m)` for `k = 1..=L`.
pub fn mask_values(share: f64, total: usize, tau_m: f64) -> Vec<f64> {
    (1..=total)
        .map(|k| sigmoid((share * total as f64 - (k as f64 - 0.5)) / tau_m))
        .collect()
}

/// Collaborative and semantic masks for a routing ratio `α`.
pub fn soft_masks(alpha: f64, total: usize, tau_m: f64) -> (Vec<f64>, Vec<f64>) {
    (mask_values(alpha, total, tau_m), mask_values(1.0 - alpha, total, tau_m))
}

/// Everything derived from one item's routing ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub alpha: f64,
    pub soft_col: f64,
    pub soft_sem: f64,
    pub mask_col: Vec<f64>,
    pub mask_sem: Vec<f64>,
    pub l_col: usize,
    pub l_sem: usize,
}

impl Allocation {
    pub fn from_alpha(alpha: f64, total: usize, tau_m: f64) -> Self {
        let (mask_col, mask_sem) = soft_masks(alpha, total, tau_m);
        let (l_col, l_sem) = hard_allocate(alpha, total);
        Allocation {
            alpha,
            soft_col: alpha * total as f64,
            soft_sem: total as f64 - alpha * total as f64,
            mask_col,
            mask_sem,
            l_col,
            l_sem,
        }
    }
}

/// `item_id<TAB>alpha<TAB>L_col<TAB>L_sem` lines.
pub fn format_allocations(item_ids: &[String], allocations: &[Allocation]) -> String {
    let mut s = String::new();
    for (id, a) in item_ids.iter().zip(allocations) {
        let _ = writeln!(s, "{id}\t{:?}\t{}\t{}", a.alpha, a.l_col, a.l_sem);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouterConfig {
    pub hidden: usize,
    /// Softmax temperature on the two logits.
    pub tau_r: f64,
    /// Mask sharpness.
    pub tau_m: f64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            hidden: 16,
            tau_r: 1.0,
            tau_m: 0.1,
        }
    }
}

/// Shallow MLP from item features to `[z_col, z_sem]`.
#[derive(Clone, Debug)]
pub struct Router {
    pub mlp: Mlp,
    pub config: RouterConfig,
}

impl Router {
    pub fn new(store: &mut ParamStore, config: RouterConfig, rng: &mut impl Rng) -> Result<Self> {
        if !(config.tau_r > 0.0 && config.tau_m > 0.0) {
            return Err(Error::Config("router temperatures must be positive".into()));
        }
        Ok(Router {
            mlp: Mlp::new(store, "router", NUM_FEATURES, config.hidden, 2, rng)?,
            config,
        })
    }

    /// `α = softmax([z_col, z_sem]/τ_r)[col]`.
    pub fn route(&self, store: &ParamStore, features: &[f64; NUM_FEATURES]) -> f64 {
        let mut z = self.mlp.apply(store, features);
        z.iter_mut().for_each(|v| *v /= self.config.tau_r);
        softmax_in_place(&mut z);
        z[0]
    }

    pub fn route_items(&self, store: &ParamStore, stats: &ItemStats) -> Vec<f64> {
        (0..stats.num_items()).map(|i| self.route(store, &stats.features(i))).collect()
    }

    /// Taped `α` for each row of `[B, 4]` features, as a `[B, 1]` column.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: NodeId) -> NodeId {
        let z = self.mlp.forward(g, store, features);
        let z = g.scale(z, 1.0 / self.config.tau_r);
        let p = g.softmax_rows(z);
        g.slice_cols(p, 0, 1)
    }
}

/// Features `[B, 4]` for a list of items.
pub fn feature_matrix(stats: &ItemStats, items: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(items.len() * NUM_FEATURES);
    for &i in items {
        data.extend_from_slice(&stats.features(i));
    }
    Tensor::matrix(items.len(), NUM_FEATURES, data).expect("non-empty item list")
}

/// Taped masks for a `[B, 1]` ratio column: `([B, L] col, [B, L] sem)`.
pub fn soft_masks_graph(g: &mut Graph, alpha: NodeId, total: usize, tau_m: f64) -> (NodeId, NodeId) {
    let ones = g.constant(Tensor::filled(&[1, total], total as f64 / tau_m));
    let offsets = g.constant(Tensor::row_vector(
        (1..=total).map(|k| -(k as f64 - 0.5) / tau_m).collect(),
    ));
    let mut out = [alpha, alpha];
    out[1] = g.affine(alpha, -1.0, 1.0);
    let [col, sem] = out.map(|share| {
        let spread = g.matmul(share, ones);
        let shifted = g.add_row(spread, offsets);
        g.sigmoid(shifted)
    });
    (col, sem)
}

/// Mean over non-empty bands of `2(ᾱ_b² + (1 − ᾱ_b)²)`; `bands[i]` is row `i`'s band.
pub fn load_balance_loss(g: &mut Graph, alpha: NodeId, bands: &[usize]) -> Result<NodeId> {
    let n = g.value(alpha).rows();
    if n == 0 || bands.len() != n {
        return Err(Error::Contract(format!("load balance needs one band per row ({n} rows, {} bands)", bands.len())));
    }
    let mut present: Vec<usize> = bands.to_vec();
    present.sort_unstable();
    present.dedup();
    let mut avg = vec![0.0; present.len() * n];
    for (r, &b) in present.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| bands[i] == b).collect();
        for &i in &members {
            avg[r * n + i] = 1.0 / members.len() as f64;
        }
    }
    let avg = g.constant(Tensor::matrix(present.len(), n, avg)?);
    let means = g.matmul(avg, alpha);
    let other = g.affine(means, -1.0, 1.0);
    let a2 = g.square(means);
    let b2 = g.square(other);
    let s = g.add(a2, b2);
    let m = g.mean(s);
    Ok(g.scale(m, 2.0))
}

/// Mean squared difference of `α` between neighbours in popularity order
/// (`ln(1 + count)` ascending, ties by position). Zero below two rows.
pub fn smoothness_loss(g: &mut Graph, alpha: NodeId, counts: &[usize]) -> Result<NodeId> {
    let n = g.value(alpha).rows();
    if counts.len() != n {
        return Err(Error::Contract("smoothness needs one count per row".into()));
    }
    if n < 2 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (counts[a] as f64).ln_1p().total_cmp(&(counts[b] as f64).ln_1p()).then(a.cmp(&b))
    });
    let mut diff = vec![0.0; (n - 1) * n];
    for (r, w) in order.windows(2).enumerate() {
        diff[r * n + w[1]] += 1.0;
        diff[r * n + w[0]] -= 1.0;
    }
    let d = g.constant(Tensor::matrix(n - 1, n, diff)?);
    let gaps = g.matmul(d, alpha);
    let sq = g.square(gaps);
    Ok(g.mean(sq))
}

fn eval_scalar(alpha: &[f64], f: impl FnOnce(&mut Graph, NodeId) -> Result<NodeId>) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(Tensor::column(alpha.to_vec()));
    let l = f(&mut g, a)?;
    Ok(g.value(l).item())
}

/// Value of [`load_balance_loss`] for plain ratios.
pub fn load_balance_value(alpha: &[f64], bands: &[usize]) -> Result<f64> {
    if alpha.is_empty() {
        return Err(Error::Empty("load balance over an empty batch".into()));
    }
    eval_scalar(alpha, |g, a| load_balance_loss(g, a, bands))
}

/// Value of [`smoothness_loss`] for plain ratios.
pub fn smoothness_value(alpha: &[f64], counts: &[usize]) -> Result<f64> {
    if alpha.len() < 2 {
        return Ok(0.0);
    }
    eval_scalar(alpha, |g, a| smoothness_loss(g, a, counts))
}
