use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{Bundle, Prepared, Variant};
use crate::align::{cca_loss, CcaConfig, ProjectionHead};
use crate::config::Config;
use crate::data::{compute_item_stats, ItemStats};
use crate::embed::{train_cf_encoder, CfConfig, EmbeddingTable};
use crate::error::{Error, Result};
use crate::generate::{mask_table, Generator, GeneratorConfig, TokenVocab};
use crate::numerics::{seeded_rng, Adam, AdamConfig, Graph, NodeId, ParamStore, Tensor};
use crate::quantize::{init_codebooks, reinit_dead_codes, RqVae, RqVaeConfig, Transform};
use crate::route::{feature_matrix, load_balance_loss, smoothness_loss, Router, RouterConfig};
use crate::Channel;

/// Stage one output: collaborative item vectors and statistics that include
/// their training-time variance.
#[derive(Clone, Debug)]
pub struct CfStage {
    pub table: EmbeddingTable,
    pub losses: Vec<f64>,
    pub stats: ItemStats,
}

/// Epoch means of the stage two terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuantLosses {
    pub scl: f64,
    pub ccl: f64,
    pub cca: f64,
    pub total: f64,
}

/// Epoch means of every joint-stage term; `total` is their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JointLosses {
    pub scl: f64,
    pub ccl: f64,
    pub cca: f64,
    pub arg: f64,
    pub lb: f64,
    pub smooth: f64,
    pub total: f64,
}

impl JointLosses {
    fn accumulate(&mut self, other: &JointLosses, w: f64) {
        self.scl += w * other.scl;
        self.ccl += w * other.ccl;
        self.cca += w * other.cca;
        self.arg += w * other.arg;
        self.lb += w * other.lb;
        self.smooth += w * other.smooth;
        self.total += w * other.total;
    }

    /// `SCL + CCL + λ_CCA·CCA + λ_ARG·ARG + λ_lb·lb + λ_smooth·smooth`.
    pub fn weighted_sum(&self, config: &Config, lambda_cca: f64) -> f64 {
        self.scl
            + self.ccl
            + lambda_cca * self.cca
            + config.lambda_arg * self.arg
            + config.lambda_lb * self.lb
            + config.lambda_smooth * self.smooth
    }
}

/// Stage two output: both quantizers and projection heads in one store.
#[derive(Clone, Debug)]
pub struct QuantStage {
    pub store: ParamStore,
    pub col_rq: RqVae,
    pub sem_rq: RqVae,
    pub col_head: ProjectionHead,
    pub sem_head: ProjectionHead,
    /// Centered, unit-mean-norm quantizer inputs in dataset item order.
    pub col_input: Tensor,
    pub sem_input: Tensor,
    pub cf: CfStage,
    pub lambda_cca: f64,
    pub losses: Vec<QuantLosses>,
}

pub(super) fn cf_config(config: &Config) -> CfConfig {
    CfConfig {
        dim: config.cf_dim,
        layers: config.cf_layers,
        heads: config.cf_heads,
        max_len: config.cf_max_len,
        epochs: config.cf_epochs,
        lr: config.cf_lr,
        batch_size: config.cf_batch_size,
    }
}

pub(super) fn rq_config(config: &Config) -> RqVaeConfig {
    RqVaeConfig {
        codebook_size: config.codebook_size,
        levels: config.levels,
        code_dim: config.code_dim,
        transform: if config.rq_hidden == 0 {
            Transform::Identity
        } else {
            Transform::Mlp {
                hidden: config.rq_hidden,
            }
        },
        beta: config.beta,
        epochs: config.rq_epochs,
        lr: config.rq_lr,
        batch_size: config.rq_batch_size,
        kmeans_iters: config.rq_kmeans_iters,
        reinit_dead_codes: true,
    }
}

pub(super) fn generator_config(config: &Config) -> GeneratorConfig {
    GeneratorConfig {
        layers: config.gen_layers,
        heads: config.gen_heads,
        dim: config.gen_dim,
        context_items: config.gen_context_items,
    }
}

pub(super) fn router_config(config: &Config) -> RouterConfig {
    RouterConfig {
        hidden: config.router_hidden,
        tau_r: config.tau_r,
        tau_m: config.tau_m,
    }
}

/// Centers columns and scales so the mean row norm is one.
pub fn normalize_rows(t: &Tensor) -> Tensor {
    let (n, d) = (t.rows(), t.cols());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        mean.iter_mut().zip(t.row(r)).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut out = t.clone();
    for r in 0..n {
        out.row_mut(r).iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let norm = (0..n)
        .map(|r| out.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / n as f64;
    if norm > 1e-12 {
        out.data_mut().iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Stage one: next-item pre-training of the collaborative encoder.
pub fn stage_cf(prepared: &Prepared, config: &Config, seed: u64) -> Result<CfStage> {
    let trained = train_cf_encoder(&prepared.dataset, &cf_config(config), seed)?;
    let stats = compute_item_stats(&prepared.dataset, Some(&trained.history), config.num_bands)?;
    Ok(CfStage {
        table: trained.table,
        losses: trained.losses,
        stats,
    })
}

fn rows_of(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(idx.len() * t.cols());
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::matrix(idx.len(), t.cols(), data)
}

/// Quantizer and alignment terms for the items `idx`.
struct QuantTerms {
    scl: NodeId,
    ccl: NodeId,
    cca: Option<NodeId>,
    codes_col: Vec<Vec<usize>>,
    codes_sem: Vec<Vec<usize>>,
}

fn quant_terms(g: &mut Graph, q: &QuantStage, idx: &[usize], cca: &CcaConfig) -> Result<QuantTerms> {
    let xc = g.constant(rows_of(&q.col_input, idx)?);
    let xs = g.constant(rows_of(&q.sem_input, idx)?);
    let fc = q.col_rq.forward(g, &q.store, xc);
    let fs = q.sem_rq.forward(g, &q.store, xs);
    let align = if q.lambda_cca > 0.0 && idx.len() >= 2 {
        Some(cca_loss(g, &q.store, fs.reconstruction, fc.reconstruction, &q.sem_head, &q.col_head, cca)?)
    } else {
        None
    };
    Ok(QuantTerms {
        scl: fs.total,
        ccl: fc.total,
        cca: align,
        codes_col: fc.codes,
        codes_sem: fs.codes,
    })
}

fn check_finite(stage: &str, step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            stage: stage.to_string(),
            step,
            loss,
        })
    }
}

fn dead_code_reset(q: &mut QuantStage, counts: &[Vec<Vec<usize>>; 2], rng: &mut impl rand::Rng) -> Result<()> {
    reinit_dead_codes(&q.col_rq, &mut q.store, &counts[0], &q.col_input, rng)?;
    reinit_dead_codes(&q.sem_rq, &mut q.store, &counts[1], &q.sem_input, rng)?;
    Ok(())
}

fn count_codes(counts: &mut [Vec<usize>], codes: &[Vec<usize>]) {
    for c in codes {
        for (level, &k) in c.iter().enumerate() {
            counts[level][k] += 1;
        }
    }
}

/// Builds both quantizers and heads in a fresh store, in a fixed order.
pub(super) fn build_quant_modules(
    config: &Config,
    col_dim: usize,
    sem_dim: usize,
    rng: &mut impl rand::Rng,
) -> Result<(ParamStore, RqVae, RqVae, ProjectionHead, ProjectionHead)> {
    let rq = rq_config(config);
    let mut store = ParamStore::new();
    let col_rq = RqVae::new(&mut store, Channel::Collaborative, col_dim, &rq, rng)?;
    let sem_rq = RqVae::new(&mut store, Channel::Semantic, sem_dim, &rq, rng)?;
    let col_head = ProjectionHead::new(&mut store, "align.col", col_dim, config.cca_dim, rng)?;
    let sem_head = ProjectionHead::new(&mut store, "align.sem", sem_dim, config.cca_dim, rng)?;
    Ok((store, col_rq, sem_rq, col_head, sem_head))
}

pub(super) fn cca_config(config: &Config) -> CcaConfig {
    CcaConfig {
        temperature: config.tau_cca,
        symmetric: config.cca_symmetric,
    }
}

/// Stage two: both quantizers trained together with `λ_CCA·CCA`.
pub fn stage_quantize(prepared: &Prepared, cf: &CfStage, config: &Config, seed: u64, lambda_cca: f64) -> Result<QuantStage> {
    let col_input = normalize_rows(cf.table.vectors());
    let sem_input = normalize_rows(prepared.semantic.vectors());
    let mut rng = seeded_rng(seed, 0x51);
    let (mut store, col_rq, sem_rq, col_head, sem_head) =
        build_quant_modules(config, col_input.cols(), sem_input.cols(), &mut rng)?;
    init_codebooks(&col_rq, &mut store, &col_input, &mut rng)?;
    init_codebooks(&sem_rq, &mut store, &sem_input, &mut rng)?;
    let mut q = QuantStage {
        store,
        col_rq,
        sem_rq,
        col_head,
        sem_head,
        col_input,
        sem_input,
        cf: cf.clone(),
        lambda_cca,
        losses: Vec::new(),
    };
    let cca = cca_config(config);
    let n = q.col_input.rows();
    let mut adam = Adam::all(AdamConfig::with_lr(config.rq_lr), &q.store);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for _ in 0..config.rq_epochs {
        order.shuffle(&mut rng);
        let mut counts = [vec![vec![0; config.codebook_size]; config.levels], vec![vec![0; config.codebook_size]; config.levels]];
        let mut epoch = QuantLosses::default();
        for batch in order.chunks(config.rq_batch_size.max(2)) {
            let mut g = Graph::new();
            let t = quant_terms(&mut g, &q, batch, &cca)?;
            let mut total = g.add(t.scl, t.ccl);
            if let Some(a) = t.cca {
                let w = g.scale(a, lambda_cca);
                total = g.add(total, w);
            }
            let value = g.value(total).item();
            check_finite("quantizer pre-training", step, value)?;
            count_codes(&mut counts[0], &t.codes_col);
            count_codes(&mut counts[1], &t.codes_sem);
            let w = batch.len() as f64 / n as f64;
            epoch.scl += w * g.value(t.scl).item();
            epoch.ccl += w * g.value(t.ccl).item();
            epoch.cca += w * t.cca.map_or(0.0, |a| g.value(a).item());
            epoch.total += w * value;
            q.store.zero_grad();
            g.backward(total, &mut q.store)?;
            adam.step(&mut q.store)?;
            step += 1;
        }
        dead_code_reset(&mut q, &counts, &mut rng)?;
        q.losses.push(epoch);
    }
    Ok(q)
}

/// Training windows: the last `context_items` items of every training prefix
/// with at least two items.
fn joint_windows(prepared: &Prepared, context: usize) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    for u in 0..prepared.dataset.num_users() {
        let s = prepared.dataset.train_items(u)?;
        if s.len() >= 2 {
            out.push(s[s.len().saturating_sub(context)..].to_vec());
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("no training prefix has two or more items".into()));
    }
    Ok(out)
}

/// Routing ratios of all items as a `[n, 1]` node.
fn alpha_node(g: &mut Graph, bundle: &Bundle, features: &Tensor) -> NodeId {
    match bundle.variant.forced_alpha() {
        Some(a) => g.constant(Tensor::filled(&[features.rows(), 1], a)),
        None => {
            let x = g.constant(features.clone());
            bundle.router.forward(g, &bundle.quant.store, x)
        }
    }
}

/// Stage three: joint optimization of the weighted objective over router,
/// generator, quantizers and heads. Codes and layouts are refreshed each epoch.
pub fn stage_joint(quant: QuantStage, prepared: &Prepared, config: &Config, variant: Variant, seed: u64) -> Result<Bundle> {
    let mut rng = seeded_rng(seed, 0x53);
    let mut bundle = Bundle::assemble(quant, prepared, config, variant, &mut rng)?;
    let features = feature_matrix(&bundle.stats, &(0..bundle.num_items()).collect::<Vec<_>>());
    let mut windows = joint_windows(prepared, config.gen_context_items)?;
    let router_ids = bundle.quant.store.ids_with_prefix("router.");
    let other_ids: Vec<_> = bundle.quant.store.ids().filter(|id| !router_ids.contains(id)).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(config.joint_lr), &bundle.quant.store, other_ids);
    let mut router_adam = Adam::new(AdamConfig::with_lr(config.router_lr), &bundle.quant.store, router_ids);
    let cca = cca_config(config);
    let lambda_cca = bundle.quant.lambda_cca;
    let total_rows: usize = windows.len();
    let mut step = 0;
    for epoch_index in 0..config.joint_epochs {
        bundle.refresh()?;
        windows.shuffle(&mut rng);
        let mut epoch = JointLosses::default();
        for batch in windows.chunks(config.joint_batch_size.max(1)) {
            let seqs: Vec<&[usize]> = batch.iter().map(Vec::as_slice).collect();
            let items: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect::<BTreeSet<_>>().into_iter().collect();
            let mut g = Graph::new();
            let alpha = alpha_node(&mut g, &bundle, &features);
            let masks = mask_table(&mut g, alpha, config.levels, config.tau_m);
            let Some(arg) = bundle.generator.arg_loss(&mut g, &bundle.quant.store, &seqs, &bundle.layouts, Some(masks)) else {
                continue;
            };
            let t = quant_terms(&mut g, &bundle.quant, &items, &cca)?;
            let a_items = g.gather(alpha, &items);
            let bands: Vec<usize> = items.iter().map(|&i| bundle.stats.band[i]).collect();
            let pops: Vec<usize> = items.iter().map(|&i| bundle.stats.counts[i]).collect();
            let lb = load_balance_loss(&mut g, a_items, &bands)?;
            let smooth = smoothness_loss(&mut g, a_items, &pops)?;
            let cca_node = t.cca.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)));
            let mut total = g.add(t.scl, t.ccl);
            for (node, w) in [
                (cca_node, lambda_cca),
                (arg, config.lambda_arg),
                (lb, config.lambda_lb),
                (smooth, config.lambda_smooth),
            ] {
                let term = g.scale(node, w);
                total = g.add(total, term);
            }
            let value = g.value(total).item();
            check_finite("joint training", step, value)?;
            let row = JointLosses {
                scl: g.value(t.scl).item(),
                ccl: g.value(t.ccl).item(),
                cca: g.value(cca_node).item(),
                arg: g.value(arg).item(),
                lb: g.value(lb).item(),
                smooth: g.value(smooth).item(),
                total: value,
            };
            epoch.accumulate(&row, batch.len() as f64 / total_rows as f64);
            bundle.quant.store.zero_grad();
            g.backward(total, &mut bundle.quant.store)?;
            adam.step(&mut bundle.quant.store)?;
            if epoch_index >= config.router_warmup {
                router_adam.step(&mut bundle.quant.store)?;
            }
            step += 1;
        }
        bundle.joint_losses.push(epoch);
    }
    bundle.refresh()?;
    Ok(bundle)
}

/// All three stages for one variant.
pub fn train(prepared: &Prepared, config: &Config, variant: Variant, seed: u64) -> Result<Bundle> {
    let cf = stage_cf(prepared, config, seed)?;
    let lambda = if variant.uses_alignment() { config.lambda_cca } else { 0.0 };
    let quant = stage_quantize(prepared, &cf, config, seed, lambda)?;
    stage_joint(quant, prepared, config, variant, seed)
}

pub(super) fn vocab(config: &Config) -> Result<TokenVocab> {
    TokenVocab::new(config.levels, config.codebook_size)
}

pub(super) fn build_joint_modules(
    store: &mut ParamStore,
    config: &Config,
    rng: &mut impl rand::Rng,
) -> Result<(Router, Generator)> {
    let router = Router::new(store, router_config(config), rng)?;
    let generator = Generator::new(store, vocab(config)?, generator_config(config), rng)?;
    Ok((router, generator))
}
