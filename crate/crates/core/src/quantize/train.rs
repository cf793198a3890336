use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{LevelUsage, RqVae, RqVaeConfig};
use crate::error::{Error, Result};
use crate::numerics::tensor::squared_distance;
use crate::numerics::{seeded_rng, Adam, AdamConfig, Graph, ParamStore, Tensor};
use crate::Channel;

/// Diagnostics from [`train_rqvae`].
#[derive(Clone, Debug, PartialEq)]
pub struct RqTrainReport {
    pub epoch_losses: Vec<f64>,
    pub usage: Vec<LevelUsage>,
    /// Mean squared reconstruction error per entry over all inputs.
    pub recon_mse: f64,
    pub codes_reset: usize,
}

#[derive(Clone, Debug)]
pub struct TrainedRqVae {
    pub store: ParamStore,
    pub model: RqVae,
    pub report: RqTrainReport,
}

/// Residual fed into every level, `[level][row][code_dim]`.
fn level_inputs(model: &RqVae, store: &ParamStore, data: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let d = model.config.code_dim;
    let z = model.latent(store, data.data());
    let mut current: Vec<Vec<f64>> = z.chunks(d).map(<[f64]>::to_vec).collect();
    let mut out = Vec::with_capacity(model.levels());
    for level in 0..model.levels() {
        out.push(current.clone());
        let cb = store.value(model.codebooks[level]);
        for r in current.iter_mut() {
            let k = model.nearest(store, level, r);
            r.iter_mut().zip(cb.row(k)).for_each(|(a, b)| *a -= b);
        }
    }
    out
}

/// k-means++ seeding followed by Lloyd iterations on each level's residuals,
/// level by level.
pub fn init_codebooks(model: &RqVae, store: &mut ParamStore, data: &Tensor, rng: &mut impl Rng) -> Result<()> {
    let k = model.codebook_size();
    let d = model.config.code_dim;
    let z = model.latent(store, data.data());
    let mut residual: Vec<Vec<f64>> = z.chunks(d).map(<[f64]>::to_vec).collect();
    if residual.is_empty() {
        return Err(Error::Empty("no vectors to initialise codebooks from".into()));
    }
    for level in 0..model.levels() {
        let centers = kmeans(&residual, k, model.config.kmeans_iters, rng);
        let flat: Vec<f64> = centers.iter().flatten().copied().collect();
        store.set_value(model.codebooks[level], Tensor::matrix(k, d, flat)?)?;
        for r in residual.iter_mut() {
            let c = &centers[nearest(&centers, r)];
            r.iter_mut().zip(c).for_each(|(a, b)| *a -= b);
        }
    }
    Ok(())
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, c) in centers.iter().enumerate() {
        let d = squared_distance(x, c);
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let d = points[0].len();
    let scale = (points.iter().flatten().map(|v| v * v).sum::<f64>() / (n * d) as f64).sqrt().max(1e-6);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if t < w {
                    pick = i;
                    break;
                }
                t -= w;
            }
            points[pick].clone()
        } else {
            // fewer distinct points than codes: jitter an existing point
            let base = &points[rng.random_range(0..n)];
            base.iter().map(|v| v + 1e-3 * scale * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        for (dv, p) in dist.iter_mut().zip(points) {
            *dv = dv.min(squared_distance(p, &next));
        }
        centers.push(next);
    }
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let c = nearest(&centers, p);
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    centers
}

/// Resets every code with zero count in `counts[level]` to a random residual
/// that reaches that level, plus small noise. Returns the number of resets.
pub fn reinit_dead_codes(
    model: &RqVae,
    store: &mut ParamStore,
    counts: &[Vec<usize>],
    data: &Tensor,
    rng: &mut impl Rng,
) -> Result<usize> {
    let inputs = level_inputs(model, store, data);
    let mut resets = 0;
    for (level, level_counts) in counts.iter().enumerate() {
        let dead: Vec<usize> = (0..level_counts.len()).filter(|&k| level_counts[k] == 0).collect();
        if dead.is_empty() {
            continue;
        }
        let pool = &inputs[level];
        let n = pool.len();
        let rms = (pool.iter().flatten().map(|v| v * v).sum::<f64>() / (n * model.config.code_dim) as f64)
            .sqrt()
            .max(1e-6);
        let cb = store.value_mut(model.codebooks[level]);
        for k in dead {
            let src = &pool[rng.random_range(0..n)];
            for (c, s) in cb.row_mut(k).iter_mut().zip(src) {
                *c = s + 0.01 * rms * rng.sample::<f64, _>(StandardNormal);
            }
            resets += 1;
        }
    }
    Ok(resets)
}

/// Trains one quantizer on the rows of `data` (`[n, input_dim]`).
pub fn train_rqvae(data: &Tensor, channel: Channel, config: &RqVaeConfig, seed: u64) -> Result<TrainedRqVae> {
    let n = data.rows();
    if n == 0 {
        return Err(Error::Empty("no embeddings to quantize".into()));
    }
    let mut rng = seeded_rng(seed, 0xB0 + channel.index() as u64);
    let mut store = ParamStore::new();
    let model = RqVae::new(&mut store, channel, data.cols(), config, &mut rng)?;
    init_codebooks(&model, &mut store, data, &mut rng)?;
    let mut adam = Adam::all(AdamConfig::with_lr(config.lr), &store);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut codes_reset = 0;
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut counts = vec![vec![0usize; config.codebook_size]; model.levels()];
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut rows = Vec::with_capacity(batch.len() * data.cols());
            for &i in batch {
                rows.extend_from_slice(data.row(i));
            }
            let mut g = Graph::new();
            let x = g.constant(Tensor::matrix(batch.len(), data.cols(), rows)?);
            let f = model.forward(&mut g, &store, x);
            let loss = g.value(f.total).item();
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: format!("{channel} quantizer"),
                    step,
                    loss,
                });
            }
            for c in &f.codes {
                for (level, &k) in c.iter().enumerate() {
                    counts[level][k] += 1;
                }
            }
            store.zero_grad();
            g.backward(f.total, &mut store)?;
            adam.step(&mut store)?;
            total += loss * batch.len() as f64;
            step += 1;
        }
        epoch_losses.push(total / n as f64);
        if config.reinit_dead_codes {
            codes_reset += reinit_dead_codes(&model, &mut store, &counts, data, &mut rng)?;
        }
    }
    let codes = model.encode_all(&store, data)?;
    let mut se = 0.0;
    for (i, c) in codes.iter().enumerate() {
        let rec = model.decode(&store, c)?;
        se += squared_distance(data.row(i), &rec);
    }
    let usage = super::ItemCodes::new(channel, config.codebook_size, codes)?.usage();
    Ok(TrainedRqVae {
        report: RqTrainReport {
            epoch_losses,
            usage,
            recon_mse: se / (n * data.cols()) as f64,
            codes_reset,
        },
        store,
        model,
    })
}
