use super::SequenceDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-item popularity and router features, computed from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemStats {
    pub counts: Vec<usize>,
    /// `count / max count`, in `[0, 1]`.
    pub frequency: Vec<f64>,
    /// Time since first training interaction, normalized to `[0, 1]`.
    pub age: Vec<f64>,
    /// `1 / (1 + count)`.
    pub sparsity: Vec<f64>,
    /// Rank-normalized embedding variance across checkpoints; zero without history.
    pub uncertainty: Vec<f64>,
    /// Position of each item in the popularity order (0 = most popular).
    pub rank: Vec<usize>,
    pub band: Vec<usize>,
    pub num_bands: usize,
}

impl ItemStats {
    pub fn num_items(&self) -> usize {
        self.counts.len()
    }

    /// Items by count descending, ties by index.
    pub fn popularity_order(&self) -> Vec<usize> {
        popularity_order(&self.counts)
    }

    /// `[log(1+f), age, sparsity, uncertainty]`.
    pub fn features(&self, item: usize) -> [f64; 4] {
        [
            (1.0 + self.frequency[item]).ln(),
            self.age[item],
            self.sparsity[item],
            self.uncertainty[item],
        ]
    }
}

pub(crate) fn popularity_order(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

/// Builds item statistics over the training prefixes only.
///
/// `cf_history` holds one `[num_items, d]` snapshot of the collaborative item
/// embeddings per training checkpoint.
pub fn compute_item_stats(
    dataset: &SequenceDataset,
    cf_history: Option<&[Tensor]>,
    num_bands: usize,
) -> Result<ItemStats> {
    let n = dataset.num_items();
    let mut counts = vec![0usize; n];
    let mut first_seen: Vec<Option<i64>> = vec![None; n];
    let (mut t_min, mut t_max) = (i64::MAX, i64::MIN);
    for u in 0..dataset.num_users() {
        let items = dataset.train_items(u)?;
        let times = dataset.train_timestamps(u)?;
        for (&i, &t) in items.iter().zip(times) {
            counts[i] += 1;
            first_seen[i] = Some(first_seen[i].map_or(t, |f| f.min(t)));
            t_min = t_min.min(t);
            t_max = t_max.max(t);
        }
    }
    let max_count = counts.iter().copied().max().unwrap_or(0);
    let frequency = counts
        .iter()
        .map(|&c| if max_count == 0 { 0.0 } else { c as f64 / max_count as f64 })
        .collect();
    let span = (t_max - t_min) as f64;
    let age = first_seen
        .iter()
        .map(|f| match f {
            Some(t) if span > 0.0 => (t_max - t) as f64 / span,
            _ => 0.0,
        })
        .collect();
    let sparsity = counts.iter().map(|&c| 1.0 / (1.0 + c as f64)).collect();
    let uncertainty = match cf_history {
        Some(h) if !h.is_empty() => embedding_uncertainty(h, n)?,
        _ => vec![0.0; n],
    };
    let mut stats = ItemStats {
        rank: vec![0; n],
        band: vec![0; n],
        num_bands: 1,
        counts,
        frequency,
        age,
        sparsity,
        uncertainty,
    };
    for (r, i) in stats.popularity_order().into_iter().enumerate() {
        stats.rank[i] = r;
    }
    stats.band = popularity_bands(&stats, num_bands);
    stats.num_bands = num_bands.max(1);
    Ok(stats)
}

/// Trace of each item's per-dimension variance across snapshots, mapped to
/// `rank / (n - 1)` (ties by item index).
fn embedding_uncertainty(history: &[Tensor], n: usize) -> Result<Vec<f64>> {
    for h in history {
        if h.rows() != n {
            return Err(Error::Shape(format!(
                "embedding snapshot has {} rows, dataset has {n} items",
                h.rows()
            )));
        }
    }
    let k = history.len() as f64;
    let traces: Vec<f64> = (0..n)
        .map(|i| {
            let d = history[0].cols();
            (0..d)
                .map(|c| {
                    let mean = history.iter().map(|h| h.row(i)[c]).sum::<f64>() / k;
                    history.iter().map(|h| (h.row(i)[c] - mean).powi(2)).sum::<f64>() / k
                })
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| traces[a].total_cmp(&traces[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let denom = (n.max(2) - 1) as f64;
    for (r, i) in order.into_iter().enumerate() {
        out[i] = r as f64 / denom;
    }
    Ok(out)
}

/// Contiguous popularity strata: the item at popularity position `p` goes to
/// band `p·B / n`. With more bands than items each item gets its own band.
pub fn popularity_bands(stats: &ItemStats, num_bands: usize) -> Vec<usize> {
    let n = stats.num_items();
    let b = num_bands.max(1);
    let mut band = vec![0; n];
    for (p, i) in stats.popularity_order().into_iter().enumerate() {
        band[i] = if b > n { p } else { p * b / n };
    }
    band
}

/// Top `⌈fraction·n⌉` items by training count form the head.
pub fn head_tail_partition(stats: &ItemStats, head_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(head_fraction > 0.0 && head_fraction < 1.0) {
        return Err(Error::Config(format!(
            "head fraction must lie in (0, 1), got {head_fraction}"
        )));
    }
    let order = stats.popularity_order();
    let n_head = ((head_fraction * order.len() as f64) - 1e-9).ceil() as usize;
    let (head, tail) = order.split_at(n_head.min(order.len()));
    Ok((head.to_vec(), tail.to_vec()))
}

/// Membership mask form of [`head_tail_partition`].
pub fn head_mask(stats: &ItemStats, head_fraction: f64) -> Result<Vec<bool>> {
    let (head, _) = head_tail_partition(stats, head_fraction)?;
    let mut mask = vec![false; stats.num_items()];
    for i in head {
        mask[i] = true;
    }
    Ok(mask)
}
