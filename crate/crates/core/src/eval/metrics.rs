/// 1-based rank of `target` in `ranked`, if present.
pub fn rank_of(ranked: &[usize], target: usize) -> Option<usize> {
    ranked.iter().position(|&i| i == target).map(|p| p + 1)
}

/// 1 if `target` is among the first `k` entries, else 0.
pub fn recall_at_k(ranked: &[usize], target: usize, k: usize) -> f64 {
    recall_from_rank(rank_of(ranked, target), k)
}

/// `1 / log2(rank + 1)` if `target` is among the first `k` entries, else 0.
pub fn ndcg_at_k(ranked: &[usize], target: usize, k: usize) -> f64 {
    ndcg_from_rank(rank_of(ranked, target), k)
}

pub fn recall_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn ndcg_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}
