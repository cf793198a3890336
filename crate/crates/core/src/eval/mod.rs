//! Ranking metrics, evaluation reports, ablations and token-budget sweeps.

mod ablation;
mod metrics;
mod report;

pub use ablation::{budget_sweep, run_ablation, SweepTable};
pub use metrics::{ndcg_at_k, ndcg_from_rank, rank_of, recall_at_k, recall_from_rank};
pub use report::{evaluate_with, EvalReport, MetricRow, UserRecord};
