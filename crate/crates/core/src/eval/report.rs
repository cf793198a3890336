use std::fmt::Write as _;

use super::metrics::{ndcg_from_rank, rank_of, recall_from_rank};
use crate::data::SequenceDataset;
use crate::error::{Error, Result};

/// One evaluated user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserRecord {
    pub user: usize,
    pub target: usize,
    /// 1-based rank of the target in the returned list.
    pub rank: Option<usize>,
    pub head: bool,
}

/// Mean of one metric over all users and over each partition.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub overall: f64,
    pub head: f64,
    pub tail: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub ks: Vec<usize>,
    pub metrics: Vec<MetricRow>,
    pub users: Vec<UserRecord>,
}

impl EvalReport {
    pub fn from_records(label: &str, seed: u64, config_hash: &str, ks: &[usize], users: Vec<UserRecord>) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Empty("no users evaluated".into()));
        }
        let mut metrics = Vec::new();
        for &k in ks {
            for (name, f) in [("recall", recall_from_rank as fn(Option<usize>, usize) -> f64), ("ndcg", ndcg_from_rank)] {
                let value = |u: &UserRecord| f(u.rank, k);
                let mean = |keep: &dyn Fn(&UserRecord) -> bool| {
                    let sel: Vec<f64> = users.iter().filter(|u| keep(u)).map(value).collect();
                    if sel.is_empty() { 0.0 } else { sel.iter().sum::<f64>() / sel.len() as f64 }
                };
                metrics.push(MetricRow {
                    name: format!("{name}@{k}"),
                    overall: mean(&|_| true),
                    head: mean(&|u| u.head),
                    tail: mean(&|u| !u.head),
                });
            }
        }
        Ok(EvalReport {
            label: label.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            ks: ks.to_vec(),
            metrics,
            users,
        })
    }

    pub fn metric(&self, name: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn head_users(&self) -> usize {
        self.users.iter().filter(|u| u.head).count()
    }

    pub fn tail_users(&self) -> usize {
        self.users.len() - self.head_users()
    }

    /// `key = value` lines, one metric per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "label = {}", self.label);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        let _ = writeln!(s, "users = {}", self.users.len());
        let _ = writeln!(s, "head_users = {}", self.head_users());
        let _ = writeln!(s, "tail_users = {}", self.tail_users());
        for m in &self.metrics {
            let _ = writeln!(s, "{} = {:?}", m.name, m.overall);
            let _ = writeln!(s, "{}.head = {:?}", m.name, m.head);
            let _ = writeln!(s, "{}.tail = {:?}", m.name, m.tail);
        }
        s
    }

    pub fn to_json(&self) -> String {
        let metrics: serde_json::Map<String, serde_json::Value> = self
            .metrics
            .iter()
            .map(|m| (m.name.clone(), serde_json::json!({"overall": m.overall, "head": m.head, "tail": m.tail})))
            .collect();
        let v = serde_json::json!({
            "label": self.label,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "users": self.users.len(),
            "head_users": self.head_users(),
            "tail_users": self.tail_users(),
            "metrics": metrics,
        });
        serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
    }

    /// `user_id<TAB>target<TAB>rank` lines; rank 0 for a miss.
    pub fn hits_tsv(&self, dataset: &SequenceDataset) -> String {
        let mut s = String::new();
        for u in &self.users {
            let _ = writeln!(
                s,
                "{}\t{}\t{}",
                dataset.user_ids[u.user],
                dataset.item_ids[u.target],
                u.rank.unwrap_or(0)
            );
        }
        s
    }
}

/// Ranks each user's test item with `ranker(user, history)` and scores it.
///
/// `users` selects whom to evaluate; `head[item]` says whether an item is head.
pub fn evaluate_with(
    dataset: &SequenceDataset,
    users: &[usize],
    head: &[bool],
    max_k: usize,
    mut ranker: impl FnMut(usize, &[usize]) -> Result<Vec<usize>>,
) -> Result<Vec<UserRecord>> {
    let mut out = Vec::with_capacity(users.len());
    for &u in users {
        let target = dataset.test_item(u)?;
        let ranked = ranker(u, dataset.test_history(u)?)?;
        let rank = rank_of(&ranked[..ranked.len().min(max_k)], target);
        out.push(UserRecord {
            user: u,
            target,
            rank,
            head: head[target],
        });
    }
    Ok(out)
}
