use std::fmt::Write as _;

use super::EvalReport;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::pipeline::{evaluate, train, Prepared, Variant};

/// Trains and evaluates one variant; everything but the variant's own
/// override is taken from `config`.
pub fn run_ablation(variant: Variant, prepared: &Prepared, config: &Config, seed: u64) -> Result<EvalReport> {
    let bundle = train(prepared, config, variant, seed)?;
    Ok(evaluate(&bundle, prepared, seed)?.report)
}

/// NDCG@10 per variant (rows) and token budget (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub levels: Vec<usize>,
    pub rows: Vec<(Variant, Vec<f64>)>,
}

impl SweepTable {
    pub fn value(&self, variant: Variant, levels: usize) -> Option<f64> {
        let c = self.levels.iter().position(|&l| l == levels)?;
        self.rows.iter().find(|(v, _)| *v == variant).map(|(_, r)| r[c])
    }

    /// Tab-separated table with a header row `variant L=3 L=4 …`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("variant");
        for l in &self.levels {
            let _ = write!(s, "\tL={l}");
        }
        s.push('\n');
        for (v, row) in &self.rows {
            s.push_str(v.as_str());
            for x in row {
                let _ = write!(s, "\t{x:.6}");
            }
            s.push('\n');
        }
        s
    }
}

/// Retrains quantizers, router and generator at every budget in `levels`.
pub fn budget_sweep(
    prepared: &Prepared,
    config: &Config,
    levels: &[usize],
    variants: &[Variant],
    seed: u64,
) -> Result<SweepTable> {
    if levels.is_empty() || levels.iter().any(|&l| l < 2) {
        return Err(Error::Config("sweep budgets must all be at least 2".into()));
    }
    let mut rows: Vec<(Variant, Vec<f64>)> = variants.iter().map(|&v| (v, Vec::new())).collect();
    for &l in levels {
        let mut c = config.clone();
        c.levels = l;
        c.validate()?;
        for (v, row) in rows.iter_mut() {
            let report = run_ablation(*v, prepared, &c, seed)?;
            row.push(report.metric("ndcg@10").map_or(0.0, |m| m.overall));
        }
    }
    Ok(SweepTable {
        levels: levels.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let t = SweepTable {
            levels: vec![3, 4],
            rows: vec![(Variant::Full, vec![0.5, 0.25]), (Variant::SidOnly, vec![0.1, 0.2])],
        };
        assert_eq!(t.to_text(), "variant\tL=3\tL=4\nfull\t0.500000\t0.250000\nsid_only\t0.100000\t0.200000\n");
        assert_eq!(t.value(Variant::SidOnly, 4), Some(0.2));
        assert_eq!(t.value(Variant::Full, 5), None);
    }
}
