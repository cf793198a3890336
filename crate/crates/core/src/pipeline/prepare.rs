use std::fmt::Write as _;

use crate::config::Config;
use crate::data::{
    compute_item_stats, k_core_filter, leave_last_out_split, load_interactions, synth_longtail, Interaction,
    ItemStats, SequenceDataset,
};
use crate::embed::{load_semantic_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::Channel;

/// Filtered, split dataset with semantic vectors in dataset item order.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub interactions: Vec<Interaction>,
    pub dataset: SequenceDataset,
    pub semantic: EmbeddingTable,
    /// Training-split statistics without embedding uncertainty.
    pub stats: ItemStats,
    pub dropped_users: usize,
}

impl Prepared {
    /// `item_id<TAB>count<TAB>rank<TAB>band` lines.
    pub fn stats_tsv(&self) -> String {
        let mut s = String::new();
        for (i, id) in self.dataset.item_ids.iter().enumerate() {
            let _ = writeln!(s, "{id}\t{}\t{}\t{}", self.stats.counts[i], self.stats.rank[i], self.stats.band[i]);
        }
        s
    }
}

/// Applies k-core filtering, builds and splits sequences and aligns the
/// semantic vectors to the surviving items.
pub fn prepare_from(rows: &[Interaction], semantic: &EmbeddingTable, config: &Config) -> Result<Prepared> {
    let kept = k_core_filter(rows, config.k_core);
    if kept.is_empty() {
        return Err(Error::Empty(format!("nothing survives {}-core filtering", config.k_core)));
    }
    let split = leave_last_out_split(&SequenceDataset::from_interactions(&kept)?);
    let dataset = split.dataset;
    if dataset.num_users() == 0 {
        return Err(Error::Empty("no user has three or more interactions".into()));
    }
    let vectors = semantic.aligned(&dataset.item_ids)?;
    let semantic = EmbeddingTable::new(Channel::Semantic, dataset.item_ids.clone(), vectors)?;
    let stats = compute_item_stats(&dataset, None, config.num_bands)?;
    Ok(Prepared {
        interactions: kept,
        dataset,
        semantic,
        stats,
        dropped_users: split.dropped_users,
    })
}

/// Reads the configured files, or generates the synthetic world from
/// `config.synth` and `config.seed` when no files are set.
pub fn prepare(config: &Config) -> Result<Prepared> {
    config.validate()?;
    match (&config.interactions, &config.semantic) {
        (Some(rows), Some(sem)) => {
            let rows = load_interactions(rows)?;
            let sem = load_semantic_embeddings(sem, config.semantic_dim)?;
            prepare_from(&rows, &sem, config)
        }
        _ => {
            let world = synth_longtail(&config.synth, config.seed)?;
            let ids: Vec<String> = world.dataset.item_ids.clone();
            let sem = EmbeddingTable::new(Channel::Semantic, ids, world.semantic)?;
            prepare_from(&world.interactions, &sem, config)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_preparation_is_deterministic() {
        let mut c = Config::default();
        c.synth.num_items = 120;
        c.synth.num_users = 60;
        c.k_core = 2;
        let a = prepare(&c).unwrap();
        let b = prepare(&c).unwrap();
        assert_eq!(a.dataset.split_manifest().unwrap(), b.dataset.split_manifest().unwrap());
        assert_eq!(a.stats_tsv(), b.stats_tsv());
        assert_eq!(a.semantic, b.semantic);
        assert!(a.dataset.num_items() <= 120);
        for (i, id) in a.dataset.item_ids.iter().enumerate() {
            assert_eq!(a.semantic.item_ids()[i], *id);
        }
    }

    #[test]
    fn missing_files_name_the_path() {
        let mut c = Config::default();
        c.interactions = Some("/no/such/file.tsv".into());
        c.semantic = Some("/no/such/sem.txt".into());
        let e = prepare(&c).unwrap_err().to_string();
        assert!(e.contains("/no/such/file.tsv"), "{e}");
    }
}
