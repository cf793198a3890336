use std::collections::HashMap;
use std::fmt::Write as _;

use super::Interaction;
use crate::error::{Error, Result};

/// Leave-last-out markers for one user: `sequence[..n_train]` is the training
/// prefix, then one validation item, then one test item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split {
    pub n_train: usize,
}

/// Chronological per-user item sequences over dense user and item indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    item_lookup: HashMap<String, usize>,
    /// Per user, item indices sorted by timestamp (ties keep input order).
    pub sequences: Vec<Vec<usize>>,
    pub timestamps: Vec<Vec<i64>>,
    pub splits: Option<Vec<Split>>,
}

impl SequenceDataset {
    /// Groups rows by user; users and items are indexed by first appearance.
    pub fn from_interactions(rows: &[Interaction]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("no interactions to build a dataset from".into()));
        }
        let mut user_lookup: HashMap<&str, usize> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_lookup: HashMap<String, usize> = HashMap::new();
        let mut item_ids = Vec::new();
        let mut per_user: Vec<Vec<(i64, usize, usize)>> = Vec::new();
        for (order, r) in rows.iter().enumerate() {
            let u = *user_lookup.entry(&r.user_id).or_insert_with(|| {
                user_ids.push(r.user_id.clone());
                per_user.push(Vec::new());
                user_ids.len() - 1
            });
            let i = match item_lookup.get(&r.item_id) {
                Some(&i) => i,
                None => {
                    item_ids.push(r.item_id.clone());
                    item_lookup.insert(r.item_id.clone(), item_ids.len() - 1);
                    item_ids.len() - 1
                }
            };
            per_user[u].push((r.timestamp, order, i));
        }
        let mut sequences = Vec::with_capacity(per_user.len());
        let mut timestamps = Vec::with_capacity(per_user.len());
        for mut events in per_user {
            events.sort_by_key(|&(t, order, _)| (t, order));
            sequences.push(events.iter().map(|e| e.2).collect());
            timestamps.push(events.iter().map(|e| e.0).collect());
        }
        Ok(SequenceDataset {
            user_ids,
            item_ids,
            item_lookup,
            sequences,
            timestamps,
            splits: None,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_lookup.get(id).copied()
    }

    pub fn is_split(&self) -> bool {
        self.splits.is_some()
    }

    fn split(&self, user: usize) -> Result<Split> {
        self.splits
            .as_ref()
            .map(|s| s[user])
            .ok_or_else(|| Error::Contract("dataset has no leave-last-out split".into()))
    }

    pub fn train_items(&self, user: usize) -> Result<&[usize]> {
        let s = self.split(user)?;
        Ok(&self.sequences[user][..s.n_train])
    }

    pub fn train_timestamps(&self, user: usize) -> Result<&[i64]> {
        let s = self.split(user)?;
        Ok(&self.timestamps[user][..s.n_train])
    }

    pub fn valid_item(&self, user: usize) -> Result<usize> {
        let s = self.split(user)?;
        Ok(self.sequences[user][s.n_train])
    }

    pub fn test_item(&self, user: usize) -> Result<usize> {
        let s = self.split(user)?;
        Ok(self.sequences[user][s.n_train + 1])
    }

    /// Everything before the test item: training prefix plus validation item.
    pub fn test_history(&self, user: usize) -> Result<&[usize]> {
        let s = self.split(user)?;
        Ok(&self.sequences[user][..s.n_train + 1])
    }

    /// `user_id<TAB>n_train<TAB>valid_item<TAB>test_item` lines.
    pub fn split_manifest(&self) -> Result<String> {
        let mut out = String::new();
        for u in 0..self.num_users() {
            let s = self.split(u)?;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                self.user_ids[u],
                s.n_train,
                self.item_ids[self.valid_item(u)?],
                self.item_ids[self.test_item(u)?]
            );
        }
        Ok(out)
    }
}

/// Result of [`leave_last_out_split`].
#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub dataset: SequenceDataset,
    /// Users removed for having fewer than three interactions.
    pub dropped_users: usize,
}

/// Marks the last item of every sequence as test and the one before it as
/// validation. Users with fewer than three items are dropped; item indices are
/// left untouched.
pub fn leave_last_out_split(dataset: &SequenceDataset) -> SplitOutcome {
    let mut out = dataset.clone();
    out.user_ids.clear();
    out.sequences.clear();
    out.timestamps.clear();
    let mut splits = Vec::new();
    let mut dropped = 0;
    for u in 0..dataset.num_users() {
        let seq = &dataset.sequences[u];
        if seq.len() < 3 {
            dropped += 1;
            continue;
        }
        out.user_ids.push(dataset.user_ids[u].clone());
        out.sequences.push(seq.clone());
        out.timestamps.push(dataset.timestamps[u].clone());
        splits.push(Split {
            n_train: seq.len() - 2,
        });
    }
    out.splits = Some(splits);
    SplitOutcome {
        dataset: out,
        dropped_users: dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset_of(seqs: &[&[&str]]) -> SequenceDataset {
        let mut rows = Vec::new();
        for (u, s) in seqs.iter().enumerate() {
            for (t, item) in s.iter().enumerate() {
                rows.push(Interaction::new(format!("u{u}"), *item, t as i64));
            }
        }
        SequenceDataset::from_interactions(&rows).unwrap()
    }

    #[test]
    fn sorts_by_time_with_stable_ties() {
        let rows = vec![
            Interaction::new("u", "c", 5),
            Interaction::new("u", "a", 1),
            Interaction::new("u", "b", 5),
        ];
        let ds = SequenceDataset::from_interactions(&rows).unwrap();
        let names: Vec<_> = ds.sequences[0].iter().map(|&i| ds.item_ids[i].as_str()).collect();
        assert_eq!(names, ["a", "c", "b"]);
    }

    #[test]
    fn split_examples() {
        let ds = dataset_of(&[&["a", "b", "c", "d"], &["a", "b", "c"], &["a", "b"]]);
        let out = leave_last_out_split(&ds);
        assert_eq!(out.dropped_users, 1);
        let s = out.dataset;
        assert_eq!(s.num_users(), 2);
        let name = |i: usize| s.item_ids[i].clone();
        assert_eq!(s.train_items(0).unwrap().iter().map(|&i| name(i)).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(name(s.valid_item(0).unwrap()), "c");
        assert_eq!(name(s.test_item(0).unwrap()), "d");
        assert_eq!(s.train_items(1).unwrap().len(), 1);
        assert_eq!(name(s.test_item(1).unwrap()), "c");
        assert_eq!(
            s.split_manifest().unwrap(),
            "u0\t2\tc\td\nu1\t1\tb\tc\n"
        );
    }

    #[test]
    fn unsplit_access_is_an_error() {
        let ds = dataset_of(&[&["a", "b", "c"]]);
        assert!(ds.train_items(0).is_err());
    }

    proptest! {
        #[test]
        fn split_parts_reassemble(lens in proptest::collection::vec(0usize..9, 1..12)) {
            let seqs: Vec<Vec<String>> = lens.iter().enumerate()
                .map(|(u, &n)| (0..n).map(|t| format!("i{}", (u * 7 + t * 3) % 11)).collect())
                .collect();
            let mut rows = Vec::new();
            for (u, s) in seqs.iter().enumerate() {
                for (t, it) in s.iter().enumerate() {
                    rows.push(Interaction::new(format!("u{u}"), it.clone(), t as i64));
                }
            }
            prop_assume!(!rows.is_empty());
            let ds = SequenceDataset::from_interactions(&rows).unwrap();
            let out = leave_last_out_split(&ds);
            let s = &out.dataset;
            prop_assert_eq!(s.num_users() + out.dropped_users, ds.num_users());
            for u in 0..s.num_users() {
                let mut joined = s.train_items(u).unwrap().to_vec();
                joined.push(s.valid_item(u).unwrap());
                joined.push(s.test_item(u).unwrap());
                prop_assert_eq!(&joined, &s.sequences[u]);
            }
        }
    }
}
