use std::collections::BTreeMap;

use super::ItemTokenLayout;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
struct TrieNode {
    children: BTreeMap<usize, usize>,
    items: Vec<usize>,
}

/// Items sharing a leaf, summarised.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollisionStats {
    pub leaves: usize,
    /// `histogram[s]` counts leaves holding exactly `s` items.
    pub histogram: Vec<usize>,
    /// Items beyond the first in each leaf.
    pub collisions: usize,
}

/// Prefix tree over item token tuples. Leaf item lists are in ranking order.
#[derive(Clone, Debug)]
pub struct CodeTrie {
    nodes: Vec<TrieNode>,
    depth: usize,
}

impl CodeTrie {
    /// `layouts[i]` is item `i`; `rank` orders items inside a leaf (lower first).
    pub fn build(layouts: &[ItemTokenLayout], rank: &[usize]) -> Result<Self> {
        let depth = layouts.first().map(ItemTokenLayout::len).ok_or_else(|| Error::Empty("no item layouts".into()))?;
        if rank.len() != layouts.len() {
            return Err(Error::Contract("one rank per item".into()));
        }
        let mut nodes = vec![TrieNode::default()];
        for (item, lay) in layouts.iter().enumerate() {
            if lay.len() != depth || depth == 0 {
                return Err(Error::Contract(format!("item {item} has {} slots, expected {depth}", lay.len())));
            }
            let mut cur = 0;
            for &t in &lay.tokens {
                let next = nodes.len();
                cur = *nodes[cur].children.entry(t).or_insert(next);
                if cur == next {
                    nodes.push(TrieNode::default());
                }
            }
            nodes[cur].items.push(item);
        }
        for n in nodes.iter_mut() {
            n.items.sort_by_key(|&i| (rank[i], i));
        }
        Ok(CodeTrie { nodes, depth })
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `(token, child node)` pairs in token order.
    pub fn children(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes[node].children.iter().map(|(&t, &c)| (t, c))
    }

    pub fn child(&self, node: usize, token: usize) -> Option<usize> {
        self.nodes[node].children.get(&token).copied()
    }

    pub fn items(&self, node: usize) -> &[usize] {
        &self.nodes[node].items
    }

    /// Leaf reached by a full token tuple, if any.
    pub fn lookup(&self, tokens: &[usize]) -> Option<&[usize]> {
        if tokens.len() != self.depth {
            return None;
        }
        let mut cur = 0;
        for &t in tokens {
            cur = self.child(cur, t)?;
        }
        Some(self.items(cur))
    }

    pub fn collision_stats(&self) -> CollisionStats {
        let mut histogram = Vec::new();
        let mut leaves = 0;
        let mut collisions = 0;
        for n in self.nodes.iter().filter(|n| !n.items.is_empty()) {
            leaves += 1;
            collisions += n.items.len() - 1;
            if histogram.len() <= n.items.len() {
                histogram.resize(n.items.len() + 1, 0);
            }
            histogram[n.items.len()] += 1;
        }
        CollisionStats {
            leaves,
            histogram,
            collisions,
        }
    }
}
