use crate::error::{Error, Result};
use crate::route::Allocation;
use crate::Channel;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const NULL: usize = 3;
const SPECIALS: usize = 4;

/// Segment tags fed to the generator alongside each token.
pub const SEGMENT_SPECIAL: usize = 0;
pub const SEGMENT_NULL: usize = 1;
pub const SEGMENT_COL: usize = 2;
pub const SEGMENT_SEM: usize = 3;
pub const NUM_SEGMENTS: usize = 4;

/// Token ids: four specials, then one block of `K` ids per (channel, level).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenVocab {
    pub levels: usize,
    pub codebook_size: usize,
}

impl TokenVocab {
    pub fn new(levels: usize, codebook_size: usize) -> Result<Self> {
        if levels == 0 || codebook_size == 0 {
            return Err(Error::Config("vocabulary needs at least one level and one code".into()));
        }
        Ok(TokenVocab { levels, codebook_size })
    }

    pub fn size(&self) -> usize {
        2 * self.levels * self.codebook_size + SPECIALS
    }

    pub fn token(&self, channel: Channel, level: usize, index: usize) -> Result<usize> {
        if level >= self.levels || index >= self.codebook_size {
            return Err(Error::Contract(format!(
                "code ({channel}, level {level}, index {index}) outside {}×{}",
                self.levels, self.codebook_size
            )));
        }
        Ok(SPECIALS + (channel.index() * self.levels + level) * self.codebook_size + index)
    }

    /// Inverse of [`TokenVocab::token`]; `None` for specials and out-of-range ids.
    pub fn decode(&self, token: usize) -> Option<(Channel, usize, usize)> {
        if token < SPECIALS || token >= self.size() {
            return None;
        }
        let t = token - SPECIALS;
        let block = t / self.codebook_size;
        let channel = Channel::BOTH[block / self.levels];
        Some((channel, block % self.levels, t % self.codebook_size))
    }

    pub fn segment(&self, token: usize) -> usize {
        match self.decode(token) {
            Some((Channel::Collaborative, ..)) => SEGMENT_COL,
            Some((Channel::Semantic, ..)) => SEGMENT_SEM,
            None if token == NULL => SEGMENT_NULL,
            None => SEGMENT_SPECIAL,
        }
    }
}

/// What a slot of an item layout carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    Code { channel: Channel, level: usize },
    Null,
}

/// One item as exactly `L_total` tokens: collaborative codes left-aligned,
/// semantic codes right-aligned, NULL in between.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ItemTokenLayout {
    pub tokens: Vec<usize>,
}

impl ItemTokenLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn kinds(&self, vocab: &TokenVocab) -> Vec<SlotKind> {
        self.tokens
            .iter()
            .map(|&t| match vocab.decode(t) {
                Some((channel, level, _)) => SlotKind::Code { channel, level },
                None => SlotKind::Null,
            })
            .collect()
    }

    pub fn num_collaborative(&self, vocab: &TokenVocab) -> usize {
        self.tokens.iter().filter(|&&t| vocab.segment(t) == SEGMENT_COL).count()
    }
}

/// Lays out `l_col` collaborative and `l_sem` semantic codes in `L_total`
/// slots; a split short of `L_total` leaves NULL slots between the blocks.
pub fn tokenize_item(
    codes_col: &[usize],
    codes_sem: &[usize],
    split: (usize, usize),
    vocab: &TokenVocab,
) -> Result<ItemTokenLayout> {
    let total = vocab.levels;
    let (l_col, l_sem) = split;
    if codes_col.len() != total || codes_sem.len() != total || l_col + l_sem > total {
        return Err(Error::Contract(format!(
            "layout needs {total} codes per channel and a split of at most {total} slots, got {}/{} codes and ({l_col}, {l_sem})",
            codes_col.len(),
            codes_sem.len()
        )));
    }
    let mut tokens = vec![NULL; total];
    for (level, &c) in codes_col.iter().take(l_col).enumerate() {
        tokens[level] = vocab.token(Channel::Collaborative, level, c)?;
    }
    for (level, &c) in codes_sem.iter().take(l_sem).enumerate() {
        tokens[total - l_sem + level] = vocab.token(Channel::Semantic, level, c)?;
    }
    Ok(ItemTokenLayout { tokens })
}

/// Soft mask values of every slot under `alloc`, or 1 for NULL slots.
pub fn slot_masks(layout: &ItemTokenLayout, alloc: &Allocation, vocab: &TokenVocab) -> Vec<f64> {
    layout
        .kinds(vocab)
        .into_iter()
        .map(|k| match k {
            SlotKind::Code { channel: Channel::Collaborative, level } => alloc.mask_col[level],
            SlotKind::Code { channel: Channel::Semantic, level } => alloc.mask_sem[level],
            SlotKind::Null => 1.0,
        })
        .collect()
}

/// Column of the `[n, 2L + 1]` mask table that scales each slot: `level` for
/// collaborative, `L + level` for semantic and `2L` (constant one) for NULL.
pub fn mask_columns(layout: &ItemTokenLayout, vocab: &TokenVocab) -> Vec<usize> {
    layout
        .kinds(vocab)
        .into_iter()
        .map(|k| match k {
            SlotKind::Code { channel, level } => channel.index() * vocab.levels + level,
            SlotKind::Null => 2 * vocab.levels,
        })
        .collect()
}
