//! Autoregressive generation over item slot tokens and trie-constrained
//! decoding back to items.

mod decode;
mod model;
mod trie;
mod vocab;

pub use decode::{generate_items, BeamOutput, Scored};
pub use model::{mask_table, DecodeState, Generator, GeneratorConfig};
pub use trie::{CodeTrie, CollisionStats};
pub use vocab::{
    mask_columns, slot_masks, tokenize_item, ItemTokenLayout, SlotKind, TokenVocab, BOS, EOS, NULL, PAD,
};
