//! Residual-quantization autoencoder: an encoder into code space, `L` greedy
//! nearest-codeword levels over the running residual, and a decoder back to
//! the embedding space.

mod codes;
mod rqvae;
mod train;

pub use codes::{codebook_usage, format_codes, parse_codes, ItemCodes, LevelUsage};
pub use rqvae::{RqForward, RqVae, RqVaeConfig, Transform};
pub use train::{init_codebooks, reinit_dead_codes, train_rqvae, RqTrainReport, TrainedRqVae};
