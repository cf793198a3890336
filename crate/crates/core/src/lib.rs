//! Dual-codebook generative recommendation: collaborative and semantic
//! residual-quantized item codes, a popularity-aware router that splits a
//! fixed token budget between them, and an autoregressive generator decoded
//! through a prefix trie.

pub mod align;
pub mod channel;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod generate;
pub mod numerics;
pub mod pipeline;
pub mod quantize;
pub mod route;

pub use channel::Channel;
pub use config::Config;
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use pipeline::{Bundle, Prepared, Variant};
