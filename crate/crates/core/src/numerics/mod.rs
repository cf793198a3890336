//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference checker.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport, ParamCheck};
pub use graph::{Frozen, Graph, NodeId};
pub use nn::{KvCache, LayerNorm, Linear, Mlp, TransformerBlock};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for a seed and a stage-specific salt.
pub fn seeded_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
