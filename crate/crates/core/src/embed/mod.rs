//! Continuous item embeddings: semantic vectors loaded from files and
//! collaborative vectors learned by a small self-attentive sequence model.

mod cf;
mod table;

pub use cf::{train_cf_encoder, CfConfig, CfEncoder, CfTraining};
pub use table::{load_semantic_embeddings, parse_embeddings, EmbeddingTable};
