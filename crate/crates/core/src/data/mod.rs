//! Interaction logs, k-core filtering, leave-last-out splits, item statistics
//! and the synthetic long-tail generator.

mod dataset;
mod interactions;
mod kcore;
mod stats;
pub mod synth;

pub use dataset::{leave_last_out_split, Split, SplitOutcome, SequenceDataset};
pub use interactions::{format_interactions, load_interactions, parse_interactions, write_interactions, Interaction};
pub use kcore::k_core_filter;
pub use stats::{compute_item_stats, head_mask, head_tail_partition, popularity_bands, ItemStats};
pub use synth::{synth_longtail, SynthConfig, SynthOutput};
