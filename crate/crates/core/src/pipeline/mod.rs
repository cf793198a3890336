//! Staged training and evaluation on top of the building blocks: data
//! preparation, collaborative pre-training, quantizer pre-training with
//! alignment, and the joint stage over router, generator and quantizers.

mod bundle;
mod manifest;
mod prepare;
mod train;

use std::fmt;
use std::str::FromStr;

pub use bundle::{evaluate, Bundle, Evaluation};
pub use manifest::{file_sha256, Artifact, RunManifest, MANIFEST};
pub use prepare::{prepare, prepare_from, Prepared};
pub use train::{normalize_rows, stage_cf, stage_joint, stage_quantize, train, CfStage, JointLosses, QuantLosses, QuantStage};

use crate::error::{Error, Result};

/// Ablation variants: how the routing ratio is chosen and whether alignment is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Every slot semantic: `α = 0`.
    SidOnly,
    /// Every slot collaborative: `α = 1`.
    CidOnly,
    /// `α = 0.5` for every item, router unused.
    FixedSplit,
    /// Router on, alignment weight zero.
    NoAlignment,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::SidOnly,
        Variant::CidOnly,
        Variant::FixedSplit,
        Variant::NoAlignment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SidOnly => "sid_only",
            Variant::CidOnly => "cid_only",
            Variant::FixedSplit => "fixed_split",
            Variant::NoAlignment => "no_alignment",
        }
    }

    /// The routing ratio every item gets, when the router is bypassed.
    pub fn forced_alpha(self) -> Option<f64> {
        match self {
            Variant::SidOnly => Some(0.0),
            Variant::CidOnly => Some(1.0),
            Variant::FixedSplit => Some(0.5),
            Variant::Full | Variant::NoAlignment => None,
        }
    }

    pub fn uses_alignment(self) -> bool {
        self != Variant::NoAlignment
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Lookup {
                kind: "variant",
                id: s.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("both".parse::<Variant>().is_err());
    }
}
