//! Flat `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::SynthConfig;
use crate::error::{Error, Result};

/// Every knob of a run. Field names match the config keys with `.` → `_`.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub interactions: Option<PathBuf>,
    pub semantic: Option<PathBuf>,
    pub semantic_dim: usize,
    pub k_core: usize,
    pub seed: u64,

    pub codebook_size: usize,
    pub code_dim: usize,
    pub levels: usize,
    pub tau_m: f64,
    pub tau_r: f64,
    pub tau_cca: f64,
    pub beta: f64,
    pub lambda_cca: f64,
    pub lambda_arg: f64,
    pub lambda_lb: f64,
    pub lambda_smooth: f64,
    pub head_fraction: f64,
    pub num_bands: usize,

    pub cf_dim: usize,
    pub cf_layers: usize,
    pub cf_heads: usize,
    pub cf_max_len: usize,
    pub cf_epochs: usize,
    pub cf_lr: f64,
    pub cf_batch_size: usize,

    pub rq_hidden: usize,
    pub rq_epochs: usize,
    pub rq_lr: f64,
    pub rq_batch_size: usize,
    pub rq_kmeans_iters: usize,
    pub cca_dim: usize,
    pub cca_symmetric: bool,

    pub router_hidden: usize,
    pub router_lr: f64,
    pub router_warmup: usize,
    pub gen_layers: usize,
    pub gen_heads: usize,
    pub gen_dim: usize,
    pub gen_context_items: usize,
    pub joint_epochs: usize,
    pub joint_lr: f64,
    pub joint_batch_size: usize,

    pub beam_width: usize,
    pub eval_users: usize,

    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            interactions: None,
            semantic: None,
            semantic_dim: 16,
            k_core: 5,
            seed: 0,
            codebook_size: 512,
            code_dim: 64,
            levels: 3,
            tau_m: 0.1,
            tau_r: 1.0,
            tau_cca: 0.1,
            beta: 0.25,
            lambda_cca: 0.1,
            lambda_arg: 1.0,
            lambda_lb: 0.01,
            lambda_smooth: 0.01,
            head_fraction: 0.2,
            num_bands: 4,
            cf_dim: 64,
            cf_layers: 2,
            cf_heads: 2,
            cf_max_len: 50,
            cf_epochs: 10,
            cf_lr: 1e-3,
            cf_batch_size: 64,
            rq_hidden: 128,
            rq_epochs: 20,
            rq_lr: 1e-3,
            rq_batch_size: 256,
            rq_kmeans_iters: 10,
            cca_dim: 32,
            cca_symmetric: false,
            router_hidden: 16,
            router_lr: 1e-3,
            router_warmup: 0,
            gen_layers: 2,
            gen_heads: 4,
            gen_dim: 128,
            gen_context_items: 20,
            joint_epochs: 10,
            joint_lr: 1e-3,
            joint_batch_size: 32,
            beam_width: 20,
            eval_users: 0,
            synth: SynthConfig::default(),
        }
    }
}

trait Value: Sized {
    fn show(&self) -> String;
    fn read(s: &str) -> std::result::Result<Self, String>;
}

macro_rules! parsed_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn show(&self) -> String {
                format!("{self:?}")
            }
            fn read(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
        }
    )*};
}
parsed_value!(usize, u64, f64, bool);

impl Value for Option<PathBuf> {
    fn show(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
    fn read(s: &str) -> std::result::Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }
}

macro_rules! keys {
    ($( $key:literal => $($field:ident).+ , $doc:literal ;)*) => {
        /// `(key, description)` for every config key, in file order.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $doc)),*];

        fn show_key(c: &Config, key: &str) -> Option<String> {
            match key {
                $($key => Some(Value::show(&c.$($field).+)),)*
                _ => None,
            }
        }

        fn set_key(c: &mut Config, key: &str, raw: &str) -> std::result::Result<(), String> {
            match key {
                $($key => c.$($field).+ = Value::read(raw)?,)*
                _ => return Err(format!("unknown key `{key}`")),
            }
            Ok(())
        }
    };
}

keys! {
    "data.interactions" => interactions, "interaction TSV (user, item, timestamp); empty for synthetic data";
    "data.semantic" => semantic, "semantic embedding file; empty for synthetic data";
    "data.semantic_dim" => semantic_dim, "width of the semantic embeddings";
    "data.k_core" => k_core, "minimum interactions per user and item";
    "seed" => seed, "base seed for every random stream";
    "codebook_size" => codebook_size, "codes per level (K)";
    "code_dim" => code_dim, "quantizer latent width (d)";
    "levels" => levels, "token budget per item (L_total); also levels per quantizer";
    "tau_m" => tau_m, "soft mask temperature";
    "tau_r" => tau_r, "router softmax temperature";
    "tau_cca" => tau_cca, "contrastive alignment temperature";
    "beta" => beta, "commitment weight";
    "lambda_cca" => lambda_cca, "alignment loss weight";
    "lambda_arg" => lambda_arg, "generation loss weight";
    "lambda_lb" => lambda_lb, "load balance weight";
    "lambda_smooth" => lambda_smooth, "allocation smoothness weight";
    "head_fraction" => head_fraction, "share of items, by train popularity, counted as head";
    "num_bands" => num_bands, "popularity bands for load balancing";
    "cf.dim" => cf_dim, "collaborative encoder width";
    "cf.layers" => cf_layers, "collaborative encoder blocks";
    "cf.heads" => cf_heads, "collaborative encoder attention heads";
    "cf.max_len" => cf_max_len, "collaborative encoder window, in items";
    "cf.epochs" => cf_epochs, "collaborative encoder epochs";
    "cf.lr" => cf_lr, "collaborative encoder learning rate";
    "cf.batch_size" => cf_batch_size, "collaborative encoder batch, in users";
    "rq.hidden" => rq_hidden, "quantizer MLP hidden width (0 for an identity transform)";
    "rq.epochs" => rq_epochs, "quantizer pre-training epochs";
    "rq.lr" => rq_lr, "quantizer pre-training learning rate";
    "rq.batch_size" => rq_batch_size, "quantizer batch, in items";
    "rq.kmeans_iters" => rq_kmeans_iters, "Lloyd iterations when seeding codebooks";
    "cca.dim" => cca_dim, "shared projection width";
    "cca.symmetric" => cca_symmetric, "average both alignment directions";
    "router.hidden" => router_hidden, "router hidden width";
    "router.lr" => router_lr, "router learning rate in the joint stage";
    "router.warmup" => router_warmup, "joint epochs before the router starts updating";
    "gen.layers" => gen_layers, "generator blocks";
    "gen.heads" => gen_heads, "generator attention heads";
    "gen.dim" => gen_dim, "generator width";
    "gen.context_items" => gen_context_items, "generator context, in items";
    "joint.epochs" => joint_epochs, "joint stage epochs";
    "joint.lr" => joint_lr, "joint stage learning rate";
    "joint.batch_size" => joint_batch_size, "joint stage batch, in users";
    "eval.beam_width" => beam_width, "beam width at evaluation";
    "eval.users" => eval_users, "evaluate only the first N users (0 for all)";
    "synth.num_items" => synth.num_items, "synthetic catalog size";
    "synth.num_users" => synth.num_users, "synthetic user count";
    "synth.zipf_exponent" => synth.zipf_exponent, "synthetic popularity skew";
    "synth.latent_dim" => synth.latent_dim, "synthetic latent width";
    "synth.mixing_weight" => synth.mixing_weight, "weight of taste over noise in tail choices";
    "synth.num_topics" => synth.num_topics, "synthetic taste clusters";
    "synth.head_fraction" => synth.head_fraction, "share of items following the co-occurrence chain";
    "synth.markov_prob" => synth.markov_prob, "probability a head step follows the chain";
    "synth.successors" => synth.successors, "successors per head item";
    "synth.head_semantic_collapse" => synth.head_semantic_collapse, "pull of head latents toward shared prototypes";
    "synth.head_prototypes" => synth.head_prototypes, "shared head prototypes";
    "synth.item_noise" => synth.item_noise, "item spread around its topic";
    "synth.user_noise" => synth.user_noise, "user spread around their topic";
    "synth.niche_fraction" => synth.niche_fraction, "share of users who mostly browse the tail";
    "synth.niche_tail_prob" => synth.niche_tail_prob, "per-step tail probability for those users";
    "synth.min_len" => synth.min_len, "shortest synthetic sequence";
    "synth.max_len" => synth.max_len, "longest synthetic sequence";
}

impl Config {
    pub fn get(&self, key: &str) -> Option<String> {
        show_key(self, key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        set_key(self, key, value.trim()).map_err(Error::Config)
    }

    /// Every key with its description as a comment; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, doc) in KEYS {
            let _ = writeln!(s, "# {doc}\n{key} = {}", show_key(self, key).unwrap_or_default());
        }
        s
    }

    /// Starts from defaults; later lines override earlier ones.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut c = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                msg: "expected `key = value`".into(),
            })?;
            set_key(&mut c, key.trim(), value.trim()).map_err(|msg| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                msg,
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text, &path.display().to_string())
    }

    /// First 16 hex digits of the SHA-256 of [`Config::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("tau_m", self.tau_m),
            ("tau_r", self.tau_r),
            ("tau_cca", self.tau_cca),
            ("beta", self.beta),
            ("lambda_arg", self.lambda_arg),
            ("cf.lr", self.cf_lr),
            ("rq.lr", self.rq_lr),
            ("router.lr", self.router_lr),
            ("joint.lr", self.joint_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("lambda_cca", self.lambda_cca),
            ("lambda_lb", self.lambda_lb),
            ("lambda_smooth", self.lambda_smooth),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.levels < 2 {
            return bad(format!("levels must be at least 2, got {}", self.levels));
        }
        if !(self.head_fraction > 0.0 && self.head_fraction < 1.0) {
            return bad("head_fraction must lie in (0, 1)".into());
        }
        if self.codebook_size < 2 || self.num_bands == 0 || self.beam_width < 10 {
            return bad("need codebook_size ≥ 2, num_bands ≥ 1 and beam_width ≥ 10".into());
        }
        if self.interactions.is_some() != self.semantic.is_some() {
            return bad("data.interactions and data.semantic must be set together".into());
        }
        self.synth.validate()
    }

    pub fn is_synthetic(&self) -> bool {
        self.interactions.is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips() {
        let mut c = Config::default();
        c.interactions = Some("data/x.tsv".into());
        c.semantic = Some("data/s.txt".into());
        c.lambda_cca = 0.3;
        c.synth.zipf_exponent = 1.05;
        c.cca_symmetric = true;
        let back = Config::parse(&c.to_text(), "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(Config::default().hash(), c.hash());
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = Config::default();
        assert_eq!((c.codebook_size, c.code_dim, c.levels), (512, 64, 3));
        assert_eq!((c.lambda_cca, c.lambda_smooth, c.lambda_arg, c.lambda_lb), (0.1, 0.01, 1.0, 0.01));
        assert_eq!((c.tau_m, c.beam_width), (0.1, 20));
        assert_eq!(KEYS.len(), c.to_text().lines().filter(|l| !l.starts_with('#')).count());
    }

    #[test]
    fn comments_overrides_and_errors() {
        let c = Config::parse("# hi\nlevels = 4 # budget\n\nlevels=5\n", "f").unwrap();
        assert_eq!(c.levels, 5);
        let e = Config::parse("levels = 4\nnope = 1\n", "f.cfg").unwrap_err().to_string();
        assert!(e.starts_with("f.cfg:2:"), "{e}");
        assert!(Config::parse("levels = x", "f").is_err());
        assert!(Config::parse("levels = 1", "f").is_err());
        assert!(Config::parse("tau_m = 0", "f").is_err());
        assert!(Config::parse("data.interactions = a.tsv", "f").is_err());
    }
}
