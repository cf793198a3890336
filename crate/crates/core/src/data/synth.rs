use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{compute_item_stats, leave_last_out_split, Interaction, ItemStats, SequenceDataset};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Tensor};

/// Knobs for the synthetic long-tail world.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_items: usize,
    pub num_users: usize,
    pub zipf_exponent: f64,
    pub latent_dim: usize,
    /// Weight of semantic similarity (vs. random noise) in tail choices.
    pub mixing_weight: f64,
    pub num_topics: usize,
    /// Share of items, by popularity, that follow the co-occurrence chain.
    pub head_fraction: f64,
    /// Probability that a head step follows the previous head item's successor list.
    pub markov_prob: f64,
    pub successors: usize,
    /// Pulls head latents toward a few shared prototypes, in `[0, 1]`.
    pub head_semantic_collapse: f64,
    pub head_prototypes: usize,
    /// Spread of item latents around their topic center.
    pub item_noise: f64,
    /// Spread of user preferences around their topic center.
    pub user_noise: f64,
    /// Share of users who mostly browse the tail.
    pub niche_fraction: f64,
    /// Per-step probability that a niche user makes a tail choice.
    pub niche_tail_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_items: 2000,
            num_users: 1000,
            zipf_exponent: 1.2,
            latent_dim: 16,
            mixing_weight: 0.9,
            num_topics: 16,
            head_fraction: 0.2,
            markov_prob: 0.8,
            successors: 3,
            head_semantic_collapse: 0.8,
            head_prototypes: 4,
            item_noise: 0.35,
            user_noise: 0.2,
            niche_fraction: 0.0,
            niche_tail_prob: 0.9,
            min_len: 8,
            max_len: 24,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic config: {m}")));
        if self.num_items < 4 || self.num_users < 1 || self.latent_dim < 1 {
            return bad("need at least 4 items, 1 user and a positive latent dimension");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf exponent must be finite and non-negative");
        }
        for (name, v) in [
            ("mixing_weight", self.mixing_weight),
            ("markov_prob", self.markov_prob),
            ("head_semantic_collapse", self.head_semantic_collapse),
            ("niche_fraction", self.niche_fraction),
            ("niche_tail_prob", self.niche_tail_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.head_fraction > 0.0 && self.head_fraction < 1.0) {
            return bad("head_fraction must lie in (0, 1)");
        }
        if self.num_topics == 0 || self.head_prototypes == 0 || self.successors == 0 {
            return bad("topic, prototype and successor counts must be positive");
        }
        if self.item_noise < 0.0 || self.user_noise < 0.0 {
            return bad("noise scales must be non-negative");
        }
        if self.min_len < 3 || self.max_len < self.min_len {
            return bad("sequence lengths need 3 <= min_len <= max_len");
        }
        Ok(())
    }

    fn num_head(&self) -> usize {
        ((self.head_fraction * self.num_items as f64).ceil() as usize).clamp(1, self.num_items - 1)
    }
}

/// Generated world: raw rows, the split dataset built from them, and the
/// latent vectors that stand in for content embeddings.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub interactions: Vec<Interaction>,
    pub dataset: SequenceDataset,
    /// `[num_items, latent_dim]`, rows in `dataset` item order.
    pub semantic: Tensor,
    pub stats: ItemStats,
    /// Per generated item (by generator index): whether it follows the co-occurrence chain.
    pub behavioral_head: Vec<bool>,
    pub user_preferences: Tensor,
    pub item_latents: Tensor,
}

pub fn item_name(i: usize) -> String {
    format!("i{i:05}")
}

pub fn user_name(u: usize) -> String {
    format!("u{u:05}")
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    crate::numerics::tensor::dot(a, b) / (na * nb).max(1e-12)
}

/// Tail choice: the unconsumed tail item maximizing `w·cos(latent, pref) + (1−w)·noise`,
/// ties to the lower index. With `w = 1` this is the nearest semantic neighbor.
pub fn tail_choice(
    latents: &Tensor,
    pref: &[f64],
    candidates: &[usize],
    consumed: &[bool],
    w: f64,
    rng: &mut impl Rng,
) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &j in candidates {
        if consumed[j] {
            continue;
        }
        let noise = if w < 1.0 { rng.random::<f64>() * 2.0 - 1.0 } else { 0.0 };
        let score = w * cosine(latents.row(j), pref) + (1.0 - w) * noise;
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, j));
        }
    }
    best.map(|(_, j)| j)
}

/// Builds a deterministic long-tail interaction log.
///
/// Item `k` has Zipf weight `(k+1)^-s`. Each step draws an item from that
/// distribution; a head draw either follows the previous head item's fixed
/// successor list (probability `markov_prob`) or is taken as-is, while a tail
/// draw is replaced by [`tail_choice`] against the user's preference vector.
/// Niche users turn a head draw into a tail choice with probability
/// `niche_tail_prob`.
pub fn synth_longtail(config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    config.validate()?;
    let n = config.num_items;
    let d = config.latent_dim;
    let mut rng = seeded_rng(seed, 0x5EED);
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut topics = Vec::with_capacity(config.num_topics);
    for _ in 0..config.num_topics {
        let mut c: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        unit(&mut c);
        topics.push(c);
    }
    let mut prototypes = Vec::with_capacity(config.head_prototypes);
    for _ in 0..config.head_prototypes {
        let mut c: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        unit(&mut c);
        prototypes.push(c);
    }
    let num_head = config.num_head();
    let mut latents = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let t = rng.random_range(0..config.num_topics);
        let mut v: Vec<f64> = (0..d)
            .map(|c| topics[t][c] + config.item_noise * normal(&mut rng) / (d as f64).sqrt())
            .collect();
        if i < num_head {
            let p = &prototypes[i % config.head_prototypes];
            let jitter: Vec<f64> = (0..d).map(|_| 0.05 * normal(&mut rng) / (d as f64).sqrt()).collect();
            let c = config.head_semantic_collapse;
            for k in 0..d {
                v[k] = (1.0 - c) * v[k] + c * (p[k] + jitter[k]);
            }
        }
        latents.row_mut(i).copy_from_slice(&v);
    }

    let mut prefs = Tensor::zeros(&[config.num_users, d]);
    for u in 0..config.num_users {
        let t = rng.random_range(0..config.num_topics);
        for k in 0..d {
            prefs.row_mut(u)[k] = topics[t][k] + config.user_noise * normal(&mut rng) / (d as f64).sqrt();
        }
    }

    let head: Vec<usize> = (0..num_head).collect();
    let tail: Vec<usize> = (num_head..n).collect();
    let successors: Vec<Vec<usize>> = (0..num_head)
        .map(|h| {
            let mut pool: Vec<usize> = head.iter().copied().filter(|&x| x != h).collect();
            pool.shuffle(&mut rng);
            pool.truncate(config.successors.min(pool.len().max(1)));
            if pool.is_empty() {
                pool.push(h);
            }
            pool
        })
        .collect();
    let weights: Vec<f64> = (0..n).map(|k| ((k + 1) as f64).powf(-config.zipf_exponent)).collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("zipf weights: {e}")))?;

    let mut interactions = Vec::new();
    let mut consumed = vec![false; n];
    for u in 0..config.num_users {
        let len = rng.random_range(config.min_len..=config.max_len);
        let niche = rng.random::<f64>() < config.niche_fraction;
        consumed.iter_mut().for_each(|c| *c = false);
        let mut prev: Option<usize> = None;
        for step in 0..len {
            let mut draw = zipf.sample(&mut rng);
            if niche && draw < num_head && rng.random::<f64>() < config.niche_tail_prob {
                draw = num_head;
            }
            let item = if draw < num_head {
                match prev {
                    Some(p) if p < num_head && rng.random::<f64>() < config.markov_prob => {
                        let s = &successors[p];
                        s[rng.random_range(0..s.len())]
                    }
                    _ => draw,
                }
            } else {
                tail_choice(&latents, prefs.row(u), &tail, &consumed, config.mixing_weight, &mut rng)
                    .unwrap_or(draw)
            };
            consumed[item] = true;
            prev = Some(item);
            let timestamp = (step * config.num_users + u) as i64;
            interactions.push(Interaction::new(user_name(u), item_name(item), timestamp));
        }
    }

    let dataset = leave_last_out_split(&SequenceDataset::from_interactions(&interactions)?).dataset;
    let mut semantic = Tensor::zeros(&[dataset.num_items(), d]);
    let mut behavioral_head = vec![false; n];
    behavioral_head[..num_head].iter_mut().for_each(|h| *h = true);
    for (row, id) in dataset.item_ids.iter().enumerate() {
        let g: usize = id[1..].parse().map_err(|_| Error::Contract(format!("bad synthetic id {id}")))?;
        semantic.row_mut(row).copy_from_slice(latents.row(g));
    }
    let stats = compute_item_stats(&dataset, None, 4)?;
    Ok(SynthOutput {
        interactions,
        dataset,
        semantic,
        stats,
        behavioral_head,
        user_preferences: prefs,
        item_latents: latents,
    })
}
