use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::train::{build_joint_modules, build_quant_modules, normalize_rows, JointLosses, QuantLosses, QuantStage};
use super::{CfStage, Prepared, Variant};
use crate::config::Config;
use crate::data::{head_mask, ItemStats};
use crate::embed::parse_embeddings;
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, EvalReport};
use crate::generate::{generate_items, tokenize_item, CodeTrie, Generator, ItemTokenLayout, Scored};
use crate::numerics::checkpoint::{load_into_store, save_store};
use crate::numerics::seeded_rng;
use crate::quantize::{format_codes, ItemCodes};
use crate::route::{format_allocations, Allocation, Router};
use crate::Channel;

/// A trained model with its current item codes, layouts and trie.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub quant: QuantStage,
    pub router: Router,
    pub generator: Generator,
    pub variant: Variant,
    pub config: Config,
    /// Training statistics including embedding uncertainty.
    pub stats: ItemStats,
    pub allocations: Vec<Allocation>,
    pub codes_col: Vec<Vec<usize>>,
    pub codes_sem: Vec<Vec<usize>>,
    pub layouts: Vec<ItemTokenLayout>,
    pub trie: CodeTrie,
    pub joint_losses: Vec<JointLosses>,
    pub item_ids: Vec<String>,
}

const CHECKPOINT: &str = "model.ckpt";
const CF_TABLE: &str = "cf_embeddings.txt";
const UNCERTAINTY: &str = "uncertainty.tsv";

impl Bundle {
    /// Adds router and generator to the stage two store and builds layouts.
    pub(super) fn assemble(
        mut quant: QuantStage,
        prepared: &Prepared,
        config: &Config,
        variant: Variant,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (router, generator) = build_joint_modules(&mut quant.store, config, rng)?;
        let stats = quant.cf.stats.clone();
        let n = prepared.dataset.num_items();
        let placeholder = vec![ItemTokenLayout { tokens: vec![crate::generate::NULL; config.levels] }];
        let mut b = Bundle {
            quant,
            router,
            generator,
            variant,
            config: config.clone(),
            stats,
            allocations: Vec::with_capacity(n),
            codes_col: Vec::new(),
            codes_sem: Vec::new(),
            layouts: Vec::new(),
            trie: CodeTrie::build(&placeholder, &[0])?,
            joint_losses: Vec::new(),
            item_ids: prepared.dataset.item_ids.clone(),
        };
        b.refresh()?;
        Ok(b)
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Routing ratio of every item: forced by the variant or from the router.
    pub fn alphas(&self) -> Vec<f64> {
        match self.variant.forced_alpha() {
            Some(a) => vec![a; self.num_items()],
            None => self.router.route_items(&self.quant.store, &self.stats),
        }
    }

    /// Recomputes allocations, codes, layouts and the trie from the current parameters.
    pub fn refresh(&mut self) -> Result<()> {
        let l = self.config.levels;
        self.allocations = self
            .alphas()
            .into_iter()
            .map(|a| Allocation::from_alpha(a, l, self.config.tau_m))
            .collect();
        let q = &self.quant;
        self.codes_col = q.col_rq.encode_all(&q.store, &q.col_input)?;
        self.codes_sem = q.sem_rq.encode_all(&q.store, &q.sem_input)?;
        self.layouts = (0..self.num_items())
            .map(|i| {
                let a = &self.allocations[i];
                tokenize_item(&self.codes_col[i], &self.codes_sem[i], (a.l_col, a.l_sem), &self.generator.vocab)
            })
            .collect::<Result<_>>()?;
        self.trie = CodeTrie::build(&self.layouts, &self.stats.rank)?;
        Ok(())
    }

    /// Top `k` items after `history` with the configured beam width.
    pub fn recommend(&self, history: &[usize], k: usize) -> Result<Vec<Scored<usize>>> {
        let layouts: Vec<&ItemTokenLayout> = history.iter().map(|&i| &self.layouts[i]).collect();
        let width = self.config.beam_width.max(k);
        Ok(generate_items(&self.generator, &self.quant.store, &layouts, &self.trie, width, k)?.items)
    }

    fn fingerprint(&self, seed: u64) -> String {
        fingerprint(&self.config, self.variant, seed)
    }

    /// Writes the checkpoint and the side files needed to rebuild the bundle.
    pub fn save(&self, dir: impl AsRef<Path>, seed: u64) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_store(dir.join(CHECKPOINT), &self.fingerprint(seed), &self.quant.store)?;
        self.quant.cf.table.write(dir.join(CF_TABLE))?;
        let mut unc = String::new();
        for (id, u) in self.item_ids.iter().zip(&self.stats.uncertainty) {
            let _ = writeln!(unc, "{id}\t{u:?}");
        }
        let k = self.config.codebook_size;
        let col = ItemCodes::new(Channel::Collaborative, k, self.codes_col.clone())?;
        let sem = ItemCodes::new(Channel::Semantic, k, self.codes_sem.clone())?;
        let files = [
            (UNCERTAINTY, unc),
            ("allocations.tsv", format_allocations(&self.item_ids, &self.allocations)),
            ("codes_col.tsv", format_codes(&self.item_ids, &col)?),
            ("codes_sem.tsv", format_codes(&self.item_ids, &sem)?),
            ("losses.tsv", self.loss_table()),
        ];
        for (name, text) in files {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Rebuilds a saved bundle; the checkpoint must carry this config's hash.
    pub fn load(dir: impl AsRef<Path>, prepared: &Prepared, config: &Config, variant: Variant, seed: u64) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let cf_path = dir.join(CF_TABLE);
        let table = parse_embeddings(&read(CF_TABLE)?, &cf_path.display().to_string(), config.cf_dim, Channel::Collaborative)?;
        let table = crate::embed::EmbeddingTable::new(Channel::Collaborative, prepared.dataset.item_ids.clone(), table.aligned(&prepared.dataset.item_ids)?)?;
        let mut stats = prepared.stats.clone();
        for (n, line) in read(UNCERTAINTY)?.lines().enumerate() {
            let parse_err = || Error::Parse {
                path: dir.join(UNCERTAINTY).display().to_string(),
                line: n + 1,
                msg: "expected item_id<TAB>value".into(),
            };
            let (id, v) = line.split_once('\t').ok_or_else(parse_err)?;
            let i = prepared.dataset.item_index(id).ok_or_else(|| Error::Lookup { kind: "item", id: id.to_string() })?;
            stats.uncertainty[i] = v.parse().map_err(|_| parse_err())?;
        }
        let col_input = normalize_rows(table.vectors());
        let sem_input = normalize_rows(prepared.semantic.vectors());
        let mut rng = seeded_rng(seed, 0x51);
        let (store, col_rq, sem_rq, col_head, sem_head) = build_quant_modules(config, col_input.cols(), sem_input.cols(), &mut rng)?;
        let quant = QuantStage {
            store,
            col_rq,
            sem_rq,
            col_head,
            sem_head,
            col_input,
            sem_input,
            cf: CfStage {
                table,
                losses: Vec::new(),
                stats,
            },
            lambda_cca: if variant.uses_alignment() { config.lambda_cca } else { 0.0 },
            losses: Vec::<QuantLosses>::new(),
        };
        let mut b = Bundle::assemble(quant, prepared, config, variant, &mut seeded_rng(seed, 0x53))?;
        load_into_store(dir.join(CHECKPOINT), &b.fingerprint(seed), &mut b.quant.store)?;
        b.refresh()?;
        Ok(b)
    }

    /// `stage<TAB>epoch<TAB>term<TAB>value` lines for every recorded loss.
    pub fn loss_table(&self) -> String {
        let mut s = String::new();
        for (e, l) in self.quant.cf.losses.iter().enumerate() {
            let _ = writeln!(s, "cf\t{e}\tnext_item\t{l:?}");
        }
        for (e, l) in self.quant.losses.iter().enumerate() {
            for (k, v) in [("scl", l.scl), ("ccl", l.ccl), ("cca", l.cca), ("total", l.total)] {
                let _ = writeln!(s, "quantize\t{e}\t{k}\t{v:?}");
            }
        }
        for (e, l) in self.joint_losses.iter().enumerate() {
            for (k, v) in [
                ("scl", l.scl),
                ("ccl", l.ccl),
                ("cca", l.cca),
                ("arg", l.arg),
                ("lb", l.lb),
                ("smooth", l.smooth),
                ("total", l.total),
            ] {
                let _ = writeln!(s, "joint\t{e}\t{k}\t{v:?}");
            }
        }
        s
    }
}

pub(super) fn fingerprint(config: &Config, variant: Variant, seed: u64) -> String {
    format!("{}/{variant}/{seed}", config.hash())
}

/// Report plus the ranked lists behind it.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    /// `user_id<TAB>rank<TAB>item_id<TAB>score` lines.
    pub recommendations: String,
}

/// Leave-last-out evaluation at `K ∈ {5, 10}` over the configured users.
pub fn evaluate(bundle: &Bundle, prepared: &Prepared, seed: u64) -> Result<Evaluation> {
    let config = &bundle.config;
    let ds = &prepared.dataset;
    let n_users = match config.eval_users {
        0 => ds.num_users(),
        n => n.min(ds.num_users()),
    };
    let users: Vec<usize> = (0..n_users).collect();
    let head = head_mask(&prepared.stats, config.head_fraction)?;
    let ks = [5, 10];
    let mut recs = String::new();
    let records = evaluate_with(ds, &users, &head, 10, |u, history| {
        let out = bundle.recommend(history, 10)?;
        for (r, s) in out.iter().enumerate() {
            let _ = writeln!(recs, "{}\t{}\t{}\t{:?}", ds.user_ids[u], r + 1, ds.item_ids[s.value], s.score);
        }
        Ok(out.into_iter().map(|s| s.value).collect())
    })?;
    Ok(Evaluation {
        report: EvalReport::from_records(bundle.variant.as_str(), seed, &config.hash(), &ks, records)?,
        recommendations: recs,
    })
}
