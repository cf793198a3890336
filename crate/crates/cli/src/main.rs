use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualtok::data::{synth_longtail, write_interactions};
use dualtok::eval::{budget_sweep, EvalReport};
use dualtok::pipeline::{evaluate, prepare, train, Bundle, Prepared, RunManifest};
use dualtok::{Channel, Config, Variant};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] dualtok::Error),
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "dualtok", version, about = "Dual-codebook generative recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter, split and profile the interaction log.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Generate the synthetic long-tail world instead of reading files.
        #[arg(long)]
        synth: bool,
    },
    /// Train one variant and save its bundle under `OUT/VARIANT`.
    Train(Common),
    /// Evaluate a saved bundle, or run a budget sweep with `--sweep`.
    Eval(Common),
    /// Train and evaluate every variant (or just `--variant`).
    Ablate(Common),
    /// NDCG@10 per variant across token budgets.
    Sweep(Common),
    /// Write a synthetic interaction log and its semantic vectors.
    Synth(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Comma-separated token budgets, e.g. `3,4,5,6`.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }

    fn variant(&self) -> Variant {
        self.variant.unwrap_or(Variant::Full)
    }

    fn out(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| dualtok::Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| dualtok::Error::io(&p, e))?;
    Ok(())
}

/// Writes `files` under `dir` and records them in the run manifest.
fn publish(dir: &Path, config: &Config, stage: &str, files: &[(&str, String)]) -> Result<()> {
    let mut m = RunManifest::open(dir, &config.hash(), config.seed)?;
    write(dir, "config.txt", &config.to_text())?;
    m.record(dir, "config", "config.txt")?;
    for (name, text) in files {
        write(dir, name, text)?;
        m.record(dir, stage, *name)?;
    }
    m.write(dir)?;
    Ok(())
}

fn report_files(prefix: &str, report: &EvalReport, prepared: &Prepared) -> Vec<(String, String)> {
    vec![
        (format!("{prefix}metrics.txt"), report.to_text()),
        (format!("{prefix}metrics.json"), report.to_json()),
        (format!("{prefix}hits.tsv"), report.hits_tsv(&prepared.dataset)),
    ]
}

fn summary_line(report: &EvalReport) -> String {
    let m = |n: &str| report.metric(n).map_or(0.0, |r| r.overall);
    let t = report.metric("ndcg@10");
    format!(
        "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        report.label,
        m("recall@5"),
        m("recall@10"),
        m("ndcg@5"),
        m("ndcg@10"),
        t.map_or(0.0, |r| r.head),
        t.map_or(0.0, |r| r.tail)
    )
}

const SUMMARY_HEADER: &str = "variant\trecall@5\trecall@10\tndcg@5\tndcg@10\tndcg@10.head\tndcg@10.tail";

fn cmd_prepare(common: &Common, synth: bool) -> Result<()> {
    let mut config = common.config()?;
    if synth {
        config.interactions = None;
        config.semantic = None;
    }
    let out = common.out()?;
    let prepared = prepare(&config)?;
    let mut files = vec![
        ("split.tsv", prepared.dataset.split_manifest()?),
        ("item_stats.tsv", prepared.stats_tsv()),
    ];
    if config.is_synthetic() {
        files.push(("interactions.tsv", dualtok::data::format_interactions(&prepared.interactions)));
        files.push(("semantic.txt", prepared.semantic.to_text()));
    }
    publish(out, &config, "prepare", &files)?;
    println!(
        "users {} items {} interactions {} dropped_users {}",
        prepared.dataset.num_users(),
        prepared.dataset.num_items(),
        prepared.dataset.num_interactions(),
        prepared.dropped_users
    );
    Ok(())
}

fn cmd_synth(common: &Common) -> Result<()> {
    let config = common.config()?;
    let out = common.out()?;
    let world = synth_longtail(&config.synth, config.seed)?;
    let ids = world.dataset.item_ids.clone();
    let table = dualtok::embed::EmbeddingTable::new(Channel::Semantic, ids, world.semantic)?;
    write_interactions(out.join("interactions.tsv"), &world.interactions)?;
    table.write(out.join("semantic.txt"))?;
    let mut m = RunManifest::open(out, &config.hash(), config.seed)?;
    m.record(out, "synth", "interactions.tsv")?;
    m.record(out, "synth", "semantic.txt")?;
    m.write(out)?;
    println!("interactions {} items {}", world.interactions.len(), table.len());
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let config = common.config()?;
    let variant = common.variant();
    let out = common.out()?;
    let prepared = prepare(&config)?;
    let bundle = train(&prepared, &config, variant, config.seed)?;
    let dir = out.join(variant.as_str());
    bundle.save(&dir, config.seed)?;
    let mut m = RunManifest::open(out, &config.hash(), config.seed)?;
    write(out, "config.txt", &config.to_text())?;
    m.record(out, "config", "config.txt")?;
    for name in ["model.ckpt", "cf_embeddings.txt", "uncertainty.tsv", "allocations.tsv", "codes_col.tsv", "codes_sem.tsv", "losses.tsv"] {
        m.record(out, "train", Path::new(variant.as_str()).join(name))?;
    }
    m.write(out)?;
    let last = bundle.joint_losses.last().map_or(f64::NAN, |l| l.total);
    println!("trained {variant}: joint loss {last:.6}, saved to {}", dir.display());
    Ok(())
}

fn cmd_eval(common: &Common) -> Result<()> {
    if common.sweep.is_some() {
        return cmd_sweep(common);
    }
    let config = common.config()?;
    let variant = common.variant();
    let out = common.out()?;
    let prepared = prepare(&config)?;
    let dir = out.join(variant.as_str());
    let bundle = Bundle::load(&dir, &prepared, &config, variant, config.seed)?;
    let ev = evaluate(&bundle, &prepared, config.seed)?;
    let prefix = format!("{variant}/");
    let mut files = report_files(&prefix, &ev.report, &prepared);
    files.push((format!("{prefix}recommendations.tsv"), ev.recommendations));
    let refs: Vec<(&str, String)> = files.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    publish(out, &config, "eval", &refs)?;
    print!("{}", ev.report.to_text());
    Ok(())
}

fn cmd_ablate(common: &Common) -> Result<()> {
    let config = common.config()?;
    let out = common.out()?;
    let prepared = prepare(&config)?;
    let variants = match common.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let mut table = format!("{SUMMARY_HEADER}\n");
    let mut files = Vec::new();
    for v in variants {
        let bundle = train(&prepared, &config, v, config.seed)?;
        let report = evaluate(&bundle, &prepared, config.seed)?.report;
        let _ = writeln!(table, "{}", summary_line(&report));
        println!("{}", summary_line(&report));
        files.extend(report_files(&format!("ablation/{v}."), &report, &prepared));
    }
    fs::create_dir_all(out.join("ablation")).map_err(|e| dualtok::Error::io(out.join("ablation"), e))?;
    files.push(("ablation.tsv".to_string(), table));
    let refs: Vec<(&str, String)> = files.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    publish(out, &config, "ablate", &refs)
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let config = common.config()?;
    let out = common.out()?;
    let levels = common.sweep.clone().unwrap_or_else(|| vec![3, 4, 5, 6]);
    if levels.is_empty() {
        return Err(CliError::Usage("--sweep needs at least one budget".into()));
    }
    let prepared = prepare(&config)?;
    let table = budget_sweep(&prepared, &config, &levels, &[common.variant()], config.seed)?;
    let text = table.to_text();
    print!("{text}");
    publish(out, &config, "sweep", &[("sweep.tsv", text)])
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare { common, synth } => cmd_prepare(common, *synth),
        Command::Train(c) => cmd_train(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Ablate(c) => cmd_ablate(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Synth(c) => cmd_synth(c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
