use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
data.k_core = 1
codebook_size = 8
code_dim = 8
levels = 3
cf.dim = 8
cf.layers = 1
cf.heads = 2
cf.max_len = 10
cf.epochs = 2
cf.batch_size = 16
rq.hidden = 16
rq.epochs = 2
rq.batch_size = 32
cca.dim = 4
gen.layers = 1
gen.heads = 2
gen.dim = 8
gen.context_items = 5
joint.epochs = 1
joint.batch_size = 16
eval.beam_width = 10
eval.users = 20
synth.num_items = 80
synth.num_users = 40
synth.latent_dim = 6
synth.min_len = 4
synth.max_len = 8
";

fn dualtok(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualtok")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dualtok(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn config_in(dir: &Path, extra: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p.display().to_string()
}

#[test]
fn prepare_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "");
    let out = dir.path().join("prep").display().to_string();
    ok(&["prepare", "--synth", "--config", &cfg, "--seed", "3", "--out", &out]);
    let first = fs::read_to_string(dir.path().join("prep/manifest.json")).unwrap();
    ok(&["prepare", "--synth", "--config", &cfg, "--seed", "3", "--out", &out]);
    let second = fs::read_to_string(dir.path().join("prep/manifest.json")).unwrap();
    assert_eq!(first, second);
    for f in ["split.tsv", "item_stats.tsv", "interactions.tsv", "semantic.txt", "config.txt"] {
        assert!(first.contains(f), "{f} missing from manifest");
    }
}

#[test]
fn missing_input_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "data.interactions = /no/such/log.tsv\ndata.semantic = /no/such/sem.txt\n");
    let out = dualtok(&["prepare", "--config", &cfg, "--out", &dir.path().join("o").display().to_string()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/log.tsv"));
}

#[test]
fn synth_files_feed_prepare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "");
    let world = dir.path().join("world");
    ok(&["synth", "--config", &cfg, "--seed", "5", "--out", &world.display().to_string()]);
    let cfg2 = config_in(
        dir.path(),
        &format!(
            "data.interactions = {}\ndata.semantic = {}\ndata.semantic_dim = 6\n",
            world.join("interactions.tsv").display(),
            world.join("semantic.txt").display()
        ),
    );
    let stdout = ok(&["prepare", "--config", &cfg2, "--out", &dir.path().join("p").display().to_string()]);
    assert!(stdout.starts_with("users 40 "), "{stdout}");
}

#[test]
fn train_eval_and_stale_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "");
    let out = dir.path().join("run").display().to_string();
    ok(&["train", "--config", &cfg, "--seed", "1", "--variant", "fixed_split", "--out", &out]);
    let text = ok(&["eval", "--config", &cfg, "--seed", "1", "--variant", "fixed_split", "--out", &out]);
    assert!(text.starts_with("label = fixed_split\n"), "{text}");
    let saved = fs::read_to_string(dir.path().join("run/fixed_split/metrics.txt")).unwrap();
    assert_eq!(saved, text);
    assert!(dir.path().join("run/fixed_split/recommendations.tsv").exists());
    assert!(dir.path().join("run/fixed_split/metrics.json").exists());

    let changed = config_in(dir.path(), "lambda_lb = 0.5\n");
    let stale = dualtok(&["eval", "--config", &changed, "--seed", "1", "--variant", "fixed_split", "--out", &out]);
    assert!(!stale.status.success());
    assert!(String::from_utf8_lossy(&stale.stderr).contains("hash mismatch"), "{}", String::from_utf8_lossy(&stale.stderr));
}

#[test]
fn sweep_has_one_column_per_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "joint.epochs = 0\n");
    let out = dir.path().join("s").display().to_string();
    let text = ok(&["eval", "--config", &cfg, "--sweep", "3,4,5,6", "--out", &out]);
    let header = text.lines().next().unwrap();
    assert_eq!(header, "variant\tL=3\tL=4\tL=5\tL=6");
    assert_eq!(text.lines().nth(1).unwrap().split('\t').count(), 5);
}

#[test]
fn unknown_variant_is_rejected() {
    let out = dualtok(&["train", "--variant", "bogus"]);
    assert!(!out.status.success());
}
