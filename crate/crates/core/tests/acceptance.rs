//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1-7 and 11 are exact properties and gate the exit status.
//! Criteria 8-10 are directional experiments on synthetic data; their lines
//! are reported as measured but do not change the exit status.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use dualtok::align::{cca_loss, info_nce, CcaConfig, ProjectionHead};
use dualtok::eval::{ndcg_at_k, recall_at_k};
use dualtok::generate::{generate_items, mask_table, tokenize_item, Generator, GeneratorConfig, ItemTokenLayout, TokenVocab};
use dualtok::numerics::{grad_check, seeded_rng, GradCheckReport, Graph, NodeId, ParamStore, Tensor};
use dualtok::pipeline::{evaluate, prepare, stage_cf, stage_joint, stage_quantize, Bundle, CfStage, Prepared, QuantStage};
use dualtok::quantize::{train_rqvae, RqVae, RqVaeConfig, Transform};
use dualtok::route::{
    baseline_allocate, hard_allocate, load_balance_loss, load_balance_value, smoothness_loss, smoothness_value,
    soft_masks, Allocation, Router, RouterConfig,
};
use dualtok::{Channel, Config, EvalReport, Variant};

const EXPERIMENT_CONFIG: &str = include_str!("../../../configs/synthetic.cfg");
const SEEDS: [u64; 3] = [0, 1, 2];
const BUDGETS: [usize; 4] = [3, 4, 5, 6];

struct Line {
    id: usize,
    pass: bool,
    gating: bool,
    detail: String,
}

fn line(id: usize, pass: bool, detail: String) -> Line {
    Line {
        id,
        pass,
        gating: true,
        detail,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

// ---------------------------------------------------------------- criterion 1

/// Every module of the joint objective on one small random instance.
struct Instance {
    sem_rq: RqVae,
    col_rq: RqVae,
    sem_head: ProjectionHead,
    col_head: ProjectionHead,
    router: Router,
    generator: Generator,
    xs: Tensor,
    xc: Tensor,
    features: Tensor,
    bands: Vec<usize>,
    counts: Vec<usize>,
    layouts: Vec<ItemTokenLayout>,
    windows: Vec<Vec<usize>>,
}

// Central differences in f64 balance truncation and roundoff near u^(1/3);
// at 1e-6 roundoff alone reaches 1e-5 relative on the composite's small entries.
const EPSILON: f64 = 1e-5;
const GC_LEVELS: usize = 3;
const GC_TAU_M: f64 = 0.5;

impl Instance {
    fn new() -> (Self, ParamStore) {
        let mut rng = seeded_rng(1, 1);
        let mut store = ParamStore::new();
        let n = 6;
        let rq = |levels| RqVaeConfig {
            codebook_size: 8,
            levels,
            code_dim: 4,
            transform: Transform::Mlp { hidden: 8 },
            ..RqVaeConfig::default()
        };
        let sem_rq = RqVae::new(&mut store, Channel::Semantic, 7, &rq(GC_LEVELS), &mut rng).unwrap();
        let col_rq = RqVae::new(&mut store, Channel::Collaborative, 5, &rq(GC_LEVELS), &mut rng).unwrap();
        let sem_head = ProjectionHead::new(&mut store, "align.sem", 7, 4, &mut rng).unwrap();
        let col_head = ProjectionHead::new(&mut store, "align.col", 5, 4, &mut rng).unwrap();
        let router = Router::new(&mut store, RouterConfig::default(), &mut rng).unwrap();
        let vocab = TokenVocab::new(GC_LEVELS, 8).unwrap();
        let generator = Generator::new(
            &mut store,
            vocab.clone(),
            GeneratorConfig {
                layers: 1,
                heads: 2,
                dim: 8,
                context_items: 4,
            },
            &mut rng,
        )
        .unwrap();
        let layouts = (0..n)
            .map(|i| {
                let col: Vec<usize> = (0..GC_LEVELS).map(|_| rng.random_range(0..8)).collect();
                let sem: Vec<usize> = (0..GC_LEVELS).map(|_| rng.random_range(0..8)).collect();
                let a = Allocation::from_alpha(i as f64 / (n - 1) as f64, GC_LEVELS, GC_TAU_M);
                tokenize_item(&col, &sem, (a.l_col, a.l_sem), &vocab).unwrap()
            })
            .collect();
        let inst = Instance {
            xs: Tensor::randn(&[n, 7], 1.0, &mut rng),
            xc: Tensor::randn(&[n, 5], 1.0, &mut rng),
            features: Tensor::randn(&[n, 4], 1.0, &mut rng),
            bands: vec![0, 1, 0, 2, 1, 2],
            counts: vec![9, 4, 7, 1, 3, 0],
            layouts,
            windows: vec![vec![0, 3, 1, 5], vec![2, 4, 0]],
            sem_rq,
            col_rq,
            sem_head,
            col_head,
            router,
            generator,
        };
        (inst, store)
    }

    fn scl(&self, g: &mut Graph, s: &ParamStore) -> NodeId {
        let x = g.constant(self.xs.clone());
        self.sem_rq.forward(g, s, x).total
    }

    fn ccl(&self, g: &mut Graph, s: &ParamStore) -> NodeId {
        let x = g.constant(self.xc.clone());
        self.col_rq.forward(g, s, x).total
    }

    fn cca(&self, g: &mut Graph, s: &ParamStore) -> NodeId {
        let xs = g.constant(self.xs.clone());
        let xc = g.constant(self.xc.clone());
        let fs = self.sem_rq.forward(g, s, xs);
        let fc = self.col_rq.forward(g, s, xc);
        let cfg = CcaConfig::default();
        cca_loss(g, s, fs.reconstruction, fc.reconstruction, &self.sem_head, &self.col_head, &cfg).unwrap()
    }

    fn alpha(&self, g: &mut Graph, s: &ParamStore) -> NodeId {
        let f = g.constant(self.features.clone());
        self.router.forward(g, s, f)
    }

    fn arg(&self, g: &mut Graph, s: &ParamStore) -> NodeId {
        let a = self.alpha(g, s);
        let masks = mask_table(g, a, GC_LEVELS, GC_TAU_M);
        let w: Vec<&[usize]> = self.windows.iter().map(Vec::as_slice).collect();
        self.generator.arg_loss(g, s, &w, &self.layouts, Some(masks)).expect("windows have targets")
    }

    fn lb(&self, g: &mut Graph, s: &ParamStore) -> NodeId {
        let a = self.alpha(g, s);
        load_balance_loss(g, a, &self.bands).unwrap()
    }

    fn smooth(&self, g: &mut Graph, s: &ParamStore) -> NodeId {
        let a = self.alpha(g, s);
        smoothness_loss(g, a, &self.counts).unwrap()
    }

    fn total(&self, g: &mut Graph, s: &ParamStore) -> NodeId {
        let c = Config::default();
        let mut t = self.scl(g, s);
        let terms = [
            (self.ccl(g, s), 1.0),
            (self.cca(g, s), c.lambda_cca),
            (self.arg(g, s), c.lambda_arg),
            (self.lb(g, s), c.lambda_lb),
            (self.smooth(g, s), c.lambda_smooth),
        ];
        for (node, w) in terms {
            let scaled = g.scale(node, w);
            t = g.add(t, scaled);
        }
        t
    }
}

fn criterion_1() -> Line {
    let start = Instant::now();
    let (inst, mut store) = Instance::new();
    type Term = fn(&Instance, &mut Graph, &ParamStore) -> NodeId;
    let terms: [(&str, Term); 7] = [
        ("SCL", Instance::scl),
        ("CCL", Instance::ccl),
        ("CCA", Instance::cca),
        ("ARG", Instance::arg),
        ("lb", Instance::lb),
        ("smooth", Instance::smooth),
        ("total", Instance::total),
    ];
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for (name, f) in terms {
        let report: GradCheckReport = grad_check(|g, s| Ok(f(&inst, g, s)), &mut store, EPSILON, 1e-5).unwrap();
        worst = worst.max(report.max_rel_error());
        if !report.passed() {
            failed.push(name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    line(
        1,
        failed.is_empty() && secs < 60.0,
        format!("gradient integrity: 7 terms, max rel error {worst:.2e} (eps 1e-5, tol 1e-5, f64), failed {failed:?}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Line {
    let mut rng = seeded_rng(2, 2);
    let centers = [[3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 3.0], [-3.0, -3.0, 0.0]];
    let per = 100;
    let mut rows = Vec::new();
    for _ in 0..per {
        for c in &centers {
            rows.extend(c.iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)));
        }
    }
    let data = Tensor::matrix(4 * per, 3, rows).unwrap();
    let cfg = |levels| RqVaeConfig {
        codebook_size: 4,
        levels,
        code_dim: 3,
        transform: Transform::Identity,
        epochs: 5,
        batch_size: 64,
        ..RqVaeConfig::default()
    };
    let one = train_rqvae(&data, Channel::Semantic, &cfg(1), 5).unwrap();
    let two = train_rqvae(&data, Channel::Semantic, &cfg(2), 5).unwrap();
    let codes = one.model.encode_all(&one.store, &data).unwrap();
    // Oracle: nearest true center, matched to codes by majority vote.
    let oracle: Vec<usize> = (0..data.rows())
        .map(|i| {
            let r = data.row(i);
            (0..4)
                .min_by(|&a, &b| {
                    let d = |c: usize| centers[c].iter().zip(r).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                    d(a).total_cmp(&d(b))
                })
                .unwrap()
        })
        .collect();
    let mut votes = [[0usize; 4]; 4];
    for (i, c) in codes.iter().enumerate() {
        votes[oracle[i]][c[0]] += 1;
    }
    let agree: usize = votes.iter().map(|v| *v.iter().max().unwrap()).sum();
    let mapped: std::collections::BTreeSet<usize> =
        votes.iter().map(|v| (0..4).max_by_key(|&k| v[k]).unwrap()).collect();
    let frac = if mapped.len() == 4 { agree as f64 / data.rows() as f64 } else { 0.0 };
    let (m1, m2) = (one.report.recon_mse, two.report.recon_mse);
    line(
        2,
        frac >= 0.99 && m2 <= m1,
        format!("quantizer oracle: agreement {:.2}% (need 99%), MSE 1 level {m1:.5} vs 2 levels {m2:.5}", 100.0 * frac),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Line {
    let mut rng = seeded_rng(3, 3);
    let (mut violations, mut checked, mut mask_bad) = (0, 0, 0);
    let far = |x: f64| (x - (x.floor() + 0.5)).abs() >= 0.3;
    for _ in 0..10_000 {
        let alpha: f64 = rng.random();
        let l = rng.random_range(3..=6);
        let (a, b) = hard_allocate(alpha, l);
        let (c, d) = baseline_allocate(alpha, l);
        if a + b != l || c + d != l {
            violations += 1;
        }
        if far(alpha * l as f64) && far((1.0 - alpha) * l as f64) {
            checked += 1;
            let (mc, ms) = soft_masks(alpha, l, 0.1);
            let s: f64 = mc.iter().chain(&ms).sum();
            if (s - l as f64).abs() > 0.05 {
                mask_bad += 1;
            }
        }
    }
    line(
        3,
        violations == 0 && mask_bad == 0,
        format!("allocation conservation: 10000 draws, {violations} budget violations, {mask_bad}/{checked} mask sums outside ±0.05"),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Line {
    let (mc, ms) = soft_masks(0.5, 4, 0.1);
    let want = [sigmoid(15.0), sigmoid(5.0), sigmoid(-5.0), sigmoid(-15.0)];
    let err = mc.iter().chain(&ms).zip(want.iter().chain(&want)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    line(4, err <= 1e-9, format!("mask values: max |Δ| {err:.1e} against σ(15), σ(5), σ(-5), σ(-15)"))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Line {
    let n = 12;
    let bands: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let counts: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
    let half = vec![0.5; n];
    let lb0 = load_balance_value(&half, &bands).unwrap();
    let constant = vec![0.37; n];
    let sm0 = smoothness_value(&constant, &counts).unwrap();
    let mut ok = lb0 == 1.0 && sm0 == 0.0;
    let (mut prev_lb, mut prev_sm) = (lb0, sm0);
    for delta in [0.01, 0.05, 0.1, 0.2, 0.4] {
        let mut a = half.clone();
        a[5] += delta;
        let lb = load_balance_value(&a, &bands).unwrap();
        let mut b = constant.clone();
        b[5] += delta;
        let sm = smoothness_value(&b, &counts).unwrap();
        ok &= lb > prev_lb && sm > prev_sm;
        prev_lb = lb;
        prev_sm = sm;
    }
    line(
        5,
        ok,
        format!("regularizer extrema: lb(0.5) = {lb0}, smooth(const) = {sm0}, strict growth over 5 deviations: {ok}"),
    )
}

// ---------------------------------------------------------------- criterion 6

fn brute_force(ranked: &[usize], target: usize, k: usize) -> (f64, f64) {
    let (mut hits, mut dcg) = (0.0, 0.0);
    for (i, &item) in ranked.iter().take(k).enumerate() {
        if item == target {
            hits += 1.0;
            dcg += 1.0 / (i as f64 + 2.0).log2();
        }
    }
    let idcg = 1.0 / 2f64.log2();
    (hits / 1.0, dcg / idcg)
}

fn criterion_6() -> Line {
    let mut rng = seeded_rng(6, 6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let mut ranked: Vec<usize> = (0..60).collect();
        for i in 0..n {
            let j = rng.random_range(i..60);
            ranked.swap(i, j);
        }
        ranked.truncate(n);
        let target = rng.random_range(0..60);
        let k = rng.random_range(1..25);
        let (r, d) = brute_force(&ranked, target, k);
        if recall_at_k(&ranked, target, k) != r || ndcg_at_k(&ranked, target, k) != d {
            mismatches += 1;
        }
    }
    let mut g = Graph::new();
    let n = 8;
    let same = Tensor::matrix(n, 3, [0.3, -0.2, 0.9].repeat(n)).unwrap();
    let (a, b) = (g.constant(same.clone()), g.constant(same));
    let l = info_nce(&mut g, a, b, &CcaConfig::default()).unwrap();
    let err = (g.value(l).item() - (n as f64).ln()).abs();
    line(
        6,
        mismatches == 0 && err <= 1e-9,
        format!("metric oracle: {mismatches}/1000 mismatches, InfoNCE on equal similarities |L - ln 8| = {err:.1e}"),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7(bundle: &Bundle, prepared: &Prepared) -> Line {
    let ds = &prepared.dataset;
    let users = 100.min(ds.num_users());
    let (mut tuples, mut resolved, mut worse) = (0, 0, 0);
    for u in 0..users {
        let history: Vec<&ItemTokenLayout> = ds.test_history(u).unwrap().iter().map(|&i| &bundle.layouts[i]).collect();
        let wide = generate_items(&bundle.generator, &bundle.quant.store, &history, &bundle.trie, 40, 10).unwrap();
        let narrow = generate_items(&bundle.generator, &bundle.quant.store, &history, &bundle.trie, 5, 5).unwrap();
        for t in wide.tuples.iter().chain(&narrow.tuples) {
            tuples += 1;
            if bundle.trie.lookup(&t.value).is_some_and(|items| !items.is_empty()) {
                resolved += 1;
            }
        }
        if wide.tuples[0].score < narrow.tuples[0].score {
            worse += 1;
        }
    }
    line(
        7,
        resolved == tuples && worse == 0,
        format!("decoding validity: {resolved}/{tuples} tuples resolve, beam 40 top-1 below beam 5 for {worse}/{users} users"),
    )
}

// ---------------------------------------------------------------- experiments

struct SeedRun {
    reports: Vec<(Variant, EvalReport)>,
    full_bundle: Option<Bundle>,
}

fn ndcg10(r: &EvalReport) -> (f64, f64, f64) {
    let m = r.metric("ndcg@10").unwrap();
    (m.overall, m.head, m.tail)
}

fn run_variants(prepared: &Prepared, config: &Config, seed: u64, keep_full: bool) -> SeedRun {
    let cf: CfStage = stage_cf(prepared, config, seed).unwrap();
    let mut quant: [Option<QuantStage>; 2] = [None, None];
    let mut reports = Vec::new();
    let mut full_bundle = None;
    for v in Variant::ALL {
        let slot = v.uses_alignment() as usize;
        if quant[slot].is_none() {
            let lambda = if v.uses_alignment() { config.lambda_cca } else { 0.0 };
            quant[slot] = Some(stage_quantize(prepared, &cf, config, seed, lambda).unwrap());
        }
        let bundle = stage_joint(quant[slot].clone().unwrap(), prepared, config, v, seed).unwrap();
        let report = evaluate(&bundle, prepared, seed).unwrap().report;
        let (o, h, t) = ndcg10(&report);
        println!("    seed {seed} {:<13} ndcg@10 {o:.4} head {h:.4} tail {t:.4}", v.as_str());
        if keep_full && v == Variant::Full {
            full_bundle = Some(bundle);
        }
        reports.push((v, report));
    }
    SeedRun { reports, full_bundle }
}

fn full_at_budget(prepared: &Prepared, config: &Config, levels: usize, seed: u64) -> f64 {
    let mut c = config.clone();
    c.levels = levels;
    let cf = stage_cf(prepared, &c, seed).unwrap();
    let quant = stage_quantize(prepared, &cf, &c, seed, c.lambda_cca).unwrap();
    let bundle = stage_joint(quant, prepared, &c, Variant::Full, seed).unwrap();
    ndcg10(&evaluate(&bundle, prepared, seed).unwrap().report).0
}

/// Per-variant seed lists of (overall, head, tail) NDCG@10.
fn collect(runs: &[SeedRun], v: Variant) -> [Vec<f64>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for r in runs {
        let rep = &r.reports.iter().find(|(x, _)| *x == v).unwrap().1;
        let (o, h, t) = ndcg10(rep);
        out[0].push(o);
        out[1].push(h);
        out[2].push(t);
    }
    out
}

fn criterion_8(runs: &[SeedRun], secs: f64) -> Line {
    let stat = |v| mean_std(&collect(runs, v)[0]);
    let (full, fixed, sid, cid, noal) = (
        stat(Variant::Full),
        stat(Variant::FixedSplit),
        stat(Variant::SidOnly),
        stat(Variant::CidOnly),
        stat(Variant::NoAlignment),
    );
    let best_single = if sid.0 >= cid.0 { sid } else { cid };
    // A gap clears the noise when it exceeds the larger of the two cross-seed deviations.
    let clears = |a: (f64, f64), b: (f64, f64)| a.0 - b.0 > a.1.max(b.1);
    let checks = [
        ("full>fixed", clears(full, fixed)),
        ("fixed>max(sid,cid)", clears(fixed, best_single)),
        ("full>no_alignment", clears(full, noal)),
    ];
    let pass = checks.iter().all(|c| c.1);
    let fmt = |(m, s): (f64, f64)| format!("{m:.4}±{s:.4}");
    Line {
        id: 8,
        pass: pass && secs < 1800.0,
        gating: false,
        detail: format!(
            "variant ordering: full {} fixed {} sid {} cid {} no_align {}; {:?}; {secs:.0}s",
            fmt(full),
            fmt(fixed),
            fmt(sid),
            fmt(cid),
            fmt(noal),
            checks
        ),
    }
}

fn criterion_9(runs: &[SeedRun]) -> Line {
    let head = |v| mean_std(&collect(runs, v)[1]);
    let tail = |v| mean_std(&collect(runs, v)[2]);
    let cid_head_wins = head(Variant::CidOnly).0 > head(Variant::SidOnly).0;
    let sid_tail_wins = tail(Variant::SidOnly).0 > tail(Variant::CidOnly).0;
    let full_h = head(Variant::Full);
    let best_head = Variant::ALL.iter().map(|&v| head(v).0).fold(f64::MIN, f64::max);
    let full_near_head = best_head - full_h.0 <= full_h.1;
    let full_t = tail(Variant::Full).0;
    let full_best_tail = Variant::ALL.iter().filter(|&&v| v != Variant::Full).all(|&v| full_t > tail(v).0);
    let checks = [
        ("cid>sid head", cid_head_wins),
        ("sid>cid tail", sid_tail_wins),
        ("full within σ of best head", full_near_head),
        ("full best tail", full_best_tail),
    ];
    let mut detail = String::from("head/tail split:");
    for v in Variant::ALL {
        detail.push_str(&format!(" {} h {:.4} t {:.4};", v.as_str(), head(v).0, tail(v).0));
    }
    Line {
        id: 9,
        pass: checks.iter().all(|c| c.1),
        gating: false,
        detail: format!("{detail} {checks:?}"),
    }
}

fn criterion_10(by_budget: &[(usize, Vec<f64>)]) -> Line {
    let stats: Vec<(usize, (f64, f64))> = by_budget.iter().map(|(l, xs)| (*l, mean_std(xs))).collect();
    let mut ok = true;
    for w in stats.windows(2) {
        let ((_, a), (_, b)) = (w[0], w[1]);
        ok &= b.0 >= a.0 - a.1.max(b.1);
    }
    let (first, last) = (stats[0].1, stats[stats.len() - 1].1);
    ok &= last.0 >= first.0;
    let cells: Vec<String> = stats.iter().map(|(l, (m, s))| format!("L={l} {m:.4}±{s:.4}")).collect();
    Line {
        id: 10,
        pass: ok,
        gating: false,
        detail: format!("budget trend (full): {}", cells.join(", ")),
    }
}

fn criterion_11(config: &Config, first: &EvalReport) -> Line {
    let again = || {
        let p = prepare(config).unwrap();
        let cf = stage_cf(&p, config, SEEDS[0]).unwrap();
        let q = stage_quantize(&p, &cf, config, SEEDS[0], config.lambda_cca).unwrap();
        let b = stage_joint(q, &p, config, Variant::Full, SEEDS[0]).unwrap();
        evaluate(&b, &p, SEEDS[0]).unwrap().report
    };
    let second = again();
    let same = first.to_text() == second.to_text() && first.to_json() == second.to_json();
    line(11, same, format!("determinism: repeated prepare/train/eval metric files identical: {same}"))
}

fn main() -> ExitCode {
    let mut lines = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_6()];
    for l in &lines {
        print_line(l);
    }
    let base = Config::parse(EXPERIMENT_CONFIG, "configs/synthetic.cfg").unwrap();
    let start = Instant::now();
    let mut runs = Vec::new();
    let mut prepared_first = None;
    for &seed in &SEEDS {
        let mut c = base.clone();
        c.seed = seed;
        let p = prepare(&c).unwrap();
        runs.push(run_variants(&p, &c, seed, seed == SEEDS[0]));
        if seed == SEEDS[0] {
            prepared_first = Some((p, c));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (p0, c0) = prepared_first.unwrap();
    let more = vec![
        criterion_7(runs[0].full_bundle.as_ref().unwrap(), &p0),
        criterion_8(&runs, secs),
        criterion_9(&runs),
    ];
    for l in &more {
        print_line(l);
    }
    lines.extend(more);
    let mut by_budget: Vec<(usize, Vec<f64>)> = Vec::new();
    for &l in &BUDGETS {
        let xs: Vec<f64> = if l == base.levels {
            collect(&runs, Variant::Full)[0].clone()
        } else {
            SEEDS
                .iter()
                .map(|&seed| {
                    let mut c = base.clone();
                    c.seed = seed;
                    let p = prepare(&c).unwrap();
                    let v = full_at_budget(&p, &c, l, seed);
                    println!("    seed {seed} full L={l} ndcg@10 {v:.4}");
                    v
                })
                .collect()
        };
        by_budget.push((l, xs));
    }
    let first_full = &runs[0].reports.iter().find(|(v, _)| *v == Variant::Full).unwrap().1;
    let tail = vec![criterion_10(&by_budget), criterion_11(&c0, first_full)];
    for l in &tail {
        print_line(l);
    }
    lines.extend(tail);
    let gating_failures = lines.iter().filter(|l| l.gating && !l.pass).count();
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("acceptance: {passed}/{} criteria pass", lines.len());
    if gating_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn print_line(l: &Line) {
    let verdict = if l.pass { "PASS" } else { "FAIL" };
    let note = if l.gating { "" } else { " (reported)" };
    println!("criterion {:>2} {verdict}{note}: {}", l.id, l.detail);
}
