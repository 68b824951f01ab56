//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion and exits non-zero if any failed.
//!
//! Criterion numbers given as arguments select a subset:
//! `cargo test -p fltrigger --test acceptance -- 2 9`.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::time::Instant;

use fltrigger::observe::{observe, ObserveOptions};
use fltrigger::oracle::run_equivalence;
use fltrigger::sweep::run_sweep;
use fltrigger_core::attacks::AttackKind;
use fltrigger_core::autodiff::{Graph, Tensor, Var};
use fltrigger_core::config::ExperimentConfig;
use fltrigger_core::data::{dirichlet_partition, synth_dataset};
use fltrigger_core::defenses::{
    knowledge_extraction, model_filtering, rlr_aggregate, trigger_filtering, DefenseKind,
};
use fltrigger_core::flcore::{fedavg_aggregate, run_experiment, ClientUpdate, Experiment, RoundRecord};
use fltrigger_core::nn::{Classifier, ParamVector};
use fltrigger_core::seed;
use fltrigger_core::Result;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

#[derive(Clone)]
struct Run {
    records: Vec<RoundRecord>,
    csv: Vec<u8>,
    adversaries: Vec<usize>,
}

/// Shared state: a scratch directory and the desk-scale runs several
/// criteria reuse.
struct Ctx {
    dir: tempfile::TempDir,
    runs: HashMap<String, Run>,
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn desk(seed: u64, eta: f64, attack: AttackKind, defense: DefenseKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.eta = eta;
    cfg.attack.kind = attack;
    cfg.defense.kind = defense;
    cfg
}

impl Ctx {
    fn new() -> Self {
        Ctx {
            dir: tempfile::tempdir().expect("temp dir"),
            runs: HashMap::new(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn execute(&self, mut cfg: ExperimentConfig, name: &str) -> Result<Run> {
        cfg.output_dir = self.path(name);
        let adversaries = Experiment::new(cfg.clone())?.adversaries();
        let result = run_experiment(&cfg)?;
        let csv = std::fs::read(&result.csv_path).expect("csv written");
        Ok(Run {
            records: result.records,
            csv,
            adversaries,
        })
    }

    /// Cached run of the desk-scale setup.
    fn run(&mut self, seed: u64, eta: f64, attack: AttackKind, defense: DefenseKind) -> Result<Run> {
        let key = format!("{seed}_{eta}_{attack:?}_{defense}");
        if let Some(r) = self.runs.get(&key) {
            return Ok(r.clone());
        }
        let run = self.execute(desk(seed, eta, attack, defense), &key)?;
        self.runs.insert(key, run.clone());
        Ok(run)
    }
}

fn final5(records: &[RoundRecord], pick: impl Fn(&RoundRecord) -> Option<f64>) -> f64 {
    let tail = &records[records.len().saturating_sub(5)..];
    tail.iter().map(|r| pick(r).expect("evaluated round")).sum::<f64>() / tail.len() as f64
}

fn final_ma(r: &Run) -> f64 {
    final5(&r.records, |x| x.ma)
}

fn final_asr(r: &Run) -> f64 {
    final5(&r.records, |x| x.asr)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Fractions of adversarial and benign updates removed over the last 10 rounds.
fn filter_rates(run: &Run) -> (f64, f64) {
    let (mut adv, mut adv_removed, mut ben, mut ben_removed) = (0, 0, 0, 0);
    for r in &run.records[run.records.len().saturating_sub(10)..] {
        for id in &r.selected {
            let removed = r.removed.contains(id);
            if run.adversaries.contains(id) {
                adv += 1;
                adv_removed += removed as usize;
            } else {
                ben += 1;
                ben_removed += removed as usize;
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (frac(adv_removed, adv), frac(ben_removed, ben))
}

// ---------------------------------------------------------------- 1

struct GradCase {
    template: usize,
    params: Vec<Tensor>,
    consts: Vec<Tensor>,
    index: Vec<usize>,
}

const TEMPLATES: usize = 10;

fn uniform(rng: &mut seed::Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Values in (−1, 1) at least 0.05 away from the clamp bounds ±0.5.
fn off_kink(rng: &mut seed::Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if (v.abs() - 0.5).abs() > 0.05 {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

fn grad_case(i: usize, rng: &mut seed::Rng) -> GradCase {
    let template = i % TEMPLATES;
    let n = rng.random_range(2..=4);
    let d = rng.random_range(2..=4);
    let k = rng.random_range(2..=4);
    let u = |rng: &mut seed::Rng, shape: Vec<usize>| uniform(rng, shape, -1.0, 1.0);
    let idx = |rng: &mut seed::Rng, rows: usize, cols: usize| -> Vec<usize> {
        (0..rows).map(|_| rng.random_range(0..cols)).collect()
    };
    let (params, consts, index) = match template {
        0 => (
            vec![u(rng, vec![d, k]), u(rng, vec![k])],
            vec![u(rng, vec![n, d])],
            idx(rng, n, k),
        ),
        1 => (vec![u(rng, vec![n, d]), u(rng, vec![n, d])], vec![], vec![]),
        2 => (
            vec![u(rng, vec![n, d]), u(rng, vec![n, d])],
            vec![u(rng, vec![n, d])],
            vec![],
        ),
        3 => (vec![u(rng, vec![n, k])], vec![u(rng, vec![n])], vec![]),
        4 => (vec![u(rng, vec![n, k])], vec![u(rng, vec![n])], idx(rng, n, k)),
        5 => (vec![off_kink(rng, vec![n, d])], vec![u(rng, vec![n, d])], vec![]),
        6 => {
            let e = rng.random_range(1..=3);
            (
                vec![u(rng, vec![n, d]), u(rng, vec![n, e])],
                vec![u(rng, vec![(n - 1) * (d + e)])],
                vec![],
            )
        }
        7 => {
            // Signed overlap of generated patterns, as in trigger filtering.
            let rows = k * k;
            let mut signs = vec![0.0; rows * k];
            for c in 0..k {
                for j in 0..k {
                    signs[(c * k + j) * k + c] = if j == c { -1.0 } else { 1.0 };
                }
            }
            (
                vec![uniform(rng, vec![k, d], -0.15, 0.15)],
                vec![
                    Tensor::new(vec![rows, k], signs).expect("shape"),
                    uniform(rng, vec![rows, d], 0.2, 0.8),
                    u(rng, vec![rows]),
                ],
                (0..rows).map(|r| (r / k) % d).collect(),
            )
        }
        8 => (
            vec![u(rng, vec![d, 3]), u(rng, vec![3, k])],
            vec![u(rng, vec![n, d])],
            vec![],
        ),
        _ => (
            vec![u(rng, vec![n, d]), u(rng, vec![d, k])],
            vec![u(rng, vec![n, k])],
            vec![],
        ),
    };
    GradCase {
        template,
        params,
        consts,
        index,
    }
}

fn build(case: &GradCase, params: &[Tensor]) -> Result<(Graph, Var, Vec<Var>)> {
    let mut g = Graph::new();
    let p: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let c: Vec<Var> = case.consts.iter().map(|t| g.constant(t.clone())).collect();
    let root = match case.template {
        0 => {
            let h = g.matmul(c[0], p[0])?;
            let h = g.add_row(h, p[1])?;
            let h = g.relu(h)?;
            let probs = g.softmax(h)?;
            g.cross_entropy(probs, &case.index)?
        }
        1 => {
            let m = g.mul(p[0], p[1])?;
            let s = g.sigmoid(m)?;
            g.mean(s)?
        }
        2 => {
            let a = g.sub(p[0], p[1])?;
            let a = g.scale(a, 1.7)?;
            let a = g.add_scalar(a, 0.3)?;
            let a = g.mul(a, c[0])?;
            g.sum(a)?
        }
        3 => {
            let probs = g.softmax(p[0])?;
            let s1 = g.population_std(probs)?;
            let s2 = g.population_std(p[0])?;
            let s = g.add(s1, s2)?;
            let s = g.mul(s, c[0])?;
            g.sum(s)?
        }
        4 => {
            let probs = g.softmax(p[0])?;
            let picked = g.gather(probs, &case.index)?;
            let w = g.mul(picked, c[0])?;
            g.sum(w)?
        }
        5 => {
            let a = g.clamp(p[0], -0.5, 0.5)?;
            let a = g.mul(a, c[0])?;
            g.sum(a)?
        }
        6 => {
            let both = g.concat(p[0], p[1])?;
            let shape = g.value(both).shape().to_vec();
            let tail = g.slice_rows(both, 1, shape[0] - 1)?;
            let flat = g.reshape(tail, vec![(shape[0] - 1) * shape[1]])?;
            let w = g.mul(flat, c[0])?;
            g.sum(w)?
        }
        7 => {
            let signed = g.matmul(c[0], p[0])?;
            let shifted = g.add(c[1], signed)?;
            let x = g.clamp(shifted, 0.0, 1.0)?;
            let probs = g.softmax(x)?;
            let std = g.population_std(probs)?;
            let std = g.sum(std)?;
            let picked = g.gather(probs, &case.index)?;
            let picked = g.mul(picked, c[2])?;
            let picked = g.sum(picked)?;
            g.add(std, picked)?
        }
        8 => {
            let h = g.matmul(c[0], p[0])?;
            let h = g.relu(h)?;
            let o = g.matmul(h, p[1])?;
            let o = g.sigmoid(o)?;
            g.mean(o)?
        }
        _ => {
            let m = g.matmul(p[0], p[1])?;
            let m = g.mul(m, c[0])?;
            g.sum(m)?
        }
    };
    Ok((g, root, p))
}

fn loss_at(case: &GradCase, params: &[Tensor]) -> Result<f64> {
    let (g, root, _) = build(case, params)?;
    g.value(root).item()
}

/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-6).
fn max_rel_error(case: &GradCase) -> Result<f64> {
    const H: f64 = 1e-5;
    let (g, root, vars) = build(case, &case.params)?;
    let grads = g.backward(root)?;
    let mut worst: f64 = 0.0;
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("param gradient").data().to_vec();
        for j in 0..case.params[pi].len() {
            let mut shifted = case.params.clone();
            let mut plus = shifted[pi].data().to_vec();
            let mut minus = plus.clone();
            plus[j] += H;
            minus[j] -= H;
            let shape = shifted[pi].shape().to_vec();
            shifted[pi] = Tensor::new(shape.clone(), plus)?;
            let f_plus = loss_at(case, &shifted)?;
            shifted[pi] = Tensor::new(shape, minus)?;
            let f_minus = loss_at(case, &shifted)?;
            let numeric = (f_plus - f_minus) / (2.0 * H);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn c01_gradients(_: &mut Ctx) -> Result<Verdict> {
    let mut rng = seed::rng_for(2024, "gradcheck", 0, 0);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let case = grad_case(i, &mut rng);
        worst = worst.max(max_rel_error(&case)?);
    }
    verdict(worst < 1e-4, format!("50 graphs, {TEMPLATES} templates, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

fn c02_oracles(_: &mut Ctx) -> Result<Verdict> {
    let outcomes = run_equivalence(200, 17);
    let pass = outcomes.iter().all(|o| o.passed());
    let detail = outcomes
        .iter()
        .map(|o| format!("{} {}/{}", o.name, o.instances - o.mismatches, o.instances))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, detail)
}

// ---------------------------------------------------------------- 3

fn c03_rlr(_: &mut Ctx) -> Result<Verdict> {
    // Coordinate 0: 7 up / 3 down. Coordinate 1: 6 up / 4 down.
    // Coordinate 2: 7 down / 3 up, which must also clear θ = 4.
    let g_old = ParamVector::new(vec![0.5, -0.25, 2.0]);
    let mut deltas = Vec::new();
    for k in 0..10 {
        let mag = 0.1 * (k as f64 + 1.0);
        let d0 = if k < 7 { mag } else { -mag };
        let d1 = if k < 6 { mag } else { -2.0 * mag };
        let d2 = if k < 7 { -mag } else { mag };
        deltas.push([d0, d1, d2]);
    }
    let updates: Vec<ClientUpdate> = deltas
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let p = (0..3).map(|i| g_old.as_slice()[i] + d[i]).collect();
            ClientUpdate::new(k, ParamVector::new(p), 1)
        })
        .collect::<Result<_>>()?;
    let mut ok = true;
    for eta in [1.0, 0.5] {
        let got = rlr_aggregate(&g_old, &updates, 4.0, eta)?;
        for (i, expected_sign) in [(0, 1.0), (1, -1.0), (2, 1.0)] {
            // The mean delta is recovered from the updates the same way a
            // reader would by hand.
            let mean = updates.iter().map(|u| u.params.as_slice()[i] - g_old.as_slice()[i]).sum::<f64>() / 10.0;
            let want = g_old.as_slice()[i] + expected_sign * eta * mean;
            ok &= (got.as_slice()[i] - want).abs() < 1e-12;
        }
    }
    verdict(ok, "7/3 → +η, 6/4 → −η, 3/7 → +η with θ = 4 at η ∈ {1, 0.5}".into())
}

// ---------------------------------------------------------------- 4

fn c04_partition(_: &mut Ctx) -> Result<Verdict> {
    let data = synth_dataset(10, 200, (16, 16, 1), 5)?;
    let mut failures = Vec::new();
    let mut pairs = 0;
    for alpha in [0.05, 0.3, 1.0, 10.0, 1000.0] {
        for s in 0..4u64 {
            pairs += 1;
            let shards = dirichlet_partition(&data, 30, alpha, s)?;
            let again = dirichlet_partition(&data, 30, alpha, s)?;
            let mut all: Vec<usize> = shards.iter().flat_map(|c| c.indices.iter().copied()).collect();
            all.sort_unstable();
            let covering = all == (0..data.len()).collect::<Vec<_>>();
            if !covering || shards != again || shards.iter().any(|c| c.indices.is_empty()) {
                failures.push(format!("alpha {alpha} seed {s}"));
            }
        }
    }
    // Near-IID split: every client close to the global 10% per class.
    let shards = dirichlet_partition(&data, 10, 1e6, 9)?;
    let mut worst: f64 = 0.0;
    for shard in &shards {
        let mut hist = [0usize; 10];
        for &i in &shard.indices {
            hist[data.labels()[i]] += 1;
        }
        for h in hist {
            let share = h as f64 / shard.len() as f64;
            worst = worst.max((share - 0.1).abs() / 0.1);
        }
    }
    verdict(
        failures.is_empty() && worst <= 0.2,
        format!(
            "{pairs} pairs disjoint/covering/deterministic ({} failures), alpha=1e6 worst class deviation {:.1}%",
            failures.len(),
            worst * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 5

fn c05_attack_baseline(ctx: &mut Ctx) -> Result<Verdict> {
    let (mut asr, mut gap) = (Vec::new(), Vec::new());
    for s in SEEDS {
        let attacked = ctx.run(s, 0.3, AttackKind::Multiple, DefenseKind::None)?;
        let clean = ctx.run(s, 0.3, AttackKind::None, DefenseKind::None)?;
        asr.push(final_asr(&attacked));
        gap.push(final_ma(&clean) - final_ma(&attacked));
    }
    let (a, g) = (median(asr), median(gap));
    verdict(
        a >= 0.7 && g <= 0.05,
        format!("median final-5 ASR {:.1}%, MA gap to no-attack {:.1} points", a * 100.0, g * 100.0),
    )
}

// ---------------------------------------------------------------- 6

fn c06_defense(ctx: &mut Ctx) -> Result<Verdict> {
    let (mut asr, mut gap) = (Vec::new(), Vec::new());
    for s in SEEDS {
        let defended = ctx.run(s, 0.3, AttackKind::Multiple, DefenseKind::TriggerGen)?;
        let clean = ctx.run(s, 0.3, AttackKind::None, DefenseKind::None)?;
        asr.push(final_asr(&defended));
        gap.push(final_ma(&clean) - final_ma(&defended));
    }
    let detail = format!(
        "final-5 ASR per seed {:?}, MA gap {:?}",
        asr.iter().map(|v| format!("{:.3}", v)).collect::<Vec<_>>(),
        gap.iter().map(|v| format!("{:.3}", v)).collect::<Vec<_>>()
    );
    verdict(median(asr) <= 0.15 && median(gap) <= 0.05, detail)
}

// ---------------------------------------------------------------- 7

fn c07_rho(ctx: &mut Ctx) -> Result<Verdict> {
    // Snapshot: the first round whose selection contains an adversary.
    let cfg = desk(1, 0.3, AttackKind::Multiple, DefenseKind::TriggerGen);
    let mut exp = Experiment::new(cfg.clone())?;
    let adversaries = exp.adversaries();
    let (round, selected) = loop {
        let r = exp.round();
        let sel = exp.select(r)?;
        if sel.iter().any(|id| adversaries.contains(id)) {
            break (r, sel);
        }
        exp.run_round()?;
    };
    let updates = exp.local_updates(round, &selected)?;
    let g_old = exp.global().clone();
    let agg = Classifier::unflatten(g_old.spec(), fedavg_aggregate(&updates)?)?;
    let gen = &cfg.defense.generator;
    let gseed = seed::derive_seed(cfg.seed, "defense", round as u64, 0);
    let extracted = knowledge_extraction(&g_old, &agg, gen, gseed)?;
    let triggers = trigger_filtering(&g_old, &agg, &extracted.set, gen, gseed)?;
    let mut previous: Option<Vec<usize>> = None;
    let mut monotone = true;
    let mut sizes = Vec::new();
    for step in 1..20 {
        let rho = step as f64 * 0.05;
        let removed = model_filtering(&updates, g_old.spec(), &triggers.set, rho)?.report.removed_ids();
        if let Some(prev) = &previous {
            monotone &= removed.iter().all(|id| prev.contains(id));
        }
        sizes.push(removed.len());
        previous = Some(removed);
    }

    let mut base = desk(1, 0.3, AttackKind::Multiple, DefenseKind::TriggerGen);
    base.output_dir = ctx.path("rho_sweep");
    let values: Vec<String> = ["0.3", "0.5", "0.7"].iter().map(|s| s.to_string()).collect();
    let sweep = run_sweep(&base, "rho", &values)?;
    let last_asr = |i: usize| sweep.points[i].records.last().and_then(|r| r.asr).unwrap_or(f64::NAN);
    let csvs = sweep.points.iter().filter(|p| p.dir.join("rounds.csv").is_file()).count();
    let shape = last_asr(2) >= last_asr(1);
    verdict(
        monotone && shape && csvs == 3 && sweep.summary_path.is_file(),
        format!(
            "round {round} removed sizes over rho 0.05..0.95 {sizes:?}; final ASR rho 0.3/0.5/0.7 = {:.3}/{:.3}/{:.3}",
            last_asr(0),
            last_asr(1),
            last_asr(2)
        ),
    )
}

// ---------------------------------------------------------------- 8

fn c08_precision(ctx: &mut Ctx) -> Result<Verdict> {
    let (mut adv, mut ben) = (Vec::new(), Vec::new());
    for s in SEEDS {
        let run = ctx.run(s, 0.3, AttackKind::Multiple, DefenseKind::TriggerGen)?;
        let (a, b) = filter_rates(&run);
        adv.push(a);
        ben.push(b);
    }
    let detail = format!(
        "last-10 adversarial removed {:?}, benign removed {:?}",
        adv.iter().map(|v| format!("{:.2}", v)).collect::<Vec<_>>(),
        ben.iter().map(|v| format!("{:.2}", v)).collect::<Vec<_>>()
    );
    verdict(median(adv) >= 0.8 && median(ben) <= 0.2, detail)
}

// ---------------------------------------------------------------- 9

fn c09_observe(_: &mut Ctx) -> Result<Verdict> {
    let (mut poisoned, mut benign) = (Vec::new(), Vec::new());
    let mut cfg = desk(0, 0.3, AttackKind::Multiple, DefenseKind::TriggerGen);
    for s in 1..=5 {
        cfg.seed = s;
        let obs = observe(&cfg, &ObserveOptions::default())?;
        poisoned.push(obs.stamped_poisoned);
        benign.push(obs.stamped_benign);
    }
    let rho = cfg.defense.generator.rho;
    let (p, b) = (median(poisoned), median(benign));
    verdict(
        p > rho && b < rho,
        format!("median target confidence on stamped probes: poisoned model {p:.3}, benign model {b:.3}"),
    )
}

// ---------------------------------------------------------------- 10

fn c10_majority(ctx: &mut Ctx) -> Result<Verdict> {
    let last = |r: &Run| r.records.last().and_then(|x| x.asr).unwrap_or(f64::NAN);
    let ours = ctx.run(1, 0.8, AttackKind::Multiple, DefenseKind::TriggerGen)?;
    let mkrum = ctx.run(1, 0.8, AttackKind::Multiple, DefenseKind::MultiKrum)?;
    let (a, m) = (last(&ours), last(&mkrum));
    verdict(
        a <= 0.2 && m >= 0.6,
        format!("eta 0.8 final ASR: trigger_gen {a:.3}, mkrum {m:.3}"),
    )
}

// ---------------------------------------------------------------- 11

fn c11_determinism(ctx: &mut Ctx) -> Result<Verdict> {
    let first = ctx.run(1, 0.3, AttackKind::Multiple, DefenseKind::TriggerGen)?;
    let second = ctx.execute(
        desk(1, 0.3, AttackKind::Multiple, DefenseKind::TriggerGen),
        "determinism_rerun",
    )?;
    verdict(
        first.csv == second.csv,
        format!("{} CSV bytes, identical: {}", first.csv.len(), first.csv == second.csv),
    )
}

type Criterion = fn(&mut Ctx) -> Result<Verdict>;

fn main() {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, Criterion); 11] = [
        (1, "gradient correctness", c01_gradients),
        (2, "aggregator oracle equivalence", c02_oracles),
        (3, "RLR closed form", c03_rlr),
        (4, "partition invariants", c04_partition),
        (5, "attack efficacy baseline", c05_attack_baseline),
        (6, "defense efficacy", c06_defense),
        (7, "rho monotonicity and sweep", c07_rho),
        (8, "filter precision", c08_precision),
        (9, "observation reproduction", c09_observe),
        (10, "majority-adversary robustness", c10_majority),
        (11, "determinism", c11_determinism),
    ];
    let mut ctx = Ctx::new();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = check(&mut ctx).unwrap_or_else(|e| Verdict {
            pass: false,
            detail: format!("error: {e}"),
        });
        println!(
            "[{}] criterion {n:>2} {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
