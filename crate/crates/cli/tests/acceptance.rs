//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails. Runs without the libtest harness so the lines are
//! always visible.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use qhead_cli::artifacts::{ARCHITECTURE_FILE, TRAJECTORY_FILE};
use qhead_cli::commands::cmd_search;
use qhead_cli::{DataSource, RunConfig};
use qhead_core::circuit::{build_candidate_unitary, compile, enumerate_candidates};
use qhead_core::data::{FeatureSequence, SyntheticSpec};
use qhead_core::diffqas::{ensemble_forward, joint_ensemble_oracle, mixture_state, StructuralWeights};
use qhead_core::head::{DropoutMask, HeadConfig, HeadParams, Mode, ParamGroup};
use qhead_core::metrics::{compute_metrics, param_report};
use qhead_core::training::{finite_difference_check, Arch, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= budget, || format!("took {:.0}s, budget {}s", took.as_secs_f64(), budget.as_secs()))
}

fn random_sample(cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> FeatureSequence {
    let f = (0..cfg.seq_len * cfg.feat_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureSequence::new(f, cfg.seq_len, cfg.feat_dim, rng.random_range(0..cfg.n_classes)).unwrap()
}

fn random_params(cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> HeadParams {
    let mut p = HeadParams::init(cfg, rng);
    for (_, v) in p.groups_mut() {
        v.iter_mut().for_each(|x| *x += rng.random_range(-0.5..0.5));
    }
    p
}

fn random_weights(rng: &mut ChaCha8Rng) -> StructuralWeights {
    StructuralWeights {
        ts_logits: (0..24).map(|_| rng.random_range(-2.0..2.0)).collect(),
        qff_logits: (0..24).map(|_| rng.random_range(-2.0..2.0)).collect(),
        frozen: false,
    }
}

fn criterion_1() -> Outcome {
    let ts = enumerate_candidates(2).map_err(|e| e.to_string())?;
    let qff = enumerate_candidates(1).map_err(|e| e.to_string())?;
    let distinct: BTreeSet<usize> = ts.iter().map(|c| c.index()).collect();
    ensure(ts.len() == 24 && qff.len() == 24 && distinct.len() == 24, || {
        format!("{} timestep / {} qff candidates", ts.len(), qff.len())
    })?;
    let cfg = HeadConfig {
        n_qubits: 2,
        seq_len: 2,
        feat_dim: 3,
        n_classes: 2,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let oracle = joint_ensemble_oracle(
        &random_sample(&cfg, &mut rng),
        &StructuralWeights::default(),
        &random_params(&cfg, &mut rng),
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    ensure(oracle.evaluations == 576, || format!("oracle evaluated {} pairs", oracle.evaluations))?;
    Ok("24 + 24 candidates, 576 oracle pairs".into())
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = HeadConfig {
        n_qubits: 8,
        seq_len: 4,
        feat_dim: 16,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let params = random_params(&cfg, &mut rng);
        let sw = random_weights(&mut rng);
        let x = random_sample(&cfg, &mut rng);
        let fast = ensemble_forward(&x, &sw, &params, &cfg, Mode::Eval).map_err(|e| e.to_string())?;
        let oracle = joint_ensemble_oracle(&x, &sw, &params, &cfg).map_err(|e| e.to_string())?;
        for (a, b) in fast.iter().zip(&oracle.logits) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst < 1e-9, || format!("max logit difference {worst:e}"))?;
    within_budget(start, Duration::from_secs(120))?;
    Ok(format!("20 instances, max |Δlogit| = {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cfg = HeadConfig {
        n_qubits: 6,
        seq_len: 4,
        feat_dim: 8,
        n_classes: 4,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = random_params(&cfg, &mut rng);
    let sw = random_weights(&mut rng);
    let samples: Vec<FeatureSequence> = (0..2).map(|_| random_sample(&cfg, &mut rng)).collect();
    let refs: Vec<&FeatureSequence> = samples.iter().collect();
    let masks: Vec<DropoutMask> = (0..2)
        .map(|_| DropoutMask::sample(&mut rng, cfg.seq_len, cfg.feat_dim, cfg.dropout_rate))
        .collect();
    let n_groups = 9 + 24;
    let checks = finite_difference_check(&refs, Some(&masks), &params, &cfg, Arch::Search(&sw), n_groups * 8, 1e-5, &mut rng)
        .map_err(|e| e.to_string())?;
    let groups: BTreeSet<&str> = checks.iter().map(|c| c.group.as_str()).collect();
    let mut expected: BTreeSet<String> = [
        ParamGroup::ProjectionWeight,
        ParamGroup::ProjectionBias,
        ParamGroup::LcuLogits,
        ParamGroup::LcuPhases,
        ParamGroup::QsvtCoeffs,
        ParamGroup::ClassifierWeight,
        ParamGroup::ClassifierBias,
        ParamGroup::StructuralTimestep,
        ParamGroup::StructuralQff,
    ]
    .iter()
    .map(|g| g.name())
    .collect();
    expected.extend((0..24).map(|b| ParamGroup::QffAngles(b).name()));
    let missing: Vec<&String> = expected.iter().filter(|g| !groups.contains(g.as_str())).collect();
    ensure(checks.len() >= 200, || format!("only {} coordinates", checks.len()))?;
    ensure(missing.is_empty(), || format!("groups not sampled: {missing:?}"))?;
    let failures: Vec<_> = checks.iter().filter(|c| !c.passes(1e-3, 1e-8)).collect();
    ensure(failures.is_empty(), || format!("{} coordinates off, first {:?}", failures.len(), failures[0]))?;
    let worst = checks
        .iter()
        .filter(|c| c.analytic.abs().max(c.numeric.abs()) >= 1e-6)
        .map(|c| c.relative_error())
        .fold(0.0, f64::max);
    within_budget(start, Duration::from_secs(300))?;
    Ok(format!(
        "{} coordinates over {} groups, worst relative error {worst:.2e}",
        checks.len(),
        groups.len()
    ))
}

fn search_config(out: &Path, epochs: usize) -> RunConfig {
    RunConfig {
        head: HeadConfig::default(),
        train: TrainConfig {
            epochs,
            warmup_epochs: 5,
            learning_rate: 1e-2,
            seed: 0,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            ..TrainConfig::default()
        },
        data: DataSource::Synthetic(SyntheticSpec {
            seed: 1,
            n_per_class: 200,
            seq_len: 4,
            feat_dim: 32,
            n_classes: 4,
            separation: 4.0,
        }),
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn criterion_4(out: &Path) -> Outcome {
    let start = Instant::now();
    let (arch, summary) = cmd_search(&search_config(out, 50)).map_err(|e| e.to_string())?;
    let ens_val = summary.ensemble.val.accuracy;
    let re_val = summary.retrained.val.accuracy;
    let re_test = summary.retrained.test.accuracy;
    let detail = format!(
        "ts {} / qff {}, retrained test {re_test:.4}, retrained val {re_val:.4}, ensemble val {ens_val:.4}",
        arch.blocks[0].candidate_index, arch.blocks[1].candidate_index
    );
    ensure(re_test >= 0.8, || format!("retrained test accuracy below 0.80: {detail}"))?;
    ensure((re_val - ens_val).abs() <= 0.05 && (re_test - ens_val).abs() <= 0.05, || {
        format!("retrained accuracy more than 5 points from ensemble: {detail}")
    })?;
    within_budget(start, Duration::from_secs(30 * 60))?;
    Ok(detail)
}

fn criterion_5(out: &Path) -> Outcome {
    let csv = std::fs::read_to_string(out.join(TRAJECTORY_FILE)).map_err(|e| format!("no trajectory: {e}"))?;
    let uniform = format!("{:.6}", 1.0 / 24.0);
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let epoch: usize = cols[0].parse().map_err(|_| format!("bad row {line}"))?;
        if epoch > 4 {
            continue;
        }
        let w: f64 = cols[3].parse().map_err(|_| format!("bad row {line}"))?;
        ensure(format!("{w:.6}") == uniform, || format!("row `{line}` is not {uniform}"))?;
        rows += 1;
    }
    ensure(rows == 5 * 48, || format!("expected 240 warmup rows, found {rows}"))?;
    Ok(format!("{rows} warmup rows at {uniform}"))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for n in [2, 4, 8] {
        for desc in enumerate_candidates(2).map_err(|e| e.to_string())? {
            let n_params = compile(&desc, n).map_err(|e| e.to_string())?.n_params;
            for _ in 0..50 {
                let angles: Vec<f64> = (0..n_params).map(|_| rng.random::<f64>()).collect();
                let u = build_candidate_unitary(&desc, n, &angles).map_err(|e| e.to_string())?;
                worst = worst.max(u.unitarity_deviation());
                count += 1;
            }
        }
    }
    ensure(worst < 1e-10, || format!("max ‖U†U − I‖ = {worst:e}"))?;
    within_budget(start, Duration::from_secs(120))?;
    Ok(format!("{count} unitaries, max deviation {worst:.2e}"))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let cfg = HeadConfig {
        feat_dim: 16,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut herm, mut trace, mut min_eig): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..100 {
        let params = random_params(&cfg, &mut rng);
        let sw = random_weights(&mut rng);
        let x = random_sample(&cfg, &mut rng);
        let mask = DropoutMask::sample(&mut rng, cfg.seq_len, cfg.feat_dim, cfg.dropout_rate);
        let mode = if i % 2 == 0 { Mode::Eval } else { Mode::Train(&mask) };
        let p = mixture_state(&x, &sw, &params, &cfg, mode).map_err(|e| e.to_string())?.physicality();
        ensure(p.within(1e-9), || format!("forward {i}: {p:?}"))?;
        herm = herm.max(p.hermiticity);
        trace = trace.max(p.trace_error);
        min_eig = min_eig.min(p.min_eigenvalue);
    }
    within_budget(start, Duration::from_secs(120))?;
    Ok(format!(
        "100 mixtures, hermiticity {herm:.1e}, trace error {trace:.1e}, min eigenvalue {min_eig:.1e}"
    ))
}

fn criterion_8() -> Outcome {
    let cfg = HeadConfig {
        n_qubits: 8,
        n_classes: 4,
        ..Default::default()
    };
    let r = param_report(&cfg, None).map_err(|e| e.to_string())?;
    ensure(r.classifier == 100, || format!("classifier = {}", r.classifier))?;
    ensure(r.structural == 48, || format!("structural = {}", r.structural))?;
    let params = HeadParams::zeros(&cfg);
    let direct: usize = params.groups().iter().map(|(_, v)| v.len()).sum::<usize>() + 48;
    ensure(r.total == direct, || format!("search total {} vs enumerated {direct}", r.total))?;

    let ts = cfg.timestep_candidates()[23];
    let qff = cfg.qff_candidates()[19];
    let f = param_report(&cfg, Some((&ts, &qff))).map_err(|e| e.to_string())?;
    let direct_fixed: usize = params
        .groups()
        .iter()
        .filter(|(g, _)| !matches!(g, ParamGroup::QffAngles(b) if *b != qff.index()))
        .map(|(_, v)| v.len())
        .sum();
    ensure(f.total == direct_fixed && f.structural == 0, || {
        format!("fixed total {} vs enumerated {direct_fixed}", f.total)
    })?;
    Ok(format!("classifier 100, structural 48, totals {} / {}", r.total, f.total))
}

/// Per-class counting straight from the definitions.
fn naive_metrics(pred: &[usize], lab: &[usize], k: usize) -> [f64; 6] {
    let n = pred.len() as f64;
    let count = |f: &dyn Fn(usize, usize) -> bool| pred.iter().zip(lab).filter(|(p, l)| f(**p, **l)).count() as f64;
    let acc = count(&|p, l| p == l) / n;
    let (mut ps, mut rs, mut fs, mut fw, mut pe) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = count(&|p, l| p == c && l == c);
        let pp = count(&|p, _| p == c);
        let ap = count(&|_, l| l == c);
        let prec = if pp > 0.0 { tp / pp } else { 0.0 };
        let rec = if ap > 0.0 { tp / ap } else { 0.0 };
        let f = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        ps += prec;
        rs += rec;
        fs += f;
        fw += f * ap;
        pe += (ap / n) * (pp / n);
    }
    let kappa = if pe >= 1.0 { 1.0 } else { (acc - pe) / (1.0 - pe) };
    let k = k as f64;
    [acc, fs / k, fw / n, kappa, ps / k, rs / k]
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let m = compute_metrics(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).map_err(|e| e.to_string())?;
    ensure(m.confusion == vec![vec![1, 1], vec![1, 1]], || format!("{:?}", m.confusion))?;
    ensure((m.accuracy, m.kappa, m.f1_macro) == (0.5, 0.0, 0.5), || format!("{m:?}"))?;
    let m = compute_metrics(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).map_err(|e| e.to_string())?;
    ensure((m.kappa, m.precision, m.recall) == (0.0, 0.25, 0.5), || format!("{m:?}"))?;
    let m = compute_metrics(&[0, 1, 2, 3, 2, 1], &[0, 1, 2, 3, 2, 1], 4).map_err(|e| e.to_string())?;
    ensure((m.accuracy, m.f1_macro, m.kappa) == (1.0, 1.0, 1.0), || format!("{m:?}"))?;
    // [[2,1,0],[0,1,1],[1,0,2]]
    let lab = [0, 0, 0, 1, 1, 2, 2, 2];
    let pred = [0, 0, 1, 1, 2, 0, 2, 2];
    let m = compute_metrics(&pred, &lab, 3).map_err(|e| e.to_string())?;
    ensure(m.confusion == vec![vec![2, 1, 0], vec![0, 1, 1], vec![1, 0, 2]], || format!("{:?}", m.confusion))?;
    ensure(m.accuracy == 5.0 / 8.0, || format!("accuracy {}", m.accuracy))?;
    // p_e = (3·3 + 2·2 + 3·3) / 64 = 22/64
    let kappa = (5.0 / 8.0 - 22.0 / 64.0) / (1.0 - 22.0 / 64.0);
    ensure((m.kappa - kappa).abs() < 1e-15, || format!("kappa {} vs {kappa}", m.kappa))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..1000 {
        let k = rng.random_range(2..7);
        let n = rng.random_range(1..60);
        let lab: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = lab
            .iter()
            .map(|&l| if rng.random::<f64>() < 0.6 { l } else { rng.random_range(0..k) })
            .collect();
        let m = compute_metrics(&pred, &lab, k).map_err(|e| e.to_string())?;
        let got = [m.accuracy, m.f1_macro, m.f1_weighted, m.kappa, m.precision, m.recall];
        let want = naive_metrics(&pred, &lab, k);
        ensure(got == want, || format!("case {case}: {got:?} vs {want:?}"))?;
    }
    within_budget(start, Duration::from_secs(60))?;
    Ok("hand examples exact, 1000 random cases agree".into())
}

fn criterion_10(root: &Path) -> Outcome {
    let start = Instant::now();
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        cmd_search(&search_config(&out, 10)).map_err(|e| e.to_string())?;
        let read = |f: &str| std::fs::read(out.join(f)).map_err(|e| format!("{f}: {e}"));
        bytes.push((read(ARCHITECTURE_FILE)?, read(TRAJECTORY_FILE)?));
    }
    ensure(bytes[0].0 == bytes[1].0, || "architecture.json differs between runs".into())?;
    ensure(bytes[0].1 == bytes[1].1, || "trajectory.csv differs between runs".into())?;
    within_budget(start, Duration::from_secs(600))?;
    Ok(format!(
        "architecture.json ({} bytes) and trajectory.csv ({} bytes) identical",
        bytes[0].0.len(),
        bytes[0].1.len()
    ))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("PASS criterion {id:>2} {name}: {detail} [{secs:.1}s]"),
        Err(why) => println!("FAIL criterion {id:>2} {name}: {why} [{secs:.1}s]"),
    }
    outcome.is_ok()
}

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let e2e = dir.path().join("search");
    let results = [
        run(1, "search-space cardinality", criterion_1),
        run(2, "factorization equivalence", criterion_2),
        run(3, "gradient fidelity", criterion_3),
        run(4, "end-to-end synthetic search", || criterion_4(&e2e)),
        run(5, "warmup invariance", || criterion_5(&e2e)),
        run(6, "unitarity suite", criterion_6),
        run(7, "mixture physicality", criterion_7),
        run(8, "parameter accounting", criterion_8),
        run(9, "metrics correctness", criterion_9),
        run(10, "determinism", || criterion_10(&dir.path().join("repeat"))),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
