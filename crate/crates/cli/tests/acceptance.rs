//! Acceptance checks, one line per criterion. Exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hudcalib::calibrate::{apply_temperature, fit_temperature, make_grid, Objective};
use hudcalib::hud::{build_human_distribution, split_terciles, ConfidenceScale, EvalSet};
use hudcalib::ingest::{AnnotatedSample, Annotation, ConfidenceLabel, JoinPolicy};
use hudcalib::metrics::{argmax, entropy, evaluate, kl, tvd, EvalOptions, MetricsTable};
use hudcalib::oracle::brute_force_evaluate;
use hudcalib::pipeline::{prepare, Prepared};
use hudcalib::synth::{generate_corpus, Corpus, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn corpus(seed: u64, samples: usize, vocab: usize, alpha: f64, sigma: f64) -> Corpus {
    generate_corpus(&SynthSpec {
        seed,
        num_samples: samples,
        vocab_size: vocab,
        model_distortion: alpha,
        model_noise: sigma,
        ..SynthSpec::default()
    })
    .expect("valid synth spec")
}

fn prepared(c: &Corpus) -> Prepared {
    prepare(
        c.annotations.clone(),
        c.predictions.clone(),
        &c.vocab,
        JoinPolicy::Strict,
        &ConfidenceScale::default(),
    )
    .expect("synthetic corpus prepares")
}

fn worked_example() -> Outcome {
    use ConfidenceLabel::*;
    let sample = AnnotatedSample {
        question_id: 1,
        image_id: "1".into(),
        question: "What color is the bus?".into(),
        annotations: vec![
            Annotation::new("blue and gray", Yes),
            Annotation::new("Blue and Gray.", Maybe),
            Annotation::new("blue", Yes),
            Annotation::new("gray and white", Maybe),
        ],
    };
    let start = Instant::now();
    let hd = build_human_distribution(&sample, &ConfidenceScale::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-4);
    check(
        close(&hd.mean_confidence, &[0.75, 1.0, 0.5]),
        format!("mean_confidence {:?}", hd.mean_confidence),
    )?;
    check(
        (hd.hud_score - 0.75).abs() <= 1e-4,
        format!("hud_score {}", hd.hud_score),
    )?;
    check(
        close(&hd.probs, &[0.3333, 0.4444, 0.2222]),
        format!("probs {:?}", hd.probs),
    )?;
    within(elapsed, Duration::from_millis(1))?;
    Ok(format!("probs {:.4?} in {elapsed:.2?}", hd.probs))
}

fn tercile_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut detail = Vec::new();
    let start = Instant::now();
    for (n, expected) in [(3248, (1083, 1083, 1082)), (15408, (5136, 5136, 5136))] {
        let scores: Vec<(u64, f64)> = (0..n).map(|i| (i as u64, rng.random::<f64>())).collect();
        let split = split_terciles(&scores).map_err(|e| e.to_string())?;
        check(split.sizes() == expected, format!("{n} -> {:?}", split.sizes()))?;
        detail.push(format!("{n} -> {:?}", split.sizes()));
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_millis(50))?;
    Ok(format!("{} in {elapsed:.2?}", detail.join(", ")))
}

fn grid_fidelity() -> Outcome {
    let grid = make_grid(0.1, 2.0, 0.05).map_err(|e| e.to_string())?;
    check(grid.len() == 39, format!("{} candidates", grid.len()))?;
    check((grid[0] - 0.1).abs() <= 1e-12, format!("first {}", grid[0]))?;
    check((grid[38] - 2.0).abs() <= 1e-12, format!("last {}", grid[38]))?;
    Ok(format!("{} candidates, {} .. {}", grid.len(), grid[0], grid[38]))
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn metric_suite() -> Outcome {
    let start = Instant::now();
    let t = tvd(&[0.6, 0.4], &[0.5, 0.5]).map_err(|e| e.to_string())?;
    check((t - 0.1).abs() <= 1e-9, format!("tvd {t}"))?;
    let k = kl(&[0.5, 0.5], &[0.25, 0.75]).map_err(|e| e.to_string())?;
    // 0.5 ln 2 + 0.5 ln(2/3)
    let k_exact = 0.5 * (2.0f64).ln() + 0.5 * (2.0f64 / 3.0).ln();
    check(
        (k - k_exact).abs() <= 1e-9 && (k - 0.143841).abs() <= 1e-6,
        format!("kl {k}"),
    )?;
    let h = entropy(&[0.5, 0.5]);
    check((h - std::f64::consts::LN_2).abs() <= 1e-9, format!("entropy {h}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    let mut asymmetric = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let p = random_distribution(&mut rng, n);
        let q = random_distribution(&mut rng, n);
        let pq = tvd(&p, &q).unwrap();
        let qp = tvd(&q, &p).unwrap();
        let kpq = kl(&p, &q).unwrap();
        let kqp = kl(&q, &p).unwrap();
        let ok = (pq - qp).abs() <= 1e-15
            && (0.0..=1.0).contains(&pq)
            && kpq >= 0.0
            && kl(&p, &p).unwrap().abs() <= 1e-12
            && entropy(&p) <= (n as f64).ln() + 1e-12
            && entropy(&p) >= 0.0;
        if !ok {
            failures += 1;
        }
        if (kpq - kqp).abs() > 1e-12 {
            asymmetric += 1;
        }
    }
    check(failures == 0, format!("{failures} property failures"))?;
    check(asymmetric > 0, "kl was symmetric on every random pair")?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "analytic values exact, 1000 random checks, kl asymmetric on {asymmetric}, {elapsed:.2?}"
    ))
}

fn max_cell_difference(a: &MetricsTable, b: &MetricsTable) -> Result<f64, String> {
    check(a.rows.len() == b.rows.len(), "row count differs")?;
    let mut worst = 0.0f64;
    for (x, y) in a.rows.iter().zip(&b.rows) {
        check(
            x.set == y.set && x.sample_count == y.sample_count,
            format!("{} shape differs", x.set),
        )?;
        for (u, v) in [
            (x.vqa_acc, y.vqa_acc),
            (x.tvd, y.tvd),
            (x.kl, y.kl),
            (x.entce, y.entce),
            (x.ece, y.ece),
        ] {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let c = corpus(1000 + seed, 1000, 50, 1.5, 0.5);
        let p = prepared(&c);
        let fast = evaluate(&p.samples, &c.vocab, &p.split, 1.0, &EvalOptions::default()).map_err(|e| e.to_string())?;
        let slow = brute_force_evaluate(&c, 1.0).map_err(|e| e.to_string())?;
        let d = max_cell_difference(&fast.table, &slow)?;
        check(d <= 1e-9, format!("seed {seed}: cell differs by {d:e}"))?;
        worst = worst.max(d);
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("20 corpora, max cell difference {worst:.1e}, {elapsed:.2?}"))
}

fn fit_kl(c: &Corpus, objective: Objective) -> Result<(f64, MetricsTable, MetricsTable), String> {
    let p = prepared(c);
    let grid = make_grid(0.1, 2.0, 0.05).map_err(|e| e.to_string())?;
    let opts = EvalOptions::default();
    let fit = fit_temperature(&p.samples, &c.vocab, &p.split, objective, &grid, &opts, EvalSet::All)
        .map_err(|e| e.to_string())?;
    let before = evaluate(&p.samples, &c.vocab, &p.split, 1.0, &opts).map_err(|e| e.to_string())?;
    let after = evaluate(&p.samples, &c.vocab, &p.split, fit.temperature, &opts).map_err(|e| e.to_string())?;
    Ok((fit.temperature, before.table, after.table))
}

fn calibration_recovery() -> Outcome {
    let start = Instant::now();
    let mut detail = Vec::new();
    for (alpha, seed) in [(2.0, 61), (0.5, 62)] {
        let c = corpus(seed, 1000, 50, alpha, 0.0);
        let (t, before, after) = fit_kl(&c, Objective::MeanKl)?;
        check((t - alpha).abs() <= 0.05, format!("alpha {alpha}: fitted {t}"))?;
        let (kb, ka) = (
            before.row(EvalSet::All).unwrap().kl,
            after.row(EvalSet::All).unwrap().kl,
        );
        check(ka < kb, format!("alpha {alpha}: kl {kb} -> {ka}"))?;
        detail.push(format!("alpha {alpha} -> T {t} (kl {kb:.4} -> {ka:.1e})"));
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("{}, {elapsed:.2?}", detail.join("; ")))
}

fn argmax_invariance() -> Outcome {
    let grid = make_grid(0.1, 2.0, 0.05).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..64);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
        let top = argmax(&logits);
        for &t in &grid {
            if argmax(&apply_temperature(&logits, t).unwrap()) != top {
                violations += 1;
            }
        }
    }
    check(violations == 0, format!("{violations} violations"))?;

    let c = corpus(77, 1000, 50, 1.7, 1.0);
    let p = prepared(&c);
    let opts = EvalOptions::default();
    let base = evaluate(&p.samples, &c.vocab, &p.split, 1.0, &opts).map_err(|e| e.to_string())?;
    for &t in &grid {
        let e = evaluate(&p.samples, &c.vocab, &p.split, t, &opts).map_err(|e| e.to_string())?;
        for (a, b) in base.table.rows.iter().zip(&e.table.rows) {
            check(
                (a.vqa_acc - b.vqa_acc).abs() <= 1e-12,
                format!("T {t} {}: {} vs {}", a.set, a.vqa_acc, b.vqa_acc),
            )?;
        }
    }
    Ok("10000 vectors x 39 temperatures, 0 violations; VQA-Acc unchanged at every T".into())
}

fn entropy_monotonicity() -> Outcome {
    let grid = make_grid(0.1, 2.0, 0.05).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..64);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
        let h: Vec<f64> = grid
            .iter()
            .map(|&t| entropy(&apply_temperature(&logits, t).unwrap()))
            .collect();
        violations += h.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
    }
    check(violations == 0, format!("{violations} decreasing steps"))?;
    Ok("1000 vectors, entropy non-decreasing over the grid".into())
}

fn directionality() -> Outcome {
    let start = Instant::now();
    let c = corpus(93, 1000, 50, 3.0, 0.0);
    let (t, before, after) = fit_kl(&c, Objective::MeanKl)?;
    for set in [EvalSet::Low, EvalSet::Medium, EvalSet::High] {
        let (b, a) = (before.row(set).unwrap(), after.row(set).unwrap());
        check(a.tvd < b.tvd, format!("{set} tvd {} -> {}", b.tvd, a.tvd))?;
        check(a.kl < b.kl, format!("{set} kl {} -> {}", b.kl, a.kl))?;
        check(a.entce < b.entce, format!("{set} entce {} -> {}", b.entce, a.entce))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("T {t}: TVD, KL, EntCE lower on low/medium/high, {elapsed:.2?}"))
}

fn hudcalib(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hudcalib"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()),
    )
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("readable output tree") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.insert(rel, fs::read(&path).expect("readable output file"));
            }
        }
    }
    files
}

fn pipeline_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let corpus = root.join("corpus");
    let report = root.join("report");
    hudcalib(&[
        "synth",
        "--seed",
        "2024",
        "--alpha",
        "2.5",
        "--sigma",
        "0.3",
        "-o",
        &s(&corpus),
    ])?;
    let inputs = [
        "--annotations".to_string(),
        s(&corpus.join("annotations.json")),
        "--predictions".into(),
        s(&corpus.join("predictions.jsonl")),
        "--vocab".into(),
        s(&corpus.join("vocab.txt")),
        "-o".into(),
        s(&report),
    ];
    for cmd in ["evaluate", "calibrate"] {
        let mut args = vec![cmd];
        args.extend(inputs.iter().map(String::as_str));
        hudcalib(&args)?;
    }
    Ok(read_tree(root))
}

fn end_to_end(suite_start: Instant) -> Outcome {
    let a = TempDir::new().map_err(|e| e.to_string())?;
    let b = TempDir::new().map_err(|e| e.to_string())?;
    let first = pipeline_tree(a.path())?;
    let second = pipeline_tree(b.path())?;
    check(first.len() >= 14, format!("only {} output files", first.len()))?;
    check(first.keys().eq(second.keys()), "file sets differ")?;
    if let Some(name) = first.keys().find(|k| first[*k] != second[*k]) {
        return Err(format!("{name} differs between runs"));
    }

    let c = corpus(3000, 10_000, 3000, 1.5, 0.5);
    let p = prepared(&c);
    let start = Instant::now();
    let e = evaluate(&p.samples, &c.vocab, &p.split, 1.3, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let rate = e.records.len() as f64 / start.elapsed().as_secs_f64();
    check(rate >= 5000.0, format!("throughput {rate:.0} samples/s at vocab 3000"))?;

    let total = suite_start.elapsed();
    within(total, Duration::from_secs(120))?;
    Ok(format!(
        "{} files identical across runs; {rate:.0} samples/s at vocab 3000; suite {total:.2?}",
        first.len()
    ))
}

fn main() -> ExitCode {
    let suite_start = Instant::now();
    let criteria: [(&str, &dyn Fn() -> Outcome); 10] = [
        ("worked example", &worked_example),
        ("tercile rule", &tercile_rule),
        ("grid fidelity", &grid_fidelity),
        ("metric analytic suite", &metric_suite),
        ("oracle equivalence", &oracle_equivalence),
        ("calibration recovery", &calibration_recovery),
        ("argmax/accuracy invariance", &argmax_invariance),
        ("entropy monotonicity", &entropy_monotonicity),
        ("directionality", &directionality),
        ("end-to-end determinism and throughput", &|| end_to_end(suite_start)),
    ];

    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
