//! Acceptance criteria. Prints one `PASS`, `FAIL` or `SKIP` line per
//! criterion and exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use rubricnet::analysis::{kendall_tau_c, GradeStatistics};
use rubricnet::ingest::LoadOptions;
use rubricnet::model::{decision_boundaries, forward, level_from_boundaries, rescale_aggregate, sigmoid};
use rubricnet::report::parse_json_report;
use rubricnet::score::resolve_tempo;
use rubricnet::training::{gradients, Sample};
use rubricnet::{
    build_report, cross_validate, decode, extract_features, gen_score_corpus, load_corpus, parse_canonical_json,
    parse_musicxml, render, serialize_canonical_json, Descriptor, Format, Hand, SearchSpace, SynthSpec,
    TrainConfig, N_FEATURES,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

fn descriptor_oracles() -> Check {
    let start = Instant::now();
    let mut r = rng(7);
    for i in 0..200 {
        let piece = random_piece(&mut r, &format!("p{i}"));
        let got = extract_features(&piece).map_err(|e| format!("piece {i}: {e}"))?;
        let want = oracle_features(&piece);
        for slot in 0..N_FEATURES {
            let exact = matches!(slot, 2 | 3 | 10 | 11);
            let ok = if exact { got.values[slot] == want[slot] } else { close(got.values[slot], want[slot], 1e-9) };
            ensure(ok, || format!("piece {i} slot {slot}: {} vs {}", got.values[slot], want[slot]))?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("200 pieces, {:.2}s", elapsed.as_secs_f64()))
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let mut r = rng(21);
    let mut worst = 0.0f64;
    for draw in 0..50 {
        let k = r.gen_range(2..=9);
        let params = random_params(&mut r, k);
        let n = r.gen_range(1..16);
        let batch = random_samples(&mut r, n, k);
        let masks: Vec<[f64; N_FEATURES]> = (0..batch.len())
            .map(|_| std::array::from_fn(|_| if r.gen_bool(0.3) { 0.0 } else { 1.0 / 0.7 }))
            .collect();
        let masks = if draw % 2 == 0 { Some(masks.as_slice()) } else { None };
        let (_, analytic) = gradients(&params, &batch, masks).map_err(|e| e.to_string())?;
        worst = worst.max(gradient_check(&params, &batch, masks, &analytic, 1e-5, 1e-6));
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!("max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()))
}

fn ordinal_decode() -> Check {
    let mut r = rng(1);
    for _ in 0..10_000 {
        let len = r.gen_range(0..12);
        let probs: Vec<f64> = (0..len)
            .map(|_| match r.gen_range(0..4) {
                0 => 0.5,
                1 => r.gen_range(0.0..0.5),
                _ => r.gen_range(0.5..1.0),
            })
            .collect();
        ensure(decode(&probs) == oracle_decode(&probs), || format!("decode mismatch on {probs:?}"))?;
    }
    for _ in 0..20 {
        let mut p = random_params(&mut r, 9);
        for w in p.w_f.iter_mut() {
            *w = r.gen_range(0.05..3.0);
        }
        let boundaries = decision_boundaries(&p);
        let mut last = 0;
        for i in 0..1000 {
            let s = -12.0 + 24.0 * i as f64 / 999.0;
            let probs: Vec<f64> = p.w_f.iter().zip(&p.b_f).map(|(w, b)| sigmoid(s * w + b)).collect();
            let level = decode(&probs);
            ensure(level >= last, || format!("level dropped at S_agg={s}"))?;
            ensure(level == level_from_boundaries(&boundaries, s), || format!("boundary mismatch at {s}"))?;
            last = level;
        }
    }
    Ok("10000 vectors, 20 sweeps of 1000 points".into())
}

struct EndToEnd {
    corpus: rubricnet::Corpus,
    samples: Vec<Sample>,
    report: rubricnet::training::CvReport,
    elapsed: Duration,
}

fn run_end_to_end() -> Result<EndToEnd, String> {
    let start = Instant::now();
    let mut corpus = gen_score_corpus(&SynthSpec::default()).map_err(|e| e.to_string())?;
    corpus.ensure_folds(0);
    let samples = corpus.samples().map_err(|e| e.to_string())?;
    let folds = corpus.fold_vector().map_err(|e| e.to_string())?;
    let report = cross_validate(&samples, &folds, 9, &SearchSpace::with_budget(20), &TrainConfig::default())
        .map_err(|e| e.to_string())?;
    Ok(EndToEnd { corpus, samples, report, elapsed: start.elapsed() })
}

fn synthetic_end_to_end(run: &Result<EndToEnd, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let (acc, mse) = (run.report.mean_accuracy, run.report.mean_mse);
    let summary = format!("acc {acc:.3}, mse {mse:.3}, {:.1}s", run.elapsed.as_secs_f64());
    ensure(acc >= 0.90 && mse <= 0.2, || summary.clone())?;
    within(run.elapsed, Duration::from_secs(300))?;
    Ok(summary)
}

fn cipi() -> Outcome {
    let Some(dir) = std::env::var_os("RUBRICNET_CIPI_DIR").map(PathBuf::from) else {
        return Outcome::Skip("RUBRICNET_CIPI_DIR not set".into());
    };
    match cipi_check(&dir) {
        Ok(msg) => Outcome::Pass(msg),
        Err(msg) => Outcome::Fail(msg),
    }
}

fn cipi_check(dir: &Path) -> Check {
    let corpus = load_corpus(&dir.join("scores"), &dir.join("labels.csv"), &LoadOptions::new(9)).map_err(|e| e.to_string())?;
    let samples = corpus.samples().map_err(|e| e.to_string())?;
    let folds = corpus.fold_vector().map_err(|e| e.to_string())?;
    let report = cross_validate(&samples, &folds, 9, &SearchSpace::with_budget(50), &TrainConfig::default())
        .map_err(|e| e.to_string())?;
    let entropy: Vec<f64> = samples.iter().map(|s| s.features[Descriptor::PitchEntropy.slot(Hand::Right)]).collect();
    let labels: Vec<f64> = samples.iter().map(|s| s.level as f64).collect();
    let tau = kendall_tau_c(&entropy, &labels).map_err(|e| e.to_string())?;
    let acc = 100.0 * report.mean_accuracy;
    let summary = format!("acc {acc:.1}, pitch entropy (R) tau-c {tau:.3}");
    ensure((35.2..=47.6).contains(&acc) && (tau - 0.583).abs() <= 0.05, || summary.clone())?;
    Ok(summary)
}

fn tau_c_correctness() -> Check {
    let mut r = rng(31);
    for set in 0..100 {
        let n = r.gen_range(2..60);
        let mx = r.gen_range(1..6);
        let my = r.gen_range(2..10);
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(0..mx) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(0..my) as f64).collect();
        let got = kendall_tau_c(&x, &y).map_err(|e| e.to_string())?;
        let want = oracle_tau_c(&x, &y);
        ensure((got - want).abs() <= 1e-12, || format!("set {set}: {got} vs {want}"))?;
    }
    let up: Vec<f64> = (0..20).map(f64::from).collect();
    let down: Vec<f64> = up.iter().rev().copied().collect();
    let same = kendall_tau_c(&up, &up).map_err(|e| e.to_string())?;
    let reversed = kendall_tau_c(&up, &down).map_err(|e| e.to_string())?;
    ensure(same == 1.0 && reversed == -1.0, || format!("extremes {same}, {reversed}"))?;
    Ok("100 tied datasets, extremes exact".into())
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rubricnet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("rubricnet {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).unwrap_or_default();
                files.push((path.strip_prefix(root).unwrap_or(&path).to_path_buf(), bytes));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    run_cli(&["synth", "--out", &path("corpus")])?;
    let (scores, labels) = (path("corpus/scores"), path("corpus/labels.csv"));
    for (out, jobs) in [("a", "1"), ("b", "4")] {
        run_cli(&[
            "evaluate", "--seed", "0", "--jobs", jobs, "--scores", &scores, "--labels", &labels, "--budget", "3",
            "--out", &path(out),
        ])?;
    }
    let (a, b) = (tree_bytes(&tmp.path().join("a")), tree_bytes(&tmp.path().join("b")));
    let checkpoints = a.iter().filter(|(p, _)| p.ends_with("checkpoint.json")).count();
    ensure(checkpoints == 5, || format!("{checkpoints} checkpoints written"))?;
    ensure(a.iter().any(|(p, _)| p == Path::new("metrics.csv")), || "no metrics.csv".into())?;
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        ensure(pa == pb && ba == bb, || format!("{} differs", pa.display()))?;
    }
    ensure(a.len() == b.len(), || "output trees differ".into())?;
    Ok(format!("{} files byte-identical", a.len()))
}

fn rubric_integrity(run: &Result<EndToEnd, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let mut checked = 0;
    for fold in &run.report.folds {
        let params = &fold.search.report.params;
        let train: Vec<Sample> = fold.train_indices.iter().map(|&i| run.samples[i]).collect();
        let stats = GradeStatistics::compute(params, &train).map_err(|e| e.to_string())?;
        for &i in &fold.test_indices {
            let piece = &run.corpus.pieces[i];
            let report = build_report(params, piece, &stats).map_err(|e| e.to_string())?;
            let trace = forward(params, &extract_features(piece).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let id = &piece.id;
            ensure((0.0..=12.0).contains(&report.aggregated_score), || format!("{id}: score out of range"))?;
            ensure(report.aggregated_score == rescale_aggregate(trace.s_agg, N_FEATURES), || {
                format!("{id}: score is not the rescaled aggregate")
            })?;
            ensure(report.predicted_level == decode(&trace.probs), || format!("{id}: level mismatch"))?;
            let back = parse_json_report(&render(&report, Format::Json)).map_err(|e| e.to_string())?;
            ensure(back == report, || format!("{id}: JSON report does not round-trip"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} test pieces"))
}

fn ingest() -> Check {
    let mut r = rng(41);
    for i in 0..100 {
        let piece = random_piece(&mut r, &format!("gen{i:03}"));
        let bytes = serialize_canonical_json(&piece);
        let back = parse_canonical_json(&bytes).map_err(|e| e.to_string())?;
        ensure(back == piece, || format!("gen{i:03} does not round-trip"))?;
    }
    let minuet = parse_musicxml(include_bytes!("../../core/tests/fixtures/minuet.musicxml"), "minuet")
        .map_err(|e| e.to_string())?;
    let golden = parse_canonical_json(include_bytes!("../../core/tests/fixtures/minuet.golden.json"))
        .map_err(|e| e.to_string())?;
    ensure(minuet == golden, || "MusicXML fixture differs from its golden events".into())?;
    let duet = parse_musicxml(include_bytes!("../../core/tests/fixtures/duet_no_tempo.musicxml"), "duet")
        .map_err(|e| e.to_string())?;
    let bpm = resolve_tempo(&duet).map_err(|e| e.to_string())?;
    ensure(duet.tempo_bpm.is_none() && bpm == 100.0, || format!("missing tempo resolved to {bpm}"))?;
    Ok("100 round-trips, fixture golden, default tempo 100 bpm".into())
}

fn outcome(check: Check) -> Outcome {
    match check {
        Ok(msg) => Outcome::Pass(msg),
        Err(msg) => Outcome::Fail(msg),
    }
}

fn main() {
    let end_to_end = run_end_to_end();
    let results: Vec<(&str, Outcome)> = vec![
        ("descriptor oracles", outcome(descriptor_oracles())),
        ("gradient correctness", outcome(gradient_correctness())),
        ("ordinal decode", outcome(ordinal_decode())),
        ("synthetic end-to-end", outcome(synthetic_end_to_end(&end_to_end))),
        ("CIPI reproduction", cipi()),
        ("tau-c correctness", outcome(tau_c_correctness())),
        ("determinism", outcome(determinism())),
        ("rubric integrity", outcome(rubric_integrity(&end_to_end))),
        ("ingest", outcome(ingest())),
    ];
    let mut failed = false;
    for (i, (name, result)) in results.iter().enumerate() {
        let (tag, msg) = match result {
            Outcome::Pass(m) => ("PASS", m),
            Outcome::Fail(m) => {
                failed = true;
                ("FAIL", m)
            }
            Outcome::Skip(m) => ("SKIP", m),
        };
        println!("{tag} {} {name}: {msg}", i + 1);
    }
    if failed {
        std::process::exit(1);
    }
}
