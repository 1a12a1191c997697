use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;

use rubricnet::analysis::{
    agglomerative_cluster, columns, conditional_tau_matrix, correlation_to_distance, feature_difficulty_table,
    grade_contributions, GradeStatistics,
};
use rubricnet::descriptors::{read_feature_table, write_feature_table, FeatureRow};
use rubricnet::ingest::{assign_folds, find_score_file, parse_score_file, read_labels, LoadOptions};
use rubricnet::model::{load_checkpoint, rescale_aggregate, save_checkpoint};
use rubricnet::training::{fold_split, metrics_csv, predict_all, CvReport, Sample, N_FOLDS};
use rubricnet::{
    build_report, cross_validate, extract_features, forward, load_corpus, random_search, render, synth, Format, Head,
    ModelParams, SearchSpace, SynthMode, SynthSpec, TrainConfig, FEATURE_NAMES, N_FEATURES,
};

use crate::{plots, Cli, Command, DataArgs, HeadArg, OutputFormat, SearchArgs, SynthModeArg};

pub const CACHE_ENV: &str = "RUBRICNET_CACHE";

/// An error with its process exit code.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let numeric = error
            .chain()
            .any(|c| matches!(c.downcast_ref::<rubricnet::Error>(), Some(rubricnet::Error::Numeric(_))));
        Failure {
            code: if numeric { 3 } else { 2 },
            error,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        error: anyhow!(msg.into()),
    }
}

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(cli: Cli) -> Outcome {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    let seed = cli.seed;
    let format = cli.format;
    match cli.command {
        Command::Extract { scores, labels, k, out } => extract(&scores, labels.as_deref(), k, &out),
        Command::Train {
            data,
            search,
            val_fold,
            out,
        } => train(&data, &search, val_fold, seed, &out),
        Command::Evaluate { data, search, out } => evaluate(&data, &search, seed, &out),
        Command::Predict { checkpoint, k, pieces } => predict(&checkpoint, k, &pieces, format),
        Command::Explain {
            checkpoint,
            stats,
            piece,
            out,
        } => explain(&checkpoint, &stats, &piece, out.as_deref(), format),
        Command::Analyze {
            features,
            checkpoint,
            cv_dir,
            k,
            out,
        } => analyze(&features, &checkpoint, cv_dir.as_deref(), k, &out),
        Command::Synth {
            out,
            k,
            n_per_class,
            noise,
            mode,
        } => synthesize(&out, k, n_per_class, noise, mode, seed),
    }
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut bytes = serde_json::to_vec_pretty(value).context("serializing JSON")?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn read(path: &Path) -> Outcome<Vec<u8>> {
    Ok(fs::read(path).with_context(|| format!("reading {}", path.display()))?)
}

fn read_checkpoint(path: &Path, k: Option<u32>) -> Outcome<ModelParams> {
    Ok(load_checkpoint(&read(path)?, k).with_context(|| format!("loading checkpoint {}", path.display()))?)
}

fn read_features(path: &Path) -> Outcome<Vec<FeatureRow>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_feature_table(file).with_context(|| format!("reading feature table {}", path.display()))?)
}

fn labeled_samples(rows: &[FeatureRow], k: u32) -> Outcome<Vec<Sample>> {
    rows.iter()
        .map(|r| {
            let level = r.label.ok_or_else(|| anyhow!("row `{}` has no label", r.id))?;
            if level < 1 || level > k {
                return Err(anyhow!("row `{}`: level {level} outside [1, {k}]", r.id).into());
            }
            Ok(Sample {
                features: r.features.values,
                level,
            })
        })
        .collect()
}

/// Labeled samples with ids and fold assignment.
struct Dataset {
    ids: Vec<String>,
    samples: Vec<Sample>,
    folds: Vec<usize>,
}

fn load_dataset(data: &DataArgs, seed: u64) -> Outcome<Dataset> {
    if data.k < 2 {
        return Err(usage("--k must be at least 2"));
    }
    match (&data.scores, &data.labels, &data.features) {
        (Some(scores), Some(labels), None) => {
            let options = LoadOptions {
                k: data.k,
                seed,
                cache_dir: cache_dir(),
            };
            let corpus = load_corpus(scores, labels, &options)?;
            Ok(Dataset {
                ids: corpus.pieces.iter().map(|p| p.id.clone()).collect(),
                samples: corpus.samples()?,
                folds: corpus.fold_vector()?,
            })
        }
        (None, None, Some(features)) => {
            let rows = read_features(features)?;
            if rows.is_empty() {
                return Err(anyhow!("{} has no rows", features.display()).into());
            }
            let samples = labeled_samples(&rows, data.k)?;
            let labels: Vec<(String, u32)> = rows.iter().zip(&samples).map(|(r, s)| (r.id.clone(), s.level)).collect();
            let assignment = assign_folds(&labels, seed);
            Ok(Dataset {
                folds: labels.iter().map(|(id, _)| assignment[id]).collect(),
                ids: labels.into_iter().map(|(id, _)| id).collect(),
                samples,
            })
        }
        _ => Err(usage("give either --scores with --labels, or --features")),
    }
}

fn search_setup(args: &SearchArgs, seed: u64) -> Outcome<(SearchSpace, TrainConfig)> {
    if args.budget == 0 {
        return Err(usage("--budget must be at least 1"));
    }
    let base = TrainConfig {
        max_epochs: args.max_epochs,
        patience: args.patience,
        seed,
        head: match args.head {
            HeadArg::Ordinal => Head::Ordinal,
            HeadArg::OneHot => Head::OneHot,
        },
        ..TrainConfig::default()
    };
    base.validate().map_err(|e| usage(e.to_string()))?;
    Ok((SearchSpace::with_budget(args.budget), base))
}

fn extract(scores: &Path, labels: Option<&Path>, k: u32, out: &Path) -> Outcome {
    if !scores.is_dir() {
        return Err(anyhow!("{} is not a directory", scores.display()).into());
    }
    let entries: Vec<(String, Option<u32>)> = match labels {
        Some(path) => read_labels(path, k)?.into_iter().map(|r| (r.id, Some(r.level))).collect(),
        None => {
            let mut ids: Vec<String> = fs::read_dir(scores)
                .with_context(|| format!("listing {}", scores.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.is_file()
                        && matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "musicxml" | "xml"))
                })
                .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
                .collect();
            ids.sort();
            ids.dedup();
            ids.into_iter().map(|id| (id, None)).collect()
        }
    };
    if entries.is_empty() {
        return Err(anyhow!("no scores found in {}", scores.display()).into());
    }
    let cache = cache_dir();
    let results: Vec<Result<FeatureRow, String>> = entries
        .par_iter()
        .map(|(id, level)| {
            let path = find_score_file(scores, id).ok_or_else(|| format!("{id}: no score file"))?;
            let piece = parse_score_file(&path, cache.as_deref()).map_err(|e| format!("{}: {e}", path.display()))?;
            if let (Some(l), Some(p)) = (level, piece.label) {
                if *l != p {
                    return Err(format!("{id}: label {p} in score, {l} in labels file"));
                }
            }
            let features = extract_features(&piece).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(FeatureRow {
                id: id.clone(),
                label: level.or(piece.label),
                features,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("  {f}");
        }
        return Err(anyhow!("{} of {} scores failed; no output written", failures.len(), entries.len()).into());
    }
    let mut buf = Vec::new();
    write_feature_table(&rows, &mut buf)?;
    write_file(out, &buf)?;
    eprintln!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn subset(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i]).collect()
}

fn train(data: &DataArgs, search: &SearchArgs, val_fold: usize, seed: u64, out: &Path) -> Outcome {
    if val_fold >= N_FOLDS {
        return Err(usage(format!("--val-fold must be below {N_FOLDS}")));
    }
    let (space, base) = search_setup(search, seed)?;
    let ds = load_dataset(data, seed)?;
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = (0..ds.samples.len()).partition(|&i| ds.folds[i] != val_fold);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(anyhow!("fold {val_fold} leaves an empty training or validation split").into());
    }
    let train_set = subset(&ds.samples, &train_idx);
    let val_set = subset(&ds.samples, &val_idx);
    let result = random_search(&space, &train_set, &val_set, data.k, &base)?;
    let params = &result.report.params;
    write_file(&out.join("checkpoint.json"), &save_checkpoint(params)?)?;
    write_json(&out.join("grade_stats.json"), &GradeStatistics::compute(params, &train_set)?)?;
    write_json(&out.join("search.json"), &result)?;
    println!(
        "validation macro accuracy {:.4}, macro MSE {:.4} (trial {} of {})",
        result.report.best_val_accuracy,
        result.report.best_val_mse,
        result.best_index,
        space.budget
    );
    Ok(())
}

#[derive(Serialize)]
struct FoldSummary<'a> {
    fold: usize,
    test_accuracy: f64,
    test_mse: f64,
    confusion: &'a [Vec<u64>],
    best_trial: usize,
    config: &'a TrainConfig,
    best_epoch: usize,
    stopping_epoch: usize,
}

#[derive(Serialize)]
struct CvSummary<'a> {
    k: u32,
    mean_accuracy: f64,
    std_accuracy: f64,
    mean_mse: f64,
    std_mse: f64,
    folds: Vec<FoldSummary<'a>>,
}

fn cv_summary(report: &CvReport) -> CvSummary<'_> {
    CvSummary {
        k: report.k,
        mean_accuracy: report.mean_accuracy,
        std_accuracy: report.std_accuracy,
        mean_mse: report.mean_mse,
        std_mse: report.std_mse,
        folds: report
            .folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold,
                test_accuracy: f.test_accuracy,
                test_mse: f.test_mse,
                confusion: &f.confusion,
                best_trial: f.search.best_index,
                config: &f.search.report.config,
                best_epoch: f.search.report.best_epoch,
                stopping_epoch: f.search.report.stopping_epoch,
            })
            .collect(),
    }
}

fn evaluate(data: &DataArgs, search: &SearchArgs, seed: u64, out: &Path) -> Outcome {
    let (space, base) = search_setup(search, seed)?;
    let ds = load_dataset(data, seed)?;
    let report = cross_validate(&ds.samples, &ds.folds, data.k, &space, &base)?;
    let mut predictions = String::from("id,fold,level,predicted\n");
    for f in &report.folds {
        let dir = out.join(format!("fold{}", f.fold));
        let params = &f.search.report.params;
        write_file(&dir.join("checkpoint.json"), &save_checkpoint(params)?)?;
        let (train_idx, _, _) = fold_split(&ds.folds, f.fold);
        write_json(&dir.join("grade_stats.json"), &GradeStatistics::compute(params, &subset(&ds.samples, &train_idx))?)?;
        write_json(&dir.join("search.json"), &f.search)?;
        let test = subset(&ds.samples, &f.test_indices);
        for (i, pred) in f.test_indices.iter().zip(predict_all(params, &test)) {
            predictions.push_str(&format!("{},{},{},{pred}\n", ds.ids[*i], f.fold, ds.samples[*i].level));
        }
    }
    let metrics = metrics_csv(&report);
    write_file(&out.join("metrics.csv"), metrics.as_bytes())?;
    write_file(&out.join("predictions.csv"), predictions.as_bytes())?;
    write_json(&out.join("cv_report.json"), &cv_summary(&report))?;
    if let Some(summary) = metrics.lines().last() {
        println!("{summary}");
    }
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    id: String,
    level: u32,
    aggregated_score: f64,
}

fn predict(checkpoint: &Path, k: Option<u32>, pieces: &[PathBuf], format: Option<OutputFormat>) -> Outcome {
    let format = format.unwrap_or(OutputFormat::Csv);
    if !matches!(format, OutputFormat::Csv | OutputFormat::Json) {
        return Err(usage("predict supports --format csv or json"));
    }
    let params = read_checkpoint(checkpoint, k)?;
    let cache = cache_dir();
    let predictions = pieces
        .par_iter()
        .map(|path| {
            let piece = parse_score_file(path, cache.as_deref()).with_context(|| format!("{}", path.display()))?;
            let trace = forward(&params, &extract_features(&piece)?)?;
            Ok(Prediction {
                level: rubricnet::model::predict_level(&params, &trace),
                aggregated_score: rescale_aggregate(trace.s_agg, N_FEATURES),
                id: piece.id,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    match format {
        OutputFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&predictions).context("serializing predictions")?);
        }
        _ => {
            println!("id,level,aggregated_score");
            for p in &predictions {
                println!("{},{},{}", p.id, p.level, p.aggregated_score);
            }
        }
    }
    Ok(())
}

fn explain(checkpoint: &Path, stats: &Path, piece: &Path, out: Option<&Path>, format: Option<OutputFormat>) -> Outcome {
    let format = match format.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => Format::Json,
        OutputFormat::Markdown => Format::Markdown,
        OutputFormat::Html => Format::Html,
        OutputFormat::Csv => return Err(usage("explain supports --format json, markdown or html")),
    };
    let params = read_checkpoint(checkpoint, None)?;
    let stats: GradeStatistics = serde_json::from_slice(&read(stats)?)
        .with_context(|| format!("parsing grade statistics {}", stats.display()))?;
    let piece = parse_score_file(piece, cache_dir().as_deref()).with_context(|| format!("{}", piece.display()))?;
    if let Some(level) = piece.label.filter(|l| *l > params.k) {
        return Err(anyhow!("piece is labeled {level} but the checkpoint has K={}", params.k).into());
    }
    let report = build_report(&params, &piece, &stats)?;
    let bytes = render(&report, format);
    match out {
        Some(path) => write_file(path, &bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes).context("writing to stdout")?;
            Ok(())
        }
    }
}

fn contribution_splits(
    rows: &[FeatureRow],
    samples: &[Sample],
    checkpoints: &[PathBuf],
    cv_dir: Option<&Path>,
    k: u32,
) -> Outcome<Vec<(ModelParams, Vec<Sample>)>> {
    if let Some(dir) = cv_dir {
        let by_id: HashMap<&str, Sample> = rows.iter().map(|r| r.id.as_str()).zip(samples.iter().copied()).collect();
        let predictions = String::from_utf8(read(&dir.join("predictions.csv"))?).context("predictions.csv is not UTF-8")?;
        let mut test_ids: Vec<Vec<&str>> = vec![Vec::new(); N_FOLDS];
        for (n, line) in predictions.lines().enumerate().skip(1) {
            let mut fields = line.split(',');
            let (Some(id), Some(fold)) = (fields.next(), fields.next()) else {
                return Err(anyhow!("predictions.csv:{}: malformed row", n + 1).into());
            };
            let fold: usize = fold
                .parse()
                .ok()
                .filter(|f| *f < N_FOLDS)
                .ok_or_else(|| anyhow!("predictions.csv:{}: bad fold `{fold}`", n + 1))?;
            test_ids[fold].push(id);
        }
        return (0..N_FOLDS)
            .map(|f| {
                let params = read_checkpoint(&dir.join(format!("fold{f}")).join("checkpoint.json"), Some(k))?;
                let test = test_ids[f]
                    .iter()
                    .map(|id| by_id.get(id).copied().ok_or_else(|| anyhow!("`{id}` is not in the feature table")))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                Ok((params, test))
            })
            .collect();
    }
    checkpoints
        .iter()
        .map(|c| Ok((read_checkpoint(c, Some(k))?, samples.to_vec())))
        .collect()
}

fn analyze(features: &Path, checkpoints: &[PathBuf], cv_dir: Option<&Path>, k: u32, out: &Path) -> Outcome {
    let rows = read_features(features)?;
    if rows.len() < 2 {
        return Err(anyhow!("{} needs at least two rows", features.display()).into());
    }
    let samples = labeled_samples(&rows, k)?;
    let labels: Vec<u32> = samples.iter().map(|s| s.level).collect();
    let matrix: Vec<[f64; N_FEATURES]> = samples.iter().map(|s| s.features).collect();

    let table = feature_difficulty_table(&matrix, &labels)?;
    write_file(&out.join("correlations.csv"), table.to_csv().as_bytes())?;
    let bars: Vec<(String, f64)> = table.entries.iter().map(|e| (e.feature.clone(), e.tau_c)).collect();
    write_file(&out.join("correlations.svg"), plots::bar_chart(&bars, "Kendall tau-c with difficulty").as_bytes())?;

    let cols = columns(&matrix);
    let corr = conditional_tau_matrix(&cols, &labels)?;
    let mut csv = String::from("feature");
    for name in FEATURE_NAMES {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for (name, row) in FEATURE_NAMES.iter().zip(&corr) {
        csv.push_str(name);
        for v in row {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    write_file(&out.join("conditional_tau.csv"), csv.as_bytes())?;
    let dendrogram = agglomerative_cluster(&correlation_to_distance(&corr)?, &FEATURE_NAMES)?;
    write_json(&out.join("dendrogram.json"), &dendrogram)?;
    write_file(&out.join("dendrogram.svg"), plots::dendrogram(&dendrogram).as_bytes())?;

    let splits = contribution_splits(&rows, &samples, checkpoints, cv_dir, k)?;
    if !splits.is_empty() {
        let refs: Vec<(&ModelParams, &[Sample])> = splits.iter().map(|(p, s)| (p, s.as_slice())).collect();
        let profile = grade_contributions(&refs)?;
        write_file(&out.join("contributions.csv"), profile.to_csv().as_bytes())?;
        write_file(&out.join("contributions.svg"), plots::contributions(&profile).as_bytes())?;
    }
    eprintln!("wrote analysis to {}", out.display());
    Ok(())
}

fn synthesize(out: &Path, k: u32, n_per_class: usize, noise: f64, mode: SynthModeArg, seed: u64) -> Outcome {
    let mode = match mode {
        SynthModeArg::Score => SynthMode::ScoreLevel,
        SynthModeArg::Feature => SynthMode::FeatureLevel,
    };
    let spec = SynthSpec {
        k,
        n_per_class,
        seed,
        mode,
        noise,
    };
    if k < 2 || n_per_class == 0 || !(noise.is_finite() && noise >= 0.0) {
        return Err(usage("synth needs --k >= 2, --n-per-class >= 1 and --noise >= 0"));
    }
    match mode {
        SynthMode::ScoreLevel => {
            let corpus = rubricnet::gen_score_corpus(&spec)?;
            synth::write_corpus(&corpus, out)?;
            eprintln!("wrote {} scores to {}", corpus.pieces.len(), out.join("scores").display());
        }
        SynthMode::FeatureLevel => {
            let samples = rubricnet::gen_feature_dataset(&spec)?;
            let mut buf = Vec::new();
            write_feature_table(&synth::feature_rows(&samples), &mut buf)?;
            write_file(&out.join("features.csv"), &buf)?;
            eprintln!("wrote {} feature rows to {}", samples.len(), out.join("features.csv").display());
        }
    }
    Ok(())
}
