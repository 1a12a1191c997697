//! Training: ordinal targets, analytic gradients, Adam, inverted input
//! dropout, early stopping with plateau learning-rate decay, seeded random
//! hyperparameter search and 5-fold cross-validation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::N_FEATURES;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{forward_standardized, predict_level, Head, ModelParams, Scaler};

pub const N_FOLDS: usize = 5;

/// One labeled feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: [f64; N_FEATURES],
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub lr_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    #[serde(default)]
    pub head: Head,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 32,
            dropout_rate: 0.1,
            lr_decay: 0.5,
            max_epochs: 300,
            patience: 30,
            seed: 0,
            head: Head::Ordinal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Fit(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        Ok(())
    }
}

/// Hyperparameter ranges sampled by [`random_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub batch_size: (usize, usize),
    pub dropout_rate: (f64, f64),
    pub lr_decay: (f64, f64),
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
    pub budget: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            batch_size: (16, 128),
            dropout_rate: (0.1, 0.5),
            lr_decay: (0.1, 0.9),
            learning_rate: (1e-5, 1e-1),
            budget: 50,
        }
    }
}

impl SearchSpace {
    pub fn with_budget(budget: usize) -> Self {
        SearchSpace {
            budget,
            ..SearchSpace::default()
        }
    }

    /// Draw trial `index`; depends only on `(seed, index)`.
    pub fn sample(&self, base: &TrainConfig, index: usize) -> TrainConfig {
        let trial_seed = derive_seed(base.seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let (lr_lo, lr_hi) = self.learning_rate;
        TrainConfig {
            batch_size: rng.gen_range(self.batch_size.0..=self.batch_size.1),
            dropout_rate: rng.gen_range(self.dropout_rate.0..self.dropout_rate.1),
            lr_decay: rng.gen_range(self.lr_decay.0..self.lr_decay.1),
            learning_rate: rng.gen_range(lr_lo.ln()..lr_hi.ln()).exp(),
            seed: trial_seed,
            ..base.clone()
        }
    }
}

/// SplitMix64 finalizer over `seed ^ stream`, for independent child seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `level - 1` leading ones followed by zeros, length `k - 1`.
pub fn encode_ordinal(level: u32, k: u32) -> Result<Vec<f64>> {
    if k < 2 || level < 1 || level > k {
        return Err(Error::LevelOutOfRange { level, k });
    }
    Ok((1..k).map(|i| if i < level { 1.0 } else { 0.0 }).collect())
}

pub fn ordinal_mse_loss(probs: &[f64], target: &[f64]) -> Result<f64> {
    if probs.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            actual: probs.len(),
        });
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = probs.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / probs.len() as f64)
}

fn check_level(level: u32, k: u32) -> Result<()> {
    if level < 1 || level > k {
        Err(Error::LevelOutOfRange { level, k })
    } else {
        Ok(())
    }
}

/// Standardize, then apply the dropout multiplier if any.
fn model_input(params: &ModelParams, sample: &Sample, mask: Option<&[f64; N_FEATURES]>) -> [f64; N_FEATURES] {
    let mut x = params.scaler.transform(&sample.features);
    if let Some(m) = mask {
        for (v, m) in x.iter_mut().zip(m) {
            *v *= m;
        }
    }
    x
}

fn sample_loss(params: &ModelParams, x: &[f64; N_FEATURES], level: u32) -> f64 {
    let trace = forward_standardized(params, x);
    match params.head {
        Head::Ordinal => {
            let t = encode_ordinal(level, params.k).expect("level checked by caller");
            ordinal_mse_loss(&trace.probs, &t).expect("lengths agree")
        }
        Head::OneHot => -trace.probs[level as usize - 1].max(f64::MIN_POSITIVE).ln(),
    }
}

/// Mean loss over `batch`; `masks[i]` multiplies the standardized input of sample `i`.
pub fn batch_loss(params: &ModelParams, batch: &[Sample], masks: Option<&[[f64; N_FEATURES]]>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Fit("empty batch".into()));
    }
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        check_level(s.level, params.k)?;
        let x = model_input(params, s, masks.map(|m| &m[i]));
        total += sample_loss(params, &x, s.level);
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of [`batch_loss`] with respect to the flattened
/// trainable parameters (`w ++ b ++ w_f ++ b_f`). Returns `(loss, gradient)`.
pub fn gradients(
    params: &ModelParams,
    batch: &[Sample],
    masks: Option<&[[f64; N_FEATURES]]>,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Fit("empty batch".into()));
    }
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(Error::LengthMismatch {
                expected: batch.len(),
                actual: m.len(),
            });
        }
    }
    let n_out = params.w_f.len();
    let mut g_w = [0.0; N_FEATURES];
    let mut g_b = [0.0; N_FEATURES];
    let mut g_wf = vec![0.0; n_out];
    let mut g_bf = vec![0.0; n_out];
    let mut total = 0.0;
    let mut delta = vec![0.0; n_out];

    for (i, s) in batch.iter().enumerate() {
        check_level(s.level, params.k)?;
        let x = model_input(params, s, masks.map(|m| &m[i]));
        let trace = forward_standardized(params, &x);
        // dL/d(logit_j)
        match params.head {
            Head::Ordinal => {
                let t = encode_ordinal(s.level, params.k)?;
                let scale = 2.0 / n_out as f64;
                for j in 0..n_out {
                    let p = trace.probs[j];
                    delta[j] = scale * (p - t[j]) * p * (1.0 - p);
                }
                total += ordinal_mse_loss(&trace.probs, &t)?;
            }
            Head::OneHot => {
                let y = s.level as usize - 1;
                for j in 0..n_out {
                    delta[j] = trace.probs[j] - if j == y { 1.0 } else { 0.0 };
                }
                total += -trace.probs[y].max(f64::MIN_POSITIVE).ln();
            }
        }
        let mut d_sagg = 0.0;
        for j in 0..n_out {
            g_wf[j] += delta[j] * trace.s_agg;
            g_bf[j] += delta[j];
            d_sagg += delta[j] * params.w_f[j];
        }
        for f in 0..N_FEATURES {
            let s_f = trace.scores[f];
            let dz = d_sagg * (1.0 - s_f * s_f);
            g_w[f] += dz * x[f];
            g_b[f] += dz;
        }
    }

    let n = batch.len() as f64;
    let mut grad = Vec::with_capacity(params.n_trainable());
    grad.extend(g_w.iter().map(|g| g / n));
    grad.extend(g_b.iter().map(|g| g / n));
    grad.extend(g_wf.iter().map(|g| g / n));
    grad.extend(g_bf.iter().map(|g| g / n));
    Ok((total / n, grad))
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            expected: state.m.len(),
            actual: grads.len(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_mse: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    /// Training loss of the initial parameters.
    pub initial_train_loss: f64,
    /// Epoch of the kept checkpoint (0 = initial parameters).
    pub best_epoch: usize,
    pub stopping_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_val_mse: f64,
}

/// Predicted levels for `samples` (no dropout).
pub fn predict_all(params: &ModelParams, samples: &[Sample]) -> Vec<u32> {
    samples
        .iter()
        .map(|s| predict_level(params, &forward_standardized(params, &params.scaler.transform(&s.features))))
        .collect()
}

fn evaluate_split(params: &ModelParams, samples: &[Sample]) -> Result<(f64, f64, f64)> {
    let pred = predict_all(params, samples);
    let truth: Vec<u32> = samples.iter().map(|s| s.level).collect();
    Ok((
        metrics::macro_accuracy(&pred, &truth, params.k)?,
        metrics::macro_mse(&pred, &truth, params.k)?,
        batch_loss(params, samples, None)?,
    ))
}

fn improves(acc: f64, mse: f64, best_acc: f64, best_mse: f64) -> bool {
    acc > best_acc || (acc == best_acc && mse < best_mse)
}

/// Train one model. The scaler is fitted on `train` only.
pub fn fit(train: &[Sample], val: &[Sample], config: &TrainConfig, k: u32) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Fit("train and validation sets must be non-empty".into()));
    }
    if k < 2 {
        return Err(Error::Fit(format!("K must be >= 2, got {k}")));
    }
    for s in train.iter().chain(val) {
        check_level(s.level, k)?;
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature in training data".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::zeros_with_head(k, config.head);
    let rows: Vec<[f64; N_FEATURES]> = train.iter().map(|s| s.features).collect();
    params.scaler = Scaler::fit(&rows);
    let init: Vec<f64> = (0..params.n_trainable())
        .map(|_| rng.gen_range(-0.1..0.1))
        .collect();
    params.set_flat(&init);

    let initial_train_loss = batch_loss(&params, train, None)?;
    let (mut best_acc, mut best_mse, mut best_val_loss) = evaluate_split(&params, val)?;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut since_improvement = 0;
    let mut plateau = 0;
    let decay_after = config.patience.div_ceil(2);

    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut lr = config.learning_rate;
    let keep = 1.0 - config.dropout_rate;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| train[i]).collect();
            let masks: Vec<[f64; N_FEATURES]> = (0..batch.len())
                .map(|_| {
                    std::array::from_fn(|_| {
                        if config.dropout_rate > 0.0 && rng.gen::<f64>() < config.dropout_rate {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                })
                .collect();
            let (_, grad) = gradients(&params, &batch, Some(&masks))?;
            adam_step(&mut adam, &mut flat, &grad, lr)?;
            params.set_flat(&flat);
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameters diverged at epoch {epoch}")));
        }

        let train_loss = batch_loss(&params, train, None)?;
        let (acc, mse, val_loss) = evaluate_split(&params, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: acc,
            val_mse: mse,
            learning_rate: lr,
        });

        if improves(acc, mse, best_acc, best_mse) {
            best_acc = acc;
            best_mse = mse;
            best_params = params.clone();
            best_epoch = epoch;
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            plateau = 0;
        } else {
            plateau += 1;
            if plateau >= decay_after {
                lr *= config.lr_decay;
                plateau = 0;
            }
        }

        if since_improvement >= config.patience {
            break;
        }
    }

    Ok(TrainReport {
        params: best_params,
        config: config.clone(),
        stopping_epoch: history.len(),
        history,
        initial_train_loss,
        best_epoch,
        best_val_accuracy: best_acc,
        best_val_mse: best_mse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub index: usize,
    pub config: TrainConfig,
    pub val_accuracy: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_index: usize,
    pub report: TrainReport,
    pub trials: Vec<TrialSummary>,
}

impl SearchResult {
    pub fn config(&self) -> &TrainConfig {
        &self.report.config
    }
}

/// Train `space.budget` seeded trials and keep the one with the best
/// validation macro-accuracy (lower macro-MSE, then lower index, breaks ties).
pub fn random_search(
    space: &SearchSpace,
    train: &[Sample],
    val: &[Sample],
    k: u32,
    base: &TrainConfig,
) -> Result<SearchResult> {
    if space.budget == 0 {
        return Err(Error::Fit("search budget must be >= 1".into()));
    }
    let reports: Vec<TrainReport> = (0..space.budget)
        .into_par_iter()
        .map(|i| fit(train, val, &space.sample(base, i), k))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, r) in reports.iter().enumerate().skip(1) {
        let b = &reports[best];
        if improves(r.best_val_accuracy, r.best_val_mse, b.best_val_accuracy, b.best_val_mse) {
            best = i;
        }
    }
    let trials = reports
        .iter()
        .enumerate()
        .map(|(index, r)| TrialSummary {
            index,
            config: r.config.clone(),
            val_accuracy: r.best_val_accuracy,
            val_mse: r.best_val_mse,
        })
        .collect();
    let report = reports.into_iter().nth(best).expect("budget >= 1");
    Ok(SearchResult {
        best_index: best,
        report,
        trials,
    })
}

/// Indices of (train, validation, test) for fold `f`: test is fold `f`,
/// validation is fold `f + 1 (mod 5)`, train is everything else.
pub fn fold_split(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let val_fold = (f + 1) % N_FOLDS;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (i, &fold) in folds.iter().enumerate() {
        if fold == f {
            test.push(i);
        } else if fold == val_fold {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_accuracy: f64,
    pub test_mse: f64,
    pub confusion: Vec<Vec<u64>>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub search: SearchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: u32,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_mse: f64,
    pub std_mse: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Five-fold evaluation: per fold, search on train/validation and score the
/// selected model on the held-out fold.
pub fn cross_validate(
    samples: &[Sample],
    folds: &[usize],
    k: u32,
    space: &SearchSpace,
    base: &TrainConfig,
) -> Result<CvReport> {
    if folds.len() != samples.len() {
        return Err(Error::Fit(format!(
            "fold assignment covers {} of {} samples",
            folds.len(),
            samples.len()
        )));
    }
    if let Some(f) = folds.iter().find(|f| **f >= N_FOLDS) {
        return Err(Error::Fit(format!("fold index {f} outside [0, {}]", N_FOLDS - 1)));
    }
    let results: Vec<FoldResult> = (0..N_FOLDS)
        .into_par_iter()
        .map(|f| {
            let (train_idx, val_idx, test_idx) = fold_split(folds, f);
            let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i]).collect::<Vec<_>>();
            let (train, val, test) = (pick(&train_idx), pick(&val_idx), pick(&test_idx));
            if test.is_empty() {
                return Err(Error::Fit(format!("fold {f} is empty")));
            }
            let fold_base = TrainConfig {
                seed: derive_seed(base.seed, 1000 + f as u64),
                ..base.clone()
            };
            let search = random_search(space, &train, &val, k, &fold_base)?;
            let pred = predict_all(&search.report.params, &test);
            let truth: Vec<u32> = test.iter().map(|s| s.level).collect();
            let eval = metrics::evaluate(&pred, &truth, k)?;
            Ok(FoldResult {
                fold: f,
                test_accuracy: eval.macro_accuracy,
                test_mse: eval.macro_mse,
                confusion: eval.confusion,
                train_indices: train_idx,
                test_indices: test_idx,
                search,
            })
        })
        .collect::<Result<_>>()?;
    let accs: Vec<f64> = results.iter().map(|r| r.test_accuracy).collect();
    let mses: Vec<f64> = results.iter().map(|r| r.test_mse).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let (mean_mse, std_mse) = mean_std(&mses);
    Ok(CvReport {
        k,
        folds: results,
        mean_accuracy,
        std_accuracy,
        mean_mse,
        std_mse,
    })
}

/// `fold,acc,mse` rows followed by `mean`, `std` and a `mean(std)` summary
/// row (accuracy in percent).
pub fn metrics_csv(report: &CvReport) -> String {
    let mut out = String::from("fold,acc,mse\n");
    for f in &report.folds {
        out.push_str(&format!("{},{},{}\n", f.fold, f.test_accuracy, f.test_mse));
    }
    out.push_str(&format!("mean,{},{}\n", report.mean_accuracy, report.mean_mse));
    out.push_str(&format!("std,{},{}\n", report.std_accuracy, report.std_mse));
    out.push_str(&format!(
        "summary,{:.1}({:.1}),{:.2}({:.2})\n",
        100.0 * report.mean_accuracy,
        100.0 * report.std_accuracy,
        report.mean_mse,
        report.std_mse
    ));
    out
}
