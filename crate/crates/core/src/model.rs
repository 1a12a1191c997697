//! The white-box scorer: one `tanh` unit per descriptor, a summed aggregate
//! score and a final layer mapping that scalar to cumulative grade
//! probabilities.

use serde::{Deserialize, Serialize};

use crate::descriptors::{FeatureVector, FEATURE_NAMES, N_FEATURES};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Output head of the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// `K-1` cumulative sigmoid indicators.
    #[default]
    Ordinal,
    /// `K` softmax logits (ablation without ordinal targets).
    OneHot,
}

impl Head {
    pub fn output_len(self, k: u32) -> usize {
        match self {
            Head::Ordinal => k as usize - 1,
            Head::OneHot => k as usize,
        }
    }
}

/// Standardization fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity() -> Self {
        Scaler {
            mean: vec![0.0; N_FEATURES],
            std: vec![1.0; N_FEATURES],
        }
    }

    /// Population mean and standard deviation per slot; constant slots get std 1.
    pub fn fit(rows: &[[f64; N_FEATURES]]) -> Self {
        if rows.is_empty() {
            return Scaler::identity();
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; N_FEATURES];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; N_FEATURES];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if s.is_nan() || *s <= 1e-12 {
                *s = 1.0;
            }
        }
        Scaler { mean, std }
    }

    pub fn transform(&self, x: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|i| (x[i] - self.mean[i]) / self.std[i])
    }
}

/// All trainable and fitted state of the scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub k: u32,
    pub head: Head,
    pub feature_order: Vec<String>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub w_f: Vec<f64>,
    pub b_f: Vec<f64>,
    pub scaler: Scaler,
}

impl ModelParams {
    pub fn zeros(k: u32) -> Self {
        Self::zeros_with_head(k, Head::Ordinal)
    }

    pub fn zeros_with_head(k: u32, head: Head) -> Self {
        let out = head.output_len(k);
        ModelParams {
            k,
            head,
            feature_order: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            w: vec![0.0; N_FEATURES],
            b: vec![0.0; N_FEATURES],
            w_f: vec![0.0; out],
            b_f: vec![0.0; out],
            scaler: Scaler::identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Checkpoint(format!("K must be >= 2, got {}", self.k)));
        }
        let out = self.head.output_len(self.k);
        let checks = [
            ("w", self.w.len(), N_FEATURES),
            ("b", self.b.len(), N_FEATURES),
            ("w_f", self.w_f.len(), out),
            ("b_f", self.b_f.len(), out),
            ("scaler.mean", self.scaler.mean.len(), N_FEATURES),
            ("scaler.std", self.scaler.std.len(), N_FEATURES),
            ("feature_order", self.feature_order.len(), N_FEATURES),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has length {got}, expected {want}"
                )));
            }
        }
        if self.feature_order.iter().map(String::as_str).ne(FEATURE_NAMES) {
            return Err(Error::Checkpoint("unexpected feature_order".into()));
        }
        let all = self
            .w
            .iter()
            .chain(&self.b)
            .chain(&self.w_f)
            .chain(&self.b_f)
            .chain(&self.scaler.mean);
        if !all.clone().all(|v| v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        if !self.scaler.std.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::Checkpoint("scaler std must be positive".into()));
        }
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.w.len() + self.b.len() + self.w_f.len() + self.b_f.len()
    }

    /// Trainable parameters flattened as `w ++ b ++ w_f ++ b_f`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_trainable());
        v.extend_from_slice(&self.w);
        v.extend_from_slice(&self.b);
        v.extend_from_slice(&self.w_f);
        v.extend_from_slice(&self.b_f);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_trainable());
        let (w, rest) = flat.split_at(self.w.len());
        let (b, rest) = rest.split_at(self.b.len());
        let (w_f, b_f) = rest.split_at(self.w_f.len());
        self.w.copy_from_slice(w);
        self.b.copy_from_slice(b);
        self.w_f.copy_from_slice(w_f);
        self.b_f.copy_from_slice(b_f);
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub standardized: [f64; N_FEATURES],
    pub scores: [f64; N_FEATURES],
    pub s_agg: f64,
    /// Cumulative probabilities (ordinal head) or class probabilities (one-hot head).
    pub probs: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Forward pass on already-standardized inputs.
pub fn forward_standardized(params: &ModelParams, x_hat: &[f64; N_FEATURES]) -> ForwardTrace {
    let scores: [f64; N_FEATURES] =
        std::array::from_fn(|i| (params.w[i] * x_hat[i] + params.b[i]).tanh());
    let s_agg: f64 = scores.iter().sum();
    let logits = params.w_f.iter().zip(&params.b_f).map(|(w, b)| s_agg * w + b);
    let probs = match params.head {
        Head::Ordinal => logits.map(sigmoid).collect(),
        Head::OneHot => softmax(&logits.collect::<Vec<_>>()),
    };
    ForwardTrace {
        standardized: *x_hat,
        scores,
        s_agg,
        probs,
    }
}

pub fn forward_values(params: &ModelParams, x: &[f64; N_FEATURES]) -> Result<ForwardTrace> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite input in slot `{}`",
            FEATURE_NAMES[i]
        )));
    }
    Ok(forward_standardized(params, &params.scaler.transform(x)))
}

pub fn forward(params: &ModelParams, x: &FeatureVector) -> Result<ForwardTrace> {
    forward_values(params, &x.values)
}

/// Level from cumulative probabilities: one plus the length of the leading
/// run of entries `>= 0.5`.
pub fn decode(probs: &[f64]) -> u32 {
    1 + probs.iter().take_while(|p| **p >= 0.5).count() as u32
}

/// Predicted level for a trace, honoring the head type.
pub fn predict_level(params: &ModelParams, trace: &ForwardTrace) -> u32 {
    match params.head {
        Head::Ordinal => decode(&trace.probs),
        Head::OneHot => {
            let mut best = 0;
            for (i, p) in trace.probs.iter().enumerate() {
                if *p > trace.probs[best] {
                    best = i;
                }
            }
            best as u32 + 1
        }
    }
}

pub fn predict(params: &ModelParams, x: &FeatureVector) -> Result<u32> {
    Ok(predict_level(params, &forward(params, x)?))
}

/// Map `tanh` scores from `(-1, 1)` onto `[0, 1]`.
pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    scores.iter().map(|s| normalize_score(*s)).collect()
}

pub fn normalize_score(s: f64) -> f64 {
    (s + 1.0) / 2.0
}

/// Map an aggregate in `[-n, n]` onto the `[0, 12]` reporting scale.
pub fn rescale_aggregate(s_agg: f64, n: usize) -> f64 {
    let n = n as f64;
    (s_agg + n) / (2.0 * n) * 12.0
}

/// Where cumulative probability `i` crosses 0.5 on the aggregate axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    At { s_agg: f64, increasing: bool },
    Unreachable,
}

impl Boundary {
    pub fn position(self) -> Option<f64> {
        match self {
            Boundary::At { s_agg, .. } => Some(s_agg),
            Boundary::Unreachable => None,
        }
    }
}

pub fn decision_boundaries(params: &ModelParams) -> Vec<Boundary> {
    params
        .w_f
        .iter()
        .zip(&params.b_f)
        .map(|(&w, &b)| {
            if w == 0.0 {
                Boundary::Unreachable
            } else {
                Boundary::At {
                    s_agg: -b / w,
                    increasing: w > 0.0,
                }
            }
        })
        .collect()
}

/// True when every boundary moves upward with the aggregate, so the level
/// is a non-decreasing step function of it.
pub fn boundaries_monotone(params: &ModelParams) -> bool {
    params.head == Head::Ordinal && params.w_f.iter().all(|w| *w > 0.0)
}

/// Level implied by thresholding `s_agg` against the boundaries: the number of
/// leading boundaries already passed, plus one.
pub fn level_from_boundaries(boundaries: &[Boundary], s_agg: f64) -> u32 {
    1 + boundaries
        .iter()
        .take_while(|b| match b {
            Boundary::At { s_agg: t, increasing: true } => s_agg >= *t,
            _ => false,
        })
        .count() as u32
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    #[serde(rename = "K")]
    k: u32,
    #[serde(default, skip_serializing_if = "is_ordinal")]
    head: Head,
    feature_order: Vec<String>,
    w: Vec<f64>,
    b: Vec<f64>,
    w_f: Vec<f64>,
    b_f: Vec<f64>,
    scaler: Scaler,
}

fn is_ordinal(h: &Head) -> bool {
    *h == Head::Ordinal
}

pub fn save_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    params.validate()?;
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        k: params.k,
        head: params.head,
        feature_order: params.feature_order.clone(),
        w: params.w.clone(),
        b: params.b.clone(),
        w_f: params.w_f.clone(),
        b_f: params.b_f.clone(),
        scaler: params.scaler.clone(),
    };
    let mut bytes =
        serde_json::to_vec_pretty(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parse a checkpoint, optionally requiring a specific number of grades.
pub fn load_checkpoint(bytes: &[u8], expected_k: Option<u32>) -> Result<ModelParams> {
    #[derive(Deserialize)]
    struct VersionProbe {
        version: Option<u32>,
    }
    let probe: VersionProbe =
        serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    match probe.version {
        Some(CHECKPOINT_VERSION) => {}
        Some(v) => return Err(Error::Checkpoint(format!("unsupported version {v}"))),
        None => return Err(Error::Checkpoint("missing version".into())),
    }
    let file: CheckpointFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(k) = expected_k {
        if k != file.k {
            return Err(Error::Checkpoint(format!(
                "checkpoint has K={}, expected K={k}",
                file.k
            )));
        }
    }
    let params = ModelParams {
        k: file.k,
        head: file.head,
        feature_order: file.feature_order,
        w: file.w,
        b: file.b,
        w_f: file.w_f,
        b_f: file.b_f,
        scaler: file.scaler,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_set(k: u32) -> ModelParams {
        let mut p = ModelParams::zeros(k);
        p.w = vec![1.0; N_FEATURES];
        p.w_f = vec![1.0; k as usize - 1];
        p
    }

    #[test]
    fn zero_params_give_half_probabilities() {
        let p = ModelParams::zeros(9);
        let t = forward_values(&p, &[3.7; N_FEATURES]).unwrap();
        assert!(t.scores.iter().all(|s| *s == 0.0));
        assert_eq!(t.s_agg, 0.0);
        assert_eq!(t.probs, vec![0.5; 8]);
    }

    #[test]
    fn saturated_biases_reach_twelve() {
        let mut p = ModelParams::zeros(3);
        p.b = vec![50.0; N_FEATURES];
        let t = forward_values(&p, &[0.0; N_FEATURES]).unwrap();
        assert!((t.s_agg - 12.0).abs() < 1e-12);
        assert!((rescale_aggregate(t.s_agg, N_FEATURES) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn hand_set_matches_straight_line_evaluation() {
        let p = hand_set(3);
        let x: [f64; N_FEATURES] = std::array::from_fn(|i| (i as f64 - 5.5) / 4.0);
        let t = forward_values(&p, &x).unwrap();
        let mut s = 0.0;
        for v in x {
            s += v.tanh();
        }
        assert!((t.s_agg - s).abs() < 1e-12);
        let expected = 1.0 / (1.0 + (-s).exp());
        assert!((t.probs[0] - expected).abs() < 1e-12);
        assert!((t.probs[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input_rejected() {
        let p = ModelParams::zeros(3);
        let mut x = [0.0; N_FEATURES];
        x[4] = f64::NAN;
        assert!(matches!(forward_values(&p, &x), Err(Error::Numeric(_))));
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode(&[0.4, 0.9, 0.9]), 1);
        assert_eq!(decode(&[0.9, 0.6, 0.4, 0.9]), 3);
        assert_eq!(decode(&[0.5; 8]), 9);
        assert_eq!(decode(&[0.49999]), 1);
    }

    #[test]
    fn normalization_and_rescale() {
        assert_eq!(normalize_scores(&[0.0, -1.0, 1.0, 0.5]), vec![0.5, 0.0, 1.0, 0.75]);
        assert_eq!(rescale_aggregate(-12.0, 12), 0.0);
        assert_eq!(rescale_aggregate(0.0, 12), 6.0);
        assert_eq!(rescale_aggregate(12.0, 12), 12.0);
    }

    #[test]
    fn boundary_examples() {
        let mut p = ModelParams::zeros(2);
        p.w_f = vec![1.0];
        p.b_f = vec![-2.0];
        assert_eq!(decision_boundaries(&p)[0].position(), Some(2.0));
        p.w_f = vec![2.0];
        p.b_f = vec![0.0];
        assert_eq!(decision_boundaries(&p)[0].position(), Some(0.0));
        p.w_f = vec![0.0];
        assert_eq!(decision_boundaries(&p)[0], Boundary::Unreachable);
        assert!(!boundaries_monotone(&p));
    }

    #[test]
    fn one_hot_head_predicts_argmax() {
        let mut p = ModelParams::zeros_with_head(3, Head::OneHot);
        p.b_f = vec![0.0, 2.0, 1.0];
        let t = forward_values(&p, &[0.0; N_FEATURES]).unwrap();
        assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(predict_level(&p, &t), 2);
    }

    #[test]
    fn scaler_fit_handles_constant_slots() {
        let rows = [[1.0; N_FEATURES], [3.0; N_FEATURES]];
        let mut rows = rows.to_vec();
        rows[0][5] = 7.0;
        rows[1][5] = 7.0;
        let s = Scaler::fit(&rows);
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.std[5], 1.0);
        assert_eq!(s.transform(&rows[1])[5], 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut p = hand_set(9);
        p.w[3] = 0.1 + 0.2;
        p.b_f = (0..8).map(|i| (i as f64).sqrt() * std::f64::consts::PI).collect();
        p.scaler.std[2] = 1.0 / 3.0;
        let bytes = save_checkpoint(&p).unwrap();
        let q = load_checkpoint(&bytes, Some(9)).unwrap();
        assert_eq!(p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   q.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(p, q);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("\"version\": 1"));
        assert!(text.contains("\"K\": 9"));
        assert!(!text.contains("head"));
    }

    #[test]
    fn checkpoint_errors() {
        let bytes = save_checkpoint(&hand_set(9)).unwrap();
        assert!(matches!(
            load_checkpoint(&bytes[..bytes.len() / 2], None),
            Err(Error::Checkpoint(_))
        ));
        assert!(matches!(load_checkpoint(&bytes, Some(3)), Err(Error::Checkpoint(_))));
        let bumped = String::from_utf8(bytes.clone()).unwrap().replace("\"version\": 1", "\"version\": 2");
        assert!(load_checkpoint(bumped.as_bytes(), None).is_err());
        let mut short = hand_set(9);
        short.w_f.pop();
        assert!(save_checkpoint(&short).is_err());
    }
}
