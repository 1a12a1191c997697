//! Macro-averaged ordinal classification metrics.
//!
//! Classes absent from the ground truth are left out of the macro mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub macro_accuracy: f64,
    pub macro_mse: f64,
    /// `confusion[i][j]` counts truth `i+1` predicted as `j+1`.
    pub confusion: Vec<Vec<u64>>,
}

fn check(pred: &[u32], truth: &[u32], k: u32) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    for &level in pred.iter().chain(truth) {
        if level < 1 || level > k {
            return Err(Error::LevelOutOfRange { level, k });
        }
    }
    Ok(())
}

/// Per true class: (sample count, sum of `f(pred, truth)`).
fn per_class<F: Fn(u32, u32) -> f64>(pred: &[u32], truth: &[u32], k: u32, f: F) -> Vec<(usize, f64)> {
    let mut acc = vec![(0usize, 0.0f64); k as usize];
    for (&p, &t) in pred.iter().zip(truth) {
        let slot = &mut acc[t as usize - 1];
        slot.0 += 1;
        slot.1 += f(p, t);
    }
    acc
}

fn macro_mean(classes: Vec<(usize, f64)>) -> f64 {
    let present: Vec<f64> = classes
        .into_iter()
        .filter(|(n, _)| *n > 0)
        .map(|(n, s)| s / n as f64)
        .collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Mean per-class recall.
pub fn macro_accuracy(pred: &[u32], truth: &[u32], k: u32) -> Result<f64> {
    check(pred, truth, k)?;
    Ok(macro_mean(per_class(pred, truth, k, |p, t| {
        if p == t {
            1.0
        } else {
            0.0
        }
    })))
}

/// Mean over classes of the class-conditional squared level error.
pub fn macro_mse(pred: &[u32], truth: &[u32], k: u32) -> Result<f64> {
    check(pred, truth, k)?;
    Ok(macro_mean(per_class(pred, truth, k, |p, t| {
        let d = p as f64 - t as f64;
        d * d
    })))
}

pub fn confusion_matrix(pred: &[u32], truth: &[u32], k: u32) -> Result<Vec<Vec<u64>>> {
    check(pred, truth, k)?;
    let mut m = vec![vec![0u64; k as usize]; k as usize];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t as usize - 1][p as usize - 1] += 1;
    }
    Ok(m)
}

pub fn evaluate(pred: &[u32], truth: &[u32], k: u32) -> Result<EvalResult> {
    Ok(EvalResult {
        macro_accuracy: macro_accuracy(pred, truth, k)?,
        macro_mse: macro_mse(pred, truth, k)?,
        confusion: confusion_matrix(pred, truth, k)?,
    })
}
