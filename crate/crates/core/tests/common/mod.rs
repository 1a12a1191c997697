//! Independent reference implementations and random generators shared by the
//! integration tests. The oracles work from raw note data and favour obvious,
//! slow formulations over the library's.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rubricnet::model::forward_standardized;
use rubricnet::training::{batch_loss, Sample};
use rubricnet::{Beats, ModelParams, NoteEvent, Piece, Pitch, Scaler, N_FEATURES};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random part: `n` onsets on a grid of `1/den` beats with gaps of 1..=4
/// cells, up to 3 notes per onset.
pub fn random_part(rng: &mut ChaCha8Rng, n: usize, lo: i64, hi: i64) -> Vec<NoteEvent> {
    let den = [1, 2, 3, 4, 8][rng.gen_range(0..5)];
    let mut cell = 0i64;
    let mut notes = Vec::new();
    for _ in 0..n {
        let onset = Beats::new(cell, den);
        let chord = rng.gen_range(1..=3);
        for _ in 0..chord {
            let p = Pitch::new(rng.gen_range(lo..=hi)).unwrap();
            let dur = Beats::new(rng.gen_range(1..=4), den);
            notes.push(NoteEvent::new(p, onset, dur).unwrap());
        }
        cell += rng.gen_range(1..=4);
    }
    notes
}

pub fn random_piece(rng: &mut ChaCha8Rng, id: &str) -> Piece {
    let nr = rng.gen_range(1..40);
    let nl = rng.gen_range(1..40);
    let right = random_part(rng, nr, 50, 100);
    let left = random_part(rng, nl, 21, 70);
    let mut piece = Piece::new(id, right, left);
    if rng.gen_bool(0.7) {
        piece.tempo_bpm = Some(rng.gen_range(40..200) as f64);
    }
    if rng.gen_bool(0.5) {
        piece.label = Some(rng.gen_range(1..=9));
    }
    piece
}

pub fn oracle_entropy(pitches: &[u8]) -> f64 {
    let mut counts = [0usize; 128];
    for &p in pitches {
        counts[p as usize] += 1;
    }
    let n = pitches.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn oracle_range(pitches: &[u8]) -> f64 {
    let mut lo = u8::MAX;
    let mut hi = 0;
    for &p in pitches {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (hi - lo) as f64
}

pub fn oracle_mean(pitches: &[u8]) -> f64 {
    pitches.iter().map(|&p| p as f64).sum::<f64>() / pitches.len() as f64
}

/// Pitch sets keyed by exact onset, with onset in seconds at `bpm`.
pub fn oracle_sets(notes: &[NoteEvent], bpm: f64) -> Vec<(f64, Vec<u8>)> {
    let mut by_onset: BTreeMap<Beats, Vec<u8>> = BTreeMap::new();
    for n in notes {
        let set = by_onset.entry(n.onset_beats).or_default();
        if !set.contains(&n.pitch.midi()) {
            set.push(n.pitch.midi());
        }
    }
    by_onset
        .into_iter()
        .map(|(onset, mut set)| {
            set.sort();
            let beats = *onset.numer() as f64 / *onset.denom() as f64;
            (beats * 60.0 / bpm, set)
        })
        .collect()
}

pub fn oracle_displacement(sets: &[(f64, Vec<u8>)]) -> f64 {
    if sets.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for pair in sets.windows(2) {
        let mut d = 0i32;
        for &p in &pair[0].1 {
            for &q in &pair[1].1 {
                d = d.max((p as i32 - q as i32).abs());
            }
        }
        total += if d >= 12 {
            2.0
        } else if d >= 7 {
            1.0
        } else {
            0.0
        };
    }
    total / (sets.len() - 1) as f64
}

pub fn oracle_ioi(sets: &[(f64, Vec<u8>)]) -> f64 {
    if sets.len() < 2 {
        return 0.0;
    }
    let diffs: Vec<f64> = sets.windows(2).map(|w| w[1].0 - w[0].0).collect();
    diffs.iter().sum::<f64>() / diffs.len() as f64
}

/// Quadratic LZ78 reference: the dictionary is a flat list searched linearly.
pub fn oracle_lz<T: PartialEq + Clone>(seq: &[T]) -> usize {
    let mut dict: Vec<Vec<T>> = Vec::new();
    let mut count = 0;
    let mut i = 0;
    while i < seq.len() {
        let mut len = 1;
        while i + len <= seq.len() && dict.iter().any(|d| d.as_slice() == &seq[i..i + len]) {
            len += 1;
        }
        count += 1;
        if i + len > seq.len() {
            break;
        }
        dict.push(seq[i..i + len].to_vec());
        i += len;
    }
    count
}

/// The six descriptors of one part, in `FEATURE_NAMES` order for one hand.
pub fn oracle_part(notes: &[NoteEvent], bpm: f64) -> [f64; 6] {
    let pitches: Vec<u8> = notes.iter().map(|n| n.pitch.midi()).collect();
    let sets = oracle_sets(notes, bpm);
    let symbols: Vec<Vec<u8>> = sets.iter().map(|s| s.1.clone()).collect();
    [
        oracle_entropy(&pitches),
        oracle_range(&pitches),
        oracle_mean(&pitches),
        oracle_displacement(&sets),
        oracle_ioi(&sets),
        oracle_lz(&symbols) as f64,
    ]
}

/// All 12 slots of a piece from the oracles.
pub fn oracle_features(piece: &Piece) -> [f64; N_FEATURES] {
    let bpm = piece.tempo_bpm.unwrap_or(100.0);
    let r = oracle_part(piece.right.notes(), bpm);
    let l = oracle_part(piece.left.notes(), bpm);
    std::array::from_fn(|i| if i % 2 == 0 { r[i / 2] } else { l[i / 2] })
}

/// O(n^2) Stuart tau-c from explicit pair enumeration.
pub fn oracle_tau_c(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let s = (x[i] - x[j]).signum() * (y[i] - y[j]).signum();
            if x[i] != x[j] && y[i] != y[j] {
                if s > 0.0 {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
    }
    let distinct = |v: &[f64]| {
        let mut u: Vec<f64> = v.to_vec();
        u.sort_by(f64::total_cmp);
        u.dedup();
        u.len()
    };
    let m = distinct(x).min(distinct(y)) as f64;
    if m < 2.0 {
        return 0.0;
    }
    let n = n as f64;
    2.0 * m * (c - d) as f64 / (n * n * (m - 1.0))
}

pub fn random_params(rng: &mut ChaCha8Rng, k: u32) -> ModelParams {
    let mut p = ModelParams::zeros(k);
    for v in p.w.iter_mut().chain(p.b.iter_mut()).chain(p.w_f.iter_mut()) {
        *v = rng.gen_range(-2.0..2.0);
    }
    for v in p.b_f.iter_mut() {
        *v = rng.gen_range(-3.0..3.0);
    }
    p.scaler = Scaler {
        mean: (0..N_FEATURES).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        std: (0..N_FEATURES).map(|_| rng.gen_range(0.5..3.0)).collect(),
    };
    p
}

pub fn random_samples(rng: &mut ChaCha8Rng, n: usize, k: u32) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            features: std::array::from_fn(|_| rng.gen_range(-8.0..8.0)),
            level: rng.gen_range(1..=k),
        })
        .collect()
}

/// Largest relative error between `analytic` and central differences of
/// `batch_loss` with step `h`. Components where both are below `floor` are
/// compared absolutely against `floor`.
pub fn gradient_check(
    params: &ModelParams,
    batch: &[Sample],
    masks: Option<&[[f64; N_FEATURES]]>,
    analytic: &[f64],
    h: f64,
    floor: f64,
) -> f64 {
    let base = params.flatten();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        let mut v = base.clone();
        v[i] = base[i] + h;
        plus.set_flat(&v);
        v[i] = base[i] - h;
        minus.set_flat(&v);
        let numeric = (batch_loss(&plus, batch, masks).unwrap() - batch_loss(&minus, batch, masks).unwrap()) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

/// Decode by scanning for the first sub-threshold probability.
pub fn oracle_decode(probs: &[f64]) -> u32 {
    for (i, p) in probs.iter().enumerate() {
        if *p < 0.5 {
            return i as u32 + 1;
        }
    }
    probs.len() as u32 + 1
}

pub fn s_agg_of(params: &ModelParams, features: &[f64; N_FEATURES]) -> f64 {
    forward_standardized(params, &params.scaler.transform(features)).s_agg
}
