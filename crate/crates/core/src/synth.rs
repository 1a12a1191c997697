//! Seeded synthetic corpora whose descriptors trend with the grade, used to
//! exercise the pipeline without the access-restricted datasets.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::descriptors::{Descriptor, FeatureVector, N_FEATURES};
use crate::error::{Error, Result};
use crate::ingest::{serialize_canonical_json, Corpus};
use crate::score::{Beats, Hand, NoteEvent, Piece, Pitch};
use crate::training::{derive_seed, Sample};

pub const DEFAULT_NOISE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    FeatureLevel,
    ScoreLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k: u32,
    pub n_per_class: usize,
    pub seed: u64,
    pub mode: SynthMode,
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            k: 9,
            n_per_class: 60,
            seed: 0,
            mode: SynthMode::ScoreLevel,
            noise: DEFAULT_NOISE,
        }
    }
}

impl SynthSpec {
    fn validate(&self, mode: SynthMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::Load(format!("synth spec mode is {:?}, expected {mode:?}", self.mode)));
        }
        if self.k < 2 || self.n_per_class == 0 {
            return Err(Error::Load("synth spec needs K >= 2 and n_per_class >= 1".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Load("synth noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-slot `(offset, slope per grade)`; slope 0 marks a slot unrelated to the grade.
fn slot_trend(d: Descriptor) -> (f64, f64) {
    match d {
        Descriptor::PitchEntropy => (1.0, 0.4),
        Descriptor::PitchRange => (5.0, 3.0),
        Descriptor::AveragePitch => (60.0, 0.0),
        Descriptor::DisplacementRate => (0.0, 0.15),
        Descriptor::AverageIoi => (1.5, -0.12),
        Descriptor::PitchSetLz => (10.0, 6.0),
    }
}

/// Feature vectors drawn per grade `g` around `offset + g * slope`, with noise
/// in units of the per-grade slope (2 semitones for average pitch).
pub fn gen_feature_dataset(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate(SynthMode::FeatureLevel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.k as usize * spec.n_per_class);
    for g in 1..=spec.k {
        for _ in 0..spec.n_per_class {
            let mut features = [0.0; N_FEATURES];
            for d in Descriptor::ALL {
                let (offset, slope) = slot_trend(d);
                for hand in Hand::BOTH {
                    let base = if hand == Hand::Left && d == Descriptor::AveragePitch {
                        offset - 12.0
                    } else {
                        offset
                    };
                    let scale = if slope == 0.0 { 2.0 } else { slope.abs() };
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features[d.slot(hand)] = base + slope * g as f64 + spec.noise * scale * z;
                }
            }
            out.push(Sample { features, level: g });
        }
    }
    Ok(out)
}

/// Generation parameters for one hand of one piece.
struct Walk {
    center: i64,
    alphabet: usize,
    span: f64,
    leap_prob: f64,
    chord_prob: f64,
    step: Beats,
    rest_prob: f64,
    events: usize,
}

impl Walk {
    fn pool(&self) -> Vec<i64> {
        let lo = self.center as f64 - self.span / 2.0;
        let mut pool: Vec<i64> = (0..self.alphabet)
            .map(|i| (lo + self.span * i as f64 / (self.alphabet - 1).max(1) as f64).round() as i64)
            .collect();
        pool.dedup();
        pool
    }

    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<Vec<NoteEvent>> {
        let pool = self.pool();
        let n = pool.len();
        let mut idx = rng.gen_range(0..n);
        let mut onset = Beats::from_integer(0);
        let mut notes = Vec::new();
        for _ in 0..self.events {
            if self.rest_prob > 0.0 && rng.gen::<f64>() < self.rest_prob {
                onset += self.step;
            }
            let p = Pitch::new(pool[idx])?;
            notes.push(NoteEvent::new(p, onset, self.step)?);
            if n > 2 && rng.gen::<f64>() < self.chord_prob {
                let other = if idx + 2 < n { idx + 2 } else { idx - 2 };
                notes.push(NoteEvent::new(Pitch::new(pool[other])?, onset, self.step)?);
            }
            onset += self.step;
            idx = if rng.gen::<f64>() < self.leap_prob {
                rng.gen_range(0..n)
            } else {
                reflect(idx as i64 + rng.gen_range(-2i64..=2), n)
            };
        }
        Ok(notes)
    }
}

/// Reflect an index at both ends of `0..n`.
fn reflect(j: i64, n: usize) -> usize {
    let top = n as i64 - 1;
    let j = if j < 0 { -j } else { j };
    let j = if j > top { 2 * top - j } else { j };
    j.clamp(0, top) as usize
}

fn walk_for(hand: Hand, level_index: f64, grade: u32, noise: f64) -> Walk {
    let c = level_index.max(0.0);
    let alphabet = (4.0 + 2.0 * c).round() as usize;
    let rate = 3 + grade as i64;
    let (center, step) = match hand {
        Hand::Right => (67, Beats::new(4, rate)),
        Hand::Left => (45, Beats::new(8, rate)),
    };
    Walk {
        center,
        alphabet,
        span: 5.0 + 3.0 * c,
        leap_prob: 0.06 * c,
        chord_prob: 0.05 * c,
        step,
        rest_prob: (0.2 * noise).min(0.5),
        events: 64,
    }
}

/// Two-hand random-walk pieces whose alphabet size, span, leap and chord
/// frequency and note rate all grow with the grade. `noise` jitters each
/// piece's effective grade (standard deviation in grades) and inserts rests.
pub fn gen_score_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate(SynthMode::ScoreLevel)?;
    let mut pieces = Vec::with_capacity(spec.k as usize * spec.n_per_class);
    for g in 1..=spec.k {
        for i in 0..spec.n_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, ((g as u64) << 32) | i as u64));
            let z: f64 = StandardNormal.sample(&mut rng);
            let level_index = if g == 1 { 0.0 } else { (g - 1) as f64 + spec.noise * z };
            let right = walk_for(Hand::Right, level_index, g, spec.noise).generate(&mut rng)?;
            let left = walk_for(Hand::Left, level_index, g, spec.noise).generate(&mut rng)?;
            pieces.push(
                Piece::new(format!("synth_g{g:02}_{i:04}"), right, left)
                    .with_tempo(100.0)
                    .with_label(g),
            );
        }
    }
    Corpus::new(pieces, spec.k, None)
}

/// Write `scores/<id>.json` and `labels.csv` (with a `fold` column when the
/// corpus has folds) under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let scores = dir.join("scores");
    fs::create_dir_all(&scores).map_err(|e| Error::io(&scores, e))?;
    let mut labels = String::from(if corpus.folds.is_some() { "id,level,fold\n" } else { "id,level\n" });
    for p in &corpus.pieces {
        let path = scores.join(format!("{}.json", p.id));
        fs::write(&path, serialize_canonical_json(p)).map_err(|e| Error::io(&path, e))?;
        let level = p.label.unwrap_or(1);
        match corpus.folds.as_ref().and_then(|f| f.get(&p.id)) {
            Some(f) => labels.push_str(&format!("{},{level},{f}\n", p.id)),
            None => labels.push_str(&format!("{},{level}\n", p.id)),
        }
    }
    let path = dir.join("labels.csv");
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))
}

/// Feature vectors of a feature-level dataset as rows for export.
pub fn feature_rows(samples: &[Sample]) -> Vec<crate::descriptors::FeatureRow> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| crate::descriptors::FeatureRow {
            id: format!("synth_g{:02}_{i:05}", s.level),
            label: Some(s.level),
            features: FeatureVector::from_values(s.features),
        })
        .collect()
}
