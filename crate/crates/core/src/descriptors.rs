//! The six per-hand descriptors and the 12-slot feature vector built from them.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{
    build_pitch_set_sequence, pitch_event_sequence, resolve_tempo, Hand, Piece, Pitch,
    PitchSetEvent,
};

pub const N_FEATURES: usize = 12;

/// Column names in the fixed slot order used by the model and all exports.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "pitch_entropy_r",
    "pitch_entropy_l",
    "pitch_range_r",
    "pitch_range_l",
    "average_pitch_r",
    "average_pitch_l",
    "displacement_rate_r",
    "displacement_rate_l",
    "average_ioi_r",
    "average_ioi_l",
    "pitch_set_lz_r",
    "pitch_set_lz_l",
];

/// Human-readable labels, same order as [`FEATURE_NAMES`].
pub const FEATURE_LABELS: [&str; N_FEATURES] = [
    "Pitch Entropy (R)",
    "Pitch Entropy (L)",
    "Pitch Range (R)",
    "Pitch Range (L)",
    "Average Pitch (R)",
    "Average Pitch (L)",
    "Displacement Rate (R)",
    "Displacement Rate (L)",
    "Average IOI (R)",
    "Average IOI (L)",
    "Pitch Set LZ (R)",
    "Pitch Set LZ (L)",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descriptor {
    PitchEntropy,
    PitchRange,
    AveragePitch,
    DisplacementRate,
    AverageIoi,
    PitchSetLz,
}

impl Descriptor {
    pub const ALL: [Descriptor; 6] = [
        Descriptor::PitchEntropy,
        Descriptor::PitchRange,
        Descriptor::AveragePitch,
        Descriptor::DisplacementRate,
        Descriptor::AverageIoi,
        Descriptor::PitchSetLz,
    ];

    /// Slot of this descriptor for `hand` in the feature vector.
    pub fn slot(self, hand: Hand) -> usize {
        let base = Descriptor::ALL.iter().position(|d| *d == self).unwrap() * 2;
        match hand {
            Hand::Right => base,
            Hand::Left => base + 1,
        }
    }
}

/// Value computed on a part too short for the descriptor to be meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub degenerate: bool,
}

/// Shannon entropy (bits) of the empirical pitch distribution.
pub fn pitch_entropy(pitches: &[Pitch]) -> Result<f64> {
    if pitches.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut counts: HashMap<Pitch, usize> = HashMap::new();
    for p in pitches {
        *counts.entry(*p).or_default() += 1;
    }
    let n = pitches.len() as f64;
    let mut counts: Vec<usize> = counts.into_values().collect();
    counts.sort_unstable();
    let h = counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

pub fn pitch_range(pitches: &[Pitch]) -> Result<f64> {
    let lo = pitches.iter().min().ok_or(Error::EmptySequence)?;
    let hi = pitches.iter().max().ok_or(Error::EmptySequence)?;
    Ok((hi.midi() - lo.midi()) as f64)
}

pub fn average_pitch(pitches: &[Pitch]) -> Result<f64> {
    if pitches.is_empty() {
        return Err(Error::EmptySequence);
    }
    let sum: u64 = pitches.iter().map(|p| p.midi() as u64).sum();
    Ok(sum as f64 / pitches.len() as f64)
}

/// Largest absolute semitone distance between any note of `a` and any of `b`.
pub fn max_set_distance(a: &BTreeSet<Pitch>, b: &BTreeSet<Pitch>) -> u8 {
    let (Some(a_lo), Some(a_hi), Some(b_lo), Some(b_hi)) =
        (a.first(), a.last(), b.first(), b.last())
    else {
        return 0;
    };
    let up = b_hi.midi() as i16 - a_lo.midi() as i16;
    let down = a_hi.midi() as i16 - b_lo.midi() as i16;
    up.abs().max(down.abs()) as u8
}

/// 0 below 7 semitones, 1 in `[7, 12)`, 2 for an octave or more.
pub fn displacement_weight(distance: u8) -> u8 {
    match distance {
        0..=6 => 0,
        7..=11 => 1,
        _ => 2,
    }
}

pub fn displacement_rate(events: &[PitchSetEvent]) -> Flagged {
    if events.len() < 2 {
        return Flagged {
            value: 0.0,
            degenerate: true,
        };
    }
    let total: u64 = events
        .windows(2)
        .map(|w| displacement_weight(max_set_distance(&w[0].pitches, &w[1].pitches)) as u64)
        .sum();
    Flagged {
        value: total as f64 / (events.len() - 1) as f64,
        degenerate: false,
    }
}

/// Mean inter-onset interval in seconds.
pub fn average_ioi(events: &[PitchSetEvent]) -> Flagged {
    match (events.first(), events.last()) {
        (Some(first), Some(last)) if events.len() >= 2 => Flagged {
            value: (last.onset_seconds - first.onset_seconds) / (events.len() - 1) as f64,
            degenerate: false,
        },
        _ => Flagged {
            value: 0.0,
            degenerate: true,
        },
    }
}

/// Number of phrases in an incremental-dictionary (LZ78) parse of `symbols`.
///
/// Each phrase extends the longest dictionary match by one symbol and is then
/// added to the dictionary. A trailing phrase that is already in the
/// dictionary still counts.
pub fn lz78_phrase_count<T: Eq + std::hash::Hash + Clone>(symbols: &[T]) -> usize {
    // trie node 0 is the empty phrase
    let mut children: HashMap<(usize, T), usize> = HashMap::new();
    let mut next_node = 1;
    let mut node = 0;
    let mut phrases = 0;
    for s in symbols {
        match children.get(&(node, s.clone())) {
            Some(&child) => node = child,
            None => {
                children.insert((node, s.clone()), next_node);
                next_node += 1;
                phrases += 1;
                node = 0;
            }
        }
    }
    if node != 0 {
        phrases += 1;
    }
    phrases
}

/// Lempel-Ziv complexity of the pitch-set sequence, each distinct set being one symbol.
pub fn pitch_set_lz(events: &[PitchSetEvent]) -> Result<usize> {
    if events.is_empty() {
        return Err(Error::EmptySequence);
    }
    let symbols: Vec<&BTreeSet<Pitch>> = events.iter().map(|e| &e.pitches).collect();
    Ok(lz78_phrase_count(&symbols))
}

/// The 12 descriptor values of one piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; N_FEATURES],
    pub tempo_assumed: bool,
    /// Slots that fell back to 0.0 because the part had fewer than two events.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate_slots: Vec<usize>,
}

impl FeatureVector {
    pub fn from_values(values: [f64; N_FEATURES]) -> Self {
        FeatureVector {
            values,
            tempo_assumed: false,
            degenerate_slots: Vec::new(),
        }
    }

    pub fn get(&self, d: Descriptor, hand: Hand) -> f64 {
        self.values[d.slot(hand)]
    }
}

pub fn extract_features(piece: &Piece) -> Result<FeatureVector> {
    let bpm = resolve_tempo(piece)?;
    let mut fv = FeatureVector {
        values: [0.0; N_FEATURES],
        tempo_assumed: piece.tempo_bpm.is_none(),
        degenerate_slots: Vec::new(),
    };
    for hand in Hand::BOTH {
        let part = piece.part(hand);
        let pitches = pitch_event_sequence(part)?;
        let events = build_pitch_set_sequence(part, bpm)?;
        let in_hand = |e: Error| match e {
            Error::EmptySequence => Error::EmptyPart(hand),
            other => other,
        };
        fv.values[Descriptor::PitchEntropy.slot(hand)] = pitch_entropy(&pitches).map_err(in_hand)?;
        fv.values[Descriptor::PitchRange.slot(hand)] = pitch_range(&pitches).map_err(in_hand)?;
        fv.values[Descriptor::AveragePitch.slot(hand)] = average_pitch(&pitches).map_err(in_hand)?;
        for (d, flagged) in [
            (Descriptor::DisplacementRate, displacement_rate(&events)),
            (Descriptor::AverageIoi, average_ioi(&events)),
        ] {
            fv.values[d.slot(hand)] = flagged.value;
            if flagged.degenerate {
                fv.degenerate_slots.push(d.slot(hand));
            }
        }
        fv.values[Descriptor::PitchSetLz.slot(hand)] = pitch_set_lz(&events).map_err(in_hand)? as f64;
    }
    fv.degenerate_slots.sort_unstable();
    Ok(fv)
}

/// Rows of the feature table export.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub label: Option<u32>,
    pub features: FeatureVector,
}

pub fn feature_table_header() -> Vec<String> {
    let mut h = vec!["id".to_string(), "label".to_string()];
    h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    h.push("tempo_assumed".to_string());
    h
}

pub fn write_feature_table<W: std::io::Write>(rows: &[FeatureRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Load(format!("csv write: {e}"));
    w.write_record(feature_table_header()).map_err(csv_err)?;
    for row in rows {
        let mut rec = vec![
            row.id.clone(),
            row.label.map(|l| l.to_string()).unwrap_or_default(),
        ];
        rec.extend(row.features.values.iter().map(|v| v.to_string()));
        rec.push(row.features.tempo_assumed.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Load(format!("csv write: {e}")))?;
    Ok(())
}

pub fn read_feature_table<R: std::io::Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r
        .headers()
        .map_err(|e| Error::parse("header", e.to_string()))?
        .clone();
    let expected = feature_table_header();
    if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::parse(
            "header",
            format!("expected `{}`", expected.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("row {}", line + 1), e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let label = match field(1) {
            "" => None,
            s => Some(
                s.parse::<u32>()
                    .map_err(|e| Error::parse(format!("row {} label", line + 1), e.to_string()))?,
            ),
        };
        let mut values = [0.0; N_FEATURES];
        for (i, v) in values.iter_mut().enumerate() {
            *v = field(2 + i).parse::<f64>().map_err(|e| {
                Error::parse(format!("row {} {}", line + 1, FEATURE_NAMES[i]), e.to_string())
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    format!("row {} {}", line + 1, FEATURE_NAMES[i]),
                    "non-finite value",
                ));
            }
        }
        let tempo_assumed = field(2 + N_FEATURES).parse::<bool>().map_err(|e| {
            Error::parse(format!("row {} tempo_assumed", line + 1), e.to_string())
        })?;
        rows.push(FeatureRow {
            id: field(0).to_string(),
            label,
            features: FeatureVector {
                values,
                tempo_assumed,
                degenerate_slots: Vec::new(),
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{Beats, NoteEvent};

    fn pitches(v: &[i64]) -> Vec<Pitch> {
        v.iter().map(|&p| Pitch::new(p).unwrap()).collect()
    }

    fn sets(v: &[&[i64]]) -> Vec<PitchSetEvent> {
        v.iter()
            .enumerate()
            .map(|(i, s)| PitchSetEvent {
                pitches: pitches(s).into_iter().collect(),
                onset_seconds: i as f64,
            })
            .collect()
    }

    fn onsets(v: &[f64]) -> Vec<PitchSetEvent> {
        v.iter()
            .map(|&t| PitchSetEvent {
                pitches: pitches(&[60]).into_iter().collect(),
                onset_seconds: t,
            })
            .collect()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(pitch_entropy(&pitches(&[60, 60, 60])).unwrap(), 0.0);
        assert!((pitch_entropy(&pitches(&[60, 62, 64, 65])).unwrap() - 2.0).abs() < 1e-12);
        assert!((pitch_entropy(&pitches(&[60, 60, 62])).unwrap() - 0.918296).abs() < 1e-6);
        assert!(matches!(pitch_entropy(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn range_and_average_examples() {
        assert_eq!(pitch_range(&pitches(&[60])).unwrap(), 0.0);
        assert_eq!(pitch_range(&pitches(&[55, 60, 72])).unwrap(), 17.0);
        assert_eq!(pitch_range(&pitches(&[21, 108])).unwrap(), 87.0);
        assert!(pitch_range(&[]).is_err());
        assert_eq!(average_pitch(&pitches(&[60, 64, 68])).unwrap(), 64.0);
        assert_eq!(average_pitch(&pitches(&[60])).unwrap(), 60.0);
        assert_eq!(average_pitch(&pitches(&[60, 61])).unwrap(), 60.5);
        assert!(average_pitch(&[]).is_err());
    }

    #[test]
    fn displacement_examples() {
        assert_eq!(displacement_rate(&sets(&[&[60], &[63]])).value, 0.0);
        assert_eq!(displacement_rate(&sets(&[&[60], &[68], &[82]])).value, 1.5);
        assert_eq!(displacement_rate(&sets(&[&[60], &[63], &[71], &[85]])).value, 1.0);
        let d = displacement_rate(&sets(&[&[60]]));
        assert!(d.degenerate);
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn weight_boundaries() {
        assert_eq!(displacement_weight(6), 0);
        assert_eq!(displacement_weight(7), 1);
        assert_eq!(displacement_weight(11), 1);
        assert_eq!(displacement_weight(12), 2);
        // chords: max over all cross pairs
        let a = pitches(&[60, 64]).into_iter().collect();
        let b = pitches(&[55, 62]).into_iter().collect();
        assert_eq!(max_set_distance(&a, &b), 9);
    }

    #[test]
    fn ioi_examples() {
        assert_eq!(average_ioi(&onsets(&[0.0, 0.5, 1.0])).value, 0.5);
        assert_eq!(average_ioi(&onsets(&[0.0, 0.25, 1.0])).value, 0.5);
        assert_eq!(average_ioi(&onsets(&[0.0, 2.0])).value, 2.0);
        assert!(average_ioi(&onsets(&[1.0])).degenerate);
    }

    #[test]
    fn lz_examples() {
        assert_eq!(pitch_set_lz(&sets(&[&[60]])).unwrap(), 1);
        assert_eq!(pitch_set_lz(&sets(&[&[60], &[60], &[60], &[60]])).unwrap(), 3);
        let (a, b): (&[i64], &[i64]) = (&[60], &[62]);
        assert_eq!(pitch_set_lz(&sets(&[a, b, a, b, a, b])).unwrap(), 4);
        assert!(pitch_set_lz(&[]).is_err());
    }

    fn n(p: i64, on: i64) -> NoteEvent {
        NoteEvent::new(Pitch::new(p).unwrap(), Beats::from_integer(on), Beats::from_integer(1)).unwrap()
    }

    #[test]
    fn identical_hands_give_paired_slots() {
        let notes = vec![n(60, 0), n(64, 0), n(67, 1), n(72, 2), n(60, 3)];
        let piece = Piece::new("x", notes.clone(), notes).with_tempo(90.0);
        let fv = extract_features(&piece).unwrap();
        for pair in fv.values.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
        assert!(!fv.tempo_assumed);
    }

    #[test]
    fn missing_tempo_is_flagged() {
        let piece = Piece::new("x", vec![n(60, 0), n(62, 1)], vec![n(48, 0), n(50, 2)]);
        let fv = extract_features(&piece).unwrap();
        assert!(fv.tempo_assumed);
        // 100 bpm: one beat = 0.6 s
        assert!((fv.get(Descriptor::AverageIoi, Hand::Right) - 0.6).abs() < 1e-12);
        assert!((fv.get(Descriptor::AverageIoi, Hand::Left) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn empty_hand_is_named() {
        let piece = Piece::new("x", vec![n(60, 0)], vec![]);
        assert!(matches!(extract_features(&piece), Err(Error::EmptyPart(Hand::Left))));
    }

    #[test]
    fn degenerate_part_flags_slots() {
        let piece = Piece::new("x", vec![n(60, 0)], vec![n(48, 0), n(50, 1)]);
        let fv = extract_features(&piece).unwrap();
        assert_eq!(
            fv.degenerate_slots,
            vec![
                Descriptor::DisplacementRate.slot(Hand::Right),
                Descriptor::AverageIoi.slot(Hand::Right)
            ]
        );
    }

    #[test]
    fn slot_order_matches_names() {
        for (i, d) in Descriptor::ALL.iter().enumerate() {
            assert_eq!(d.slot(Hand::Right), 2 * i);
            assert_eq!(d.slot(Hand::Left), 2 * i + 1);
        }
        assert!(FEATURE_NAMES[Descriptor::AverageIoi.slot(Hand::Left)].ends_with("ioi_l"));
    }

    #[test]
    fn feature_table_round_trip() {
        let rows = vec![FeatureRow {
            id: "p1".into(),
            label: Some(3),
            features: FeatureVector::from_values(std::array::from_fn(|i| i as f64 * 0.1 + 1e-7)),
        }];
        let mut buf = Vec::new();
        write_feature_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,label,pitch_entropy_r,"));
        assert!(text.lines().next().unwrap().ends_with(",tempo_assumed"));
        assert_eq!(read_feature_table(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn malformed_table_rejected() {
        assert!(read_feature_table("id,label\nx,1\n".as_bytes()).is_err());
    }
}
