//! Canonical piece JSON.
//!
//! ```json
//! {"id": "op1", "tempo_bpm": 100, "label": 3,
//!  "parts": {"right": [{"pitch": 60, "onset_beats": [0, 1], "duration_beats": [1, 2]}],
//!            "left":  [...]}}
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::quantize;
use crate::error::{Error, Result};
use crate::score::{Beats, Hand, NoteEvent, Piece, Pitch};

#[derive(Deserialize)]
struct RawPiece {
    id: Option<String>,
    tempo_bpm: Option<Value>,
    label: Option<Value>,
    parts: Option<RawParts>,
}

#[derive(Deserialize)]
struct RawParts {
    right: Option<Vec<RawNote>>,
    left: Option<Vec<RawNote>>,
}

#[derive(Deserialize)]
struct RawNote {
    pitch: Option<Value>,
    onset_beats: Option<Value>,
    duration_beats: Option<Value>,
}

#[derive(Serialize)]
struct OutPiece<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    tempo_bpm: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u32>,
    parts: OutParts,
}

#[derive(Serialize)]
struct OutParts {
    right: Vec<OutNote>,
    left: Vec<OutNote>,
}

#[derive(Serialize)]
struct OutNote {
    pitch: u8,
    onset_beats: [i64; 2],
    duration_beats: [i64; 2],
}

fn rational(value: Option<&Value>, field: &str) -> Result<Beats> {
    let arr = value
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse(field, "expected [numerator, denominator]"))?;
    let ints: Vec<i64> = arr.iter().filter_map(Value::as_i64).collect();
    match ints.as_slice() {
        [_, 0] => Err(Error::parse(field, "zero denominator")),
        [n, d] if arr.len() == 2 => Ok(quantize(Beats::new(*n, *d))),
        _ => Err(Error::parse(field, "expected two integers")),
    }
}

fn parse_notes(raw: Option<Vec<RawNote>>, hand: Hand) -> Result<Vec<NoteEvent>> {
    let raw = raw.ok_or_else(|| Error::parse(format!("parts.{hand}"), "missing hand"))?;
    raw.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let at = |f: &str| format!("parts.{hand}[{i}].{f}");
            let pitch = n
                .pitch
                .as_ref()
                .and_then(Value::as_i64)
                .ok_or_else(|| Error::parse(at("pitch"), "expected integer"))?;
            let pitch = Pitch::new(pitch)
                .map_err(|_| Error::parse(at("pitch"), format!("pitch out of range: {pitch}")))?;
            let onset = rational(n.onset_beats.as_ref(), &at("onset_beats"))?;
            let duration = rational(n.duration_beats.as_ref(), &at("duration_beats"))?;
            let duration = if duration > Beats::from_integer(0) {
                duration.max(Beats::new(1, super::TICKS_PER_QUARTER))
            } else {
                duration
            };
            if onset < Beats::from_integer(0) {
                return Err(Error::parse(at("onset_beats"), "negative onset"));
            }
            if duration <= Beats::from_integer(0) {
                return Err(Error::parse(at("duration_beats"), "duration must be positive"));
            }
            NoteEvent::new(pitch, onset, duration)
        })
        .collect()
}

pub fn parse_canonical_json(bytes: &[u8]) -> Result<Piece> {
    let raw: RawPiece =
        serde_json::from_slice(bytes).map_err(|e| Error::parse("document", e.to_string()))?;
    let id = raw
        .id
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::parse("id", "missing or empty"))?;
    let tempo_bpm = match raw.tempo_bpm {
        None | Some(Value::Null) => None,
        Some(v) => {
            let bpm = v
                .as_f64()
                .ok_or_else(|| Error::parse("tempo_bpm", "expected number"))?;
            if !(bpm.is_finite() && bpm > 0.0) {
                return Err(Error::parse("tempo_bpm", format!("tempo must be positive, got {bpm}")));
            }
            Some(bpm)
        }
    };
    let label = match raw.label {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .filter(|l| *l >= 1 && *l <= u32::MAX as u64)
                .ok_or_else(|| Error::parse("label", "expected positive integer"))? as u32,
        ),
    };
    let parts = raw.parts.ok_or_else(|| Error::parse("parts", "missing"))?;
    let right = parse_notes(parts.right, Hand::Right)?;
    let left = parse_notes(parts.left, Hand::Left)?;
    for (notes, hand) in [(&right, Hand::Right), (&left, Hand::Left)] {
        if notes.is_empty() {
            return Err(Error::EmptyPart(hand));
        }
    }
    let mut piece = Piece::new(id, right, left);
    piece.tempo_bpm = tempo_bpm;
    piece.label = label;
    Ok(piece)
}

fn tempo_value(bpm: f64) -> Value {
    if bpm.fract() == 0.0 && bpm.abs() < 1e15 {
        Value::from(bpm as i64)
    } else {
        Value::from(bpm)
    }
}

fn out_notes(notes: &[NoteEvent]) -> Vec<OutNote> {
    notes
        .iter()
        .map(|n| OutNote {
            pitch: n.pitch.midi(),
            onset_beats: [*n.onset_beats.numer(), *n.onset_beats.denom()],
            duration_beats: [*n.duration_beats.numer(), *n.duration_beats.denom()],
        })
        .collect()
}

pub fn serialize_canonical_json(piece: &Piece) -> Vec<u8> {
    let out = OutPiece {
        id: &piece.id,
        tempo_bpm: piece.tempo_bpm.map(tempo_value),
        label: piece.label,
        parts: OutParts {
            right: out_notes(piece.right.notes()),
            left: out_notes(piece.left.notes()),
        },
    };
    let mut bytes = serde_json::to_vec(&out).expect("piece serialization is infallible");
    bytes.push(b'\n');
    bytes
}
