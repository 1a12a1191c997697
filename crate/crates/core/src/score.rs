//! Symbolic score model: pitches, note events, hand parts and the derived
//! event sequences every descriptor is computed from.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Musical time in quarter-note units, kept as an exact rational.
pub type Beats = Ratio<i64>;

/// Tempo used when a score carries no tempo marking.
pub const DEFAULT_TEMPO_BPM: f64 = 100.0;

/// A MIDI note number in `[0, 127]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Pitch(u8);

impl Pitch {
    pub const MAX: u8 = 127;

    pub fn new(midi: i64) -> Result<Self> {
        if (0..=Self::MAX as i64).contains(&midi) {
            Ok(Pitch(midi as u8))
        } else {
            Err(Error::parse("pitch", format!("pitch out of range: {midi}")))
        }
    }

    pub fn midi(self) -> u8 {
        self.0
    }

    /// Shift by `semitones`, failing if the result leaves the MIDI range.
    pub fn transpose(self, semitones: i64) -> Result<Self> {
        Pitch::new(self.0 as i64 + semitones)
    }
}

impl TryFrom<i64> for Pitch {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        Pitch::new(value)
    }
}

impl From<Pitch> for i64 {
    fn from(p: Pitch) -> i64 {
        p.0 as i64
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Right,
    Left,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Right, Hand::Left];

    pub fn suffix(self) -> &'static str {
        match self {
            Hand::Right => "R",
            Hand::Left => "L",
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hand::Right => f.write_str("right"),
            Hand::Left => f.write_str("left"),
        }
    }
}

/// One attacked note.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteEvent {
    pub pitch: Pitch,
    pub onset_beats: Beats,
    pub duration_beats: Beats,
}

impl NoteEvent {
    pub fn new(pitch: Pitch, onset_beats: Beats, duration_beats: Beats) -> Result<Self> {
        if onset_beats < Beats::from_integer(0) {
            return Err(Error::parse("onset_beats", "negative onset"));
        }
        if duration_beats <= Beats::from_integer(0) {
            return Err(Error::parse("duration_beats", "duration must be positive"));
        }
        Ok(NoteEvent {
            pitch,
            onset_beats,
            duration_beats,
        })
    }
}

/// The notes played by one hand, ordered by onset then pitch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandPart {
    hand: Hand,
    notes: Vec<NoteEvent>,
}

impl HandPart {
    pub fn new(hand: Hand, mut notes: Vec<NoteEvent>) -> Self {
        notes.sort_by(|a, b| {
            a.onset_beats
                .cmp(&b.onset_beats)
                .then(a.pitch.cmp(&b.pitch))
                .then(a.duration_beats.cmp(&b.duration_beats))
        });
        HandPart { hand, notes }
    }

    pub fn hand(&self) -> Hand {
        self.hand
    }

    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    fn require_notes(&self) -> Result<&[NoteEvent]> {
        if self.notes.is_empty() {
            Err(Error::EmptyPart(self.hand))
        } else {
            Ok(&self.notes)
        }
    }
}

/// A two-hand piano score with optional tempo and difficulty label.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub id: String,
    pub right: HandPart,
    pub left: HandPart,
    pub tempo_bpm: Option<f64>,
    pub label: Option<u32>,
}

impl Piece {
    pub fn new(id: impl Into<String>, right: Vec<NoteEvent>, left: Vec<NoteEvent>) -> Self {
        Piece {
            id: id.into(),
            right: HandPart::new(Hand::Right, right),
            left: HandPart::new(Hand::Left, left),
            tempo_bpm: None,
            label: None,
        }
    }

    pub fn with_tempo(mut self, bpm: f64) -> Self {
        self.tempo_bpm = Some(bpm);
        self
    }

    pub fn with_label(mut self, level: u32) -> Self {
        self.label = Some(level);
        self
    }

    pub fn part(&self, hand: Hand) -> &HandPart {
        match hand {
            Hand::Right => &self.right,
            Hand::Left => &self.left,
        }
    }
}

/// A difficulty level on a `K`-grade ordinal scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyLabel {
    level: u32,
    k: u32,
}

impl DifficultyLabel {
    pub fn new(level: u32, k: u32) -> Result<Self> {
        if k < 2 {
            return Err(Error::Load(format!("number of grades must be >= 2, got {k}")));
        }
        if level < 1 || level > k {
            return Err(Error::LevelOutOfRange { level, k });
        }
        Ok(DifficultyLabel { level, k })
    }

    pub fn level(self) -> u32 {
        self.level
    }

    pub fn k(self) -> u32 {
        self.k
    }
}

/// The set of pitches attacked at one instant, with its onset in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchSetEvent {
    pub pitches: BTreeSet<Pitch>,
    pub onset_seconds: f64,
}

/// Marked tempo, or the 100 bpm fallback when the score has none.
pub fn resolve_tempo(piece: &Piece) -> Result<f64> {
    match piece.tempo_bpm {
        Some(bpm) if bpm.is_finite() && bpm > 0.0 => Ok(bpm),
        Some(bpm) => Err(Error::InvalidTempo(bpm)),
        None => Ok(DEFAULT_TEMPO_BPM),
    }
}

/// Group notes sharing an onset into pitch-set events on a seconds timeline.
pub fn build_pitch_set_sequence(part: &HandPart, bpm: f64) -> Result<Vec<PitchSetEvent>> {
    if !(bpm.is_finite() && bpm > 0.0) {
        return Err(Error::InvalidTempo(bpm));
    }
    let notes = part.require_notes()?;
    let seconds_per_beat = 60.0 / bpm;
    let mut events: Vec<PitchSetEvent> = Vec::new();
    let mut current_onset: Option<Beats> = None;
    for note in notes {
        if current_onset == Some(note.onset_beats) {
            if let Some(last) = events.last_mut() {
                last.pitches.insert(note.pitch);
            }
            continue;
        }
        current_onset = Some(note.onset_beats);
        events.push(PitchSetEvent {
            pitches: BTreeSet::from([note.pitch]),
            onset_seconds: beats_to_f64(note.onset_beats) * seconds_per_beat,
        });
    }
    Ok(events)
}

/// One pitch per note occurrence, in part order.
pub fn pitch_event_sequence(part: &HandPart) -> Result<Vec<Pitch>> {
    Ok(part.require_notes()?.iter().map(|n| n.pitch).collect())
}

pub fn beats_to_f64(b: Beats) -> f64 {
    *b.numer() as f64 / *b.denom() as f64
}
