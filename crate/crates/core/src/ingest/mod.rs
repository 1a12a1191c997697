//! Parsing external score formats into [`Piece`](crate::score::Piece)
//! values and loading labeled corpora.

mod corpus;
mod json;
mod musicxml;

pub use corpus::{
    assign_folds, find_score_file, load_corpus, parse_score_file, read_labels, Corpus, LabelRow,
    LoadOptions,
};
pub use json::{parse_canonical_json, serialize_canonical_json};
pub use musicxml::parse_musicxml;

use crate::score::Beats;

/// Finest onset grid kept after ingest, in ticks per quarter note.
pub const TICKS_PER_QUARTER: i64 = 960;

/// Snap `b` to the nearest multiple of 1/960 unless its reduced
/// denominator is already at most 960.
pub fn quantize(b: Beats) -> Beats {
    if *b.denom() <= TICKS_PER_QUARTER {
        return b;
    }
    let ticks = (b * Beats::from_integer(TICKS_PER_QUARTER)).round();
    ticks / Beats::from_integer(TICKS_PER_QUARTER)
}

/// Quantize a float beat position to the 1/960 grid.
pub fn quantize_f64(beats: f64) -> Beats {
    Beats::new((beats * TICKS_PER_QUARTER as f64).round() as i64, TICKS_PER_QUARTER)
}
