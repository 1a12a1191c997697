//! Interpretable difficulty estimation for symbolic piano scores.
//!
//! The pipeline is:
//!
//! ```text
//! score (JSON / MusicXML) -> per-hand event sequences -> 12 descriptors
//!     -> per-descriptor tanh scores -> aggregate -> cumulative grade probabilities
//! ```
//!
//! Every prediction can be explained as a rubric ([`report::RubricReport`]):
//! per-descriptor scores, their divergence from the grade average, the
//! aggregate on a 0-12 scale and the decision boundaries between grades.

pub mod analysis;
pub mod descriptors;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod report;
pub mod score;
pub mod synth;
pub mod training;

pub use descriptors::{extract_features, Descriptor, FeatureVector, FEATURE_NAMES, N_FEATURES};
pub use error::{Error, Result};
pub use ingest::{load_corpus, parse_canonical_json, parse_musicxml, serialize_canonical_json, Corpus};
pub use model::{decode, forward, ForwardTrace, Head, ModelParams, Scaler};
pub use report::{build_report, render, Format, RubricReport};
pub use score::{Beats, DifficultyLabel, Hand, HandPart, NoteEvent, Piece, Pitch, PitchSetEvent};
pub use synth::{gen_feature_dataset, gen_score_corpus, SynthMode, SynthSpec};
pub use training::{cross_validate, fit, random_search, Sample, SearchSpace, TrainConfig};
