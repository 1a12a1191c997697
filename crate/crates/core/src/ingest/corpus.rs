use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{parse_canonical_json, parse_musicxml, serialize_canonical_json};
use crate::descriptors::{extract_features, FeatureRow};
use crate::error::{Error, Result};
use crate::score::{DifficultyLabel, Piece};
use crate::training::{derive_seed, Sample, N_FOLDS};

/// A labeled set of pieces with a 5-fold assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Sorted by id.
    pub pieces: Vec<Piece>,
    pub k: u32,
    pub folds: Option<BTreeMap<String, usize>>,
}

impl Corpus {
    /// Build and validate an in-memory corpus.
    pub fn new(mut pieces: Vec<Piece>, k: u32, folds: Option<BTreeMap<String, usize>>) -> Result<Self> {
        pieces.sort_by(|a, b| a.id.cmp(&b.id));
        let mut seen = HashSet::new();
        for p in &pieces {
            if p.id.is_empty() {
                return Err(Error::Load("empty piece id".into()));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Load(format!("duplicate id `{}`", p.id)));
            }
            let level = p
                .label
                .ok_or_else(|| Error::Load(format!("piece `{}` has no label", p.id)))?;
            DifficultyLabel::new(level, k).map_err(|e| Error::Load(format!("piece `{}`: {e}", p.id)))?;
        }
        if let Some(folds) = &folds {
            for p in &pieces {
                match folds.get(&p.id) {
                    Some(f) if *f < N_FOLDS => {}
                    Some(f) => return Err(Error::Load(format!("piece `{}` has fold {f}", p.id))),
                    None => return Err(Error::Load(format!("piece `{}` has no fold", p.id))),
                }
            }
        }
        Ok(Corpus { pieces, k, folds })
    }

    /// Assign folds with [`assign_folds`] if none are present.
    pub fn ensure_folds(&mut self, seed: u64) {
        if self.folds.is_none() {
            let labels: Vec<(String, u32)> = self
                .pieces
                .iter()
                .map(|p| (p.id.clone(), p.label.unwrap_or(1)))
                .collect();
            self.folds = Some(assign_folds(&labels, seed));
        }
    }

    /// Fold index per piece, in piece order.
    pub fn fold_vector(&self) -> Result<Vec<usize>> {
        let folds = self
            .folds
            .as_ref()
            .ok_or_else(|| Error::Fit("corpus has no fold assignment".into()))?;
        self.pieces
            .iter()
            .map(|p| {
                folds
                    .get(&p.id)
                    .copied()
                    .ok_or_else(|| Error::Fit(format!("piece `{}` has no fold", p.id)))
            })
            .collect()
    }

    /// Extract features for every piece (in parallel, piece order preserved).
    pub fn feature_rows(&self) -> Result<Vec<FeatureRow>> {
        self.pieces
            .par_iter()
            .map(|p| {
                Ok(FeatureRow {
                    id: p.id.clone(),
                    label: p.label,
                    features: extract_features(p)
                        .map_err(|e| Error::Load(format!("piece `{}`: {e}", p.id)))?,
                })
            })
            .collect()
    }

    pub fn samples(&self) -> Result<Vec<Sample>> {
        Ok(self
            .feature_rows()?
            .into_iter()
            .map(|r| Sample {
                features: r.features.values,
                level: r.label.unwrap_or(1),
            })
            .collect())
    }
}

/// Stratified fold assignment: within each class, ids are sorted, shuffled
/// with a seed derived from `(seed, class)`, then dealt round-robin into the
/// five folds. The dealing position carries over from one class to the next
/// so fold totals stay balanced too.
pub fn assign_folds(labels: &[(String, u32)], seed: u64) -> BTreeMap<String, usize> {
    let mut by_class: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for (id, level) in labels {
        by_class.entry(*level).or_default().push(id);
    }
    let mut folds = BTreeMap::new();
    let mut next = 0usize;
    for (level, mut ids) in by_class {
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, level as u64));
        ids.shuffle(&mut rng);
        for id in ids {
            folds.insert(id.to_string(), next % N_FOLDS);
            next += 1;
        }
    }
    folds
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub id: String,
    pub level: u32,
    pub fold: Option<usize>,
}

/// Read a labels CSV with header `id,level[,fold]`.
pub fn read_labels(path: &Path, k: u32) -> Result<Vec<LabelRow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(&bytes[..]);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let has_fold = match headers.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["id", "level"] => false,
        ["id", "level", "fold"] => true,
        _ => {
            return Err(Error::Load(format!(
                "{}: expected header `id,level[,fold]`, got `{}`",
                path.display(),
                headers.join(",")
            )))
        }
    };
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Load(format!("{}:{line}: {e}", path.display())))?;
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Load(format!("{}:{line}: empty id", path.display())));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Load(format!("{}:{line}: duplicate id `{id}`", path.display())));
        }
        let level: u32 = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::Load(format!("{}:{line}: level: {e}", path.display())))?;
        DifficultyLabel::new(level, k)
            .map_err(|e| Error::Load(format!("{}:{line}: {e}", path.display())))?;
        let fold = if has_fold {
            let f: usize = rec
                .get(2)
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::Load(format!("{}:{line}: fold: {e}", path.display())))?;
            if f >= N_FOLDS {
                return Err(Error::Load(format!("{}:{line}: fold {f} outside [0, 4]", path.display())));
            }
            Some(f)
        } else {
            None
        };
        rows.push(LabelRow { id, level, fold });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub k: u32,
    pub seed: u64,
    /// Directory for parsed-score cache files (canonical JSON keyed by content hash).
    pub cache_dir: Option<PathBuf>,
}

impl LoadOptions {
    pub fn new(k: u32) -> Self {
        LoadOptions {
            k,
            seed: 0,
            cache_dir: None,
        }
    }
}

const SCORE_EXTENSIONS: [&str; 3] = ["json", "musicxml", "xml"];

/// Locate `<dir>/<id>.{json,musicxml,xml}`.
pub fn find_score_file(dir: &Path, id: &str) -> Option<PathBuf> {
    SCORE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

/// Parse one score file; the file stem is the piece id.
pub fn parse_score_file(path: &Path, cache_dir: Option<&Path>) -> Result<Piece> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Load(format!("{}: bad file name", path.display())))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext == "json" {
        let piece = parse_canonical_json(&bytes)?;
        if piece.id != id {
            return Err(Error::Load(format!(
                "{}: id `{}` does not match file name",
                path.display(),
                piece.id
            )));
        }
        return Ok(piece);
    }
    let cached = cache_dir.map(|dir| {
        let mut hasher = Sha256::new();
        hasher.update(id.as_bytes());
        hasher.update([0u8]);
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        dir.join(format!("{hex}.json"))
    });
    if let Some(cache) = &cached {
        if let Ok(hit) = fs::read(cache) {
            if let Ok(piece) = parse_canonical_json(&hit) {
                return Ok(piece);
            }
        }
    }
    let piece = parse_musicxml(&bytes, id)?;
    if let Some(cache) = &cached {
        // a failed cache write only costs a re-parse next time
        let _ = cache
            .parent()
            .map(fs::create_dir_all)
            .transpose()
            .and_then(|_| fs::write(cache, serialize_canonical_json(&piece)));
    }
    Ok(piece)
}

/// Load every piece listed in `labels_file` from `score_dir`.
///
/// Missing folds are assigned with [`assign_folds`] using `options.seed`.
pub fn load_corpus(score_dir: &Path, labels_file: &Path, options: &LoadOptions) -> Result<Corpus> {
    if !score_dir.is_dir() {
        return Err(Error::Load(format!("{} is not a directory", score_dir.display())));
    }
    let rows = read_labels(labels_file, options.k)?;
    let mut rows_sorted = rows.clone();
    rows_sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let parsed: Vec<(String, Result<Piece>)> = rows_sorted
        .par_iter()
        .map(|row| {
            let result = find_score_file(score_dir, &row.id)
                .ok_or_else(|| Error::Load(format!("no score file for `{}`", row.id)))
                .and_then(|path| parse_score_file(&path, options.cache_dir.as_deref()));
            (row.id.clone(), result)
        })
        .collect();

    let mut failures = Vec::new();
    let mut pieces = Vec::new();
    for ((id, result), row) in parsed.into_iter().zip(&rows_sorted) {
        match result {
            Ok(mut piece) => {
                if let Some(existing) = piece.label {
                    if existing != row.level {
                        failures.push(format!("{id}: label {existing} in score, {} in labels file", row.level));
                        continue;
                    }
                }
                piece.label = Some(row.level);
                pieces.push(piece);
            }
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Load(failures.join("; ")));
    }

    let explicit = rows.iter().filter(|r| r.fold.is_some()).count();
    let folds = if explicit > 0 {
        Some(rows.iter().filter_map(|r| r.fold.map(|f| (r.id.clone(), f))).collect())
    } else {
        None
    };
    let mut corpus = Corpus::new(pieces, options.k, folds)?;
    corpus.ensure_folds(options.seed);
    Ok(corpus)
}
