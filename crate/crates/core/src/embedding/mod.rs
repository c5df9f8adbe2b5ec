//! Per-region embedding vectors, their flat-file store, and trial scoring.

mod provider;
mod score;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::RegionTag;

pub use provider::{ExternalProvider, ProviderError};
pub(crate) use score::read_labeled_columns;
pub use score::{
    cosine_score, cosine_similarity, parse_trials, score_trials, write_trials, Label, ProviderMap, ScoreTable,
    TrialPair, TrialScoreVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    Rgb,
    Grayscale,
}

impl FromStr for ChannelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rgb" => Ok(ChannelMode::Rgb),
            "grayscale" | "gray" => Ok(ChannelMode::Grayscale),
            other => Err(format!("unknown channel mode `{other}`")),
        }
    }
}

/// Describes one feature extractor (a CNN backbone or any other source).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub provider_id: String,
    pub dim: usize,
    pub channel_mode: ChannelMode,
    pub input_side: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("malformed embedding file (line {line}): {reason}")]
    Malformed { line: u64, reason: String },
    #[error("dimension mismatch for {key}: expected {expected}, found {found}")]
    DimensionMismatch { key: String, expected: usize, found: usize },
    #[error("duplicate embedding for {0}")]
    DuplicateKey(String),
    #[error("non-finite component in embedding for {0}")]
    NonFiniteComponent(String),
    #[error("zero-norm embedding for {0}")]
    ZeroNorm(String),
    #[error("row for provider `{found}` in a file imported as `{expected}`")]
    ProviderMismatch { expected: String, found: String },
    #[error("image `{image}` is assigned to subjects `{first}` and `{second}`")]
    InconsistentSubject { image: String, first: String, second: String },
    #[error("region mismatch: {0} vs {1}")]
    RegionMismatch(RegionTag, RegionTag),
    #[error("provider mismatch: `{0}` vs `{1}`")]
    ProviderPairMismatch(String, String),
    #[error("missing embedding for {0}")]
    MissingEmbedding(String),
    #[error("trial {a} vs {b}: {reason}")]
    InvalidTrial { a: String, b: String, reason: String },
    #[error("no provider configured for region {0}")]
    UnmappedRegion(RegionTag),
    #[error("malformed {what} (line {line}): {reason}")]
    MalformedTable { what: &'static str, line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmbeddingKey {
    pub image_id: String,
    pub region: RegionTag,
    pub provider_id: String,
}

impl fmt::Display for EmbeddingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(image {}, region {}, provider {})", self.image_id, self.region, self.provider_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub subject_id: String,
    pub image_id: String,
    pub region: RegionTag,
    pub provider_id: String,
    vector: Vec<f64>,
    norm: f64,
}

impl EmbeddingRecord {
    pub fn new(
        subject_id: impl Into<String>,
        image_id: impl Into<String>,
        region: RegionTag,
        provider_id: impl Into<String>,
        vector: Vec<f64>,
    ) -> Result<Self, EmbeddingError> {
        let (subject_id, image_id, provider_id) = (subject_id.into(), image_id.into(), provider_id.into());
        let key = || EmbeddingKey {
            image_id: image_id.clone(),
            region,
            provider_id: provider_id.clone(),
        };
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteComponent(key().to_string()));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(EmbeddingError::ZeroNorm(key().to_string()));
        }
        Ok(EmbeddingRecord {
            subject_id,
            image_id,
            region,
            provider_id,
            vector,
            norm,
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn key(&self) -> EmbeddingKey {
        EmbeddingKey {
            image_id: self.image_id.clone(),
            region: self.region,
            provider_id: self.provider_id.clone(),
        }
    }
}

/// In-memory embedding index keyed by (image, region, provider).
///
/// Iteration order is by key, so exports and scores do not depend on the
/// order rows were inserted in.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    records: BTreeMap<EmbeddingKey, EmbeddingRecord>,
    subjects: BTreeMap<String, String>,
    dims: BTreeMap<String, usize>,
}

const FIXED_COLUMNS: [&str; 5] = ["subject_id", "image_id", "region", "provider_id", "dim"];

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str, region: RegionTag, provider_id: &str) -> Option<&EmbeddingRecord> {
        self.records.get(&EmbeddingKey {
            image_id: image_id.to_string(),
            region,
            provider_id: provider_id.to_string(),
        })
    }

    pub fn subject_of(&self, image_id: &str) -> Option<&str> {
        self.subjects.get(image_id).map(String::as_str)
    }

    pub fn records(&self) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.values()
    }

    /// Provider ids with their embedding dimension.
    pub fn providers(&self) -> &BTreeMap<String, usize> {
        &self.dims
    }

    pub fn insert(&mut self, rec: EmbeddingRecord) -> Result<(), EmbeddingError> {
        let key = rec.key();
        if self.records.contains_key(&key) {
            return Err(EmbeddingError::DuplicateKey(key.to_string()));
        }
        if let Some(&dim) = self.dims.get(&rec.provider_id) {
            if dim != rec.dim() {
                return Err(EmbeddingError::DimensionMismatch {
                    key: key.to_string(),
                    expected: dim,
                    found: rec.dim(),
                });
            }
        }
        if let Some(s) = self.subjects.get(&rec.image_id) {
            if *s != rec.subject_id {
                return Err(EmbeddingError::InconsistentSubject {
                    image: rec.image_id.clone(),
                    first: s.clone(),
                    second: rec.subject_id.clone(),
                });
            }
        }
        self.dims.insert(rec.provider_id.clone(), rec.dim());
        self.subjects.insert(rec.image_id.clone(), rec.subject_id.clone());
        self.records.insert(key, rec);
        Ok(())
    }

    /// Reads an embedding CSV whose rows may come from several providers.
    /// Each provider's dimension is fixed by its first row.
    pub fn from_csv(input: &[u8]) -> Result<Self, EmbeddingError> {
        let mut store = EmbeddingStore::new();
        store.import_rows(input, None)?;
        Ok(store)
    }

    /// Imports rows produced by a single provider, checking every row against
    /// `spec`.
    pub fn import_embeddings(&mut self, input: &[u8], spec: &ProviderSpec) -> Result<usize, EmbeddingError> {
        self.import_rows(input, Some(spec))
    }

    fn import_rows(&mut self, input: &[u8], spec: Option<&ProviderSpec>) -> Result<usize, EmbeddingError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() < FIXED_COLUMNS.len()
            || FIXED_COLUMNS.iter().zip(headers.iter()).any(|(a, b)| *a != b)
        {
            return Err(EmbeddingError::Malformed {
                line: 1,
                reason: format!("header must start with {}", FIXED_COLUMNS.join(",")),
            });
        }
        let mut n = 0;
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            if row.len() < FIXED_COLUMNS.len() {
                return Err(EmbeddingError::Malformed {
                    line,
                    reason: format!("expected at least {} columns, found {}", FIXED_COLUMNS.len(), row.len()),
                });
            }
            let region: RegionTag = row[2].parse().map_err(|e: crate::region::UnknownRegion| {
                EmbeddingError::Malformed { line, reason: e.to_string() }
            })?;
            let key = EmbeddingKey {
                image_id: row[1].to_string(),
                region,
                provider_id: row[3].to_string(),
            };
            let declared: usize = row[4].parse().map_err(|_| EmbeddingError::Malformed {
                line,
                reason: format!("non-integer dim `{}`", &row[4]),
            })?;
            let found = row.len() - FIXED_COLUMNS.len();
            if let Some(spec) = spec {
                if key.provider_id != spec.provider_id {
                    return Err(EmbeddingError::ProviderMismatch {
                        expected: spec.provider_id.clone(),
                        found: key.provider_id,
                    });
                }
                for got in [declared, found] {
                    if got != spec.dim {
                        return Err(EmbeddingError::DimensionMismatch {
                            key: key.to_string(),
                            expected: spec.dim,
                            found: got,
                        });
                    }
                }
            } else if declared != found {
                return Err(EmbeddingError::DimensionMismatch {
                    key: key.to_string(),
                    expected: declared,
                    found,
                });
            }
            let vector = row
                .iter()
                .skip(FIXED_COLUMNS.len())
                .map(|v| {
                    v.parse::<f64>().map_err(|_| EmbeddingError::Malformed {
                        line,
                        reason: format!("non-numeric component `{v}`"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            self.insert(EmbeddingRecord::new(&row[0], key.image_id, region, key.provider_id, vector)?)?;
            n += 1;
        }
        Ok(n)
    }

    /// Serializes to the embedding CSV; values use the shortest exact
    /// decimal form so a re-import reproduces the vectors bit for bit.
    pub fn to_csv(&self) -> String {
        let max_dim = self.dims.values().copied().max().unwrap_or(0);
        let mut out = FIXED_COLUMNS.join(",");
        for i in 0..max_dim {
            out.push_str(&format!(",v{i}"));
        }
        out.push('\n');
        for rec in self.records.values() {
            out.push_str(&format!(
                "{},{},{},{},{}",
                rec.subject_id,
                rec.image_id,
                rec.region,
                rec.provider_id,
                rec.dim()
            ));
            for v in &rec.vector {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
