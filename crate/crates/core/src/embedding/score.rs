use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingKey, EmbeddingRecord, EmbeddingStore};
use crate::RegionTag;

/// Cosine similarity of two equal-length vectors, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn cosine_score(a: &EmbeddingRecord, b: &EmbeddingRecord) -> Result<f64, EmbeddingError> {
    if a.region != b.region {
        return Err(EmbeddingError::RegionMismatch(a.region, b.region));
    }
    if a.provider_id != b.provider_id {
        return Err(EmbeddingError::ProviderPairMismatch(a.provider_id.clone(), b.provider_id.clone()));
    }
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            key: b.key().to_string(),
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let dot: f64 = a.vector().iter().zip(b.vector()).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Genuine,
    Impostor,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Impostor => "impostor",
        }
    }

    pub fn swapped(self) -> Label {
        match self {
            Label::Genuine => Label::Impostor,
            Label::Impostor => Label::Genuine,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "genuine" => Ok(Label::Genuine),
            "impostor" => Ok(Label::Impostor),
            other => Err(format!("label must be genuine or impostor, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrialPair {
    pub image_a: String,
    pub image_b: String,
    pub label: Label,
}

impl TrialPair {
    pub fn new(image_a: impl Into<String>, image_b: impl Into<String>, label: Label) -> Self {
        TrialPair {
            image_a: image_a.into(),
            image_b: image_b.into(),
            label,
        }
    }
}

/// Which provider's embeddings are compared for each region.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderMap(pub BTreeMap<RegionTag, String>);

impl ProviderMap {
    pub fn uniform(provider: &str, regions: &[RegionTag]) -> Self {
        ProviderMap(regions.iter().map(|&r| (r, provider.to_string())).collect())
    }

    /// A single-provider store implies its provider for every region.
    pub fn infer(store: &EmbeddingStore, regions: &[RegionTag]) -> Option<Self> {
        let providers = store.providers();
        (providers.len() == 1).then(|| Self::uniform(providers.keys().next().unwrap(), regions))
    }

    pub fn get(&self, region: RegionTag) -> Option<&str> {
        self.0.get(&region).map(String::as_str)
    }

    /// `region=provider` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected region=provider", i + 1))?;
            let region: RegionTag = k.trim().parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            let v = v.trim().trim_matches('"');
            if v.is_empty() {
                return Err(format!("line {}: empty provider id", i + 1));
            }
            if map.insert(region, v.to_string()).is_some() {
                return Err(format!("line {}: region {region} listed twice", i + 1));
            }
        }
        Ok(ProviderMap(map))
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(r, p)| format!("{r}={p}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScoreVector {
    pub trial: TrialPair,
    pub scores: Vec<f64>,
}

/// Per-region scores of a list of trials, with the region order that every
/// row follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub regions: Vec<RegionTag>,
    pub rows: Vec<TrialScoreVector>,
}

impl ScoreTable {
    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r.scores[j])
    }

    pub fn count(&self, label: Label) -> usize {
        self.rows.iter().filter(|r| r.trial.label == label).count()
    }

    /// Keeps the listed regions, in the listed order.
    pub fn select(&self, regions: &[RegionTag]) -> Option<ScoreTable> {
        let idx: Option<Vec<usize>> = regions
            .iter()
            .map(|r| self.regions.iter().position(|x| x == r))
            .collect();
        let idx = idx?;
        Some(ScoreTable {
            regions: regions.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|row| TrialScoreVector {
                    trial: row.trial.clone(),
                    scores: idx.iter().map(|&j| row.scores[j]).collect(),
                })
                .collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_a,image_b,label");
        for r in &self.regions {
            out.push(',');
            out.push_str(r.as_str());
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{},{},{}", row.trial.image_a, row.trial.image_b, row.trial.label));
            for s in &row.scores {
                out.push_str(&format!(",{s}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(input: &[u8]) -> Result<Self, EmbeddingError> {
        let (names, rows) = read_labeled_columns(input, "score table")?;
        let regions = names
            .iter()
            .map(|n| {
                n.parse::<RegionTag>().map_err(|e| EmbeddingError::MalformedTable {
                    what: "score table",
                    line: 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScoreTable {
            regions,
            rows: rows
                .into_iter()
                .map(|(trial, scores)| TrialScoreVector { trial, scores })
                .collect(),
        })
    }
}

/// Column names plus one row of values per trial.
pub(crate) type LabeledColumns = (Vec<String>, Vec<(TrialPair, Vec<f64>)>);

/// Reads `image_a,image_b,label,<col>...` with at least one numeric column.
pub(crate) fn read_labeled_columns(input: &[u8], what: &'static str) -> Result<LabeledColumns, EmbeddingError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let bad = |line: u64, reason: String| EmbeddingError::MalformedTable { what, line, reason };
    if headers.len() < 4 || &headers[0] != "image_a" || &headers[1] != "image_b" || &headers[2] != "label" {
        return Err(bad(1, "header must be image_a,image_b,label,<score columns>".into()));
    }
    let names: Vec<String> = headers.iter().skip(3).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let label: Label = rec[2].parse().map_err(|e| bad(line, e))?;
        let scores = rec
            .iter()
            .skip(3)
            .map(|v| {
                let s: f64 = v.parse().map_err(|_| bad(line, format!("non-numeric score `{v}`")))?;
                if s.is_nan() {
                    return Err(bad(line, "NaN score".into()));
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((TrialPair::new(&rec[0], &rec[1], label), scores));
    }
    Ok((names, rows))
}

/// Reads a trial list CSV `image_a,image_b,label`.
pub fn parse_trials(input: &[u8]) -> Result<Vec<TrialPair>, EmbeddingError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["image_a", "image_b", "label"] {
        return Err(EmbeddingError::MalformedTable {
            what: "trial list",
            line: 1,
            reason: "header must be image_a,image_b,label".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let label = rec[2].parse().map_err(|reason| EmbeddingError::MalformedTable {
            what: "trial list",
            line,
            reason,
        })?;
        out.push(TrialPair::new(&rec[0], &rec[1], label));
    }
    Ok(out)
}

pub fn write_trials(trials: &[TrialPair]) -> String {
    let mut out = String::from("image_a,image_b,label\n");
    for t in trials {
        out.push_str(&format!("{},{},{}\n", t.image_a, t.image_b, t.label));
    }
    out
}

fn check_trial(store: &EmbeddingStore, t: &TrialPair) -> Result<(), EmbeddingError> {
    let invalid = |reason: &str| EmbeddingError::InvalidTrial {
        a: t.image_a.clone(),
        b: t.image_b.clone(),
        reason: reason.to_string(),
    };
    if t.image_a == t.image_b {
        return Err(invalid("an image cannot be compared with itself"));
    }
    let missing = |img: &str| EmbeddingError::MissingEmbedding(format!("image {img} (no embeddings in store)"));
    let sa = store.subject_of(&t.image_a).ok_or_else(|| missing(&t.image_a))?;
    let sb = store.subject_of(&t.image_b).ok_or_else(|| missing(&t.image_b))?;
    let expected = if sa == sb { Label::Genuine } else { Label::Impostor };
    if expected != t.label {
        return Err(invalid(&format!("labelled {} but subjects are {sa} and {sb}", t.label)));
    }
    Ok(())
}

/// Cosine score of every trial in every region, each region compared under
/// its mapped provider. Rows keep the order of `trials`.
pub fn score_trials(
    store: &EmbeddingStore,
    trials: &[TrialPair],
    regions: &[RegionTag],
    providers: &ProviderMap,
) -> Result<ScoreTable, EmbeddingError> {
    let mapped = regions
        .iter()
        .map(|&r| providers.get(r).map(|p| (r, p)).ok_or(EmbeddingError::UnmappedRegion(r)))
        .collect::<Result<Vec<_>, _>>()?;

    let lookup = |image: &str, region: RegionTag, provider: &str| {
        store.get(image, region, provider).ok_or_else(|| {
            EmbeddingError::MissingEmbedding(
                EmbeddingKey {
                    image_id: image.to_string(),
                    region,
                    provider_id: provider.to_string(),
                }
                .to_string(),
            )
        })
    };

    let results: Vec<Result<TrialScoreVector, EmbeddingError>> = trials
        .par_iter()
        .map(|t| {
            check_trial(store, t)?;
            let scores = mapped
                .iter()
                .map(|&(region, provider)| {
                    cosine_score(lookup(&t.image_a, region, provider)?, lookup(&t.image_b, region, provider)?)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TrialScoreVector {
                trial: t.clone(),
                scores,
            })
        })
        .collect();

    // first failing trial in input order, independent of scheduling
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreTable {
        regions: regions.to_vec(),
        rows,
    })
}
