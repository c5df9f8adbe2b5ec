use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::embedding::{Label, TrialPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MakeupState {
    Before,
    After,
}

impl MakeupState {
    pub fn as_str(self) -> &'static str {
        match self {
            MakeupState::Before => "before",
            MakeupState::After => "after",
        }
    }
}

impl FromStr for MakeupState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "before" => Ok(MakeupState::Before),
            "after" => Ok(MakeupState::After),
            other => Err(format!("makeup_state must be before or after, got `{other}`")),
        }
    }
}

/// Image layout a dataset promises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// One before and one after image per subject (EMFD, FAM, M501).
    Pairs,
    /// Two before and two after images per subject (YMU).
    Ymu,
    /// No layout constraint.
    Custom,
}

impl DatasetKind {
    pub fn of(dataset_id: &str) -> Self {
        match dataset_id {
            "emfd" | "fam" | "m501" => DatasetKind::Pairs,
            "ymu" => DatasetKind::Ymu,
            _ => DatasetKind::Custom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub image_id: String,
    pub makeup_state: MakeupState,
    pub landmark_file: String,
    pub image_file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub entries: Vec<ManifestEntry>,
}

const MANIFEST_HEADER: [&str; 6] = ["dataset_id", "subject_id", "image_id", "makeup_state", "landmark_file", "image_file"];

/// Which images a trial list compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    BeforeVsAfter,
    BeforeVsBefore,
    AfterVsAfter,
}

impl TrialMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialMode::BeforeVsAfter => "before_vs_after",
            TrialMode::BeforeVsBefore => "before_vs_before",
            TrialMode::AfterVsAfter => "after_vs_after",
        }
    }
}

impl fmt::Display for TrialMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ImpostorPolicy {
    /// Every cross-subject pair.
    #[default]
    All,
    /// A seeded uniform sample without replacement, kept in enumeration order.
    Sample { count: usize, seed: u64 },
}

/// Parses a manifest CSV; rows are grouped by `dataset_id` in order of first
/// appearance and each dataset is validated.
pub fn parse_manifests(input: &[u8]) -> Result<Vec<DatasetManifest>, ProtocolError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let bad = |line: u64, reason: String| ProtocolError::Manifest { line, reason };
    let headers = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(bad(1, format!("header must be {}", MANIFEST_HEADER.join(","))));
    }
    let mut out: Vec<DatasetManifest> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let entry = ManifestEntry {
            subject_id: rec[1].to_string(),
            image_id: rec[2].to_string(),
            makeup_state: rec[3].parse().map_err(|e| bad(line, e))?,
            landmark_file: rec[4].to_string(),
            image_file: rec[5].to_string(),
        };
        if entry.subject_id.is_empty() || entry.image_id.is_empty() {
            return Err(bad(line, "empty subject or image id".into()));
        }
        match out.iter_mut().find(|m| m.dataset_id == rec[0]) {
            Some(m) => m.entries.push(entry),
            None => out.push(DatasetManifest {
                dataset_id: rec[0].to_string(),
                entries: vec![entry],
            }),
        }
    }
    for m in &out {
        m.validate()?;
    }
    Ok(out)
}

pub fn write_manifests(manifests: &[DatasetManifest]) -> String {
    let mut out = MANIFEST_HEADER.join(",");
    out.push('\n');
    for m in manifests {
        for e in &m.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.dataset_id,
                e.subject_id,
                e.image_id,
                e.makeup_state.as_str(),
                e.landmark_file,
                e.image_file
            ));
        }
    }
    out
}

impl DatasetManifest {
    pub fn kind(&self) -> DatasetKind {
        DatasetKind::of(&self.dataset_id)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let invalid = |r: String| ProtocolError::InvalidManifest {
            dataset: self.dataset_id.clone(),
            reason: r,
        };
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.image_id.as_str()) {
                return Err(invalid(format!("image {} listed twice", e.image_id)));
            }
        }
        let expected = match self.kind() {
            DatasetKind::Pairs => Some(1),
            DatasetKind::Ymu => Some(2),
            DatasetKind::Custom => None,
        };
        if let Some(n) = expected {
            for s in self.subjects() {
                for state in [MakeupState::Before, MakeupState::After] {
                    let got = self.images_of(s, state).len();
                    if got != n {
                        return Err(invalid(format!(
                            "subject {s} has {got} {} images, expected {n}",
                            state.as_str()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Subject ids in order of first appearance.
    pub fn subjects(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .map(|e| e.subject_id.as_str())
            .filter(|s| seen.insert(*s))
            .collect()
    }

    pub fn images_of(&self, subject: &str, state: MakeupState) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.subject_id == subject && e.makeup_state == state)
            .map(|e| e.image_id.as_str())
            .collect()
    }

    pub fn subject_index(&self) -> BTreeMap<&str, &str> {
        self.entries
            .iter()
            .map(|e| (e.image_id.as_str(), e.subject_id.as_str()))
            .collect()
    }

    pub fn supports(&self, mode: TrialMode) -> bool {
        match mode {
            TrialMode::BeforeVsAfter => true,
            TrialMode::BeforeVsBefore | TrialMode::AfterVsAfter => {
                let state = if mode == TrialMode::BeforeVsBefore {
                    MakeupState::Before
                } else {
                    MakeupState::After
                };
                self.kind() != DatasetKind::Pairs
                    && self.subjects().iter().all(|s| self.images_of(s, state).len() >= 2)
            }
        }
    }
}

fn state_pair(mode: TrialMode) -> (MakeupState, MakeupState) {
    match mode {
        TrialMode::BeforeVsAfter => (MakeupState::Before, MakeupState::After),
        TrialMode::BeforeVsBefore => (MakeupState::Before, MakeupState::Before),
        TrialMode::AfterVsAfter => (MakeupState::After, MakeupState::After),
    }
}

/// Genuine trials of the given subjects, in subject order.
pub(crate) fn genuine_trials(m: &DatasetManifest, mode: TrialMode, subjects: &[&str]) -> Vec<TrialPair> {
    let (sa, sb) = state_pair(mode);
    let mut out = Vec::new();
    for s in subjects {
        let a = m.images_of(s, sa);
        if sa == sb {
            for i in 0..a.len() {
                for j in i + 1..a.len() {
                    out.push(TrialPair::new(a[i], a[j], Label::Genuine));
                }
            }
        } else {
            let b = m.images_of(s, sb);
            for x in &a {
                for y in &b {
                    out.push(TrialPair::new(*x, *y, Label::Genuine));
                }
            }
        }
    }
    out
}

/// Every cross-subject trial among the given subjects. Cross-state modes
/// keep the (before, after) orientation, so each ordered subject pair
/// contributes; within-state modes count each unordered image pair once.
pub(crate) fn impostor_trials(m: &DatasetManifest, mode: TrialMode, subjects: &[&str]) -> Vec<TrialPair> {
    let (sa, sb) = state_pair(mode);
    let images: Vec<(Vec<&str>, Vec<&str>)> = subjects.iter().map(|s| (m.images_of(s, sa), m.images_of(s, sb))).collect();
    let mut out = Vec::new();
    for i in 0..subjects.len() {
        for j in 0..subjects.len() {
            if i == j || (sa == sb && j < i) {
                continue;
            }
            for x in &images[i].0 {
                for y in &images[j].1 {
                    out.push(TrialPair::new(*x, *y, Label::Impostor));
                }
            }
        }
    }
    out
}

/// Uniform sample of `count` items without replacement, in original order.
pub(crate) fn sample_in_order<T: Clone>(items: &[T], count: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if count >= items.len() {
        return items.to_vec();
    }
    let mut idx = rand::seq::index::sample(rng, items.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

/// Genuine trials followed by impostor trials for the whole dataset.
pub fn build_trials(
    manifest: &DatasetManifest,
    mode: TrialMode,
    impostors: ImpostorPolicy,
) -> Result<Vec<TrialPair>, ProtocolError> {
    if !manifest.supports(mode) {
        return Err(ProtocolError::ModeUnsupported {
            dataset: manifest.dataset_id.clone(),
            mode,
        });
    }
    let subjects = manifest.subjects();
    let mut trials = genuine_trials(manifest, mode, &subjects);
    let pool = impostor_trials(manifest, mode, &subjects);
    match impostors {
        ImpostorPolicy::All => trials.extend(pool),
        ImpostorPolicy::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            trials.extend(sample_in_order(&pool, count, &mut rng));
        }
    }
    Ok(trials)
}
