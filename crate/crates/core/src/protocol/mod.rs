//! Evaluation protocols over dataset manifests: single-dataset EER,
//! cross-dataset HTER, k-fold accuracy and the YMU before/after matrix.

mod manifest;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use manifest::{
    build_trials, parse_manifests, write_manifests, DatasetKind, DatasetManifest, ImpostorPolicy, MakeupState,
    ManifestEntry, TrialMode,
};

use manifest::{genuine_trials, impostor_trials, sample_in_order};

use crate::embedding::{score_trials, EmbeddingError, EmbeddingStore, Label, ProviderMap, ScoreTable, TrialPair};
use crate::fusion::{train_llr, FusionError, FusionModel, LlrConfig};
use crate::metrics::{sample_std, EvalReport, MetricsError, ScoreSet};
use crate::RegionTag;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("manifest line {line}: {reason}")]
    Manifest { line: u64, reason: String },
    #[error("dataset {dataset}: {reason}")]
    InvalidManifest { dataset: String, reason: String },
    #[error("dataset {dataset} does not support {mode} trials")]
    ModeUnsupported { dataset: String, mode: TrialMode },
    #[error("fold {fold} is too small: {reason}")]
    FoldTooSmall { fold: usize, reason: String },
    #[error("invalid fold plan: {0}")]
    InvalidPlan(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("subject {subject} appears in both train and test of fold {fold}")]
    SubjectOverlap { fold: usize, subject: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// How fusion weights are fitted in the EER protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionTraining {
    /// Cross-fitted over subject folds: each trial is fused by a model that
    /// never saw its subjects.
    #[default]
    PerFold,
    /// One model trained on every trial it is then applied to. Optimistic.
    WholeDataset,
}

/// What the k-fold split partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldUnit {
    #[default]
    Subject,
    /// Trials are shuffled into folds directly; subjects may then appear on
    /// both sides of a split.
    Trial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded subject partition: subjects are shuffled, then dealt round-robin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn new(subjects: &[&str], n_folds: usize, seed: u64) -> Result<Self, ProtocolError> {
        if n_folds < 2 {
            return Err(ProtocolError::InvalidPlan(format!("need at least 2 folds, got {n_folds}")));
        }
        if subjects.len() < n_folds {
            return Err(ProtocolError::InvalidPlan(format!(
                "{} subjects cannot fill {n_folds} folds",
                subjects.len()
            )));
        }
        let mut order: Vec<usize> = (0..subjects.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assign = vec![0usize; subjects.len()];
        for (pos, &i) in order.iter().enumerate() {
            assign[i] = pos % n_folds;
        }
        let folds = (0..n_folds)
            .map(|k| {
                let (test, train): (Vec<_>, Vec<_>) = subjects
                    .iter()
                    .zip(&assign)
                    .partition(|(_, &f)| f == k);
                Fold {
                    train: train.into_iter().map(|(s, _)| s.to_string()).collect(),
                    test: test.into_iter().map(|(s, _)| s.to_string()).collect(),
                }
            })
            .collect();
        Ok(FoldPlan { n_folds, seed, folds })
    }

    pub fn for_manifest(manifest: &DatasetManifest, n_folds: usize, seed: u64) -> Result<Self, ProtocolError> {
        FoldPlan::new(&manifest.subjects(), n_folds, seed)
    }

    /// Fold index of every subject.
    pub fn test_fold_of(&self) -> BTreeMap<&str, usize> {
        self.folds
            .iter()
            .enumerate()
            .flat_map(|(k, f)| f.test.iter().map(move |s| (s.as_str(), k)))
            .collect()
    }
}

/// Everything a protocol run needs besides manifests and embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub regions: Vec<RegionTag>,
    pub providers: ProviderMap,
    /// Fuse the regions with LLR; otherwise exactly one region is scored.
    pub fusion: bool,
    pub llr: LlrConfig,
    pub training: FusionTraining,
    pub n_folds: usize,
    pub seed: u64,
    pub impostors: ImpostorPolicy,
    pub fold_unit: FoldUnit,
}

impl ProtocolConfig {
    pub fn new(regions: Vec<RegionTag>, providers: ProviderMap) -> Self {
        ProtocolConfig {
            fusion: regions.len() > 1,
            regions,
            providers,
            llr: LlrConfig::default(),
            training: FusionTraining::PerFold,
            n_folds: 5,
            seed: 0,
            impostors: ImpostorPolicy::All,
            fold_unit: FoldUnit::Subject,
        }
    }

    fn check(&self) -> Result<(), ProtocolError> {
        if self.regions.is_empty() {
            return Err(ProtocolError::InvalidPlan("no regions selected".into()));
        }
        if !self.fusion && self.regions.len() != 1 {
            return Err(ProtocolError::InvalidPlan(format!(
                "without fusion exactly one region is scored, got {}",
                self.regions.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionResult {
    pub region: RegionTag,
    pub report: EvalReport,
}

/// Per-region cosine results and, with fusion on, the fused result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub per_region: Vec<RegionResult>,
    pub fused: Option<EvalReport>,
    pub models_converged: bool,
}

impl EerResult {
    pub fn region(&self, r: RegionTag) -> Option<&EvalReport> {
        self.per_region.iter().find(|x| x.region == r).map(|x| &x.report)
    }

    /// The fused report, or the single region's report without fusion.
    pub fn headline(&self) -> &EvalReport {
        self.fused.as_ref().unwrap_or(&self.per_region[0].report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleDatasetReport {
    pub dataset_id: String,
    pub mode: TrialMode,
    pub regions: Vec<RegionTag>,
    pub training: Option<FusionTraining>,
    pub result: EerResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YmuRow {
    pub mode: TrialMode,
    pub result: EerResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YmuReport {
    pub dataset_id: String,
    pub regions: Vec<RegionTag>,
    pub training: Option<FusionTraining>,
    pub rows: Vec<YmuRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub target: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRow {
    pub source: String,
    pub threshold: f64,
    pub cells: Vec<CrossCell>,
    pub mean_hter: f64,
    /// Sample standard deviation; 0 when the row has a single cell.
    pub std_hter: f64,
    pub max_hter: f64,
    pub model_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossReport {
    pub regions: Vec<RegionTag>,
    pub rows: Vec<CrossRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_trials: usize,
    pub test_genuine: usize,
    pub test_impostor: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub model_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfoldReport {
    pub dataset_id: String,
    pub regions: Vec<RegionTag>,
    pub fold_unit: FoldUnit,
    pub n_folds: usize,
    pub seed: u64,
    pub mean_accuracy: f64,
    pub folds: Vec<FoldResult>,
}

impl KfoldReport {
    pub fn all_converged(&self) -> bool {
        self.folds.iter().all(|f| f.model_converged)
    }
}

fn score(store: &EmbeddingStore, trials: &[TrialPair], cfg: &ProtocolConfig) -> Result<ScoreTable, ProtocolError> {
    Ok(score_trials(store, trials, &cfg.regions, &cfg.providers)?)
}

fn report_of(labels: &[Label], scores: &[f64]) -> Result<EvalReport, ProtocolError> {
    let set = ScoreSet::from_labeled(labels.iter().copied().zip(scores.iter().copied()))?;
    Ok(set.report(None))
}

fn per_region(table: &ScoreTable) -> Result<Vec<RegionResult>, ProtocolError> {
    let labels: Vec<Label> = table.rows.iter().map(|r| r.trial.label).collect();
    table
        .regions
        .iter()
        .enumerate()
        .map(|(j, &region)| {
            let col: Vec<f64> = table.column(j).collect();
            Ok(RegionResult {
                region,
                report: report_of(&labels, &col)?,
            })
        })
        .collect()
}

fn rows_where(table: &ScoreTable, keep: impl Fn(&TrialPair) -> bool) -> ScoreTable {
    ScoreTable {
        regions: table.regions.clone(),
        rows: table.rows.iter().filter(|r| keep(&r.trial)).cloned().collect(),
    }
}

/// Fuses every row of each `eval` table. `train` holds the trials the models
/// are fitted on; with per-fold training a trial is owned by the fold of its
/// first image's subject and fused by the model trained on trials that touch
/// no subject of that fold.
fn fuse_tables(
    manifest: &DatasetManifest,
    train: &ScoreTable,
    evals: &[&ScoreTable],
    cfg: &ProtocolConfig,
) -> Result<(Vec<Vec<f64>>, bool), ProtocolError> {
    match cfg.training {
        FusionTraining::WholeDataset => {
            let model = train_llr(train, &cfg.llr, &manifest.dataset_id)?;
            let fused = evals
                .iter()
                .map(|t| Ok(model.apply_table(t)?.scores))
                .collect::<Result<Vec<_>, ProtocolError>>()?;
            Ok((fused, model.train_meta.converged))
        }
        FusionTraining::PerFold => {
            let plan = FoldPlan::for_manifest(manifest, cfg.n_folds, cfg.seed)?;
            let fold_of_subject = plan.test_fold_of();
            let subjects = manifest.subject_index();
            let fold_of_image = |img: &str| subjects.get(img).and_then(|s| fold_of_subject.get(s)).copied();
            let models: Vec<FusionModel> = (0..plan.n_folds)
                .into_par_iter()
                .map(|k| {
                    let part = rows_where(train, |t| {
                        fold_of_image(&t.image_a) != Some(k) && fold_of_image(&t.image_b) != Some(k)
                    });
                    Ok(train_llr(&part, &cfg.llr, &manifest.dataset_id)?)
                })
                .collect::<Result<Vec<_>, ProtocolError>>()?;
            let converged = models.iter().all(|m| m.train_meta.converged);
            let fused = evals
                .iter()
                .map(|t| {
                    t.rows
                        .iter()
                        .map(|r| {
                            let k = fold_of_image(&r.trial.image_a).ok_or_else(|| ProtocolError::InvalidManifest {
                                dataset: manifest.dataset_id.clone(),
                                reason: format!("image {} is not in the manifest", r.trial.image_a),
                            })?;
                            Ok(models[k].apply(&t.regions, &r.scores)?)
                        })
                        .collect::<Result<Vec<_>, ProtocolError>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((fused, converged))
        }
    }
}

fn eer_results(
    manifest: &DatasetManifest,
    train: &ScoreTable,
    evals: &[&ScoreTable],
    cfg: &ProtocolConfig,
) -> Result<Vec<EerResult>, ProtocolError> {
    let (fused, converged) = if cfg.fusion {
        let (f, c) = fuse_tables(manifest, train, evals, cfg)?;
        (Some(f), c)
    } else {
        (None, true)
    };
    evals
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let labels: Vec<Label> = t.rows.iter().map(|r| r.trial.label).collect();
            Ok(EerResult {
                per_region: per_region(t)?,
                fused: fused.as_ref().map(|f| report_of(&labels, &f[i])).transpose()?,
                models_converged: converged,
            })
        })
        .collect()
}

/// Trials, per-region scores and optional fusion on one dataset, reported as
/// EER.
pub fn run_single_dataset_eer(
    manifest: &DatasetManifest,
    store: &EmbeddingStore,
    mode: TrialMode,
    cfg: &ProtocolConfig,
) -> Result<SingleDatasetReport, ProtocolError> {
    cfg.check()?;
    let trials = build_trials(manifest, mode, cfg.impostors)?;
    let table = score(store, &trials, cfg)?;
    let result = eer_results(manifest, &table, &[&table], cfg)?.remove(0);
    Ok(SingleDatasetReport {
        dataset_id: manifest.dataset_id.clone(),
        mode,
        regions: cfg.regions.clone(),
        training: cfg.fusion.then_some(cfg.training),
        result,
    })
}

/// B-vs-B, A-vs-A and A-vs-B on a dataset with two images per state. One
/// fusion setup per dataset, fitted on the before-vs-after trials.
pub fn run_ymu_matrix(
    manifest: &DatasetManifest,
    store: &EmbeddingStore,
    cfg: &ProtocolConfig,
) -> Result<YmuReport, ProtocolError> {
    cfg.check()?;
    let modes = [TrialMode::BeforeVsBefore, TrialMode::AfterVsAfter, TrialMode::BeforeVsAfter];
    let tables = modes
        .iter()
        .map(|&m| score(store, &build_trials(manifest, m, cfg.impostors)?, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&ScoreTable> = tables.iter().collect();
    let results = eer_results(manifest, &tables[2], &refs, cfg)?;
    Ok(YmuReport {
        dataset_id: manifest.dataset_id.clone(),
        regions: cfg.regions.clone(),
        training: cfg.fusion.then_some(cfg.training),
        rows: modes
            .iter()
            .zip(results)
            .map(|(&mode, result)| YmuRow { mode, result })
            .collect(),
    })
}

/// Fusion weights and the EER threshold are fixed on each source (trained
/// on all of its before-vs-after trials) and applied unchanged to every
/// target, reporting HTER.
pub fn run_cross_dataset(
    sources: &[&DatasetManifest],
    targets: &[&DatasetManifest],
    store: &EmbeddingStore,
    cfg: &ProtocolConfig,
) -> Result<CrossReport, ProtocolError> {
    cfg.check()?;
    let tables: Vec<ScoreTable> = targets
        .iter()
        .map(|m| score(store, &build_trials(m, TrialMode::BeforeVsAfter, cfg.impostors)?, cfg))
        .collect::<Result<_, _>>()?;
    let rows = sources
        .par_iter()
        .map(|src| {
            let own = score(store, &build_trials(src, TrialMode::BeforeVsAfter, cfg.impostors)?, cfg)?;
            let model = if cfg.fusion {
                Some(train_llr(&own, &cfg.llr, &src.dataset_id)?)
            } else {
                None
            };
            let scores_of = |t: &ScoreTable| -> Result<ScoreSet, ProtocolError> {
                let s: Vec<f64> = match &model {
                    Some(m) => m.apply_table(t)?.scores,
                    None => t.column(0).collect(),
                };
                Ok(ScoreSet::from_labeled(t.rows.iter().map(|r| r.trial.label).zip(s))?)
            };
            let threshold = scores_of(&own)?.eer().threshold;
            let cells = targets
                .iter()
                .zip(&tables)
                .map(|(m, t)| {
                    Ok(CrossCell {
                        target: m.dataset_id.clone(),
                        report: scores_of(t)?.hter_at(threshold),
                    })
                })
                .collect::<Result<Vec<_>, ProtocolError>>()?;
            let hters: Vec<f64> = cells.iter().map(|c| c.report.hter.unwrap_or(f64::NAN)).collect();
            Ok(CrossRow {
                source: src.dataset_id.clone(),
                threshold,
                mean_hter: hters.iter().sum::<f64>() / hters.len() as f64,
                std_hter: if hters.len() > 1 { sample_std(&hters) } else { 0.0 },
                max_hter: hters.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                cells,
                model_converged: model.as_ref().is_none_or(|m| m.train_meta.converged),
            })
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    Ok(CrossReport {
        regions: cfg.regions.clone(),
        rows,
    })
}

struct FoldTrials {
    train: Vec<TrialPair>,
    test_genuine: Vec<TrialPair>,
    impostor_pool: Vec<TrialPair>,
}

fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 + 1);
    rng
}

fn subject_fold_trials(
    manifest: &DatasetManifest,
    plan: &FoldPlan,
    cfg: &ProtocolConfig,
) -> Result<Vec<FoldTrials>, ProtocolError> {
    plan.folds
        .iter()
        .enumerate()
        .map(|(k, fold)| {
            let test: BTreeSet<&str> = fold.test.iter().map(String::as_str).collect();
            if let Some(s) = fold.train.iter().find(|s| test.contains(s.as_str())) {
                return Err(ProtocolError::SubjectOverlap {
                    fold: k,
                    subject: s.clone(),
                });
            }
            let train_s: Vec<&str> = fold.train.iter().map(String::as_str).collect();
            let test_s: Vec<&str> = fold.test.iter().map(String::as_str).collect();
            let mode = TrialMode::BeforeVsAfter;
            let mut train = genuine_trials(manifest, mode, &train_s);
            let pool = impostor_trials(manifest, mode, &train_s);
            match cfg.impostors {
                ImpostorPolicy::All => train.extend(pool),
                ImpostorPolicy::Sample { count, seed } => {
                    train.extend(sample_in_order(&pool, count, &mut fold_rng(seed, k)))
                }
            }
            Ok(FoldTrials {
                train,
                test_genuine: genuine_trials(manifest, mode, &test_s),
                impostor_pool: impostor_trials(manifest, mode, &test_s),
            })
        })
        .collect()
}

fn trial_fold_trials(manifest: &DatasetManifest, n_folds: usize, seed: u64) -> Result<Vec<FoldTrials>, ProtocolError> {
    let all = build_trials(manifest, TrialMode::BeforeVsAfter, ImpostorPolicy::All)?;
    let (gen, imp): (Vec<_>, Vec<_>) = all.into_iter().partition(|t| t.label == Label::Genuine);
    if gen.len() < n_folds {
        return Err(ProtocolError::InvalidPlan(format!(
            "{} genuine trials cannot fill {n_folds} folds",
            gen.len()
        )));
    }
    let deal = |items: &[TrialPair], stream: u64| -> Vec<usize> {
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        order.shuffle(&mut rng);
        let mut assign = vec![0; items.len()];
        for (pos, &i) in order.iter().enumerate() {
            assign[i] = pos % n_folds;
        }
        assign
    };
    let ga = deal(&gen, 0);
    let ia = deal(&imp, 1);
    Ok((0..n_folds)
        .map(|k| {
            let pick = |items: &[TrialPair], assign: &[usize], inside: bool| -> Vec<TrialPair> {
                items
                    .iter()
                    .zip(assign)
                    .filter(|(_, &f)| (f == k) == inside)
                    .map(|(t, _)| t.clone())
                    .collect()
            };
            let mut train = pick(&gen, &ga, false);
            train.extend(pick(&imp, &ia, false));
            FoldTrials {
                train,
                test_genuine: pick(&gen, &ga, true),
                impostor_pool: pick(&imp, &ia, true),
            }
        })
        .collect())
}

/// Per fold: fit fusion on the training side, take its maximum-accuracy
/// threshold there, then measure accuracy on a balanced test set made of
/// every test genuine trial and an equal seeded sample of test impostors.
pub fn run_kfold_accuracy(
    manifest: &DatasetManifest,
    store: &EmbeddingStore,
    cfg: &ProtocolConfig,
) -> Result<KfoldReport, ProtocolError> {
    cfg.check()?;
    let (n_folds, fold_trials) = match cfg.fold_unit {
        FoldUnit::Subject => {
            let plan = FoldPlan::for_manifest(manifest, cfg.n_folds, cfg.seed)?;
            (plan.n_folds, subject_fold_trials(manifest, &plan, cfg)?)
        }
        FoldUnit::Trial => (cfg.n_folds, trial_fold_trials(manifest, cfg.n_folds, cfg.seed)?),
    };
    let folds = fold_trials
        .into_par_iter()
        .enumerate()
        .map(|(k, ft)| {
            if ft.test_genuine.is_empty() {
                return Err(ProtocolError::FoldTooSmall {
                    fold: k,
                    reason: "no genuine test trials".into(),
                });
            }
            if ft.impostor_pool.len() < ft.test_genuine.len() {
                return Err(ProtocolError::FoldTooSmall {
                    fold: k,
                    reason: format!(
                        "{} genuine test trials but only {} impostor trials to sample from",
                        ft.test_genuine.len(),
                        ft.impostor_pool.len()
                    ),
                });
            }
            let impostors = sample_in_order(&ft.impostor_pool, ft.test_genuine.len(), &mut fold_rng(cfg.seed, k));
            let mut test = ft.test_genuine.clone();
            test.extend(impostors);

            let train_table = score(store, &ft.train, cfg)?;
            let test_table = score(store, &test, cfg)?;
            let (train_scores, test_scores, converged) = if cfg.fusion {
                let model = train_llr(&train_table, &cfg.llr, &manifest.dataset_id)?;
                (
                    model.apply_table(&train_table)?.scores,
                    model.apply_table(&test_table)?.scores,
                    model.train_meta.converged,
                )
            } else {
                (train_table.column(0).collect(), test_table.column(0).collect(), true)
            };
            let labeled = |t: &ScoreTable, s: Vec<f64>| ScoreSet::from_labeled(t.rows.iter().map(|r| r.trial.label).zip(s));
            let (threshold, _) = labeled(&train_table, train_scores)?.max_accuracy_threshold();
            let test_set = labeled(&test_table, test_scores)?;
            debug_assert_eq!(test_set.genuine().len(), test_set.impostor().len());
            Ok(FoldResult {
                fold: k,
                train_trials: train_table.rows.len(),
                test_genuine: test_set.genuine().len(),
                test_impostor: test_set.impostor().len(),
                threshold,
                accuracy: test_set.accuracy_at(threshold),
                model_converged: converged,
            })
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    Ok(KfoldReport {
        dataset_id: manifest.dataset_id.clone(),
        regions: cfg.regions.clone(),
        fold_unit: cfg.fold_unit,
        n_folds,
        seed: cfg.seed,
        mean_accuracy: folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingRecord;

    fn manifest(id: &str, subjects: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for s in 0..subjects {
            for state in [MakeupState::Before, MakeupState::After] {
                entries.push(ManifestEntry {
                    subject_id: format!("{id}{s}"),
                    image_id: format!("{id}{s}_{}", state.as_str()),
                    makeup_state: state,
                    landmark_file: String::new(),
                    image_file: String::new(),
                });
            }
        }
        DatasetManifest {
            dataset_id: id.into(),
            entries,
        }
    }

    /// Each subject gets its own axis, so genuine cosine is 1 and impostor 0.
    fn separable_store(m: &DatasetManifest, regions: &[RegionTag]) -> EmbeddingStore {
        let n = m.subjects().len();
        let mut store = EmbeddingStore::new();
        for (i, s) in m.subjects().iter().enumerate() {
            for img in m.images_of(s, MakeupState::Before).into_iter().chain(m.images_of(s, MakeupState::After)) {
                for &r in regions {
                    let mut v = vec![0.01; n];
                    v[i] = 1.0;
                    store
                        .insert(EmbeddingRecord::new(*s, img, r, "p", v).unwrap())
                        .unwrap();
                }
            }
        }
        store
    }

    #[test]
    fn fold_plan_partitions_subjects() {
        let subjects: Vec<String> = (0..23).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = subjects.iter().map(String::as_str).collect();
        let plan = FoldPlan::new(&refs, 5, 42).unwrap();
        let mut seen = BTreeSet::new();
        for f in &plan.folds {
            assert_eq!(f.train.len() + f.test.len(), 23);
            for s in &f.test {
                assert!(seen.insert(s.clone()));
                assert!(!f.train.contains(s));
            }
        }
        assert_eq!(seen.len(), 23);
        assert_eq!(plan, FoldPlan::new(&refs, 5, 42).unwrap());
        assert!(FoldPlan::new(&refs[..3], 5, 0).is_err());
        assert!(FoldPlan::new(&refs, 1, 0).is_err());
    }

    #[test]
    fn separable_data_gives_zero_eer_and_full_accuracy() {
        let m = manifest("custom", 12);
        let regions = vec![RegionTag::Holistic, RegionTag::Nose];
        let store = separable_store(&m, &regions);
        let cfg = ProtocolConfig::new(regions.clone(), ProviderMap::uniform("p", &regions));
        let r = run_single_dataset_eer(&m, &store, TrialMode::BeforeVsAfter, &cfg).unwrap();
        assert_eq!(r.result.headline().eer, 0.0);
        assert_eq!(r.result.region(RegionTag::Nose).unwrap().eer, 0.0);

        let k = run_kfold_accuracy(&m, &store, &cfg).unwrap();
        assert_eq!(k.mean_accuracy, 1.0);
        for f in &k.folds {
            assert_eq!(f.test_genuine, f.test_impostor);
        }
    }

    #[test]
    fn cross_dataset_diagonal_matches_own_eer() {
        let a = manifest("a", 8);
        let regions = vec![RegionTag::Holistic];
        let store = separable_store(&a, &regions);
        let mut cfg = ProtocolConfig::new(regions.clone(), ProviderMap::uniform("p", &regions));
        cfg.fusion = false;
        let r = run_cross_dataset(&[&a], &[&a], &store, &cfg).unwrap();
        let cell = &r.rows[0].cells[0].report;
        assert!(cell.hter.unwrap() - cell.eer <= 1.0 / 8.0);
        assert_eq!(r.rows[0].std_hter, 0.0);
    }

    #[test]
    fn tiny_fold_is_reported() {
        let m = manifest("custom", 2);
        let regions = vec![RegionTag::Holistic];
        let store = separable_store(&m, &regions);
        let mut cfg = ProtocolConfig::new(regions.clone(), ProviderMap::uniform("p", &regions));
        cfg.n_folds = 2;
        // one subject per test fold leaves no impostors to sample
        assert!(matches!(
            run_kfold_accuracy(&m, &store, &cfg),
            Err(ProtocolError::FoldTooSmall { .. })
        ));
    }
}
