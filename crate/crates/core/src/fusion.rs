//! Linear logistic regression (LLR) fusion of per-region scores.
//!
//! The fused score is `w·s + b`. Training minimises the class-balanced
//! logistic loss
//!
//! ```text
//! J(w, b) = 1/(2G) Σ_genuine log(1 + e^-(w·s+b)) + 1/(2I) Σ_impostor log(1 + e^(w·s+b)) + λ/2 |w|²
//! ```
//!
//! which gives each class an effective prior of one half, so the fused
//! score reads as a log-likelihood ratio. The solver is a damped Newton
//! iteration started from zero; nothing in it is random.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{
    read_labeled_columns, score_trials, EmbeddingError, EmbeddingStore, Label, ProviderMap, ScoreTable,
    TrialPair,
};
use crate::metrics::{MetricsError, ScoreSet};
use crate::RegionTag;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("training needs both classes (got {genuine} genuine, {impostor} impostor trials)")]
    SingleClass { genuine: usize, impostor: usize },
    #[error("non-finite score in trial {0}")]
    NonFiniteScore(usize),
    #[error("score regions {found:?} do not match model regions {expected:?}")]
    RegionOrderMismatch { expected: Vec<RegionTag>, found: Vec<RegionTag> },
    #[error("duplicate region {0} in region order")]
    DuplicateRegion(RegionTag),
    #[error("malformed model file: {0}")]
    ModelFormat(String),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrConfig {
    pub l2: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for LlrConfig {
    fn default() -> Self {
        LlrConfig {
            l2: 0.0,
            max_iterations: 200,
            gradient_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub dataset_id: String,
    /// Regions whose scores were constant over the training set; their
    /// weights are pinned to zero.
    pub degenerate: Vec<RegionTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub region_order: Vec<RegionTag>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub train_meta: TrainMeta,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A training set in solver form: feature rows plus per-trial labels.
///
/// Parameters are laid out as `[w_0, …, w_{K-1}, b]`.
#[derive(Debug, Clone)]
pub struct LlrProblem {
    features: Vec<Vec<f64>>,
    labels: Vec<Label>,
    genuine: usize,
    impostor: usize,
    l2: f64,
}

impl LlrProblem {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<Label>, l2: f64) -> Result<Self, FusionError> {
        assert_eq!(features.len(), labels.len());
        if let Some(i) = features.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(FusionError::NonFiniteScore(i));
        }
        let genuine = labels.iter().filter(|&&l| l == Label::Genuine).count();
        let impostor = labels.len() - genuine;
        if genuine == 0 || impostor == 0 {
            return Err(FusionError::SingleClass { genuine, impostor });
        }
        if !(l2.is_finite() && l2 >= 0.0) {
            return Err(FusionError::InvalidConfig(format!("l2 must be a non-negative number, got {l2}")));
        }
        Ok(LlrProblem {
            features,
            labels,
            genuine,
            impostor,
            l2,
        })
    }

    pub fn from_table(table: &ScoreTable, l2: f64) -> Result<Self, FusionError> {
        Self::new(
            table.rows.iter().map(|r| r.scores.clone()).collect(),
            table.rows.iter().map(|r| r.trial.label).collect(),
            l2,
        )
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    fn class_weight(&self, label: Label) -> f64 {
        match label {
            Label::Genuine => 0.5 / self.genuine as f64,
            Label::Impostor => 0.5 / self.impostor as f64,
        }
    }

    fn margin(row: &[f64], params: &[f64]) -> f64 {
        let k = row.len();
        row.iter().zip(&params[..k]).map(|(s, w)| s * w).sum::<f64>() + params[k]
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let k = self.dim();
        let data: f64 = self
            .features
            .iter()
            .zip(&self.labels)
            .map(|(row, &label)| {
                let z = Self::margin(row, params);
                let signed = if label == Label::Genuine { -z } else { z };
                self.class_weight(label) * softplus(signed)
            })
            .sum();
        data + 0.5 * self.l2 * params[..k].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let k = self.dim();
        let mut g = vec![0.0; k + 1];
        for (row, &label) in self.features.iter().zip(&self.labels) {
            let z = Self::margin(row, params);
            let r = match label {
                Label::Genuine => -sigmoid(-z),
                Label::Impostor => sigmoid(z),
            } * self.class_weight(label);
            for (gj, s) in g.iter_mut().zip(row) {
                *gj += r * s;
            }
            g[k] += r;
        }
        for j in 0..k {
            g[j] += self.l2 * params[j];
        }
        g
    }

    pub fn hessian(&self, params: &[f64]) -> DMatrix<f64> {
        let k = self.dim();
        let mut h = DMatrix::zeros(k + 1, k + 1);
        let mut x = vec![0.0; k + 1];
        for (row, &label) in self.features.iter().zip(&self.labels) {
            let z = Self::margin(row, params);
            let c = sigmoid(z) * sigmoid(-z) * self.class_weight(label);
            x[..k].copy_from_slice(row);
            x[k] = 1.0;
            for a in 0..=k {
                for b in 0..=a {
                    h[(a, b)] += c * x[a] * x[b];
                }
            }
        }
        for a in 0..=k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        for j in 0..k {
            h[(j, j)] += self.l2;
        }
        h
    }

    /// Damped Newton from zero with Armijo backtracking; falls back to
    /// steepest descent whenever the Hessian is not positive definite.
    /// Returns `(params, iterations, converged)`.
    pub fn minimize(&self, cfg: &LlrConfig) -> (Vec<f64>, usize, bool) {
        let n = self.dim() + 1;
        let mut params = vec![0.0; n];
        let mut loss = self.loss(&params);
        let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        for it in 0..cfg.max_iterations {
            let g = self.gradient(&params);
            if inf_norm(&g) < cfg.gradient_tolerance {
                return (params, it, true);
            }
            let gv = DVector::from_column_slice(&g);
            let newton = self.hessian(&params).cholesky().map(|c| -c.solve(&gv));
            let mut moved = false;
            for dir in newton.into_iter().chain(std::iter::once(-gv.clone())) {
                let slope = gv.dot(&dir);
                if !(slope < 0.0) {
                    continue;
                }
                let mut step = 1.0;
                for _ in 0..60 {
                    let trial: Vec<f64> = params.iter().zip(dir.iter()).map(|(p, d)| p + step * d).collect();
                    let trial_loss = self.loss(&trial);
                    if trial_loss <= loss + 1e-4 * step * slope {
                        moved = trial_loss < loss || trial != params;
                        params = trial;
                        loss = trial_loss;
                        break;
                    }
                    step *= 0.5;
                }
                if moved {
                    break;
                }
            }
            if !moved {
                // no descent possible at working precision
                let converged = inf_norm(&self.gradient(&params)) < cfg.gradient_tolerance;
                return (params, it + 1, converged);
            }
        }
        let converged = inf_norm(&self.gradient(&params)) < cfg.gradient_tolerance;
        (params, cfg.max_iterations, converged)
    }
}

/// Fits fusion weights over the table's regions.
///
/// A region whose score is the same for every trial carries no
/// information; it is left out of the fit with a zero weight and reported
/// in `train_meta.degenerate`.
pub fn train_llr(table: &ScoreTable, cfg: &LlrConfig, dataset_id: &str) -> Result<FusionModel, FusionError> {
    check_region_order(&table.regions)?;
    let full = LlrProblem::from_table(table, cfg.l2)?;

    let k = table.regions.len();
    let active: Vec<usize> = (0..k)
        .filter(|&j| {
            let mut col = table.column(j);
            let first = col.next();
            !first.is_some_and(|f| col.all(|v| v == f))
        })
        .collect();
    let degenerate: Vec<RegionTag> = (0..k)
        .filter(|j| !active.contains(j))
        .map(|j| table.regions[j])
        .collect();
    for r in &degenerate {
        log::warn!("region {r} has a constant score over the training set; its fusion weight is fixed at 0");
    }

    let reduced = LlrProblem {
        features: full
            .features
            .iter()
            .map(|row| active.iter().map(|&j| row[j]).collect())
            .collect(),
        ..full.clone()
    };
    let (params, iterations, converged) = reduced.minimize(cfg);
    let mut weights = vec![0.0; k];
    for (slot, &j) in active.iter().enumerate() {
        weights[j] = params[slot];
    }
    let bias = params[active.len()];
    let mut all = weights.clone();
    all.push(bias);
    let final_loss = full.loss(&all);
    if !converged {
        log::warn!("LLR fusion stopped after {iterations} iterations without meeting the gradient tolerance");
    }
    Ok(FusionModel {
        region_order: table.regions.clone(),
        weights,
        bias,
        train_meta: TrainMeta {
            iterations,
            final_loss,
            converged,
            dataset_id: dataset_id.to_string(),
            degenerate,
        },
    })
}

fn check_region_order(regions: &[RegionTag]) -> Result<(), FusionError> {
    for (i, r) in regions.iter().enumerate() {
        if regions[..i].contains(r) {
            return Err(FusionError::DuplicateRegion(*r));
        }
    }
    Ok(())
}

impl FusionModel {
    /// `w·s + b` for one score vector given in `regions` order.
    pub fn apply(&self, regions: &[RegionTag], scores: &[f64]) -> Result<f64, FusionError> {
        if regions != self.region_order.as_slice() || scores.len() != self.weights.len() {
            return Err(FusionError::RegionOrderMismatch {
                expected: self.region_order.clone(),
                found: regions.to_vec(),
            });
        }
        Ok(self.weights.iter().zip(scores).map(|(w, s)| w * s).sum::<f64>() + self.bias)
    }

    pub fn apply_table(&self, table: &ScoreTable) -> Result<FusedScores, FusionError> {
        let scores = table
            .rows
            .iter()
            .map(|r| self.apply(&table.regions, &r.scores))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FusedScores {
            trials: table.rows.iter().map(|r| r.trial.clone()).collect(),
            scores,
        })
    }

    /// Sections `region_order`, `weights`, `bias`, `train_meta`, each a
    /// header line followed by its values. Reals carry 17 significant
    /// digits so the file reproduces the model exactly.
    pub fn to_text(&self) -> String {
        let num = |v: f64| format!("{v:.16e}");
        let mut out = String::new();
        let names: Vec<&str> = self.region_order.iter().map(|r| r.as_str()).collect();
        let _ = writeln!(out, "region_order\n{}", names.join(","));
        let ws: Vec<String> = self.weights.iter().map(|&w| num(w)).collect();
        let _ = writeln!(out, "weights\n{}", ws.join(","));
        let _ = writeln!(out, "bias\n{}", num(self.bias));
        let m = &self.train_meta;
        let deg: Vec<&str> = m.degenerate.iter().map(|r| r.as_str()).collect();
        let _ = writeln!(
            out,
            "train_meta\niterations={}\nfinal_loss={}\nconverged={}\ndataset_id={}\ndegenerate={}",
            m.iterations,
            num(m.final_loss),
            m.converged,
            m.dataset_id,
            deg.join(",")
        );
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FusionError> {
        let bad = |s: String| FusionError::ModelFormat(s);
        let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut current: Option<&str> = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match line {
                "region_order" | "weights" | "bias" | "train_meta" => {
                    if sections.insert(line, Vec::new()).is_some() {
                        return Err(bad(format!("section {line} repeated")));
                    }
                    current = Some(line);
                }
                _ => match current {
                    Some(sec) => sections.get_mut(sec).unwrap().push(line),
                    None => return Err(bad(format!("content before first section: `{line}`"))),
                },
            }
        }
        let single = |name: &str| -> Result<&str, FusionError> {
            match sections.get(name).map(Vec::as_slice) {
                Some([v]) => Ok(v),
                Some([]) if name == "region_order" || name == "weights" => Ok(""),
                _ => Err(bad(format!("section {name} must hold exactly one line"))),
            }
        };
        fn list(s: &str) -> Vec<&str> {
            s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));

        let region_order = list(single("region_order")?)
            .into_iter()
            .map(|t| t.parse::<RegionTag>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        check_region_order(&region_order)?;
        let weights = list(single("weights")?)
            .into_iter()
            .map(real)
            .collect::<Result<Vec<_>, _>>()?;
        if weights.len() != region_order.len() {
            return Err(bad(format!("{} weights for {} regions", weights.len(), region_order.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(bad("non-finite weight".into()));
        }
        let bias = real(single("bias")?)?;

        let meta_lines = sections.get("train_meta").ok_or_else(|| bad("missing train_meta".into()))?;
        let kv: BTreeMap<&str, &str> = meta_lines
            .iter()
            .map(|l| l.split_once('=').map(|(k, v)| (k.trim(), v.trim())))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("train_meta lines must be key=value".into()))?;
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("train_meta.{k} missing")));
        let train_meta = TrainMeta {
            iterations: get("iterations")?.parse().map_err(|_| bad("bad iterations".into()))?,
            final_loss: real(get("final_loss")?)?,
            converged: get("converged")?.parse().map_err(|_| bad("bad converged flag".into()))?,
            dataset_id: get("dataset_id")?.to_string(),
            degenerate: list(kv.get("degenerate").copied().unwrap_or(""))
                .into_iter()
                .map(|t| t.parse::<RegionTag>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
        };
        Ok(FusionModel {
            region_order,
            weights,
            bias,
            train_meta,
        })
    }
}

/// One fused score per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedScores {
    pub trials: Vec<TrialPair>,
    pub scores: Vec<f64>,
}

impl FusedScores {
    pub fn score_set(&self) -> Result<ScoreSet, MetricsError> {
        ScoreSet::from_labeled(self.trials.iter().map(|t| t.label).zip(self.scores.iter().copied()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_a,image_b,label,fused\n");
        for (t, s) in self.trials.iter().zip(&self.scores) {
            let _ = writeln!(out, "{},{},{},{s}", t.image_a, t.image_b, t.label);
        }
        out
    }

    /// Reads any `image_a,image_b,label,<score>` file with exactly one score
    /// column, so a single-region score table is accepted as well.
    pub fn parse(input: &[u8]) -> Result<Self, FusionError> {
        let (names, rows) = read_labeled_columns(input, "fused score file")?;
        if names.len() != 1 {
            return Err(EmbeddingError::MalformedTable {
                what: "fused score file",
                line: 1,
                reason: format!("expected one score column, found {} ({})", names.len(), names.join(",")),
            }
            .into());
        }
        let (trials, scores) = rows.into_iter().map(|(t, s)| (t, s[0])).unzip();
        Ok(FusedScores { trials, scores })
    }
}

/// Result of an exhaustive search over per-region provider choices.
#[derive(Debug, Clone)]
pub struct Combination {
    pub providers: ProviderMap,
    pub train_eer: f64,
    pub model: FusionModel,
}

/// Tries every assignment of candidate providers to regions, fuses each with
/// LLR on `trials`, and keeps the assignment with the lowest fused EER on
/// those same trials. Ties keep the earlier assignment, enumerating the
/// last region fastest.
pub fn best_combination(
    store: &EmbeddingStore,
    trials: &[TrialPair],
    regions: &[RegionTag],
    candidates: &BTreeMap<RegionTag, Vec<String>>,
    cfg: &LlrConfig,
    dataset_id: &str,
) -> Result<Combination, FusionError> {
    // one scored column per (region, provider)
    let mut columns: Vec<Vec<(String, Vec<f64>)>> = Vec::with_capacity(regions.len());
    for &r in regions {
        let provs = candidates.get(&r).filter(|v| !v.is_empty()).ok_or(EmbeddingError::UnmappedRegion(r))?;
        let mut per = Vec::new();
        for p in provs {
            let t = score_trials(store, trials, &[r], &ProviderMap::uniform(p, &[r]))?;
            per.push((p.clone(), t.column(0).collect()));
        }
        columns.push(per);
    }

    let mut choice = vec![0usize; regions.len()];
    let mut best: Option<Combination> = None;
    loop {
        let table = ScoreTable {
            regions: regions.to_vec(),
            rows: trials
                .iter()
                .enumerate()
                .map(|(i, t)| crate::embedding::TrialScoreVector {
                    trial: t.clone(),
                    scores: choice.iter().enumerate().map(|(j, &c)| columns[j][c].1[i]).collect(),
                })
                .collect(),
        };
        let model = train_llr(&table, cfg, dataset_id)?;
        let eer = model.apply_table(&table)?.score_set()?.eer().eer;
        if best.as_ref().is_none_or(|b| eer < b.train_eer) {
            best = Some(Combination {
                providers: ProviderMap(
                    regions
                        .iter()
                        .zip(&choice)
                        .enumerate()
                        .map(|(j, (&r, &c))| (r, columns[j][c].0.clone()))
                        .collect(),
                ),
                train_eer: eer,
                model,
            });
        }
        // odometer increment, last region fastest
        let mut j = regions.len();
        loop {
            if j == 0 {
                return Ok(best.expect("at least one combination evaluated"));
            }
            j -= 1;
            choice[j] += 1;
            if choice[j] < columns[j].len() {
                break;
            }
            choice[j] = 0;
        }
    }
}
