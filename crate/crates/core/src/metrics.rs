//! Verification error rates: FAR/FRR, EER, HTER, accuracy and DET curves.
//!
//! A trial is accepted when its score is at least the threshold. Every
//! metric is a step function of the threshold that can only change at an
//! observed score, so sweeping the observed scores, the midpoints between
//! neighbours and ±∞ visits every attainable operating point.

use serde::{Deserialize, Serialize};

use crate::embedding::Label;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("score set needs at least one genuine and one impostor score (got {genuine} and {impostor})")]
    EmptyClass { genuine: usize, impostor: usize },
    #[error("non-finite score in the {0} set")]
    NonFinite(Label),
}

/// Genuine and impostor scores, each kept sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    genuine: Vec<f64>,
    impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(mut genuine: Vec<f64>, mut impostor: Vec<f64>) -> Result<Self, MetricsError> {
        if genuine.is_empty() || impostor.is_empty() {
            return Err(MetricsError::EmptyClass {
                genuine: genuine.len(),
                impostor: impostor.len(),
            });
        }
        if genuine.iter().any(|s| !s.is_finite()) {
            return Err(MetricsError::NonFinite(Label::Genuine));
        }
        if impostor.iter().any(|s| !s.is_finite()) {
            return Err(MetricsError::NonFinite(Label::Impostor));
        }
        genuine.sort_by(f64::total_cmp);
        impostor.sort_by(f64::total_cmp);
        Ok(ScoreSet { genuine, impostor })
    }

    pub fn from_labeled(scores: impl IntoIterator<Item = (Label, f64)>) -> Result<Self, MetricsError> {
        let (mut g, mut i) = (Vec::new(), Vec::new());
        for (label, s) in scores {
            match label {
                Label::Genuine => g.push(s),
                Label::Impostor => i.push(s),
            }
        }
        Self::new(g, i)
    }

    pub fn genuine(&self) -> &[f64] {
        &self.genuine
    }

    pub fn impostor(&self) -> &[f64] {
        &self.impostor
    }

    pub fn counts(&self) -> Counts {
        Counts {
            genuine: self.genuine.len(),
            impostor: self.impostor.len(),
        }
    }

    /// `1 / min(G, I)`: one trial's worth of error rate in the smaller class.
    pub fn resolution(&self) -> f64 {
        1.0 / self.genuine.len().min(self.impostor.len()) as f64
    }

    /// Genuine scores become impostor scores and vice versa, all negated, so
    /// that "accept if score ≥ t" on the new set mirrors "reject" on the old.
    pub fn negated_swapped(&self) -> ScoreSet {
        ScoreSet::new(
            self.impostor.iter().map(|s| -s).collect(),
            self.genuine.iter().map(|s| -s).collect(),
        )
        .expect("non-empty finite scores stay valid")
    }

    fn below(sorted: &[f64], t: f64) -> usize {
        sorted.partition_point(|&s| s < t)
    }

    /// `(far, frr)` at threshold `t`.
    pub fn far_frr_at(&self, t: f64) -> (f64, f64) {
        let (g, i) = (self.genuine.len(), self.impostor.len());
        let accepted_impostors = i - Self::below(&self.impostor, t);
        let rejected_genuine = Self::below(&self.genuine, t);
        (accepted_impostors as f64 / i as f64, rejected_genuine as f64 / g as f64)
    }

    pub fn accuracy_at(&self, t: f64) -> f64 {
        let (g, i) = (self.genuine.len(), self.impostor.len());
        let correct = (g - Self::below(&self.genuine, t)) + Self::below(&self.impostor, t);
        correct as f64 / (g + i) as f64
    }

    fn distinct_scores(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.genuine.iter().chain(&self.impostor).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }

    /// Ascending candidate thresholds: -∞, every distinct score and every
    /// midpoint between neighbouring distinct scores, +∞.
    pub fn candidate_thresholds(&self) -> Vec<f64> {
        let d = self.distinct_scores();
        let mut out = Vec::with_capacity(2 * d.len() + 1);
        out.push(f64::NEG_INFINITY);
        for (k, &s) in d.iter().enumerate() {
            out.push(s);
            if let Some(&next) = d.get(k + 1) {
                let mid = s + (next - s) / 2.0;
                if mid > s && mid < next {
                    out.push(mid);
                }
            }
        }
        out.push(f64::INFINITY);
        out
    }

    pub fn eer(&self) -> EerPoint {
        let mut best: Option<EerPoint> = None;
        for t in self.candidate_thresholds() {
            let (far, frr) = self.far_frr_at(t);
            let p = EerPoint {
                eer: (far + frr) / 2.0,
                threshold: t,
                far,
                frr,
            };
            // candidates ascend, so keeping the first minimum picks the smaller t
            let better = match &best {
                None => true,
                Some(b) => {
                    let (gap, bgap) = ((p.far - p.frr).abs(), (b.far - b.frr).abs());
                    gap < bgap || (gap == bgap && p.eer < b.eer)
                }
            };
            if better {
                best = Some(p);
            }
        }
        best.expect("candidate list is never empty")
    }

    /// Threshold with the highest accuracy on this set (smallest on ties).
    pub fn max_accuracy_threshold(&self) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, -1.0);
        for t in self.candidate_thresholds() {
            let acc = self.accuracy_at(t);
            if acc > best.1 {
                best = (t, acc);
            }
        }
        best
    }

    /// `(threshold, far, frr)` at -∞, each distinct score and +∞; FAR never
    /// increases and FRR never decreases along the curve.
    pub fn det_curve(&self) -> Vec<DetPoint> {
        std::iter::once(f64::NEG_INFINITY)
            .chain(self.distinct_scores())
            .chain(std::iter::once(f64::INFINITY))
            .map(|t| {
                let (far, frr) = self.far_frr_at(t);
                DetPoint { threshold: t, far, frr }
            })
            .collect()
    }

    /// Full report at a fixed threshold, typically one chosen on another
    /// dataset.
    pub fn hter_at(&self, t: f64) -> EvalReport {
        let mut r = EvalReport::from_eer(self.eer(), self.counts());
        r.set_threshold(self, t);
        r
    }

    pub fn report(&self, threshold: Option<f64>) -> EvalReport {
        match threshold {
            Some(t) => self.hter_at(t),
            None => EvalReport::from_eer(self.eer(), self.counts()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

pub fn det_to_csv(points: &[DetPoint]) -> String {
    let mut out = String::from("threshold,far,frr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub genuine: usize,
    pub impostor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eer: f64,
    #[serde(with = "threshold_serde")]
    pub eer_threshold: f64,
    #[serde(with = "opt_threshold_serde")]
    pub threshold: Option<f64>,
    pub far: Option<f64>,
    pub frr: Option<f64>,
    pub hter: Option<f64>,
    pub accuracy: Option<f64>,
    pub counts: Counts,
}

impl EvalReport {
    pub fn from_eer(p: EerPoint, counts: Counts) -> Self {
        EvalReport {
            eer: p.eer,
            eer_threshold: p.threshold,
            threshold: None,
            far: None,
            frr: None,
            hter: None,
            accuracy: None,
            counts,
        }
    }

    pub fn set_threshold(&mut self, set: &ScoreSet, t: f64) {
        let (far, frr) = set.far_frr_at(t);
        self.threshold = Some(t);
        self.far = Some(far);
        self.frr = Some(frr);
        self.hter = Some((far + frr) / 2.0);
        self.accuracy = Some(set.accuracy_at(t));
    }
}

/// Rate as a percentage with two decimals, ties rounded to even.
pub fn format_percent(rate: f64) -> String {
    let hundredths = (rate * 10_000.0).round_ties_even();
    format!("{:.2}", hundredths / 100.0)
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// JSON has no infinities; thresholds of ±∞ are written as strings.
pub(crate) mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

pub(crate) mod opt_threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(t) => super::threshold_serde::serialize(t, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "super::threshold_serde")] f64);
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(g: &[f64], i: &[f64]) -> ScoreSet {
        ScoreSet::new(g.to_vec(), i.to_vec()).unwrap()
    }

    #[test]
    fn far_frr_examples() {
        let s = set(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(s.far_frr_at(f64::NEG_INFINITY), (1.0, 0.0));
        assert_eq!(s.far_frr_at(f64::INFINITY), (0.0, 1.0));
        assert_eq!(s.far_frr_at(0.5), (0.0, 0.0));
        let s = set(&[0.6, 0.4], &[0.5, 0.3]);
        assert_eq!(s.far_frr_at(0.5), (0.5, 0.5));
    }

    #[test]
    fn eer_examples() {
        let sep = set(&[0.9, 0.8], &[0.1, 0.2]);
        let p = sep.eer();
        assert_eq!(p.eer, 0.0);
        assert_eq!(p.threshold, 0.5);

        let same = set(&[0.3, 0.5, 0.5], &[0.5, 0.3, 0.5]);
        assert_eq!(same.eer().eer, 0.5);

        let p = set(&[0.9, 0.7, 0.4], &[0.8, 0.3, 0.2]).eer();
        assert!((p.eer - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((p.far, p.frr), (1.0 / 3.0, 1.0 / 3.0));
    }

    #[test]
    fn empty_or_nan_sets_are_rejected() {
        assert!(matches!(ScoreSet::new(vec![], vec![1.0]), Err(MetricsError::EmptyClass { .. })));
        assert!(matches!(ScoreSet::new(vec![f64::NAN], vec![1.0]), Err(MetricsError::NonFinite(Label::Genuine))));
    }

    #[test]
    fn hter_examples() {
        let s = set(&[0.9, 0.7, 0.4], &[0.8, 0.3, 0.2]);
        let p = s.eer();
        let r = s.hter_at(p.threshold);
        assert!((r.hter.unwrap() - p.eer).abs() <= s.resolution());

        let sep = set(&[0.9, 0.8], &[0.1, 0.2]);
        for t in [0.25, 0.5, 0.79] {
            assert_eq!(sep.hter_at(t).hter, Some(0.0));
        }

        // t = 0.75: far = 1/3 (0.8), frr = 1/3 (0.7, 0.4 -> 2/3)
        let r = s.hter_at(0.75);
        assert_eq!(r.far, Some(1.0 / 3.0));
        assert_eq!(r.frr, Some(2.0 / 3.0));
        assert_eq!(r.hter, Some((1.0 / 3.0 + 2.0 / 3.0) / 2.0));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(set(&[0.9, 0.8], &[0.1, 0.2]).accuracy_at(0.5), 1.0);
        assert_eq!(set(&[0.5, 0.5], &[0.5]).accuracy_at(0.7), 1.0 / 3.0);
        // genuine >= 0.5: 0.9, 0.7; impostor < 0.5: 0.3, 0.2 -> 4/6
        assert_eq!(set(&[0.9, 0.7, 0.4], &[0.8, 0.3, 0.2]).accuracy_at(0.5), 4.0 / 6.0);
    }

    #[test]
    fn max_accuracy_prefers_the_gap_midpoint() {
        let (t, acc) = set(&[0.9, 0.8], &[0.1, 0.2]).max_accuracy_threshold();
        assert_eq!((t, acc), (0.5, 1.0));
    }

    #[test]
    fn det_curve_for_two_scores() {
        let c = set(&[0.7], &[0.2]).det_curve();
        let ts: Vec<f64> = c.iter().map(|p| p.threshold).collect();
        assert_eq!(ts, vec![f64::NEG_INFINITY, 0.2, 0.7, f64::INFINITY]);
        assert_eq!((c[0].far, c[0].frr), (1.0, 0.0));
        assert_eq!((c[2].far, c[2].frr), (0.0, 0.0));
        assert_eq!((c[3].far, c[3].frr), (0.0, 1.0));
    }

    #[test]
    fn det_curve_matches_a_direct_count() {
        let g = [0.9, 0.7, 0.4, 0.7];
        let i = [0.8, 0.3, 0.2, 0.4];
        let c = set(&g, &i).det_curve();
        assert_eq!(c.len(), 2 + 6);
        for p in &c {
            let far = i.iter().filter(|&&s| s >= p.threshold).count() as f64 / 4.0;
            let frr = g.iter().filter(|&&s| s < p.threshold).count() as f64 / 4.0;
            assert_eq!((p.far, p.frr), (far, frr));
        }
    }

    #[test]
    fn percent_rounds_half_to_even() {
        assert_eq!(format_percent(0.0148), "1.48");
        assert_eq!(format_percent(0.00125), "0.12");
        assert_eq!(format_percent(0.00375), "0.38");
        assert_eq!(format_percent(0.0), "0.00");
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        // first holistic row of the cross-dataset table: 4.64 ± 1.91
        let row = [4.22, 7.40, 3.90, 3.04];
        assert!((sample_std(&row) - 1.906).abs() < 1e-3);
    }

    #[test]
    fn report_json_handles_infinite_thresholds() {
        let s = set(&[0.5], &[0.5]);
        let r = s.report(Some(f64::INFINITY));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"threshold\":\"inf\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
