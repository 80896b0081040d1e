//! Ordinal multiclass SVM over ordinal pairwise partitioning (one-vs-next).
//!
//! Forward direction: stage 1 separates {L} from {M, H}; stage 2 separates
//! {M} from {H} on the {M, H} subset. Backward mirrors this from the High
//! end. Each stage carries a Platt calibration of its decision value, and
//! state posteriors follow the chain of the sequential decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AolSequence, AolState, FeatureMatrix, UtteranceFeatures};
use crate::svm::{
    fit_platt, train_binary, LinearModel, PlattCalibration, DEFAULT_C, PROBABILITY_CLAMP,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

impl Direction {
    /// The class each stage peels off, in consultation order.
    pub fn stage_classes(self) -> [AolState; 2] {
        match self {
            Direction::Forward => [AolState::Low, AolState::Medium],
            Direction::Backward => [AolState::High, AolState::Medium],
        }
    }

    /// The class predicted when every stage declines.
    pub fn last_class(self) -> AolState {
        match self {
            Direction::Forward => AolState::High,
            Direction::Backward => AolState::Low,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub model: LinearModel,
    pub calibration: PlattCalibration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmsvmModel {
    pub stages: Vec<Stage>,
    pub direction: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmsvmOptions {
    pub c: f64,
    pub direction: Direction,
    /// Contiguous folds used to produce out-of-sample scores for Platt
    /// fitting; 1 calibrates on in-sample scores.
    pub calibration_folds: usize,
}

impl Default for OmsvmOptions {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            direction: Direction::Forward,
            calibration_folds: 3,
        }
    }
}

/// Per-frame distribution over (L, M, H).
#[derive(Clone, Debug, PartialEq)]
pub struct StatePosteriors {
    pub probs: Vec<[f64; 3]>,
}

impl StatePosteriors {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Framewise argmax; ties go to the lower state.
    pub fn argmax(&self) -> Vec<AolState> {
        self.probs.iter().map(argmax_row).collect()
    }
}

pub(crate) fn argmax_row(row: &[f64; 3]) -> AolState {
    let mut best = 0;
    for k in 1..3 {
        if row[k] > row[best] {
            best = k;
        }
    }
    AolState::ALL[best]
}

/// Trains the two-stage model on utterances paired with consensus AOLs.
pub fn train_omsvm(
    features: &[UtteranceFeatures],
    aols: &[AolSequence],
    opts: &OmsvmOptions,
) -> Result<OmsvmModel> {
    if features.len() != aols.len() {
        return Err(Error::LengthMismatch(format!(
            "{} feature sets, {} label sequences",
            features.len(),
            aols.len()
        )));
    }
    for (f, a) in features.iter().zip(aols) {
        if f.n_frames() != a.len() {
            return Err(Error::LengthMismatch(format!(
                "utterance {}: {} frames, {} labels",
                f.utterance_id,
                f.n_frames(),
                a.len()
            )));
        }
    }
    let x = FeatureMatrix::vstack(features.iter().map(|f| &f.frames))?;
    let labels: Vec<AolState> = aols.iter().flat_map(|a| a.labels.iter().copied()).collect();
    train_omsvm_stacked(&x, &labels, opts)
}

pub fn train_omsvm_stacked(
    x: &FeatureMatrix,
    labels: &[AolState],
    opts: &OmsvmOptions,
) -> Result<OmsvmModel> {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.code()] += 1;
    }
    if let Some(missing) = AolState::ALL.iter().find(|s| counts[s.code()] == 0) {
        return Err(Error::SingleClass(format!(
            "class {missing} absent from OMSVM training data"
        )));
    }
    let [first, second] = opts.direction.stage_classes();
    let mut stages = Vec::with_capacity(2);

    let all: Vec<usize> = (0..labels.len()).collect();
    stages.push(train_stage(x, labels, &all, first, opts)?);

    let rest: Vec<usize> = all.into_iter().filter(|&i| labels[i] != first).collect();
    stages.push(train_stage(x, labels, &rest, second, opts)?);

    Ok(OmsvmModel {
        stages,
        direction: opts.direction,
    })
}

fn train_stage(
    x: &FeatureMatrix,
    labels: &[AolState],
    rows: &[usize],
    positive: AolState,
    opts: &OmsvmOptions,
) -> Result<Stage> {
    let xs = x.select_rows(rows);
    let y: Vec<i8> = rows
        .iter()
        .map(|&i| if labels[i] == positive { 1 } else { -1 })
        .collect();
    let model = train_binary(&xs, &y, opts.c)?;
    let scores = cross_fitted_scores(&xs, &y, &model, opts)?;
    let calibration = fit_platt(&scores, &y)?;
    Ok(Stage { model, calibration })
}

/// Out-of-fold decision values over contiguous folds; a fold whose training
/// complement lacks a class is scored by the full model instead.
fn cross_fitted_scores(
    x: &FeatureMatrix,
    y: &[i8],
    full: &LinearModel,
    opts: &OmsvmOptions,
) -> Result<Vec<f64>> {
    let n = y.len();
    let k = opts.calibration_folds.max(1).min(n);
    if k <= 1 {
        return full.decision_values(x);
    }
    let mut scores = vec![0.0; n];
    for fold in 0..k {
        let (lo, hi) = (fold * n / k, (fold + 1) * n / k);
        let train: Vec<usize> = (0..lo).chain(hi..n).collect();
        let ty: Vec<i8> = train.iter().map(|&i| y[i]).collect();
        let both = ty.contains(&1) && ty.contains(&-1);
        let model = if both {
            train_binary(&x.select_rows(&train), &ty, opts.c)?
        } else {
            full.clone()
        };
        for i in lo..hi {
            scores[i] = model.decision_value_unchecked(x.row(i));
        }
    }
    Ok(scores)
}

impl OmsvmModel {
    pub fn dim(&self) -> usize {
        self.stages[0].model.dim()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: d,
            });
        }
        Ok(())
    }

    /// Sequential decision: the first stage with a strictly positive decision
    /// value claims its class; otherwise the next stage is consulted.
    pub fn predict_aol(&self, x: &[f64]) -> Result<AolState> {
        self.check_dim(x.len())?;
        let classes = self.direction.stage_classes();
        for (stage, class) in self.stages.iter().zip(classes) {
            if stage.model.decision_value_unchecked(x) > 0.0 {
                return Ok(class);
            }
        }
        Ok(self.direction.last_class())
    }

    /// Stage probabilities (p1, p2) for one frame.
    pub fn stage_probabilities(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(x.len())?;
        let p = |s: &Stage| s.calibration.probability(s.model.decision_value_unchecked(x));
        Ok((p(&self.stages[0]), p(&self.stages[1])))
    }

    pub fn posterior_row(&self, x: &[f64]) -> Result<[f64; 3]> {
        let (p1, p2) = self.stage_probabilities(x)?;
        Ok(chain_posterior(p1, p2, self.direction))
    }

    pub fn state_posteriors(&self, features: &UtteranceFeatures) -> Result<StatePosteriors> {
        self.check_dim(features.dim())?;
        let probs = features
            .frames
            .rows()
            .map(|r| self.posterior_row(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(StatePosteriors { probs })
    }
}

/// `P(first) = p1`, `P(second) = (1 - p1) p2`, `P(last) = (1 - p1)(1 - p2)`,
/// laid out in (L, M, H) order.
pub fn chain_posterior(p1: f64, p2: f64, direction: Direction) -> [f64; 3] {
    debug_assert!((PROBABILITY_CLAMP * 0.5..=1.0).contains(&p1));
    let first = p1;
    let second = (1.0 - p1) * p2;
    let last = (1.0 - p1) * (1.0 - p2);
    match direction {
        Direction::Forward => [first, second, last],
        Direction::Backward => [last, second, first],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Three 1-D clusters at -1, 0, +1 (tight), `n` per class.
    fn clusters(n: usize, spread: f64, seed: u64) -> (FeatureMatrix, Vec<AolState>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..3 * n {
            let s = AolState::ALL[i % 3];
            rows.push(vec![s.code() as f64 - 1.0 + noise.sample(&mut rng)]);
            labels.push(s);
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), labels)
    }

    /// Weak regularization for a few hundred samples.
    fn strong() -> OmsvmOptions {
        OmsvmOptions { c: 1.0, ..OmsvmOptions::default() }
    }

    #[test]
    fn separated_clusters_are_learned_perfectly() {
        let (x, labels) = clusters(100, 0.05, 1);
        let m = train_omsvm_stacked(&x, &labels, &strong()).unwrap();
        let pred: Vec<AolState> = x.rows().map(|r| m.predict_aol(r).unwrap()).collect();
        assert_eq!(pred, labels);
        assert_eq!(m.predict_aol(&[-5.0]).unwrap(), AolState::Low);
        assert_eq!(m.predict_aol(&[5.0]).unwrap(), AolState::High);
    }

    #[test]
    fn posteriors_agree_with_hard_decisions_on_held_out() {
        let (x, labels) = clusters(100, 0.1, 2);
        let m = train_omsvm_stacked(&x, &labels, &strong()).unwrap();
        let (xt, _) = clusters(200, 0.1, 3);
        let agree = xt
            .rows()
            .filter(|r| argmax_row(&m.posterior_row(r).unwrap()) == m.predict_aol(r).unwrap())
            .count();
        assert!(agree as f64 >= 0.99 * xt.n_rows() as f64, "{agree}");
    }

    #[test]
    fn backward_on_mirrored_data_flips_weights() {
        let (x, labels) = clusters(60, 0.2, 4);
        let mirrored_rows: Vec<Vec<f64>> = x.rows().map(|r| vec![-r[0]]).collect();
        let xm = FeatureMatrix::from_rows(&mirrored_rows).unwrap();
        let lm: Vec<AolState> = labels.iter().map(|s| s.mirrored()).collect();
        let fwd = train_omsvm_stacked(&x, &labels, &OmsvmOptions::default()).unwrap();
        let bwd = train_omsvm_stacked(
            &xm,
            &lm,
            &OmsvmOptions {
                direction: Direction::Backward,
                ..OmsvmOptions::default()
            },
        )
        .unwrap();
        for (f, b) in fwd.stages.iter().zip(&bwd.stages) {
            assert!((f.model.weights[0] + b.model.weights[0]).abs() < 1e-10);
            assert!((f.model.bias - b.model.bias).abs() < 1e-10);
        }
        // argmax agreement, mirrored
        for r in x.rows() {
            let pf = argmax_row(&fwd.posterior_row(r).unwrap());
            let pb = argmax_row(&bwd.posterior_row(&[-r[0]]).unwrap());
            assert_eq!(pf, pb.mirrored());
        }
    }

    #[test]
    fn missing_class_is_rejected() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let labels = [AolState::Low, AolState::Low, AolState::High];
        assert!(matches!(
            train_omsvm_stacked(&x, &labels, &OmsvmOptions::default()),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn chain_arithmetic() {
        let p = chain_posterior(0.6, 0.5, Direction::Forward);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15 && (p[2] - 0.2).abs() < 1e-15);
        let p = chain_posterior(1.0 - PROBABILITY_CLAMP, 0.3, Direction::Forward);
        assert!(p[0] > 1.0 - 1e-11 && p[1] < 1e-11 && p[2] < 1e-11);
        let p = chain_posterior(0.6, 0.5, Direction::Backward);
        assert_eq!(p[2], 0.6);
    }

    #[test]
    fn zero_stage_one_score_continues() {
        let zero_stage = |bias: f64| Stage {
            model: LinearModel {
                weights: vec![0.0],
                bias,
                standardization: crate::svm::Standardization::identity(1),
            },
            calibration: PlattCalibration { a: -1.0, b: 0.0 },
        };
        let m = OmsvmModel {
            stages: vec![zero_stage(0.0), zero_stage(1.0)],
            direction: Direction::Forward,
        };
        assert_eq!(m.predict_aol(&[0.0]).unwrap(), AolState::Medium);
        assert!(m.predict_aol(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn posterior_rows_are_distributions() {
        let (x, labels) = clusters(50, 0.6, 5);
        let m = train_omsvm_stacked(&x, &labels, &OmsvmOptions::default()).unwrap();
        for r in x.rows() {
            let p = m.posterior_row(r).unwrap();
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn p_low_is_monotone_in_stage_one_score() {
        let (x, labels) = clusters(50, 0.6, 6);
        let m = train_omsvm_stacked(&x, &labels, &OmsvmOptions::default()).unwrap();
        // stage 1 score decreases with x for the Low-vs-rest split
        let mut last = f64::INFINITY;
        for k in 0..50 {
            let v = -3.0 + 0.12 * k as f64;
            let p = m.posterior_row(&[v]).unwrap()[0];
            assert!(p <= last + 1e-15);
            last = p;
        }
    }
}
