//! Interval annotations to absolute (AOL) and relative (ROL) ordinal labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{average_ranks, AnnotationSet, AolSequence, AolState, RolSequence, ValueRange};

/// How values sitting exactly on a threshold are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Low if v <= t1, Medium if t1 < v <= t2, High if v > t2.
    TextRule,
    /// Low on [min, t1), Medium on [t1, t2), High on [t2, max].
    TableHalfOpen,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub boundary_mode: BoundaryMode,
}

impl ThresholdConfig {
    pub fn new(theta1: f64, theta2: f64, boundary_mode: BoundaryMode) -> Result<Self> {
        if !(theta1.is_finite() && theta2.is_finite() && theta1 < theta2) {
            return Err(Error::Config(format!(
                "thresholds must satisfy theta1 < theta2, got {theta1}, {theta2}"
            )));
        }
        Ok(Self {
            theta1,
            theta2,
            boundary_mode,
        })
    }

    /// Symmetric text-rule thresholds (-theta2, theta2).
    pub fn symmetric(theta2: f64) -> Result<Self> {
        Self::new(-theta2, theta2, BoundaryMode::TextRule)
    }

    pub fn validate(&self, range: ValueRange) -> Result<()> {
        Self::new(self.theta1, self.theta2, self.boundary_mode)?;
        if !(range.contains(self.theta1) && range.contains(self.theta2)) {
            return Err(Error::Config(format!(
                "thresholds ({}, {}) outside value range [{}, {}]",
                self.theta1, self.theta2, range.min, range.max
            )));
        }
        Ok(())
    }

    pub fn classify(&self, v: f64) -> AolState {
        match self.boundary_mode {
            BoundaryMode::TextRule => {
                if v <= self.theta1 {
                    AolState::Low
                } else if v <= self.theta2 {
                    AolState::Medium
                } else {
                    AolState::High
                }
            }
            BoundaryMode::TableHalfOpen => {
                if v < self.theta1 {
                    AolState::Low
                } else if v < self.theta2 {
                    AolState::Medium
                } else {
                    AolState::High
                }
            }
        }
    }
}

/// Delay compensation and windowed smoothing parameters, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub delay_s: f64,
    pub window_s: f64,
    pub overlap: f64,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            delay_s: 0.0,
            window_s: 1.0,
            overlap: 0.5,
        }
    }
}

/// Sample counts derived from [`Preprocessing`] for a given sampling period.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub delay: usize,
    pub window: usize,
    pub hop: usize,
}

impl Preprocessing {
    pub fn validate(&self) -> Result<()> {
        if !(self.delay_s >= 0.0 && self.delay_s.is_finite()) {
            return Err(Error::Config(format!("invalid delay {}", self.delay_s)));
        }
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err(Error::Config(format!("invalid window {}", self.window_s)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap {} not in [0, 1)", self.overlap)));
        }
        Ok(())
    }

    pub fn plan(&self, period_s: f64) -> Result<WindowPlan> {
        self.validate()?;
        let delay = (self.delay_s / period_s).round() as usize;
        let window = (self.window_s / period_s).round() as usize;
        let hop = ((1.0 - self.overlap) * self.window_s / period_s).round() as usize;
        if window == 0 || hop == 0 {
            return Err(Error::Config(format!(
                "window {}s / overlap {} is shorter than one sample at period {period_s}s",
                self.window_s, self.overlap
            )));
        }
        Ok(WindowPlan { delay, window, hop })
    }
}

/// Shifts every rater's trace earlier by the delay and averages within
/// overlapping windows; a trailing partial window is dropped.
pub fn preprocess_annotations(ann: &AnnotationSet, pre: &Preprocessing) -> Result<AnnotationSet> {
    let plan = pre.plan(ann.period_s)?;
    let annotators = ann
        .annotators
        .iter()
        .map(|series| window_means(series, plan))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotationSet {
        utterance_id: ann.utterance_id.clone(),
        period_s: plan.hop as f64 * ann.period_s,
        annotators,
        value_range: ann.value_range,
    })
}

fn window_means(series: &[f64], plan: WindowPlan) -> Result<Vec<f64>> {
    let shifted = series.get(plan.delay..).unwrap_or(&[]);
    if shifted.len() < plan.window {
        return Err(Error::InvalidInput(format!(
            "window of {} samples longer than the {}-sample series after delay",
            plan.window,
            shifted.len()
        )));
    }
    let n = (shifted.len() - plan.window) / plan.hop + 1;
    Ok((0..n)
        .map(|k| {
            let w = &shifted[k * plan.hop..k * plan.hop + plan.window];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect())
}

pub fn interval_to_aol(
    utterance_id: &str,
    values: &[f64],
    cfg: &ThresholdConfig,
) -> AolSequence {
    AolSequence::new(utterance_id, values.iter().map(|v| cfg.classify(*v)).collect())
}

fn check_equal_lengths(seqs: &[AolSequence]) -> Result<usize> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::InvalidInput("no label sequences given".into()))?;
    if let Some(bad) = seqs.iter().find(|s| s.len() != first.len()) {
        return Err(Error::LengthMismatch(format!(
            "label sequences of lengths {} and {}",
            first.len(),
            bad.len()
        )));
    }
    Ok(first.len())
}

/// Majority vote across raters. Tied plurality goes to the tied class nearest
/// the raters' mean code; if still tied, Medium.
pub fn consensus_aol(per_annotator: &[AolSequence]) -> Result<AolSequence> {
    let t_len = check_equal_lengths(per_annotator)?;
    let r = per_annotator.len() as f64;
    let labels = (0..t_len)
        .map(|t| {
            let mut votes = [0usize; 3];
            let mut code_sum = 0usize;
            for seq in per_annotator {
                votes[seq.labels[t].code()] += 1;
                code_sum += seq.labels[t].code();
            }
            vote_winner(votes, code_sum as f64 / r)
        })
        .collect();
    Ok(AolSequence::new(per_annotator[0].utterance_id.clone(), labels))
}

fn vote_winner(votes: [usize; 3], mean_code: f64) -> AolState {
    let top = *votes.iter().max().unwrap();
    let tied: Vec<AolState> = AolState::ALL
        .into_iter()
        .filter(|s| votes[s.code()] == top)
        .collect();
    if tied.len() == 1 {
        return tied[0];
    }
    let dist = |s: &AolState| (s.code() as f64 - mean_code).abs();
    let best = tied.iter().map(dist).fold(f64::INFINITY, f64::min);
    let closest: Vec<AolState> = tied.into_iter().filter(|s| dist(s) == best).collect();
    if closest.len() == 1 {
        closest[0]
    } else {
        AolState::Medium
    }
}

/// |N_most - N_least| / N over the three class counts.
pub fn label_balance_from_counts(counts: [usize; 3]) -> Result<f64> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidInput("label balance of an empty label set".into()));
    }
    let most = *counts.iter().max().unwrap();
    let least = *counts.iter().min().unwrap();
    Ok((most - least) as f64 / n as f64)
}

pub fn label_balance(train_labels: &[AolSequence]) -> Result<f64> {
    let mut counts = [0usize; 3];
    for seq in train_labels {
        for (c, k) in counts.iter_mut().zip(seq.counts()) {
            *c += k;
        }
    }
    label_balance_from_counts(counts)
}

/// Fraction of frames on which some class gets strictly more than half of
/// the raters' votes.
pub fn inter_rater_agreement(per_annotator: &[AolSequence]) -> Result<f64> {
    if per_annotator.len() < 2 {
        return Err(Error::InvalidInput("agreement needs at least two raters".into()));
    }
    let t_len = check_equal_lengths(per_annotator)?;
    if t_len == 0 {
        return Err(Error::InvalidInput("agreement over zero frames".into()));
    }
    let r = per_annotator.len();
    let agreed = (0..t_len)
        .filter(|&t| {
            let mut votes = [0usize; 3];
            for seq in per_annotator {
                votes[seq.labels[t].code()] += 1;
            }
            votes.iter().any(|&v| 2 * v > r)
        })
        .count();
    Ok(agreed as f64 / t_len as f64)
}

/// Balance and agreement for one threshold setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub gamma: f64,
    pub agreement: f64,
    pub per_class_counts: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta1: f64,
    pub theta2: f64,
    /// Mean over raters of each rater's label balance.
    pub gamma_mean: f64,
    pub agreement: f64,
}

/// Label balance and agreement for each threshold setting. `anns` are the
/// smoothed annotation sets of every (training) utterance; all must have the
/// same rater count.
pub fn sweep_thresholds(anns: &[AnnotationSet], grid: &[ThresholdConfig]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty threshold grid".into()));
    }
    let first = anns
        .first()
        .ok_or_else(|| Error::InvalidInput("no annotations to sweep".into()))?;
    let n_raters = first.n_annotators();
    if anns.iter().any(|a| a.n_annotators() != n_raters) {
        return Err(Error::InvalidInput(
            "all utterances must have the same number of raters".into(),
        ));
    }
    grid.iter()
        .map(|cfg| {
            cfg.validate(first.value_range)?;
            let mut gamma_sum = 0.0;
            for r in 0..n_raters {
                let seqs: Vec<AolSequence> = anns
                    .iter()
                    .map(|a| interval_to_aol(&a.utterance_id, &a.annotators[r], cfg))
                    .collect();
                gamma_sum += label_balance(&seqs)?;
            }
            let mut agreed_frames = 0.0;
            let mut frames = 0usize;
            if n_raters >= 2 {
                for a in anns {
                    let per: Vec<AolSequence> = a
                        .annotators
                        .iter()
                        .map(|s| interval_to_aol(&a.utterance_id, s, cfg))
                        .collect();
                    agreed_frames += inter_rater_agreement(&per)? * a.len() as f64;
                    frames += a.len();
                }
            } else {
                agreed_frames = 1.0;
                frames = 1;
            }
            Ok(SweepRow {
                theta1: cfg.theta1,
                theta2: cfg.theta2,
                gamma_mean: gamma_sum / n_raters as f64,
                agreement: agreed_frames / frames as f64,
            })
        })
        .collect()
}

/// Plot-ready CSV of a sweep: theta2, gamma_mean, agreement.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("theta2,gamma_mean,agreement\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.theta2, r.gamma_mean, r.agreement));
    }
    out
}

/// Inclusive grid `start, start+step, ..., end`, robust to float drift.
pub fn threshold_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && end >= start) {
        return Err(Error::Config(format!("invalid grid {start}..{end} step {step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Comparison {
    Increase,
    Decrease,
    Tie,
    Undecided,
}

impl Comparison {
    fn flipped(self) -> Self {
        match self {
            Comparison::Increase => Comparison::Decrease,
            Comparison::Decrease => Comparison::Increase,
            other => other,
        }
    }
}

/// Pairwise comparisons among the windows of one utterance. Entry (i, j)
/// describes how window j relates to window i.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComparisonMatrix {
    size: usize,
    cells: Vec<Comparison>,
}

impl ComparisonMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> Comparison {
        self.cells[i * self.size + j]
    }

    /// Builds a matrix from the upper triangle; the lower triangle is the
    /// mirror image and the diagonal is `Tie`.
    pub fn from_upper(size: usize, mut upper: impl FnMut(usize, usize) -> Comparison) -> Self {
        let mut cells = vec![Comparison::Tie; size * size];
        for i in 0..size {
            for j in i + 1..size {
                let c = upper(i, j);
                cells[i * size + j] = c;
                cells[j * size + i] = c.flipped();
            }
        }
        Self { size, cells }
    }

    pub fn is_antisymmetric(&self) -> bool {
        (0..self.size).all(|i| {
            self.get(i, i) == Comparison::Tie
                && (0..self.size).all(|j| self.get(i, j) == self.get(j, i).flipped())
        })
    }
}

pub fn comparison_matrix(values: &[f64], eps_tie: f64) -> ComparisonMatrix {
    ComparisonMatrix::from_upper(values.len(), |i, j| {
        if values[j] > values[i] + eps_tie {
            Comparison::Increase
        } else if values[j] < values[i] - eps_tie {
            Comparison::Decrease
        } else {
            Comparison::Tie
        }
    })
}

/// Cell-wise strict-majority vote over increase/decrease/tie.
pub fn qa_consensus(matrices: &[ComparisonMatrix]) -> Result<ComparisonMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::InvalidInput("no comparison matrices".into()))?;
    let size = first.size;
    if matrices.iter().any(|m| m.size != size) {
        return Err(Error::LengthMismatch("comparison matrices differ in size".into()));
    }
    let n = matrices.len();
    Ok(ComparisonMatrix::from_upper(size, |i, j| {
        let (mut up, mut down, mut tie) = (0, 0, 0);
        for m in matrices {
            match m.get(i, j) {
                Comparison::Increase => up += 1,
                Comparison::Decrease => down += 1,
                Comparison::Tie => tie += 1,
                Comparison::Undecided => {}
            }
        }
        if 2 * up > n {
            Comparison::Increase
        } else if 2 * down > n {
            Comparison::Decrease
        } else if 2 * tie > n {
            Comparison::Tie
        } else {
            Comparison::Undecided
        }
    }))
}

/// Copeland scores: for window i, wins (i above j) minus losses over decided
/// cells.
pub fn copeland_scores(m: &ComparisonMatrix) -> Vec<f64> {
    (0..m.size)
        .map(|i| {
            (0..m.size)
                .map(|j| match m.get(j, i) {
                    Comparison::Increase => 1.0,
                    Comparison::Decrease => -1.0,
                    _ => 0.0,
                })
                .sum()
        })
        .collect()
}

pub fn ranks_from_consensus(utterance_id: &str, m: &ComparisonMatrix) -> RolSequence {
    RolSequence::from_ranks(utterance_id, average_ranks(&copeland_scores(m)))
}

/// Consensus labels for one utterance.
#[derive(Clone, Debug)]
pub struct ConvertedLabels {
    pub aol: AolSequence,
    pub rol: RolSequence,
    pub per_annotator: Vec<AolSequence>,
}

/// Full conversion of one (already smoothed) annotation set.
pub fn convert_smoothed(
    smoothed: &AnnotationSet,
    thresholds: &ThresholdConfig,
    eps_tie: f64,
) -> Result<ConvertedLabels> {
    thresholds.validate(smoothed.value_range)?;
    let id = &smoothed.utterance_id;
    let per_annotator: Vec<AolSequence> = smoothed
        .annotators
        .iter()
        .map(|s| interval_to_aol(id, s, thresholds))
        .collect();
    let aol = consensus_aol(&per_annotator)?;
    let matrices: Vec<ComparisonMatrix> = smoothed
        .annotators
        .iter()
        .map(|s| comparison_matrix(s, eps_tie))
        .collect();
    let rol = ranks_from_consensus(id, &qa_consensus(&matrices)?);
    Ok(ConvertedLabels {
        aol,
        rol,
        per_annotator,
    })
}
