//! Rank-difference-conditioned state transitions.
//!
//! For predecessor state i and rank difference d the transition distribution
//! is Bayes' rule over j:
//!
//! ```text
//! P(j | i, d) = P(d | i, j) P(j | i) / P(d | i)
//! ```
//!
//! with KDE likelihoods, a count-based prior, and a final renormalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{fit_kde_with_floor, BandwidthRule, KdeModel, DEFAULT_DENSITY_FLOOR};
use crate::model::{AolSequence, AolState, RolSequence};

pub const DEFAULT_MIN_CELL_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorMode {
    /// P(d | i) from its own KDE over all transitions out of i.
    #[default]
    SeparateKde,
    /// P(d | i) = sum_k P(d | i, k) P(k | i).
    Marginalized,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaScale {
    /// Differences of (rank - 1) / (T - 1); always in [-1, 1].
    #[default]
    Normalized,
    /// Differences of raw ranks; only meaningful for equal-length utterances.
    Raw,
}

/// Rank differences between consecutive frames, length T - 1.
pub fn rank_deltas(rol: &RolSequence, scale: DeltaScale) -> Vec<f64> {
    let r = match scale {
        DeltaScale::Normalized => &rol.normalized,
        DeltaScale::Raw => &rol.ranks,
    };
    r.windows(2).map(|w| w[1] - w[0]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionOptions {
    pub denominator_mode: DenominatorMode,
    pub delta_scale: DeltaScale,
    pub bandwidth: BandwidthRule,
    pub density_floor: f64,
    /// Conditional cells with fewer samples use their row's marginal KDE.
    pub min_cell_samples: usize,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        Self {
            denominator_mode: DenominatorMode::SeparateKde,
            delta_scale: DeltaScale::Normalized,
            bandwidth: BandwidthRule::Silverman,
            density_floor: DEFAULT_DENSITY_FLOOR,
            min_cell_samples: DEFAULT_MIN_CELL_SAMPLES,
        }
    }
}

/// Likelihood model for one (i, j) cell.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "kde")]
pub enum CellDensity {
    Fitted(KdeModel),
    /// Too few samples; the row's marginal KDE stands in.
    #[default]
    RowMarginal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionCounts {
    /// N_i: frames in state i that have a successor.
    pub from: [u64; 3],
    /// N_{i->j}
    pub pairs: [[u64; 3]; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    /// Smoothed P(j | i), rows indexed by i.
    pub prior: [[f64; 3]; 3],
    pub counts: TransitionCounts,
    pub conditional: [[CellDensity; 3]; 3],
    /// P(d | i). A state that never precedes another frame gets the KDE over
    /// all training differences.
    pub marginal: [KdeModel; 3],
    pub denominator_mode: DenominatorMode,
    pub delta_scale: DeltaScale,
}

pub fn fit_transition_model(
    aols: &[AolSequence],
    rols: &[RolSequence],
    opts: &TransitionOptions,
) -> Result<TransitionModel> {
    if aols.len() != rols.len() {
        return Err(Error::LengthMismatch(format!(
            "{} AOL sequences, {} ROL sequences",
            aols.len(),
            rols.len()
        )));
    }
    let mut cell_samples: [[Vec<f64>; 3]; 3] = Default::default();
    let mut counts = TransitionCounts {
        from: [0; 3],
        pairs: [[0; 3]; 3],
    };
    for (a, r) in aols.iter().zip(rols) {
        if a.len() != r.len() {
            return Err(Error::LengthMismatch(format!(
                "utterance {}: {} AOLs, {} ranks",
                a.utterance_id,
                a.len(),
                r.len()
            )));
        }
        let deltas = rank_deltas(r, opts.delta_scale);
        for (t, d) in deltas.iter().enumerate() {
            let (i, j) = (a.labels[t].code(), a.labels[t + 1].code());
            counts.from[i] += 1;
            counts.pairs[i][j] += 1;
            cell_samples[i][j].push(*d);
        }
    }
    let total: u64 = counts.from.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput(
            "no consecutive frame pairs to estimate transitions from".into(),
        ));
    }

    let prior = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            (counts.pairs[i][j] as f64 + 1.0) / (counts.from[i] as f64 + 3.0)
        })
    });

    let kde = |s: &[f64]| fit_kde_with_floor(s, opts.bandwidth, opts.density_floor);
    let pooled: Vec<f64> = cell_samples.iter().flatten().flatten().copied().collect();
    let pooled_kde = kde(&pooled)?;
    let mut marginal: [Option<KdeModel>; 3] = Default::default();
    for i in 0..3 {
        let row: Vec<f64> = cell_samples[i].iter().flatten().copied().collect();
        marginal[i] = Some(if row.is_empty() { pooled_kde.clone() } else { kde(&row)? });
    }
    let mut conditional: [[CellDensity; 3]; 3] = Default::default();
    for i in 0..3 {
        for j in 0..3 {
            let s = &cell_samples[i][j];
            if s.len() >= opts.min_cell_samples.max(1) {
                conditional[i][j] = CellDensity::Fitted(kde(s)?);
            }
        }
    }
    Ok(TransitionModel {
        prior,
        counts,
        conditional,
        marginal: marginal.map(|m| m.expect("filled above")),
        denominator_mode: opts.denominator_mode,
        delta_scale: opts.delta_scale,
    })
}

impl TransitionModel {
    pub fn conditional_kde(&self, prev: AolState, next: AolState) -> &KdeModel {
        match &self.conditional[prev.code()][next.code()] {
            CellDensity::Fitted(k) => k,
            CellDensity::RowMarginal => &self.marginal[prev.code()],
        }
    }

    /// `P(d | i, j) P(j | i) / P(d | i)` for each j, before renormalization.
    pub fn unnormalized(&self, prev: AolState, delta: f64) -> [f64; 3] {
        let i = prev.code();
        let numer: [f64; 3] = std::array::from_fn(|j| {
            self.conditional_kde(prev, AolState::ALL[j]).density(delta) * self.prior[i][j]
        });
        let denom = match self.denominator_mode {
            DenominatorMode::SeparateKde => self.marginal[i].density(delta),
            DenominatorMode::Marginalized => numer.iter().sum(),
        };
        numer.map(|v| v / denom)
    }

    /// Transition distribution over the next state given the predecessor and
    /// the observed rank difference.
    pub fn transition_distribution(&self, prev: AolState, delta: f64) -> [f64; 3] {
        let q = self.unnormalized(prev, delta);
        let s: f64 = q.iter().sum();
        q.map(|v| v / s)
    }
}
