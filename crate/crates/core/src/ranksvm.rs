//! Pairwise preference learning (RankSVM) for within-utterance ranks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, RolSequence, UtteranceFeatures};
use crate::svm::{newton_minimize, LinearModel, NewtonOptions, NewtonTrace, PairwiseObjective, Standardization};

pub const DEFAULT_PAIR_CAP: usize = 200_000;

/// Frame `preferred` ranks strictly above frame `other` in utterance
/// `utterance` (an index into the training set).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PreferencePair {
    pub utterance: usize,
    pub preferred: usize,
    pub other: usize,
}

/// All strict preference pairs inside each utterance, subsampled uniformly
/// without replacement to at most `cap` pairs. The result is in enumeration
/// order and depends only on the inputs and `seed`.
pub fn build_pairs(rols: &[RolSequence], cap: usize, seed: u64) -> Result<Vec<PreferencePair>> {
    if cap == 0 {
        return Err(Error::Config("pair cap must be at least 1".into()));
    }
    let mut pairs = Vec::new();
    for (u, rol) in rols.iter().enumerate() {
        let r = &rol.ranks;
        for i in 0..r.len() {
            for j in i + 1..r.len() {
                if r[i] > r[j] {
                    pairs.push(PreferencePair { utterance: u, preferred: i, other: j });
                } else if r[j] > r[i] {
                    pairs.push(PreferencePair { utterance: u, preferred: j, other: i });
                }
            }
        }
    }
    if pairs.len() <= cap {
        return Ok(pairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = sample(&mut rng, pairs.len(), cap).into_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|k| pairs[k]).collect())
}

/// Ranking hyperplane; `base.bias` is always zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    pub base: LinearModel,
}

pub fn train_ranksvm(
    features: &[UtteranceFeatures],
    pairs: &[PreferencePair],
    c: f64,
) -> Result<RankModel> {
    train_ranksvm_traced(features, pairs, c, &NewtonOptions::default()).map(|(m, _)| m)
}

pub fn train_ranksvm_traced(
    features: &[UtteranceFeatures],
    pairs: &[PreferencePair],
    c: f64,
    opts: &NewtonOptions,
) -> Result<(RankModel, NewtonTrace)> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no preference pairs to train on".into()));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    let x = FeatureMatrix::vstack(features.iter().map(|f| &f.frames))?;
    let mut offsets = Vec::with_capacity(features.len());
    let mut acc = 0;
    for f in features {
        offsets.push(acc);
        acc += f.n_frames();
    }
    let mut flat = Vec::with_capacity(pairs.len());
    for p in pairs {
        let n = features
            .get(p.utterance)
            .ok_or_else(|| Error::InvalidInput(format!("pair references utterance {}", p.utterance)))?
            .n_frames();
        if p.preferred >= n || p.other >= n || p.preferred == p.other {
            return Err(Error::InvalidInput(format!("invalid pair {p:?}")));
        }
        flat.push((offsets[p.utterance] + p.preferred, offsets[p.utterance] + p.other));
    }
    let standardization = Standardization::fit(&x);
    let xs = standardization.apply(&x)?;
    let obj = PairwiseObjective::new(&xs, &flat, c);
    let (w, trace) = newton_minimize(&obj, opts)?;
    Ok((
        RankModel {
            base: LinearModel {
                weights: w,
                bias: 0.0,
                standardization,
            },
        },
        trace,
    ))
}

impl RankModel {
    pub fn score_frames(&self, features: &UtteranceFeatures) -> Result<Vec<f64>> {
        self.base.decision_values(&features.frames)
    }

    pub fn predict_ranks(&self, features: &UtteranceFeatures) -> Result<RolSequence> {
        Ok(ranks_from_scores(&features.utterance_id, &self.score_frames(features)?))
    }
}

/// Ascending scores to ascending ranks; equal scores share the average rank.
pub fn ranks_from_scores(utterance_id: &str, scores: &[f64]) -> RolSequence {
    RolSequence::from_values(utterance_id, scores)
}
