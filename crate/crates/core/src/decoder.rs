//! Viterbi decoding over a lattice of state posteriors and
//! rank-difference-conditioned transitions.

use crate::error::{Error, Result};
use crate::model::{AolSequence, AolState};
use crate::omsvm::StatePosteriors;
use crate::transition::TransitionModel;

/// Probabilities are floored here before taking logs.
pub const LOG_FLOOR: f64 = 1e-300;

/// Largest T accepted by [`brute_force_decode`].
pub const BRUTE_FORCE_MAX_FRAMES: usize = 12;

/// Posteriors for T frames and the T - 1 rank differences between them.
#[derive(Clone, Debug, PartialEq)]
pub struct StateLattice {
    pub posteriors: StatePosteriors,
    pub deltas: Vec<f64>,
}

impl StateLattice {
    pub fn new(posteriors: StatePosteriors, deltas: Vec<f64>) -> Result<Self> {
        if posteriors.is_empty() {
            return Err(Error::InvalidInput("empty lattice".into()));
        }
        if deltas.len() + 1 != posteriors.len() {
            return Err(Error::LengthMismatch(format!(
                "{} posterior rows need {} deltas, got {}",
                posteriors.len(),
                posteriors.len() - 1,
                deltas.len()
            )));
        }
        Ok(Self { posteriors, deltas })
    }

    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }
}

/// Anything that yields P(next | prev, delta).
pub trait TransitionSource {
    fn transition(&self, prev: AolState, delta: f64) -> [f64; 3];
}

impl TransitionSource for TransitionModel {
    fn transition(&self, prev: AolState, delta: f64) -> [f64; 3] {
        self.transition_distribution(prev, delta)
    }
}

/// Every transition equally likely.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformTransitions;

impl TransitionSource for UniformTransitions {
    fn transition(&self, _prev: AolState, _delta: f64) -> [f64; 3] {
        [1.0 / 3.0; 3]
    }
}

/// Fixed matrix ignoring delta; rows indexed by the previous state.
#[derive(Clone, Copy, Debug)]
pub struct StaticTransitions(pub [[f64; 3]; 3]);

impl TransitionSource for StaticTransitions {
    fn transition(&self, prev: AolState, _delta: f64) -> [f64; 3] {
        self.0[prev.code()]
    }
}

fn ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

fn log_rows(lattice: &StateLattice) -> Vec<[f64; 3]> {
    lattice.posteriors.probs.iter().map(|r| r.map(ln)).collect()
}

fn log_transitions(lattice: &StateLattice, tm: &dyn TransitionSource) -> Vec<[[f64; 3]; 3]> {
    lattice
        .deltas
        .iter()
        .map(|d| std::array::from_fn(|i| tm.transition(AolState::ALL[i], *d).map(ln)))
        .collect()
}

/// Most probable state path. Ties in every max go to the lower state code.
pub fn viterbi_decode(lattice: &StateLattice, tm: &dyn TransitionSource) -> Result<AolSequence> {
    if lattice.is_empty() {
        return Err(Error::InvalidInput("empty lattice".into()));
    }
    let emit = log_rows(lattice);
    let trans = log_transitions(lattice, tm);
    let t_len = emit.len();
    let mut score = emit[0];
    let mut back: Vec<[usize; 3]> = Vec::with_capacity(t_len - 1);
    for t in 1..t_len {
        let mut next = [0.0; 3];
        let mut ptr = [0; 3];
        for j in 0..3 {
            let mut best = 0;
            let mut best_score = score[0] + trans[t - 1][0][j];
            for i in 1..3 {
                let s = score[i] + trans[t - 1][i][j];
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            next[j] = best_score + emit[t][j];
            ptr[j] = best;
        }
        score = next;
        back.push(ptr);
    }
    let mut state = 0;
    for j in 1..3 {
        if score[j] > score[state] {
            state = j;
        }
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t - 1][state];
        path[t - 1] = state;
    }
    Ok(AolSequence::new(
        "",
        path.into_iter().map(|c| AolState::ALL[c]).collect(),
    ))
}

/// Log objective of one path, accumulated in the same order as
/// [`viterbi_decode`].
pub fn path_score(lattice: &StateLattice, tm: &dyn TransitionSource, path: &[AolState]) -> Result<f64> {
    if path.len() != lattice.len() {
        return Err(Error::LengthMismatch(format!(
            "path of {} states for lattice of {}",
            path.len(),
            lattice.len()
        )));
    }
    let emit = log_rows(lattice);
    let trans = log_transitions(lattice, tm);
    Ok(score_codes(&emit, &trans, &path.iter().map(|s| s.code()).collect::<Vec<_>>()))
}

fn score_codes(emit: &[[f64; 3]], trans: &[[[f64; 3]; 3]], path: &[usize]) -> f64 {
    let mut s = emit[0][path[0]];
    for t in 1..path.len() {
        s = s + trans[t - 1][path[t - 1]][path[t]] + emit[t][path[t]];
    }
    s
}

/// Exhaustive search over all 3^T paths (T at most 12). Among equal
/// scores, prefers the path that is smallest when compared from the last
/// frame backwards, which is the path the Viterbi tie rule selects.
pub fn brute_force_decode(lattice: &StateLattice, tm: &dyn TransitionSource) -> Result<AolSequence> {
    let t_len = lattice.len();
    if t_len == 0 {
        return Err(Error::InvalidInput("empty lattice".into()));
    }
    if t_len > BRUTE_FORCE_MAX_FRAMES {
        return Err(Error::InvalidInput(format!(
            "brute force limited to {BRUTE_FORCE_MAX_FRAMES} frames, got {t_len}"
        )));
    }
    let emit = log_rows(lattice);
    let trans = log_transitions(lattice, tm);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut path = vec![0usize; t_len];
    for n in 0..3usize.pow(t_len as u32) {
        // last frame is the most significant digit
        let mut k = n;
        for slot in path.iter_mut() {
            *slot = k % 3;
            k /= 3;
        }
        let s = score_codes(&emit, &trans, &path);
        // enumeration order is increasing in reverse-lexicographic order,
        // so only a strictly better score replaces the incumbent
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, path.clone()));
        }
    }
    let (_, codes) = best.expect("at least one path");
    Ok(AolSequence::new(
        "",
        codes.into_iter().map(|c| AolState::ALL[c]).collect(),
    ))
}

/// Divides each row by the class priors and renormalizes.
pub fn divide_by_priors(posteriors: &StatePosteriors, priors: &[f64; 3]) -> Result<StatePosteriors> {
    if priors.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidInput(format!("class priors must be positive: {priors:?}")));
    }
    let probs = posteriors
        .probs
        .iter()
        .map(|r| {
            let q: [f64; 3] = std::array::from_fn(|k| r[k] / priors[k]);
            let s: f64 = q.iter().sum();
            q.map(|v| v / s)
        })
        .collect();
    Ok(StatePosteriors { probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use AolState::{High as H, Low as L, Medium as M};

    fn lattice(rows: Vec<[f64; 3]>) -> StateLattice {
        let n = rows.len();
        StateLattice::new(StatePosteriors { probs: rows }, vec![0.0; n - 1]).unwrap()
    }

    fn random_row(rng: &mut impl Rng) -> [f64; 3] {
        let r: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() + 1e-3);
        let s: f64 = r.iter().sum();
        r.map(|v| v / s)
    }

    /// Transitions that depend on delta through a fixed random table.
    struct TableTransitions(Vec<[[f64; 3]; 3]>);

    impl TransitionSource for TableTransitions {
        fn transition(&self, prev: AolState, delta: f64) -> [f64; 3] {
            self.0[delta as usize][prev.code()]
        }
    }

    #[test]
    fn single_frame_is_argmax() {
        let lat = lattice(vec![[0.2, 0.5, 0.3]]);
        assert_eq!(viterbi_decode(&lat, &UniformTransitions).unwrap().labels, vec![M]);
        assert_eq!(brute_force_decode(&lat, &UniformTransitions).unwrap().labels, vec![M]);
    }

    #[test]
    fn uniform_transitions_give_framewise_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<[f64; 3]> = (0..50).map(|_| random_row(&mut rng)).collect();
        let lat = lattice(rows);
        let path = viterbi_decode(&lat, &UniformTransitions).unwrap();
        assert_eq!(path.labels, lat.posteriors.argmax());
    }

    #[test]
    fn two_frames_by_hand() {
        let lat = lattice(vec![[0.6, 0.3, 0.1], [0.1, 0.45, 0.45]]);
        let tm = StaticTransitions([[0.1, 0.2, 0.7], [0.3, 0.4, 0.3], [0.2, 0.2, 0.6]]);
        // best of 9: L->H scores 0.6*0.7*0.45
        let mut best = (f64::MIN, (0, 0));
        for i in 0..3 {
            for j in 0..3 {
                let p = lat.posteriors.probs[0][i] * tm.0[i][j] * lat.posteriors.probs[1][j];
                if p > best.0 {
                    best = (p, (i, j));
                }
            }
        }
        assert_eq!(best.1, (0, 2));
        assert_eq!(viterbi_decode(&lat, &tm).unwrap().labels, vec![L, H]);
        assert_eq!(brute_force_decode(&lat, &tm).unwrap().labels, vec![L, H]);
    }

    #[test]
    fn ties_go_low() {
        let lat = lattice(vec![[1.0 / 3.0; 3]; 4]);
        assert_eq!(viterbi_decode(&lat, &UniformTransitions).unwrap().labels, vec![L; 4]);
        assert_eq!(brute_force_decode(&lat, &UniformTransitions).unwrap().labels, vec![L; 4]);
        let lat = lattice(vec![[0.25, 0.5, 0.25], [0.5, 0.0, 0.5]]);
        let a = viterbi_decode(&lat, &UniformTransitions).unwrap();
        assert_eq!(a.labels, vec![M, L]);
        assert_eq!(brute_force_decode(&lat, &UniformTransitions).unwrap(), a);
    }

    #[test]
    fn forced_state_pins_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows: Vec<[f64; 3]> = (0..7).map(|_| random_row(&mut rng)).collect();
        rows[3] = [1.0, 0.0, 0.0];
        let lat = lattice(rows);
        let tm = StaticTransitions([[0.05, 0.05, 0.9], [0.05, 0.05, 0.9], [0.05, 0.05, 0.9]]);
        assert_eq!(viterbi_decode(&lat, &tm).unwrap().labels[3], L);
        assert_eq!(brute_force_decode(&lat, &tm).unwrap().labels[3], L);
    }

    #[test]
    fn guards() {
        let lat = lattice(vec![[1.0, 0.0, 0.0]; 13]);
        assert!(brute_force_decode(&lat, &UniformTransitions).is_err());
        assert!(StateLattice::new(StatePosteriors { probs: vec![] }, vec![]).is_err());
        assert!(StateLattice::new(StatePosteriors { probs: vec![[1.0, 0.0, 0.0]; 3] }, vec![0.0]).is_err());
    }

    #[test]
    fn prior_division() {
        let p = StatePosteriors { probs: vec![[0.5, 0.25, 0.25]] };
        let q = divide_by_priors(&p, &[0.5, 0.25, 0.25]).unwrap();
        for v in q.probs[0] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(divide_by_priors(&p, &[0.0, 0.5, 0.5]).is_err());
    }

    fn random_instance(seed: u64, t_len: usize) -> (StateLattice, TableTransitions) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 3]> = (0..t_len).map(|_| random_row(&mut rng)).collect();
        let tables: Vec<[[f64; 3]; 3]> = (0..t_len.max(2) - 1)
            .map(|_| std::array::from_fn(|_| random_row(&mut rng)))
            .collect();
        let deltas = (0..t_len - 1).map(|t| t as f64).collect();
        let lat = StateLattice::new(StatePosteriors { probs: rows }, deltas).unwrap();
        (lat, TableTransitions(tables))
    }

    #[test]
    fn viterbi_matches_enumeration() {
        for seed in 0..200u64 {
            let t_len = 1 + (seed as usize % 8);
            let (lat, tm) = random_instance(seed, t_len);
            assert_eq!(viterbi_decode(&lat, &tm).unwrap(), brute_force_decode(&lat, &tm).unwrap());
        }
    }

    proptest! {
        #[test]
        fn decoded_path_beats_framewise_argmax(seed in any::<u64>(), t_len in 1usize..30) {
            let (lat, tm) = random_instance(seed, t_len);
            let path = viterbi_decode(&lat, &tm).unwrap();
            prop_assert_eq!(path.len(), t_len);
            let s_best = path_score(&lat, &tm, &path.labels).unwrap();
            let s_arg = path_score(&lat, &tm, &lat.posteriors.argmax()).unwrap();
            prop_assert!(s_best >= s_arg);
        }

        #[test]
        fn row_scaling_leaves_path_unchanged(seed in any::<u64>(), t_len in 1usize..20, scale in prop::collection::vec(0.5f64..4.0, 20)) {
            let (lat, tm) = random_instance(seed, t_len);
            let mut scaled = lat.clone();
            for (row, c) in scaled.posteriors.probs.iter_mut().zip(&scale) {
                *row = row.map(|v| v * c);
            }
            prop_assert_eq!(viterbi_decode(&lat, &tm).unwrap(), viterbi_decode(&scaled, &tm).unwrap());
        }
    }
}
