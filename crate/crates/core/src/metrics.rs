//! Evaluation metrics for AOL and ROL predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AolSequence, RolSequence};

/// Partial-credit weights: exact match 1, adjacent class 0.5.
pub const KAPPA_WEIGHTS: [[f64; 3]; 3] = [[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]];

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_sequences(truth: &AolSequence, pred: &AolSequence) -> Result<Self> {
        let mut m = Self::default();
        m.add(truth, pred)?;
        Ok(m)
    }

    pub fn add(&mut self, truth: &AolSequence, pred: &AolSequence) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::LengthMismatch(format!(
                "utterance {}: {} truth labels, {} predictions",
                truth.utterance_id,
                truth.len(),
                pred.len()
            )));
        }
        for (t, p) in truth.labels.iter().zip(&pred.labels) {
            self.counts[t.code()][p.code()] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn uar(&self) -> Result<f64> {
        let mut sum = 0.0;
        for (i, row) in self.counts.iter().enumerate() {
            let n: u64 = row.iter().sum();
            if n == 0 {
                return Err(Error::InvalidInput(format!(
                    "class {} absent from ground truth; recall undefined",
                    crate::model::AolState::ALL[i]
                )));
            }
            sum += row[i] as f64 / n as f64;
        }
        Ok(100.0 * sum / 3.0)
    }

    pub fn weighted_kappa(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::InvalidInput("empty confusion matrix".into()));
        }
        let n = n as f64;
        let p: [f64; 3] = std::array::from_fn(|i| self.counts[i].iter().sum::<u64>() as f64 / n);
        let q: [f64; 3] = std::array::from_fn(|j| (0..3).map(|i| self.counts[i][j]).sum::<u64>() as f64 / n);
        let mut observed = 0.0;
        let mut chance = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                observed += KAPPA_WEIGHTS[i][j] * self.counts[i][j] as f64 / n;
                chance += KAPPA_WEIGHTS[i][j] * p[i] * q[j];
            }
        }
        let denom = 1.0 - chance;
        if denom.abs() < 1e-12 {
            return Err(Error::DegenerateMarginals);
        }
        Ok((observed - chance) / denom)
    }
}

/// Mean per-class recall of `pred` against `truth`, in percent.
pub fn uar(truth: &AolSequence, pred: &AolSequence) -> Result<f64> {
    ConfusionMatrix::from_sequences(truth, pred)?.uar()
}

pub fn weighted_kappa(truth: &AolSequence, pred: &AolSequence) -> Result<f64> {
    ConfusionMatrix::from_sequences(truth, pred)?.weighted_kappa()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauVariant {
    /// `(C - D) / (n (n - 1) / 2)`
    #[default]
    A,
    /// Tie-corrected denominator.
    B,
}

pub fn kendall_tau(a: &RolSequence, b: &RolSequence) -> Result<f64> {
    kendall_tau_with(a, b, TauVariant::A)
}

pub fn kendall_tau_with(a: &RolSequence, b: &RolSequence, variant: TauVariant) -> Result<f64> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::LengthMismatch(format!(
            "utterance {}: {} vs {} ranks",
            a.utterance_id,
            n,
            b.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput("Kendall's tau needs at least two frames".into()));
    }
    let (x, y) = (&a.ranks, &b.ranks);
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let s = (x[j] - x[i]).signum() * (y[j] - y[i]).signum();
            if x[j] == x[i] {
                ties_x += 1;
            }
            if y[j] == y[i] {
                ties_y += 1;
            }
            if x[j] == x[i] || y[j] == y[i] {
                continue;
            }
            if s > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let diff = concordant as f64 - discordant as f64;
    match variant {
        TauVariant::A => Ok(diff / pairs),
        TauVariant::B => {
            let denom = ((pairs - ties_x as f64) * (pairs - ties_y as f64)).sqrt();
            if denom == 0.0 {
                return Err(Error::InvalidInput("tau-b undefined for a constant ranking".into()));
            }
            Ok(diff / denom)
        }
    }
}

/// Precision of retrieving the top and bottom k% of frames.
///
/// Frames whose true rank exceeds the median form the high group, the rest
/// the low group. With `m = max(1, floor(k T / 100))`, the result averages
/// the fraction of the m highest-predicted frames in the high group and the
/// fraction of the m lowest-predicted frames in the low group. Equal
/// predicted ranks are ordered by frame index.
pub fn precision_at_k(truth: &RolSequence, predicted: &RolSequence, k: f64) -> Result<f64> {
    if !(k > 0.0 && k <= 50.0) {
        return Err(Error::InvalidInput(format!("k must lie in (0, 50], got {k}")));
    }
    let t = truth.len();
    if t != predicted.len() {
        return Err(Error::LengthMismatch(format!(
            "utterance {}: {} vs {} ranks",
            truth.utterance_id,
            t,
            predicted.len()
        )));
    }
    if t < 2 {
        return Err(Error::InvalidInput("P@k needs at least two frames".into()));
    }
    let mut sorted = truth.ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if t % 2 == 1 {
        sorted[t / 2]
    } else {
        0.5 * (sorted[t / 2 - 1] + sorted[t / 2])
    };
    let high: Vec<bool> = truth.ranks.iter().map(|r| *r > median).collect();
    let m = ((k * t as f64 / 100.0).floor() as usize).max(1);

    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&i, &j| predicted.ranks[i].total_cmp(&predicted.ranks[j]).then(i.cmp(&j)));
    let bottom_hits = order[..m].iter().filter(|&&i| !high[i]).count();
    order.sort_by(|&i, &j| predicted.ranks[j].total_cmp(&predicted.ranks[i]).then(i.cmp(&j)));
    let top_hits = order[..m].iter().filter(|&&i| high[i]).count();
    Ok(0.5 * (top_hits + bottom_hits) as f64 / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AolState::{self, High as H, Low as L, Medium as M};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn aol(l: &[AolState]) -> AolSequence {
        AolSequence::new("u", l.to_vec())
    }

    fn rol(r: &[f64]) -> RolSequence {
        RolSequence::from_ranks("u", r.to_vec())
    }

    #[test]
    fn uar_cases() {
        let truth = aol(&[L, L, M, M, H, H]);
        assert_eq!(uar(&truth, &truth).unwrap(), 100.0);
        let v = uar(&truth, &aol(&[L, M, M, M, H, L])).unwrap();
        assert!((v - 200.0 / 3.0).abs() < 1e-12);
        let v = uar(&truth, &aol(&[M; 6])).unwrap();
        assert!((v - 100.0 / 3.0).abs() < 1e-12);
        assert!(uar(&aol(&[L, M]), &aol(&[L, M])).is_err());
        assert!(uar(&truth, &aol(&[L])).is_err());
    }

    #[test]
    fn kappa_cases() {
        let truth = aol(&[L, M, H, L]);
        assert_eq!(weighted_kappa(&truth, &truth).unwrap(), 1.0);
        let k = weighted_kappa(&truth, &aol(&[L, M, M, L])).unwrap();
        assert!((k - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            weighted_kappa(&aol(&[L; 5]), &aol(&[L; 5])),
            Err(Error::DegenerateMarginals)
        ));
    }

    /// Eq.-level evaluation straight from label pairs.
    fn kappa_from_pairs(truth: &[usize], pred: &[usize]) -> f64 {
        let n = truth.len() as f64;
        let w = |i: usize, j: usize| 1.0 - 0.5 * (i as f64 - j as f64).abs();
        let observed: f64 = truth.iter().zip(pred).map(|(&i, &j)| w(i, j)).sum::<f64>() / n;
        let mut chance = 0.0;
        for &i in truth {
            for &j in pred {
                chance += w(i, j);
            }
        }
        chance /= n * n;
        (observed - chance) / (1.0 - chance)
    }

    #[test]
    fn kappa_matches_pairwise_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = rng.random_range(5..60);
            let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let to_seq = |c: &[usize]| aol(&c.iter().map(|&k| AolState::ALL[k]).collect::<Vec<_>>());
            match weighted_kappa(&to_seq(&t), &to_seq(&p)) {
                Ok(k) => assert!((k - kappa_from_pairs(&t, &p)).abs() < 1e-12),
                Err(e) => assert!(matches!(e, Error::DegenerateMarginals)),
            }
        }
    }

    #[test]
    fn tau_cases() {
        let a = rol(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
        assert_eq!(kendall_tau(&a, &rol(&[4.0, 3.0, 2.0, 1.0])).unwrap(), -1.0);
        let t = kendall_tau(&a, &rol(&[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&rol(&[1.0]), &rol(&[1.0])).is_err());
        // one tied pair: tau-a counts it in the denominator, tau-b does not
        let tied = rol(&[1.5, 1.5, 3.0]);
        let ta = kendall_tau_with(&rol(&[1.0, 2.0, 3.0]), &tied, TauVariant::A).unwrap();
        let tb = kendall_tau_with(&rol(&[1.0, 2.0, 3.0]), &tied, TauVariant::B).unwrap();
        assert!((ta - 2.0 / 3.0).abs() < 1e-15);
        assert!((tb - 2.0 / 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn p_at_k_cases() {
        let truth: Vec<f64> = (1..=10).map(f64::from).collect();
        let rev: Vec<f64> = truth.iter().rev().copied().collect();
        for k in [10.0, 20.0, 30.0, 40.0, 50.0] {
            assert_eq!(precision_at_k(&rol(&truth), &rol(&truth), k).unwrap(), 1.0);
        }
        assert_eq!(precision_at_k(&rol(&truth), &rol(&rev), 10.0).unwrap(), 0.0);
        // m = 2: top two predicted are frames 9 (high) and 0 (low);
        // bottom two are frames 1 (low) and 8 (high)
        let pred = [9.0, 1.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 2.0, 10.0];
        assert_eq!(precision_at_k(&rol(&truth), &rol(&pred), 20.0).unwrap(), 0.5);
        assert!(precision_at_k(&rol(&truth), &rol(&truth), 0.0).is_err());
        assert!(precision_at_k(&rol(&truth), &rol(&truth), 60.0).is_err());
    }

    proptest! {
        #[test]
        fn tau_matches_pair_enumeration(v in prop::collection::vec((0u8..6, 0u8..6), 2..40)) {
            let a: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            let ra = RolSequence::from_values("u", &a);
            let rb = RolSequence::from_values("u", &b);
            let n = a.len();
            let mut acc = 0i64;
            for i in 0..n {
                for j in 0..n {
                    if i < j {
                        let s = (a[i] - a[j]) * (b[i] - b[j]);
                        acc += if s > 0.0 { 1 } else if s < 0.0 { -1 } else { 0 };
                    }
                }
            }
            let expected = acc as f64 / (n * (n - 1) / 2) as f64;
            prop_assert!((kendall_tau(&ra, &rb).unwrap() - expected).abs() < 1e-12);
        }

        #[test]
        fn tau_and_p_at_k_ignore_increasing_transforms(v in prop::collection::vec(-3.0f64..3.0, 2..40), p in prop::collection::vec(-3.0f64..3.0, 40)) {
            let truth = RolSequence::from_values("u", &v);
            let p = &p[..v.len()];
            let pred = RolSequence::from_values("u", p);
            let moved: Vec<f64> = p.iter().map(|x| 2.0 * x + 7.0).collect();
            let pred2 = RolSequence::from_values("u", &moved);
            prop_assert_eq!(kendall_tau(&truth, &pred).unwrap(), kendall_tau(&truth, &pred2).unwrap());
            for k in [10.0, 25.0, 50.0] {
                prop_assert_eq!(precision_at_k(&truth, &pred, k).unwrap(), precision_at_k(&truth, &pred2, k).unwrap());
            }
        }

        #[test]
        fn aol_metrics_ignore_frame_order(codes in prop::collection::vec((0usize..3, 0usize..3), 6..50), seed in any::<u64>()) {
            let t: Vec<AolState> = codes.iter().map(|c| AolState::ALL[c.0]).collect();
            let p: Vec<AolState> = codes.iter().map(|c| AolState::ALL[c.1]).collect();
            let mut idx: Vec<usize> = (0..t.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
            let tp: Vec<AolState> = idx.iter().map(|&i| t[i]).collect();
            let pp: Vec<AolState> = idx.iter().map(|&i| p[i]).collect();
            let a = ConfusionMatrix::from_sequences(&aol(&t), &aol(&p)).unwrap();
            let b = ConfusionMatrix::from_sequences(&aol(&tp), &aol(&pp)).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(a.uar().ok(), b.uar().ok());
        }
    }
}
