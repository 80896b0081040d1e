//! Gaussian kernel density estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-9;
pub const MIN_BANDWIDTH: f64 = 1e-3;

/// Kernel terms farther than this many bandwidths are below 1e-31 of the
/// peak and are skipped.
const CUTOFF_BANDWIDTHS: f64 = 12.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum BandwidthRule {
    /// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, floored at [`MIN_BANDWIDTH`].
    #[default]
    Silverman,
    Fixed(f64),
}

/// Sample-based density; `samples` are kept sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub samples: Vec<f64>,
    pub bandwidth: f64,
    pub density_floor: f64,
}

pub fn fit_kde(samples: &[f64], rule: BandwidthRule) -> Result<KdeModel> {
    fit_kde_with_floor(samples, rule, DEFAULT_DENSITY_FLOOR)
}

pub fn fit_kde_with_floor(samples: &[f64], rule: BandwidthRule, floor: f64) -> Result<KdeModel> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("KDE needs at least one sample".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite KDE sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bandwidth = match rule {
        BandwidthRule::Silverman => silverman_bandwidth(&sorted),
        BandwidthRule::Fixed(h) if h > 0.0 && h.is_finite() => h,
        BandwidthRule::Fixed(h) => {
            return Err(Error::Config(format!("bandwidth must be positive, got {h}")))
        }
    };
    if !(floor > 0.0) {
        return Err(Error::Config(format!("density floor must be positive, got {floor}")));
    }
    Ok(KdeModel {
        samples: sorted,
        bandwidth,
        density_floor: floor,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    if sorted.len() < 2 {
        return MIN_BANDWIDTH;
    }
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let spread = sd.min(iqr / 1.34);
    (0.9 * spread * n.powf(-0.2)).max(MIN_BANDWIDTH)
}

impl KdeModel {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Kernel average without the floor.
    pub fn raw_density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let reach = CUTOFF_BANDWIDTHS * h;
        let start = self.samples.partition_point(|s| *s < x - reach);
        let end = self.samples.partition_point(|s| *s <= x + reach);
        let sum: f64 = self.samples[start..end]
            .iter()
            .map(|s| {
                let u = (x - s) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        sum * INV_SQRT_2PI / (self.samples.len() as f64 * h)
    }

    /// `max(floor, (1 / (n h)) * sum_k phi((x - s_k) / h))`
    pub fn density(&self, x: f64) -> f64 {
        self.raw_density(x).max(self.density_floor)
    }

    /// Integration bounds covering essentially all mass.
    pub fn support(&self) -> (f64, f64) {
        let pad = 5.0 * self.bandwidth;
        (self.samples[0] - pad, self.samples[self.samples.len() - 1] + pad)
    }
}

pub fn kde_density(m: &KdeModel, delta: f64) -> f64 {
    m.density(delta)
}

/// Composite trapezoid rule.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = 0.5 * (f(a) + f(b));
    for k in 1..n {
        acc += f(a + k as f64 * h);
    }
    acc * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn direct_sum(samples: &[f64], h: f64, x: f64) -> f64 {
        let n = samples.len() as f64;
        samples
            .iter()
            .map(|s| (-(x - s).powi(2) / (2.0 * h * h)).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .sum::<f64>()
            / (n * h)
    }

    #[test]
    fn standard_normal_peak() {
        let m = fit_kde(&[0.0], BandwidthRule::Fixed(1.0)).unwrap();
        assert!((m.density(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_evaluation() {
        let samples = [-0.3, 0.1, 0.45];
        let m = fit_kde(&samples, BandwidthRule::Fixed(0.2)).unwrap();
        for x in [-0.5, 0.0, 0.123, 0.7] {
            assert!((m.density(x) - direct_sum(&samples, 0.2, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_samples_give_symmetric_density() {
        let m = fit_kde(&[-1.0, 1.0], BandwidthRule::Silverman).unwrap();
        for x in [0.1, 0.5, 1.3, 2.0] {
            assert_eq!(m.density(-x), m.density(x));
        }
    }

    #[test]
    fn far_queries_hit_the_floor() {
        let m = fit_kde(&[0.0, 0.1], BandwidthRule::Fixed(0.05)).unwrap();
        assert_eq!(m.density(50.0), DEFAULT_DENSITY_FLOOR);
    }

    #[test]
    fn constant_samples_use_floor_bandwidth() {
        let m = fit_kde(&[0.25; 20], BandwidthRule::Silverman).unwrap();
        assert_eq!(m.bandwidth, MIN_BANDWIDTH);
        assert!(m.density(0.25) > m.density(0.2501));
        assert!(m.density(0.25) > m.density(0.2499));
        assert!(fit_kde(&[], BandwidthRule::Silverman).is_err());
    }

    #[test]
    fn silverman_value() {
        // sd of 1..=5 is sqrt(2.5); IQR = 2 -> 2 / 1.34 < sqrt(2.5)
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        let expected = 0.9 * (2.0 / 1.34) * 5f64.powf(-0.2);
        assert!((silverman_bandwidth(&s) - expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn integrates_to_one(samples in prop::collection::vec(-1.0f64..1.0, 1..60)) {
            let m = fit_kde(&samples, BandwidthRule::Silverman).unwrap();
            let (a, b) = m.support();
            let n = (((b - a) / m.bandwidth) * 40.0).ceil() as usize;
            let mass = trapezoid(|x| m.density(x), a, b, n.max(1000));
            prop_assert!((mass - 1.0).abs() < 1e-3, "mass {}", mass);
            prop_assert!(m.density(3.0) >= m.density_floor);
        }
    }
}
