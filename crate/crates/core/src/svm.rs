//! Linear squared-hinge SVM trained by primal Newton, plus Platt calibration.
//!
//! The binary objective is
//!
//! ```text
//! f(w, b) = 1/2 |w|^2 + c * sum_i max(0, 1 - y_i (w . x_i + b))^2
//! ```
//!
//! over z-scored inputs; the bias is not regularized. The pairwise (ranking)
//! objective in [`PairwiseObjective`] has the same form over pair differences
//! and no bias.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;

pub const DEFAULT_C: f64 = 1e-4;

/// Per-dimension z-scoring fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Dimensions with zero variance get std = 1.
    pub fn fit(x: &FeatureMatrix) -> Self {
        let d = x.n_cols();
        let n = x.n_rows().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in x.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.n_cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.n_cols(),
            });
        }
        let mut out = FeatureMatrix::zeros(x.n_rows(), x.n_cols());
        for i in 0..x.n_rows() {
            self.apply_row(x.row(i), out.row_mut(i));
        }
        Ok(out)
    }
}

/// Hyperplane in standardized feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardization: Standardization,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `w . standardize(x) + bias`
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(self.decision_value_unchecked(x))
    }

    pub(crate) fn decision_value_unchecked(&self, x: &[f64]) -> f64 {
        let st = &self.standardization;
        let mut acc = self.bias;
        for i in 0..x.len() {
            acc += self.weights[i] * (x[i] - st.mean[i]) / st.std[i];
        }
        acc
    }

    pub fn decision_values(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.n_cols(),
            });
        }
        Ok(x.rows().map(|r| self.decision_value_unchecked(r)).collect())
    }
}

/// A piecewise-quadratic convex objective solvable by [`newton_minimize`].
pub trait SquaredHingeObjective {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;
    /// Generalized Hessian at `w` (the active set is taken at `w`).
    fn hessian(&self, w: &[f64]) -> DMatrix<f64>;
}

/// Binary squared hinge over standardized rows; parameters are
/// `[w_0, ..., w_{d-1}, b]`.
pub struct BinaryObjective<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    c: f64,
}

impl<'a> BinaryObjective<'a> {
    pub fn new(x: &'a FeatureMatrix, y: &'a [f64], c: f64) -> Self {
        Self { x, y, c }
    }

    fn margin_slack(&self, w: &[f64], i: usize) -> f64 {
        let d = self.x.n_cols();
        let row = self.x.row(i);
        let score: f64 = row.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>() + w[d];
        1.0 - self.y[i] * score
    }
}

impl SquaredHingeObjective for BinaryObjective<'_> {
    fn dim(&self) -> usize {
        self.x.n_cols() + 1
    }

    fn value(&self, w: &[f64]) -> f64 {
        let d = self.x.n_cols();
        let reg: f64 = w[..d].iter().map(|v| v * v).sum::<f64>() * 0.5;
        let loss: f64 = (0..self.x.n_rows())
            .map(|i| self.margin_slack(w, i).max(0.0).powi(2))
            .sum();
        reg + self.c * loss
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let d = self.x.n_cols();
        let mut g = w.to_vec();
        g[d] = 0.0;
        for i in 0..self.x.n_rows() {
            let s = self.margin_slack(w, i);
            if s > 0.0 {
                let coef = -2.0 * self.c * s * self.y[i];
                for (gj, xj) in g.iter_mut().zip(self.x.row(i)) {
                    *gj += coef * xj;
                }
                g[d] += coef;
            }
        }
        g
    }

    fn hessian(&self, w: &[f64]) -> DMatrix<f64> {
        let d = self.x.n_cols();
        let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
        let mut aug = vec![1.0; d + 1];
        for i in 0..self.x.n_rows() {
            if self.margin_slack(w, i) > 0.0 {
                aug[..d].copy_from_slice(self.x.row(i));
                add_outer(&mut h, &aug, &aug, 2.0 * self.c);
            }
        }
        for j in 0..d {
            h[(j, j)] += 1.0;
        }
        h
    }
}

/// Pairwise squared hinge: for each pair (p, o) the loss is
/// `max(0, 1 - w . (x_p - x_o))^2`. Rows are standardized frames; pair
/// indices address rows of `x`.
pub struct PairwiseObjective<'a> {
    x: &'a FeatureMatrix,
    pairs: &'a [(usize, usize)],
    c: f64,
}

impl<'a> PairwiseObjective<'a> {
    pub fn new(x: &'a FeatureMatrix, pairs: &'a [(usize, usize)], c: f64) -> Self {
        Self { x, pairs, c }
    }

    fn scores(&self, w: &[f64]) -> Vec<f64> {
        self.x
            .rows()
            .map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl SquaredHingeObjective for PairwiseObjective<'_> {
    fn dim(&self) -> usize {
        self.x.n_cols()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let s = self.scores(w);
        let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * 0.5;
        let loss: f64 = self
            .pairs
            .iter()
            .map(|&(p, o)| (1.0 - (s[p] - s[o])).max(0.0).powi(2))
            .sum();
        reg + self.c * loss
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let s = self.scores(w);
        // accumulate per-row coefficients, then one pass over rows
        let mut coef = vec![0.0; self.x.n_rows()];
        for &(p, o) in self.pairs {
            let slack = 1.0 - (s[p] - s[o]);
            if slack > 0.0 {
                coef[p] -= 2.0 * self.c * slack;
                coef[o] += 2.0 * self.c * slack;
            }
        }
        let mut g = w.to_vec();
        for (row, k) in self.x.rows().zip(&coef) {
            if *k != 0.0 {
                for (gj, xj) in g.iter_mut().zip(row) {
                    *gj += k * xj;
                }
            }
        }
        g
    }

    fn hessian(&self, w: &[f64]) -> DMatrix<f64> {
        // sum over active pairs of (x_p - x_o)(x_p - x_o)^T = X^T L X with L
        // the Laplacian of the active-pair graph.
        let d = self.x.n_cols();
        let s = self.scores(w);
        let mut lx = FeatureMatrix::zeros(self.x.n_rows(), d);
        for &(p, o) in self.pairs {
            if 1.0 - (s[p] - s[o]) > 0.0 {
                for j in 0..d {
                    let diff = self.x.row(p)[j] - self.x.row(o)[j];
                    lx.row_mut(p)[j] += diff;
                    lx.row_mut(o)[j] -= diff;
                }
            }
        }
        let mut h = DMatrix::<f64>::zeros(d, d);
        for (xr, lr) in self.x.rows().zip(lx.rows()) {
            if lr.iter().any(|v| *v != 0.0) {
                add_outer(&mut h, xr, lr, 2.0 * self.c);
            }
        }
        // symmetrize away rounding
        let h = (&h + h.transpose()) * 0.5;
        h + DMatrix::<f64>::identity(d, d)
    }
}

fn add_outer(h: &mut DMatrix<f64>, a: &[f64], b: &[f64], scale: f64) {
    for (j, aj) in a.iter().enumerate() {
        if *aj == 0.0 {
            continue;
        }
        let s = scale * aj;
        for (k, bk) in b.iter().enumerate() {
            h[(j, k)] += s * bk;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            gradient_tolerance: 1e-6,
            max_halvings: 30,
        }
    }
}

/// Objective and gradient norm at every accepted iterate, starting from zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonTrace {
    pub objective: Vec<f64>,
    pub gradient_norm: Vec<f64>,
    pub converged: bool,
}

impl NewtonTrace {
    pub fn newton_steps(&self) -> usize {
        self.objective.len().saturating_sub(1)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton from the origin. A step is accepted only if it does not
/// increase the objective, so the trace is non-increasing.
pub fn newton_minimize(
    obj: &dyn SquaredHingeObjective,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, NewtonTrace)> {
    let n = obj.dim();
    let mut w = vec![0.0; n];
    let mut f = obj.value(&w);
    let mut trace = NewtonTrace::default();
    for iter in 0..=opts.max_iterations {
        let g = obj.gradient(&w);
        let gn = norm(&g);
        trace.objective.push(f);
        trace.gradient_norm.push(gn);
        if gn <= opts.gradient_tolerance {
            trace.converged = true;
            break;
        }
        if iter == opts.max_iterations {
            break;
        }
        let h = obj.hessian(&w);
        let step = solve_spd(h, &g)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let fc = obj.value(&cand);
            if fc <= f {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                let stalled = fc == f;
                w = cand;
                f = fc;
                if stalled {
                    let g = obj.gradient(&w);
                    trace.objective.push(f);
                    trace.gradient_norm.push(norm(&g));
                    trace.converged = true;
                    break;
                }
            }
            None => {
                trace.converged = true;
                break;
            }
        }
    }
    Ok((w, trace))
}

/// Solves H s = g for symmetric positive (semi)definite H, adding a small
/// ridge when the factorization fails.
fn solve_spd(h: DMatrix<f64>, g: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(g);
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut hr = h.clone();
        for j in 0..hr.nrows() {
            hr[(j, j)] += ridge;
        }
        if let Some(ch) = hr.cholesky() {
            return Ok(ch.solve(&rhs).iter().copied().collect());
        }
        ridge = if ridge == 0.0 { 1e-10 } else { ridge * 100.0 };
    }
    Err(Error::Numerical("Newton system is not positive definite".into()))
}

fn check_binary_labels(labels: &[i8]) -> Result<(usize, usize)> {
    let mut pos = 0;
    let mut neg = 0;
    for &l in labels {
        match l {
            1 => pos += 1,
            -1 => neg += 1,
            other => {
                return Err(Error::InvalidInput(format!(
                    "binary labels must be +1 or -1, got {other}"
                )))
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!(
            "{pos} positive and {neg} negative examples"
        )));
    }
    Ok((pos, neg))
}

/// Trains a binary linear SVM; labels are +1 / -1.
pub fn train_binary(features: &FeatureMatrix, labels: &[i8], c: f64) -> Result<LinearModel> {
    train_binary_traced(features, labels, c, &NewtonOptions::default()).map(|(m, _)| m)
}

pub fn train_binary_traced(
    features: &FeatureMatrix,
    labels: &[i8],
    c: f64,
    opts: &NewtonOptions,
) -> Result<(LinearModel, NewtonTrace)> {
    if features.n_rows() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} feature rows, {} labels",
            features.n_rows(),
            labels.len()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    check_binary_labels(labels)?;
    let standardization = Standardization::fit(features);
    let x = standardization.apply(features)?;
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let obj = BinaryObjective::new(&x, &y, c);
    let (w, trace) = newton_minimize(&obj, opts)?;
    let d = features.n_cols();
    Ok((
        LinearModel {
            weights: w[..d].to_vec(),
            bias: w[d],
            standardization,
        },
        trace,
    ))
}

/// Sigmoid map from decision value to the positive-class probability,
/// `P = 1 / (1 + exp(a y + b))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattCalibration {
    pub a: f64,
    pub b: f64,
}

pub const PROBABILITY_CLAMP: f64 = 1e-12;

impl PlattCalibration {
    pub fn probability(&self, y: f64) -> f64 {
        platt_probability(self, y)
    }
}

pub fn platt_probability(cal: &PlattCalibration, y: f64) -> f64 {
    let z = cal.a * y + cal.b;
    let p = if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    };
    p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
}

/// Fits (a, b) by Newton's method on the cross-entropy against Platt's
/// smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2).
pub fn fit_platt(scores: &[f64], labels: &[i8]) -> Result<PlattCalibration> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (n_pos, n_neg) = check_binary_labels(labels)?;
    let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo = 1.0 / (n_neg as f64 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l > 0 { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(f, t)| {
                let z = f * a + b;
                // t*z + log(1 + exp(-z)), evaluated stably
                if z >= 0.0 {
                    t * z + (-z).exp().ln_1p()
                } else {
                    (t - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = objective(a, b);
    const SIGMA: f64 = 1e-12;
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (f, t) in scores.iter().zip(&targets) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-10 && g2.abs() < 1e-10 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numerical("Platt fit diverged".into()));
    }
    Ok(PlattCalibration { a, b })
}
