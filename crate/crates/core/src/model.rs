//! Domain types shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute ordinal level. The derived ordering is the ordinal scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum AolState {
    Low = 0,
    Medium = 1,
    High = 2,
}

impl AolState {
    pub const ALL: [AolState; 3] = [AolState::Low, AolState::Medium, AolState::High];
    pub const COUNT: usize = 3;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// The state at the opposite end of the scale (Low <-> High).
    pub fn mirrored(self) -> Self {
        match self {
            AolState::Low => AolState::High,
            AolState::Medium => AolState::Medium,
            AolState::High => AolState::Low,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            AolState::Low => "L",
            AolState::Medium => "M",
            AolState::High => "H",
        }
    }
}

impl From<AolState> for u8 {
    fn from(s: AolState) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for AolState {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        AolState::from_code(v as usize).ok_or_else(|| format!("invalid AOL code {v}"))
    }
}

impl fmt::Display for AolState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Dense row-major matrix of frame features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::InvalidInput(format!(
                "matrix data has {} entries, expected {n_rows}x{n_cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature at row {}, column {}",
                pos / n_cols.max(1),
                pos % n_cols.max(1)
            )));
        }
        Ok(Self { n_rows, n_cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n_cols) {
            return Err(Error::InvalidInput(format!(
                "ragged matrix: row {bad} has {} columns, expected {n_cols}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), n_cols, rows.concat())
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Keeps the first `n` rows.
    pub fn truncate_rows(&mut self, n: usize) {
        if n < self.n_rows {
            self.n_rows = n;
            self.data.truncate(n * self.n_cols);
        }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack<'a>(parts: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut n_cols = None;
        let mut n_rows = 0;
        let mut data = Vec::new();
        for m in parts {
            match n_cols {
                None => n_cols = Some(m.n_cols),
                Some(d) if d != m.n_cols => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: m.n_cols,
                    })
                }
                _ => {}
            }
            n_rows += m.n_rows;
            data.extend_from_slice(&m.data);
        }
        Ok(Self {
            n_rows,
            n_cols: n_cols.unwrap_or(0),
            data,
        })
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n_rows: indices.len(),
            n_cols: self.n_cols,
            data,
        }
    }
}

/// Per-frame (or per-turn) features of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceFeatures {
    pub utterance_id: String,
    pub frames: FeatureMatrix,
    /// Absent for turn-level data.
    pub frame_period_s: Option<f64>,
}

impl UtteranceFeatures {
    pub fn new(utterance_id: impl Into<String>, frames: FeatureMatrix) -> Result<Self> {
        if frames.n_rows() == 0 || frames.n_cols() == 0 {
            return Err(Error::InvalidInput(
                "utterance features need at least one frame and one dimension".into(),
            ));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            frames,
            frame_period_s: None,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.n_rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.n_cols()
    }
}

/// Closed interval of legal annotation values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidInput(format!("invalid value range [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Interval annotation traces from several raters for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet {
    pub utterance_id: String,
    pub period_s: f64,
    pub annotators: Vec<Vec<f64>>,
    pub value_range: ValueRange,
}

impl AnnotationSet {
    pub fn new(
        utterance_id: impl Into<String>,
        period_s: f64,
        annotators: Vec<Vec<f64>>,
        value_range: ValueRange,
    ) -> Result<Self> {
        if annotators.is_empty() {
            return Err(Error::InvalidInput("annotation set needs at least one rater".into()));
        }
        if !(period_s.is_finite() && period_s > 0.0) {
            return Err(Error::InvalidInput(format!("invalid sampling period {period_s}")));
        }
        let len = annotators[0].len();
        if annotators.iter().any(|a| a.len() != len) {
            return Err(Error::LengthMismatch(
                "annotator series have unequal lengths".into(),
            ));
        }
        for (r, series) in annotators.iter().enumerate() {
            if let Some(t) = series.iter().position(|v| !value_range.contains(*v)) {
                return Err(Error::InvalidInput(format!(
                    "annotator {r}, sample {t}: value {} outside [{}, {}]",
                    series[t], value_range.min, value_range.max
                )));
            }
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            period_s,
            annotators,
            value_range,
        })
    }

    pub fn n_annotators(&self) -> usize {
        self.annotators.len()
    }

    pub fn len(&self) -> usize {
        self.annotators[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AolSequence {
    pub utterance_id: String,
    pub labels: Vec<AolState>,
}

impl AolSequence {
    pub fn new(utterance_id: impl Into<String>, labels: Vec<AolState>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.labels {
            c[s.code()] += 1;
        }
        c
    }
}

/// Ranks of the frames of one utterance (1 = lowest), ties sharing their
/// average rank, together with the length-normalized form in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RolSequence {
    pub utterance_id: String,
    pub ranks: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl RolSequence {
    pub fn from_ranks(utterance_id: impl Into<String>, ranks: Vec<f64>) -> Self {
        let normalized = normalize_ranks(&ranks);
        Self {
            utterance_id: utterance_id.into(),
            ranks,
            normalized,
        }
    }

    /// Tied-average ranking of arbitrary values (ascending).
    pub fn from_values(utterance_id: impl Into<String>, values: &[f64]) -> Self {
        Self::from_ranks(utterance_id, average_ranks(values))
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

/// (rank - 1) / (T - 1), or 0.5 for a single frame.
pub fn normalize_ranks(ranks: &[f64]) -> Vec<f64> {
    let t = ranks.len();
    if t == 1 {
        return vec![0.5];
    }
    let denom = (t - 1) as f64;
    ranks.iter().map(|r| (r - 1.0) / denom).collect()
}

/// Ascending 1-based ranks; values that compare exactly equal share the mean
/// of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aol_order_and_codes() {
        assert!(AolState::Low < AolState::Medium && AolState::Medium < AolState::High);
        for s in AolState::ALL {
            assert_eq!(AolState::from_code(s.code()), Some(s));
        }
        assert_eq!(AolState::from_code(3), None);
        assert_eq!(AolState::High.mirrored(), AolState::Low);
    }

    #[test]
    fn average_ranks_handles_ties() {
        assert_eq!(average_ranks(&[0.1, 0.9, 0.5]), vec![1.0, 3.0, 2.0]);
        assert_eq!(average_ranks(&[0.5, 0.5, 0.1]), vec![2.5, 2.5, 1.0]);
        assert_eq!(average_ranks(&[2.0, 2.0, 2.0, 2.0]), vec![2.5; 4]);
        let r = average_ranks(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]);
        let n = r.len() as f64;
        assert_eq!(r.iter().sum::<f64>(), n * (n + 1.0) / 2.0);
    }

    #[test]
    fn singleton_normalizes_to_half() {
        let rol = RolSequence::from_ranks("u", vec![1.0]);
        assert_eq!(rol.normalized, vec![0.5]);
        let rol = RolSequence::from_ranks("u", vec![1.0, 3.0, 2.0]);
        assert_eq!(rol.normalized, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn annotation_set_rejects_out_of_range() {
        let range = ValueRange::new(-1.0, 1.0).unwrap();
        let err = AnnotationSet::new("u", 0.04, vec![vec![0.0, 1.2]], range).unwrap_err();
        assert!(err.to_string().contains("outside"));
        let err =
            AnnotationSet::new("u", 0.04, vec![vec![0.0, 0.1], vec![0.0]], range).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch(_)));
    }

    #[test]
    fn feature_matrix_rejects_non_finite() {
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        let m = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert!(FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
