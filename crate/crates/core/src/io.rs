//! CSV readers/writers for features, annotations and label sequences, and the
//! canonical JSON encoding used for bundles and reports.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::model::{
    AnnotationSet, AolSequence, AolState, FeatureMatrix, RolSequence, UtteranceFeatures,
    ValueRange,
};

const UTTERANCE_ID_COLUMN: &str = "utterance_id";
const PERIOD_PREFIX: &str = "#period_s=";

fn file_stem_id(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    // strip every extension: "u01.aol.csv" -> "u01"
    name.split('.').next().unwrap_or_default().to_string()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_cell(path: &Path, row: usize, column: usize, cell: &str) -> Result<f64> {
    let parse_err = |message: String| Error::Parse {
        path: path.display().to_string(),
        row,
        column,
        message,
    };
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_err(format!("non-numeric value {cell:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(format!("non-finite value {cell:?}")));
    }
    Ok(v)
}

/// Parses a numeric CSV body (header already consumed by the reader). Rows and
/// columns in errors are 1-based file line / column numbers.
fn numeric_rows(
    path: &Path,
    reader: &mut csv::Reader<&[u8]>,
    skip_columns: usize,
    width: usize,
    first_line: usize,
) -> Result<(Vec<f64>, usize, Option<String>)> {
    let mut data = Vec::new();
    let mut n_rows = 0;
    let mut first_id = None;
    for (i, record) in reader.records().enumerate() {
        let line = first_line + i;
        let record = record.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: line,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: line,
                column: record.len().min(width) + 1,
                message: format!("ragged row: {} cells, expected {width}", record.len()),
            });
        }
        if skip_columns > 0 && first_id.is_none() {
            first_id = Some(record[0].trim().to_string());
        }
        for (j, cell) in record.iter().enumerate().skip(skip_columns) {
            data.push(parse_cell(path, line, j + 1, cell)?);
        }
        n_rows += 1;
    }
    Ok((data, n_rows, first_id))
}

fn csv_reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes())
}

/// Reads a feature CSV: a header naming the feature columns (optionally led by
/// an `utterance_id` column), then one row per frame.
pub fn parse_features(path: &Path) -> Result<UtteranceFeatures> {
    let body = read_to_string(path)?;
    parse_features_str(path, &body)
}

pub fn parse_features_str(path: &Path, body: &str) -> Result<UtteranceFeatures> {
    let mut reader = csv_reader(body);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::format(path, "empty file"));
    }
    let skip = usize::from(&headers[0] == UTTERANCE_ID_COLUMN);
    let width = headers.len();
    let dim = width - skip;
    if dim == 0 {
        return Err(Error::format(path, "no feature columns"));
    }
    let (data, n_rows, id) = numeric_rows(path, &mut reader, skip, width, 2)?;
    if n_rows == 0 {
        return Err(Error::format(path, "no data rows"));
    }
    let frames = FeatureMatrix::new(n_rows, dim, data)?;
    let id = id
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| file_stem_id(path));
    UtteranceFeatures::new(id, frames)
}

/// Reads an annotation CSV: a `#period_s=<float>` line, a header with one
/// column per rater, then one row per sample.
pub fn parse_annotations(path: &Path, value_range: ValueRange) -> Result<AnnotationSet> {
    let body = read_to_string(path)?;
    parse_annotations_str(path, &body, value_range)
}

pub fn parse_annotations_str(
    path: &Path,
    body: &str,
    value_range: ValueRange,
) -> Result<AnnotationSet> {
    let (meta, rest) = body.split_once('\n').unwrap_or((body, ""));
    let period = meta
        .trim()
        .strip_prefix(PERIOD_PREFIX)
        .ok_or_else(|| Error::format(path, format!("first line must be {PERIOD_PREFIX}<seconds>")))?;
    let period_s = parse_cell(path, 1, 1, period)?;
    let mut reader = csv_reader(rest);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let width = headers.len();
    if width == 0 || (width == 1 && headers[0].is_empty()) {
        return Err(Error::format(path, "missing annotator header"));
    }
    let (data, n_rows, _) = numeric_rows(path, &mut reader, 0, width, 3)?;
    if n_rows == 0 {
        return Err(Error::format(path, "no annotation samples"));
    }
    for (k, v) in data.iter().enumerate() {
        if !value_range.contains(*v) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: 3 + k / width,
                column: 1 + k % width,
                message: format!(
                    "value {v} outside [{}, {}]",
                    value_range.min, value_range.max
                ),
            });
        }
    }
    let annotators = (0..width)
        .map(|r| (0..n_rows).map(|t| data[t * width + r]).collect())
        .collect();
    AnnotationSet::new(file_stem_id(path), period_s, annotators, value_range)
}

/// 17 significant digits in scientific notation. Parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        // collapse -0.0
        return "0.0000000000000000e0".to_string();
    }
    format!("{v:.16e}")
}

pub fn write_features(path: &Path, features: &UtteranceFeatures) -> Result<()> {
    let mut out = String::new();
    out.push_str(UTTERANCE_ID_COLUMN);
    for j in 0..features.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for row in features.frames.rows() {
        out.push_str(&features.utterance_id);
        for v in row {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn write_annotations(path: &Path, ann: &AnnotationSet) -> Result<()> {
    let mut out = format!("{PERIOD_PREFIX}{}\n", format_f64(ann.period_s));
    let header: Vec<String> = (0..ann.n_annotators()).map(|r| format!("rater{r}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for t in 0..ann.len() {
        let row: Vec<String> = ann.annotators.iter().map(|a| format_f64(a[t])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn write_aol(path: &Path, seq: &AolSequence) -> Result<()> {
    let mut out = String::from("frame,aol\n");
    for (t, s) in seq.labels.iter().enumerate() {
        out.push_str(&format!("{t},{}\n", s.code()));
    }
    write_file(path, out.as_bytes())
}

pub fn read_aol(path: &Path) -> Result<AolSequence> {
    let body = read_to_string(path)?;
    let mut reader = csv_reader(&body);
    let (data, n_rows, _) = numeric_rows(path, &mut reader, 0, 2, 2)?;
    let mut labels = Vec::with_capacity(n_rows);
    for t in 0..n_rows {
        let code = data[2 * t + 1];
        let state = (code.fract() == 0.0 && code >= 0.0)
            .then(|| AolState::from_code(code as usize))
            .flatten()
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                row: t + 2,
                column: 2,
                message: format!("invalid AOL code {code}"),
            })?;
        labels.push(state);
    }
    Ok(AolSequence::new(file_stem_id(path), labels))
}

pub fn write_rol(path: &Path, seq: &RolSequence) -> Result<()> {
    let mut out = String::from("frame,rank,normalized\n");
    for (t, (r, n)) in seq.ranks.iter().zip(&seq.normalized).enumerate() {
        out.push_str(&format!("{t},{},{}\n", format_f64(*r), format_f64(*n)));
    }
    write_file(path, out.as_bytes())
}

pub fn read_rol(path: &Path) -> Result<RolSequence> {
    let body = read_to_string(path)?;
    let mut reader = csv_reader(&body);
    let (data, n_rows, _) = numeric_rows(path, &mut reader, 0, 3, 2)?;
    let ranks = (0..n_rows).map(|t| data[3 * t + 1]).collect();
    Ok(RolSequence::from_ranks(file_stem_id(path), ranks))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Wraps a serde_json formatter so that floats are always written with 17
/// significant digits.
struct FixedFloat<F>(F);

macro_rules! delegate {
    ($($name:ident),*) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.$name(w)
            }
        )*
    };
}

impl<F: Formatter> Formatter for FixedFloat<F> {
    delegate!(begin_array, begin_object, begin_object_value, end_object_value, end_array_value);

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            w.write_all(format_f64(value).as_bytes())
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }
}

/// Canonical compact JSON: struct field order, fixed float format.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloat(CompactFormatter));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

/// Canonical indented JSON for human-facing reports.
pub fn to_canonical_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, FixedFloat(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn p(name: &str) -> PathBuf {
        PathBuf::from(name)
    }

    #[test]
    fn parses_small_feature_file() {
        let f = parse_features_str(&p("u1.csv"), "a,b\n1,2\n3,4\n5,6\n").unwrap();
        assert_eq!((f.n_frames(), f.dim()), (3, 2));
        assert_eq!(f.frames.row(2), &[5.0, 6.0]);
        assert_eq!(f.utterance_id, "u1");
    }

    #[test]
    fn feature_file_with_id_column() {
        let f = parse_features_str(&p("x.csv"), "utterance_id,a\ndev_3,1.5\ndev_3,2\n").unwrap();
        assert_eq!(f.utterance_id, "dev_3");
        assert_eq!(f.dim(), 1);
    }

    #[test]
    fn nan_cell_reports_location() {
        let err = parse_features_str(&p("u.csv"), "a,b\n1,2\n3,NaN\n").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_and_empty_feature_files_fail() {
        assert!(matches!(
            parse_features_str(&p("u.csv"), "a,b\n1,2\n3\n"),
            Err(Error::Parse { row: 3, .. })
        ));
        assert!(parse_features_str(&p("u.csv"), "").is_err());
        assert!(parse_features_str(&p("u.csv"), "a,b\n").is_err());
        assert!(matches!(
            parse_features_str(&p("u.csv"), "a,b\n1,x\n"),
            Err(Error::Parse { row: 2, column: 2, .. })
        ));
    }

    #[test]
    fn wide_feature_file() {
        let header: Vec<String> = (0..88).map(|j| format!("g{j}")).collect();
        let row: Vec<String> = (0..88).map(|j| format!("{}", j as f64 * 0.5)).collect();
        let body = format!("{}\n{}\n{}\n", header.join(","), row.join(","), row.join(","));
        let f = parse_features_str(&p("u.csv"), &body).unwrap();
        assert_eq!(f.dim(), 88);
    }

    #[test]
    fn annotations_six_raters() {
        let range = ValueRange::new(-1.0, 1.0).unwrap();
        let body = "#period_s=0.04\nr0,r1,r2,r3,r4,r5\n0.1,0.2,0.3,-0.1,-0.2,1\n0,0,0,0,0,-1\n";
        let a = parse_annotations_str(&p("u.csv"), body, range).unwrap();
        assert_eq!(a.n_annotators(), 6);
        assert_eq!(a.len(), 2);
        assert_eq!(a.period_s, 0.04);
        assert_eq!(a.annotators[5], vec![1.0, -1.0]);
    }

    #[test]
    fn annotation_range_and_shape_errors() {
        let range = ValueRange::new(-1.0, 1.0).unwrap();
        let err = parse_annotations_str(&p("u.csv"), "#period_s=0.04\nr0\n0.5\n1.2\n", range)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { row: 4, column: 1, .. }));
        assert!(parse_annotations_str(&p("u.csv"), "#period_s=0.04\nr0,r1\n0.5,0.1\n0.2\n", range)
            .is_err());
        assert!(parse_annotations_str(&p("u.csv"), "r0\n0.5\n", range).is_err());
        let single =
            parse_annotations_str(&p("u.csv"), "#period_s=0.04\nr0\n0.5\n0.25\n", range).unwrap();
        assert_eq!(single.n_annotators(), 1);
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 123456.789, -0.0] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), if v == 0.0 { 0.0 } else { v });
        }
    }

    #[test]
    fn canonical_json_is_stable() {
        #[derive(Serialize)]
        struct S {
            b: f64,
            a: Vec<f64>,
        }
        let s = S {
            b: 0.1,
            a: vec![1.0, 2.5],
        };
        let bytes = to_canonical_json(&s).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "{\"b\":1.0000000000000001e-1,\"a\":[1.0000000000000000e0,2.5000000000000000e0]}\n"
        );
        let v: serde_json::Value = serde_json::from_slice(&to_canonical_json(&s).unwrap()).unwrap();
        assert_eq!(v["b"].as_f64(), Some(0.1));
    }
}
