//! End-to-end experiment plumbing: labeling a corpus, training a bundle,
//! decoding with each system variant, and scoring folds.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::{ModelBundle, Provenance, Variant, BUNDLE_FORMAT_VERSION};
use crate::decoder::{divide_by_priors, viterbi_decode, StateLattice};
use crate::error::{Error, Result};
use crate::io::{parse_annotations, parse_features, to_canonical_json};
use crate::labels::{convert_smoothed, preprocess_annotations};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::metrics::{kendall_tau_with, precision_at_k, ConfusionMatrix, TauVariant};
use crate::model::{AnnotationSet, AolSequence, AolState, FeatureMatrix, RolSequence, UtteranceFeatures};
use crate::omsvm::{train_omsvm, Direction, OmsvmOptions, StatePosteriors};
use crate::ranksvm::{build_pairs, train_ranksvm, DEFAULT_PAIR_CAP};
use crate::svm::{Standardization, DEFAULT_C};
use crate::transition::{fit_transition_model, rank_deltas, TransitionOptions};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    /// Variant trained by `train` and used by `decode`.
    pub variant: Variant,
    /// Variants compared by `xval` and train/test evaluation.
    pub variants: Vec<Variant>,
    pub seed: u64,
    pub omsvm_c: f64,
    pub rank_c: f64,
    pub pair_cap: usize,
    pub calibration_folds: usize,
    pub direction: Direction,
    pub transition: TransitionOptions,
    pub divide_by_prior: bool,
    pub tau_variant: TauVariant,
    pub precision_k: Vec<f64>,
    pub train_splits: Vec<String>,
    pub test_splits: Vec<String>,
    /// Fold tags for `xval`; all split tags of the manifest when absent.
    pub folds: Option<Vec<String>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            variant: Variant::DommRs,
            variants: Variant::ALL.to_vec(),
            seed: 0,
            omsvm_c: DEFAULT_C,
            rank_c: DEFAULT_C,
            pair_cap: DEFAULT_PAIR_CAP,
            calibration_folds: 3,
            direction: Direction::Forward,
            transition: TransitionOptions::default(),
            divide_by_prior: false,
            tau_variant: TauVariant::A,
            precision_k: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            train_splits: vec!["train".into()],
            test_splits: vec!["test".into()],
            folds: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("omsvm_c", self.omsvm_c), ("rank_c", self.rank_c)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {c}")));
            }
        }
        if self.pair_cap == 0 {
            return Err(Error::Config("pair_cap must be at least 1".into()));
        }
        if let Some(k) = self.precision_k.iter().find(|k| !(**k > 0.0 && **k <= 50.0)) {
            return Err(Error::Config(format!("precision_k entry {k} not in (0, 50]")));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("variants must not be empty".into()));
        }
        if self.train_splits.iter().any(|s| self.test_splits.contains(s)) {
            return Err(Error::Config("train_splits and test_splits overlap".into()));
        }
        if let Some(f) = &self.folds {
            let mut seen = std::collections::BTreeSet::new();
            if let Some(dup) = f.iter().find(|t| !seen.insert(*t)) {
                return Err(Error::Config(format!("fold tag {dup:?} listed twice")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&to_canonical_json(self)?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent per-task seed from a root seed.
pub fn derive_seed(root: u64, task: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(task + 1);
    rng.next_u64()
}

/// One utterance with features and its consensus labels, on a common frame
/// grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledUtterance {
    pub id: String,
    pub split: String,
    pub features: UtteranceFeatures,
    pub aol: AolSequence,
    pub rol: RolSequence,
}

/// Smooths and converts the annotations, then truncates features and
/// windows to their common length.
pub fn label_utterance(
    manifest: &DatasetManifest,
    id: &str,
    split: &str,
    mut features: UtteranceFeatures,
    annotations: &AnnotationSet,
) -> Result<LabeledUtterance> {
    let mut smoothed = preprocess_annotations(annotations, &manifest.preprocessing)?;
    let n = features.n_frames().min(smoothed.len());
    for a in &mut smoothed.annotators {
        a.truncate(n);
    }
    features.frames.truncate_rows(n);
    features.utterance_id = id.to_string();
    smoothed.utterance_id = id.to_string();
    let labels = convert_smoothed(&smoothed, &manifest.thresholds, manifest.eps_tie)?;
    Ok(LabeledUtterance {
        id: id.to_string(),
        split: split.to_string(),
        features,
        aol: labels.aol,
        rol: labels.rol,
    })
}

pub fn load_annotations(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<AnnotationSet> {
    let mut a = parse_annotations(&manifest.resolve(&entry.annotations), manifest.value_range)?;
    a.utterance_id = entry.id.clone();
    Ok(a)
}

/// Loads and labels the manifest entries accepted by `keep`, in manifest
/// order. All utterances must share one feature dimension.
pub fn load_corpus(
    manifest: &DatasetManifest,
    keep: impl Fn(&ManifestEntry) -> bool,
) -> Result<Vec<LabeledUtterance>> {
    let mut out: Vec<LabeledUtterance> = Vec::new();
    for entry in manifest.utterances.iter().filter(|e| keep(e)) {
        let features = parse_features(&manifest.resolve(&entry.features))?;
        if let Some(first) = out.first() {
            if first.features.dim() != features.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.features.dim(),
                    actual: features.dim(),
                });
            }
        }
        let ann = load_annotations(manifest, entry)?;
        out.push(label_utterance(manifest, &entry.id, &entry.split, features, &ann)?);
    }
    Ok(out)
}

/// Which optional components to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Components {
    pub ranker: bool,
    pub transition: bool,
}

impl Components {
    pub const ALL: Components = Components { ranker: true, transition: true };

    pub fn for_variant(v: Variant) -> Self {
        Self {
            ranker: v.needs_ranker(),
            transition: v.needs_transition(),
        }
    }
}

pub fn train_bundle(
    train: &[LabeledUtterance],
    cfg: &ExperimentConfig,
    seed: u64,
    config_hash: &str,
    components: Components,
) -> Result<ModelBundle> {
    if train.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let features: Vec<UtteranceFeatures> = train.iter().map(|u| u.features.clone()).collect();
    let aols: Vec<AolSequence> = train.iter().map(|u| u.aol.clone()).collect();
    let rols: Vec<RolSequence> = train.iter().map(|u| u.rol.clone()).collect();

    let omsvm = train_omsvm(
        &features,
        &aols,
        &OmsvmOptions {
            c: cfg.omsvm_c,
            direction: cfg.direction,
            calibration_folds: cfg.calibration_folds,
        },
    )?;
    let ranksvm = if components.ranker {
        let pairs = build_pairs(&rols, cfg.pair_cap, seed)?;
        Some(train_ranksvm(&features, &pairs, cfg.rank_c)?)
    } else {
        None
    };
    let transition = if components.transition {
        Some(fit_transition_model(&aols, &rols, &cfg.transition)?)
    } else {
        None
    };

    let mut counts = [0usize; 3];
    for a in &aols {
        for (c, n) in counts.iter_mut().zip(a.counts()) {
            *c += n;
        }
    }
    let total: usize = counts.iter().sum();
    let stacked = FeatureMatrix::vstack(features.iter().map(|f| &f.frames))?;
    Ok(ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        variant: cfg.variant,
        standardization: Standardization::fit(&stacked),
        omsvm,
        ranksvm,
        transition,
        class_priors: counts.map(|c| c as f64 / total as f64),
        divide_by_prior: cfg.divide_by_prior,
        provenance: Provenance {
            config_hash: config_hash.to_string(),
            seed,
            tool_version: TOOL_VERSION.to_string(),
            train_utterances: train.iter().map(|u| u.id.clone()).collect(),
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub aol: AolSequence,
    pub posteriors: StatePosteriors,
    /// Ranks from the ranking model, when one was used.
    pub predicted_rol: Option<RolSequence>,
}

/// Decodes one utterance. `truth_rol` is required for [`Variant::DommGt`].
pub fn decode_utterance(
    bundle: &ModelBundle,
    variant: Variant,
    features: &UtteranceFeatures,
    truth_rol: Option<&RolSequence>,
) -> Result<Decoded> {
    if features.dim() != bundle.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: bundle.feature_dim(),
            actual: features.dim(),
        });
    }
    let mut posteriors = bundle.omsvm.state_posteriors(features)?;
    if bundle.divide_by_prior {
        posteriors = divide_by_priors(&posteriors, &bundle.class_priors)?;
    }
    let id = &features.utterance_id;
    let (rol, predicted_rol) = match variant {
        Variant::OmsvmOnly => {
            let aol = AolSequence::new(id.clone(), posteriors.argmax());
            return Ok(Decoded { aol, posteriors, predicted_rol: None });
        }
        Variant::DommRs => {
            let ranker = bundle
                .ranksvm
                .as_ref()
                .ok_or_else(|| Error::Config("bundle has no ranking model; retrain with domm-rs".into()))?;
            let r = ranker.predict_ranks(features)?;
            (r.clone(), Some(r))
        }
        Variant::DommGt => {
            let r = truth_rol.ok_or_else(|| {
                Error::InvalidInput(format!("utterance {id}: domm-gt needs ground-truth ranks"))
            })?;
            if r.len() != features.n_frames() {
                return Err(Error::LengthMismatch(format!(
                    "utterance {id}: {} ranks for {} frames",
                    r.len(),
                    features.n_frames()
                )));
            }
            (r.clone(), None)
        }
    };
    let tm = bundle
        .transition
        .as_ref()
        .ok_or_else(|| Error::Config(format!("bundle has no transition model for {}", variant.name())))?;
    let lattice = StateLattice::new(posteriors, rank_deltas(&rol, tm.delta_scale))?;
    let mut aol = viterbi_decode(&lattice, tm)?;
    aol.utterance_id = id.clone();
    Ok(Decoded {
        aol,
        posteriors: lattice.posteriors,
        predicted_rol,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std, n: values.len() })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AolScores {
    /// Percent; absent when a ground-truth class is missing.
    pub uar: Option<f64>,
    /// Absent for degenerate marginals.
    pub kappa: Option<f64>,
}

impl AolScores {
    pub fn from_confusion(m: &ConfusionMatrix) -> Self {
        Self {
            uar: m.uar().ok(),
            kappa: m.weighted_kappa().ok(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankScores {
    pub tau: Option<f64>,
    /// Keyed `p@<k>`.
    pub precision: BTreeMap<String, f64>,
}

pub fn precision_key(k: f64) -> String {
    format!("p@{k}")
}

pub fn rank_scores(
    truth: &RolSequence,
    pred: &RolSequence,
    tau_variant: TauVariant,
    ks: &[f64],
) -> Result<RankScores> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(format!(
            "utterance {}: {} truth ranks, {} predicted",
            truth.utterance_id,
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < 2 {
        return Ok(RankScores::default());
    }
    let mut precision = BTreeMap::new();
    for &k in ks {
        precision.insert(precision_key(k), precision_at_k(truth, pred, k)?);
    }
    Ok(RankScores {
        tau: kendall_tau_with(truth, pred, tau_variant).ok(),
        precision,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReport {
    pub id: String,
    pub frames: usize,
    pub variants: BTreeMap<String, AolScores>,
    pub ranking: Option<RankScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: String,
    pub seed: u64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    /// Why the fold produced no scores.
    pub skipped: Option<String>,
    /// Scores over all test frames of the fold pooled together.
    pub variants: BTreeMap<String, AolScores>,
    /// Per-utterance ranking scores averaged over the fold.
    pub ranking: Option<RankScores>,
    pub utterances: Vec<UtteranceReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variants: BTreeMap<String, BTreeMap<String, MeanStd>>,
    pub ranking: BTreeMap<String, MeanStd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn new(config_hash: &str, seed: u64, folds: Vec<FoldReport>) -> Self {
        let aggregate = aggregate(&folds);
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            folds,
            aggregate,
        }
    }

    /// `variant,metric,mean,std,n` rows followed by ranking rows under the
    /// pseudo-variant `ranking`.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("variant,metric,mean,std,n\n");
        let mut push = |v: &str, m: &str, s: &MeanStd| {
            out.push_str(&format!("{v},{m},{:.6},{:.6},{}\n", s.mean, s.std, s.n));
        };
        for (v, metrics) in &self.aggregate.variants {
            for (m, s) in metrics {
                push(v, m, s);
            }
        }
        for (m, s) in &self.aggregate.ranking {
            push("ranking", m, s);
        }
        out
    }
}

fn aggregate(folds: &[FoldReport]) -> Aggregate {
    let mut variants: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut ranking: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for f in folds.iter().filter(|f| f.skipped.is_none()) {
        for (v, s) in &f.variants {
            let e = variants.entry(v.clone()).or_default();
            if let Some(u) = s.uar {
                e.entry("uar".into()).or_default().push(u);
            }
            if let Some(k) = s.kappa {
                e.entry("kappa".into()).or_default().push(k);
            }
        }
        if let Some(r) = &f.ranking {
            if let Some(t) = r.tau {
                ranking.entry("tau".into()).or_default().push(t);
            }
            for (k, p) in &r.precision {
                ranking.entry(k.clone()).or_default().push(*p);
            }
        }
    }
    let summarize = |m: BTreeMap<String, Vec<f64>>| {
        m.into_iter()
            .filter_map(|(k, v)| MeanStd::of(&v).map(|s| (k, s)))
            .collect::<BTreeMap<_, _>>()
    };
    Aggregate {
        variants: variants.into_iter().map(|(k, m)| (k, summarize(m))).collect(),
        ranking: summarize(ranking),
    }
}

/// Per-variant AOL scores, ranking scores and per-utterance detail.
pub type Scored = (BTreeMap<String, AolScores>, Option<RankScores>, Vec<UtteranceReport>);

/// Scores paired sequences: AOL scores pooled over all frames, ranking
/// scores averaged over utterances.
pub fn score_predictions(
    truth: &[(AolSequence, Option<RolSequence>)],
    predictions: &BTreeMap<String, Vec<AolSequence>>,
    ranks: Option<&[RolSequence]>,
    tau_variant: TauVariant,
    ks: &[f64],
) -> Result<Scored> {
    let mut pooled: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    let mut utterances = Vec::with_capacity(truth.len());
    let mut rank_rows = Vec::new();
    for (i, (aol, rol)) in truth.iter().enumerate() {
        let mut per_variant = BTreeMap::new();
        for (name, preds) in predictions {
            let m = ConfusionMatrix::from_sequences(aol, &preds[i])?;
            pooled.entry(name.clone()).or_default().add(aol, &preds[i])?;
            per_variant.insert(name.clone(), AolScores::from_confusion(&m));
        }
        let ranking = match (ranks, rol) {
            (Some(r), Some(t)) => {
                let s = rank_scores(t, &r[i], tau_variant, ks)?;
                rank_rows.push(s.clone());
                Some(s)
            }
            _ => None,
        };
        utterances.push(UtteranceReport {
            id: aol.utterance_id.clone(),
            frames: aol.len(),
            variants: per_variant,
            ranking,
        });
    }
    let variants = pooled
        .iter()
        .map(|(k, m)| (k.clone(), AolScores::from_confusion(m)))
        .collect();
    let ranking = (!rank_rows.is_empty()).then(|| {
        let taus: Vec<f64> = rank_rows.iter().filter_map(|r| r.tau).collect();
        let mut precision = BTreeMap::new();
        for k in ks {
            let key = precision_key(*k);
            let v: Vec<f64> = rank_rows.iter().filter_map(|r| r.precision.get(&key).copied()).collect();
            if let Some(s) = MeanStd::of(&v) {
                precision.insert(key, s.mean);
            }
        }
        RankScores {
            tau: MeanStd::of(&taus).map(|s| s.mean),
            precision,
        }
    });
    Ok((variants, ranking, utterances))
}

fn missing_class(utts: &[LabeledUtterance]) -> Option<AolState> {
    let mut counts = [0usize; 3];
    for u in utts {
        for (c, n) in counts.iter_mut().zip(u.aol.counts()) {
            *c += n;
        }
    }
    AolState::ALL.into_iter().find(|s| counts[s.code()] == 0)
}

/// Trains on `train`, decodes `test` with every configured variant and
/// scores the result. A class missing from either side skips the fold.
pub fn evaluate_fold(
    fold: &str,
    train: &[LabeledUtterance],
    test: &[LabeledUtterance],
    cfg: &ExperimentConfig,
    seed: u64,
    config_hash: &str,
) -> Result<FoldReport> {
    let mut report = FoldReport {
        fold: fold.to_string(),
        seed,
        train_utterances: train.len(),
        test_utterances: test.len(),
        skipped: None,
        variants: BTreeMap::new(),
        ranking: None,
        utterances: Vec::new(),
    };
    if test.is_empty() {
        report.skipped = Some("empty test split".into());
        return Ok(report);
    }
    if let Some(c) = missing_class(train) {
        report.skipped = Some(format!("class {c} absent from training data"));
        return Ok(report);
    }
    if let Some(c) = missing_class(test) {
        report.skipped = Some(format!("class {c} absent from test data"));
        return Ok(report);
    }
    let components = Components {
        ranker: true,
        transition: cfg.variants.iter().any(|v| v.needs_transition()),
    };
    let bundle = match train_bundle(train, cfg, seed, config_hash, components) {
        Ok(b) => b,
        Err(Error::SingleClass(msg)) => {
            report.skipped = Some(msg);
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    let mut variants = cfg.variants.clone();
    variants.sort();
    variants.dedup();
    let mut predictions: BTreeMap<String, Vec<AolSequence>> = BTreeMap::new();
    let mut ranks = Vec::with_capacity(test.len());
    let ranker = bundle.ranksvm.as_ref().expect("trained above");
    for u in test {
        for v in &variants {
            let d = decode_utterance(&bundle, *v, &u.features, Some(&u.rol))?;
            predictions.entry(v.name().to_string()).or_default().push(d.aol);
        }
        ranks.push(ranker.predict_ranks(&u.features)?);
    }
    let truth: Vec<(AolSequence, Option<RolSequence>)> =
        test.iter().map(|u| (u.aol.clone(), Some(u.rol.clone()))).collect();
    let (v, r, utts) = score_predictions(&truth, &predictions, Some(&ranks), cfg.tau_variant, &cfg.precision_k)?;
    report.variants = v;
    report.ranking = r;
    report.utterances = utts;
    Ok(report)
}

/// Leave-one-tag-out cross validation over `folds`.
pub fn cross_validate(
    corpus: &[LabeledUtterance],
    folds: &[String],
    cfg: &ExperimentConfig,
    config_hash: &str,
    parallel: bool,
) -> Result<EvalReport> {
    if folds.is_empty() {
        return Err(Error::Config("no folds declared".into()));
    }
    let run = |(i, fold): (usize, &String)| -> Result<FoldReport> {
        let train: Vec<LabeledUtterance> = corpus
            .iter()
            .filter(|u| u.split != *fold && folds.contains(&u.split))
            .cloned()
            .collect();
        let test: Vec<LabeledUtterance> = corpus.iter().filter(|u| u.split == *fold).cloned().collect();
        evaluate_fold(fold, &train, &test, cfg, derive_seed(cfg.seed, i as u64), config_hash)
    };
    let reports: Vec<FoldReport> = if parallel {
        folds.par_iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        folds.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    Ok(EvalReport::new(config_hash, cfg.seed, reports))
}
