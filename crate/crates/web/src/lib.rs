//! WebAssembly bindings for the browser demo. Every operation takes a JSON
//! parameter object and returns a JSON result; the `*_json` functions carry
//! the logic and are usable natively.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use domm::bundle::Variant;
use domm::labels::{preprocess_annotations, sweep_thresholds, threshold_grid, ThresholdConfig};
use domm::metrics::ConfusionMatrix;
use domm::pipeline::{decode_utterance, label_utterance, train_bundle, Components, ExperimentConfig, LabeledUtterance};
use domm::synth::{corpus_manifest, generate_corpus, SynthConfig, SynthCorpus};
use domm::transition::{fit_transition_model, DenominatorMode, TransitionOptions};
use domm::{AolSequence, AolState, RolSequence};

/// Corpus knobs shared by all demo operations.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub seed: u64,
    pub n_utterances: usize,
    pub frames: usize,
    pub feature_noise_std: f64,
    pub annotator_noise_std: f64,
    pub annotator_bias_std: f64,
    pub latent_scale: f64,
    pub theta2: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            seed: 1,
            n_utterances: 8,
            frames: 300,
            feature_noise_std: s.feature_noise_std,
            annotator_noise_std: s.annotator_noise_std,
            annotator_bias_std: s.annotator_bias_std,
            latent_scale: s.latent_scale,
            theta2: s.theta2,
        }
    }
}

impl CorpusParams {
    fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            n_utterances: self.n_utterances,
            frames_per_utterance: self.frames,
            feature_noise_std: self.feature_noise_std,
            annotator_noise_std: self.annotator_noise_std,
            annotator_bias_std: self.annotator_bias_std,
            latent_scale: self.latent_scale,
            theta2: self.theta2,
            ..SynthConfig::default()
        }
    }
}

fn parse<T: for<'de> Deserialize<'de> + Default>(params: &str) -> Result<T, String> {
    if params.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(params).map_err(|e| format!("bad parameters: {e}"))
}

fn emit<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn build(params: &CorpusParams) -> Result<(SynthConfig, SynthCorpus, Vec<LabeledUtterance>), String> {
    let cfg = params.synth_config();
    let corpus = generate_corpus(&cfg).map_err(|e| e.to_string())?;
    let manifest = corpus_manifest(&cfg, &corpus).map_err(|e| e.to_string())?;
    let labeled = corpus
        .features
        .iter()
        .zip(&corpus.annotations)
        .zip(&corpus.split_tags)
        .map(|((f, a), s)| label_utterance(&manifest, &f.utterance_id, s, f.clone(), a))
        .collect::<domm::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    Ok((cfg, corpus, labeled))
}

fn codes(seq: &AolSequence) -> Vec<u8> {
    seq.labels.iter().map(|l| u8::from(*l)).collect()
}

#[derive(Serialize)]
struct VariantTrack {
    labels: Vec<u8>,
    /// Pooled over every test utterance.
    uar: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Serialize)]
struct DecodeDemo {
    utterance: String,
    latent: Vec<f64>,
    truth: Vec<u8>,
    truth_rank: Vec<f64>,
    predicted_rank: Vec<f64>,
    posteriors: Vec<[f64; 3]>,
    variants: BTreeMap<String, VariantTrack>,
    train_utterances: usize,
    test_utterances: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeParams {
    #[serde(flatten)]
    pub corpus: CorpusParams,
    /// Index into the test utterances of the one to plot.
    pub show: usize,
}

/// Trains on the synthetic train split and decodes the test split with every
/// variant; returns one utterance's tracks plus pooled scores.
pub fn synth_decode_json(params: &str) -> Result<String, String> {
    let p: DecodeParams = parse(params)?;
    let (_, corpus, labeled) = build(&p.corpus)?;
    let latent_of: BTreeMap<&str, &Vec<f64>> = corpus
        .features
        .iter()
        .zip(&corpus.latent)
        .map(|(f, z)| (f.utterance_id.as_str(), z))
        .collect();
    let (train, test): (Vec<_>, Vec<_>) = labeled.iter().cloned().partition(|u| u.split == "train");
    if train.is_empty() || test.is_empty() {
        return Err("need at least two utterances".into());
    }
    let shown = test.get(p.show).ok_or_else(|| format!("show must be below {}", test.len()))?;
    let cfg = ExperimentConfig::default();
    let bundle = train_bundle(&train, &cfg, p.corpus.seed, "demo", Components::ALL).map_err(|e| e.to_string())?;

    let mut tracks = BTreeMap::new();
    let mut shown_extra = None;
    for v in Variant::ALL {
        let mut m = ConfusionMatrix::default();
        let mut labels = Vec::new();
        for u in &test {
            let d = decode_utterance(&bundle, v, &u.features, Some(&u.rol)).map_err(|e| e.to_string())?;
            m.add(&u.aol, &d.aol).map_err(|e| e.to_string())?;
            if u.id == shown.id {
                labels = codes(&d.aol);
                if v == Variant::DommRs {
                    shown_extra = Some((d.posteriors.probs.clone(), d.predicted_rol.clone()));
                }
            }
        }
        tracks.insert(
            v.name().to_string(),
            VariantTrack { labels, uar: m.uar().ok(), kappa: m.weighted_kappa().ok() },
        );
    }
    let (posteriors, predicted) = shown_extra.ok_or("no ranking track")?;
    let n = shown.aol.len();
    let demo = DecodeDemo {
        utterance: shown.id.clone(),
        latent: latent_of[shown.id.as_str()][..n].to_vec(),
        truth: codes(&shown.aol),
        truth_rank: shown.rol.normalized.clone(),
        predicted_rank: predicted.map(|r: RolSequence| r.normalized).unwrap_or_default(),
        posteriors,
        variants: tracks,
        train_utterances: train.len(),
        test_utterances: test.len(),
    };
    emit(&demo)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionParams {
    #[serde(flatten)]
    pub corpus: CorpusParams,
    pub denominator_mode: DenominatorMode,
    pub points: Option<usize>,
}

#[derive(Serialize)]
struct TransitionDemo {
    deltas: Vec<f64>,
    /// `curves[prev][next][k]` is P(next | prev, deltas[k]).
    curves: Vec<Vec<Vec<f64>>>,
    prior: [[f64; 3]; 3],
    counts: [[u64; 3]; 3],
}

/// Transition probabilities as a function of the rank difference, fitted on
/// the consensus labels of a synthetic corpus.
pub fn transition_curves_json(params: &str) -> Result<String, String> {
    let p: TransitionParams = parse(params)?;
    let (_, _, labeled) = build(&p.corpus)?;
    let aols: Vec<AolSequence> = labeled.iter().map(|u| u.aol.clone()).collect();
    let rols: Vec<RolSequence> = labeled.iter().map(|u| u.rol.clone()).collect();
    let opts = TransitionOptions { denominator_mode: p.denominator_mode, ..TransitionOptions::default() };
    let tm = fit_transition_model(&aols, &rols, &opts).map_err(|e| e.to_string())?;
    let reach = tm
        .marginal
        .iter()
        .flat_map(|k| k.samples.iter().map(|s| s.abs()))
        .fold(0.0, f64::max)
        .max(1e-3);
    let points = p.points.unwrap_or(161).clamp(3, 2001);
    let deltas: Vec<f64> = (0..points)
        .map(|k| -reach + 2.0 * reach * k as f64 / (points - 1) as f64)
        .collect();
    let curves = AolState::ALL
        .iter()
        .map(|&prev| {
            let rows: Vec<[f64; 3]> = deltas.iter().map(|&d| tm.transition_distribution(prev, d)).collect();
            (0..3).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
        })
        .collect();
    emit(&TransitionDemo { deltas, curves, prior: tm.prior, counts: tm.counts.pairs })
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    #[serde(flatten)]
    pub corpus: CorpusParams,
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self { corpus: CorpusParams::default(), start: 0.08, end: 0.2, step: 0.02 }
    }
}

/// Label balance and agreement over symmetric thresholds.
pub fn threshold_sweep_json(params: &str) -> Result<String, String> {
    let p: SweepParams = parse(params)?;
    let (cfg, corpus, _) = build(&p.corpus)?;
    let manifest = corpus_manifest(&cfg, &corpus).map_err(|e| e.to_string())?;
    let smoothed = corpus
        .annotations
        .iter()
        .map(|a| preprocess_annotations(a, &manifest.preprocessing))
        .collect::<domm::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let grid = threshold_grid(p.start, p.end, p.step)
        .and_then(|g| g.into_iter().map(ThresholdConfig::symmetric).collect::<domm::Result<Vec<_>>>())
        .map_err(|e| e.to_string())?;
    let rows = sweep_thresholds(&smoothed, &grid).map_err(|e| e.to_string())?;
    emit(&rows)
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn synth_decode(params: &str) -> Result<String, JsValue> {
    js(synth_decode_json(params))
}

#[wasm_bindgen]
pub fn transition_curves(params: &str) -> Result<String, JsValue> {
    js(transition_curves_json(params))
}

#[wasm_bindgen]
pub fn threshold_sweep(params: &str) -> Result<String, JsValue> {
    js(threshold_sweep_json(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn run(f: fn(&str) -> Result<String, String>, params: &str) -> Value {
        serde_json::from_str(&f(params).unwrap()).unwrap()
    }

    #[test]
    fn decode_demo_shapes() {
        let v = run(synth_decode_json, r#"{"n_utterances": 4, "frames": 120}"#);
        let n = v["truth"].as_array().unwrap().len();
        assert_eq!(n, 120);
        assert_eq!(v["latent"].as_array().unwrap().len(), n);
        assert_eq!(v["posteriors"].as_array().unwrap().len(), n);
        assert_eq!(v["predicted_rank"].as_array().unwrap().len(), n);
        for name in ["omsvm-only", "domm-rs", "domm-gt"] {
            assert_eq!(v["variants"][name]["labels"].as_array().unwrap().len(), n);
        }
        let p = r#"{"n_utterances": 4, "frames": 120}"#;
        assert_eq!(synth_decode_json(p).unwrap(), synth_decode_json(p).unwrap());
    }

    #[test]
    fn transition_curves_are_distributions() {
        let v = run(transition_curves_json, r#"{"n_utterances": 4, "frames": 150, "points": 21}"#);
        let curves = v["curves"].as_array().unwrap();
        for prev in curves {
            for k in 0..21 {
                let s: f64 = prev.as_array().unwrap().iter().map(|c| c[k].as_f64().unwrap()).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let m = run(transition_curves_json, r#"{"n_utterances": 4, "frames": 150, "denominator_mode": "marginalized"}"#);
        assert_eq!(m["deltas"].as_array().unwrap().len(), 161);
    }

    #[test]
    fn sweep_has_default_grid() {
        let v = run(threshold_sweep_json, r#"{"n_utterances": 3, "frames": 100}"#);
        let rows = v.as_array().unwrap();
        assert_eq!(rows.len(), 7);
        for r in rows {
            let a = r["agreement"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn bad_parameters_are_reported() {
        assert!(synth_decode_json(r#"{"nope": 1}"#).unwrap_err().contains("bad parameters"));
        assert!(synth_decode_json(r#"{"n_utterances": 1}"#).is_err());
        assert!(threshold_sweep_json(r#"{"step": 0}"#).is_err());
        assert!(synth_decode_json("").is_ok());
    }
}
