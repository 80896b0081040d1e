//! Seeded synthetic corpora with a known latent trace.
//!
//! Each utterance has a stationary AR(1) latent `z`. Features are a fixed
//! random linear map of `[z, distractors]` plus noise, where the distractors
//! are independent AR(1) series. Rater `r` reports
//! `clip(scale * z[t - d_r] + b_r + noise, -1, 1)`.
//!
//! All randomness comes from one ChaCha8 stream seeded with `seed`, consumed
//! in a fixed order, so a config always yields the same corpus on every
//! platform.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{format_f64, to_canonical_json_pretty, write_annotations, write_features, write_file};
use crate::labels::{BoundaryMode, Preprocessing, ThresholdConfig};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::model::{AnnotationSet, FeatureMatrix, UtteranceFeatures, ValueRange};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_utterances: usize,
    pub frames_per_utterance: usize,
    pub feature_dim: usize,
    pub n_annotators: usize,
    /// AR(1) coefficient of the latent and distractor series.
    pub latent_smoothness: f64,
    pub annotator_noise_std: f64,
    pub annotator_bias_std: f64,
    pub feature_noise_std: f64,
    /// Rater delays are drawn uniformly from `0..=annotator_delay_frames`.
    pub annotator_delay_frames: usize,
    pub seed: u64,
    /// Multiplier on the unit-variance latent before it reaches the raters.
    pub latent_scale: f64,
    /// Use the identity instead of a random mixing matrix.
    pub identity_map: bool,
    pub frame_period_s: f64,
    /// Symmetric thresholds written into the generated manifest.
    pub theta2: f64,
    /// Number of fold tags; when absent the first `n_train` utterances are
    /// tagged `train` and the rest `test`.
    pub n_folds: Option<usize>,
    /// Defaults to half of the utterances.
    pub n_train: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_utterances: 18,
            frames_per_utterance: 615,
            feature_dim: 8,
            n_annotators: 6,
            latent_smoothness: 0.98,
            annotator_noise_std: 0.05,
            annotator_bias_std: 0.03,
            feature_noise_std: 1.0,
            annotator_delay_frames: 0,
            seed: 0,
            latent_scale: 0.3,
            identity_map: false,
            frame_period_s: 0.5,
            theta2: 0.1,
            n_folds: None,
            n_train: None,
        }
    }
}

impl SynthConfig {
    /// Zero noise, zero bias, zero delay.
    pub fn noiseless() -> Self {
        Self {
            annotator_noise_std: 0.0,
            annotator_bias_std: 0.0,
            feature_noise_std: 0.0,
            annotator_delay_frames: 0,
            identity_map: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_utterances == 0 || self.frames_per_utterance == 0 {
            return bad("need at least one utterance and one frame".into());
        }
        if self.feature_dim == 0 || self.n_annotators == 0 {
            return bad("feature_dim and n_annotators must be positive".into());
        }
        if !(0.0..1.0).contains(&self.latent_smoothness) {
            return bad(format!("latent_smoothness {} not in [0, 1)", self.latent_smoothness));
        }
        for (name, v) in [
            ("annotator_noise_std", self.annotator_noise_std),
            ("annotator_bias_std", self.annotator_bias_std),
            ("feature_noise_std", self.feature_noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if !(self.latent_scale > 0.0 && self.latent_scale.is_finite()) {
            return bad(format!("latent_scale must be positive, got {}", self.latent_scale));
        }
        if !(self.frame_period_s > 0.0 && self.frame_period_s.is_finite()) {
            return bad(format!("frame_period_s must be positive, got {}", self.frame_period_s));
        }
        if !(self.theta2 > 0.0 && self.theta2 < 1.0) {
            return bad(format!("theta2 must lie in (0, 1), got {}", self.theta2));
        }
        if let Some(k) = self.n_folds {
            if k == 0 || k > self.n_utterances {
                return bad(format!("n_folds {k} invalid for {} utterances", self.n_utterances));
            }
        }
        if let Some(n) = self.n_train {
            if n > self.n_utterances {
                return bad(format!("n_train {n} exceeds {} utterances", self.n_utterances));
            }
        }
        Ok(())
    }

    pub fn split_tag(&self, index: usize) -> String {
        match self.n_folds {
            Some(k) => format!("fold{:02}", index * k / self.n_utterances),
            None => {
                let n_train = self.n_train.unwrap_or(self.n_utterances / 2);
                if index < n_train { "train" } else { "test" }.to_string()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub features: Vec<UtteranceFeatures>,
    pub annotations: Vec<AnnotationSet>,
    /// Unit-variance latent per utterance, aligned with the feature frames.
    pub latent: Vec<Vec<f64>>,
    pub delays: Vec<usize>,
    pub biases: Vec<f64>,
    pub split_tags: Vec<String>,
}

fn ar1(rng: &mut ChaCha8Rng, rho: f64, n: usize) -> Vec<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut z: f64 = rng.sample(StandardNormal);
    out.push(z);
    for _ in 1..n {
        let e: f64 = rng.sample(StandardNormal);
        z = rho * z + innov * e;
        out.push(z);
    }
    out
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("validated std")
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.feature_dim;
    let mix: Vec<f64> = if cfg.identity_map {
        (0..d * d).map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 }).collect()
    } else {
        let s = 1.0 / (d as f64).sqrt();
        (0..d * d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let biases: Vec<f64> = (0..cfg.n_annotators)
        .map(|_| normal(cfg.annotator_bias_std).sample(&mut rng))
        .collect();
    let delays: Vec<usize> = (0..cfg.n_annotators)
        .map(|_| rng.random_range(0..=cfg.annotator_delay_frames))
        .collect();

    let t_len = cfg.frames_per_utterance;
    let burn = cfg.annotator_delay_frames;
    let rho = cfg.latent_smoothness;
    let feat_noise = normal(cfg.feature_noise_std);
    let ann_noise = normal(cfg.annotator_noise_std);
    let mut corpus = SynthCorpus {
        features: Vec::new(),
        annotations: Vec::new(),
        latent: Vec::new(),
        delays: delays.clone(),
        biases: biases.clone(),
        split_tags: Vec::new(),
    };
    for u in 0..cfg.n_utterances {
        let id = format!("utt{u:03}");
        // z[burn + t] is the latent at frame t
        let z = ar1(&mut rng, rho, burn + t_len);
        let distractors: Vec<Vec<f64>> = (1..d).map(|_| ar1(&mut rng, rho, t_len)).collect();
        let mut data = Vec::with_capacity(t_len * d);
        let mut input = vec![0.0; d];
        for t in 0..t_len {
            input[0] = z[burn + t];
            for k in 1..d {
                input[k] = distractors[k - 1][t];
            }
            for row in mix.chunks(d) {
                let v: f64 = row.iter().zip(&input).map(|(a, b)| a * b).sum();
                data.push(v + feat_noise.sample(&mut rng));
            }
        }
        let frames = FeatureMatrix::new(t_len, d, data)?;
        let mut features = UtteranceFeatures::new(&id, frames)?;
        features.frame_period_s = Some(cfg.frame_period_s);

        let annotators: Vec<Vec<f64>> = (0..cfg.n_annotators)
            .map(|r| {
                (0..t_len)
                    .map(|t| {
                        let v = cfg.latent_scale * z[burn + t - delays[r]]
                            + biases[r]
                            + ann_noise.sample(&mut rng);
                        v.clamp(-1.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        let range = ValueRange::new(-1.0, 1.0)?;
        corpus
            .annotations
            .push(AnnotationSet::new(&id, cfg.frame_period_s, annotators, range)?);
        corpus.features.push(features);
        corpus.latent.push(z[burn..].to_vec());
        corpus.split_tags.push(cfg.split_tag(u));
    }
    Ok(corpus)
}

/// Manifest describing `corpus` once written under its directory.
pub fn corpus_manifest(cfg: &SynthConfig, corpus: &SynthCorpus) -> Result<DatasetManifest> {
    Ok(DatasetManifest {
        dataset_name: format!("synthetic-seed{}", cfg.seed),
        dimension_name: "latent".into(),
        value_range: ValueRange::new(-1.0, 1.0)?,
        thresholds: ThresholdConfig::new(-cfg.theta2, cfg.theta2, BoundaryMode::TextRule)?,
        // annotations share the feature frame grid
        preprocessing: Preprocessing {
            delay_s: 0.0,
            window_s: cfg.frame_period_s,
            overlap: 0.0,
        },
        eps_tie: 0.0,
        utterances: corpus
            .features
            .iter()
            .zip(&corpus.split_tags)
            .map(|(f, split)| ManifestEntry {
                id: f.utterance_id.clone(),
                features: PathBuf::from(format!("features/{}.csv", f.utterance_id)),
                annotations: PathBuf::from(format!("annotations/{}.csv", f.utterance_id)),
                split: split.clone(),
            })
            .collect(),
        base_dir: PathBuf::new(),
    })
}

/// Writes features, annotations, `latent.csv` and `manifest.json` under
/// `dir`; returns the manifest path.
pub fn write_corpus(cfg: &SynthConfig, corpus: &SynthCorpus, dir: &Path) -> Result<PathBuf> {
    let manifest = corpus_manifest(cfg, corpus)?;
    for ((f, a), entry) in corpus.features.iter().zip(&corpus.annotations).zip(&manifest.utterances) {
        write_features(&dir.join(&entry.features), f)?;
        write_annotations(&dir.join(&entry.annotations), a)?;
    }
    let mut latent = String::from("utterance_id,frame,latent\n");
    for (f, z) in corpus.features.iter().zip(&corpus.latent) {
        for (t, v) in z.iter().enumerate() {
            latent.push_str(&format!("{},{t},{}\n", f.utterance_id, format_f64(*v)));
        }
    }
    write_file(&dir.join("latent.csv"), latent.as_bytes())?;
    let path = dir.join("manifest.json");
    write_file(&path, &to_canonical_json_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{comparison_matrix, qa_consensus, ranks_from_consensus};
    use crate::model::average_ranks;

    fn small() -> SynthConfig {
        SynthConfig {
            n_utterances: 4,
            frames_per_utterance: 50,
            feature_dim: 3,
            n_annotators: 3,
            annotator_delay_frames: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn shapes_and_ranges() {
        let c = generate_corpus(&small()).unwrap();
        assert_eq!(c.features.len(), 4);
        assert!(c.features.iter().all(|f| f.n_frames() == 50 && f.dim() == 3));
        assert!(c.annotations.iter().all(|a| a.n_annotators() == 3 && a.len() == 50));
        assert!(c.delays.iter().all(|d| *d <= 3));
        assert_eq!(c.split_tags, vec!["train", "train", "test", "test"]);
    }

    #[test]
    fn same_seed_same_files() {
        let cfg = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_corpus(&cfg, &generate_corpus(&cfg).unwrap(), a.path()).unwrap();
        write_corpus(&cfg, &generate_corpus(&cfg).unwrap(), b.path()).unwrap();
        for rel in ["manifest.json", "latent.csv", "features/utt002.csv", "annotations/utt003.csv"] {
            assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        }
        let other = generate_corpus(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(other.latent, generate_corpus(&small()).unwrap().latent);
    }

    #[test]
    fn written_manifest_loads() {
        let cfg = SynthConfig { n_folds: Some(2), ..small() };
        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus(&cfg, &generate_corpus(&cfg).unwrap(), dir.path()).unwrap();
        let m = DatasetManifest::load(&path).unwrap();
        assert_eq!(m.split_tags(), vec!["fold00".to_string(), "fold01".to_string()]);
        let f = crate::io::parse_features(&m.resolve(&m.utterances[0].features)).unwrap();
        assert_eq!(f.n_frames(), 50);
    }

    #[test]
    fn noiseless_identity_annotations_equal_scaled_latent() {
        let cfg = SynthConfig {
            n_annotators: 1,
            identity_map: true,
            n_utterances: 2,
            frames_per_utterance: 200,
            ..SynthConfig::noiseless()
        };
        let c = generate_corpus(&cfg).unwrap();
        for ((a, z), f) in c.annotations.iter().zip(&c.latent).zip(&c.features) {
            for t in 0..z.len() {
                assert_eq!(a.annotators[0][t], (cfg.latent_scale * z[t]).clamp(-1.0, 1.0));
                assert_eq!(f.frames.row(t)[0], z[t]);
            }
        }
    }

    #[test]
    fn noiseless_consensus_order_is_latent_order() {
        let cfg = SynthConfig {
            n_utterances: 1,
            frames_per_utterance: 120,
            ..SynthConfig::noiseless()
        };
        let c = generate_corpus(&cfg).unwrap();
        let mats: Vec<_> = c.annotations[0].annotators.iter().map(|s| comparison_matrix(s, 0.0)).collect();
        let rol = ranks_from_consensus("u", &qa_consensus(&mats).unwrap());
        assert!(c.latent[0].iter().all(|z| (cfg.latent_scale * z).abs() < 1.0));
        assert_eq!(rol.ranks, average_ranks(&c.latent[0]));
    }

    #[test]
    fn latent_variance_near_one() {
        let cfg = SynthConfig {
            n_utterances: 1,
            frames_per_utterance: 20_000,
            feature_dim: 1,
            n_annotators: 1,
            latent_smoothness: 0.9,
            ..SynthConfig::default()
        };
        let z = &generate_corpus(&cfg).unwrap().latent[0];
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_corpus(&SynthConfig { latent_smoothness: 1.0, ..small() }).is_err());
        assert!(generate_corpus(&SynthConfig { feature_dim: 0, ..small() }).is_err());
        assert!(generate_corpus(&SynthConfig { n_folds: Some(9), ..small() }).is_err());
    }
}
