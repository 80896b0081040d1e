//! Dataset manifests: which feature and annotation files make up a corpus,
//! how to turn annotations into labels, and how utterances are split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Preprocessing, ThresholdConfig};
use crate::model::ValueRange;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub features: PathBuf,
    pub annotations: PathBuf,
    /// `train`, `test`, or a fold identifier.
    pub split: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub dimension_name: String,
    pub value_range: ValueRange,
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default)]
    pub eps_tie: f64,
    pub utterances: Vec<ManifestEntry>,
    /// Directory the manifest was loaded from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&body).map_err(|e| Error::format(path, e.to_string()))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate(self.value_range)?;
        self.preprocessing.validate()?;
        if !(self.eps_tie >= 0.0 && self.eps_tie.is_finite()) {
            return Err(Error::Config(format!("eps_tie must be nonnegative, got {}", self.eps_tie)));
        }
        let mut splits: BTreeMap<&str, &str> = BTreeMap::new();
        for u in &self.utterances {
            if u.id.is_empty() {
                return Err(Error::Config("utterance with empty id".into()));
            }
            if u.split.trim().is_empty() {
                return Err(Error::Config(format!("utterance {} has an empty split tag", u.id)));
            }
            if let Some(prev) = splits.insert(&u.id, &u.split) {
                return Err(Error::Config(if prev == u.split {
                    format!("utterance {} listed twice", u.id)
                } else {
                    format!("utterance {} assigned to both {prev:?} and {:?}", u.id, u.split)
                }));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Distinct split tags in sorted order.
    pub fn split_tags(&self) -> Vec<String> {
        self.utterances
            .iter()
            .map(|u| u.split.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn entries_in<'a>(&'a self, splits: &'a [String]) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.utterances.iter().filter(move |u| splits.contains(&u.split))
    }
}
