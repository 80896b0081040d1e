//! Serialized container for every trained parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{to_canonical_json, write_file};
use crate::omsvm::OmsvmModel;
use crate::ranksvm::RankModel;
use crate::svm::Standardization;
use crate::transition::TransitionModel;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// System variants compared in experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Framewise argmax of the ordinal classifier.
    #[serde(rename = "omsvm-only")]
    OmsvmOnly,
    /// Viterbi decoding with rank differences from the ranking model.
    #[default]
    #[serde(rename = "domm-rs")]
    DommRs,
    /// Viterbi decoding with rank differences from ground-truth ranks.
    #[serde(rename = "domm-gt")]
    DommGt,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::OmsvmOnly, Variant::DommRs, Variant::DommGt];

    pub fn name(self) -> &'static str {
        match self {
            Variant::OmsvmOnly => "omsvm-only",
            Variant::DommRs => "domm-rs",
            Variant::DommGt => "domm-gt",
        }
    }

    pub fn needs_transition(self) -> bool {
        self != Variant::OmsvmOnly
    }

    pub fn needs_ranker(self) -> bool {
        self == Variant::DommRs
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected omsvm-only, domm-rs or domm-gt)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub train_utterances: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub variant: Variant,
    /// Statistics of the stacked training features.
    pub standardization: Standardization,
    pub omsvm: OmsvmModel,
    pub ranksvm: Option<RankModel>,
    pub transition: Option<TransitionModel>,
    /// Training-set AOL frequencies.
    pub class_priors: [f64; 3],
    pub divide_by_prior: bool,
    pub provenance: Provenance,
}

impl ModelBundle {
    pub fn feature_dim(&self) -> usize {
        self.standardization.dim()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        to_canonical_json(self)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_slice(bytes)
            .map_err(|e| Error::format(path, format!("not a model bundle: {e}")))?;
        if header.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: header.format_version,
                expected: BUNDLE_FORMAT_VERSION,
            });
        }
        serde_json::from_slice(bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn save_model_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    write_file(path, &bundle.to_bytes()?)
}

pub fn load_model_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(path, &bytes)
}
