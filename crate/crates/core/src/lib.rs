//! Dynamic ordinal Markov model.
//!
//! Frame-level class posteriors over three ordered states (Low, Medium,
//! High) are combined with transition probabilities that depend on the
//! change in within-utterance rank between consecutive frames, and the most
//! probable state sequence is recovered by Viterbi decoding. The crate also
//! covers turning multi-rater interval annotations into ordinal labels,
//! the ordinal and ranking classifiers that feed the decoder, evaluation
//! metrics, and a seeded synthetic corpus generator.

pub mod bundle;
pub mod decoder;
pub mod error;
pub mod io;
pub mod kde;
pub mod labels;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod omsvm;
pub mod pipeline;
pub mod ranksvm;
pub mod svm;
pub mod synth;
pub mod transition;

pub use error::{Error, Result};
pub use model::{AolSequence, AolState, RolSequence, UtteranceFeatures};
