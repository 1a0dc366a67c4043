//! Sample dominance scoring for training sets with inconsistent samples.
//!
//! The pipeline:
//!
//! 1. [`sae`] learns a per-channel autoencoder and encodes every trial to a
//!    `channels × T/4` representation.
//! 2. [`dominance`] collapses each representation across channels by kernel
//!    density ([`kde`]), then scores every trial by the density of its series
//!    among trials of the same class. Low scores flag scattered samples.
//! 3. [`trainer`] trains a classifier whose per-sample cross-entropy is scaled
//!    by the score, ramping every weight back to 1 on a curriculum.
//!
//! [`data`] provides the trial model, a synthetic generator with injected
//! outliers and label noise, file formats, folds and cropping.

pub mod data;
pub mod dominance;
pub mod error;
pub mod kde;
pub mod numerics;
pub mod sae;
pub mod trainer;

pub use data::{Dataset, Provenance, SynthSpec, Trial};
pub use dominance::{estimate_all, CurriculumSchedule, DominanceRecord, Threshold};
pub use error::{Error, Result};
pub use kde::KdeConfig;
pub use numerics::{AdamWConfig, Matrix, Rng};
pub use sae::{train_sae, Representation, SaeConfig, SaeModel};
pub use trainer::{
    evaluate, train_classifier, ClassifierModel, EvalConfig, EvalReport, TrainConfig,
};
