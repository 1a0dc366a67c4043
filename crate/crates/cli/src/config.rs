use std::path::{Path, PathBuf};

use dominance_core::numerics::derive_seed;
use dominance_core::trainer::CropConfig;
use dominance_core::{EvalConfig, KdeConfig, SaeConfig, SynthSpec, Threshold, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

const SAE_STREAM: u64 = 200;
const TRAIN_STREAM: u64 = 300;

/// Everything a command needs, loaded from TOML. Missing keys take defaults,
/// unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed. The generator uses it directly, the other stages derive theirs from it.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSpec,
    pub sae: SaeConfig,
    pub kde: KdeConfig,
    pub threshold: Threshold,
    pub train: TrainConfig,
    pub crop: CropConfig,
    pub eval: EvalSettings,
}

/// Default file locations, used when the matching flag is absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub sae: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub folds: usize,
    /// Seeds to repeat the grid over; empty means `[seed]`.
    pub seeds: Vec<u64>,
    pub validation_fraction: f64,
    pub with_crop: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let base = EvalConfig::default();
        Self {
            folds: base.folds,
            seeds: Vec::new(),
            validation_fraction: base.validation_fraction,
            with_crop: base.with_crop,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn sae_seed(&self) -> u64 {
        derive_seed(self.seed, SAE_STREAM)
    }

    pub fn train_config(&self, crop: bool) -> TrainConfig {
        TrainConfig {
            crop: crop.then_some(self.crop),
            seed: derive_seed(self.seed, TRAIN_STREAM),
            ..self.train.clone()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            folds: self.eval.folds,
            seeds: if self.eval.seeds.is_empty() {
                vec![self.seed]
            } else {
                self.eval.seeds.clone()
            },
            validation_fraction: self.eval.validation_fraction,
            with_crop: self.eval.with_crop,
            crop: self.crop,
            kde: self.kde,
            threshold: self.threshold,
            sae: self.sae.clone(),
            train: self.train.clone(),
        }
    }

    /// Checks every section so bad values surface before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.synth_spec().validate()?;
        self.kde.validate()?;
        self.threshold.validate()?;
        self.train.validate()?;
        self.eval_config().validate()?;
        if !(self.crop.window_ms > 0.0 && self.crop.stride_ms > 0.0) {
            return Err(CliError::Config(
                "crop: window_ms and stride_ms must be positive".into(),
            ));
        }
        Ok(())
    }
}
