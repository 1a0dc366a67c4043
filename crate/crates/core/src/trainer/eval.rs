use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{accuracy, predict, train_classifier, CropConfig, TrainConfig};
use crate::data::{stratified_holdout, stratified_kfold, Dataset};
use crate::dominance::{estimate_all, DominanceRecord, Threshold};
use crate::error::{Error, Result};
use crate::kde::KdeConfig;
use crate::numerics::{derive_seed, mean, sample_std, Rng};
use crate::sae::{train_sae, SaeConfig};

const SPLIT_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 100;
const SAE_STREAM: u64 = 200;
const TRAIN_STREAM: u64 = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub folds: usize,
    pub seeds: Vec<u64>,
    /// Fraction of each training fold held out for early stopping.
    pub validation_fraction: f64,
    /// Also run the cropped conditions.
    pub with_crop: bool,
    pub crop: CropConfig,
    pub kde: KdeConfig,
    pub threshold: Threshold,
    pub sae: SaeConfig,
    pub train: TrainConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 4,
            seeds: vec![0],
            validation_fraction: 0.2,
            with_crop: true,
            crop: CropConfig::default(),
            kde: KdeConfig::default(),
            threshold: Threshold::default(),
            sae: SaeConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn conditions(&self) -> Vec<Condition> {
        let crops: &[bool] = if self.with_crop {
            &[false, true]
        } else {
            &[false]
        };
        crops
            .iter()
            .flat_map(|&crop| [false, true].map(|weighted| Condition { crop, weighted }))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::arg("folds", "must be at least 2"));
        }
        if self.seeds.is_empty() {
            return Err(Error::arg("seeds", "at least one seed is required"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::arg("validation_fraction", "must lie in [0, 1)"));
        }
        self.kde.validate()?;
        self.threshold.validate()?;
        self.train.validate()
    }
}

/// One cell of the comparison grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    pub crop: bool,
    pub weighted: bool,
}

impl Condition {
    pub fn crop_key(crop: bool) -> &'static str {
        if crop {
            "with_crop"
        } else {
            "without_crop"
        }
    }

    pub fn key(&self) -> String {
        let method = if self.weighted {
            "weighted"
        } else {
            "baseline"
        };
        format!("{}/{method}", Self::crop_key(self.crop))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    /// Test accuracy (%) of every (seed, fold) run, seed-major.
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of `per_fold`.
    pub std: f64,
    /// `confusion[true][predicted]`, summed over runs.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub conditions: BTreeMap<String, ConditionStats>,
    /// Weighted minus baseline mean accuracy, per crop mode.
    pub deltas: BTreeMap<String, f64>,
}

/// Accuracy and confusion of every condition on one (seed, fold).
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub seed: u64,
    pub fold: usize,
    pub results: Vec<(Condition, f64, Vec<Vec<usize>>)>,
    pub records: Vec<DominanceRecord>,
}

/// Trains the autoencoder and estimates scores on the training part of one
/// fold, then trains and tests a baseline and a weighted classifier per crop mode.
pub fn run_fold(
    dataset: &Dataset,
    cfg: &EvalConfig,
    seed: u64,
    fold: usize,
) -> Result<FoldOutcome> {
    let (train_full, test) =
        stratified_kfold(dataset, fold, cfg.folds, derive_seed(seed, SPLIT_STREAM))?;
    let (train, val) = stratified_holdout(
        &train_full,
        cfg.validation_fraction,
        derive_seed(seed, VALIDATION_STREAM + fold as u64),
    )?;

    let mut sae_rng = Rng::new(derive_seed(seed, SAE_STREAM + fold as u64));
    let sae = train_sae(&train, &cfg.sae, &mut sae_rng)?.model;
    let records = estimate_all(&train, &sae, &cfg.kde, cfg.threshold)?;

    let mut results = Vec::new();
    for cond in cfg.conditions() {
        let train_cfg = TrainConfig {
            crop: cond.crop.then_some(cfg.crop),
            seed: derive_seed(seed, TRAIN_STREAM + fold as u64),
            ..cfg.train.clone()
        };
        let recs = cond.weighted.then_some(records.as_slice());
        let fit = train_classifier(&train, &val, recs, &train_cfg)?;
        let acc = accuracy(&fit.model, &test, train_cfg.crop.as_ref())?;
        let mut confusion = vec![vec![0usize; dataset.num_classes]; dataset.num_classes];
        for trial in &test.trials {
            let (pred, _) = predict(
                &fit.model,
                trial,
                train_cfg.crop.as_ref(),
                test.sample_rate_hz,
            )?;
            confusion[trial.label][pred] += 1;
        }
        results.push((cond, acc, confusion));
    }
    Ok(FoldOutcome {
        seed,
        fold,
        results,
        records,
    })
}

/// Runs every (seed, fold) and aggregates the comparison grid.
pub fn evaluate(dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    dataset.validate()?;
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        for fold in 0..cfg.folds {
            outcomes.push(run_fold(dataset, cfg, seed, fold)?);
        }
    }
    Ok(EvalReport::from_outcomes(&outcomes, dataset.num_classes))
}

impl EvalReport {
    pub fn from_outcomes(outcomes: &[FoldOutcome], num_classes: usize) -> Self {
        let mut grouped: BTreeMap<Condition, (Vec<f64>, Vec<Vec<usize>>)> = BTreeMap::new();
        for outcome in outcomes {
            for (cond, acc, confusion) in &outcome.results {
                let entry = grouped
                    .entry(*cond)
                    .or_insert_with(|| (Vec::new(), vec![vec![0; num_classes]; num_classes]));
                entry.0.push(*acc);
                for (row, add) in entry.1.iter_mut().zip(confusion) {
                    for (c, a) in row.iter_mut().zip(add) {
                        *c += a;
                    }
                }
            }
        }

        let mut conditions = BTreeMap::new();
        let mut means = BTreeMap::new();
        for (cond, (per_fold, confusion)) in grouped {
            let stats = ConditionStats {
                mean: mean(&per_fold),
                std: sample_std(&per_fold),
                per_fold,
                confusion,
            };
            means.insert(cond, stats.mean);
            conditions.insert(cond.key(), stats);
        }
        let mut deltas = BTreeMap::new();
        for crop in [false, true] {
            let base = means.get(&Condition {
                crop,
                weighted: false,
            });
            let ours = means.get(&Condition {
                crop,
                weighted: true,
            });
            if let (Some(b), Some(o)) = (base, ours) {
                deltas.insert(Condition::crop_key(crop).to_string(), o - b);
            }
        }
        EvalReport { conditions, deltas }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: 0,
            reason: format!("line {} column {}: {e}", e.line(), e.column()),
        })
    }

    /// Plain-text grid: one row per condition, `mean (std)` accuracy.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<10} {:>16}",
            "Cropping", "Method", "Accuracy (%)"
        );
        let _ = writeln!(out, "{}", "-".repeat(40));
        for crop in [false, true] {
            for weighted in [false, true] {
                let key = Condition { crop, weighted }.key();
                if let Some(s) = self.conditions.get(&key) {
                    let _ = writeln!(
                        out,
                        "{:<12} {:<10} {:>16}",
                        if crop { "with crop." } else { "w/o crop." },
                        if weighted { "with ours" } else { "Baseline" },
                        format!("{:.2} ({:.2})", s.mean, s.std)
                    );
                }
            }
        }
        out
    }
}
