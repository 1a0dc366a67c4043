//! Reference classifier, dominance-weighted training, prediction and evaluation.

mod eval;
mod model;

use serde::{Deserialize, Serialize};

pub use eval::{
    evaluate, run_fold, Condition, ConditionStats, EvalConfig, EvalReport, FoldOutcome,
};
pub use model::{
    batch_loss, softmax_inplace, weighted_ce_loss, ClassifierGradients, ClassifierModel, LossTally,
    LOG_CLAMP,
};

use crate::data::{crop, Dataset, Trial};
use crate::dominance::{CurriculumSchedule, DominanceRecord};
use crate::error::{Error, Result};
use crate::numerics::{AdamWConfig, AdamWState, Matrix, Rng};

/// Sliding-window cropping, expressed in milliseconds so it adapts to the sample rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropConfig {
    pub window_ms: f64,
    pub stride_ms: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            window_ms: 300.0,
            stride_ms: 100.0,
        }
    }
}

impl CropConfig {
    /// `(window, stride)` in samples, each at least 1.
    pub fn points(&self, sample_rate_hz: f64) -> (usize, usize) {
        let to_points = |ms: f64| ((ms * sample_rate_hz / 1000.0).round() as usize).max(1);
        (to_points(self.window_ms), to_points(self.stride_ms))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub schedule: CurriculumSchedule,
    /// `None` trains on whole trials.
    pub crop: Option<CropConfig>,
    /// Keep the weights with the lowest validation loss among epochs after this one.
    /// `None` keeps the final weights.
    pub early_stopping_after: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            hidden: 64,
            batch_size: 16,
            optimizer: AdamWConfig::default(),
            schedule: CurriculumSchedule::default(),
            crop: None,
            early_stopping_after: Some(180),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::arg("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::arg("hidden", "must be at least 1"));
        }
        if let Some(after) = self.early_stopping_after {
            if after >= self.epochs {
                return Err(Error::arg(
                    "early_stopping_after",
                    format!("{after} must be below epochs ({})", self.epochs),
                ));
            }
        }
        self.schedule.validate()
    }

    /// Input window of the classifier for trials of `time_points` samples.
    pub fn window_points(&self, time_points: usize, sample_rate_hz: f64) -> Result<usize> {
        match &self.crop {
            None => Ok(time_points),
            Some(c) => {
                let (w, _) = c.points(sample_rate_hz);
                if w > time_points {
                    return Err(Error::arg(
                        "crop.window_ms",
                        format!("window of {w} samples exceeds trial length {time_points}"),
                    ));
                }
                Ok(w)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ClassifierFit {
    pub model: ClassifierModel,
    pub history: Vec<EpochStats>,
    /// Epoch whose weights were returned.
    pub selected_epoch: usize,
    /// Cross-entropy terms whose probability needed clamping.
    pub log_clamps: usize,
}

/// Training samples: each trial, or each crop of each trial, with its parent index.
pub(crate) struct Samples {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub parents: Vec<usize>,
}

pub(crate) fn expand(
    trials: &[Trial],
    crop_points: Option<(usize, usize)>,
) -> Result<Vec<(Trial, usize)>> {
    let mut out = Vec::new();
    for (i, trial) in trials.iter().enumerate() {
        match crop_points {
            None => out.push((trial.clone(), i)),
            Some((w, s)) => out.extend(crop(trial, w, s)?.into_iter().map(|c| (c, i))),
        }
    }
    Ok(out)
}

fn samples(
    model: &ClassifierModel,
    dataset: &Dataset,
    crop_points: Option<(usize, usize)>,
) -> Result<Samples> {
    let expanded = expand(&dataset.trials, crop_points)?;
    Ok(Samples {
        inputs: model.prepare_inputs(expanded.iter().map(|(t, _)| &t.signal))?,
        labels: expanded.iter().map(|(t, _)| t.label).collect(),
        parents: expanded.iter().map(|&(_, p)| p).collect(),
    })
}

fn input_statistics(dataset: &Dataset) -> (f64, f64) {
    let mut n = 0.0;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for t in &dataset.trials {
        for &v in t.signal.as_slice() {
            n += 1.0;
            sum += v;
            sq += v * v;
        }
    }
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
}

/// Trains the reference classifier with per-trial curriculum weights.
///
/// With `records == None` every trial has weight 1 (plain cross-entropy). Crops
/// inherit their parent trial's weight. Initialization and batch order depend
/// only on `cfg.seed`, so weighted and unweighted runs with the same seed see
/// identical data order.
pub fn train_classifier(
    train: &Dataset,
    val: &Dataset,
    records: Option<&[DominanceRecord]>,
    cfg: &TrainConfig,
) -> Result<ClassifierFit> {
    cfg.validate()?;
    train.validate()?;
    if let Some(r) = records {
        if r.len() != train.len() {
            return Err(Error::arg(
                "records",
                format!("{} records for {} training trials", r.len(), train.len()),
            ));
        }
        if let Some(i) = r.iter().enumerate().position(|(i, rec)| {
            rec.trial_index != i
                || rec.class != train.trials[i].label
                || !(0.0..=1.0).contains(&rec.clamped_score)
        }) {
            return Err(Error::arg(
                "records",
                format!("record {i} does not match training trial {i}"),
            ));
        }
    }
    let has_val = !val.is_empty();
    if has_val {
        val.validate()?;
        if val.trials[0].signal.shape() != train.trials[0].signal.shape() {
            return Err(Error::Shape {
                op: "validation_set",
                left: val.trials[0].signal.shape(),
                right: train.trials[0].signal.shape(),
            });
        }
    }

    let window = cfg.window_points(train.time_points(), train.sample_rate_hz)?;
    let crop_points = cfg.crop.map(|c| c.points(train.sample_rate_hz));
    let mut rng = Rng::new(cfg.seed);
    let mut model = ClassifierModel::new(
        train.channels(),
        window,
        cfg.hidden,
        train.num_classes,
        &mut rng.fork(1),
    )?;
    let (mean, scale) = input_statistics(train);
    model.input_mean = mean;
    model.input_scale = scale;

    let data = samples(&model, train, crop_points)?;
    let mut opt = AdamWState::new(cfg.optimizer, &model.params());
    let mut order: Vec<usize> = (0..data.labels.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ClassifierModel)> = None;
    let mut log_clamps = 0;

    for epoch in 1..=cfg.epochs {
        let trial_weights: Vec<f64> = match records {
            None => vec![1.0; train.len()],
            Some(r) => r
                .iter()
                .map(|rec| rec.weight_at(epoch, &cfg.schedule))
                .collect(),
        };
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs = data.inputs.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let weights: Vec<f64> = chunk
                .iter()
                .map(|&i| trial_weights[data.parents[i]])
                .collect();
            let (tally, grads) = model.loss_and_gradients(&inputs, &labels, &weights)?;
            log_clamps += tally.clamped;
            epoch_loss += tally.total * chunk.len() as f64;
            opt.step(&mut model.params_mut(), &grads.0)?;
        }
        epoch_loss /= order.len() as f64;
        if !epoch_loss.is_finite() || !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }

        let val_loss = if has_val {
            Some(validation_loss(
                &model,
                val,
                cfg.crop.map(|c| c.points(val.sample_rate_hz)),
            )?)
        } else {
            None
        };
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss,
            val_loss,
        });

        if let (Some(after), Some(v)) = (cfg.early_stopping_after, val_loss) {
            if epoch > after && best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.clone()));
            }
        }
    }

    let (model, selected_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, cfg.epochs),
    };
    Ok(ClassifierFit {
        model,
        history,
        selected_epoch,
        log_clamps,
    })
}

/// Unweighted cross-entropy of (crop-averaged) predictions.
pub fn validation_loss(
    model: &ClassifierModel,
    dataset: &Dataset,
    crop_points: Option<(usize, usize)>,
) -> Result<f64> {
    let mut tally = LossTally::default();
    for trial in &dataset.trials {
        let probs = predict_probs(model, trial, crop_points)?;
        tally.add(&probs, trial.label, 1.0);
    }
    Ok(tally.total / dataset.len().max(1) as f64)
}

fn predict_probs(
    model: &ClassifierModel,
    trial: &Trial,
    crop_points: Option<(usize, usize)>,
) -> Result<Vec<f64>> {
    let pieces = match crop_points {
        None => vec![trial.clone()],
        Some((w, s)) => crop(trial, w, s)?,
    };
    let probs = model.probabilities(&model.prepare_inputs(pieces.iter().map(|t| &t.signal))?)?;
    Ok(average_rows(&probs))
}

/// Column means of a probability matrix.
pub fn average_rows(probs: &Matrix) -> Vec<f64> {
    let mut avg = probs.column_sums().into_vec();
    let n = probs.rows() as f64;
    avg.iter_mut().for_each(|v| *v /= n);
    avg
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Predicted class and probabilities. With cropping, per-crop probabilities are averaged.
pub fn predict(
    model: &ClassifierModel,
    trial: &Trial,
    crop_cfg: Option<&CropConfig>,
    sample_rate_hz: f64,
) -> Result<(usize, Vec<f64>)> {
    let probs = predict_probs(model, trial, crop_cfg.map(|c| c.points(sample_rate_hz)))?;
    Ok((argmax(&probs), probs))
}

/// Percentage of correctly classified trials.
pub fn accuracy(
    model: &ClassifierModel,
    dataset: &Dataset,
    crop_cfg: Option<&CropConfig>,
) -> Result<f64> {
    let mut correct = 0usize;
    for trial in &dataset.trials {
        let (pred, _) = predict(model, trial, crop_cfg, dataset.sample_rate_hz)?;
        correct += usize::from(pred == trial.label);
    }
    Ok(100.0 * correct as f64 / dataset.len().max(1) as f64)
}
