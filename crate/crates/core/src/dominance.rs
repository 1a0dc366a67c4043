//! Two-stage dominance scoring and the curriculum ramp.
//!
//! Stage one collapses each encoded trial to a single series: at every code
//! position, the channel value with the highest density among that trial's
//! channel values is kept. Stage two scores each trial against the other
//! trials of its class: at every code position, its value's density among the
//! class's values, averaged over positions. Scores are normalized by the class
//! maximum, and the top of the distribution is clamped to 1.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::kde::{density_at_points, KdeConfig};
use crate::numerics::Matrix;
use crate::sae::{Representation, SaeModel};

/// Densities within this distance of the maximum count as tied.
pub const ARGMAX_TIE_TOLERANCE: f64 = 1e-12;

/// One value per code position, collapsed across channels.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentativeSeries {
    pub values: Vec<f64>,
    pub source_trial: usize,
}

/// Representative series of every trial carrying one label, stacked `M × t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBatch {
    pub class: usize,
    pub series: Matrix,
    pub trial_indices: Vec<usize>,
}

/// How the confidence threshold ψ is applied to normalized scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "psi", rename_all = "snake_case")]
pub enum Threshold {
    /// Scores at or above the `(100 − ψ)`-th percentile of the class become 1,
    /// so roughly the top ψ% are treated as fully dominant.
    Percentile(f64),
    /// Scores at or above `ψ / 100` become 1.
    Absolute(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Percentile(90.0)
    }
}

impl Threshold {
    pub fn psi(self) -> f64 {
        match self {
            Threshold::Percentile(p) | Threshold::Absolute(p) => p,
        }
    }

    pub fn validate(self) -> Result<()> {
        let psi = self.psi();
        if !(psi > 0.0 && psi < 100.0) {
            return Err(Error::arg(
                "psi",
                format!("must lie strictly between 0 and 100, got {psi}"),
            ));
        }
        Ok(())
    }
}

/// Epoch window over which non-dominant weights ramp up to 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSchedule {
    pub start: usize,
    pub end: usize,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            start: 50,
            end: 150,
        }
    }
}

impl CurriculumSchedule {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        let s = Self { start, end };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::arg(
                "curriculum",
                format!("start ({}) must be before end ({})", self.start, self.end),
            ));
        }
        Ok(())
    }
}

/// Piecewise-linear ramp: the clamped score before `start`, linear
/// interpolation to 1 over `[start, end]`, and 1 afterwards.
pub fn curriculum_weight(clamped: f64, epoch: usize, sched: &CurriculumSchedule) -> f64 {
    if epoch < sched.start {
        clamped
    } else if epoch > sched.end {
        1.0
    } else {
        let progress = (epoch - sched.start) as f64 / (sched.end - sched.start) as f64;
        clamped + (1.0 - clamped) * progress
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceRecord {
    pub trial_index: usize,
    pub class: usize,
    pub raw_score: f64,
    pub clamped_score: f64,
    pub is_dominant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl DominanceRecord {
    pub fn weight_at(&self, epoch: usize, sched: &CurriculumSchedule) -> f64 {
        curriculum_weight(self.clamped_score, epoch, sched)
    }
}

/// Per code position, the channel value of maximal density; tied maxima are averaged.
pub fn channel_wise_representative(
    rep: &Representation,
    cfg: &KdeConfig,
) -> Result<RepresentativeSeries> {
    channel_wise_for(rep, cfg, 0)
}

fn channel_wise_for(
    rep: &Representation,
    cfg: &KdeConfig,
    source_trial: usize,
) -> Result<RepresentativeSeries> {
    if rep.channels() == 0 {
        return Err(Error::arg("representation", "no channels"));
    }
    let mut values = Vec::with_capacity(rep.code_width());
    for t in 0..rep.code_width() {
        let column = rep.encoded.column(t);
        let densities = density_at_points(&column, cfg)?;
        let best = densities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (sum, count) = column
            .iter()
            .zip(&densities)
            .filter(|(_, &d)| best - d <= ARGMAX_TIE_TOLERANCE)
            .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
        values.push(sum / count as f64);
    }
    Ok(RepresentativeSeries {
        values,
        source_trial,
    })
}

/// Mean over code positions of each row's density among its class at that position.
pub fn sample_wise_scores(batch: &ClassBatch, cfg: &KdeConfig) -> Result<Vec<f64>> {
    let (m, t) = batch.series.shape();
    if m < 2 {
        return Err(Error::ClassTooSmall {
            class: batch.class,
            count: m,
            required: 2,
        });
    }
    let mut scores = vec![0.0; m];
    for col in 0..t {
        let densities = density_at_points(&batch.series.column(col), cfg)?;
        for (s, d) in scores.iter_mut().zip(densities) {
            *s += d;
        }
    }
    if t > 0 {
        scores.iter_mut().for_each(|s| *s /= t as f64);
    }
    Ok(scores)
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of unsorted values.
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Normalizes by the maximum and clamps scores at or above the threshold to 1.
///
/// When every score is equal (or the maximum is zero) all samples become 1.
pub fn clamp_scores(raw: &[f64], threshold: Threshold) -> Result<Vec<f64>> {
    threshold.validate()?;
    if raw.is_empty() {
        return Err(Error::arg("raw_scores", "no scores to clamp"));
    }
    if raw.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::arg(
            "raw_scores",
            "scores must be finite and non-negative",
        ));
    }
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Ok(vec![1.0; raw.len()]);
    }
    let normalized: Vec<f64> = raw.iter().map(|s| s / max).collect();
    let cut = match threshold {
        Threshold::Percentile(psi) => percentile(&normalized, 100.0 - psi),
        Threshold::Absolute(psi) => psi / 100.0,
    };
    Ok(normalized
        .into_iter()
        .map(|s| if s >= cut { 1.0 } else { s })
        .collect())
}

/// Encodes and collapses every trial, in dataset order.
pub fn representatives(
    dataset: &Dataset,
    sae: &SaeModel,
    cfg: &KdeConfig,
) -> Result<Vec<RepresentativeSeries>> {
    dataset
        .trials
        .iter()
        .enumerate()
        .map(|(i, trial)| channel_wise_for(&sae.encode(trial)?, cfg, i))
        .collect()
}

/// Groups representative series by label.
pub fn class_batches(dataset: &Dataset, reps: &[RepresentativeSeries]) -> Result<Vec<ClassBatch>> {
    dataset
        .indices_by_class()
        .into_iter()
        .enumerate()
        .map(|(class, indices)| {
            let rows: Vec<&[f64]> = indices.iter().map(|&i| reps[i].values.as_slice()).collect();
            let series = if rows.is_empty() {
                Matrix::zeros(0, reps.first().map_or(0, |r| r.values.len()))
            } else {
                Matrix::from_rows(&rows)?
            };
            Ok(ClassBatch {
                class,
                series,
                trial_indices: indices,
            })
        })
        .collect()
}

/// Full estimator: one record per trial, in dataset order.
pub fn estimate_all(
    dataset: &Dataset,
    sae: &SaeModel,
    cfg: &KdeConfig,
    threshold: Threshold,
) -> Result<Vec<DominanceRecord>> {
    dataset.validate()?;
    cfg.validate()?;
    threshold.validate()?;
    dataset.require_per_class(2)?;

    let reps = representatives(dataset, sae, cfg)?;
    let mut records: Vec<Option<DominanceRecord>> = vec![None; dataset.len()];
    for batch in class_batches(dataset, &reps)? {
        let raw = sample_wise_scores(&batch, cfg)?;
        let clamped = clamp_scores(&raw, threshold)?;
        for (k, &idx) in batch.trial_indices.iter().enumerate() {
            records[idx] = Some(DominanceRecord {
                trial_index: idx,
                class: batch.class,
                raw_score: raw[k],
                clamped_score: clamped[k],
                is_dominant: clamped[k] == 1.0,
                provenance: dataset.provenance_of(idx),
            });
        }
    }
    Ok(records
        .into_iter()
        .map(|r| r.expect("every trial has a class"))
        .collect())
}

const REPORT_HEADER: [&str; 6] = [
    "trial_index",
    "class",
    "raw_score",
    "clamped_score",
    "is_dominant",
    "provenance",
];

/// Score report CSV. Floats use the shortest representation that round-trips.
pub fn write_score_report<W: Write>(records: &[DominanceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.trial_index.to_string(),
            r.class.to_string(),
            r.raw_score.to_string(),
            r.clamped_score.to_string(),
            r.is_dominant.to_string(),
            r.provenance.map_or(String::new(), |p| p.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_score_report(records: &[DominanceRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_score_report(records, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_score_report(path: impl AsRef<Path>) -> Result<Vec<DominanceRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        line: 0,
        reason: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| Error::Csv {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != REPORT_HEADER {
        return Err(Error::Csv {
            line: 1,
            reason: format!("expected header {}", REPORT_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |name: &str| Error::Csv {
            line,
            reason: format!("invalid `{name}`"),
        };
        let get = |i: usize| record.get(i).unwrap_or("");
        out.push(DominanceRecord {
            trial_index: get(0).parse().map_err(|_| bad("trial_index"))?,
            class: get(1).parse().map_err(|_| bad("class"))?,
            raw_score: get(2).parse().map_err(|_| bad("raw_score"))?,
            clamped_score: get(3).parse().map_err(|_| bad("clamped_score"))?,
            is_dominant: get(4).parse().map_err(|_| bad("is_dominant"))?,
            provenance: match get(5) {
                "" => None,
                s => Some(Provenance::parse(s).ok_or_else(|| bad("provenance"))?),
            },
        });
    }
    Ok(out)
}
