//! Trials, datasets, the synthetic generator, file formats, splitting and cropping.

mod io;
mod split;
mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use io::{load, load_csv, read_dataset, save, write_csv, write_dataset, FORMAT_VERSION, MAGIC};
pub use split::{crop, crop_count, holdout_indices, stratified_holdout, stratified_kfold};
pub use synth::{generate, SynthSpec};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Minimum time points: the encoder compresses by 4.
pub const MIN_TIME_POINTS: usize = 4;

/// One labeled multichannel recording, `channels × time_points`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub signal: Matrix,
    pub label: usize,
}

impl Trial {
    pub fn new(signal: Matrix, label: usize) -> Self {
        Self { signal, label }
    }

    pub fn channels(&self) -> usize {
        self.signal.rows()
    }

    pub fn time_points(&self) -> usize {
        self.signal.cols()
    }
}

/// How a synthetic trial was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    Outlier,
    LabelNoise,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [
        Provenance::Clean,
        Provenance::Outlier,
        Provenance::LabelNoise,
    ];

    pub fn code(self) -> u8 {
        match self {
            Provenance::Clean => 0,
            Provenance::Outlier => 1,
            Provenance::LabelNoise => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Provenance::Clean),
            1 => Some(Provenance::Outlier),
            2 => Some(Provenance::LabelNoise),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Clean => "clean",
            Provenance::Outlier => "outlier",
            Provenance::LabelNoise => "label_noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered collection of trials sharing one shape.
///
/// `provenance` is only known for synthetic data; ingested data carries `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trials: Vec<Trial>,
    pub num_classes: usize,
    pub sample_rate_hz: f64,
    pub provenance: Option<Vec<Provenance>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.trials.first().map_or(0, Trial::channels)
    }

    pub fn time_points(&self) -> usize {
        self.trials.first().map_or(0, Trial::time_points)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.label).collect()
    }

    pub fn provenance_of(&self, index: usize) -> Option<Provenance> {
        self.provenance.as_ref().map(|p| p[index])
    }

    /// Trial indices grouped by label, each group in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, t) in self.trials.iter().enumerate() {
            if t.label < self.num_classes {
                groups[t.label].push(i);
            }
        }
        groups
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.indices_by_class().iter().map(Vec::len).collect()
    }

    /// Trials at `indices`, in that order, with matching provenance.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            trials: indices.iter().map(|&i| self.trials[i].clone()).collect(),
            num_classes: self.num_classes,
            sample_rate_hz: self.sample_rate_hz,
            provenance: self
                .provenance
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }

    /// Checks structural invariants: non-empty, consistent shapes, labels in range,
    /// finite values, at least [`MIN_TIME_POINTS`] time points.
    pub fn validate(&self) -> Result<()> {
        if self.trials.is_empty() {
            return Err(Error::Validation("dataset has no trials".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Validation("num_classes must be at least 1".into()));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Validation(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        let (c, t) = self.trials[0].signal.shape();
        if c == 0 {
            return Err(Error::Validation(
                "trials must have at least one channel".into(),
            ));
        }
        if t < MIN_TIME_POINTS {
            return Err(Error::Validation(format!(
                "trials need at least {MIN_TIME_POINTS} time points, got {t}"
            )));
        }
        for (i, trial) in self.trials.iter().enumerate() {
            if trial.signal.shape() != (c, t) {
                return Err(Error::Validation(format!(
                    "trial {i} has shape {:?}, expected {:?}",
                    trial.signal.shape(),
                    (c, t)
                )));
            }
            if trial.label >= self.num_classes {
                return Err(Error::Validation(format!(
                    "trial {i} label {} out of range for {} classes",
                    trial.label, self.num_classes
                )));
            }
            if !trial.signal.is_finite() {
                return Err(Error::Validation(format!(
                    "trial {i} contains non-finite values"
                )));
            }
        }
        if let Some(p) = &self.provenance {
            if p.len() != self.trials.len() {
                return Err(Error::Validation(format!(
                    "{} provenance tags for {} trials",
                    p.len(),
                    self.trials.len()
                )));
            }
        }
        Ok(())
    }

    /// Fails with the first class holding fewer than `min` trials.
    pub fn require_per_class(&self, min: usize) -> Result<()> {
        for (class, count) in self.class_counts().into_iter().enumerate() {
            if count < min {
                return Err(Error::ClassTooSmall {
                    class,
                    count,
                    required: min,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_dataset() -> Dataset {
        let trial = |v: f64, label| {
            Trial::new(
                Matrix::from_fn(2, 8, |c, t| v + c as f64 + 0.1 * t as f64),
                label,
            )
        };
        Dataset {
            trials: vec![trial(0.0, 0), trial(1.0, 1), trial(2.0, 0), trial(-1.5, 1)],
            num_classes: 2,
            sample_rate_hz: 250.0,
            provenance: Some(vec![
                Provenance::Clean,
                Provenance::Outlier,
                Provenance::LabelNoise,
                Provenance::Clean,
            ]),
        }
    }

    #[test]
    fn validate_accepts_consistent_dataset() {
        tiny_dataset().validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_label_and_shape() {
        let mut d = tiny_dataset();
        d.trials[1].label = 5;
        assert!(d.validate().is_err());

        let mut d = tiny_dataset();
        d.trials[2].signal = Matrix::zeros(3, 8);
        assert!(d.validate().is_err());

        let mut d = tiny_dataset();
        d.trials[0].signal[(0, 0)] = f64::NAN;
        assert!(d.validate().is_err());
    }

    #[test]
    fn require_per_class_names_class() {
        let d = tiny_dataset().subset(&[0, 1, 2]);
        match d.require_per_class(2) {
            Err(Error::ClassTooSmall { class, count, .. }) => {
                assert_eq!(class, 1);
                assert_eq!(count, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn provenance_codes_round_trip() {
        for p in Provenance::ALL {
            assert_eq!(Provenance::from_code(p.code()), Some(p));
            assert_eq!(Provenance::parse(p.as_str()), Some(p));
        }
        assert_eq!(Provenance::from_code(7), None);
    }
}
