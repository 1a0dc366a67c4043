use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, Trial, MIN_TIME_POINTS};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Parameters of the synthetic oscillatory generator.
///
/// Clean trials carry a sinusoid at the class frequency on a random subset of
/// active channels, with a phase jittered around zero by up to
/// `±phase_jitter·π`, plus white noise of standard deviation `amplitude / snr`
/// on every channel. Outlier trials are white noise of standard deviation
/// `outlier_scale · amplitude` with no oscillation at all. Label-noise trials
/// are clean signals of one class carrying another class's label.
///
/// Per class, `floor(outlier_fraction · trials_per_class)` trials are outliers
/// and `floor(label_noise_fraction · trials_per_class)` carry a wrong label; the
/// remainder is clean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub channels: usize,
    pub time_points: usize,
    pub trials_per_class: usize,
    pub sample_rate_hz: f64,
    pub class_frequencies_hz: Vec<f64>,
    pub amplitude: f64,
    /// Amplitude ratio between the sinusoid and the per-channel noise.
    pub snr: f64,
    pub active_channel_fraction: f64,
    pub phase_jitter: f64,
    /// Standard deviation of outlier trials, relative to `amplitude`.
    pub outlier_scale: f64,
    pub outlier_fraction: f64,
    pub label_noise_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 2,
            channels: 8,
            time_points: 125,
            trials_per_class: 80,
            sample_rate_hz: 250.0,
            class_frequencies_hz: vec![10.0, 14.0],
            amplitude: 10.0,
            snr: 8.0,
            active_channel_fraction: 0.75,
            phase_jitter: 0.25,
            outlier_scale: 0.3,
            outlier_fraction: 0.2,
            label_noise_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::arg("num_classes", "must be at least 1"));
        }
        if self.channels == 0 {
            return Err(Error::arg("channels", "must be at least 1"));
        }
        if self.time_points < MIN_TIME_POINTS {
            return Err(Error::arg(
                "time_points",
                format!("must be at least {MIN_TIME_POINTS}"),
            ));
        }
        if self.trials_per_class == 0 {
            return Err(Error::arg("trials_per_class", "must be at least 1"));
        }
        if self.num_classes > u8::MAX as usize + 1 {
            return Err(Error::arg(
                "num_classes",
                "at most 256 classes are supported",
            ));
        }
        if self.class_frequencies_hz.len() != self.num_classes {
            return Err(Error::arg(
                "class_frequencies_hz",
                format!(
                    "expected {} frequencies, got {}",
                    self.num_classes,
                    self.class_frequencies_hz.len()
                ),
            ));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::arg("sample_rate_hz", "must be positive and finite"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::arg("amplitude", "must be finite and >= 0"));
        }
        if !(self.snr > 0.0) {
            return Err(Error::arg("snr", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.active_channel_fraction) {
            return Err(Error::arg("active_channel_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.phase_jitter) {
            return Err(Error::arg("phase_jitter", "must lie in [0, 1]"));
        }
        if !(self.outlier_scale >= 0.0 && self.outlier_scale.is_finite()) {
            return Err(Error::arg("outlier_scale", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::arg("outlier_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.label_noise_fraction) {
            return Err(Error::arg("label_noise_fraction", "must lie in [0, 1]"));
        }
        if self.outlier_fraction + self.label_noise_fraction > 1.0 {
            return Err(Error::arg(
                "label_noise_fraction",
                "outlier_fraction + label_noise_fraction must not exceed 1",
            ));
        }
        if self.label_noise_fraction > 0.0 && self.num_classes < 2 {
            return Err(Error::arg(
                "label_noise_fraction",
                "label noise needs at least 2 classes",
            ));
        }
        Ok(())
    }

    pub fn noise_std(&self) -> f64 {
        if self.snr.is_infinite() {
            0.0
        } else {
            self.amplitude / self.snr
        }
    }

    pub fn active_channels(&self) -> usize {
        ((self.active_channel_fraction * self.channels as f64).round() as usize)
            .clamp(1, self.channels)
    }

    pub fn outliers_per_class(&self) -> usize {
        (self.outlier_fraction * self.trials_per_class as f64).floor() as usize
    }

    pub fn label_noise_per_class(&self) -> usize {
        (self.label_noise_fraction * self.trials_per_class as f64).floor() as usize
    }

    pub fn outlier_std(&self) -> f64 {
        self.outlier_scale * self.amplitude
    }
}

/// Deterministic per seed.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let n_out = spec.outliers_per_class();
    let n_ln = spec.label_noise_per_class();

    let mut items: Vec<(Trial, Provenance)> =
        Vec::with_capacity(spec.num_classes * spec.trials_per_class);
    for class in 0..spec.num_classes {
        let mut roles = vec![Provenance::Clean; spec.trials_per_class];
        roles[..n_out].fill(Provenance::Outlier);
        roles[n_out..n_out + n_ln].fill(Provenance::LabelNoise);
        rng.shuffle(&mut roles);

        for role in roles {
            let signal = match role {
                Provenance::Clean => clean_signal(spec, class, &mut rng),
                Provenance::Outlier => noise_signal(spec, spec.outlier_std(), &mut rng),
                Provenance::LabelNoise => {
                    let other = (class + 1 + rng.below(spec.num_classes - 1)) % spec.num_classes;
                    clean_signal(spec, other, &mut rng)
                }
            };
            items.push((Trial::new(signal, class), role));
        }
    }
    rng.shuffle(&mut items);

    let (trials, provenance) = items.into_iter().unzip();
    let dataset = Dataset {
        trials,
        num_classes: spec.num_classes,
        sample_rate_hz: spec.sample_rate_hz,
        provenance: Some(provenance),
    };
    dataset.validate()?;
    Ok(dataset)
}

fn clean_signal(spec: &SynthSpec, class: usize, rng: &mut Rng) -> Matrix {
    let freq = spec.class_frequencies_hz[class];
    let phase = spec.phase_jitter * rng.uniform(-PI, PI);
    let mut channels: Vec<usize> = (0..spec.channels).collect();
    rng.shuffle(&mut channels);
    let mut active = vec![false; spec.channels];
    for &c in &channels[..spec.active_channels()] {
        active[c] = true;
    }

    let sigma = spec.noise_std();
    let omega = 2.0 * PI * freq / spec.sample_rate_hz;
    let mut signal = noise_signal(spec, sigma, rng);
    for (c, &on) in active.iter().enumerate() {
        if on {
            for (t, v) in signal.row_mut(c).iter_mut().enumerate() {
                *v += spec.amplitude * (omega * t as f64 + phase).sin();
            }
        }
    }
    signal
}

fn noise_signal(spec: &SynthSpec, sigma: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(spec.channels, spec.time_points, |_, _| {
        sigma * rng.standard_normal()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            trials_per_class: 40,
            time_points: 32,
            channels: 4,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn no_contamination_is_all_clean() {
        let spec = SynthSpec {
            outlier_fraction: 0.0,
            label_noise_fraction: 0.0,
            ..small()
        };
        let d = generate(&spec).unwrap();
        assert!(d
            .provenance
            .unwrap()
            .iter()
            .all(|&p| p == Provenance::Clean));
    }

    #[test]
    fn outlier_counts_per_class() {
        let d = generate(&small()).unwrap();
        let prov = d.provenance.clone().unwrap();
        for class in 0..2 {
            let n = d
                .trials
                .iter()
                .zip(&prov)
                .filter(|(t, &p)| t.label == class && p == Provenance::Outlier)
                .count();
            assert_eq!(n, 8);
        }
        assert_eq!(d.class_counts(), vec![40, 40]);
    }

    #[test]
    fn fractions_round_down() {
        let spec = SynthSpec {
            trials_per_class: 7,
            outlier_fraction: 0.3,
            label_noise_fraction: 0.3,
            ..small()
        };
        let d = generate(&spec).unwrap();
        let prov = d.provenance.unwrap();
        assert_eq!(
            prov.iter().filter(|&&p| p == Provenance::Outlier).count(),
            4
        );
        assert_eq!(
            prov.iter()
                .filter(|&&p| p == Provenance::LabelNoise)
                .count(),
            4
        );
    }

    #[test]
    fn label_noise_has_wrong_frequency() {
        // Noise-free: with two classes a label-noise trial carries the other class's sinusoid.
        let spec = SynthSpec {
            snr: f64::INFINITY,
            phase_jitter: 0.0,
            active_channel_fraction: 1.0,
            outlier_fraction: 0.0,
            label_noise_fraction: 0.5,
            ..small()
        };
        let d = generate(&spec).unwrap();
        let omega =
            |class: usize| 2.0 * PI * spec.class_frequencies_hz[class] / spec.sample_rate_hz;
        for (trial, p) in d.trials.iter().zip(d.provenance.as_ref().unwrap()) {
            let source = match p {
                Provenance::LabelNoise => 1 - trial.label,
                _ => trial.label,
            };
            let expected = spec.amplitude * (omega(source) * 5.0).sin();
            assert!((trial.signal[(0, 5)] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_clean_trials_differ_only_by_phase() {
        let spec = SynthSpec {
            snr: f64::INFINITY,
            active_channel_fraction: 1.0,
            outlier_fraction: 0.0,
            ..small()
        };
        let d = generate(&spec).unwrap();
        let omega = 2.0 * PI * spec.class_frequencies_hz[0] / spec.sample_rate_hz;
        for trial in d.trials.iter().filter(|t| t.label == 0) {
            // Recover the phase from t = 0 and t = 1 and check the whole trial against it.
            let s0 = trial.signal[(0, 0)] / spec.amplitude;
            let s1 = trial.signal[(0, 1)] / spec.amplitude;
            let phase = (s0 * omega.sin()).atan2(s1 - s0 * omega.cos());
            for c in 0..spec.channels {
                for t in 0..spec.time_points {
                    let expected = spec.amplitude * (omega * t as f64 + phase).sin();
                    assert!((trial.signal[(c, t)] - expected).abs() < 1e-9);
                }
            }
            assert!(phase.abs() <= spec.phase_jitter * PI + 1e-9);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthSpec { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn invalid_fractions_name_field() {
        let spec = SynthSpec {
            outlier_fraction: 0.7,
            label_noise_fraction: 0.5,
            ..small()
        };
        match generate(&spec) {
            Err(Error::Argument { field, .. }) => assert_eq!(field, "label_noise_fraction"),
            other => panic!("unexpected {other:?}"),
        }
        let spec = SynthSpec {
            outlier_fraction: -0.1,
            ..small()
        };
        assert!(matches!(
            generate(&spec),
            Err(Error::Argument {
                field: "outlier_fraction",
                ..
            })
        ));
    }
}
