//! Univariate kernel density estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 / √(2π)`
pub const GAUSSIAN_PEAK: f64 = 0.398_942_280_401_432_7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Gaussian,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => gaussian_kernel(u),
        }
    }

    /// Value at zero, which bounds the kernel from above.
    pub fn peak(self) -> f64 {
        match self {
            Kernel::Gaussian => GAUSSIAN_PEAK,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Use `KdeConfig::bandwidth` as is.
    #[default]
    Fixed,
    /// Silverman's rule of thumb per point set; falls back to the fixed
    /// bandwidth when the set has zero spread.
    Silverman,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdeConfig {
    pub kernel: Kernel,
    pub bandwidth: f64,
    pub bandwidth_rule: BandwidthRule,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Gaussian,
            bandwidth: 3.0,
            bandwidth_rule: BandwidthRule::Fixed,
        }
    }
}

impl KdeConfig {
    pub fn fixed(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::arg(
                "bandwidth",
                format!("must be positive and finite, got {}", self.bandwidth),
            ));
        }
        Ok(())
    }

    /// Bandwidth used for a particular point set.
    pub fn bandwidth_for(&self, points: &[f64]) -> Result<f64> {
        self.validate()?;
        match self.bandwidth_rule {
            BandwidthRule::Fixed => Ok(self.bandwidth),
            BandwidthRule::Silverman => match silverman_bandwidth(points) {
                Ok(h) => Ok(h),
                Err(Error::Degenerate(_)) | Err(Error::Argument { .. }) => Ok(self.bandwidth),
                Err(e) => Err(e),
            },
        }
    }
}

/// Standard normal density.
pub fn gaussian_kernel(u: f64) -> f64 {
    GAUSSIAN_PEAK * (-0.5 * u * u).exp()
}

/// `(1 / (n·h)) · Σᵢ K((query − pᵢ) / h)`
pub fn kde_density(query: f64, points: &[f64], cfg: &KdeConfig) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::arg("points", "density needs at least one point"));
    }
    let h = cfg.bandwidth_for(points)?;
    Ok(density_with(query, points, cfg.kernel, h))
}

fn density_with(query: f64, points: &[f64], kernel: Kernel, h: f64) -> f64 {
    let inv_h = 1.0 / h;
    let sum: f64 = points
        .iter()
        .map(|&p| kernel.eval((query - p) * inv_h))
        .sum();
    sum / (points.len() as f64 * h)
}

/// `1.06 · σ̂ · n^(−1/5)` with σ̂ the sample standard deviation.
pub fn silverman_bandwidth(points: &[f64]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::arg(
            "points",
            "Silverman bandwidth needs at least 2 points",
        ));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<f64>() / n;
    let var = points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate(format!(
            "{} points with zero variance",
            points.len()
        )));
    }
    Ok(1.06 * var.sqrt() * n.powf(-0.2))
}

/// Density of every point against the full set, itself included.
pub fn density_at_points(points: &[f64], cfg: &KdeConfig) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::arg("points", "density needs at least one point"));
    }
    let h = cfg.bandwidth_for(points)?;
    Ok(points
        .iter()
        .map(|&q| density_with(q, points, cfg.kernel, h))
        .collect())
}
