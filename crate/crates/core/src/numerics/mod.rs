//! Dense matrices, the seeded PRNG, and the AdamW optimizer shared by the
//! autoencoder and the classifier.

mod adamw;
mod matrix;
mod rng;

pub use adamw::{AdamWConfig, AdamWState};
pub use matrix::Matrix;
pub use rng::{derive_seed, gaussian_noise, Rng};

/// Sample standard deviation (n − 1 denominator). Zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
