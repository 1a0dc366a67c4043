//! Reference implementations written directly from the formulas, with no
//! shared code from the library, plus finite-difference helpers.
#![allow(dead_code)]

use dominance_core::{Matrix, Rng, SaeModel};

pub fn kernel(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `(1 / (n h)) Σ_j K((x − p_j) / h)` by a plain loop.
pub fn density(x: f64, points: &[f64], h: f64) -> f64 {
    let mut acc = 0.0;
    for &p in points {
        acc += kernel((x - p) / h);
    }
    acc / (points.len() as f64 * h)
}

/// Per column, the value whose density among that column is maximal
/// (ties within 1e-12 averaged).
pub fn channel_wise(encoded: &Matrix, h: f64) -> Vec<f64> {
    let (c, t) = encoded.shape();
    let mut out = Vec::with_capacity(t);
    for col in 0..t {
        let column: Vec<f64> = (0..c).map(|r| encoded[(r, col)]).collect();
        let dens: Vec<f64> = column.iter().map(|&v| density(v, &column, h)).collect();
        let mut best = f64::NEG_INFINITY;
        for &d in &dens {
            if d > best {
                best = d;
            }
        }
        let mut sum = 0.0;
        let mut n = 0.0;
        for (v, d) in column.iter().zip(&dens) {
            if best - d <= 1e-12 {
                sum += v;
                n += 1.0;
            }
        }
        out.push(sum / n);
    }
    out
}

/// Mean over positions of each row's density among all rows at that position.
pub fn sample_wise(series: &Matrix, h: f64) -> Vec<f64> {
    let (m, t) = series.shape();
    let mut scores = vec![0.0; m];
    for i in 0..m {
        for col in 0..t {
            let mut acc = 0.0;
            for j in 0..m {
                acc += kernel((series[(i, col)] - series[(j, col)]) / h);
            }
            scores[i] += acc / (m as f64 * h);
        }
        scores[i] /= t as f64;
    }
    scores
}

/// Trapezoid integral of `f` over `[lo, hi]` with `n` intervals.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let dx = (hi - lo) / n as f64;
    let mut acc = 0.5 * (f(lo) + f(hi));
    for k in 1..n {
        acc += f(lo + k as f64 * dx);
    }
    acc * dx
}

/// Worst relative error between `analytic` and central differences of `loss`
/// over every entry of every parameter. Entries where both sides are below
/// `floor` in magnitude are compared against `floor`.
pub fn max_gradient_error<M: Clone>(
    model: &M,
    analytic: &[Matrix],
    params_mut: impl Fn(&mut M) -> Vec<&mut Matrix>,
    loss: impl Fn(&M) -> f64,
    step: f64,
    floor: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (p, grad) in analytic.iter().enumerate() {
        for k in 0..grad.as_slice().len() {
            let original = params_mut(&mut probe)[p].as_slice()[k];
            params_mut(&mut probe)[p].as_mut_slice()[k] = original + step;
            let up = loss(&probe);
            params_mut(&mut probe)[p].as_mut_slice()[k] = original - step;
            let down = loss(&probe);
            params_mut(&mut probe)[p].as_mut_slice()[k] = original;
            let numeric = (up - down) / (2.0 * step);
            let a = grad.as_slice()[k];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Zero-initialized biases put every unit fed by a dead layer exactly on the
/// ReLU kink, where central differences are meaningless. Randomizing them
/// keeps the check on differentiable points.
pub fn off_kink(mut model: SaeModel, rng: &mut Rng) -> SaeModel {
    for (i, p) in model.params_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            for v in p.as_mut_slice() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }
    model
}
