use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// One-hidden-layer softmax network over flattened `channels × window` inputs.
///
/// Inputs are standardized with a single mean and scale fitted on the training
/// set before the first layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub channels: usize,
    pub window: usize,
    pub num_classes: usize,
    pub input_mean: f64,
    pub input_scale: f64,
    pub(crate) w1: Matrix,
    pub(crate) b1: Matrix,
    pub(crate) w2: Matrix,
    pub(crate) b2: Matrix,
}

/// Gradients ordered as [`ClassifierModel::params`].
#[derive(Clone, Debug)]
pub struct ClassifierGradients(pub Vec<Matrix>);

impl ClassifierModel {
    pub fn new(
        channels: usize,
        window: usize,
        hidden: usize,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if channels == 0 || window == 0 || hidden == 0 || num_classes == 0 {
            return Err(Error::arg(
                "classifier",
                format!("all dimensions must be positive: {channels}x{window}, hidden {hidden}, {num_classes} classes"),
            ));
        }
        let inputs = channels * window;
        let glorot = |rng: &mut Rng, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform(-limit, limit))
        };
        Ok(Self {
            channels,
            window,
            num_classes,
            input_mean: 0.0,
            input_scale: 1.0,
            w1: glorot(rng, inputs, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: glorot(rng, hidden, num_classes),
            b2: Matrix::zeros(1, num_classes),
        })
    }

    pub fn input_width(&self) -> usize {
        self.channels * self.window
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.cols()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Flattens and standardizes signals (each `channels × window`) into rows.
    pub fn prepare_inputs<'a>(
        &self,
        signals: impl IntoIterator<Item = &'a Matrix>,
    ) -> Result<Matrix> {
        let mut data = Vec::new();
        let mut rows = 0;
        for s in signals {
            if s.shape() != (self.channels, self.window) {
                return Err(Error::Shape {
                    op: "classifier_input",
                    left: s.shape(),
                    right: (self.channels, self.window),
                });
            }
            data.extend(
                s.as_slice()
                    .iter()
                    .map(|v| (v - self.input_mean) / self.input_scale),
            );
            rows += 1;
        }
        Matrix::new(rows, self.input_width(), data)
    }

    fn hidden(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_width() {
            return Err(Error::Shape {
                op: "classifier_forward",
                left: inputs.shape(),
                right: (inputs.rows(), self.input_width()),
            });
        }
        let mut h = inputs.matmul(&self.w1)?;
        h.add_row_broadcast(&self.b1)?;
        h.map_inplace(|v| v.max(0.0));
        Ok(h)
    }

    /// Pre-softmax outputs for prepared input rows.
    pub fn logits(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut z = self.hidden(inputs)?.matmul(&self.w2)?;
        z.add_row_broadcast(&self.b2)?;
        Ok(z)
    }

    /// Row-wise class probabilities for prepared input rows.
    pub fn probabilities(&self, inputs: &Matrix) -> Result<Matrix> {
        let mut z = self.logits(inputs)?;
        for r in 0..z.rows() {
            softmax_inplace(z.row_mut(r));
        }
        Ok(z)
    }

    /// Mean weighted cross-entropy over the batch and its analytic gradients.
    ///
    /// The per-row logit gradient is `weight · (softmax − one_hot) / batch`.
    pub fn loss_and_gradients(
        &self,
        inputs: &Matrix,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<(LossTally, ClassifierGradients)> {
        check_batch(inputs, labels, weights, self.num_classes)?;
        let hidden = self.hidden(inputs)?;
        let mut probs = hidden.matmul(&self.w2)?;
        probs.add_row_broadcast(&self.b2)?;
        let n = inputs.rows() as f64;

        let mut tally = LossTally::default();
        for r in 0..probs.rows() {
            let row = probs.row_mut(r);
            softmax_inplace(row);
            tally.add(row, labels[r], weights[r]);
            // Turn probabilities into the logit gradient in place.
            row[labels[r]] -= 1.0;
            for v in row.iter_mut() {
                *v *= weights[r] / n;
            }
        }
        tally.total /= n;
        let d_logits = probs;

        let gw2 = hidden.t_matmul(&d_logits)?;
        let gb2 = d_logits.column_sums();
        let mut d_hidden = d_logits.matmul_t(&self.w2)?;
        for (g, h) in d_hidden.as_mut_slice().iter_mut().zip(hidden.as_slice()) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        let gw1 = inputs.t_matmul(&d_hidden)?;
        let gb1 = d_hidden.column_sums();
        Ok((tally, ClassifierGradients(vec![gw1, gb1, gw2, gb2])))
    }
}

fn check_batch(inputs: &Matrix, labels: &[usize], weights: &[f64], classes: usize) -> Result<()> {
    if labels.len() != inputs.rows() || weights.len() != inputs.rows() {
        return Err(Error::arg(
            "batch",
            format!(
                "{} input rows, {} labels, {} weights",
                inputs.rows(),
                labels.len(),
                weights.len()
            ),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::arg(
            "labels",
            format!("label {bad} out of range for {classes} classes"),
        ));
    }
    Ok(())
}

/// Numerically stable in-place softmax.
pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `−gamma · ln(probs[label])`, with the probability clamped at [`LOG_CLAMP`].
pub fn weighted_ce_loss(probs: &[f64], label: usize, gamma: f64) -> f64 {
    -gamma * probs[label].max(LOG_CLAMP).ln()
}

/// Running sum of weighted cross-entropy terms and how many needed clamping.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTally {
    pub total: f64,
    pub clamped: usize,
}

impl LossTally {
    pub fn add(&mut self, probs: &[f64], label: usize, gamma: f64) {
        if probs[label] < LOG_CLAMP {
            self.clamped += 1;
        }
        self.total += weighted_ce_loss(probs, label, gamma);
    }
}

/// Mean weighted cross-entropy of a batch of prepared rows.
pub fn batch_loss(
    model: &ClassifierModel,
    inputs: &Matrix,
    labels: &[usize],
    weights: &[f64],
) -> Result<f64> {
    check_batch(inputs, labels, weights, model.num_classes)?;
    let probs = model.probabilities(inputs)?;
    let mut tally = LossTally::default();
    for r in 0..probs.rows() {
        tally.add(probs.row(r), labels[r], weights[r]);
    }
    Ok(tally.total / inputs.rows().max(1) as f64)
}
