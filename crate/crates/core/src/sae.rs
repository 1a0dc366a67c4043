//! Per-channel stacked autoencoder.
//!
//! One MLP is shared by every channel. The encoder maps a length-`T` channel
//! vector through `T → T/2 → T/4` with ReLU after both layers; the decoder
//! mirrors it back with a ReLU hidden layer and a linear output. A trial's
//! representation stacks the per-channel codes, giving `C × T/4`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Trial};
use crate::error::{Error, Result};
use crate::numerics::{AdamWConfig, AdamWState, Matrix, Rng};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SAEW";
pub const CHECKPOINT_VERSION: u16 = 1;
const LAYERS: usize = 4;

/// Encoded trial, `channels × code_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub encoded: Matrix,
}

impl Representation {
    pub fn channels(&self) -> usize {
        self.encoded.rows()
    }

    pub fn code_width(&self) -> usize {
        self.encoded.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    weight: Matrix,
    bias: Matrix,
}

impl Dense {
    fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            weight: Matrix::from_fn(inputs, outputs, |_, _| rng.uniform(-limit, limit)),
            bias: Matrix::zeros(1, outputs),
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Matrix::zeros(inputs, outputs),
            bias: Matrix::zeros(1, outputs),
        }
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        out.add_row_broadcast(&self.bias)?;
        Ok(out)
    }
}

fn relu(m: &mut Matrix) {
    m.map_inplace(|v| v.max(0.0));
}

/// Zeroes `grad` wherever the post-ReLU activation is not positive.
fn relu_backward(grad: &mut Matrix, activation: &Matrix) {
    for (g, a) in grad.as_mut_slice().iter_mut().zip(activation.as_slice()) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaeModel {
    layers: [Dense; LAYERS],
}

/// Gradients in the same order as [`SaeModel::params`].
#[derive(Clone, Debug)]
pub struct SaeGradients(pub Vec<Matrix>);

struct Activations {
    hidden1: Matrix,
    code: Matrix,
    hidden3: Matrix,
    output: Matrix,
}

impl SaeModel {
    /// Layer widths for a channel length `time_points`: `[T, T/2, T/4, T/2, T]`.
    pub fn widths(time_points: usize) -> [usize; 5] {
        let h = time_points / 2;
        let t = time_points / 4;
        [time_points, h, t, h, time_points]
    }

    /// Uniform ±√(6 / (fan_in + fan_out)) weights, zero biases.
    pub fn new(time_points: usize, rng: &mut Rng) -> Result<Self> {
        Self::check_width(time_points)?;
        let w = Self::widths(time_points);
        Ok(SaeModel {
            layers: std::array::from_fn(|i| Dense::glorot(w[i], w[i + 1], rng)),
        })
    }

    pub fn zeros(time_points: usize) -> Result<Self> {
        Self::check_width(time_points)?;
        let w = Self::widths(time_points);
        Ok(SaeModel {
            layers: std::array::from_fn(|i| Dense::zeros(w[i], w[i + 1])),
        })
    }

    fn check_width(time_points: usize) -> Result<()> {
        if time_points < crate::data::MIN_TIME_POINTS {
            return Err(Error::arg(
                "time_points",
                format!("autoencoder needs at least 4 time points, got {time_points}"),
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn code_width(&self) -> usize {
        self.layers[1].weight.cols()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    fn check_input(&self, rows: &Matrix) -> Result<()> {
        if rows.cols() != self.input_width() {
            return Err(Error::Shape {
                op: "sae_input",
                left: rows.shape(),
                right: (rows.rows(), self.input_width()),
            });
        }
        Ok(())
    }

    fn forward(&self, rows: &Matrix) -> Result<Activations> {
        self.check_input(rows)?;
        let mut hidden1 = self.layers[0].forward(rows)?;
        relu(&mut hidden1);
        let mut code = self.layers[1].forward(&hidden1)?;
        relu(&mut code);
        let mut hidden3 = self.layers[2].forward(&code)?;
        relu(&mut hidden3);
        let output = self.layers[3].forward(&hidden3)?;
        Ok(Activations {
            hidden1,
            code,
            hidden3,
            output,
        })
    }

    /// Encodes each row independently.
    pub fn encode_rows(&self, rows: &Matrix) -> Result<Matrix> {
        self.check_input(rows)?;
        let mut hidden = self.layers[0].forward(rows)?;
        relu(&mut hidden);
        let mut code = self.layers[1].forward(&hidden)?;
        relu(&mut code);
        Ok(code)
    }

    pub fn reconstruct_rows(&self, rows: &Matrix) -> Result<Matrix> {
        Ok(self.forward(rows)?.output)
    }

    /// Channel-by-channel encoding of a trial.
    pub fn encode(&self, trial: &Trial) -> Result<Representation> {
        Ok(Representation {
            encoded: self.encode_rows(&trial.signal)?,
        })
    }

    /// Decoder output `Y` for a trial, `C × T`.
    pub fn reconstruct(&self, trial: &Trial) -> Result<Matrix> {
        self.reconstruct_rows(&trial.signal)
    }

    /// Mean squared reconstruction error over every entry of `rows`.
    pub fn loss_rows(&self, rows: &Matrix) -> Result<f64> {
        let out = self.reconstruct_rows(rows)?;
        Ok(out.sub(rows)?.sum_of_squares() / rows.as_slice().len() as f64)
    }

    /// Mean squared reconstruction error over all `N × C × T` entries.
    pub fn loss(&self, dataset: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for trial in &dataset.trials {
            let y = self.reconstruct(trial)?;
            total += y.sub(&trial.signal)?.sum_of_squares();
            count += trial.signal.as_slice().len();
        }
        Ok(total / count as f64)
    }

    /// Loss and analytic gradients for a batch of channel rows.
    pub fn loss_and_gradients(&self, rows: &Matrix) -> Result<(f64, SaeGradients)> {
        let act = self.forward(rows)?;
        let n = rows.as_slice().len() as f64;
        let mut d_out = act.output.sub(rows)?;
        let loss = d_out.sum_of_squares() / n;
        d_out.scale(2.0 / n);

        let g4w = act.hidden3.t_matmul(&d_out)?;
        let g4b = d_out.column_sums();
        let mut d3 = d_out.matmul_t(&self.layers[3].weight)?;
        relu_backward(&mut d3, &act.hidden3);

        let g3w = act.code.t_matmul(&d3)?;
        let g3b = d3.column_sums();
        let mut d2 = d3.matmul_t(&self.layers[2].weight)?;
        relu_backward(&mut d2, &act.code);

        let g2w = act.hidden1.t_matmul(&d2)?;
        let g2b = d2.column_sums();
        let mut d1 = d2.matmul_t(&self.layers[1].weight)?;
        relu_backward(&mut d1, &act.hidden1);

        let g1w = rows.t_matmul(&d1)?;
        let g1b = d1.column_sums();
        Ok((
            loss,
            SaeGradients(vec![g1w, g1b, g2w, g2b, g3w, g3b, g4w, g4b]),
        ))
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(LAYERS as u32).to_le_bytes())?;
        for layer in &self.layers {
            out.write_all(&(layer.weight.rows() as u32).to_le_bytes())?;
            out.write_all(&(layer.weight.cols() as u32).to_le_bytes())?;
        }
        for p in self.params() {
            for v in p.as_slice() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::Parse {
                    offset: pos,
                    reason: format!("unexpected end of checkpoint reading {what}"),
                });
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                reason: "bad magic, expected \"SAEW\"".into(),
            });
        }
        let version = u16::from_le_bytes(take(2, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = u32::from_le_bytes(take(4, "layer count")?.try_into().unwrap()) as usize;
        if count != LAYERS {
            return Err(Error::Parse {
                offset: 6,
                reason: format!("expected {LAYERS} layers, found {count}"),
            });
        }
        let mut shapes = [(0usize, 0usize); LAYERS];
        for s in &mut shapes {
            let r = u32::from_le_bytes(take(4, "layer shape")?.try_into().unwrap()) as usize;
            let c = u32::from_le_bytes(take(4, "layer shape")?.try_into().unwrap()) as usize;
            *s = (r, c);
        }
        let expected = Self::widths(shapes[0].0);
        for (i, &(r, c)) in shapes.iter().enumerate() {
            if (r, c) != (expected[i], expected[i + 1]) {
                return Err(Error::Parse {
                    offset: 10 + 8 * i,
                    reason: format!(
                        "layer {i} shape {r}x{c} inconsistent with input width {}",
                        expected[0]
                    ),
                });
            }
        }
        let mut model = Self::zeros(shapes[0].0)?;
        for p in model.params_mut() {
            let len = p.as_slice().len();
            let raw = take(len * 8, "parameter block")?;
            for (dst, chunk) in p.as_mut_slice().iter_mut().zip(raw.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if pos != bytes.len() {
            return Err(Error::Parse {
                offset: pos,
                reason: format!("{} trailing bytes", bytes.len() - pos),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(&fs::read(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeConfig {
    pub epochs: usize,
    /// Trials per update; `None` trains full-batch (one update per epoch).
    pub batch_size: Option<usize>,
    pub optimizer: AdamWConfig,
}

impl Default for SaeConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: None,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SaeFit {
    pub model: SaeModel,
    /// Mean training loss observed during each epoch.
    pub loss_history: Vec<f64>,
}

/// Stacks every channel row of the given trials into one matrix.
fn channel_rows(dataset: &Dataset, trials: &[usize]) -> Matrix {
    let t = dataset.time_points();
    let mut data = Vec::with_capacity(trials.len() * dataset.channels() * t);
    for &i in trials {
        data.extend_from_slice(dataset.trials[i].signal.as_slice());
    }
    let rows = data.len() / t;
    Matrix::new(rows, t, data).expect("validated dataset has uniform shape")
}

/// Minimizes the reconstruction MSE with AdamW. Returns the final-epoch weights.
pub fn train_sae(dataset: &Dataset, cfg: &SaeConfig, rng: &mut Rng) -> Result<SaeFit> {
    dataset.validate()?;
    let mut model = SaeModel::new(dataset.time_points(), rng)?;
    let mut opt = AdamWState::new(cfg.optimizer, &model.params());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batch = cfg
        .batch_size
        .unwrap_or(dataset.len())
        .clamp(1, dataset.len());
    let full = channel_rows(dataset, &order);
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        if batch == dataset.len() {
            let (loss, grads) = model.loss_and_gradients(&full)?;
            epoch_loss = loss;
            opt.step(&mut model.params_mut(), &grads.0)?;
        } else {
            rng.shuffle(&mut order);
            for chunk in order.chunks(batch) {
                let rows = channel_rows(dataset, chunk);
                let (loss, grads) = model.loss_and_gradients(&rows)?;
                epoch_loss += loss * chunk.len() as f64 / dataset.len() as f64;
                opt.step(&mut model.params_mut(), &grads.0)?;
            }
        }
        if !epoch_loss.is_finite() || !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        loss_history.push(epoch_loss);
    }
    Ok(SaeFit {
        model,
        loss_history,
    })
}
