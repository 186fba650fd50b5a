use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::TrainingSet;
use super::mlp::{MlpModel, ValidationMetrics};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Floor added to the infinity-norm accumulator.
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 200,
            validation_fraction: 0.1,
            shuffle_seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                v.push(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            v.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            v.push(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        v
    }
}

/// Per-epoch mean squared error per target entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub train_mse: Vec<f64>,
    pub validation_mse: Vec<f64>,
}

/// Deterministic train/validation split of `0..n`.
pub fn split_indices(n: usize, validation_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut n_val = (validation_fraction * n as f64).round() as usize;
    if validation_fraction > 0.0 && n > 1 {
        n_val = n_val.clamp(1, n - 1);
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Mean squared error per entry and mean per-column variance of `y`.
pub fn evaluate(model: &MlpModel, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<ValidationMetrics> {
    let mut sse = 0.0;
    let chunk = 256;
    for start in (0..x.nrows()).step_by(chunk) {
        let end = (start + chunk).min(x.nrows());
        let pred = model.forward_batch(x.slice(ndarray::s![start..end, ..]))?;
        sse += (&pred - &y.slice(ndarray::s![start..end, ..])).iter().map(|d| d * d).sum::<f64>();
    }
    let entries = (y.nrows() * y.ncols()) as f64;
    let mean = y.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(y.ncols()));
    let var = (&y - &mean).iter().map(|d| d * d).sum::<f64>() / entries;
    Ok(ValidationMetrics {
        validation_mse: sse / entries,
        target_variance: var,
    })
}

struct AdaMax {
    m_w: Vec<Array2<f64>>,
    u_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    u_b: Vec<Array1<f64>>,
    t: i32,
}

impl AdaMax {
    fn new(model: &MlpModel) -> Self {
        Self {
            m_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            u_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            u_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &super::mlp::Gradients, cfg: &TrainerConfig) {
        self.t += 1;
        let rate = cfg.learning_rate / (1.0 - cfg.beta1.powi(self.t));
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
        let update = |theta: &mut f64, m: &mut f64, u: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *u = (b2 * *u).max(g.abs());
            *theta -= rate * *m / (*u + eps);
        };
        for l in 0..model.num_layers() {
            ndarray::Zip::from(&mut model.weights[l])
                .and(&mut self.m_w[l])
                .and(&mut self.u_w[l])
                .and(&grads.weights[l])
                .for_each(|t, m, u, &g| update(t, m, u, g));
            ndarray::Zip::from(&mut model.biases[l])
                .and(&mut self.m_b[l])
                .and(&mut self.u_b[l])
                .and(&grads.biases[l])
                .for_each(|t, m, u, &g| update(t, m, u, g));
        }
    }
}

/// Mini-batch AdaMax on the training part of `set`; the held-out part is
/// scored after every epoch and stored as the model's metrics at the end.
pub fn train(mut model: MlpModel, set: &TrainingSet, cfg: &TrainerConfig) -> Result<(MlpModel, TrainingHistory)> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    if set.input_width() != model.input_size() || set.target_width() != model.output_size() {
        return Err(Error::InvalidArgument(format!(
            "dataset widths ({}, {}) do not match model sizes {:?}",
            set.input_width(),
            set.target_width(),
            model.layer_sizes
        )));
    }
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let (mut train_idx, val_idx) = split_indices(set.len(), cfg.validation_fraction, &mut rng);
    let x_val = set.inputs.select(Axis(0), &val_idx);
    let y_val = set.targets.select(Axis(0), &val_idx);
    let outputs = model.output_size() as f64;

    let mut opt = AdaMax::new(&model);
    let mut history = TrainingHistory::default();
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut sse = 0.0;
        for (batch, rows) in train_idx.chunks(cfg.batch_size).enumerate() {
            let xb = set.inputs.select(Axis(0), rows);
            let yb = set.targets.select(Axis(0), rows);
            let (loss, grads) = model.loss_and_gradient(xb.view(), yb.view())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch, loss });
            }
            sse += loss * rows.len() as f64;
            opt.step(&mut model, &grads, cfg);
        }
        history.train_mse.push(sse / (train_idx.len() as f64 * outputs));
        if !val_idx.is_empty() {
            let m = evaluate(&model, x_val.view(), y_val.view())?;
            history.validation_mse.push(m.validation_mse);
        }
        log::debug!(
            "epoch {}: train {:.4e} validation {:.4e}",
            epoch + 1,
            history.train_mse[epoch],
            history.validation_mse.last().copied().unwrap_or(f64::NAN)
        );
    }
    model.shuffle_seed = cfg.shuffle_seed;
    model.metrics = if val_idx.is_empty() {
        None
    } else {
        Some(evaluate(&model, x_val.view(), y_val.view())?)
    };
    Ok((model, history))
}
