use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Held-out statistics recorded at the end of training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationMetrics {
    /// Mean squared error per target entry.
    pub validation_mse: f64,
    /// Mean over output columns of the per-column target variance.
    pub target_variance: f64,
}

impl ValidationMetrics {
    pub fn r_squared(&self) -> f64 {
        1.0 - self.validation_mse / self.target_variance
    }

    pub fn passes_gate(&self) -> bool {
        self.validation_mse.is_finite() && self.validation_mse <= 0.1 * self.target_variance
    }
}

/// Fully connected network with ReLU hidden layers and an identity output.
///
/// `weights[l]` has shape `(layer_sizes[l + 1], layer_sizes[l])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub fingerprint: String,
    pub metrics: Option<ValidationMetrics>,
}

/// Parameter gradients, shaped like the model's parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an MLP needs at least an input and an output layer, got sizes {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("layer sizes must be positive, got {layer_sizes:?}")));
    }
    Ok(())
}

impl MlpModel {
    /// He initialization: weights `~ N(0, 2/fan_in)`, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::Internal(e.to_string()))?;
            weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(&mut rng)));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            init_seed: seed,
            shuffle_seed: 0,
            fingerprint: String::new(),
            metrics: None,
        })
    }

    /// All parameters zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        let mut model = Self::init(layer_sizes, 0)?;
        for w in &mut model.weights {
            w.fill(0.0);
        }
        Ok(model)
    }

    /// Builds a model from explicit parameters, checking shapes.
    pub fn from_parameters(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *layer_sizes.last().unwrap() || b.len() != w.nrows() {
                return Err(Error::InvalidArgument(format!(
                    "layer {l}: weight {:?} and bias {} do not chain",
                    w.dim(),
                    b.len()
                )));
            }
            layer_sizes.push(w.nrows());
        }
        check_sizes(&layer_sizes)?;
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            init_seed: 0,
            shuffle_seed: 0,
            fingerprint: String::new(),
            metrics: None,
        })
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Evaluates the network on one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(Error::InvalidArgument(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.input_size()
            )));
        }
        let last = self.num_layers() - 1;
        let mut a = Array1::from(x.to_vec());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w.dot(&a) + b;
            if l < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a.into_raw_vec_and_offset().0)
    }

    /// Evaluates the network on every row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_size() {
            return Err(Error::InvalidArgument(format!(
                "input has width {}, model expects {}",
                x.ncols(),
                self.input_size()
            )));
        }
        let mut a = x.to_owned();
        let last = self.num_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = a.dot(&w.t()) + b;
            if l < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a)
    }

    /// Batch loss `(1/B) Σ_j ‖y_j − N(x_j)‖²` and its parameter gradients.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        let batch = x.nrows();
        if batch == 0 || y.nrows() != batch {
            return Err(Error::InvalidArgument(format!(
                "batch has {} inputs and {} targets",
                batch,
                y.nrows()
            )));
        }
        if x.ncols() != self.input_size() || y.ncols() != self.output_size() {
            return Err(Error::InvalidArgument(format!(
                "batch widths ({}, {}) do not match model ({}, {})",
                x.ncols(),
                y.ncols(),
                self.input_size(),
                self.output_size()
            )));
        }
        let last = self.num_layers() - 1;
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.num_layers() + 1);
        activations.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[l].dot(&w.t()) + b;
            if l < last {
                z.mapv_inplace(relu);
            }
            activations.push(z);
        }
        let mut delta = &activations[self.num_layers()] - &y;
        let loss = delta.iter().map(|d| d * d).sum::<f64>() / batch as f64;
        delta *= 2.0 / batch as f64;

        let mut gw = Vec::with_capacity(self.num_layers());
        let mut gb = Vec::with_capacity(self.num_layers());
        for l in (0..self.num_layers()).rev() {
            gw.push(delta.t().dot(&activations[l]));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l]);
                // Hidden activations are ReLU outputs, so `a > 0` iff `z > 0`.
                ndarray::Zip::from(&mut back)
                    .and(&activations[l])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        Ok((loss, Gradients { weights: gw, biases: gb }))
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}
