//! MLP surrogate for the edge-trace map `(S̄^(m), S̄^n) → ψ|_edges`.

mod dataset;
mod format;
mod mlp;
mod train;

use std::path::Path;

use ndarray::{Array1, Array2};

pub use dataset::{generate_dataset, TrainingSet, MAX_FAILURE_RATE};
pub use mlp::{Gradients, MlpModel, ValidationMetrics};
pub use train::{evaluate, split_indices, train, TrainerConfig, TrainingHistory};

use crate::coarse_solver::TraceProvider;
use crate::error::{Error, Result};
use crate::fields::EdgeTraces;
use crate::physics::TransportProblem;

use format::{Reader, Writer};

const MODEL_MAGIC: &[u8] = b"NLUP-MLP";
const MODEL_VERSION: u32 = 1;

/// Identifies the problem a dataset or model belongs to: velocity, mesh,
/// time step, flux function and the oversampling of the labeling provider.
pub fn problem_fingerprint(problem: &TransportProblem, plus_layers: usize, plusplus_layers: usize) -> String {
    let m = &problem.mesh;
    format!(
        "velocity={};mesh={}x{}x{};dt={};flux={};oversample={},{}",
        problem.velocity.name(),
        m.nx,
        m.ny,
        m.refine,
        problem.dt,
        problem.flux.name(),
        plus_layers,
        plusplus_layers
    )
}

/// `[2N_K, h, h, Σ_E n_E]` for a problem's mesh with `hidden_factor · N_K`
/// hidden units per layer.
pub fn default_layer_sizes(problem: &TransportProblem, hidden_factor: usize) -> Vec<usize> {
    let nk = problem.mesh.num_coarse();
    vec![2 * nk, hidden_factor * nk, hidden_factor * nk, problem.mesh.num_trace_slots()]
}

impl MlpModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.u32(self.layer_sizes.len() as u32);
        for &s in &self.layer_sizes {
            w.u64(s as u64);
        }
        w.u64(self.init_seed);
        w.u64(self.shuffle_seed);
        w.string(&self.fingerprint);
        match self.metrics {
            Some(m) => {
                w.u32(1);
                w.f64s([m.validation_mse, m.target_variance].iter());
            }
            None => w.u32(0),
        }
        for (wl, bl) in self.weights.iter().zip(&self.biases) {
            w.f64s(wl.iter());
            w.f64s(bl.iter());
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data, "model file");
        r.expect_magic(MODEL_MAGIC, MODEL_VERSION)?;
        let count = r.u32()? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Format(format!("model file: implausible layer count {count}")));
        }
        let sizes = (0..count).map(|_| r.count()).collect::<Result<Vec<_>>>()?;
        let init_seed = r.u64()?;
        let shuffle_seed = r.u64()?;
        let fingerprint = r.string()?;
        let metrics = match r.u32()? {
            0 => None,
            1 => Some(ValidationMetrics {
                validation_mse: r.f64()?,
                target_variance: r.f64()?,
            }),
            t => return Err(Error::Format(format!("model file: bad metrics tag {t}"))),
        };
        let mut weights = Vec::with_capacity(count - 1);
        let mut biases = Vec::with_capacity(count - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let n = fan_in
                .checked_mul(fan_out)
                .ok_or_else(|| Error::Format("model file: size overflow".into()))?;
            weights.push(Array2::from_shape_vec((fan_out, fan_in), r.f64s(n)?).expect("sized"));
            biases.push(Array1::from(r.f64s(fan_out)?));
        }
        r.finish()?;
        let mut model = MlpModel::from_parameters(weights, biases).map_err(|e| Error::Format(e.to_string()))?;
        model.init_seed = init_seed;
        model.shuffle_seed = shuffle_seed;
        model.fingerprint = fingerprint;
        model.metrics = metrics;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Writer { buf: self.to_bytes() }.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&format::read(path)?)
    }

    /// Compares the stored fingerprint with `expected`: a warning normally,
    /// an error when `strict`.
    pub fn check_fingerprint(&self, expected: &str, strict: bool) -> Result<()> {
        if self.fingerprint == expected {
            return Ok(());
        }
        let msg = format!(
            "model fingerprint '{}' does not match the run's '{}'",
            self.fingerprint, expected
        );
        if strict {
            return Err(Error::Config(msg));
        }
        log::warn!("{msg}");
        Ok(())
    }

    /// Requires recorded held-out metrics with `MSE ≤ 0.1 · variance`.
    pub fn check_quality_gate(&self) -> Result<()> {
        match self.metrics {
            Some(m) if m.passes_gate() => Ok(()),
            Some(m) => Err(Error::QualityGate {
                validation_mse: m.validation_mse,
                target_variance: m.target_variance,
            }),
            None => Err(Error::QualityGate {
                validation_mse: f64::NAN,
                target_variance: f64::NAN,
            }),
        }
    }
}

/// Trace provider backed by a trained network.
#[derive(Debug, Clone)]
pub struct NnTraceProvider {
    model: MlpModel,
}

impl NnTraceProvider {
    pub fn new(model: MlpModel, problem: &TransportProblem) -> Result<Self> {
        let inputs = 2 * problem.mesh.num_coarse();
        let outputs = problem.mesh.num_trace_slots();
        if model.input_size() != inputs || model.output_size() != outputs {
            return Err(Error::Config(format!(
                "model maps {} inputs to {} outputs, but the mesh needs {inputs} to {outputs}",
                model.input_size(),
                model.output_size()
            )));
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }
}

impl TraceProvider for NnTraceProvider {
    fn name(&self) -> &str {
        "nn"
    }

    fn traces(&self, iterate: &[f64], previous: &[f64]) -> Result<EdgeTraces> {
        let x: Vec<f64> = iterate.iter().chain(previous).copied().collect();
        let outside = x.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        if outside > 0 {
            log::debug!("{outside} surrogate inputs lie outside [0, 1]; passed through unclamped");
        }
        Ok(self.model.forward(&x)?.into())
    }
}
