use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::format::{self, Reader, Writer};
use crate::coarse_solver::TraceProvider;
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"NLUP-DS";
const VERSION: u32 = 1;

/// Largest tolerated share of failed draws during generation.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// Input rows are `(S̄^(m), S̄^n)` concatenated; target rows are edge traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub seed: u64,
    pub fingerprint: String,
    /// Draws whose local solves failed and were replaced.
    pub failures: usize,
}

impl TrainingSet {
    pub fn from_rows(inputs: Array2<f64>, targets: Array2<f64>, seed: u64, fingerprint: String) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} input rows but {} target rows",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self {
            inputs,
            targets,
            seed,
            fingerprint,
            failures: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_width(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn target_width(&self) -> usize {
        self.targets.ncols()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.len() as u64);
        w.u64(self.input_width() as u64);
        w.u64(self.target_width() as u64);
        w.u64(self.seed);
        w.u64(self.failures as u64);
        w.string(&self.fingerprint);
        w.f64s(self.inputs.iter());
        w.f64s(self.targets.iter());
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data, "dataset file");
        r.expect_magic(MAGIC, VERSION)?;
        let rows = r.count()?;
        let in_w = r.count()?;
        let out_w = r.count()?;
        let seed = r.u64()?;
        let failures = r.count()?;
        let fingerprint = r.string()?;
        let inputs = Array2::from_shape_vec((rows, in_w), r.f64s(rows * in_w)?).expect("sized");
        let targets = Array2::from_shape_vec((rows, out_w), r.f64s(rows * out_w)?).expect("sized");
        r.finish()?;
        Ok(Self {
            inputs,
            targets,
            seed,
            fingerprint,
            failures,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Writer { buf: self.to_bytes() }.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&format::read(path)?)
    }
}

/// Draws `n_samples` inputs with i.i.d. uniform `[0, 1]` entries and labels
/// them with `provider`. `fixtures` are used verbatim as the first rows.
///
/// Sample `k` uses its own random stream, so the result does not depend on
/// scheduling. A draw whose provider call fails is replaced by a fresh draw
/// from the same stream.
pub fn generate_dataset(
    provider: &dyn TraceProvider,
    n_coarse: usize,
    n_samples: usize,
    seed: u64,
    fingerprint: &str,
    fixtures: &[Vec<f64>],
) -> Result<TrainingSet> {
    if fixtures.len() > n_samples {
        return Err(Error::InvalidArgument(format!(
            "{} fixture rows exceed the {n_samples} requested samples",
            fixtures.len()
        )));
    }
    if let Some(bad) = fixtures.iter().find(|f| f.len() != 2 * n_coarse) {
        return Err(Error::InvalidArgument(format!(
            "fixture row has length {}, expected {}",
            bad.len(),
            2 * n_coarse
        )));
    }
    let max_failures = (MAX_FAILURE_RATE * n_samples as f64).floor() as usize;
    let failures = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            loop {
                let x: Vec<f64> = match fixtures.get(k) {
                    Some(f) => f.clone(),
                    None => (0..2 * n_coarse).map(|_| rng.random::<f64>()).collect(),
                };
                match provider.traces(&x[..n_coarse], &x[n_coarse..]) {
                    Ok(y) => {
                        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                        if n.is_multiple_of(100) || n == n_samples {
                            log::info!("generated {n}/{n_samples} samples");
                        }
                        return Ok((x, y.into_inner()));
                    }
                    Err(e) => {
                        let f = failures.fetch_add(1, Ordering::Relaxed) + 1;
                        log::warn!("sample {k}: provider failed ({e}); redrawing");
                        if f > max_failures || k < fixtures.len() {
                            return Err(e);
                        }
                    }
                }
            }
        })
        .collect();
    let failures = failures.into_inner();
    if failures > max_failures {
        return Err(Error::DatasetFailures {
            failures,
            attempts: n_samples + failures,
        });
    }
    let mut inputs = Vec::with_capacity(n_samples * 2 * n_coarse);
    let mut targets = Vec::new();
    let mut width = None;
    for row in rows {
        let (x, y) = row?;
        if *width.get_or_insert(y.len()) != y.len() {
            return Err(Error::Internal("provider returned traces of varying length".into()));
        }
        inputs.extend(x);
        targets.extend(y);
    }
    let width = width.unwrap_or(0);
    if failures > 0 {
        log::warn!("{failures} draws failed and were replaced");
    }
    let mut set = TrainingSet::from_rows(
        Array2::from_shape_vec((n_samples, 2 * n_coarse), inputs).expect("sized"),
        Array2::from_shape_vec((n_samples, width), targets).expect("sized"),
        seed,
        fingerprint.to_string(),
    )?;
    set.failures = failures;
    Ok(set)
}
