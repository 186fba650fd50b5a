//! End-to-end orchestration shared by the CLI and the acceptance suite.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bench::{self, ProviderRun, RunReport};
use crate::coarse_solver::{run_coarse, TraceProvider};
use crate::config::{RunConfig, SeedStream};
use crate::downscale::ExactTraceProvider;
use crate::error::{Error, Result};
use crate::fields::CellAverages;
use crate::fine_solver::solve_reference;
use crate::physics::TransportProblem;
use crate::surrogate::{self, MlpModel, NnTraceProvider, TrainingHistory, TrainingSet};

pub struct Pipeline {
    pub cfg: RunConfig,
    pub problem: TransportProblem,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `step,cell,i,j,value` rows for a trajectory of averages.
pub fn averages_csv(hash: &str, nx: usize, averages: &[CellAverages]) -> String {
    let mut s = format!("# config_hash: {hash}\nstep,cell,i,j,value\n");
    for (step, a) in averages.iter().enumerate() {
        for (c, v) in a.iter().enumerate() {
            writeln!(s, "{step},{c},{},{},{v}", c % nx, c / nx).unwrap();
        }
    }
    s
}

/// Inverse of [`averages_csv`]; returns the hash line and the trajectory.
pub fn parse_averages_csv(text: &str, n_cells: usize) -> Result<(String, Vec<CellAverages>)> {
    let mut hash = String::new();
    let mut steps: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if let Some(h) = line.strip_prefix("# config_hash: ") {
            hash = h.trim().to_string();
            continue;
        }
        if line.starts_with('#') || line.starts_with("step") || line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("averages file line {}: '{line}'", k + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad());
        }
        let step: usize = fields[0].parse().map_err(|_| bad())?;
        let cell: usize = fields[1].parse().map_err(|_| bad())?;
        let value: f64 = fields[4].parse().map_err(|_| bad())?;
        if step == steps.len() {
            steps.push(Vec::with_capacity(n_cells));
        }
        if step + 1 != steps.len() || cell != steps[step].len() || cell >= n_cells {
            return Err(bad());
        }
        steps[step].push(value);
    }
    if steps.is_empty() || steps.iter().any(|s| s.len() != n_cells) {
        return Err(Error::Format("averages file is incomplete".into()));
    }
    Ok((hash, steps.into_iter().map(CellAverages).collect()))
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let problem = cfg.problem()?;
        Ok(Self { cfg, problem })
    }

    pub fn out(&self, relative: &str) -> PathBuf {
        self.cfg.output_path(relative)
    }

    pub fn fingerprint(&self) -> String {
        surrogate::problem_fingerprint(&self.problem, self.cfg.oversample.plus, self.cfg.oversample.plusplus)
    }

    fn reference_path(&self) -> PathBuf {
        self.out(&format!("reference-{}.csv", &self.cfg.reference_hash()[..16]))
    }

    /// Coarse means of the fine reference at steps `0..=n_steps`, computed
    /// once per reference hash and cached under the output directory.
    pub fn reference(&self) -> Result<Vec<CellAverages>> {
        let path = self.reference_path();
        let hash = self.cfg.reference_hash();
        if let Ok(text) = fs::read_to_string(&path) {
            match parse_averages_csv(&text, self.problem.mesh.num_coarse()) {
                Ok((h, traj)) if h == hash && traj.len() == self.cfg.problem.n_steps + 1 => return Ok(traj),
                _ => log::warn!("ignoring stale reference cache {}", path.display()),
            }
        }
        log::info!("computing fine reference ({} fine cells)", self.problem.mesh.num_fine());
        let traj = solve_reference(&self.problem, self.cfg.problem.n_steps, &self.cfg.newton())?;
        write_text(&path, &averages_csv(&hash, self.problem.mesh.nx, &traj.averages))?;
        Ok(traj.averages)
    }

    pub fn exact_provider(&self) -> Result<ExactTraceProvider<'_>> {
        ExactTraceProvider::new(&self.problem, &self.cfg.downscale()?)
    }

    /// Labels `n_samples` random inputs with the exact provider.
    pub fn generate_dataset(&self) -> Result<TrainingSet> {
        let exact = self.exact_provider()?;
        let nk = self.problem.mesh.num_coarse();
        let set = surrogate::generate_dataset(
            &exact,
            nk,
            self.cfg.surrogate.n_samples,
            self.cfg.seed_for(SeedStream::Dataset),
            &self.fingerprint(),
            &[],
        )?;
        set.save(&self.out(&self.cfg.surrogate.dataset))?;
        Ok(set)
    }

    /// Loads the configured dataset if it matches seed and fingerprint,
    /// otherwise generates it.
    pub fn dataset(&self) -> Result<TrainingSet> {
        let path = self.out(&self.cfg.surrogate.dataset);
        if path.exists() {
            let set = TrainingSet::load(&path)?;
            if set.seed == self.cfg.seed_for(SeedStream::Dataset)
                && set.fingerprint == self.fingerprint()
                && set.len() == self.cfg.surrogate.n_samples
            {
                return Ok(set);
            }
            log::warn!("dataset {} does not match the configuration; regenerating", path.display());
        }
        self.generate_dataset()
    }

    /// Trains a fresh model on `set` and writes it with its loss history.
    pub fn train(&self, set: &TrainingSet) -> Result<(MlpModel, TrainingHistory)> {
        if set.fingerprint != self.fingerprint() {
            let msg = format!(
                "dataset fingerprint '{}' does not match the run's '{}'",
                set.fingerprint,
                self.fingerprint()
            );
            if self.cfg.strict {
                return Err(Error::Config(msg));
            }
            log::warn!("{msg}");
        }
        let sizes = self.cfg.layer_sizes(&self.problem);
        let model = MlpModel::init(&sizes, self.cfg.seed_for(SeedStream::Init))?;
        let trainer = self.cfg.trainer(self.cfg.seed_for(SeedStream::Shuffle));
        let (mut model, history) = surrogate::train(model, set, &trainer)?;
        model.fingerprint = set.fingerprint.clone();
        let path = self.out(&self.cfg.surrogate.model);
        model.save(&path)?;
        let mut log = format!("# config_hash: {}\nepoch,train_mse,validation_mse\n", self.cfg.hash());
        for (k, t) in history.train_mse.iter().enumerate() {
            let v = history.validation_mse.get(k).copied().unwrap_or(f64::NAN);
            writeln!(log, "{},{t},{v}", k + 1).unwrap();
        }
        write_text(&path.with_extension("history.csv"), &log)?;
        if let Some(m) = model.metrics {
            log::info!(
                "validation MSE {:.4e}, target variance {:.4e}, R² {:.4}",
                m.validation_mse,
                m.target_variance,
                m.r_squared()
            );
        }
        Ok((model, history))
    }

    /// The configured model file if it was trained for this configuration,
    /// otherwise a model trained on [`Pipeline::dataset`].
    pub fn model(&self) -> Result<MlpModel> {
        let path = self.out(&self.cfg.surrogate.model);
        if path.exists() {
            let m = MlpModel::load(&path)?;
            if m.fingerprint == self.fingerprint()
                && m.layer_sizes == self.cfg.layer_sizes(&self.problem)
                && m.init_seed == self.cfg.seed_for(SeedStream::Init)
                && m.shuffle_seed == self.cfg.seed_for(SeedStream::Shuffle)
            {
                return Ok(m);
            }
            log::warn!("model {} does not match the configuration; retraining", path.display());
        }
        let set = self.dataset()?;
        Ok(self.train(&set)?.0)
    }

    /// Loads a model for inference, applying the fingerprint policy and the
    /// quality gate (skipped with `force`).
    pub fn nn_provider(&self, model_path: Option<&Path>, force: bool) -> Result<NnTraceProvider> {
        let path = model_path.map_or_else(|| self.out(&self.cfg.surrogate.model), Path::to_path_buf);
        let model = MlpModel::load(&path)?;
        model.check_fingerprint(&self.fingerprint(), self.cfg.strict)?;
        if let Err(e) = model.check_quality_gate() {
            if !force {
                return Err(e);
            }
            log::warn!("{e}; continuing because of --force");
        }
        NnTraceProvider::new(model, &self.problem)
    }

    /// Advances the configured initial state with one provider and writes
    /// `solve_<provider>.csv` and `solve_<provider>_log.csv`.
    pub fn solve(&self, provider: &dyn TraceProvider) -> Result<Vec<CellAverages>> {
        let (_, s0) = self.problem.project_initial();
        let traj = run_coarse(&self.problem, provider, &s0, self.cfg.problem.n_steps, &self.cfg.fixed_point()?)?;
        let hash = self.cfg.hash();
        let name = provider.name();
        write_text(
            &self.out(&format!("solve_{name}.csv")),
            &averages_csv(&hash, self.problem.mesh.nx, &traj.averages),
        )?;
        let mut log = format!("# config_hash: {hash}\nstep,iterations,seconds\n");
        for (k, s) in traj.steps.iter().enumerate() {
            writeln!(log, "{},{},{}", k + 1, s.iterations, s.seconds).unwrap();
        }
        write_text(&self.out(&format!("solve_{name}_log.csv")), &log)?;
        Ok(traj.averages)
    }

    pub fn solve_baseline(&self) -> Result<Vec<CellAverages>> {
        let (_, s0) = self.problem.project_initial();
        let mut traj = vec![s0];
        let newton = self.cfg.newton();
        for _ in 0..self.cfg.problem.n_steps {
            traj.push(bench::baseline_step(&self.problem, traj.last().unwrap(), &newton)?.0);
        }
        write_text(
            &self.out(&format!("solve_{}.csv", bench::BASELINE)),
            &averages_csv(&self.cfg.hash(), self.problem.mesh.nx, &traj),
        )?;
        Ok(traj)
    }

    /// Compares the named providers (`exact`, `nn`, `baseline`) against the
    /// reference and writes the report files under `report_dir`.
    pub fn compare(&self, providers: &[String], model_path: Option<&Path>, force: bool) -> Result<RunReport> {
        let reference = self.reference()?;
        let fp = self.cfg.fixed_point()?;
        let newton = self.cfg.newton();
        let mut runs: Vec<ProviderRun> = Vec::new();
        for name in providers {
            let run = match name.as_str() {
                "exact" => bench::run_provider(&self.problem, &self.exact_provider()?, &reference, &fp)?,
                "nn" => bench::run_provider(&self.problem, &self.nn_provider(model_path, force)?, &reference, &fp)?,
                "baseline" => bench::run_baseline(&self.problem, &reference, &newton)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown provider '{other}' (expected exact, nn or baseline)"
                    )))
                }
            };
            runs.push(run);
        }
        let report = RunReport {
            config_hash: self.cfg.hash(),
            seeds: vec![
                ("global".into(), self.cfg.seed),
                ("dataset".into(), self.cfg.seed_for(SeedStream::Dataset)),
                ("init".into(), self.cfg.seed_for(SeedStream::Init)),
                ("shuffle".into(), self.cfg.seed_for(SeedStream::Shuffle)),
            ],
            reference: format!(
                "fine backward Euler upwind, {}x{} cells, reference hash {}",
                self.problem.mesh.fine_nx,
                self.problem.mesh.fine_ny,
                &self.cfg.reference_hash()[..16]
            ),
            dt: self.problem.dt,
            nx: self.problem.mesh.nx,
            ny: self.problem.mesh.ny,
            runs,
        };
        bench::emit_report(&report, &self.out(&self.cfg.report_dir))?;
        Ok(report)
    }
}
