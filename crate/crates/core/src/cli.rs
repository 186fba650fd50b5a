//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;
use crate::surrogate::TrainingSet;

#[derive(Debug, Parser)]
#[command(name = "nlup", version, about = "Nonlinear upscaling of 2D transport with an MLP surrogate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file, or a bundled name: example1, example2, example3, smoke.
    #[arg(long, default_value = "example1")]
    pub config: String,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Inline override `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Reject unknown keys and fingerprint mismatches.
    #[arg(long)]
    pub strict: bool,
    /// Global seed; overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Exact,
    Nn,
    Baseline,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print mesh, oversampling and trace-layout sizes.
    MeshInfo(Common),
    /// Compute (or reuse) the fine reference trajectory.
    Reference(Common),
    /// Label random inputs with the exact provider.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of samples; overrides `surrogate.n_samples`.
        #[arg(long)]
        samples: Option<usize>,
        /// Dataset path relative to the output directory.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Train the surrogate on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated hidden layer sizes.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
    },
    /// Advance the initial state with one provider.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "exact")]
        provider: ProviderKind,
        /// Model file for the nn provider.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Use a model that fails the quality gate.
        #[arg(long)]
        force: bool,
    },
    /// Run several providers against the reference and write a report.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "exact,nn,baseline")]
        providers: Vec<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn load_config(common: &Common, extra: &[String]) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if common.strict {
        overrides.push("strict=true".into());
    }
    let mut cfg = RunConfig::resolve(&common.config, &overrides, common.strict)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    log::info!("config hash {}", cfg.hash());
    Ok(cfg)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::MeshInfo(common) => {
            let p = Pipeline::new(load_config(&common, &[])?)?;
            for line in p.problem.mesh.info_lines() {
                println!("{line}");
            }
            let os = p.problem.mesh.oversample_all(p.cfg.oversample.plus, p.cfg.oversample.plusplus)?;
            let largest = os.iter().map(|o| o.plusplus.len()).max().unwrap_or(0);
            println!("oversampling: plus {} plusplus {} (largest K++: {largest} coarse cells)", p.cfg.oversample.plus, p.cfg.oversample.plusplus);
            println!("surrogate layers: {:?}", p.cfg.layer_sizes(&p.problem));
            println!("fingerprint: {}", p.fingerprint());
        }
        Command::Reference(common) => {
            let p = Pipeline::new(load_config(&common, &[])?)?;
            let traj = p.reference()?;
            println!("reference: {} steps of {} coarse means", traj.len() - 1, p.problem.mesh.num_coarse());
        }
        Command::GenData { common, samples, dataset } => {
            let mut extra = Vec::new();
            if let Some(n) = samples {
                extra.push(format!("surrogate.n_samples={n}"));
            }
            if let Some(d) = dataset {
                extra.push(format!("surrogate.dataset={}", toml_string(&d)));
            }
            let p = Pipeline::new(load_config(&common, &extra)?)?;
            let set = p.generate_dataset()?;
            println!(
                "dataset: {} samples, input width {}, target width {}, {} failed draws -> {}",
                set.len(),
                set.input_width(),
                set.target_width(),
                set.failures,
                p.out(&p.cfg.surrogate.dataset).display()
            );
        }
        Command::Train { common, dataset, model, epochs, hidden } => {
            let mut extra = Vec::new();
            if let Some(d) = dataset {
                extra.push(format!("surrogate.dataset={}", toml_string(&d)));
            }
            if let Some(m) = model {
                extra.push(format!("surrogate.model={}", toml_string(&m)));
            }
            if let Some(e) = epochs {
                extra.push(format!("surrogate.epochs={e}"));
            }
            if let Some(h) = hidden {
                let list: Vec<String> = h.iter().map(|v| v.to_string()).collect();
                extra.push(format!("surrogate.hidden=[{}]", list.join(",")));
            }
            let p = Pipeline::new(load_config(&common, &extra)?)?;
            let set = TrainingSet::load(&p.out(&p.cfg.surrogate.dataset))?;
            let (model, history) = p.train(&set)?;
            let m = model.metrics.ok_or_else(|| Error::Internal("no validation split".into()))?;
            println!(
                "trained {:?}: final train MSE {:.4e}, validation MSE {:.4e}, R² {:.4}, gate {}",
                model.layer_sizes,
                history.train_mse.last().copied().unwrap_or(f64::NAN),
                m.validation_mse,
                m.r_squared(),
                if m.passes_gate() { "passed" } else { "FAILED" }
            );
        }
        Command::Solve { common, provider, model, force } => {
            let p = Pipeline::new(load_config(&common, &[])?)?;
            let traj = match provider {
                ProviderKind::Exact => p.solve(&p.exact_provider()?)?,
                ProviderKind::Nn => p.solve(&p.nn_provider(model.as_deref(), force)?)?,
                ProviderKind::Baseline => p.solve_baseline()?,
            };
            println!("solved {} steps -> {}", traj.len() - 1, p.out("").display());
        }
        Command::Compare { common, providers, model, force } => {
            let p = Pipeline::new(load_config(&common, &[])?)?;
            let report = p.compare(&providers, model.as_deref(), force)?;
            for run in &report.runs {
                let errors: Vec<String> = run.errors().iter().map(|e| format!("{e:.5}")).collect();
                println!("{:<9} errors [{}]  mean step {:.3} s", run.provider, errors.join(", "), run.mean_seconds());
            }
            println!("report -> {}", p.out(&p.cfg.report_dir).display());
        }
    }
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("NLUP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
}

/// Parses `argv` and runs the subcommand. Returns the process exit status:
/// 0 on success, 2 on usage errors, 1 otherwise.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            1
        }
    }
}
