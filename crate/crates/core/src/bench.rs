//! Coarse-grid finite-volume baseline, error metrics and run reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::coarse_solver::{run_coarse, FixedPointConfig, TraceProvider};
use crate::error::{Error, Result};
use crate::fields::CellAverages;
use crate::fine_solver::{newton_solve, NewtonConfig};
use crate::linalg::BandMatrix;
use crate::physics::TransportProblem;

/// Name under which the baseline appears in reports.
pub const BASELINE: &str = "baseline";

/// `(Option<owner>, Option<neighbor>, Q_E)` for every coarse edge.
fn aggregate_edges(problem: &TransportProblem) -> Vec<(Option<usize>, Option<usize>, f64)> {
    let q = problem.velocity.edge_flux(&problem.mesh);
    problem
        .mesh
        .coarse_edge_faces()
        .iter()
        .zip(q)
        .map(|(e, q)| (e.owner, e.neighbor, q))
        .collect()
}

/// Upwind `(upwind, downwind, |Q|)`, zero flux attributed to the owner.
fn orient(owner: Option<usize>, neighbor: Option<usize>, q: f64) -> (Option<usize>, Option<usize>, f64) {
    if q >= 0.0 {
        (owner, neighbor, q)
    } else {
        (neighbor, owner, -q)
    }
}

/// Backward Euler residual of the coarse upwind scheme
/// `γ|K_i|(S_i − S^n_i) + Σ_E λ(S_up) (outward Q_E)`, ghost value 0.
pub fn baseline_residual(problem: &TransportProblem, previous: &[f64], state: &[f64]) -> Vec<f64> {
    let scale = problem.gamma() * problem.mesh.coarse_area();
    let mut r: Vec<f64> = state.iter().zip(previous).map(|(s, p)| scale * (s - p)).collect();
    for (owner, neighbor, q) in aggregate_edges(problem) {
        let (up, down, q) = orient(owner, neighbor, q);
        let flux = problem.flux.eval(up.map_or(0.0, |u| state[u])) * q;
        if let Some(u) = up {
            r[u] += flux;
        }
        if let Some(d) = down {
            r[d] -= flux;
        }
    }
    r
}

pub fn baseline_jacobian(problem: &TransportProblem, state: &[f64]) -> BandMatrix {
    let n = problem.mesh.num_coarse();
    let band = problem.mesh.nx.min(n - 1);
    let mut j = BandMatrix::zeros(n, band, band);
    for c in 0..n {
        j.add(c, c, problem.gamma() * problem.mesh.coarse_area());
    }
    for (owner, neighbor, q) in aggregate_edges(problem) {
        if let (Some(u), down, q) = orient(owner, neighbor, q) {
            let d = problem.flux.deriv(state[u]) * q;
            j.add(u, u, d);
            if let Some(w) = down {
                j.add(w, u, -d);
            }
        }
    }
    j
}

/// One backward Euler step of the baseline; returns the new averages and the
/// Newton iteration count.
pub fn baseline_step(problem: &TransportProblem, previous: &[f64], cfg: &NewtonConfig) -> Result<(CellAverages, usize)> {
    let out = newton_solve(
        |s| baseline_residual(problem, previous, s),
        |s| baseline_jacobian(problem, s).factor(),
        previous.to_vec(),
        cfg,
    )
    .map_err(|source| Error::Newton {
        context: "baseline step".into(),
        source,
    })?;
    Ok((out.solution.into(), out.iterations))
}

/// `‖num − ref‖₂ / ‖ref‖₂`.
pub fn relative_error(num: &[f64], reference: &[f64]) -> Result<f64> {
    if num.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "vectors of length {} and {}",
            num.len(),
            reference.len()
        )));
    }
    let norm = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    let diff = num.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

/// [`relative_error`], but 0 when both vectors vanish.
pub fn relative_error_or_zero(num: &[f64], reference: &[f64]) -> Result<f64> {
    match relative_error(num, reference) {
        Err(Error::UndefinedMetric) if num.iter().all(|&v| v == 0.0) => Ok(0.0),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub error: f64,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ProviderRun {
    pub provider: String,
    pub steps: Vec<StepReport>,
    /// Averages at steps `0..=n`.
    pub averages: Vec<CellAverages>,
}

impl ProviderRun {
    pub fn errors(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.error).collect()
    }

    pub fn mean_seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.seconds).sum::<f64>() / self.steps.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub config_hash: String,
    pub seeds: Vec<(String, u64)>,
    pub reference: String,
    pub dt: f64,
    pub nx: usize,
    pub ny: usize,
    pub runs: Vec<ProviderRun>,
}

impl RunReport {
    pub fn run(&self, provider: &str) -> Option<&ProviderRun> {
        self.runs.iter().find(|r| r.provider == provider)
    }
}

fn score(averages: &[CellAverages], reference: &[CellAverages]) -> Result<Vec<f64>> {
    averages[1..]
        .iter()
        .zip(&reference[1..])
        .map(|(a, r)| relative_error_or_zero(a, r))
        .collect()
}

/// Runs the baseline alone against the reference averages.
pub fn run_baseline(problem: &TransportProblem, reference: &[CellAverages], cfg: &NewtonConfig) -> Result<ProviderRun> {
    let mut averages = vec![reference[0].clone()];
    let mut timings = Vec::new();
    for step in 1..reference.len() {
        let start = Instant::now();
        let (next, its) = baseline_step(problem, averages.last().unwrap(), cfg).map_err(|e| Error::Step {
            step,
            source: Box::new(e),
        })?;
        timings.push((its, start.elapsed().as_secs_f64()));
        averages.push(next);
    }
    let errors = score(&averages, reference)?;
    Ok(ProviderRun {
        provider: BASELINE.into(),
        steps: errors
            .into_iter()
            .zip(timings)
            .enumerate()
            .map(|(k, (error, (iterations, seconds)))| StepReport {
                step: k + 1,
                error,
                iterations,
                seconds,
            })
            .collect(),
        averages,
    })
}

/// Runs one trace provider through the fixed-point scheme.
pub fn run_provider(
    problem: &TransportProblem,
    provider: &dyn TraceProvider,
    reference: &[CellAverages],
    cfg: &FixedPointConfig,
) -> Result<ProviderRun> {
    let tag = |e: Error| Error::Provider {
        provider: provider.name().into(),
        source: Box::new(e),
    };
    let traj = run_coarse(problem, provider, &reference[0], reference.len() - 1, cfg).map_err(tag)?;
    let errors = score(&traj.averages, reference).map_err(tag)?;
    Ok(ProviderRun {
        provider: provider.name().into(),
        steps: errors
            .into_iter()
            .zip(&traj.steps)
            .enumerate()
            .map(|(k, (error, s))| StepReport {
                step: k + 1,
                error,
                iterations: s.iterations,
                seconds: s.seconds,
            })
            .collect(),
        averages: traj.averages,
    })
}

/// Runs each provider and optionally the baseline over the steps of
/// `reference` (index 0 is the initial state), sequentially.
pub fn compare_runs(
    problem: &TransportProblem,
    reference: &[CellAverages],
    providers: &[&dyn TraceProvider],
    include_baseline: bool,
    fixed_point: &FixedPointConfig,
    newton: &NewtonConfig,
) -> Result<RunReport> {
    if reference.len() < 2 {
        return Err(Error::InvalidArgument("reference needs at least one step".into()));
    }
    let mut runs = Vec::new();
    for p in providers {
        runs.push(run_provider(problem, *p, reference, fixed_point)?);
    }
    if include_baseline {
        runs.push(run_baseline(problem, reference, newton).map_err(|e| Error::Provider {
            provider: BASELINE.into(),
            source: Box::new(e),
        })?);
    }
    Ok(RunReport {
        dt: problem.dt,
        nx: problem.mesh.nx,
        ny: problem.mesh.ny,
        runs,
        ..RunReport::default()
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `errors.csv`, one heatmap grid per provider and step, and
/// `summary.txt`. Returns the written paths.
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let header = format!("# config_hash: {}\n", report.config_hash);
    let mut written = Vec::new();

    let mut csv = header.clone();
    csv.push_str("step,provider,error,iterations,seconds\n");
    for run in &report.runs {
        for s in &run.steps {
            writeln!(csv, "{},{},{},{},{}", s.step, run.provider, s.error, s.iterations, s.seconds).unwrap();
        }
    }
    let path = out_dir.join("errors.csv");
    write_file(&path, &csv)?;
    written.push(path);

    for run in &report.runs {
        for (step, averages) in run.averages.iter().enumerate().skip(1) {
            let mut grid = header.clone();
            for j in (0..report.ny).rev() {
                let row: Vec<String> = (0..report.nx).map(|i| averages[i + j * report.nx].to_string()).collect();
                grid.push_str(&row.join(","));
                grid.push('\n');
            }
            let path = out_dir.join(format!("heatmap_{}_step{}.csv", run.provider, step));
            write_file(&path, &grid)?;
            written.push(path);
        }
    }

    let mut rows: Vec<(&str, &StepReport)> = report
        .runs
        .iter()
        .flat_map(|r| r.steps.iter().map(move |s| (r.provider.as_str(), s)))
        .collect();
    rows.sort_by(|a, b| (a.0, a.1.step).cmp(&(b.0, b.1.step)));
    let mut summary = header;
    if !report.reference.is_empty() {
        writeln!(summary, "# reference: {}", report.reference).unwrap();
    }
    for (name, seed) in &report.seeds {
        writeln!(summary, "# seed {name}: {seed}").unwrap();
    }
    writeln!(summary, "{:<10} {:>4} {:>6} {:>12} {:>10} {:>10}", "provider", "step", "t", "rel_error", "iterations", "seconds").unwrap();
    for (name, s) in rows {
        writeln!(
            summary,
            "{:<10} {:>4} {:>6.2} {:>12.5} {:>10} {:>10.3}",
            name,
            s.step,
            s.step as f64 * report.dt,
            s.error,
            s.iterations,
            s.seconds
        )
        .unwrap();
    }
    let path = out_dir.join("summary.txt");
    write_file(&path, &summary)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarse_solver::ZeroTraceProvider;
    use crate::mesh::MeshHierarchy;
    use crate::physics::{AnalyticVelocity, FluxFunction, InitialCondition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(nx: usize, refine: usize, v: AnalyticVelocity, ic: &str) -> TransportProblem {
        TransportProblem::new(
            MeshHierarchy::build(nx, nx, refine).unwrap(),
            v,
            FluxFunction::Quadratic,
            InitialCondition::from_name(ic).unwrap(),
            0.1,
        )
        .unwrap()
    }

    const V11: AnalyticVelocity = AnalyticVelocity::Constant { vx: 1.0, vy: 1.0 };

    #[test]
    fn metric_examples() {
        let a = [0.3, -1.2, 2.0];
        assert_eq!(relative_error(&a, &a).unwrap(), 0.0);
        let scaled: Vec<f64> = a.iter().map(|v| 1.1 * v).collect();
        assert!((relative_error(&scaled, &a).unwrap() - 0.1).abs() < 1e-15);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(relative_error(&[1.0], &[0.0]), Err(Error::UndefinedMetric)));
        assert_eq!(relative_error_or_zero(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!(relative_error_or_zero(&[1.0], &[0.0]).is_err());
        assert!(relative_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_data_stays_zero() {
        let p = problem(3, 2, AnalyticVelocity::Example2, "zero");
        let (next, _) = baseline_step(&p, &[0.0; 9], &NewtonConfig::default()).unwrap();
        assert!(next.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_matches_cellwise_coarse_assembly() {
        // With refine 1 the baseline is the fine scheme on the coarse grid.
        let p = problem(4, 1, AnalyticVelocity::Example2, "zero");
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let prev: Vec<f64> = (0..16).map(|_| rng.random()).collect();
        let s: Vec<f64> = (0..16).map(|_| rng.random()).collect();
        let a = baseline_residual(&p, &prev, &s);
        let b = crate::fine_solver::fine_residual(&p, &prev, &s);
        for k in 0..16 {
            assert!((a[k] - b[k]).abs() < 1e-14);
        }
        let j = baseline_jacobian(&p, &s);
        let eps = 1e-6;
        for col in 0..16 {
            let mut sp = s.clone();
            sp[col] += eps;
            let mut sm = s.clone();
            sm[col] -= eps;
            let rp = baseline_residual(&p, &prev, &sp);
            let rm = baseline_residual(&p, &prev, &sm);
            for row in 0..16 {
                let fd = (rp[row] - rm[row]) / (2.0 * eps);
                assert!((fd - j.get(row, col)).abs() <= 1e-5 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn two_by_two_matches_pseudo_time_oracle() {
        let p = problem(2, 3, V11, "zero");
        let prev = [0.9, 0.2, 0.5, 0.1];
        let (next, _) = baseline_step(&p, &prev, &NewtonConfig::default()).unwrap();
        // Hand-assembled cell balances for v = (1, 1): each coarse edge has
        // Q = 1/2, inflow from the west and south, ghost 0.
        let c = p.gamma() * 0.25;
        let q = 0.5;
        let residual = |s: &[f64]| {
            let l = |u: f64| u * u;
            [
                c * (s[0] - prev[0]) + 2.0 * q * l(s[0]),
                c * (s[1] - prev[1]) + 2.0 * q * l(s[1]) - q * l(s[0]),
                c * (s[2] - prev[2]) + 2.0 * q * l(s[2]) - q * l(s[0]),
                c * (s[3] - prev[3]) + 2.0 * q * l(s[3]) - q * l(s[1]) - q * l(s[2]),
            ]
        };
        let mut s = prev.to_vec();
        for _ in 0..20_000 {
            let r = residual(&s);
            for k in 0..4 {
                s[k] -= 0.05 * r[k] / c;
            }
        }
        for k in 0..4 {
            assert!((next[k] - s[k]).abs() <= 2e-3, "cell {k}: {} vs {}", next[k], s[k]);
        }
    }

    #[test]
    fn zero_provider_on_zero_data_reports_zero_errors() {
        let p = problem(3, 2, V11, "zero");
        let zero = ZeroTraceProvider::new(&p);
        let reference = vec![CellAverages::zeros(9); 4];
        let report = compare_runs(&p, &reference, &[&zero], true, &FixedPointConfig::default(), &NewtonConfig::default()).unwrap();
        assert_eq!(report.runs.len(), 2);
        for run in &report.runs {
            assert_eq!(run.errors(), vec![0.0; 3]);
        }
    }

    #[test]
    fn report_files() {
        let p = problem(3, 2, V11, "example1");
        let (_, s0) = p.project_initial();
        let zero = ZeroTraceProvider::new(&p);
        let reference = vec![s0.clone(), s0.clone(), s0];
        let mut report =
            compare_runs(&p, &reference, &[&zero], true, &FixedPointConfig::default(), &NewtonConfig::default()).unwrap();
        report.config_hash = "abc123".into();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 2 * 2 + 2);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), files.len());

        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(dir.path().join("errors.csv"))
            .unwrap();
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0][1].to_string(), "zero");
        assert_eq!(rows[0][2].parse::<f64>().unwrap(), report.runs[0].steps[0].error);

        let mut grid = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(false)
            .from_path(dir.path().join("heatmap_baseline_step2.csv"))
            .unwrap();
        let cells: Vec<f64> = grid
            .records()
            .flat_map(|r| r.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect();
        assert_eq!(cells.len(), 9);
        // First row of the grid is the top row j = ny - 1.
        assert_eq!(cells[0], report.runs[1].averages[2][6]);

        let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(summary.starts_with("# config_hash: abc123"));
        let names: Vec<&str> = summary
            .lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        assert_eq!(names, vec!["baseline", "baseline", "zero", "zero"]);
        for f in &files {
            assert!(fs::read_to_string(f).unwrap().contains("abc123"));
        }
    }

    #[test]
    fn provider_errors_are_tagged() {
        struct Failing;
        impl TraceProvider for Failing {
            fn name(&self) -> &str {
                "failing"
            }
            fn traces(&self, _: &[f64], _: &[f64]) -> Result<crate::EdgeTraces> {
                Err(Error::Internal("boom".into()))
            }
        }
        let p = problem(2, 2, V11, "example1");
        let (_, s0) = p.project_initial();
        let err = compare_runs(&p, &[s0.clone(), s0], &[&Failing], false, &FixedPointConfig::default(), &NewtonConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Provider { ref provider, .. } if provider == "failing"));
    }
}
