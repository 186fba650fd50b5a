//! Coarse finite-volume balance on cell averages, advanced by a relaxed
//! fixed-point iteration whose edge fluxes come from a [`TraceProvider`].

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fields::{CellAverages, EdgeTraces};
use crate::linalg::{max_norm, BandMatrix, LinearSolve};
use crate::physics::TransportProblem;

/// Maps `(S̄^(m), S̄^n)` to upwind values on every coarse-edge fine face.
pub trait TraceProvider: Sync {
    fn name(&self) -> &str;

    fn traces(&self, iterate: &[f64], previous: &[f64]) -> Result<EdgeTraces>;
}

/// Returns zero traces; the coarse balance then has zero flux.
#[derive(Debug, Clone)]
pub struct ZeroTraceProvider {
    slots: usize,
}

impl ZeroTraceProvider {
    pub fn new(problem: &TransportProblem) -> Self {
        Self {
            slots: problem.mesh.num_trace_slots(),
        }
    }
}

impl TraceProvider for ZeroTraceProvider {
    fn name(&self) -> &str {
        "zero"
    }

    fn traces(&self, _iterate: &[f64], _previous: &[f64]) -> Result<EdgeTraces> {
        Ok(EdgeTraces::zeros(self.slots))
    }
}

/// Per-cell divisor of the fixed-point update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateScaling {
    /// `γ|K_i|`.
    Mass,
    /// `γ|K_i| + Σ_{outflow f ⊂ ∂K_i} λ'(trace_f)|q_f|`, the lagged diagonal
    /// of the residual's dependence on the cell's own outflow traces.
    Diagonal,
    /// Full coarse upwind linearization: the diagonal above plus the
    /// coupling `−λ'(trace_f)|q_f|` of each cell to its upwind neighbors.
    Upwind,
}

impl UpdateScaling {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mass" => Ok(Self::Mass),
            "diagonal" => Ok(Self::Diagonal),
            "upwind" => Ok(Self::Upwind),
            other => Err(Error::InvalidArgument(format!("unknown fixed-point scaling `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mass => "mass",
            Self::Diagonal => "diagonal",
            Self::Upwind => "upwind",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    /// Stop once `‖S̄^(m+1) − S̄^(m)‖_∞` is at or below this value.
    pub tol: f64,
    pub omega: f64,
    pub max_iters: usize,
    pub scaling: UpdateScaling,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            omega: 0.5,
            max_iters: 200,
            scaling: UpdateScaling::Upwind,
        }
    }
}

/// `F_i = γ|K_i|(S̄^(m)_i − S̄^n_i) + Σ_{f ⊂ ∂K_i} λ(trace_f) (outward q_f)`.
pub fn coarse_residual(
    problem: &TransportProblem,
    iterate: &[f64],
    previous: &[f64],
    traces: &[f64],
) -> Vec<f64> {
    let mesh = &problem.mesh;
    assert_eq!(traces.len(), mesh.num_trace_slots());
    let flux = problem.flux.odd_extension();
    let mass = problem.gamma() * mesh.coarse_area();
    let mut r: Vec<f64> = iterate
        .iter()
        .zip(previous)
        .map(|(s, p)| mass * (s - p))
        .collect();
    for edge in mesh.coarse_edge_faces() {
        for (k, &f) in edge.faces.iter().enumerate() {
            let flux = flux.eval(traces[edge.slot_offset + k]) * problem.velocity.face_flux[f];
            if let Some(o) = edge.owner {
                r[o] += flux;
            }
            if let Some(n) = edge.neighbor {
                r[n] -= flux;
            }
        }
    }
    r
}

/// Update divisors for every coarse cell.
pub fn update_divisors(problem: &TransportProblem, traces: &[f64], scaling: UpdateScaling) -> Vec<f64> {
    let mesh = &problem.mesh;
    let mut d = vec![problem.gamma() * mesh.coarse_area(); mesh.num_coarse()];
    if scaling != UpdateScaling::Mass {
        let flux = problem.flux.odd_extension();
        for edge in mesh.coarse_edge_faces() {
            for (k, &f) in edge.faces.iter().enumerate() {
                let q = problem.velocity.face_flux[f];
                let upwind = if q >= 0.0 { edge.owner } else { edge.neighbor };
                if let Some(c) = upwind {
                    d[c] += flux.deriv(traces[edge.slot_offset + k]).abs() * q.abs();
                }
            }
        }
    }
    d
}

/// Coarse upwind linearization of the residual at the given traces.
pub fn upwind_linearization(problem: &TransportProblem, traces: &[f64]) -> BandMatrix {
    let mesh = &problem.mesh;
    let flux = problem.flux.odd_extension();
    let n = mesh.num_coarse();
    let mut j = BandMatrix::zeros(n, mesh.nx.min(n - 1), mesh.nx.min(n - 1));
    for c in 0..n {
        j.add(c, c, problem.gamma() * mesh.coarse_area());
    }
    for edge in mesh.coarse_edge_faces() {
        for (k, &f) in edge.faces.iter().enumerate() {
            let q = problem.velocity.face_flux[f];
            let (up, down) = if q >= 0.0 { (edge.owner, edge.neighbor) } else { (edge.neighbor, edge.owner) };
            let d = flux.deriv(traces[edge.slot_offset + k]).abs() * q.abs();
            if let Some(u) = up {
                j.add(u, u, d);
                if let Some(w) = down {
                    j.add(w, u, -d);
                }
            }
        }
    }
    j
}

/// Net outward flux through ∂Ω implied by a trace vector.
pub fn boundary_trace_outflow(problem: &TransportProblem, traces: &[f64]) -> f64 {
    let flux = problem.flux.odd_extension();
    let mut total = 0.0;
    for edge in problem.mesh.coarse_edge_faces() {
        let sign = match (edge.owner, edge.neighbor) {
            (Some(_), None) => 1.0,
            (None, Some(_)) => -1.0,
            _ => continue,
        };
        for (k, &f) in edge.faces.iter().enumerate() {
            total += sign * flux.eval(traces[edge.slot_offset + k]) * problem.velocity.face_flux[f];
        }
    }
    total
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub averages: CellAverages,
    pub iterations: usize,
    /// `‖S̄^(m+1) − S̄^(m)‖_∞` after every update.
    pub history: Vec<f64>,
    /// Traces at the last evaluated iterate.
    pub traces: EdgeTraces,
    pub seconds: f64,
}

/// One time step: `S̄_i ← S̄_i − ω F_i(S̄) / D_i` from `S̄^n` until the update
/// falls below `cfg.tol`, with `D_i` from [`update_divisors`].
pub fn solve_timestep(
    problem: &TransportProblem,
    previous: &[f64],
    provider: &dyn TraceProvider,
    cfg: &FixedPointConfig,
) -> Result<StepOutcome> {
    let start = Instant::now();
    let mut iterate = previous.to_vec();
    let mut history = Vec::new();
    loop {
        let traces = provider.traces(&iterate, previous)?;
        let r = coarse_residual(problem, &iterate, previous, &traces);
        let update: Vec<f64> = if cfg.scaling == UpdateScaling::Upwind {
            let lu = upwind_linearization(problem, &traces)
                .factor()
                .map_err(|e| Error::Internal(format!("singular coarse linearization at {}", e.pivot_index)))?;
            let mut d = r;
            lu.solve_in_place(&mut d);
            d.iter().map(|v| cfg.omega * v).collect()
        } else {
            let divisors = update_divisors(problem, &traces, cfg.scaling);
            r.iter().zip(&divisors).map(|(v, d)| cfg.omega * v / d).collect()
        };
        let norm = max_norm(&update);
        for (s, d) in iterate.iter_mut().zip(&update) {
            *s -= d;
        }
        history.push(norm);
        log::debug!("{}: fixed-point iteration {} update {norm:.3e}", provider.name(), history.len());
        if norm <= cfg.tol {
            return Ok(StepOutcome {
                averages: iterate.into(),
                iterations: history.len(),
                history,
                traces,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        if !norm.is_finite() || history.len() >= cfg.max_iters {
            return Err(Error::FixedPoint {
                iterations: history.len(),
                last_update: norm,
                history,
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub iterations: usize,
    pub seconds: f64,
    pub history: Vec<f64>,
}

/// Coarse trajectory; index 0 holds the initial averages.
#[derive(Debug, Clone)]
pub struct CoarseTrajectory {
    pub averages: Vec<CellAverages>,
    pub steps: Vec<StepRecord>,
}

pub fn run_coarse(
    problem: &TransportProblem,
    provider: &dyn TraceProvider,
    initial: &CellAverages,
    n_steps: usize,
    cfg: &FixedPointConfig,
) -> Result<CoarseTrajectory> {
    let mut averages = vec![initial.clone()];
    let mut steps = Vec::with_capacity(n_steps);
    for step in 1..=n_steps {
        let out = solve_timestep(problem, averages.last().expect("nonempty"), provider, cfg).map_err(
            |source| Error::Step {
                step,
                source: Box::new(source),
            },
        )?;
        log::info!(
            "{}: step {step} converged in {} iterations ({:.2} s)",
            provider.name(),
            out.iterations,
            out.seconds
        );
        averages.push(out.averages);
        steps.push(StepRecord {
            iterations: out.iterations,
            seconds: out.seconds,
            history: out.history,
        });
    }
    Ok(CoarseTrajectory { averages, steps })
}
