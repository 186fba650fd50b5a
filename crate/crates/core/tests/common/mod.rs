//! Oracles and fixtures shared by the integration suites.

#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::Array2;
use nlup::coarse_solver::{boundary_trace_outflow, coarse_residual};
use nlup::downscale::{ConstraintRegion, LocalGeometry, LocalProblem};
use nlup::fine_solver::{fine_jacobian, fine_residual};
use nlup::mesh::MeshHierarchy;
use nlup::physics::{AnalyticVelocity, FluxFunction, InitialCondition, TransportProblem};
use nlup::surrogate::MlpModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VELOCITIES: [AnalyticVelocity; 2] = [AnalyticVelocity::Constant { vx: 1.0, vy: 1.0 }, AnalyticVelocity::Example2];

pub fn problem(nx: usize, ny: usize, refine: usize, velocity: AnalyticVelocity) -> TransportProblem {
    TransportProblem::new(
        MeshHierarchy::build(nx, ny, refine).unwrap(),
        velocity,
        FluxFunction::Quadratic,
        InitialCondition::from_name("example1").unwrap(),
        0.1,
    )
    .unwrap()
}

pub fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Artifact directory of the paper-scale runs; `NLUP_ARTIFACTS` overrides it.
pub fn artifacts_dir() -> PathBuf {
    std::env::var_os("NLUP_ARTIFACTS")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../out"))
}

/// `max |J − J_fd| / max |J|` with central differences of step `eps`.
pub fn relative_fd_error(
    n: usize,
    point: &[f64],
    residual: impl Fn(&[f64]) -> Vec<f64>,
    entry: impl Fn(usize, usize) -> f64,
    eps: f64,
) -> f64 {
    let (mut defect, mut scale) = (0.0_f64, 0.0_f64);
    for col in 0..point.len() {
        let (mut plus, mut minus) = (point.to_vec(), point.to_vec());
        plus[col] += eps;
        minus[col] -= eps;
        let (rp, rm) = (residual(&plus), residual(&minus));
        for row in 0..n {
            let fd = (rp[row] - rm[row]) / (2.0 * eps);
            let an = entry(row, col);
            defect = defect.max((an - fd).abs());
            scale = scale.max(an.abs());
        }
    }
    defect / scale
}

pub fn fine_jacobian_error(p: &TransportProblem, seed: u64) -> f64 {
    let n = p.mesh.num_fine();
    let previous = uniform(n, 0.0, 1.0, seed);
    let state = uniform(n, 0.0, 1.0, seed + 1);
    let jac = fine_jacobian(p, &state);
    relative_fd_error(n, &state, |s| fine_residual(p, &previous, s), |i, j| jac.get(i, j), 1e-6)
}

pub fn local_geometry(p: &TransportProblem, cell: usize, plus: usize, plusplus: usize) -> LocalGeometry {
    let os = p.mesh.oversample(cell, plus, plusplus).unwrap();
    LocalGeometry::build(&p.mesh, &p.velocity.face_flux, os, ConstraintRegion::Plus)
}

pub fn local_jacobian_error(p: &TransportProblem, g: &LocalGeometry, seed: u64) -> f64 {
    let nk = p.mesh.num_coarse();
    let lp = LocalProblem::build(p, g, &uniform(nk, 0.0, 1.0, seed), &uniform(nk, 0.0, 1.0, seed + 1));
    let state = uniform(g.num_unknowns(), 0.0, 1.0, seed + 2);
    let jac = lp.jacobian(&state);
    relative_fd_error(state.len(), &state, |s| lp.residual(s), |i, j| jac.get(i, j), 1e-6)
}

/// `‖g − g_fd‖₂ / ‖g‖₂` over every parameter of a random model.
pub fn mlp_gradient_error(sizes: &[usize], batch: usize, seed: u64) -> f64 {
    let mut m = MlpModel::init(sizes, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for b in &mut m.biases {
        b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let x = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random_range(0.0..1.0));
    let y = Array2::from_shape_fn((batch, *sizes.last().unwrap()), |_| rng.random_range(0.0..1.0));
    let (_, g) = m.loss_and_gradient(x.view(), y.view()).unwrap();
    let loss = |m: &MlpModel| m.loss_and_gradient(x.view(), y.view()).unwrap().0;
    let eps = 1e-6;
    let (mut defect, mut norm) = (0.0, 0.0);
    for l in 0..m.num_layers() {
        for idx in 0..m.weights[l].len() {
            let (r, c) = (idx / m.weights[l].ncols(), idx % m.weights[l].ncols());
            let mut p = m.clone();
            p.weights[l][[r, c]] += eps;
            let mut q = m.clone();
            q.weights[l][[r, c]] -= eps;
            let fd = (loss(&p) - loss(&q)) / (2.0 * eps);
            defect += (g.weights[l][[r, c]] - fd).powi(2);
            norm += g.weights[l][[r, c]].powi(2);
        }
        for r in 0..m.biases[l].len() {
            let mut p = m.clone();
            p.biases[l][r] += eps;
            let mut q = m.clone();
            q.biases[l][r] -= eps;
            let fd = (loss(&p) - loss(&q)) / (2.0 * eps);
            defect += (g.biases[l][r] - fd).powi(2);
            norm += g.biases[l][r].powi(2);
        }
    }
    (defect / norm).sqrt()
}

/// `|Σ_i F_i − (γ Σ_i |K_i|(S̄_i − S̄ⁿ_i) + boundary outflow)|` for random data.
pub fn telescoping_defect(p: &TransportProblem, seed: u64) -> f64 {
    let nk = p.mesh.num_coarse();
    let iterate = uniform(nk, 0.0, 1.0, seed);
    let previous = uniform(nk, 0.0, 1.0, seed + 1);
    let traces = uniform(p.mesh.num_trace_slots(), -0.5, 1.5, seed + 2);
    let total: f64 = coarse_residual(p, &iterate, &previous, &traces).iter().sum();
    let mass: f64 = iterate.iter().zip(&previous).map(|(s, q)| s - q).sum::<f64>() * p.gamma() * p.mesh.coarse_area();
    (total - mass - boundary_trace_outflow(p, &traces)).abs()
}
