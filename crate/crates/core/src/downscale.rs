//! Constrained local downscaling.
//!
//! For every coarse cell `K_α` a backward Euler upwind step with source
//! `γ S̄^n` is solved on the double-oversampled block `K⁺⁺_α`, subject to
//! coarse-mean constraints on the cells of `K⁺_α` enforced by one Lagrange
//! multiplier per constrained cell. The KKT system
//!
//! ```text
//! [ ∂F_eqn/∂ψ  B ] [δψ]   [F_eqn ]
//! [ Bᵀ         0 ] [δμ] = [F_mean]
//! ```
//!
//! is solved by a Schur complement on the small multiplier block. The global
//! downscaled field takes `ψ_α` on `K_α` (indicator partition of unity), and
//! its upwind values on coarse-edge faces are the traces consumed by the
//! coarse scheme.

use rayon::prelude::*;

use crate::coarse_solver::TraceProvider;
use crate::error::{Error, Result};
use crate::fields::{EdgeTraces, FineField};
use crate::fine_solver::{newton_solve, upwind_split, NewtonConfig, NewtonError};
use crate::linalg::{BandLu, BandMatrix, DenseLu, LinearSolve, SingularMatrix, SweepMatrix, SweepPattern};
use crate::mesh::{MeshHierarchy, Oversample};
use crate::physics::{FluxFunction, TransportProblem};

/// Coarse cells whose means are imposed in a local problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintRegion {
    /// The cells of `K⁺_α`; the remaining layers of `K⁺⁺_α` are a free buffer.
    Plus,
    /// Every cell of `K⁺⁺_α`.
    PlusPlus,
}

impl ConstraintRegion {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "plus" => Ok(Self::Plus),
            "plusplus" => Ok(Self::PlusPlus),
            other => Err(Error::Config(format!(
                "unknown constraint region '{other}' (expected plus or plusplus)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Plus => "plus",
            Self::PlusPlus => "plusplus",
        }
    }
}

/// Oversampling, constraint placement and Newton settings of the local solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownscaleConfig {
    /// Layers added to `K_α` to form `K⁺_α`.
    pub plus_layers: usize,
    /// Layers added to `K⁺_α` to form `K⁺⁺_α`.
    pub plusplus_layers: usize,
    pub constraints: ConstraintRegion,
    pub newton: NewtonConfig,
}

impl Default for DownscaleConfig {
    fn default() -> Self {
        Self {
            plus_layers: 2,
            plusplus_layers: 2,
            constraints: ConstraintRegion::Plus,
            newton: NewtonConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LocalFace {
    up: Option<usize>,
    down: Option<usize>,
    q: f64,
    /// Value slot of the `(down, up)` Jacobian entry in the sweep pattern.
    slot: Option<usize>,
}

/// Data-independent part of a local problem: index maps and upwind
/// connectivity on `K⁺⁺_α`.
#[derive(Debug, Clone)]
pub struct LocalGeometry {
    pub oversample: Oversample,
    /// Local fine-cell index → global fine-cell index, row-major over the block.
    pub global_fine: Vec<usize>,
    /// Global coarse cell of each local fine cell.
    pub coarse_of_local: Vec<usize>,
    /// Constrained coarse cells, global indices.
    pub constrained: Vec<usize>,
    /// Constraint slot of each local fine cell, if it lies in a constrained cell.
    constraint_of_local: Vec<Option<usize>>,
    /// Local fine cells of each constrained coarse cell.
    constraint_members: Vec<Vec<usize>>,
    /// Local indices of the fine cells of `K⁺_α`.
    pub plus_local: Vec<usize>,
    faces: Vec<LocalFace>,
    /// Triangular ordering of the upwind graph, when it is acyclic.
    sweep: Option<SweepPattern>,
    kl: usize,
    ku: usize,
}

impl LocalGeometry {
    pub fn build(mesh: &MeshHierarchy, face_flux: &[f64], oversample: Oversample, region: ConstraintRegion) -> Self {
        let r = mesh.refine;
        let pp = oversample.plusplus;
        let (fi0, fj0) = (pp.i0 * r, pp.j0 * r);
        let (lnx, lny) = (pp.width() * r, pp.height() * r);
        let n = lnx * lny;

        let mut global_fine = Vec::with_capacity(n);
        for lj in 0..lny {
            for li in 0..lnx {
                global_fine.push(mesh.fine_index(fi0 + li, fj0 + lj));
            }
        }
        let mut local_of_global = std::collections::HashMap::with_capacity(n);
        for (l, &g) in global_fine.iter().enumerate() {
            local_of_global.insert(g, l);
        }
        let coarse_of_local: Vec<usize> = global_fine.iter().map(|&g| mesh.coarse_of_fine(g)).collect();

        let constrained: Vec<usize> = match region {
            ConstraintRegion::Plus => oversample.plus.cells(mesh.nx).collect(),
            ConstraintRegion::PlusPlus => oversample.plusplus.cells(mesh.nx).collect(),
        };
        let mut constraint_of_local = vec![None; n];
        let mut constraint_members = vec![Vec::new(); constrained.len()];
        for (l, &c) in coarse_of_local.iter().enumerate() {
            if let Some(k) = constrained.iter().position(|&b| b == c) {
                constraint_of_local[l] = Some(k);
                constraint_members[k].push(l);
            }
        }
        let plus_local = (0..n)
            .filter(|&l| {
                let (ci, cj) = mesh.coarse_ij(coarse_of_local[l]);
                oversample.plus.contains(ci, cj)
            })
            .collect();

        // Each local cell contributes its west and south faces; the last
        // column and row add their east and north faces.
        let mut faces = Vec::with_capacity(2 * n + lnx + lny);
        let (mut kl, mut ku) = (0, 0);
        for lj in 0..lny {
            for li in 0..lnx {
                let g = global_fine[li + lj * lnx];
                let [w, e, s, nn] = mesh.fine_cell_faces(g);
                let mut push = |f: usize| {
                    let (up, down, q) = upwind_split(&mesh.faces[f], face_flux[f]);
                    let up = up.and_then(|u| local_of_global.get(&u).copied());
                    let down = down.and_then(|d| local_of_global.get(&d).copied());
                    if let (Some(u), Some(d)) = (up, down) {
                        if d > u {
                            kl = kl.max(d - u);
                        } else {
                            ku = ku.max(u - d);
                        }
                    }
                    faces.push(LocalFace { up, down, q, slot: None });
                };
                push(w);
                push(s);
                if li + 1 == lnx {
                    push(e);
                }
                if lj + 1 == lny {
                    push(nn);
                }
            }
        }

        let coupled: Vec<usize> = (0..faces.len())
            .filter(|&f| faces[f].up.is_some() && faces[f].down.is_some() && faces[f].q != 0.0)
            .collect();
        let entries: Vec<(usize, usize)> = coupled
            .iter()
            .map(|&f| (faces[f].down.unwrap(), faces[f].up.unwrap()))
            .collect();
        let sweep = SweepPattern::new(n, &entries).map(|(pattern, slots)| {
            for (&f, slot) in coupled.iter().zip(slots) {
                faces[f].slot = Some(slot);
            }
            pattern
        });

        Self {
            oversample,
            global_fine,
            coarse_of_local,
            constrained,
            constraint_of_local,
            constraint_members,
            plus_local,
            faces,
            sweep,
            kl,
            ku,
        }
    }

    pub fn cell(&self) -> usize {
        self.oversample.cell
    }

    pub fn num_fine(&self) -> usize {
        self.global_fine.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constrained.len()
    }

    /// Whether the upwind block is solved by a triangular sweep.
    pub fn is_acyclic(&self) -> bool {
        self.sweep.is_some()
    }

    /// Number of unknowns, fine values plus multipliers.
    pub fn num_unknowns(&self) -> usize {
        self.num_fine() + self.num_constraints()
    }
}

/// A local problem with its data: source from `S̄^n`, constraints from `S̄`.
#[derive(Debug, Clone)]
pub struct LocalProblem<'g> {
    pub geometry: &'g LocalGeometry,
    /// `S̄^n` of the coarse cell containing each local fine cell.
    pub source: Vec<f64>,
    /// Prescribed means `S̄_β` of the constrained cells.
    pub targets: Vec<f64>,
    pub gamma: f64,
    pub fine_area: f64,
    pub coarse_area: f64,
    pub flux: FluxFunction,
}

impl<'g> LocalProblem<'g> {
    pub fn build(
        problem: &TransportProblem,
        geometry: &'g LocalGeometry,
        previous: &[f64],
        iterate: &[f64],
    ) -> Self {
        let nk = problem.mesh.num_coarse();
        assert_eq!(previous.len(), nk);
        assert_eq!(iterate.len(), nk);
        Self {
            geometry,
            source: geometry.coarse_of_local.iter().map(|&c| previous[c]).collect(),
            targets: geometry.constrained.iter().map(|&c| iterate[c]).collect(),
            gamma: problem.gamma(),
            fine_area: problem.mesh.fine_area(),
            coarse_area: problem.mesh.coarse_area(),
            flux: problem.flux.odd_extension(),
        }
    }

    /// Constraint values on constrained cells, `S̄^n` on buffer cells, zero multipliers.
    pub fn initial_guess(&self) -> Vec<f64> {
        let g = self.geometry;
        let mut x: Vec<f64> = (0..g.num_fine())
            .map(|l| match g.constraint_of_local[l] {
                Some(k) => self.targets[k],
                None => self.source[l],
            })
            .collect();
        x.resize(g.num_unknowns(), 0.0);
        x
    }

    /// Stacked `(F_eqn; F_mean)` at `state = (ψ̃; μ)`.
    pub fn residual(&self, state: &[f64]) -> Vec<f64> {
        let g = self.geometry;
        let n = g.num_fine();
        let (psi, mu) = state.split_at(n);
        let mass = self.gamma * self.fine_area;
        let mut r = Vec::with_capacity(g.num_unknowns());
        for l in 0..n {
            let mut v = mass * (psi[l] - self.source[l]);
            if let Some(k) = g.constraint_of_local[l] {
                v -= self.fine_area * mu[k];
            }
            r.push(v);
        }
        for face in &g.faces {
            let value = face.up.map_or(0.0, |u| psi[u]);
            let flux = self.flux.eval(value) * face.q;
            if let Some(u) = face.up {
                r[u] += flux;
            }
            if let Some(d) = face.down {
                r[d] -= flux;
            }
        }
        for (k, members) in g.constraint_members.iter().enumerate() {
            let sum: f64 = members.iter().map(|&l| psi[l]).sum();
            r.push(-self.fine_area * sum + self.coarse_area * self.targets[k]);
        }
        r
    }

    pub fn jacobian(&self, state: &[f64]) -> SaddlePointMatrix<'g> {
        let g = self.geometry;
        let n = g.num_fine();
        let psi = &state[..n];
        let mass = self.gamma * self.fine_area;
        let a = match &g.sweep {
            Some(pattern) => {
                let mut a = SweepMatrix::zeros(pattern);
                for l in 0..n {
                    a.add_diag(l, mass);
                }
                for face in &g.faces {
                    if let Some(u) = face.up {
                        let d = self.flux.deriv(psi[u]) * face.q;
                        a.add_diag(u, d);
                        if let Some(slot) = face.slot {
                            a.add_slot(slot, -d);
                        }
                    }
                }
                UpwindBlock::Sweep(a)
            }
            None => {
                let mut a = BandMatrix::zeros(n, g.kl, g.ku);
                for l in 0..n {
                    a.add(l, l, mass);
                }
                for face in &g.faces {
                    if let Some(u) = face.up {
                        let d = self.flux.deriv(psi[u]) * face.q;
                        a.add(u, u, d);
                        if let Some(down) = face.down {
                            a.add(down, u, -d);
                        }
                    }
                }
                UpwindBlock::Band(a)
            }
        };
        SaddlePointMatrix {
            a,
            members: &g.constraint_members,
            weight: -self.fine_area,
        }
    }

    pub fn solve(&self, cfg: &NewtonConfig) -> Result<LocalSolution, NewtonError> {
        let n = self.geometry.num_fine();
        let out = newton_solve(
            |x| self.residual(x),
            |x| self.jacobian(x).factor(),
            self.initial_guess(),
            cfg,
        )?;
        let mut psi = out.solution;
        let mu = psi.split_off(n);
        Ok(LocalSolution {
            cell: self.geometry.cell(),
            psi,
            mu,
            iterations: out.iterations,
            residual_norm: out.residual_norm,
        })
    }

    /// Largest deviation of a constrained mean from its target.
    pub fn constraint_violation(&self, psi: &[f64]) -> f64 {
        self.geometry
            .constraint_members
            .iter()
            .zip(&self.targets)
            .map(|(members, &t)| {
                let mean = members.iter().map(|&l| psi[l]).sum::<f64>() / members.len() as f64;
                (mean - t).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// The upwind block `∂F_eqn/∂ψ` of a local Jacobian.
#[derive(Debug, Clone)]
pub enum UpwindBlock<'g> {
    Sweep(SweepMatrix<'g>),
    Band(BandMatrix),
}

impl UpwindBlock<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Sweep(a) => a.dim(),
            Self::Band(a) => a.dim(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Self::Sweep(a) => a.get(i, j),
            Self::Band(a) => a.get(i, j),
        }
    }
}

enum UpwindLu<'g> {
    Sweep(SweepMatrix<'g>),
    Band(BandLu),
}

impl LinearSolve for UpwindLu<'_> {
    fn dim(&self) -> usize {
        match self {
            Self::Sweep(a) => a.dim(),
            Self::Band(a) => a.dim(),
        }
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        match self {
            Self::Sweep(a) => a.solve_in_place(rhs),
            Self::Band(a) => a.solve_in_place(rhs),
        }
    }
}

/// `[[A, B], [Bᵀ, 0]]` with the upwind block `A` and constraint columns
/// `B[j, β] = weight` for fine cells `j` of constrained cell `β`.
#[derive(Debug, Clone)]
pub struct SaddlePointMatrix<'g> {
    pub a: UpwindBlock<'g>,
    members: &'g [Vec<usize>],
    weight: f64,
}

impl<'g> SaddlePointMatrix<'g> {
    pub fn dim(&self) -> usize {
        self.a.dim() + self.members.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.members.len()
    }

    /// Entry `(i, j)` of the full matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let n = self.a.dim();
        match (i < n, j < n) {
            (true, true) => self.a.get(i, j),
            (true, false) => self.coupling(i, j - n),
            (false, true) => self.coupling(j, i - n),
            (false, false) => 0.0,
        }
    }

    fn coupling(&self, fine: usize, constraint: usize) -> f64 {
        if self.members[constraint].contains(&fine) {
            self.weight
        } else {
            0.0
        }
    }

    pub fn factor(self) -> Result<SaddlePointLu<'g>, SingularMatrix> {
        let n = self.a.dim();
        let m = self.members.len();
        let a = match self.a {
            UpwindBlock::Sweep(a) => UpwindLu::Sweep(a.factor()?),
            UpwindBlock::Band(a) => UpwindLu::Band(a.factor()?),
        };
        let mut columns = Vec::with_capacity(m);
        for members in self.members {
            let mut col = vec![0.0; n];
            for &j in members {
                col[j] = self.weight;
            }
            a.solve_in_place(&mut col);
            columns.push(col);
        }
        let schur = nalgebra::DMatrix::from_fn(m, m, |beta, k| {
            self.weight * self.members[beta].iter().map(|&j| columns[k][j]).sum::<f64>()
        });
        let schur = DenseLu::factor(schur).map_err(|e| SingularMatrix {
            pivot_index: n + e.pivot_index,
        })?;
        Ok(SaddlePointLu {
            a,
            columns,
            schur,
            members: self.members,
            weight: self.weight,
        })
    }
}

/// Schur-complement factorization of a [`SaddlePointMatrix`].
pub struct SaddlePointLu<'g> {
    a: UpwindLu<'g>,
    /// `A⁻¹ B`, one column per constraint.
    columns: Vec<Vec<f64>>,
    schur: DenseLu,
    members: &'g [Vec<usize>],
    weight: f64,
}

impl LinearSolve for SaddlePointLu<'_> {
    fn dim(&self) -> usize {
        self.a.dim() + self.members.len()
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.a.dim();
        let (top, bottom) = rhs.split_at_mut(n);
        self.a.solve_in_place(top);
        for (k, members) in self.members.iter().enumerate() {
            let bt_z: f64 = self.weight * members.iter().map(|&j| top[j]).sum::<f64>();
            bottom[k] = bt_z - bottom[k];
        }
        self.schur.solve_in_place(bottom);
        for (col, &dmu) in self.columns.iter().zip(bottom.iter()) {
            for (t, c) in top.iter_mut().zip(col) {
                *t -= c * dmu;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub cell: usize,
    /// ψ̃ on every fine cell of `K⁺⁺_α`, in the geometry's local order.
    pub psi: Vec<f64>,
    /// One multiplier per constrained coarse cell.
    pub mu: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// `ψ_α`: the local solution restricted to the fine cells of `K⁺_α`.
#[derive(Debug, Clone)]
pub struct RestrictedSolution {
    pub cell: usize,
    /// Global fine-cell indices, row-major over `K⁺_α`.
    pub fine_cells: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn restrict_local(solution: &LocalSolution, geometry: &LocalGeometry) -> RestrictedSolution {
    RestrictedSolution {
        cell: solution.cell,
        fine_cells: geometry.plus_local.iter().map(|&l| geometry.global_fine[l]).collect(),
        values: geometry.plus_local.iter().map(|&l| solution.psi[l]).collect(),
    }
}

/// `ψ = Σ χ_α ψ_α` with `χ_α` the indicator of `K_α`.
pub fn global_downscaling(mesh: &MeshHierarchy, locals: &[RestrictedSolution]) -> Result<FineField> {
    let mut psi = vec![f64::NAN; mesh.num_fine()];
    let mut seen = vec![false; mesh.num_coarse()];
    for local in locals {
        if std::mem::replace(&mut seen[local.cell], true) {
            return Err(Error::Internal(format!("duplicate local solution for cell {}", local.cell)));
        }
        for (&f, &v) in local.fine_cells.iter().zip(&local.values) {
            if mesh.coarse_of_fine(f) == local.cell {
                psi[f] = v;
            }
        }
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Internal(format!("missing local solution for coarse cell {c}")));
    }
    Ok(FineField(psi))
}

/// Upwind value of a fine field on every trace slot; domain inflow faces
/// take the problem's boundary value.
pub fn edge_traces(problem: &TransportProblem, psi: &[f64]) -> EdgeTraces {
    let mesh = &problem.mesh;
    mesh.slot_faces()
        .iter()
        .map(|&f| {
            let (up, _, _) = upwind_split(&mesh.faces[f], problem.velocity.face_flux[f]);
            up.map_or(problem.inflow_value, |u| psi[u])
        })
        .collect::<Vec<_>>()
        .into()
}

pub fn assemble_traces(problem: &TransportProblem, locals: &[RestrictedSolution]) -> Result<EdgeTraces> {
    let psi = global_downscaling(&problem.mesh, locals)?;
    Ok(edge_traces(problem, &psi))
}

/// Trace provider backed by exact local solves.
pub struct ExactTraceProvider<'p> {
    problem: &'p TransportProblem,
    geometries: Vec<LocalGeometry>,
    newton: NewtonConfig,
}

impl<'p> ExactTraceProvider<'p> {
    pub fn new(problem: &'p TransportProblem, cfg: &DownscaleConfig) -> Result<Self> {
        let geometries = problem
            .mesh
            .oversample_all(cfg.plus_layers, cfg.plusplus_layers)?
            .into_par_iter()
            .map(|os| LocalGeometry::build(&problem.mesh, &problem.velocity.face_flux, os, cfg.constraints))
            .collect();
        Ok(Self {
            problem,
            geometries,
            newton: cfg.newton,
        })
    }

    pub fn geometries(&self) -> &[LocalGeometry] {
        &self.geometries
    }

    pub fn problem(&self) -> &TransportProblem {
        self.problem
    }

    /// Solves every local problem; results are ordered by coarse cell.
    pub fn solve_all(&self, iterate: &[f64], previous: &[f64]) -> Result<Vec<LocalSolution>> {
        self.geometries
            .par_iter()
            .map(|g| {
                LocalProblem::build(self.problem, g, previous, iterate)
                    .solve(&self.newton)
                    .map_err(|source| Error::LocalSolve {
                        alpha: g.cell(),
                        source,
                    })
            })
            .collect()
    }

    pub fn restricted(&self, iterate: &[f64], previous: &[f64]) -> Result<Vec<RestrictedSolution>> {
        Ok(self
            .solve_all(iterate, previous)?
            .iter()
            .zip(&self.geometries)
            .map(|(s, g)| restrict_local(s, g))
            .collect())
    }
}

impl TraceProvider for ExactTraceProvider<'_> {
    fn name(&self) -> &str {
        "exact"
    }

    fn traces(&self, iterate: &[f64], previous: &[f64]) -> Result<EdgeTraces> {
        let locals = self.restricted(iterate, previous)?;
        assemble_traces(self.problem, &locals)
    }
}
