//! Flux nonlinearity, analytic velocities, face fluxes and initial data.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fields::{CellAverages, FineField};
use crate::mesh::{Axis, MeshHierarchy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluxFunction {
    /// λ(S) = S².
    Quadratic,
    /// λ(S) = S|S|: equal to S² for S ≥ 0, odd and monotone otherwise.
    SignedQuadratic,
    /// λ(S) = S.
    Linear,
}

impl FluxFunction {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "quadratic" => Ok(Self::Quadratic),
            "signed-quadratic" => Ok(Self::SignedQuadratic),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidArgument(format!("unknown flux function `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Quadratic => "quadratic",
            Self::SignedQuadratic => "signed-quadratic",
            Self::Linear => "linear",
        }
    }

    /// Odd extension used by the upscaled model: identical on `S ≥ 0`, and
    /// monotone so that every local cell balance has exactly one root.
    pub fn odd_extension(self) -> Self {
        match self {
            Self::Quadratic | Self::SignedQuadratic => Self::SignedQuadratic,
            Self::Linear => Self::Linear,
        }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Self::Quadratic => s * s,
            Self::SignedQuadratic => s * s.abs(),
            Self::Linear => s,
        }
    }

    #[inline]
    pub fn deriv(&self, s: f64) -> f64 {
        match self {
            Self::Quadratic => 2.0 * s,
            Self::SignedQuadratic => 2.0 * s.abs(),
            Self::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticVelocity {
    Constant { vx: f64, vy: f64 },
    /// `(1 + sin²(2πx) sin(2πy), 1 + sin(4πx) cos(2πy))`, divergence free.
    Example2,
}

impl AnalyticVelocity {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "constant11" => Ok(Self::Constant { vx: 1.0, vy: 1.0 }),
            "example2" => Ok(Self::Example2),
            other => Err(Error::InvalidArgument(format!("unknown velocity `{other}`"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Constant { vx, vy } if *vx == 1.0 && *vy == 1.0 => "constant11".into(),
            Self::Constant { vx, vy } => format!("constant({vx},{vy})"),
            Self::Example2 => "example2".into(),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Self::Constant { vx, vy } => (vx, vy),
            Self::Example2 => {
                let s = (2.0 * PI * x).sin();
                (
                    1.0 + s * s * (2.0 * PI * y).sin(),
                    1.0 + (4.0 * PI * x).sin() * (2.0 * PI * y).cos(),
                )
            }
        }
    }
}

/// Analytic velocity plus its signed face fluxes on a mesh.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub analytic: AnalyticVelocity,
    /// `q_f = h * (v . n)(midpoint)` along each face's global normal.
    pub face_flux: Vec<f64>,
}

impl VelocityField {
    pub fn on_mesh(analytic: AnalyticVelocity, mesh: &MeshHierarchy) -> Self {
        let face_flux = mesh
            .faces
            .iter()
            .map(|face| {
                let (vx, vy) = analytic.eval(face.midpoint.0, face.midpoint.1);
                let vn = match face.normal {
                    Axis::X => vx,
                    Axis::Y => vy,
                };
                face.length * vn
            })
            .collect();
        Self { analytic, face_flux }
    }

    pub fn builtin(name: &str, mesh: &MeshHierarchy) -> Result<Self> {
        Ok(Self::on_mesh(AnalyticVelocity::from_name(name)?, mesh))
    }

    pub fn name(&self) -> String {
        self.analytic.name()
    }

    /// Per fine cell sum of outward fluxes, and its max absolute value.
    pub fn discrete_divergence(&self, mesh: &MeshHierarchy) -> (Vec<f64>, f64) {
        let mut div = vec![0.0; mesh.num_fine()];
        for (face, &q) in mesh.faces.iter().zip(&self.face_flux) {
            if let Some(o) = face.owner {
                div[o] += q;
            }
            if let Some(n) = face.neighbor {
                div[n] -= q;
            }
        }
        let max = div.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (div, max)
    }

    /// Coarse-edge aggregate fluxes `Q_E = Σ_{f ⊂ E} q_f`.
    pub fn edge_flux(&self, mesh: &MeshHierarchy) -> Vec<f64> {
        mesh.edges
            .iter()
            .map(|e| e.faces.iter().map(|&f| self.face_flux[f]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    Constant(f64),
    /// `(1 + sin(kx π x) sin(ky π y)) / 2`.
    SinProduct { kx: f64, ky: f64 },
}

impl InitialCondition {
    /// `example1` (also used by the second example), `example3`, `zero`,
    /// `one` or `const:<value>`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::SinProduct { kx: 2.0, ky: 2.0 }),
            "example3" => Ok(Self::SinProduct { kx: 4.0, ky: 8.0 }),
            "zero" => Ok(Self::Constant(0.0)),
            "one" => Ok(Self::Constant(1.0)),
            other => other
                .strip_prefix("const:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .map(Self::Constant)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown initial condition `{other}`"))),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Self::Constant(c) => c,
            Self::SinProduct { kx, ky } => 0.5 * (1.0 + (kx * PI * x).sin() * (ky * PI * y).sin()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub mesh: MeshHierarchy,
    pub velocity: VelocityField,
    pub flux: FluxFunction,
    pub initial: InitialCondition,
    pub dt: f64,
    /// Ghost value on inflow faces of Ω. The physical problem uses 0; other
    /// values exist for steady-state test fixtures.
    pub inflow_value: f64,
}

impl TransportProblem {
    pub fn new(
        mesh: MeshHierarchy,
        analytic: AnalyticVelocity,
        flux: FluxFunction,
        initial: InitialCondition,
        dt: f64,
    ) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let velocity = VelocityField::on_mesh(analytic, &mesh);
        Ok(Self {
            mesh,
            velocity,
            flux,
            initial,
            dt,
            inflow_value: 0.0,
        })
    }

    /// γ = 1/Δt.
    pub fn gamma(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn check_divergence(&self, tolerance: f64) -> Result<f64> {
        let (_, max) = self.velocity.discrete_divergence(&self.mesh);
        if max > tolerance {
            return Err(Error::Divergence {
                max_imbalance: max,
                tolerance,
            });
        }
        Ok(max)
    }

    /// Midpoint samples of S0 and their coarse means.
    pub fn project_initial(&self) -> (FineField, CellAverages) {
        let fine: FineField = (0..self.mesh.num_fine())
            .map(|f| {
                let (x, y) = self.mesh.fine_midpoint(f);
                self.initial.eval(x, y)
            })
            .collect::<Vec<_>>()
            .into();
        let averages = fine.coarse_averages(&self.mesh);
        (fine, averages)
    }
}
