//! Coarse/fine rectangular mesh hierarchy on the unit square.
//!
//! Cells are indexed row-major with x fastest: coarse cell `(i, j)` has index
//! `i + j * nx`, fine cell `(i, j)` has index `i + j * fine_nx`. Every fine
//! face carries a fixed global normal (+x for vertical faces, +y for
//! horizontal ones); its `owner` sits on the negative side of that normal and
//! its `neighbor` on the positive side.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Vertical face, normal along +x.
    X,
    /// Horizontal face, normal along +y.
    Y,
}

#[derive(Debug, Clone)]
pub struct FineFace {
    pub normal: Axis,
    /// Fine cell on the negative side of the normal.
    pub owner: Option<usize>,
    /// Fine cell on the positive side of the normal.
    pub neighbor: Option<usize>,
    pub midpoint: (f64, f64),
    pub length: f64,
    /// Coarse edge this face belongs to, `None` for faces interior to a coarse cell.
    pub coarse_edge: Option<usize>,
}

impl FineFace {
    pub fn is_boundary(&self) -> bool {
        self.owner.is_none() || self.neighbor.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct CoarseEdge {
    pub normal: Axis,
    /// Fine faces ordered by midpoint.
    pub faces: Vec<usize>,
    /// Coarse cell on the negative side of the normal.
    pub owner: Option<usize>,
    /// Coarse cell on the positive side of the normal.
    pub neighbor: Option<usize>,
    /// Offset of this edge's first face in the global trace layout.
    pub slot_offset: usize,
}

/// Axis-aligned block of coarse cells, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl CellRect {
    pub fn width(&self) -> usize {
        self.i1 - self.i0
    }

    pub fn height(&self) -> usize {
        self.j1 - self.j0
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..self.i1).contains(&i) && (self.j0..self.j1).contains(&j)
    }

    pub fn contains_rect(&self, other: &CellRect) -> bool {
        self.i0 <= other.i0 && other.i1 <= self.i1 && self.j0 <= other.j0 && other.j1 <= self.j1
    }

    /// Grows the block by `layers` cells on every side, clipped to `[0, nx) x [0, ny)`.
    pub fn grow(&self, layers: usize, nx: usize, ny: usize) -> CellRect {
        CellRect {
            i0: self.i0.saturating_sub(layers),
            i1: (self.i1 + layers).min(nx),
            j0: self.j0.saturating_sub(layers),
            j1: (self.j1 + layers).min(ny),
        }
    }

    /// Coarse cell indices in row-major order.
    pub fn cells(&self, nx: usize) -> impl Iterator<Item = usize> + '_ {
        (self.j0..self.j1).flat_map(move |j| (self.i0..self.i1).map(move |i| i + j * nx))
    }
}

/// Oversampling sets for one coarse cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Oversample {
    pub cell: usize,
    pub own: CellRect,
    pub plus: CellRect,
    pub plusplus: CellRect,
    pub plus_layers: usize,
    pub plusplus_layers: usize,
}

impl Oversample {
    pub fn plus_cells(&self, nx: usize) -> Vec<usize> {
        self.plus.cells(nx).collect()
    }

    pub fn plusplus_cells(&self, nx: usize) -> Vec<usize> {
        self.plusplus.cells(nx).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub nx: usize,
    pub ny: usize,
    pub refine: usize,
    pub fine_nx: usize,
    pub fine_ny: usize,
    /// Coarse mesh sizes along x and y.
    pub coarse_h: (f64, f64),
    /// Fine mesh sizes along x and y.
    pub fine_h: (f64, f64),
    pub faces: Vec<FineFace>,
    pub edges: Vec<CoarseEdge>,
    fine_to_coarse: Vec<usize>,
    coarse_to_fine: Vec<Vec<usize>>,
    slot_of_face: Vec<Option<usize>>,
    slot_faces: Vec<usize>,
}

impl MeshHierarchy {
    pub fn build(nx: usize, ny: usize, refine: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || refine == 0 {
            return Err(Error::InvalidArgument(format!(
                "mesh counts must be >= 1 (nx={nx}, ny={ny}, refine={refine})"
            )));
        }
        let fine_nx = nx * refine;
        let fine_ny = ny * refine;
        let coarse_h = (1.0 / nx as f64, 1.0 / ny as f64);
        let fine_h = (coarse_h.0 / refine as f64, coarse_h.1 / refine as f64);

        let fine_to_coarse = (0..fine_nx * fine_ny)
            .map(|f| {
                let (i, j) = (f % fine_nx, f / fine_nx);
                i / refine + (j / refine) * nx
            })
            .collect::<Vec<_>>();
        let mut coarse_to_fine = vec![Vec::with_capacity(refine * refine); nx * ny];
        for (f, &c) in fine_to_coarse.iter().enumerate() {
            coarse_to_fine[c].push(f);
        }

        let n_vertical = (fine_nx + 1) * fine_ny;
        let mut faces = Vec::with_capacity(n_vertical + fine_nx * (fine_ny + 1));
        for b in 0..fine_ny {
            for a in 0..=fine_nx {
                faces.push(FineFace {
                    normal: Axis::X,
                    owner: (a > 0).then(|| a - 1 + b * fine_nx),
                    neighbor: (a < fine_nx).then(|| a + b * fine_nx),
                    midpoint: (a as f64 * fine_h.0, (b as f64 + 0.5) * fine_h.1),
                    length: fine_h.1,
                    coarse_edge: None,
                });
            }
        }
        for b in 0..=fine_ny {
            for a in 0..fine_nx {
                faces.push(FineFace {
                    normal: Axis::Y,
                    owner: (b > 0).then(|| a + (b - 1) * fine_nx),
                    neighbor: (b < fine_ny).then(|| a + b * fine_nx),
                    midpoint: ((a as f64 + 0.5) * fine_h.0, b as f64 * fine_h.1),
                    length: fine_h.0,
                    coarse_edge: None,
                });
            }
        }

        // Coarse edges keyed by midpoint in half-fine-cell integer units so the
        // lexicographic (x, then y) sort is exact.
        let mut keyed: Vec<((usize, usize), CoarseEdge)> = Vec::new();
        for cj in 0..ny {
            for k in 0..=nx {
                let a = k * refine;
                let face_ids = (0..refine)
                    .map(|s| a + (cj * refine + s) * (fine_nx + 1))
                    .collect();
                keyed.push((
                    (2 * a, (2 * cj + 1) * refine),
                    CoarseEdge {
                        normal: Axis::X,
                        faces: face_ids,
                        owner: (k > 0).then(|| k - 1 + cj * nx),
                        neighbor: (k < nx).then(|| k + cj * nx),
                        slot_offset: 0,
                    },
                ));
            }
        }
        for k in 0..=ny {
            for ci in 0..nx {
                let b = k * refine;
                let face_ids = (0..refine)
                    .map(|s| n_vertical + ci * refine + s + b * fine_nx)
                    .collect();
                keyed.push((
                    ((2 * ci + 1) * refine, 2 * b),
                    CoarseEdge {
                        normal: Axis::Y,
                        faces: face_ids,
                        owner: (k > 0).then(|| ci + (k - 1) * nx),
                        neighbor: (k < ny).then(|| ci + k * nx),
                        slot_offset: 0,
                    },
                ));
            }
        }
        keyed.sort_by_key(|(key, _)| *key);
        let mut edges: Vec<CoarseEdge> = keyed.into_iter().map(|(_, e)| e).collect();

        let mut slot_of_face = vec![None; faces.len()];
        let mut slot_faces = Vec::new();
        for (e, edge) in edges.iter_mut().enumerate() {
            edge.slot_offset = slot_faces.len();
            for &f in &edge.faces {
                faces[f].coarse_edge = Some(e);
                slot_of_face[f] = Some(slot_faces.len());
                slot_faces.push(f);
            }
        }

        Ok(Self {
            nx,
            ny,
            refine,
            fine_nx,
            fine_ny,
            coarse_h,
            fine_h,
            faces,
            edges,
            fine_to_coarse,
            coarse_to_fine,
            slot_of_face,
            slot_faces,
        })
    }

    /// N_K, the number of coarse cells.
    pub fn num_coarse(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_fine(&self) -> usize {
        self.fine_nx * self.fine_ny
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Total number of (coarse edge, fine face) trace slots.
    pub fn num_trace_slots(&self) -> usize {
        self.slot_faces.len()
    }

    pub fn coarse_area(&self) -> f64 {
        self.coarse_h.0 * self.coarse_h.1
    }

    pub fn fine_area(&self) -> f64 {
        self.fine_h.0 * self.fine_h.1
    }

    pub fn coarse_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn coarse_index(&self, i: usize, j: usize) -> usize {
        i + j * self.nx
    }

    pub fn fine_ij(&self, f: usize) -> (usize, usize) {
        (f % self.fine_nx, f / self.fine_nx)
    }

    pub fn fine_index(&self, i: usize, j: usize) -> usize {
        i + j * self.fine_nx
    }

    pub fn fine_midpoint(&self, f: usize) -> (f64, f64) {
        let (i, j) = self.fine_ij(f);
        ((i as f64 + 0.5) * self.fine_h.0, (j as f64 + 0.5) * self.fine_h.1)
    }

    pub fn coarse_of_fine(&self, f: usize) -> usize {
        self.fine_to_coarse[f]
    }

    /// Fine cells of a coarse cell in row-major order.
    pub fn fine_of_coarse(&self, c: usize) -> &[usize] {
        &self.coarse_to_fine[c]
    }

    /// Face indices of a fine cell: west, east, south, north.
    pub fn fine_cell_faces(&self, f: usize) -> [usize; 4] {
        let (i, j) = self.fine_ij(f);
        let n_vertical = (self.fine_nx + 1) * self.fine_ny;
        [
            i + j * (self.fine_nx + 1),
            i + 1 + j * (self.fine_nx + 1),
            n_vertical + i + j * self.fine_nx,
            n_vertical + i + (j + 1) * self.fine_nx,
        ]
    }

    /// Trace slot of a fine face, if the face lies on a coarse edge.
    pub fn slot_of_face(&self, face: usize) -> Option<usize> {
        self.slot_of_face[face]
    }

    /// Fine face stored in each trace slot, in global slot order.
    pub fn slot_faces(&self) -> &[usize] {
        &self.slot_faces
    }

    /// Coarse edges with their ordered fine faces.
    pub fn coarse_edge_faces(&self) -> &[CoarseEdge] {
        &self.edges
    }

    pub fn oversample(
        &self,
        cell: usize,
        plus_layers: usize,
        plusplus_layers: usize,
    ) -> Result<Oversample> {
        if cell >= self.num_coarse() {
            return Err(Error::InvalidArgument(format!(
                "coarse cell {cell} out of range (N_K = {})",
                self.num_coarse()
            )));
        }
        if plus_layers == 0 || plusplus_layers == 0 {
            return Err(Error::InvalidArgument(
                "oversampling layer widths must be >= 1".into(),
            ));
        }
        let (i, j) = self.coarse_ij(cell);
        let own = CellRect {
            i0: i,
            i1: i + 1,
            j0: j,
            j1: j + 1,
        };
        let plus = own.grow(plus_layers, self.nx, self.ny);
        let plusplus = plus.grow(plusplus_layers, self.nx, self.ny);
        Ok(Oversample {
            cell,
            own,
            plus,
            plusplus,
            plus_layers,
            plusplus_layers,
        })
    }

    pub fn oversample_all(&self, plus_layers: usize, plusplus_layers: usize) -> Result<Vec<Oversample>> {
        (0..self.num_coarse())
            .map(|c| self.oversample(c, plus_layers, plusplus_layers))
            .collect()
    }

    /// Fine faces on the boundary of a union of coarse cells through which the
    /// flow enters the region. `region[c]` flags membership of coarse cell `c`;
    /// `face_flux` is the signed flux along each face's global normal.
    pub fn inflow_faces(&self, region: &[bool], face_flux: &[f64]) -> Vec<usize> {
        assert_eq!(region.len(), self.num_coarse());
        assert_eq!(face_flux.len(), self.faces.len());
        let inside = |cell: Option<usize>| cell.is_some_and(|f| region[self.coarse_of_fine(f)]);
        self.faces
            .iter()
            .enumerate()
            .filter_map(|(idx, face)| {
                let (neg, pos) = (inside(face.owner), inside(face.neighbor));
                let q = face_flux[idx];
                // Outward flux w.r.t. the region: +q if the region is on the
                // negative side, -q if on the positive side.
                match (neg, pos) {
                    (true, false) if q < 0.0 => Some(idx),
                    (false, true) if q > 0.0 => Some(idx),
                    _ => None,
                }
            })
            .collect()
    }

    pub fn region_mask(&self, cells: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut mask = vec![false; self.num_coarse()];
        for c in cells {
            mask[c] = true;
        }
        mask
    }

    /// Key/value summary printed by `mesh-info`.
    pub fn info_lines(&self) -> Vec<String> {
        vec![
            format!("nx_coarse={}", self.nx),
            format!("ny_coarse={}", self.ny),
            format!("refine={}", self.refine),
            format!("nx_fine={}", self.fine_nx),
            format!("ny_fine={}", self.fine_ny),
            format!("H={}", self.coarse_h.0),
            format!("Hy={}", self.coarse_h.1),
            format!("h={}", self.fine_h.0),
            format!("hy={}", self.fine_h.1),
            format!("coarse_cells={}", self.num_coarse()),
            format!("fine_cells={}", self.num_fine()),
            format!("fine_faces={}", self.faces.len()),
            format!("coarse_edges={}", self.num_edges()),
            format!("trace_slots={}", self.num_trace_slots()),
        ]
    }
}
