//! Thin vector newtypes for the three kinds of discrete fields.

use std::ops::{Deref, DerefMut};

use crate::mesh::MeshHierarchy;

macro_rules! field_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn filled(n: usize, value: f64) -> Self {
                Self(vec![value; n])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

field_newtype!(
    /// One value per fine cell (piecewise constant).
    FineField
);
field_newtype!(
    /// Coarse-cell means, one per coarse cell.
    CellAverages
);
field_newtype!(
    /// Upwind values of the downscaled field on every coarse-edge fine face,
    /// in the mesh's global slot order.
    EdgeTraces
);

impl FineField {
    /// Area-weighted coarse means.
    pub fn coarse_averages(&self, mesh: &MeshHierarchy) -> CellAverages {
        assert_eq!(self.len(), mesh.num_fine());
        let weight = mesh.fine_area() / mesh.coarse_area();
        (0..mesh.num_coarse())
            .map(|c| mesh.fine_of_coarse(c).iter().map(|&f| self[f] * weight).sum())
            .collect::<Vec<f64>>()
            .into()
    }
}
