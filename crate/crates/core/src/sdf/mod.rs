//! Signed distance grids: sampling, gradients, mesh conversion and
//! iso-surface extraction.

mod grid;
mod marching_cubes;
mod mc_table;
mod mesh_to_sdf;

pub use grid::{sphere_grid, SdfGrid};
pub use marching_cubes::{marching_cubes, SNAP_TOLERANCE};
pub use mesh_to_sdf::{mesh_to_sdf, mesh_to_sdf_on, point_inside, TriangleBvh};
pub(crate) use mesh_to_sdf::{inside_mask, Lattice};

/// Default cells along the longest axis when converting meshes.
pub const DEFAULT_RESOLUTION: usize = 96;
