pub mod config;
pub mod contact;
pub mod error;
pub mod fixtures;
pub mod hand;
pub mod icp;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod mokap;
pub mod optim;
pub mod pipeline;
pub mod refine;
pub mod sdf;
pub mod shape_path;
pub mod so3;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result, Stage, StageExt};
pub use mesh::{Aabb, Point, TriMesh, Vec3};
pub use sdf::SdfGrid;
