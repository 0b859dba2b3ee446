//! Landmark shapes between a source and a target object, obtained by
//! blending signed distances on a shared lattice.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};
use crate::sdf::{marching_cubes, SdfGrid};

/// Largest lattice edge, in cells, used when resampling onto a common grid.
pub const MAX_CELLS: usize = 128;
pub const DEFAULT_N_ITPL: usize = 10;

/// A point in a backend's shape space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentShape {
    pub code: Vec<f64>,
    pub category: String,
}

/// Encodes shapes to codes, decodes codes to signed distance grids.
/// Interpolation happens on codes, so a learned backend can replace the
/// grid blend without touching downstream stages.
pub trait ShapePathBackend {
    fn latent_dim(&self) -> usize;
    fn encode(&self, grid: &SdfGrid, category: &str) -> Result<LatentShape>;
    fn decode(&self, shape: &LatentShape) -> Result<SdfGrid>;

    fn interpolate(&self, a: &LatentShape, b: &LatentShape, t: f64) -> LatentShape {
        LatentShape {
            code: a
                .code
                .iter()
                .zip(&b.code)
                .map(|(x, y)| (1.0 - t) * x + t * y)
                .collect(),
            category: a.category.clone(),
        }
    }
}

/// Backend whose code is the grid's node values on a fixed lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBlendBackend {
    origin: Point,
    spacing: f64,
    dims: [usize; 3],
}

impl GridBlendBackend {
    pub fn new(origin: Point, spacing: f64, dims: [usize; 3]) -> Self {
        GridBlendBackend {
            origin,
            spacing,
            dims,
        }
    }

    /// Lattice covering both grids at the finer spacing, coarsened to at
    /// most `max_cells` cells per axis.
    pub fn for_pair(a: &SdfGrid, b: &SdfGrid, max_cells: usize) -> Result<Self> {
        let bounds = a.bounds().union(&b.bounds());
        let ext = bounds.extent();
        let longest = ext.x.max(ext.y).max(ext.z);
        let coarser = a.spacing().max(b.spacing());
        let mut spacing = a.spacing().min(b.spacing());
        if longest / spacing > max_cells as f64 {
            spacing = longest / max_cells as f64;
            if spacing > coarser * (1.0 + 1e-12) {
                return Err(Error::LatticeMismatch(format!(
                    "union extent {longest:.4} m needs spacing {spacing:.3e} m, coarser than both inputs \
                     ({:.3e} m, {:.3e} m) at {max_cells} cells per axis",
                    a.spacing(),
                    b.spacing()
                )));
            }
        }
        let dims = [0, 1, 2].map(|i| ((ext[i] / spacing - 1e-9).ceil() as usize + 1).max(2));
        Ok(Self::new(bounds.min, spacing, dims))
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
}

impl ShapePathBackend for GridBlendBackend {
    fn latent_dim(&self) -> usize {
        self.dims.iter().product()
    }

    fn encode(&self, grid: &SdfGrid, category: &str) -> Result<LatentShape> {
        let same_lattice =
            grid.origin() == self.origin && grid.spacing() == self.spacing && grid.dims() == self.dims;
        let code = if same_lattice {
            grid.values().to_vec()
        } else {
            grid.resample(self.origin, self.spacing, self.dims)?.into_values()
        };
        Ok(LatentShape {
            code,
            category: category.to_string(),
        })
    }

    fn decode(&self, shape: &LatentShape) -> Result<SdfGrid> {
        if shape.code.len() != self.latent_dim() {
            return Err(Error::invalid(format!(
                "code length {} does not match latent dimension {}",
                shape.code.len(),
                self.latent_dim()
            )));
        }
        SdfGrid::new(self.origin, self.spacing, self.dims, shape.code.clone())
    }
}

/// Resamples both grids onto their common lattice.
pub fn resample_to_common(a: &SdfGrid, b: &SdfGrid, max_cells: usize) -> Result<(SdfGrid, SdfGrid)> {
    let backend = GridBlendBackend::for_pair(a, b, max_cells)?;
    let ga = backend.decode(&backend.encode(a, "")?)?;
    let gb = backend.decode(&backend.encode(b, "")?)?;
    Ok((ga, gb))
}

/// Blend weight of landmark `k` out of `n`: interior quantiles of (0, 1).
pub fn quantile(k: usize, n: usize) -> f64 {
    (k + 1) as f64 / (n + 1) as f64
}

/// A surface together with its signed distance grid.
#[derive(Debug, Clone)]
pub struct Shape {
    pub mesh: TriMesh,
    pub sdf: SdfGrid,
}

#[derive(Debug, Clone)]
pub struct Landmark {
    pub t: f64,
    pub sdf: SdfGrid,
    pub mesh: TriMesh,
}

#[derive(Debug, Clone)]
pub struct LandmarkPath {
    pub source: Shape,
    pub target: Shape,
    pub landmarks: Vec<Landmark>,
}

impl LandmarkPath {
    pub fn n_itpl(&self) -> usize {
        self.landmarks.len()
    }

    /// Source, every landmark, then target.
    pub fn meshes(&self) -> Vec<&TriMesh> {
        std::iter::once(&self.source.mesh)
            .chain(self.landmarks.iter().map(|l| &l.mesh))
            .chain(std::iter::once(&self.target.mesh))
            .collect()
    }
}

/// Landmark grids only, without meshing.
pub fn blend_landmarks(
    backend: &impl ShapePathBackend,
    source: &SdfGrid,
    target: &SdfGrid,
    n_itpl: usize,
) -> Result<Vec<(f64, SdfGrid)>> {
    if n_itpl == 0 {
        return Err(Error::invalid("n_itpl must be at least 1"));
    }
    let a = backend.encode(source, "")?;
    let b = backend.encode(target, "")?;
    (0..n_itpl)
        .map(|k| {
            let t = quantile(k, n_itpl);
            Ok((t, backend.decode(&backend.interpolate(&a, &b, t))?))
        })
        .collect()
}

/// Builds `n_itpl` landmarks between `source` and `target` and meshes each.
pub fn build_path(source: Shape, target: Shape, n_itpl: usize, max_cells: usize) -> Result<LandmarkPath> {
    let backend = GridBlendBackend::for_pair(&source.sdf, &target.sdf, max_cells)?;
    let grids = blend_landmarks(&backend, &source.sdf, &target.sdf, n_itpl)?;
    let landmarks = grids
        .into_par_iter()
        .map(|(t, sdf)| {
            let mesh = marching_cubes(&sdf, 0.0)?;
            Ok(Landmark { t, sdf, mesh })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandmarkPath {
        source,
        target,
        landmarks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::sphere_grid;
    use crate::test_support::hausdorff;

    fn sphere_shape(r: f64, spacing: f64) -> Shape {
        let sdf = sphere_grid(Point::origin(), r, spacing, 0.02);
        let mesh = marching_cubes(&sdf, 0.0).unwrap();
        Shape { mesh, sdf }
    }

    #[test]
    fn quantiles_are_interior() {
        assert_eq!(quantile(0, 1), 0.5);
        let t: Vec<f64> = (0..10).map(|k| quantile(k, 10)).collect();
        assert_eq!(t[0], 1.0 / 11.0);
        assert_eq!(t[9], 10.0 / 11.0);
    }

    #[test]
    fn self_path_reproduces_the_source() {
        let s = sphere_shape(0.06, 0.004);
        let path = build_path(s.clone(), s.clone(), 3, MAX_CELLS).unwrap();
        for l in &path.landmarks {
            assert!(hausdorff(&l.mesh, &s.mesh) < 2.0 * 0.004);
            assert!(l.mesh.is_watertight());
        }
    }

    #[test]
    fn concentric_spheres_blend_radius() {
        let spacing = 0.005;
        let a = sphere_shape(0.05, spacing);
        let b = sphere_shape(0.15, spacing);
        let path = build_path(a, b, 10, MAX_CELLS).unwrap();
        for l in &path.landmarks {
            // Root of (1 - t)(r - 0.05) + t (r - 0.15) on the radial profile.
            let (mut lo, mut hi) = (0.0f64, 0.3f64);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let f = (1.0 - l.t) * (mid - 0.05) + l.t * (mid - 0.15);
                if f < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            for v in &l.mesh.vertices {
                assert!((v.coords.norm() - lo).abs() < 2.0 * spacing);
            }
        }
    }

    #[test]
    fn volume_grows_monotonically() {
        let a = sphere_shape(0.04, 0.004);
        let b = sphere_shape(0.08, 0.004);
        let path = build_path(a, b, 8, MAX_CELLS).unwrap();
        let counts: Vec<usize> = path.landmarks.iter().map(|l| l.sdf.inside_count()).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }

    #[test]
    fn path_is_deterministic() {
        let a = sphere_shape(0.04, 0.004);
        let b = sphere_shape(0.06, 0.003);
        let p1 = build_path(a.clone(), b.clone(), 4, MAX_CELLS).unwrap();
        let p2 = build_path(a, b, 4, MAX_CELLS).unwrap();
        for (x, y) in p1.landmarks.iter().zip(&p2.landmarks) {
            assert_eq!(x.sdf, y.sdf);
        }
    }

    #[test]
    fn common_lattice_uses_finer_spacing() {
        let a = sphere_grid(Point::origin(), 0.05, 0.004, 0.01);
        let b = sphere_grid(Point::new(0.02, 0.0, 0.0), 0.05, 0.003, 0.01);
        let (ga, gb) = resample_to_common(&a, &b, MAX_CELLS).unwrap();
        assert_eq!(ga.spacing(), 0.003);
        assert_eq!(ga.dims(), gb.dims());
        assert!(ga.bounds().contains(&b.bounds().max));
    }

    #[test]
    fn oversized_union_is_rejected() {
        let a = sphere_grid(Point::origin(), 0.05, 0.002, 0.01);
        let b = sphere_grid(Point::new(2.0, 0.0, 0.0), 0.05, 0.002, 0.01);
        assert!(matches!(
            resample_to_common(&a, &b, MAX_CELLS),
            Err(Error::LatticeMismatch(_))
        ));
    }

    #[test]
    fn zero_landmarks_is_invalid() {
        let s = sphere_shape(0.05, 0.005);
        assert!(build_path(s.clone(), s, 0, MAX_CELLS).is_err());
    }
}
