use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Aabb, Point, Vec3};

const MAGIC: &[u8; 4] = b"SDFG";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 24 + 8;

/// Dense regular grid of signed distances, negative inside, stored
/// x-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfGrid {
    origin: Point,
    spacing: f64,
    dims: [usize; 3],
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn new(origin: Point, spacing: f64, dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("grid dims {dims:?} must be >= 2")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid(format!("grid spacing {spacing} must be > 0")));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::invalid(format!(
                "{} values for dims {dims:?}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("grid contains non-finite values"));
        }
        Ok(SdfGrid {
            origin,
            spacing,
            dims,
            values,
        })
    }

    /// Samples `f` at every node.
    pub fn from_fn(
        origin: Point,
        spacing: f64,
        dims: [usize; 3],
        f: impl Fn(&Point) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values.push(f(&Self::node_at(&origin, spacing, i, j, k)));
                }
            }
        }
        Self::new(origin, spacing, dims, values)
    }

    /// Grid covering `bounds` with at least one node at or beyond each face.
    pub fn covering(bounds: &Aabb, spacing: f64, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let ext = bounds.extent();
        let dims = [0, 1, 2].map(|a| ((ext[a] / spacing).ceil() as usize + 1).max(2));
        Self::from_fn(bounds.min, spacing, dims, f)
    }

    fn node_at(origin: &Point, spacing: f64, i: usize, j: usize, k: usize) -> Point {
        Point::new(
            origin.x + i as f64 * spacing,
            origin.y + j as f64 * spacing,
            origin.z + k as f64 * spacing,
        )
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point {
        Self::node_at(&self.origin, self.spacing, i, j, k)
    }

    pub fn bounds(&self) -> Aabb {
        let max = self.node(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        Aabb {
            min: self.origin,
            max,
        }
    }

    /// True when every node on the outer shell is strictly positive.
    pub fn boundary_is_positive(&self) -> bool {
        let [nx, ny, nz] = self.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let on_shell =
                        i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                    if on_shell && self.value(i, j, k) <= 0.0 {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Number of nodes with a negative value.
    pub fn inside_count(&self) -> usize {
        self.values.iter().filter(|&&v| v < 0.0).count()
    }

    /// Cell index and fractional offset along one axis, for a point
    /// already clamped to the grid.
    #[inline]
    fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let g = (x - self.origin[axis]) / self.spacing;
        let i = (g.floor().max(0.0) as usize).min(self.dims[axis] - 2);
        (i, g - i as f64)
    }

    #[inline]
    fn trilinear(&self, p: &Point) -> (f64, Vec3) {
        let (i, fx) = self.locate(0, p.x);
        let (j, fy) = self.locate(1, p.y);
        let (k, fz) = self.locate(2, p.z);
        let base = self.index(i, j, k);
        let sx = 1;
        let sy = self.dims[0];
        let sz = self.dims[0] * self.dims[1];
        let v = &self.values;
        let c000 = v[base];
        let c100 = v[base + sx];
        let c010 = v[base + sy];
        let c110 = v[base + sx + sy];
        let c001 = v[base + sz];
        let c101 = v[base + sx + sz];
        let c011 = v[base + sy + sz];
        let c111 = v[base + sx + sy + sz];

        let c00 = c000 + (c100 - c000) * fx;
        let c10 = c010 + (c110 - c010) * fx;
        let c01 = c001 + (c101 - c001) * fx;
        let c11 = c011 + (c111 - c011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        let value = c0 + (c1 - c0) * fz;

        let dx0 = (c100 - c000) + ((c110 - c010) - (c100 - c000)) * fy;
        let dx1 = (c101 - c001) + ((c111 - c011) - (c101 - c001)) * fy;
        let dx = dx0 + (dx1 - dx0) * fz;
        let dy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * fz;
        let dz = c1 - c0;
        (value, Vec3::new(dx, dy, dz) / self.spacing)
    }

    fn clamp(&self, p: &Point) -> Point {
        let b = self.bounds();
        p.sup(&b.min).inf(&b.max)
    }

    /// Trilinear sample; outside the grid, the boundary sample plus the
    /// distance to the grid box.
    pub fn sample(&self, p: &Point) -> f64 {
        self.sample_with_gradient(p).0
    }

    /// Value and exact derivative of [`sample`](Self::sample). The
    /// derivative jumps across cell faces.
    pub fn sample_with_gradient(&self, p: &Point) -> (f64, Vec3) {
        let q = self.clamp(p);
        let (v, mut g) = self.trilinear(&q);
        let off = p - q;
        let d = off.norm();
        if d == 0.0 {
            return (v, g);
        }
        for a in 0..3 {
            if off[a] != 0.0 {
                g[a] = 0.0;
            }
        }
        (v + d, g + off / d)
    }

    /// Central-difference gradient of [`sample`](Self::sample) with a step
    /// of half a cell.
    pub fn gradient(&self, p: &Point) -> Vec3 {
        let h = 0.5 * self.spacing;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut hi = *p;
            let mut lo = *p;
            hi[a] += h;
            lo[a] -= h;
            g[a] = (self.sample(&hi) - self.sample(&lo)) / (2.0 * h);
        }
        g
    }

    /// Resamples onto another lattice with the same query policy.
    pub fn resample(&self, origin: Point, spacing: f64, dims: [usize; 3]) -> Result<SdfGrid> {
        SdfGrid::from_fn(origin, spacing, dims, |p| self.sample(p))
    }

    /// Largest absolute difference between neighbouring nodes, per meter.
    pub fn max_slope(&self) -> f64 {
        let [nx, ny, nz] = self.dims;
        let mut m = 0.0f64;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let v = self.value(i, j, k);
                    if i + 1 < nx {
                        m = m.max((self.value(i + 1, j, k) - v).abs());
                    }
                    if j + 1 < ny {
                        m = m.max((self.value(i, j + 1, k) - v).abs());
                    }
                    if k + 1 < nz {
                        m = m.max((self.value(i, j, k + 1) - v).abs());
                    }
                }
            }
        }
        m / self.spacing
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for c in self.origin.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&self.spacing.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err("missing SDFG header".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(format!("unsupported SDFG version {version}"));
        }
        let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
        let origin = Point::new(f64_at(20), f64_at(28), f64_at(36));
        let spacing = f64_at(44);
        let n = dims.iter().product::<usize>();
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * n {
            return Err(format!("expected {} value bytes, found {}", 4 * n, body.len()));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        SdfGrid::new(origin, spacing, dims, values).map_err(|e| e.to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::parse(path, m))
    }
}

/// Analytic sphere SDF sampled on a cubic grid centred on `center` with
/// `margin` of clearance beyond the surface.
pub fn sphere_grid(center: Point, radius: f64, spacing: f64, margin: f64) -> SdfGrid {
    let half = radius + margin;
    let bounds = Aabb {
        min: center - Vec3::repeat(half),
        max: center + Vec3::repeat(half),
    };
    SdfGrid::covering(&bounds, spacing, |p| (p - center).norm() - radius)
        .expect("sphere grid parameters are valid")
}
