use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};
use crate::sdf::mc_table::TRI_TABLE;
use crate::sdf::SdfGrid;

/// Values this close to the iso level are nudged above it so that no
/// surface vertex lands exactly on a grid node.
pub const SNAP_TOLERANCE: f64 = 1e-9;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

// Cube edge -> (offset of its lower corner, axis).
const EDGES: [([usize; 3], usize); 12] = [
    ([0, 0, 0], 0),
    ([1, 0, 0], 1),
    ([0, 1, 0], 0),
    ([0, 0, 0], 1),
    ([0, 0, 1], 0),
    ([1, 0, 1], 1),
    ([0, 1, 1], 0),
    ([0, 0, 1], 1),
    ([0, 0, 0], 2),
    ([1, 0, 0], 2),
    ([1, 1, 0], 2),
    ([0, 1, 0], 2),
];

/// Extracts the `iso` level set as an outward-wound triangle mesh with one
/// shared vertex per crossed grid edge.
pub fn marching_cubes(grid: &SdfGrid, iso: f64) -> Result<TriMesh> {
    let [nx, ny, nz] = grid.dims();
    let snapped: Vec<f64> = grid
        .values()
        .iter()
        .map(|&v| if (v - iso).abs() < SNAP_TOLERANCE { iso + SNAP_TOLERANCE } else { v })
        .collect();
    let below = |idx: usize| snapped[idx] < iso;

    let n = nx * ny * nz;
    let mut edge_vertex = vec![u32::MAX; 3 * n];
    let mut vertices: Vec<Point> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    if below(grid.index(i + off[0], j + off[1], k + off[2])) {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut ids = [u32::MAX; 12];
                for t in row.chunks_exact(3) {
                    if t[0] < 0 {
                        break;
                    }
                    let mut tri = [0u32; 3];
                    for (slot, &e) in tri.iter_mut().zip(t) {
                        let e = e as usize;
                        if ids[e] == u32::MAX {
                            let (off, axis) = EDGES[e];
                            let (a, b, c) = (i + off[0], j + off[1], k + off[2]);
                            let lo = grid.index(a, b, c);
                            let key = 3 * lo + axis;
                            if edge_vertex[key] == u32::MAX {
                                let mut hi_ijk = [a, b, c];
                                hi_ijk[axis] += 1;
                                let hi = grid.index(hi_ijk[0], hi_ijk[1], hi_ijk[2]);
                                let (v0, v1) = (snapped[lo], snapped[hi]);
                                let s = (iso - v0) / (v1 - v0);
                                let p0 = grid.node(a, b, c);
                                let p1 = grid.node(hi_ijk[0], hi_ijk[1], hi_ijk[2]);
                                vertices.push(p0 + (p1 - p0) * s);
                                edge_vertex[key] = (vertices.len() - 1) as u32;
                            }
                            ids[e] = edge_vertex[key];
                        }
                        *slot = ids[e];
                    }
                    faces.push(tri);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptySurface);
    }
    // The table winds triangles with normals towards the negative side.
    for f in &mut faces {
        f.swap(1, 2);
    }
    TriMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Aabb;
    use crate::sdf::{sphere_grid, SdfGrid};
    use crate::mesh::Vec3;

    #[test]
    fn all_positive_grid_has_no_surface() {
        let g = SdfGrid::new(Point::origin(), 0.1, [3, 3, 3], vec![1.0; 27]).unwrap();
        assert!(matches!(marching_cubes(&g, 0.0), Err(Error::EmptySurface)));
    }

    #[test]
    fn sphere_is_closed_genus_zero() {
        let g = sphere_grid(Point::origin(), 0.1, 0.0025, 0.01);
        let m = marching_cubes(&g, 0.0).unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.signed_volume() > 0.0);
        for v in &m.vertices {
            assert!((v.coords.norm() - 0.1).abs() < 2.5e-3);
        }
    }

    #[test]
    fn nodes_on_the_iso_level_do_not_degenerate() {
        // Plane-like slab whose faces pass exactly through grid nodes.
        let b = Aabb {
            min: Point::new(-0.5, -0.5, -0.5),
            max: Point::new(0.5, 0.5, 0.5),
        };
        let g = SdfGrid::covering(&b, 0.125, |p| {
            let q = p.coords.abs() - Vec3::repeat(0.25);
            q.max()
        })
        .unwrap();
        let m = marching_cubes(&g, 0.0).unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        for f in 0..m.face_count() {
            let [a, b, c] = m.triangle(f);
            assert!((b - a).cross(&(c - a)).norm() > 0.0);
        }
    }

    #[test]
    fn torus_has_genus_one() {
        let b = Aabb {
            min: Point::new(-0.2, -0.2, -0.1),
            max: Point::new(0.2, 0.2, 0.1),
        };
        let g = SdfGrid::covering(&b, 0.01, |p| {
            let q = (p.x * p.x + p.y * p.y).sqrt() - 0.12;
            (q * q + p.z * p.z).sqrt() - 0.04
        })
        .unwrap();
        let m = marching_cubes(&g, 0.0).unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 0);
    }
}
