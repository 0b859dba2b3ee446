//! Exact signed distance grids from closed triangle meshes.
//!
//! Magnitudes come from a bounding-volume hierarchy over the triangles.
//! Signs come from axis-aligned rays cast along every grid line in the
//! three axis directions; each axis yields a crossing count per node and
//! the three verdicts are combined by majority vote.

use rayon::prelude::*;

use crate::error::Result;
use crate::mesh::{closest_point_on_triangle, Aabb, Point, TriMesh};
use crate::sdf::SdfGrid;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding-volume hierarchy for closest-point queries against a mesh.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
    tris: Vec<[Point; 3]>,
}

impl TriangleBvh {
    pub fn new(mesh: &TriMesh) -> Self {
        let tris: Vec<[Point; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Point> = tris
            .iter()
            .map(|t| Point::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            build(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        }
        TriangleBvh { nodes, order, tris }
    }

    /// Closest surface point and its distance, searching only within
    /// `max_dist` (pass infinity for an unbounded search).
    pub fn closest(&self, p: &Point, max_dist: f64) -> Option<(Point, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best_d2 = max_dist * max_dist;
        let mut best = None;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let bd = node.bounds().distance(p);
            if bd * bd > best_d2 {
                continue;
            }
            match *node {
                BvhNode::Leaf { start, end, .. } => {
                    for &t in &self.order[start..end] {
                        let [a, b, c] = &self.tris[t];
                        let q = closest_point_on_triangle(p, a, b, c);
                        let d2 = (q - p).norm_squared();
                        if d2 <= best_d2 {
                            best_d2 = d2;
                            best = Some(q);
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance(p);
                    let dr = self.nodes[right].bounds().distance(p);
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best.map(|q| (q, best_d2.sqrt()))
    }

    pub fn distance(&self, p: &Point) -> f64 {
        self.closest(p, f64::INFINITY).map_or(f64::INFINITY, |(_, d)| d)
    }
}

fn build(
    tris: &[[Point; 3]],
    centroids: &[Point],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let bounds = order[start..end]
        .iter()
        .flat_map(|&t| tris[t].iter())
        .fold(Aabb::empty(), |mut b, p| {
            b.grow(p);
            b
        });
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(BvhNode::Leaf { bounds, start, end });
        return id;
    }
    let cb = Aabb::from_points(order[start..end].iter().map(|&t| &centroids[t]));
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    nodes.push(BvhNode::Leaf {
        bounds,
        start,
        end,
    });
    let left = build(tris, centroids, order, start, mid, nodes);
    let right = build(tris, centroids, order, mid, end, nodes);
    nodes[id] = BvhNode::Inner {
        bounds,
        left,
        right,
    };
    id
}

/// Lattice description shared by the sign rasterizer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lattice {
    pub origin: Point,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl Lattice {
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + i as f64 * self.spacing
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }
}

#[inline]
fn edge_fn(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

#[inline]
fn is_top_left(ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let dy = by - ay;
    dy > 0.0 || (dy == 0.0 && bx < ax)
}

/// Signed crossing counts of rays cast from every lattice node towards
/// `+axis`. Outward-wound closed meshes give a nonzero count exactly
/// inside. Shared edges and vertices are claimed by a single triangle.
pub(crate) fn winding_along_axis(mesh: &TriMesh, lat: &Lattice, axis: usize) -> Vec<i32> {
    let u = (axis + 1) % 3;
    let v = (axis + 2) % 3;
    let (nu, nv, na) = (lat.dims[u], lat.dims[v], lat.dims[axis]);
    let mut lines: Vec<Vec<(f64, i32)>> = vec![Vec::new(); nu * nv];
    let h = lat.spacing;

    for f in 0..mesh.faces.len() {
        let t = mesh.triangle(f);
        let (mut p0, mut p1, p2) = (t[0], t[1], t[2]);
        let area = edge_fn(p0[u], p0[v], p1[u], p1[v], p2[u], p2[v]);
        if area == 0.0 {
            continue;
        }
        let sign = if area > 0.0 { 1 } else { -1 };
        if area < 0.0 {
            std::mem::swap(&mut p0, &mut p1);
        }
        let area = area.abs();
        let lo_u = p0[u].min(p1[u]).min(p2[u]);
        let hi_u = p0[u].max(p1[u]).max(p2[u]);
        let lo_v = p0[v].min(p1[v]).min(p2[v]);
        let hi_v = p0[v].max(p1[v]).max(p2[v]);
        let iu0 = (((lo_u - lat.origin[u]) / h).ceil().max(0.0)) as usize;
        let iv0 = (((lo_v - lat.origin[v]) / h).ceil().max(0.0)) as usize;
        let iu1 = ((hi_u - lat.origin[u]) / h).floor();
        let iv1 = ((hi_v - lat.origin[v]) / h).floor();
        if iu1 < 0.0 || iv1 < 0.0 {
            continue;
        }
        let iu1 = (iu1 as usize).min(nu - 1);
        let iv1 = (iv1 as usize).min(nv - 1);
        let tl = [
            is_top_left(p1[u], p1[v], p2[u], p2[v]),
            is_top_left(p2[u], p2[v], p0[u], p0[v]),
            is_top_left(p0[u], p0[v], p1[u], p1[v]),
        ];
        for iv in iv0..=iv1 {
            let pv = lat.coord(v, iv);
            for iu in iu0..=iu1 {
                let pu = lat.coord(u, iu);
                let w0 = edge_fn(p1[u], p1[v], p2[u], p2[v], pu, pv);
                let w1 = edge_fn(p2[u], p2[v], p0[u], p0[v], pu, pv);
                let w2 = edge_fn(p0[u], p0[v], p1[u], p1[v], pu, pv);
                let covered = [w0, w1, w2]
                    .iter()
                    .zip(tl)
                    .all(|(&w, top_left)| w > 0.0 || (w == 0.0 && top_left));
                if !covered {
                    continue;
                }
                let depth = (w0 * p0[axis] + w1 * p1[axis] + w2 * p2[axis]) / area;
                lines[iu + nu * iv].push((depth, sign));
            }
        }
    }

    // The crossing sign above is the sign of the normal's `axis` component
    // for counter-clockwise (u, v) projections.
    let mut out = vec![0i32; lat.len()];
    for iv in 0..nv {
        for iu in 0..nu {
            let line = &mut lines[iu + nu * iv];
            if line.is_empty() {
                continue;
            }
            line.sort_by(|a, b| a.0.total_cmp(&b.0));
            // Walk nodes from +axis end towards -axis, accumulating crossings
            // that lie strictly ahead of the node.
            let mut acc = 0i32;
            let mut cursor = line.len();
            for ia in (0..na).rev() {
                let x = lat.coord(axis, ia);
                while cursor > 0 && line[cursor - 1].0 > x {
                    cursor -= 1;
                    acc += line[cursor].1;
                }
                let mut ijk = [0usize; 3];
                ijk[axis] = ia;
                ijk[u] = iu;
                ijk[v] = iv;
                out[lat.index(ijk[0], ijk[1], ijk[2])] = acc;
            }
        }
    }
    out
}

/// Inside/outside classification of every lattice node by majority vote
/// of the three axis-ray crossing counts.
pub(crate) fn inside_mask(mesh: &TriMesh, lat: &Lattice) -> Vec<bool> {
    let votes: Vec<Vec<i32>> = (0..3)
        .into_par_iter()
        .map(|a| winding_along_axis(mesh, lat, a))
        .collect();
    (0..lat.len())
        .map(|i| votes.iter().filter(|w| w[i] != 0).count() >= 2)
        .collect()
}

/// Signed distance grid covering the mesh bounds grown by `padding`, with
/// `resolution` cells along the longest axis.
pub fn mesh_to_sdf(mesh: &TriMesh, padding: f64, resolution: usize) -> Result<SdfGrid> {
    mesh.check_watertight()?;
    let bounds = mesh.aabb().expanded(padding);
    let ext = bounds.extent();
    let longest = ext.x.max(ext.y).max(ext.z);
    let spacing = longest / resolution.max(1) as f64;
    let dims = [0, 1, 2].map(|a| ((ext[a] / spacing).ceil() as usize + 1).max(2));
    mesh_to_sdf_on(mesh, bounds.min, spacing, dims)
}

/// Signed distance of `mesh` sampled on an explicit lattice.
pub fn mesh_to_sdf_on(
    mesh: &TriMesh,
    origin: Point,
    spacing: f64,
    dims: [usize; 3],
) -> Result<SdfGrid> {
    mesh.check_watertight()?;
    let lat = Lattice {
        origin,
        spacing,
        dims,
    };
    let inside = inside_mask(mesh, &lat);
    let bvh = TriangleBvh::new(mesh);
    let [nx, ny, _] = dims;
    let rows: Vec<(usize, usize)> = (0..dims[2])
        .flat_map(|k| (0..ny).map(move |j| (j, k)))
        .collect();
    let values: Vec<f64> = rows
        .par_iter()
        .flat_map_iter(|&(j, k)| {
            let bvh = &bvh;
            let inside = &inside;
            let mut prev = f64::INFINITY;
            (0..nx).map(move |i| {
                let p = lat.coord_point(i, j, k);
                // The previous node's distance plus one step bounds this one.
                let bound = prev + spacing * (1.0 + 1e-9);
                let d = match bvh.closest(&p, bound) {
                    Some((_, d)) => d,
                    None => bvh.distance(&p),
                };
                prev = d;
                if inside[lat.index(i, j, k)] {
                    -d
                } else {
                    d
                }
            })
        })
        .collect();
    SdfGrid::new(origin, spacing, dims, values)
}

impl Lattice {
    fn coord_point(&self, i: usize, j: usize, k: usize) -> Point {
        Point::new(self.coord(0, i), self.coord(1, j), self.coord(2, k))
    }
}

/// Inside test for arbitrary points by majority vote of three axis rays.
pub fn point_inside(mesh: &TriMesh, p: &Point) -> bool {
    let lat = Lattice {
        origin: *p,
        spacing: 1.0,
        dims: [1, 1, 1],
    };
    (0..3)
        .filter(|&a| winding_along_axis(mesh, &lat, a)[0] != 0)
        .count()
        >= 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::mesh::{box_mesh, icosphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bvh_matches_brute_force() {
        let m = icosphere(Point::new(0.1, 0.0, -0.1), 0.3, 2);
        let bvh = TriangleBvh::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let brute = (0..m.faces.len())
                .map(|f| {
                    let [a, b, c] = m.triangle(f);
                    (closest_point_on_triangle(&p, &a, &b, &c) - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((bvh.distance(&p) - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_icosphere_center() {
        let m = icosphere(Point::origin(), 1.0, 3);
        let g = mesh_to_sdf(&m, 0.2, 64).unwrap();
        let tol = 1.5 * g.spacing();
        assert!((g.sample(&Point::origin()) + 1.0).abs() < tol);
        assert!(g.boundary_is_positive());
    }

    #[test]
    fn box_face_center_is_near_zero() {
        let m = box_mesh(Point::new(-0.03, -0.02, -0.05), Point::new(0.03, 0.02, 0.05));
        let g = mesh_to_sdf(&m, 0.02, 48).unwrap();
        for p in [
            Point::new(0.03, 0.0, 0.0),
            Point::new(0.0, -0.02, 0.0),
            Point::new(0.0, 0.0, 0.05),
        ] {
            assert!(g.sample(&p).abs() < g.spacing());
        }
        // Trilinear blending across the medial ridge stays within one cell.
        assert!((g.sample(&Point::origin()) + 0.02).abs() < g.spacing());
    }

    #[test]
    fn open_fan_is_rejected() {
        let v = vec![
            Point::origin(),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(-1.0, 0.0, 0.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        assert!(matches!(mesh_to_sdf(&m, 0.1, 16), Err(Error::NonWatertight(_))));
    }

    #[test]
    fn grid_lines_through_vertices_and_edges() {
        // Lattice nodes lie exactly on box edges and corners in projection.
        let m = box_mesh(Point::new(-1.0, -1.0, -1.0), Point::new(1.0, 1.0, 1.0));
        let lat = Lattice {
            origin: Point::new(-2.0, -2.0, -2.0),
            spacing: 0.5,
            dims: [9, 9, 9],
        };
        let mask = inside_mask(&m, &lat);
        for k in 0..9 {
            for j in 0..9 {
                for i in 0..9 {
                    let p = lat.coord_point(i, j, k);
                    let strictly_in = p.iter().all(|c| c.abs() < 1.0);
                    let strictly_out = p.iter().any(|c| c.abs() > 1.0);
                    if strictly_in {
                        assert!(mask[lat.index(i, j, k)], "{p:?}");
                    }
                    if strictly_out {
                        assert!(!mask[lat.index(i, j, k)], "{p:?}");
                    }
                }
            }
        }
    }
}
