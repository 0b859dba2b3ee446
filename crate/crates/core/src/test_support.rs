//! Brute-force oracles shared by unit tests.

use crate::mesh::{closest_point_on_triangle, Point, TriMesh};

/// Distance from `p` to the surface of `m` by exhaustive scan.
pub fn surface_distance(m: &TriMesh, p: &Point) -> f64 {
    (0..m.face_count())
        .map(|f| {
            let [a, b, c] = m.triangle(f);
            (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric vertex-to-surface Hausdorff distance.
pub fn hausdorff(a: &TriMesh, b: &TriMesh) -> f64 {
    let one_way = |x: &TriMesh, y: &TriMesh| {
        x.vertices
            .iter()
            .map(|p| surface_distance(y, p))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}
