//! Rigid point-to-point ICP over mesh vertices.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::mesh::{Point, Vec3};

pub const MAX_ITERATIONS: usize = 50;
pub const RMS_TOLERANCE: f64 = 1e-7;

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over a fixed point set. Splits at the median of the
/// widest axis, so repeated coordinates are harmless.
pub struct PointIndex {
    points: Vec<Point>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl PointIndex {
    pub fn new(points: &[Point]) -> Self {
        let mut index = PointIndex {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = self.points[self.order[start] as usize];
        let mut hi = lo;
        for &i in &self.order[start..end] {
            let p = self.points[i as usize];
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let axis = (hi - lo).imax();
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize][axis]
                .total_cmp(&pts[b as usize][axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Index of the nearest point and its squared distance. Ties go to the
    /// lowest index.
    pub fn nearest(&self, p: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        if !self.nodes.is_empty() {
            self.search(0, p, &mut best);
        }
        best
    }

    fn search(&self, node: usize, p: &Point, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let i = i as usize;
                    let d2 = (self.points[i] - p).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = p[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, p, best);
                if delta * delta <= best.1 {
                    self.search(far, p, best);
                }
            }
        }
    }

    /// Up to `k` nearest points as (index, squared distance), closest first,
    /// ties by index.
    pub fn nearest_k(&self, p: &Point, k: usize) -> Vec<(usize, f64)> {
        let mut best = Vec::with_capacity(k + 1);
        if !self.nodes.is_empty() && k > 0 {
            self.search_k(0, p, k, &mut best);
        }
        best
    }

    fn search_k(&self, node: usize, p: &Point, k: usize, best: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let i = i as usize;
                    let d2 = (self.points[i] - p).norm_squared();
                    let key = |e: &(usize, f64)| (e.1, e.0);
                    let pos = best.partition_point(|e| key(e) < (d2, i));
                    if pos < k {
                        best.insert(pos, (i, d2));
                        best.truncate(k);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = p[axis] - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search_k(near, p, k, best);
                if best.len() < k || delta * delta <= best[best.len() - 1].1 {
                    self.search_k(far, p, k, best);
                }
            }
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: MAX_ITERATIONS,
            tolerance: RMS_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub transform: Isometry3<f64>,
    /// RMS correspondence distance under `transform`.
    pub rms: f64,
    pub iterations: usize,
}

/// Least-squares rigid transform taking `src[i]` to `dst[i]`.
pub fn kabsch(src: &[Point], dst: &[Point]) -> Isometry3<f64> {
    kabsch_weighted(src, dst, &vec![1.0; src.len()])
}

/// Weighted least-squares rigid transform taking `src[i]` to `dst[i]`.
pub fn kabsch_weighted(src: &[Point], dst: &[Point], weights: &[f64]) -> Isometry3<f64> {
    let n: f64 = weights.iter().sum();
    let mean = |pts: &[Point]| pts.iter().zip(weights).map(|(p, w)| p.coords * *w).sum::<Vec3>() / n;
    let (cs, cd) = (mean(src), mean(dst));
    let mut h = Matrix3::zeros();
    for ((a, b), w) in src.iter().zip(dst).zip(weights) {
        h += (a.coords - cs) * (b.coords - cd).transpose() * *w;
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rotation * cs;
    Isometry3::from_parts(Translation3::from(t), rotation)
}

fn centroid(points: &[Point]) -> Vec3 {
    points.iter().map(|p| p.coords).sum::<Vec3>() / points.len() as f64
}

/// Aligns `source` to the points in `target`, starting from the
/// translation that matches the two centroids.
pub fn icp(source: &[Point], target: &PointIndex, config: &IcpConfig) -> IcpResult {
    let mut transform = Isometry3::translation(0.0, 0.0, 0.0);
    transform.translation.vector = centroid(target.points()) - centroid(source);

    let correspond = |tf: &Isometry3<f64>| -> (Vec<Point>, f64) {
        let mut matched = Vec::with_capacity(source.len());
        let mut sq = 0.0;
        for p in source {
            let (j, d2) = target.nearest(&(tf * p));
            matched.push(target.points()[j]);
            sq += d2;
        }
        (matched, (sq / source.len() as f64).sqrt())
    };

    let (mut matched, mut rms) = correspond(&transform);
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let next = kabsch(source, &matched);
        let (next_matched, next_rms) = correspond(&next);
        let change = (rms - next_rms).abs();
        if next_rms > rms {
            break;
        }
        transform = next;
        matched = next_matched;
        rms = next_rms;
        if change < config.tolerance {
            break;
        }
    }
    IcpResult {
        transform,
        rms,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, icosphere};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn nearest_matches_brute_force_on_lattice_points() {
        // Many points share coordinates along every axis.
        let mut pts = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                for k in 0..12 {
                    pts.push(Point::new(i as f64 * 0.01, j as f64 * 0.01, k as f64 * 0.01));
                }
            }
        }
        let index = PointIndex::new(&pts);
        for q in [Point::new(0.031, 0.052, 0.004), Point::new(0.2, -0.1, 0.05)] {
            let (j, d2) = index.nearest(&q);
            let brute = pts
                .iter()
                .map(|p| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(d2, brute, epsilon = 1e-15);
            assert_relative_eq!((pts[j] - q).norm_squared(), brute, epsilon = 1e-15);
            let first = pts.iter().position(|p| (p - q).norm_squared() == brute).unwrap();
            assert_eq!(j, first);
        }
    }

    #[test]
    fn nearest_k_matches_sorted_scan() {
        let pts = icosphere(Point::origin(), 0.05, 2).vertices;
        let index = PointIndex::new(&pts);
        let q = Point::new(0.01, 0.04, -0.02);
        let mut brute: Vec<(usize, f64)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .collect();
        brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        assert_eq!(index.nearest_k(&q, 7), brute[..7].to_vec());
    }

    #[test]
    fn kabsch_recovers_rigid_motion() {
        let src = icosphere(Point::origin(), 0.05, 1).vertices;
        let tf = Isometry3::new(Vector3::new(0.01, -0.02, 0.03), Vector3::new(0.2, 0.1, -0.3));
        let dst: Vec<Point> = src.iter().map(|p| tf * p).collect();
        let est = kabsch(&src, &dst);
        assert_relative_eq!(est.to_homogeneous(), tf.to_homogeneous(), epsilon = 1e-12);
    }

    #[test]
    fn translated_box_is_recovered() {
        let m = box_mesh(Point::new(-0.03, -0.02, -0.01), Point::new(0.03, 0.02, 0.01));
        let t = Vec3::new(0.05, 0.0, 0.0);
        let moved = m.translated(&t);
        let result = icp(&m.vertices, &PointIndex::new(&moved.vertices), &IcpConfig::default());
        assert!((result.transform.translation.vector - t).norm() < 1e-6);
        assert!(result.rms < 1e-9);
    }

    #[test]
    fn identical_sets_stay_at_identity() {
        let m = icosphere(Point::new(0.1, 0.0, 0.0), 0.05, 2);
        let result = icp(&m.vertices, &PointIndex::new(&m.vertices), &IcpConfig::default());
        assert!(result.transform.translation.vector.norm() < 1e-12);
        assert!(result.transform.rotation.angle() < 1e-12);
    }
}
