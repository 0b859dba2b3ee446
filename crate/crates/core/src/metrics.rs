//! Physical grasp quality: penetration depth, solid intersection volume and
//! displacement of the object in a short rigid-body simulation.

use nalgebra::{Matrix3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh, Vec3};
use crate::sdf::{inside_mask, mesh_to_sdf, Lattice, SdfGrid};

const M_TO_CM: f64 = 100.0;
const M3_TO_CM3: f64 = 1e6;

/// A posed hand and the object it holds, in one world frame.
#[derive(Debug, Clone)]
pub struct GraspRecord {
    pub hand: TriMesh,
    pub object: TriMesh,
    pub object_sdf: SdfGrid,
    pub source_id: String,
    pub intent: String,
    pub category: String,
}

impl GraspRecord {
    pub fn new(hand: TriMesh, object: TriMesh, object_sdf: SdfGrid) -> Self {
        GraspRecord {
            hand,
            object,
            object_sdf,
            source_id: String::new(),
            intent: String::new(),
            category: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hand.check_watertight()?;
        self.object.check_watertight()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityReport {
    /// Deepest hand vertex inside the object, cm.
    pub penet_depth: f64,
    /// Hand volume inside the object, cm³.
    pub intersect_volume: f64,
    /// Object displacement over the simulation, cm.
    pub sim_disp_mean: f64,
    pub sim_disp_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub steps: usize,
    pub repeats: usize,
    /// Total contact stiffness, N/m, shared among the penetrating points.
    pub stiffness: f64,
    /// Fraction of critical damping of the contact spring.
    pub damping_ratio: f64,
    pub friction: f64,
    /// Standard deviation of each initial velocity component, m/s.
    pub jitter: f64,
    pub gravity: [f64; 3],
    /// Object density, kg/m³.
    pub density: f64,
    /// Cells along the longest axis of the hand collider grid.
    pub collider_resolution: usize,
    /// Upper bound on object surface points used as contact probes.
    pub max_probes: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.002,
            steps: 500,
            repeats: 3,
            stiffness: 1e4,
            damping_ratio: 1.0,
            friction: 0.8,
            jitter: 1e-3,
            gravity: [0.0, 0.0, -9.81],
            density: 500.0,
            collider_resolution: 64,
            max_probes: 2000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.steps >= 1
            && self.repeats >= 1
            && self.stiffness > 0.0
            && self.damping_ratio >= 0.0
            && self.friction >= 0.0
            && self.jitter >= 0.0
            && self.density > 0.0
            && self.collider_resolution >= 2
            && self.max_probes >= 1
            && self.gravity.iter().all(|g| g.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("simulation settings out of range"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Voxel pitch for the intersection volume, m.
    pub voxel: f64,
    pub sim: SimConfig,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            voxel: 0.001,
            sim: SimConfig::default(),
        }
    }
}

/// Deepest hand vertex below the object surface, cm.
pub fn penetration_depth(grasp: &GraspRecord) -> f64 {
    grasp
        .hand
        .vertices
        .iter()
        .map(|v| (-grasp.object_sdf.sample(v)).max(0.0))
        .fold(0.0, f64::max)
        * M_TO_CM
}

/// Volume of hand voxels whose centers lie inside the object, cm³.
pub fn intersection_volume(grasp: &GraspRecord, voxel: f64) -> Result<f64> {
    if !(voxel > 0.0) {
        return Err(Error::invalid("voxel pitch must be positive"));
    }
    let Some(region) = grasp.hand.aabb().intersection(&grasp.object.aabb()) else {
        return Ok(0.0);
    };
    // Voxel centers on a world-anchored lattice so nearby records share it.
    let lo = region.min.map(|c| ((c / voxel).floor() + 0.5) * voxel);
    let dims = [0, 1, 2].map(|a| ((region.max[a] - lo[a]) / voxel).floor() as usize + 1);
    let lat = Lattice {
        origin: lo,
        spacing: voxel,
        dims,
    };
    let inside = inside_mask(&grasp.hand, &lat);
    let mut count = 0usize;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if !inside[lat.index(i, j, k)] {
                    continue;
                }
                let p = Point::new(lat.coord(0, i), lat.coord(1, j), lat.coord(2, k));
                if grasp.object_sdf.sample(&p) < 0.0 {
                    count += 1;
                }
            }
        }
    }
    Ok(count as f64 * voxel.powi(3) * M3_TO_CM3)
}

/// Volume, centroid and inertia about the centroid of a closed mesh of
/// unit density.
pub fn mass_properties(mesh: &TriMesh) -> (f64, Point, Matrix3<f64>) {
    let mut volume = 0.0;
    let mut first = Vec3::zeros();
    let mut second = Matrix3::zeros();
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.triangle(f).map(|p| p.coords);
        let det = a.dot(&b.cross(&c));
        volume += det / 6.0;
        let s = a + b + c;
        first += s * (det / 24.0);
        second += (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose()) * (det / 120.0);
    }
    let centroid = first / volume;
    let central = second - centroid * centroid.transpose() * volume;
    let inertia = Matrix3::identity() * central.trace() - central;
    (volume, Point::from(centroid), inertia)
}

/// Object motion in a static hand collider; returns the displacement of the
/// center of mass after `steps` in metres. `hand` is `None` for free flight.
pub fn simulate(object: &TriMesh, hand: Option<&SdfGrid>, cfg: &SimConfig, seed: u64) -> Result<f64> {
    cfg.validate()?;
    let (volume, com, inertia_unit) = mass_properties(object);
    if !(volume > 0.0) {
        return Err(Error::invalid("object must enclose a positive volume"));
    }
    let mass = volume * cfg.density;
    let inertia_body = inertia_unit * cfg.density;
    let inertia_inv_body = inertia_body
        .try_inverse()
        .ok_or_else(|| Error::invalid("object inertia is singular"))?;
    let min_principal = inertia_body.symmetric_eigenvalues().min();

    let stride = object.vertex_count().div_ceil(cfg.max_probes);
    let probes: Vec<Vec3> = object.vertices.iter().step_by(stride).map(|v| v - com).collect();
    let reach = probes.iter().map(|r| r.norm()).fold(0.0, f64::max);
    let hand_bounds = hand.map(|g| g.bounds().expanded(reach));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.jitter).map_err(|e| Error::invalid(e.to_string()))?;
    let gravity = Vec3::from(cfg.gravity);
    let damping = 2.0 * cfg.damping_ratio * (cfg.stiffness * mass).sqrt();

    let mut x = com.coords;
    let mut v = Vec3::from_fn(|_, _| noise.sample(&mut rng));
    let mut q = UnitQuaternion::identity();
    let mut w = Vec3::zeros();
    let mut contacts: Vec<(Vec3, f64, Vec3)> = Vec::new();

    for _ in 0..cfg.steps {
        let rot = q.to_rotation_matrix();
        let mut force = gravity * mass;
        let mut torque = Vec3::zeros();
        if let (Some(grid), Some(bounds)) = (hand, &hand_bounds) {
            contacts.clear();
            if bounds.contains(&Point::from(x)) {
                for r in &probes {
                    let rw = rot * r;
                    let (d, g) = grid.sample_with_gradient(&Point::from(x + rw));
                    let gn = g.norm();
                    if d < 0.0 && gn > 1e-12 {
                        contacts.push((rw, d, g / gn));
                    }
                }
            }
            let n_c = contacts.len() as f64;
            for &(r, d, n) in &contacts {
                let vp = v + w.cross(&r);
                let vn = vp.dot(&n);
                let f_n = ((-cfg.stiffness * d - damping * vn) / n_c).max(0.0);
                let mut f = n * f_n;
                let vt = vp - n * vn;
                let speed = vt.norm();
                if speed > 1e-12 {
                    // Friction never reverses the sliding velocity within a step.
                    let m_eff = 1.0 / (1.0 / mass + r.norm_squared() / min_principal);
                    let cap = m_eff * speed / (cfg.dt * n_c);
                    f -= vt * ((cfg.friction * f_n).min(cap) / speed);
                }
                force += f;
                torque += r.cross(&f);
            }
        }
        let i_world = rot * inertia_body * rot.transpose();
        let i_inv = rot * inertia_inv_body * rot.transpose();
        v += force / mass * cfg.dt;
        w += i_inv * (torque - w.cross(&(i_world * w))) * cfg.dt;
        x += v * cfg.dt;
        q = UnitQuaternion::from_scaled_axis(w * cfg.dt) * q;
    }

    let disp = (x - com.coords).norm();
    let t = cfg.steps as f64 * cfg.dt;
    let ballistic = 0.5 * gravity.norm() * t * t + 6.0 * cfg.jitter * t;
    if !disp.is_finite() || disp > ballistic + 1.0 {
        return Err(Error::Unstable(disp));
    }
    Ok(disp)
}

/// Mean and population standard deviation of the simulated displacement
/// over `cfg.repeats` jittered runs, cm.
pub fn simulation_displacement(grasp: &GraspRecord, cfg: &SimConfig, seed: u64) -> Result<(f64, f64)> {
    cfg.validate()?;
    let collider = mesh_to_sdf(&grasp.hand, 0.01, cfg.collider_resolution)?;
    let runs: Vec<f64> = (0..cfg.repeats)
        .map(|r| simulate(&grasp.object, Some(&collider), cfg, seed.wrapping_add(r as u64)))
        .collect::<Result<_>>()?;
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    let var = runs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok((mean * M_TO_CM, var.sqrt() * M_TO_CM))
}

pub fn audit(grasp: &GraspRecord, cfg: &MetricConfig, seed: u64) -> Result<QualityReport> {
    grasp.validate()?;
    let (sim_disp_mean, sim_disp_std) = simulation_displacement(grasp, &cfg.sim, seed)?;
    Ok(QualityReport {
        penet_depth: penetration_depth(grasp),
        intersect_volume: intersection_volume(grasp, cfg.voxel)?,
        sim_disp_mean,
        sim_disp_std,
    })
}

/// Summary row over many reports plus one detail row per grasp.
pub fn audit_csv(rows: &[(String, QualityReport)]) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("record,penet_depth_cm,intersect_volume_cm3,sim_disp_mean_cm,sim_disp_std_cm\n");
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: fn(&QualityReport) -> f64| rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "mean,{},{},{},{}",
            mean(|r| r.penet_depth),
            mean(|r| r.intersect_volume),
            mean(|r| r.sim_disp_mean),
            mean(|r| r.sim_disp_std)
        );
    }
    for (id, r) in rows {
        let _ = writeln!(
            s,
            "{id},{},{},{},{}",
            r.penet_depth, r.intersect_volume, r.sim_disp_mean, r.sim_disp_std
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, icosphere};
    use crate::sdf::sphere_grid;
    use approx::assert_relative_eq;

    fn sphere_object(r: f64) -> (TriMesh, SdfGrid) {
        (icosphere(Point::origin(), r, 4), sphere_grid(Point::origin(), r, 0.002, 0.03))
    }

    fn cube(center: Point, half: f64) -> TriMesh {
        box_mesh(center - Vec3::repeat(half), center + Vec3::repeat(half))
    }

    #[test]
    fn disjoint_grasp_scores_zero() {
        let (obj, sdf) = sphere_object(0.05);
        let hand = cube(Point::new(0.2, 0.0, 0.0), 0.02);
        let g = GraspRecord::new(hand, obj, sdf);
        assert_eq!(penetration_depth(&g), 0.0);
        assert_eq!(intersection_volume(&g, 0.001).unwrap(), 0.0);
    }

    #[test]
    fn pushed_in_vertex_depth() {
        let (obj, sdf) = sphere_object(0.05);
        let tip = icosphere(Point::origin(), 0.005, 2);
        let o = tip.vertices[0].coords;
        let hand = tip.translated(&(-o.normalize() * 0.052));
        let g = GraspRecord::new(hand, obj, sdf);
        assert_relative_eq!(penetration_depth(&g), 0.3, epsilon = 0.02);
    }

    #[test]
    fn deepest_vertex_wins() {
        let (obj, sdf) = sphere_object(0.05);
        let hand = icosphere(Point::new(0.06, 0.01, 0.0), 0.02, 2);
        let g = GraspRecord::new(hand.clone(), obj, sdf.clone());
        let brute = hand.vertices.iter().map(|v| -sdf.sample(v)).fold(0.0, f64::max) * 100.0;
        assert_eq!(penetration_depth(&g), brute);
        assert!(brute > 0.0);
    }

    #[test]
    fn overlapping_boxes_share_one_cubic_centimetre() {
        let object = box_mesh(Point::new(0.0, 0.0, 0.0), Point::new(0.03, 0.03, 0.03));
        let sdf = crate::sdf::mesh_to_sdf(&object, 0.01, 60).unwrap();
        let hand = box_mesh(Point::new(0.02, 0.02, 0.02), Point::new(0.05, 0.05, 0.05));
        let g = GraspRecord::new(hand, object, sdf);
        let v = intersection_volume(&g, 0.001).unwrap();
        assert!((v - 1.0).abs() < 0.1, "volume {v}");
    }

    #[test]
    fn mass_properties_of_a_box() {
        let b = box_mesh(Point::new(0.0, 0.0, 0.0), Point::new(0.2, 0.1, 0.4));
        let (vol, c, i) = mass_properties(&b);
        assert_relative_eq!(vol, 0.008, epsilon = 1e-12);
        assert_relative_eq!(c, Point::new(0.1, 0.05, 0.2), epsilon = 1e-12);
        assert_relative_eq!(i[(0, 0)], vol * (0.01 + 0.16) / 12.0, epsilon = 1e-12);
        assert_relative_eq!(i[(2, 2)], vol * (0.04 + 0.01) / 12.0, epsilon = 1e-12);
        assert!(i[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn free_fall_matches_ballistics() {
        let obj = icosphere(Point::new(0.0, 0.0, 0.5), 0.05, 2);
        let cfg = SimConfig::default();
        let d = simulate(&obj, None, &cfg, 3).unwrap();
        let t = cfg.steps as f64 * cfg.dt;
        let expected = 0.5 * 9.81 * t * t;
        assert!((d - expected).abs() / expected < 0.05, "{d} vs {expected}");
    }

    #[test]
    fn caged_object_barely_moves() {
        let outer = cube(Point::origin(), 0.06);
        let mut inner = cube(Point::origin(), 0.045);
        for f in &mut inner.faces {
            f.swap(1, 2);
        }
        let mut verts = outer.vertices.clone();
        let off = verts.len() as u32;
        verts.extend(&inner.vertices);
        let mut faces = outer.faces.clone();
        faces.extend(inner.faces.iter().map(|f| f.map(|i| i + off)));
        let cage = TriMesh::new(verts, faces).unwrap();
        let object = icosphere(Point::origin(), 0.042, 3);
        let object_sdf = sphere_grid(Point::origin(), 0.042, 0.002, 0.02);
        let g = GraspRecord::new(cage, object, object_sdf);
        let (mean, std) = simulation_displacement(&g, &SimConfig::default(), 1).unwrap();
        assert!(mean < 0.5, "displacement {mean} cm");
        assert!(std >= 0.0);
    }

    #[test]
    fn one_repeat_has_no_spread() {
        let (obj, sdf) = sphere_object(0.03);
        let hand = cube(Point::new(0.0, 0.0, -0.05), 0.02);
        let g = GraspRecord::new(hand, obj, sdf);
        let cfg = SimConfig {
            repeats: 1,
            ..SimConfig::default()
        };
        assert_eq!(simulation_displacement(&g, &cfg, 0).unwrap().1, 0.0);
    }

    #[test]
    fn simulation_is_seeded() {
        let obj = icosphere(Point::origin(), 0.03, 2);
        let cfg = SimConfig::default();
        assert_eq!(simulate(&obj, None, &cfg, 9).unwrap(), simulate(&obj, None, &cfg, 9).unwrap());
        assert_ne!(simulate(&obj, None, &cfg, 9).unwrap(), simulate(&obj, None, &cfg, 10).unwrap());
    }
}
