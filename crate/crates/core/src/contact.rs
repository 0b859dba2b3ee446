//! Contact regions on object surfaces and their transfer along a landmark
//! path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::PARTS;
use crate::icp::{icp, IcpConfig, PointIndex};
use crate::mesh::{Point, TriMesh};
use crate::shape_path::LandmarkPath;
use nalgebra::Isometry3;

/// Anchor-to-vertex distance beyond which no contact is recorded (m).
pub const CONTACT_THRESHOLD: f64 = 0.025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    #[default]
    Linear,
    Cosine,
}

impl Decay {
    /// Contactness at normalized distance `u` in `[0, 1]`.
    pub fn eval(self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            Decay::Linear => 1.0 - u,
            Decay::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * u).cos()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactConfig {
    pub threshold: f64,
    pub decay: Decay,
}

impl Default for ContactConfig {
    fn default() -> Self {
        ContactConfig {
            threshold: CONTACT_THRESHOLD,
            decay: Decay::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    /// Hand part id in `1..=17`.
    pub part: u8,
    pub gamma: f64,
    /// Index of the anchor that produced the label.
    pub anchor: usize,
}

/// Per-vertex contact labels on one object mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactnessField {
    entries: Vec<Option<Contact>>,
}

#[derive(Serialize, Deserialize)]
struct FieldEntry {
    v: usize,
    part: u8,
    gamma: f64,
    anchor: usize,
}

#[derive(Serialize, Deserialize)]
struct FieldDoc {
    vertex_count: usize,
    entries: Vec<FieldEntry>,
}

impl ContactnessField {
    pub fn empty(vertex_count: usize) -> Self {
        ContactnessField {
            entries: vec![None; vertex_count],
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, v: usize) -> Option<&Contact> {
        self.entries[v].as_ref()
    }

    /// Stores `c` at `v` unless an existing label there has at least its
    /// contactness.
    pub fn offer(&mut self, v: usize, c: Contact) {
        match &self.entries[v] {
            Some(old) if old.gamma >= c.gamma => {}
            _ => self.entries[v] = Some(c),
        }
    }

    pub fn labeled(&self) -> impl Iterator<Item = (usize, &Contact)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(v, e)| e.as_ref().map(|c| (v, c)))
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled().count()
    }

    pub fn gamma_sum(&self) -> f64 {
        self.labeled().map(|(_, c)| c.gamma).sum()
    }

    pub fn to_json(&self) -> String {
        let doc = FieldDoc {
            vertex_count: self.vertex_count(),
            entries: self
                .labeled()
                .map(|(v, c)| FieldEntry {
                    v,
                    part: c.part,
                    gamma: c.gamma,
                    anchor: c.anchor,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("field serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, String> {
        let doc: FieldDoc = serde_json::from_str(s).map_err(|e| e.to_string())?;
        let mut field = ContactnessField::empty(doc.vertex_count);
        for e in doc.entries {
            if e.v >= doc.vertex_count {
                return Err(format!("entry vertex {} out of range", e.v));
            }
            if !(1..=PARTS as u8).contains(&e.part) || !(e.gamma > 0.0 && e.gamma <= 1.0) {
                return Err(format!("entry at vertex {} has invalid part or gamma", e.v));
            }
            field.entries[e.v] = Some(Contact {
                part: e.part,
                gamma: e.gamma,
                anchor: e.anchor,
            });
        }
        Ok(field)
    }

    /// Per-vertex colours: part hue faded towards grey with falling
    /// contactness; unlabeled vertices are grey.
    pub fn vertex_colors(&self) -> Vec<[u8; 3]> {
        const GREY: [f64; 3] = [200.0, 200.0, 200.0];
        self.entries
            .iter()
            .map(|e| match e {
                None => GREY.map(|c| c as u8),
                Some(c) => {
                    let hue = part_color(c.part);
                    let mut out = [0u8; 3];
                    for k in 0..3 {
                        out[k] = (GREY[k] + (hue[k] - GREY[k]) * c.gamma).round() as u8;
                    }
                    out
                }
            })
            .collect()
    }
}

fn part_color(part: u8) -> [f64; 3] {
    let h = (part as f64 - 1.0) / PARTS as f64 * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r * 230.0, g * 230.0, b * 230.0]
}

/// Labels object vertices near hand anchors. `parts[i]` is the part id of
/// anchor `i`.
pub fn derive_contact(
    anchors: &[Point],
    parts: &[u8],
    object: &TriMesh,
    config: &ContactConfig,
) -> ContactnessField {
    let mut field = ContactnessField::empty(object.vertex_count());
    if object.vertices.is_empty() {
        return field;
    }
    for (i, (a, &part)) in anchors.iter().zip(parts).enumerate() {
        let dist: Vec<f64> = object.vertices.iter().map(|v| (v - a).norm()).collect();
        let d_min = dist.iter().copied().fold(f64::INFINITY, f64::min);
        if d_min >= config.threshold {
            continue;
        }
        let span = config.threshold - d_min;
        for (v, &d) in dist.iter().enumerate() {
            if d >= config.threshold {
                continue;
            }
            let gamma = if d == d_min { 1.0 } else { config.decay.eval((d - d_min) / span) };
            if gamma > 0.0 {
                field.offer(
                    v,
                    Contact {
                        part,
                        gamma,
                        anchor: i,
                    },
                );
            }
        }
    }
    field
}

/// Outcome of propagating a field along a path.
#[derive(Debug, Clone)]
pub struct MappedContacts {
    pub field: ContactnessField,
    /// ICP transform of each step, mesh `i` into mesh `i + 1`.
    pub transforms: Vec<Isometry3<f64>>,
    pub rms: Vec<f64>,
}

impl MappedContacts {
    /// Composition of all step transforms, source frame to target frame.
    pub fn total_transform(&self) -> Isometry3<f64> {
        self.transforms
            .iter()
            .fold(Isometry3::identity(), |acc, t| t * acc)
    }
}

/// Candidate slots a label may move to when its nearest vertex is taken.
pub const TRANSFER_CANDIDATES: usize = 8;

/// Transfers `field` across one aligned step onto `next`. Labels are placed
/// strongest first; a label whose nearest vertex is already taken moves to
/// the nearest free vertex among its closest candidates, and only when all
/// of them are taken does the stronger label win the collision.
pub fn transfer_step(
    field: &ContactnessField,
    mesh: &TriMesh,
    next: &PointIndex,
    transform: &Isometry3<f64>,
) -> ContactnessField {
    let mut out = ContactnessField::empty(next.points().len());
    let mut labeled: Vec<(usize, &Contact)> = field.labeled().collect();
    labeled.sort_by(|a, b| b.1.gamma.total_cmp(&a.1.gamma).then(a.0.cmp(&b.0)));
    for (v, c) in labeled {
        let candidates = next.nearest_k(&(transform * mesh.vertices[v]), TRANSFER_CANDIDATES);
        let slot = candidates
            .iter()
            .find(|(j, _)| out.get(*j).is_none())
            .unwrap_or(&candidates[0])
            .0;
        out.offer(slot, *c);
    }
    out
}

/// Carries `field` from the path source through every landmark to the
/// target by rigid ICP and nearest-vertex transfer.
pub fn map_contacts(
    field: &ContactnessField,
    path: &LandmarkPath,
    config: &IcpConfig,
) -> Result<MappedContacts> {
    let meshes = path.meshes();
    if field.vertex_count() != meshes[0].vertex_count() {
        return Err(Error::invalid(format!(
            "field covers {} vertices, source mesh has {}",
            field.vertex_count(),
            meshes[0].vertex_count()
        )));
    }
    let mut current = field.clone();
    let mut transforms = Vec::with_capacity(meshes.len() - 1);
    let mut rms = Vec::with_capacity(meshes.len() - 1);
    for pair in meshes.windows(2) {
        let (mesh, next) = (pair[0], pair[1]);
        let index = PointIndex::new(&next.vertices);
        let fit = icp(&mesh.vertices, &index, config);
        let limit = 10.0 * next.mean_edge_length();
        if !(fit.rms <= limit) {
            return Err(Error::IcpDiverged {
                rms: fit.rms,
                limit,
            });
        }
        current = transfer_step(&current, mesh, &index, &fit.transform);
        transforms.push(fit.transform);
        rms.push(fit.rms);
    }
    Ok(MappedContacts {
        field: current,
        transforms,
        rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, Vec3};
    use crate::sdf::{marching_cubes, mesh_to_sdf, sphere_grid};
    use crate::shape_path::{build_path, Shape, MAX_CELLS};
    use approx::assert_relative_eq;

    fn line_mesh(xs: &[f64]) -> TriMesh {
        // Contact derivation only reads vertices.
        TriMesh {
            vertices: xs.iter().map(|&x| Point::new(x, 0.0, 0.0)).collect(),
            faces: vec![],
            labels: None,
        }
    }

    #[test]
    fn far_hand_labels_nothing() {
        let m = icosphere(Point::origin(), 0.05, 2);
        let f = derive_contact(&[Point::new(1.0, 0.0, 0.0)], &[1], &m, &ContactConfig::default());
        assert_eq!(f.labeled_count(), 0);
    }

    #[test]
    fn touching_anchor_gets_full_contactness() {
        let m = line_mesh(&[0.0, 0.025]);
        let f = derive_contact(&[Point::origin()], &[3], &m, &ContactConfig::default());
        assert_eq!(f.get(0).unwrap().gamma, 1.0);
        assert_eq!(f.get(0).unwrap().part, 3);
        assert!(f.get(1).is_none());
    }

    #[test]
    fn linear_decay_between_min_and_threshold() {
        let m = line_mesh(&[0.005, 0.015, 0.02]);
        let f = derive_contact(&[Point::origin()], &[1], &m, &ContactConfig::default());
        // Brute-force scan for the anchor's minimum distance.
        let d_min = m.vertices.iter().map(|v| v.coords.norm()).fold(f64::INFINITY, f64::min);
        let expected = 1.0 - (0.015 - d_min) / (0.025 - d_min);
        assert_relative_eq!(f.get(1).unwrap().gamma, expected, epsilon = 1e-12);
        assert_relative_eq!(f.get(1).unwrap().gamma, 0.5, epsilon = 1e-12);
        assert_eq!(f.get(0).unwrap().gamma, 1.0);
    }

    #[test]
    fn cosine_decay_keeps_boundary_values() {
        assert_eq!(Decay::Cosine.eval(0.0), 1.0);
        assert!(Decay::Cosine.eval(1.0).abs() < 1e-15);
        assert_relative_eq!(Decay::Cosine.eval(0.5), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn strongest_anchor_wins() {
        let m = line_mesh(&[0.0, 0.01]);
        let anchors = [Point::new(-0.001, 0.0, 0.0), Point::new(0.011, 0.0, 0.0)];
        let f = derive_contact(&anchors, &[1, 2], &m, &ContactConfig::default());
        assert_eq!(f.get(0).unwrap().part, 1);
        assert_eq!(f.get(1).unwrap().part, 2);
    }

    #[test]
    fn gamma_is_monotone_in_distance() {
        let xs: Vec<f64> = (0..30).map(|i| 0.001 * i as f64).collect();
        let m = line_mesh(&xs);
        let f = derive_contact(&[Point::new(-0.002, 0.0, 0.0)], &[1], &m, &ContactConfig::default());
        let g: Vec<f64> = (0..xs.len()).map(|v| f.get(v).map_or(0.0, |c| c.gamma)).collect();
        assert!(g.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn json_round_trip() {
        let m = icosphere(Point::origin(), 0.05, 2);
        let f = derive_contact(&[Point::new(0.06, 0.0, 0.0)], &[5], &m, &ContactConfig::default());
        assert!(f.labeled_count() > 0);
        assert_eq!(ContactnessField::from_json(&f.to_json()).unwrap(), f);
    }

    fn shape(mesh: TriMesh) -> Shape {
        let sdf = mesh_to_sdf(&mesh, 0.02, 40).unwrap();
        Shape { mesh, sdf }
    }

    #[test]
    fn identical_path_is_label_exact() {
        let m = icosphere(Point::origin(), 0.05, 3);
        let f = derive_contact(&[Point::new(0.055, 0.01, 0.0)], &[7], &m, &ContactConfig::default());
        let s = shape(m);
        let mut path = build_path(s.clone(), s.clone(), 2, MAX_CELLS).unwrap();
        // Landmarks identical to the source as well.
        for l in &mut path.landmarks {
            l.mesh = s.mesh.clone();
        }
        let out = map_contacts(&f, &path, &IcpConfig::default()).unwrap();
        assert_eq!(out.field, f);
    }

    #[test]
    fn concentric_growth_keeps_patch_direction() {
        let spacing = 0.003;
        let small = sphere_grid(Point::origin(), 0.05, spacing, 0.01);
        let big = sphere_grid(Point::origin(), 0.075, spacing, 0.01);
        let src = Shape {
            mesh: marching_cubes(&small, 0.0).unwrap(),
            sdf: small,
        };
        let dst = Shape {
            mesh: marching_cubes(&big, 0.0).unwrap(),
            sdf: big,
        };
        // Contiguous patch: the 50 vertices closest to a direction.
        let dir = Vec3::new(1.0, 0.5, 0.2).normalize();
        let mut order: Vec<usize> = (0..src.mesh.vertex_count()).collect();
        order.sort_by(|&a, &b| {
            let da = (src.mesh.vertices[a].coords.normalize() - dir).norm();
            let db = (src.mesh.vertices[b].coords.normalize() - dir).norm();
            da.total_cmp(&db)
        });
        let mut field = ContactnessField::empty(src.mesh.vertex_count());
        for &v in &order[..50] {
            field.offer(v, Contact { part: 2, gamma: 1.0, anchor: 1 });
        }
        let path = build_path(src.clone(), dst.clone(), 10, MAX_CELLS).unwrap();
        let out = map_contacts(&field, &path, &IcpConfig::default()).unwrap();

        let centroid = |m: &TriMesh, f: &ContactnessField| {
            f.labeled().map(|(v, _)| m.vertices[v].coords).sum::<Vec3>().normalize()
        };
        let source_dir = centroid(&src.mesh, &field);
        let angle = centroid(&dst.mesh, &out.field).angle(&source_dir);
        assert!(angle.to_degrees() < 5.0, "drift {}", angle.to_degrees());
        let n = out.field.labeled_count() as f64;
        assert!((n - 50.0).abs() <= 0.3 * 50.0, "count {n}");
        // Direct source-to-target transfer as the drift reference.
        let index = PointIndex::new(&dst.mesh.vertices);
        let direct = transfer_step(&field, &src.mesh, &index, &Isometry3::identity());
        let direct_angle = centroid(&dst.mesh, &direct).angle(&source_dir);
        assert!((angle - direct_angle).abs().to_degrees() < 5.0);
    }
}
