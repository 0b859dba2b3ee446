//! Procedural right-hand template: a superelliptic palm slab and five
//! tapered finger tubes, each a closed surface.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::mesh::{closest_point_on_triangle, Point, TriMesh, Vec3};

use super::{
    Anchor, Bone, HandRig, JointAxes, ShapeBinding, Tip, FINGERS, JOINTS, PARTS,
};

/// Rest-pose y above which palm vertices belong to the distal palm part.
const PALM_SPLIT_Y: f64 = 0.05;
const PALM_DISTAL: u8 = 16;
const PALM_PROXIMAL: u8 = 17;

const PALM_Y: (f64, f64) = (-0.006, 0.100);
const PALM_CENTER_X: f64 = 0.0025;
const PALM_HALF_WIDTH: (f64, f64) = (0.034, 0.043);
const PALM_HALF_THICKNESS: f64 = 0.0135;
const PALM_RINGS: usize = 22;
const PALM_SEGMENTS: usize = 28;

const FINGER_SEGMENTS: usize = 10;
const FINGER_RING_STEP: f64 = 0.0055;
const FINGER_ROOT_DEPTH: f64 = 0.010;
const TIP_RINGS: usize = 3;
const BLEND_RADII: f64 = 0.8;

struct FingerSpec {
    base: [f64; 3],
    dir: [f64; 3],
    palmar: [f64; 3],
    lengths: [f64; 3],
    radii: (f64, f64),
}

const FINGER_SPECS: [FingerSpec; FINGERS] = [
    FingerSpec {
        base: [-0.020, 0.022, -0.006],
        dir: [-0.55, 0.78, -0.30],
        palmar: [0.55, 0.25, -0.8],
        lengths: [0.046, 0.032, 0.027],
        radii: (0.0105, 0.0085),
    },
    FingerSpec {
        base: [-0.027, 0.093, 0.0],
        dir: [-0.07, 1.0, 0.0],
        palmar: [0.0, 0.0, -1.0],
        lengths: [0.040, 0.024, 0.021],
        radii: (0.0085, 0.0070),
    },
    FingerSpec {
        base: [-0.0065, 0.096, 0.0],
        dir: [0.0, 1.0, 0.0],
        palmar: [0.0, 0.0, -1.0],
        lengths: [0.045, 0.028, 0.022],
        radii: (0.0088, 0.0072),
    },
    FingerSpec {
        base: [0.0135, 0.092, 0.0],
        dir: [0.07, 1.0, 0.0],
        palmar: [0.0, 0.0, -1.0],
        lengths: [0.042, 0.027, 0.021],
        radii: (0.0082, 0.0068),
    },
    FingerSpec {
        base: [0.032, 0.083, 0.0],
        dir: [0.16, 1.0, 0.0],
        palmar: [0.0, 0.0, -1.0],
        lengths: [0.033, 0.020, 0.019],
        radii: (0.0072, 0.0060),
    },
];

struct Finger {
    base: Point,
    dir: Vec3,
    palmar: Vec3,
    lateral: Vec3,
    /// Arc length of each joint along the finger, then the tip.
    stations: [f64; 4],
    radii: (f64, f64),
}

impl Finger {
    fn new(spec: &FingerSpec) -> Self {
        let dir = Vec3::from(spec.dir).normalize();
        let p = Vec3::from(spec.palmar);
        let palmar = (p - dir * dir.dot(&p)).normalize();
        let lateral = dir.cross(&palmar);
        let [a, b, c] = spec.lengths;
        Finger {
            base: Point::from(spec.base),
            dir,
            palmar,
            lateral,
            stations: [0.0, a, a + b, a + b + c],
            radii: spec.radii,
        }
    }

    fn length(&self) -> f64 {
        self.stations[3]
    }

    fn radius(&self, s: f64) -> f64 {
        let t = (s / self.length()).clamp(0.0, 1.0);
        self.radii.0 + (self.radii.1 - self.radii.0) * t
    }

    fn at(&self, s: f64) -> Point {
        self.base + self.dir * s
    }

    /// Skinning weights at arc length `s`, blended smoothly across each joint.
    fn skin(&self, finger: usize, s: f64) -> Vec<(u16, f64)> {
        let bone = |k: usize| (3 * finger + 1 + k) as u16;
        for k in 0..3 {
            let h = BLEND_RADII * self.radius(self.stations[k]);
            let lo = self.stations[k] - h;
            let hi = self.stations[k] + h;
            if s < lo {
                return vec![(if k == 0 { 0 } else { bone(k - 1) }, 1.0)];
            }
            if s <= hi {
                let t = smoothstep((s - lo) / (hi - lo));
                let parent = if k == 0 { 0 } else { bone(k - 1) };
                let mut w = vec![(parent, 1.0 - t), (bone(k), t)];
                w.retain(|&(_, x)| x > 0.0);
                return w;
            }
        }
        vec![(bone(2), 1.0)]
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[derive(Default)]
struct Builder {
    vertices: Vec<Point>,
    faces: Vec<[u32; 3]>,
    skin: Vec<Vec<(u16, f64)>>,
    shape: Vec<Option<ShapeBinding>>,
    labels: Vec<Option<u8>>,
    components: Vec<std::ops::Range<usize>>,
}

impl Builder {
    fn push(&mut self, p: Point, skin: Vec<(u16, f64)>, shape: Option<ShapeBinding>, label: u8) -> u32 {
        self.vertices.push(p);
        self.skin.push(skin);
        self.shape.push(shape);
        self.labels.push(Some(label));
        (self.vertices.len() - 1) as u32
    }

    /// Stitches consecutive rings of equal size and closes both ends with
    /// fans around `start` and `end`.
    fn tube(&mut self, rings: &[Vec<u32>], start: u32, end: u32) {
        let first_face = self.faces.len();
        let n = rings[0].len();
        for i in 0..n {
            let j = (i + 1) % n;
            self.faces.push([start, rings[0][j], rings[0][i]]);
        }
        for w in rings.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            for i in 0..n {
                let j = (i + 1) % n;
                self.faces.push([a[i], a[j], b[j]]);
                self.faces.push([a[i], b[j], b[i]]);
            }
        }
        let last = rings.last().expect("at least one ring");
        for i in 0..n {
            let j = (i + 1) % n;
            self.faces.push([end, last[i], last[j]]);
        }
        self.components.push(first_face..self.faces.len());
    }

    fn orient_components(&mut self) {
        for range in self.components.clone() {
            let volume: f64 = self.faces[range.clone()]
                .iter()
                .map(|f| {
                    let [a, b, c] = f.map(|i| self.vertices[i as usize].coords);
                    a.dot(&b.cross(&c)) / 6.0
                })
                .sum();
            if volume < 0.0 {
                for f in &mut self.faces[range] {
                    f.swap(1, 2);
                }
            }
        }
    }
}

fn palm_label(p: &Point) -> u8 {
    if p.y >= PALM_SPLIT_Y {
        PALM_DISTAL
    } else {
        PALM_PROXIMAL
    }
}

fn build_palm(b: &mut Builder) {
    let exponent = 2.0 / 3.0;
    let mut rings = Vec::with_capacity(PALM_RINGS);
    for r in 0..PALM_RINGS {
        let t = r as f64 / (PALM_RINGS - 1) as f64;
        let y = PALM_Y.0 + (PALM_Y.1 - PALM_Y.0) * t;
        let hw = PALM_HALF_WIDTH.0 + (PALM_HALF_WIDTH.1 - PALM_HALF_WIDTH.0) * t;
        let ring = (0..PALM_SEGMENTS)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / PALM_SEGMENTS as f64;
                let (s, c) = a.sin_cos();
                let x = PALM_CENTER_X + hw * c.signum() * c.abs().powf(exponent);
                let z = PALM_HALF_THICKNESS * s.signum() * s.abs().powf(exponent);
                let p = Point::new(x, y, z);
                b.push(p, vec![(0, 1.0)], None, palm_label(&p))
            })
            .collect::<Vec<_>>();
        rings.push(ring);
    }
    let start = Point::new(PALM_CENTER_X, PALM_Y.0, 0.0);
    let end = Point::new(PALM_CENTER_X, PALM_Y.1, 0.0);
    let s = b.push(start, vec![(0, 1.0)], None, palm_label(&start));
    let e = b.push(end, vec![(0, 1.0)], None, palm_label(&end));
    b.tube(&rings, s, e);
}

fn build_finger(b: &mut Builder, finger: usize, f: &Finger) {
    let tip_radius = f.radius(f.length());
    let body_end = f.length() - tip_radius;
    let body_start = -FINGER_ROOT_DEPTH;
    let body_rings = ((body_end - body_start) / FINGER_RING_STEP).ceil() as usize + 1;

    let mut stations: Vec<(f64, f64)> = (0..body_rings)
        .map(|i| {
            let s = body_start + (body_end - body_start) * i as f64 / (body_rings - 1) as f64;
            (s, f.radius(s))
        })
        .collect();
    for i in 1..TIP_RINGS + 1 {
        let phi = FRAC_PI_2 * i as f64 / (TIP_RINGS + 1) as f64;
        stations.push((body_end + tip_radius * phi.sin(), tip_radius * phi.cos()));
    }

    let label_for = |skin: &[(u16, f64)], p: &Point| -> u8 {
        let (bone, _) = skin
            .iter()
            .copied()
            .fold((0u16, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if bone == 0 {
            palm_label(p)
        } else {
            bone as u8
        }
    };
    let binding = |s: f64, radial: Vec3| ShapeBinding {
        finger: finger as u8,
        length_dir: f.dir * s.max(0.0),
        width_dir: radial,
    };

    let mut rings = Vec::with_capacity(stations.len());
    for &(s, r) in &stations {
        let skin = f.skin(finger, s);
        let ring = (0..FINGER_SEGMENTS)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / FINGER_SEGMENTS as f64;
                let radial = r * (a.cos() * f.lateral + a.sin() * f.palmar);
                let p = f.at(s) + radial;
                let label = label_for(&skin, &p);
                b.push(p, skin.clone(), Some(binding(s, radial)), label)
            })
            .collect::<Vec<_>>();
        rings.push(ring);
    }
    let root = f.at(body_start);
    let root_skin = f.skin(finger, body_start);
    let root_label = label_for(&root_skin, &root);
    let start = b.push(root, root_skin, Some(binding(body_start, Vec3::zeros())), root_label);
    let apex_s = f.length();
    let apex_skin = f.skin(finger, apex_s);
    let apex = f.at(apex_s);
    let apex_label = label_for(&apex_skin, &apex);
    let end = b.push(apex, apex_skin, Some(binding(apex_s, Vec3::zeros())), apex_label);
    b.tube(&rings, start, end);
}

fn barycentric(p: &Point, a: &Point, b: &Point, c: &Point) -> [f64; 3] {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let den = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    [1.0 - v - w, v, w]
}

/// Closest point to `target` on faces of one component whose vertices all
/// carry `part`.
fn anchor_near(b: &Builder, component: usize, part: u8, target: &Point) -> Anchor {
    let mut best = (f64::INFINITY, 0u32, [1.0, 0.0, 0.0]);
    for fi in b.components[component].clone() {
        let f = b.faces[fi];
        if f.iter().any(|&v| b.labels[v as usize] != Some(part)) {
            continue;
        }
        let [p0, p1, p2] = f.map(|v| b.vertices[v as usize]);
        let q = closest_point_on_triangle(target, &p0, &p1, &p2);
        let d = (q - target).norm();
        if d < best.0 {
            best = (d, fi as u32, barycentric(&q, &p0, &p1, &p2));
        }
    }
    assert!(best.0.is_finite(), "part {part} has no faces in component {component}");
    Anchor {
        part,
        face: best.1,
        bary: best.2,
    }
}

/// Generates the default rig from the built-in proportions.
pub fn build_default_rig() -> HandRig {
    let fingers: Vec<Finger> = FINGER_SPECS.iter().map(Finger::new).collect();

    let mut bones = vec![Bone {
        parent: None,
        rest: Point::origin(),
        length_dir: Vec3::zeros(),
    }];
    let mut axes = vec![JointAxes {
        twist: Vec3::y(),
        splay: -Vec3::z(),
    }];
    let mut tips = Vec::with_capacity(FINGERS);
    for f in &fingers {
        for k in 0..3 {
            bones.push(Bone {
                parent: Some(if k == 0 { 0 } else { bones.len() - 1 }),
                rest: f.at(f.stations[k]),
                length_dir: f.dir * f.stations[k],
            });
            axes.push(JointAxes {
                twist: f.dir,
                splay: f.palmar,
            });
        }
        tips.push(Tip {
            rest: f.at(f.length()),
            length_dir: f.dir * f.length(),
        });
    }
    debug_assert_eq!(bones.len(), JOINTS);

    let mut b = Builder::default();
    build_palm(&mut b);
    for (i, f) in fingers.iter().enumerate() {
        build_finger(&mut b, i, f);
    }
    b.orient_components();

    let mut anchors = Vec::with_capacity(PARTS);
    for (i, f) in fingers.iter().enumerate() {
        for k in 0..3 {
            let len = f.stations[k + 1] - f.stations[k];
            let s = f.stations[k] + if k == 2 { 0.55 } else { 0.5 } * len;
            let target = f.at(s) + f.palmar * (3.0 * f.radius(s));
            anchors.push(anchor_near(&b, i + 1, (3 * i + 1 + k) as u8, &target));
        }
    }
    let below = -3.0 * PALM_HALF_THICKNESS;
    anchors.push(anchor_near(&b, 0, PALM_DISTAL, &Point::new(0.0, 0.072, below)));
    anchors.push(anchor_near(&b, 0, PALM_PROXIMAL, &Point::new(0.005, 0.03, below)));

    let template = TriMesh::new(b.vertices, b.faces)
        .and_then(|m| m.with_labels(b.labels))
        .expect("template mesh is well formed");
    HandRig {
        bones,
        tips,
        template,
        skin: b.skin,
        shape: b.shape,
        anchors,
        axes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::DEFAULT_RIG_JSON;
    use sha2::{Digest, Sha256};

    const ASSET_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/default_rig.json");
    const ASSET_SHA256: &str = "bf4c5bfc095d441b5c4619f1f21f7adfff68b76af302c2e4dbd2f50e7a3b153e";

    #[test]
    #[ignore = "rewrites the bundled rig asset"]
    fn regenerate_asset() {
        std::fs::write(ASSET_PATH, build_default_rig().to_json()).unwrap();
    }

    #[test]
    fn asset_matches_generator() {
        let generated = build_default_rig();
        generated.validate().unwrap();
        assert_eq!(&generated, HandRig::default_rig());
        let digest = Sha256::digest(DEFAULT_RIG_JSON.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, ASSET_SHA256);
    }

    #[test]
    fn components_are_closed_and_outward() {
        let rig = build_default_rig();
        let m = &rig.template;
        assert!(m.is_watertight());
        // Six genus-zero components.
        assert_eq!(m.euler_characteristic(), 12);
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn anchors_lie_on_their_parts() {
        let rig = build_default_rig();
        let labels = rig.template.labels.as_ref().unwrap();
        for (i, a) in rig.anchors.iter().enumerate() {
            assert_eq!(a.part as usize, i + 1);
            assert!(a.bary.iter().all(|&w| w >= -1e-9));
            for v in rig.template.faces[a.face as usize] {
                assert_eq!(labels[v as usize], Some(a.part));
            }
        }
    }

    #[test]
    fn palmar_anchors_face_the_palm_side() {
        let rig = build_default_rig();
        let state = rig.forward(&Default::default());
        for j in 1..JOINTS {
            let a = state.anchors[j - 1];
            let off = a - rig.bones[j].rest;
            assert!(off.dot(&rig.axes[j].splay) > 0.0, "anchor of part {j}");
        }
        assert!(state.anchors[15].z < 0.0 && state.anchors[16].z < 0.0);
    }
}
