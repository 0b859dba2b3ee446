//! Synthetic objects, hand poses and camera rigs for tests, examples and
//! the batch fixtures.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{is_mcp, HandParams, HandRig, OutputGrad, JOINTS, SHAPE_DIMS};
use crate::mesh::{Aabb, Point, Vec3};
use crate::mokap::CameraView;
use crate::optim::{minimize, AdamConfig};
use crate::refine::{energy_anat_with_grad, energy_intp_with_grad};
use crate::sdf::{marching_cubes, mesh_to_sdf_on, SdfGrid};
use crate::shape_path::Shape;
use crate::so3;

/// Rotation axis that curls joint `j` towards the palm.
pub fn flex_axis(rig: &HandRig, j: usize) -> Vec3 {
    let a = &rig.axes[j];
    a.twist.cross(&a.splay).normalize()
}

/// Anatomically plausible random pose: pure flexion on every finger joint,
/// small MCP splay, a moderate global rotation and a random shape.
pub fn random_pose(rig: &HandRig, rng: &mut impl Rng) -> HandParams {
    let mut p = HandParams::default();
    let root = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    p.theta[0] = root.normalize() * rng.gen_range(0.0..0.4);
    for j in 1..JOINTS {
        let mut w = flex_axis(rig, j) * rng.gen_range(0.05..0.8);
        if is_mcp(j) {
            w += rig.axes[j].splay * rng.gen_range(-0.12..0.12);
        }
        p.theta[j] = w;
    }
    p.beta = (0..SHAPE_DIMS).map(|_| rng.gen_range(-1.0..1.0)).collect();
    p.canonicalized()
}

/// Perturbs `p` by a wrist offset of length `wrist` in a random direction
/// and rotation noise of angle `joint` about a random axis on every joint.
pub fn perturb(p: &HandParams, wrist: f64, joint: f64, rng: &mut impl Rng) -> HandParams {
    let mut q = p.clone();
    q.wrist += random_unit(rng) * wrist;
    for t in &mut q.theta {
        let r = so3::exp(t) * so3::exp(&(random_unit(rng) * joint));
        *t = so3::log(&r);
    }
    q.canonicalized()
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Four cameras in general position about `target`, 1000 px focal length.
pub fn four_cameras(target: Point, distance: f64) -> Vec<CameraView> {
    [
        Vec3::new(1.0, 0.2, -0.3),
        Vec3::new(-0.8, 0.4, -0.6),
        Vec3::new(0.1, -0.2, -1.0),
        Vec3::new(0.3, 1.0, -0.4),
    ]
    .into_iter()
    .map(|d| {
        let eye = target + d.normalize() * distance;
        let up = if d.y.abs() > 0.9 { Vec3::z() } else { Vec3::y() };
        CameraView::look_at(eye, target, up, 1000.0, 1280, 960)
    })
    .collect()
}

/// Analytic object families used by the transfer fixtures. Lengths in
/// metres; every object is centered at the origin with its long axis on z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectSpec {
    Sphere { radius: f64 },
    /// Superellipsoid with circular cross-section.
    Mug { radius: f64, half_height: f64, exponent: f64 },
    /// Capsule along z.
    Bottle { radius: f64, half_length: f64 },
}

impl ObjectSpec {
    pub fn category(&self) -> &'static str {
        match self {
            ObjectSpec::Sphere { .. } => "sphere",
            ObjectSpec::Mug { .. } => "mug",
            ObjectSpec::Bottle { .. } => "bottle",
        }
    }

    pub fn half_extents(&self) -> Vec3 {
        match *self {
            ObjectSpec::Sphere { radius } => Vec3::repeat(radius),
            ObjectSpec::Mug {
                radius, half_height, ..
            } => Vec3::new(radius, radius, half_height),
            ObjectSpec::Bottle {
                radius,
                half_length,
            } => Vec3::new(radius, radius, half_length + radius),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ObjectSpec::Sphere { radius } => radius > 0.0,
            ObjectSpec::Mug {
                radius,
                half_height,
                exponent,
            } => radius > 0.0 && half_height > 0.0 && exponent >= 2.0,
            ObjectSpec::Bottle {
                radius,
                half_length,
            } => radius > 0.0 && half_length >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("object fixture {self:?} has invalid dimensions")))
        }
    }

    /// Implicit function, negative inside, close to a distance near the
    /// surface.
    fn implicit(&self, p: &Point) -> f64 {
        match *self {
            ObjectSpec::Sphere { radius } => p.coords.norm() - radius,
            ObjectSpec::Mug {
                radius,
                half_height,
                exponent,
            } => {
                let r = (p.x * p.x + p.y * p.y).sqrt() / radius;
                let z = p.z.abs() / half_height;
                let s = (r.powf(exponent) + z.powf(exponent)).powf(1.0 / exponent);
                (s - 1.0) * radius.min(half_height)
            }
            ObjectSpec::Bottle {
                radius,
                half_length,
            } => {
                let z = p.z.clamp(-half_length, half_length);
                (p - Point::new(0.0, 0.0, z)).norm() - radius
            }
        }
    }

    /// Surface mesh and its signed distance grid, `resolution` cells along
    /// the longest side of the grid.
    pub fn build(&self, resolution: usize) -> Result<Shape> {
        self.validate()?;
        let half = self.half_extents() + Vec3::repeat(OBJECT_MARGIN);
        let bounds = Aabb {
            min: Point::from(-half),
            max: Point::from(half),
        };
        let spacing = 2.0 * half.max() / resolution.max(2) as f64;
        let implicit = SdfGrid::covering(&bounds, spacing, |p| self.implicit(p))?;
        let mesh = marching_cubes(&implicit, 0.0)?;
        let sdf = mesh_to_sdf_on(&mesh, implicit.origin(), spacing, implicit.dims())?;
        Ok(Shape { mesh, sdf })
    }
}

/// Grid margin around fixture objects, wide enough for the contact range.
pub const OBJECT_MARGIN: f64 = 0.03;

/// Source and target objects of `count` transfer pairs cycling through
/// spheres, mugs and bottles.
pub fn fixture_pairs(count: usize, seed: u64) -> Vec<(ObjectSpec, ObjectSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut draw = |family: usize| match family {
                0 => ObjectSpec::Sphere {
                    radius: rng.gen_range(0.04..0.10),
                },
                1 => ObjectSpec::Mug {
                    radius: rng.gen_range(0.035..0.05),
                    half_height: rng.gen_range(0.045..0.065),
                    exponent: rng.gen_range(3.0..6.0),
                },
                _ => ObjectSpec::Bottle {
                    radius: rng.gen_range(0.03..0.045),
                    half_length: rng.gen_range(0.03..0.07),
                },
            };
            (draw(i % 3), draw(i % 3))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Weight of the squared surface distance of the grasping anchors.
    pub attract: f64,
    pub anat: f64,
    pub intp: f64,
    /// Initial flexion of every finger joint, rad.
    pub curl: f64,
    /// Initial gap between palm and object, m.
    pub standoff: f64,
    pub adam: AdamConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            attract: 1.0,
            anat: 0.1,
            intp: 0.1,
            curl: 0.2,
            standoff: 0.02,
            adam: AdamConfig {
                window: 0,
                ..AdamConfig::default()
            },
        }
    }
}

/// Parts pulled onto the surface by grasp synthesis: every finger segment
/// and the distal palm.
pub fn grasping_parts() -> Vec<u8> {
    (1..=16).collect()
}

/// Hand on the +x side of the object, palm facing it, fingers curling
/// around the z axis.
pub fn approach_pose(rig: &HandRig, object_half_x: f64, cfg: &SynthesisConfig) -> HandParams {
    let r = Matrix3::from_columns(&[Vec3::z(), -Vec3::y(), Vec3::x()]);
    let mut p = HandParams::default();
    p.theta[0] = so3::log(&r);
    for j in 1..JOINTS {
        p.theta[j] = flex_axis(rig, j) * cfg.curl;
    }
    let palm = Vec3::new(0.0025, 0.05, -0.0135);
    p.wrist = Vec3::new(object_half_x + cfg.standoff, 0.0, 0.0) - r * palm;
    p
}

/// Optimizes a hand pose that holds `shape`: grasping anchors are pulled
/// onto the surface without penetration.
pub fn synthesize_grasp(rig: &HandRig, shape: &Shape, cfg: &SynthesisConfig) -> Result<HandParams> {
    let init = approach_pose(rig, shape.mesh.aabb().max.x, cfg);
    let parts = grasping_parts();
    let chosen: Vec<usize> = (0..rig.anchors.len())
        .filter(|&i| parts.contains(&rig.anchors[i].part))
        .collect();
    let n = chosen.len() as f64;
    let result = minimize(&init, &cfg.adam, |p| {
        let state = rig.forward(p);
        let mut anchors = Vec::with_capacity(chosen.len());
        let mut attract = 0.0;
        for &i in &chosen {
            let (d, g) = shape.sdf.sample_with_gradient(&state.anchors[i]);
            attract += d * d / n;
            anchors.push((i, g * (2.0 * d / n * cfg.attract)));
        }
        let (intp, vertex_grads) = energy_intp_with_grad(&state, &shape.sdf);
        let (anat, anat_grad) = energy_anat_with_grad(p, rig);
        let out = OutputGrad {
            joints: Vec::new(),
            vertices: vertex_grads.into_iter().map(|(v, g)| (v, g * cfg.intp)).collect(),
            anchors,
        };
        let mut grad = rig.pullback(&state, &out);
        for (j, g) in anat_grad.iter().enumerate() {
            for c in 0..3 {
                grad[3 * j + c] += cfg.anat * g[c];
            }
        }
        let total = cfg.attract * attract + cfg.intp * intp + cfg.anat * anat;
        Ok((total, grad, ()))
    })?;
    Ok(result.params)
}
