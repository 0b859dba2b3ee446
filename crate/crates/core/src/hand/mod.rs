//! Parametric articulated hand: forward kinematics, linear-blend skinning,
//! surface anchors and analytic derivatives.
//!
//! The skeleton has 16 posed joints (wrist plus three per finger, ordered
//! thumb, index, middle, ring, pinky). Reported keypoints follow the usual
//! 21-point layout: wrist, then four points per finger ending at the tip.

mod template;

use std::sync::OnceLock;

use nalgebra::{Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh, Vec3};
use crate::so3;

pub use template::build_default_rig;

pub const JOINTS: usize = 16;
pub const KEYPOINTS: usize = 21;
pub const PARTS: usize = 17;
pub const FINGERS: usize = 5;
pub const SHAPE_DIMS: usize = 10;
pub const PARAMS: usize = JOINTS * 3 + SHAPE_DIMS + 3;
pub const BETA_OFFSET: usize = JOINTS * 3;
pub const WRIST_OFFSET: usize = BETA_OFFSET + SHAPE_DIMS;

/// Relative length or width change per unit of a shape component.
pub const SHAPE_STEP: f64 = 0.05;
pub const BETA_LIMIT: f64 = 3.0;

/// First joint of each finger chain; exempt from the splay penalty.
pub const MCP_JOINTS: [usize; FINGERS] = [1, 4, 7, 10, 13];

pub type ParamVec = SVector<f64, PARAMS>;
pub type ShapeJacobian = SMatrix<f64, 3, SHAPE_DIMS>;

pub fn is_mcp(joint: usize) -> bool {
    MCP_JOINTS.contains(&joint)
}

/// Finger index (0 = thumb) of a non-root joint.
pub fn finger_of(joint: usize) -> Option<usize> {
    (joint > 0).then(|| (joint - 1) / 3)
}

/// Keypoint slot of posed joint `joint`.
pub fn keypoint_of_joint(joint: usize) -> usize {
    if joint == 0 {
        0
    } else {
        joint + (joint - 1) / 3
    }
}

/// Keypoint slot of the tip of finger `finger`.
pub fn tip_keypoint(finger: usize) -> usize {
    4 * finger + 4
}

/// Pose, shape and wrist translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    pub theta: Vec<Vec3>,
    pub beta: Vec<f64>,
    pub wrist: Vec3,
}

impl Default for HandParams {
    fn default() -> Self {
        HandParams {
            theta: vec![Vec3::zeros(); JOINTS],
            beta: vec![0.0; SHAPE_DIMS],
            wrist: Vec3::zeros(),
        }
    }
}

impl HandParams {
    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != JOINTS || self.beta.len() != SHAPE_DIMS {
            return Err(Error::invalid(format!(
                "expected {JOINTS} joint rotations and {SHAPE_DIMS} shape values, got {} and {}",
                self.theta.len(),
                self.beta.len()
            )));
        }
        let finite = self.theta.iter().all(|t| t.iter().all(|c| c.is_finite()))
            && self.beta.iter().all(|b| b.is_finite())
            && self.wrist.iter().all(|c| c.is_finite());
        if !finite {
            return Err(Error::invalid("hand parameters must be finite"));
        }
        Ok(())
    }

    /// Wraps rotations to angles in `[0, π]` and clamps shape values.
    pub fn canonicalize(&mut self) {
        for t in &mut self.theta {
            *t = so3::canonical(t);
        }
        for b in &mut self.beta {
            *b = b.clamp(-BETA_LIMIT, BETA_LIMIT);
        }
    }

    pub fn canonicalized(mut self) -> Self {
        self.canonicalize();
        self
    }

    pub fn to_vector(&self) -> ParamVec {
        let mut v = ParamVec::zeros();
        for (j, t) in self.theta.iter().enumerate() {
            v.fixed_rows_mut::<3>(3 * j).copy_from(t);
        }
        for (i, b) in self.beta.iter().enumerate() {
            v[BETA_OFFSET + i] = *b;
        }
        v.fixed_rows_mut::<3>(WRIST_OFFSET).copy_from(&self.wrist);
        v
    }

    pub fn from_vector(v: &ParamVec) -> Self {
        HandParams {
            theta: (0..JOINTS)
                .map(|j| v.fixed_rows::<3>(3 * j).into_owned())
                .collect(),
            beta: (0..SHAPE_DIMS).map(|i| v[BETA_OFFSET + i]).collect(),
            wrist: v.fixed_rows::<3>(WRIST_OFFSET).into_owned(),
        }
    }

    /// Largest absolute difference in any component.
    pub fn max_abs_diff(&self, other: &HandParams) -> f64 {
        (self.to_vector() - other.to_vector()).amax()
    }
}

/// One node of the kinematic tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub parent: Option<usize>,
    /// Rest position of the joint pivot.
    pub rest: Point,
    /// Displacement of the pivot per unit of its finger's length component.
    #[serde(default)]
    pub length_dir: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tip {
    pub rest: Point,
    pub length_dir: Vec3,
}

/// Anatomical directions of a joint, in the rest frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAxes {
    pub twist: Vec3,
    pub splay: Vec3,
}

/// Surface point of a hand part, as a barycentric point on a template face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// Part id in `1..=17`.
    pub part: u8,
    pub face: u32,
    pub bary: [f64; 3],
}

/// How shape components displace one template vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeBinding {
    pub finger: u8,
    pub length_dir: Vec3,
    pub width_dir: Vec3,
}

/// Skeleton, skinned template surface, anchors and joint axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandRig {
    pub bones: Vec<Bone>,
    pub tips: Vec<Tip>,
    pub template: TriMesh,
    pub skin: Vec<Vec<(u16, f64)>>,
    pub shape: Vec<Option<ShapeBinding>>,
    pub anchors: Vec<Anchor>,
    pub axes: Vec<JointAxes>,
}

static DEFAULT_RIG: OnceLock<HandRig> = OnceLock::new();

/// Serialized default rig shipped with the crate.
pub const DEFAULT_RIG_JSON: &str = include_str!("../../assets/default_rig.json");

impl HandRig {
    /// The procedural right hand shipped as a generated asset.
    pub fn default_rig() -> &'static HandRig {
        DEFAULT_RIG.get_or_init(|| {
            let rig: HandRig =
                serde_json::from_str(DEFAULT_RIG_JSON).expect("bundled rig asset parses");
            rig.validate().expect("bundled rig asset is valid");
            rig
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rig: HandRig =
            serde_json::from_str(s).map_err(|e| Error::parse("<rig>", e))?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("rig serializes")
    }

    pub fn vertex_count(&self) -> usize {
        self.template.vertices.len()
    }

    pub fn part_of_vertex(&self, v: usize) -> Option<u8> {
        self.template.labels.as_ref().and_then(|l| l[v])
    }

    pub fn validate(&self) -> Result<()> {
        if self.bones.len() != JOINTS || self.tips.len() != FINGERS || self.axes.len() != JOINTS {
            return Err(Error::invalid("rig must have 16 bones, 5 tips and 16 axis pairs"));
        }
        if self.bones[0].parent.is_some() {
            return Err(Error::invalid("bone 0 must be the root"));
        }
        for (j, b) in self.bones.iter().enumerate().skip(1) {
            match b.parent {
                Some(p) if p < j => {}
                _ => return Err(Error::invalid(format!("bone {j} must have an earlier parent"))),
            }
        }
        self.template.validate()?;
        let n = self.template.vertices.len();
        if self.skin.len() != n || self.shape.len() != n {
            return Err(Error::invalid("skin and shape tables must cover every vertex"));
        }
        for (v, w) in self.skin.iter().enumerate() {
            let sum: f64 = w.iter().map(|&(_, x)| x).sum();
            if w.is_empty()
                || w.iter().any(|&(b, x)| x < 0.0 || b as usize >= JOINTS)
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(Error::invalid(format!("bad skinning weights at vertex {v}")));
            }
        }
        let labels = self
            .template
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("template must carry part labels"))?;
        for part in 1..=PARTS as u8 {
            if !labels.contains(&Some(part)) {
                return Err(Error::invalid(format!("part {part} has no vertices")));
            }
            if !self.anchors.iter().any(|a| a.part == part) {
                return Err(Error::invalid(format!("part {part} has no anchor")));
            }
        }
        for a in &self.anchors {
            if a.face as usize >= self.template.faces.len() {
                return Err(Error::invalid("anchor face out of range"));
            }
        }
        for (j, ax) in self.axes.iter().enumerate() {
            let ok = (ax.twist.norm() - 1.0).abs() < 1e-9
                && (ax.splay.norm() - 1.0).abs() < 1e-9
                && ax.twist.dot(&ax.splay).abs() < 1e-9;
            if !ok {
                return Err(Error::invalid(format!("joint {j} axes are not orthonormal")));
            }
        }
        Ok(())
    }

    fn shaped_rest(&self, beta: &[f64]) -> ([Point; JOINTS], [Point; FINGERS]) {
        let mut pivots = [Point::origin(); JOINTS];
        for (j, b) in self.bones.iter().enumerate() {
            pivots[j] = b.rest + self.joint_shape_jacobian(j) * beta_vec(beta);
        }
        let mut tips = [Point::origin(); FINGERS];
        for (f, t) in self.tips.iter().enumerate() {
            tips[f] = t.rest + SHAPE_STEP * beta[f] * t.length_dir;
        }
        (pivots, tips)
    }

    fn joint_shape_jacobian(&self, j: usize) -> ShapeJacobian {
        let mut m = ShapeJacobian::zeros();
        if let Some(f) = finger_of(j) {
            m.set_column(f, &(SHAPE_STEP * self.bones[j].length_dir));
        }
        m
    }

    fn tip_shape_jacobian(&self, f: usize) -> ShapeJacobian {
        let mut m = ShapeJacobian::zeros();
        m.set_column(f, &(SHAPE_STEP * self.tips[f].length_dir));
        m
    }

    fn vertex_shape_jacobian(&self, v: usize) -> ShapeJacobian {
        let mut m = ShapeJacobian::zeros();
        if let Some(s) = &self.shape[v] {
            let f = s.finger as usize;
            m.set_column(f, &(SHAPE_STEP * s.length_dir));
            m.set_column(FINGERS + f, &(SHAPE_STEP * s.width_dir));
        }
        m
    }

    /// Poses the hand. Shape values outside `[-3, 3]` are clamped.
    pub fn forward(&self, params: &HandParams) -> HandState {
        let beta: Vec<f64> = params
            .beta
            .iter()
            .map(|b| b.clamp(-BETA_LIMIT, BETA_LIMIT))
            .collect();
        let (shaped_pivots, shaped_tips) = self.shaped_rest(&beta);

        let mut rot = [Matrix3::identity(); JOINTS];
        let mut pivot = [Point::origin(); JOINTS];
        let mut omega = [[Vec3::zeros(); 3]; JOINTS];
        let mut dpivot = [ShapeJacobian::zeros(); JOINTS];
        for j in 0..JOINTS {
            let local = so3::exp(&params.theta[j]);
            let jl = so3::left_jacobian(&params.theta[j]);
            match self.bones[j].parent {
                None => {
                    rot[j] = local;
                    pivot[j] = shaped_pivots[j];
                    for c in 0..3 {
                        omega[j][c] = jl.column(c).into_owned();
                    }
                }
                Some(p) => {
                    rot[j] = rot[p] * local;
                    pivot[j] = pivot[p] + rot[p] * (shaped_pivots[j] - shaped_pivots[p]);
                    for c in 0..3 {
                        omega[j][c] = rot[p] * jl.column(c);
                    }
                    dpivot[j] = dpivot[p]
                        + rot[p] * (self.joint_shape_jacobian(j) - self.joint_shape_jacobian(p));
                }
            }
        }

        let bvec = beta_vec(&beta);
        let shaped_vertices: Vec<Point> = self
            .template
            .vertices
            .iter()
            .enumerate()
            .map(|(v, p)| match &self.shape[v] {
                Some(s) => {
                    let f = s.finger as usize;
                    p + SHAPE_STEP * (bvec[f] * s.length_dir + bvec[FINGERS + f] * s.width_dir)
                }
                None => *p,
            })
            .collect();

        let wrist = params.wrist;
        let vertices: Vec<Point> = shaped_vertices
            .iter()
            .zip(&self.skin)
            .map(|(vs, weights)| {
                let mut acc = Vec3::zeros();
                for &(j, w) in weights {
                    let j = j as usize;
                    acc += w * (rot[j] * (vs - shaped_pivots[j]) + pivot[j].coords);
                }
                Point::from(acc + wrist)
            })
            .collect();

        let mut joints = vec![Point::origin(); KEYPOINTS];
        for j in 0..JOINTS {
            joints[keypoint_of_joint(j)] = pivot[j] + wrist;
        }
        let mut dtip = [ShapeJacobian::zeros(); FINGERS];
        for f in 0..FINGERS {
            let last = 3 * f + 3;
            joints[tip_keypoint(f)] =
                pivot[last] + rot[last] * (shaped_tips[f] - shaped_pivots[last]) + wrist;
            dtip[f] = dpivot[last]
                + rot[last] * (self.tip_shape_jacobian(f) - self.joint_shape_jacobian(last));
        }

        let anchors = self
            .anchors
            .iter()
            .map(|a| {
                let f = self.template.faces[a.face as usize];
                Point::from(
                    (0..3)
                        .map(|k| a.bary[k] * vertices[f[k] as usize].coords)
                        .sum::<Vec3>(),
                )
            })
            .collect();

        HandState {
            joints,
            vertices,
            anchors,
            frames: Frames {
                rot,
                pivot,
                omega,
                dpivot,
                dtip,
                shaped_pivots,
                shaped_vertices,
            },
        }
    }

    /// Template surface posed by `params`, with part labels.
    pub fn posed_mesh(&self, params: &HandParams) -> TriMesh {
        let state = self.forward(params);
        TriMesh {
            vertices: state.vertices,
            faces: self.template.faces.clone(),
            labels: self.template.labels.clone(),
        }
    }

    /// Gradient with respect to all parameters of a scalar whose gradient
    /// with respect to the posed outputs is `grad`.
    pub fn pullback(&self, state: &HandState, grad: &OutputGrad) -> ParamVec {
        let fr = &state.frames;
        let mut out = ParamVec::zeros();
        let mut force = [Vec3::zeros(); JOINTS];
        let mut moment = [Vec3::zeros(); JOINTS];
        let mut vforce = [Vec3::zeros(); JOINTS];
        let mut vlocal = [Vec3::zeros(); JOINTS];
        let mut dbeta = SVector::<f64, SHAPE_DIMS>::zeros();
        let mut wrist = Vec3::zeros();

        let mut vertex_grads: Vec<(usize, Vec3)> = grad.vertices.clone();
        for &(a, g) in &grad.anchors {
            let anchor = &self.anchors[a];
            let f = self.template.faces[anchor.face as usize];
            for k in 0..3 {
                vertex_grads.push((f[k] as usize, anchor.bary[k] * g));
            }
        }

        for &(v, g) in &vertex_grads {
            wrist += g;
            let vs = fr.shaped_vertices[v];
            let mut local_sum = Vec3::zeros();
            for &(j, w) in &self.skin[v] {
                let j = j as usize;
                let x = fr.rot[j] * (vs - fr.shaped_pivots[j]) + fr.pivot[j].coords;
                let wg = w * g;
                force[j] += wg;
                moment[j] += x.cross(&wg);
                vforce[j] += wg;
                let local = fr.rot[j].transpose() * wg;
                vlocal[j] += local;
                local_sum += local;
            }
            if self.shape[v].is_some() {
                dbeta += self.vertex_shape_jacobian(v).transpose() * local_sum;
            }
        }

        for &(k, g) in &grad.joints {
            wrist += g;
            if let Some(f) = (0..FINGERS).find(|&f| tip_keypoint(f) == k) {
                let last = 3 * f + 3;
                let x = state.joints[k].coords - state.wrist();
                force[last] += g;
                moment[last] += x.cross(&g);
                dbeta += fr.dtip[f].transpose() * g;
            } else {
                let j = (0..JOINTS)
                    .find(|&j| keypoint_of_joint(j) == k)
                    .expect("keypoint index in range");
                if let Some(p) = self.bones[j].parent {
                    force[p] += g;
                    moment[p] += fr.pivot[j].coords.cross(&g);
                    dbeta += fr.dpivot[j].transpose() * g;
                }
            }
        }

        for j in 0..JOINTS {
            dbeta += fr.dpivot[j].transpose() * vforce[j]
                - self.joint_shape_jacobian(j).transpose() * vlocal[j];
        }

        // Subtree sums, children before parents.
        for j in (1..JOINTS).rev() {
            let p = self.bones[j].parent.expect("non-root bone has a parent");
            let (f, m) = (force[j], moment[j]);
            force[p] += f;
            moment[p] += m;
        }
        for k in 0..JOINTS {
            let torque = moment[k] - fr.pivot[k].coords.cross(&force[k]);
            for c in 0..3 {
                out[3 * k + c] = fr.omega[k][c].dot(&torque);
            }
        }
        for i in 0..SHAPE_DIMS {
            out[BETA_OFFSET + i] = dbeta[i];
        }
        out.fixed_rows_mut::<3>(WRIST_OFFSET).copy_from(&wrist);
        out
    }

    /// Jacobian (3 × PARAMS) of one output point.
    pub fn point_jacobian(&self, state: &HandState, point: OutputPoint) -> SMatrix<f64, 3, PARAMS> {
        let mut jac = SMatrix::<f64, 3, PARAMS>::zeros();
        for r in 0..3 {
            let mut e = Vec3::zeros();
            e[r] = 1.0;
            let mut g = OutputGrad::default();
            match point {
                OutputPoint::Joint(i) => g.joints.push((i, e)),
                OutputPoint::Vertex(i) => g.vertices.push((i, e)),
                OutputPoint::Anchor(i) => g.anchors.push((i, e)),
            }
            jac.set_row(r, &self.pullback(state, &g).transpose());
        }
        jac
    }
}

fn beta_vec(beta: &[f64]) -> SVector<f64, SHAPE_DIMS> {
    SVector::<f64, SHAPE_DIMS>::from_iterator(beta.iter().copied())
}

#[derive(Debug, Clone)]
struct Frames {
    rot: [Matrix3<f64>; JOINTS],
    /// Posed pivots without the wrist translation.
    pivot: [Point; JOINTS],
    omega: [[Vec3; 3]; JOINTS],
    dpivot: [ShapeJacobian; JOINTS],
    dtip: [ShapeJacobian; FINGERS],
    shaped_pivots: [Point; JOINTS],
    shaped_vertices: Vec<Point>,
}

/// Posed hand. Derivatives with respect to the parameters are available
/// through [`HandRig::pullback`] and [`HandRig::point_jacobian`].
#[derive(Debug, Clone)]
pub struct HandState {
    pub joints: Vec<Point>,
    pub vertices: Vec<Point>,
    pub anchors: Vec<Point>,
    frames: Frames,
}

impl HandState {
    fn wrist(&self) -> Vec3 {
        self.joints[0].coords
    }

    /// Global rotation of each posed joint.
    pub fn joint_rotations(&self) -> &[Matrix3<f64>; JOINTS] {
        &self.frames.rot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputPoint {
    Joint(usize),
    Vertex(usize),
    Anchor(usize),
}

/// Sparse gradient of a scalar with respect to posed output points.
#[derive(Debug, Clone, Default)]
pub struct OutputGrad {
    pub joints: Vec<(usize, Vec3)>,
    pub vertices: Vec<(usize, Vec3)>,
    pub anchors: Vec<(usize, Vec3)>,
}

/// Worst relative error of the analytic Jacobians of joints, vertices and
/// anchors against central finite differences with step `1e-6`.
///
/// Each parameter column is compared in the max norm and normalized by the
/// finite-difference column's max norm (floored at `1e-6`).
pub fn check_jacobians(rig: &HandRig, params: &HandParams) -> f64 {
    const STEP: f64 = 1e-6;
    const FLOOR: f64 = 1e-6;
    let state = rig.forward(params);
    let base = params.to_vector();

    let flatten = |s: &HandState| -> Vec<Vec<Point>> {
        vec![s.joints.clone(), s.vertices.clone(), s.anchors.clone()]
    };
    let mut plus = Vec::with_capacity(PARAMS);
    let mut minus = Vec::with_capacity(PARAMS);
    for i in 0..PARAMS {
        let mut hi = base;
        hi[i] += STEP;
        let mut lo = base;
        lo[i] -= STEP;
        plus.push(flatten(&rig.forward(&HandParams::from_vector(&hi))));
        minus.push(flatten(&rig.forward(&HandParams::from_vector(&lo))));
    }

    let groups: [(usize, fn(usize) -> OutputPoint); 3] = [
        (state.joints.len(), OutputPoint::Joint),
        (state.vertices.len(), OutputPoint::Vertex),
        (state.anchors.len(), OutputPoint::Anchor),
    ];
    let mut worst = 0.0f64;
    for (g, (count, make)) in groups.iter().enumerate() {
        let jacs: Vec<_> = (0..*count)
            .map(|i| rig.point_jacobian(&state, make(i)))
            .collect();
        for i in 0..PARAMS {
            let mut diff = 0.0f64;
            let mut scale = 0.0f64;
            for (pt, jac) in jacs.iter().enumerate() {
                let fd = (plus[i][g][pt] - minus[i][g][pt]) / (2.0 * STEP);
                for r in 0..3 {
                    diff = diff.max((jac[(r, i)] - fd[r]).abs());
                    scale = scale.max(fd[r].abs());
                }
            }
            worst = worst.max(diff / scale.max(FLOOR));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn rig() -> &'static HandRig {
        HandRig::default_rig()
    }

    pub(crate) fn random_params(rng: &mut impl Rng) -> HandParams {
        let mut p = HandParams::default();
        for t in &mut p.theta {
            *t = Vec3::new(
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            );
        }
        for b in &mut p.beta {
            *b = rng.gen_range(-2.0..2.0);
        }
        p.wrist = Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
        p
    }

    #[test]
    fn keypoint_layout() {
        let slots: Vec<usize> = (0..JOINTS).map(keypoint_of_joint).collect();
        assert_eq!(slots, vec![0, 1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15, 17, 18, 19]);
        let tips: Vec<usize> = (0..FINGERS).map(tip_keypoint).collect();
        assert_eq!(tips, vec![4, 8, 12, 16, 20]);
    }

    #[test]
    fn identity_pose_reproduces_rest() {
        let r = rig();
        let s = r.forward(&HandParams::default());
        assert_eq!(s.joints.len(), KEYPOINTS);
        assert_eq!(s.anchors.len(), PARTS);
        for j in 0..JOINTS {
            assert_eq!(s.joints[keypoint_of_joint(j)], r.bones[j].rest);
        }
        for f in 0..FINGERS {
            assert_eq!(s.joints[tip_keypoint(f)], r.tips[f].rest);
        }
        for (a, b) in s.vertices.iter().zip(&r.template.vertices) {
            assert_relative_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn wrist_translation_is_rigid() {
        let r = rig();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_params(&mut rng);
        p.wrist = Vec3::zeros();
        let base = r.forward(&p);
        let t = Vec3::new(0.1, 0.0, 0.0);
        p.wrist = t;
        let moved = r.forward(&p);
        for (a, b) in base.vertices.iter().zip(&moved.vertices) {
            assert_relative_eq!(*b, a + t, epsilon = 1e-15);
        }
        for (a, b) in base.joints.iter().zip(&moved.joints) {
            assert_relative_eq!(*b, a + t, epsilon = 1e-15);
        }
        for (a, b) in base.anchors.iter().zip(&moved.anchors) {
            assert_relative_eq!(*b, a + t, epsilon = 1e-15);
        }
    }

    #[test]
    fn mcp_flexion_rotates_descendants_only() {
        let r = rig();
        let joint = 4; // index MCP
        let axis = r.axes[joint].splay.cross(&r.axes[joint].twist).normalize();
        let mut p = HandParams::default();
        p.theta[joint] = -axis * FRAC_PI_2;
        let s = r.forward(&p);
        let rest = r.forward(&HandParams::default());
        let pivot = r.bones[joint].rest;
        let rotation = so3::exp(&p.theta[joint]);
        let descendants = [5, 6, 7, 8];
        for k in 0..KEYPOINTS {
            if descendants.contains(&k) {
                let expected = pivot + rotation * (rest.joints[k] - pivot);
                assert_relative_eq!(s.joints[k], expected, epsilon = 1e-12);
            } else {
                assert_eq!(s.joints[k], rest.joints[k]);
            }
        }
        // The finger curls towards the palm side.
        let palmar = r.axes[joint].splay;
        assert!((s.joints[8] - pivot).dot(&palmar) > 0.03);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let r = rig();
        assert!(check_jacobians(r, &HandParams::default()) < 1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let p = random_params(&mut rng);
            let err = check_jacobians(r, &p);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn beta_clamps_and_scales_fingers() {
        let r = rig();
        let mut p = HandParams::default();
        p.beta[2] = 10.0;
        let clamped = r.forward(&p);
        p.beta[2] = BETA_LIMIT;
        let at_limit = r.forward(&p);
        assert_eq!(clamped.joints, at_limit.joints);
        let rest = r.forward(&HandParams::default());
        let len = |s: &HandState| (s.joints[12] - s.joints[9]).norm();
        assert_relative_eq!(len(&at_limit), len(&rest) * (1.0 + 3.0 * SHAPE_STEP), epsilon = 1e-12);
    }

    #[test]
    fn rig_json_round_trip() {
        let r = rig();
        let back = HandRig::from_json(&r.to_json()).unwrap();
        assert_eq!(&back, r);
    }

    #[test]
    fn params_vector_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng);
        assert_eq!(HandParams::from_vector(&p.to_vector()), p);
    }
}
