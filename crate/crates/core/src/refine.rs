//! Contact-guided hand pose refinement on a target object.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::contact::ContactnessField;
use crate::error::{Error, Result};
use crate::hand::{is_mcp, HandParams, HandRig, HandState, OutputGrad, ParamVec, JOINTS};
use crate::icp::kabsch_weighted;
use crate::mesh::{Point, TriMesh, Vec3};
use crate::optim::{minimize, AdamConfig};
use crate::sdf::SdfGrid;
use crate::so3;

/// Rotations smaller than this have no defined axis and cost nothing.
pub const AXIS_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub consis: f64,
    pub anat: f64,
    pub intp: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            consis: 1.0,
            anat: 0.1,
            intp: 10.0,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        if [self.consis, self.anat, self.intp].iter().all(|w| *w > 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("energy weights must be positive"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub consis: f64,
    pub anat: f64,
    pub intp: f64,
    pub total: f64,
}

/// Labeled target vertices paired with the anchor they attract.
#[derive(Debug, Clone)]
pub struct ContactTargets {
    pairs: Vec<(usize, Point, f64)>,
    gamma_sum: f64,
}

impl ContactTargets {
    pub fn new(field: &ContactnessField, target: &TriMesh) -> Result<Self> {
        if field.vertex_count() != target.vertex_count() {
            return Err(Error::invalid(format!(
                "contact field covers {} vertices, target mesh has {}",
                field.vertex_count(),
                target.vertex_count()
            )));
        }
        let pairs: Vec<_> = field
            .labeled()
            .map(|(v, c)| (c.anchor, target.vertices[v], c.gamma))
            .collect();
        let gamma_sum: f64 = pairs.iter().map(|p| p.2).sum();
        if !(gamma_sum > 0.0) {
            return Err(Error::EmptyContacts);
        }
        Ok(ContactTargets { pairs, gamma_sum })
    }

    /// Contact consistency and its gradient with respect to each anchor.
    pub fn energy(&self, anchors: &[Point]) -> (f64, Vec<(usize, Vec3)>) {
        let mut e = 0.0;
        let mut grads = Vec::with_capacity(self.pairs.len());
        for &(a, v, gamma) in &self.pairs {
            let d = anchors[a] - v;
            e += gamma * d.norm_squared();
            grads.push((a, d * (2.0 * gamma / self.gamma_sum)));
        }
        (e / self.gamma_sum, grads)
    }

    /// γ-weighted centroid of the vertices attracting each anchor, with
    /// the anchor's total γ.
    pub fn centroids(&self) -> Vec<(usize, Point, f64)> {
        let mut acc: Vec<(usize, Vec3, f64)> = Vec::new();
        for &(a, v, gamma) in &self.pairs {
            match acc.iter_mut().find(|e| e.0 == a) {
                Some(e) => {
                    e.1 += v.coords * gamma;
                    e.2 += gamma;
                }
                None => acc.push((a, v.coords * gamma, gamma)),
            }
        }
        acc.sort_by_key(|e| e.0);
        acc.into_iter()
            .filter(|e| e.2 > 0.0)
            .map(|(a, sum, w)| (a, Point::from(sum / w), w))
            .collect()
    }
}

/// Moves the whole hand rigidly so its anchors best match their contact
/// centroids projected onto the surface. Needs three anchors for the
/// rotation, otherwise only translates.
pub fn align_rigidly(rig: &HandRig, targets: &ContactTargets, sdf: &SdfGrid, params: &HandParams) -> HandParams {
    let state = rig.forward(params);
    let centroids = targets.centroids();
    let src: Vec<Point> = centroids.iter().map(|c| state.anchors[c.0]).collect();
    let dst: Vec<Point> = centroids
        .iter()
        .map(|c| {
            let (d, g) = sdf.sample_with_gradient(&c.1);
            let n = g.norm();
            if n > 1e-12 { c.1 - g * (d / (n * n)) } else { c.1 }
        })
        .collect();
    let w: Vec<f64> = centroids.iter().map(|c| c.2).collect();
    let mut iso = kabsch_weighted(&src, &dst, &w);
    if centroids.len() < 3 {
        iso.rotation = UnitQuaternion::identity();
        let n: f64 = w.iter().sum();
        iso.translation.vector = src.iter().zip(&dst).zip(&w).map(|((a, b), w)| (b - a) * *w).sum::<Vec3>() / n;
    }
    let pivot = state.joints[0].coords - params.wrist;
    let r = iso.rotation.to_rotation_matrix().into_inner();
    let mut out = params.clone();
    out.theta[0] = so3::log(&(r * so3::exp(&params.theta[0])));
    out.wrist = r * (pivot + params.wrist) + iso.translation.vector - pivot;
    out.canonicalized()
}

/// γ-weighted mean squared distance between anchors and their labeled
/// target vertices.
pub fn energy_consis(hand: &HandState, contacts: &ContactnessField, target: &TriMesh) -> Result<f64> {
    Ok(ContactTargets::new(contacts, target)?.energy(&hand.anchors).0)
}

/// Anatomical cost: squared twist component of every finger joint axis,
/// excess rotation beyond π/2, and squared splay component of non-MCP joints. Returns the
/// gradient with respect to the joint rotations. The root rotation is the
/// global hand orientation and is not penalized.
pub fn energy_anat_with_grad(params: &HandParams, rig: &HandRig) -> (f64, Vec<Vec3>) {
    let mut e = 0.0;
    let mut grad = vec![Vec3::zeros(); JOINTS];
    for j in 1..JOINTS {
        let theta = params.theta[j];
        let phi = theta.norm();
        if phi < AXIS_EPSILON {
            continue;
        }
        let a = theta / phi;
        let axes = &rig.axes[j];
        let mut normals = vec![axes.twist];
        if !is_mcp(j) {
            normals.push(axes.splay);
        }
        for n in normals {
            let c = a.dot(&n);
            e += c * c;
            grad[j] += (n - a * c) * (2.0 * c / phi);
        }
        if phi > FRAC_PI_2 {
            e += phi - FRAC_PI_2;
            grad[j] += a;
        }
    }
    (e, grad)
}

pub fn energy_anat(params: &HandParams, rig: &HandRig) -> f64 {
    energy_anat_with_grad(params, rig).0
}

/// Sum of penetration depths of hand vertices, with per-vertex gradients.
pub fn energy_intp_with_grad(hand: &HandState, sdf: &SdfGrid) -> (f64, Vec<(usize, Vec3)>) {
    let mut e = 0.0;
    let mut grads = Vec::new();
    for (i, v) in hand.vertices.iter().enumerate() {
        let (d, g) = sdf.sample_with_gradient(v);
        if d < 0.0 {
            e -= d;
            grads.push((i, -g));
        }
    }
    (e, grads)
}

pub fn energy_intp(hand: &HandState, sdf: &SdfGrid) -> f64 {
    hand.vertices.iter().map(|v| (-sdf.sample(v)).max(0.0)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub weights: Weights,
    pub adam: AdamConfig,
    /// Rigidly align the initial hand to the contacts before descending.
    pub align: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            weights: Weights::default(),
            adam: AdamConfig {
                max_grad_norm: Some(0.01),
                backtrack: 2,
                ..AdamConfig::default()
            },
            align: true,
        }
    }
}

pub struct RefineProblem<'a> {
    pub rig: &'a HandRig,
    pub init: HandParams,
    pub target: &'a TriMesh,
    pub sdf: &'a SdfGrid,
    pub contacts: &'a ContactnessField,
    pub config: RefineConfig,
}

#[derive(Debug, Clone)]
pub struct RefineReport {
    pub params: HandParams,
    pub trace: Vec<EnergyTerms>,
    pub converged: bool,
}

impl RefineReport {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,E_consis,E_anat,E_intp,total\n");
        for (i, t) in self.trace.iter().enumerate() {
            let _ = writeln!(s, "{i},{:e},{:e},{:e},{:e}", t.consis, t.anat, t.intp, t.total);
        }
        s
    }
}

/// Weighted energy terms and total gradient at `params`.
pub fn evaluate(
    rig: &HandRig,
    targets: &ContactTargets,
    sdf: &SdfGrid,
    weights: &Weights,
    params: &HandParams,
) -> (EnergyTerms, ParamVec) {
    let state = rig.forward(params);
    let (consis, anchor_grads) = targets.energy(&state.anchors);
    let (anat, anat_grad) = energy_anat_with_grad(params, rig);
    let (intp, vertex_grads) = energy_intp_with_grad(&state, sdf);

    let out = OutputGrad {
        joints: Vec::new(),
        anchors: anchor_grads
            .into_iter()
            .map(|(a, g)| (a, g * weights.consis))
            .collect(),
        vertices: vertex_grads
            .into_iter()
            .map(|(v, g)| (v, g * weights.intp))
            .collect(),
    };
    let mut grad = rig.pullback(&state, &out);
    for (j, g) in anat_grad.iter().enumerate() {
        for c in 0..3 {
            grad[3 * j + c] += weights.anat * g[c];
        }
    }
    let total = weights.consis * consis + weights.anat * anat + weights.intp * intp;
    (
        EnergyTerms {
            consis,
            anat,
            intp,
            total,
        },
        grad,
    )
}

pub fn refine(problem: &RefineProblem) -> Result<RefineReport> {
    problem.config.weights.validate()?;
    problem.init.validate()?;
    let targets = ContactTargets::new(problem.contacts, problem.target)?;
    let weights = problem.config.weights;
    let total = |p: &HandParams| evaluate(problem.rig, &targets, problem.sdf, &weights, p).0.total;
    let mut init = problem.init.clone();
    if problem.config.align {
        let aligned = align_rigidly(problem.rig, &targets, problem.sdf, &init);
        if total(&aligned) < total(&init) {
            init = aligned;
        }
    }
    let result = minimize(&init, &problem.config.adam, |p| {
        let (terms, grad) = evaluate(problem.rig, &targets, problem.sdf, &weights, p);
        Ok((terms.total, grad, terms))
    })?;
    Ok(RefineReport {
        params: result.params,
        trace: result.trace,
        converged: result.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::Contact;
    use crate::hand::{HandRig, PARAMS};
    use crate::mesh::icosphere;
    use crate::sdf::sphere_grid;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn rig() -> &'static HandRig {
        HandRig::default_rig()
    }

    fn points_mesh(points: Vec<Point>) -> TriMesh {
        TriMesh {
            vertices: points,
            faces: vec![],
            labels: None,
        }
    }

    fn field(n: usize, entries: &[(usize, usize, f64)]) -> ContactnessField {
        let mut f = ContactnessField::empty(n);
        for &(v, anchor, gamma) in entries {
            f.offer(v, Contact { part: anchor as u8 + 1, gamma, anchor });
        }
        f
    }

    #[test]
    fn consis_is_zero_on_coincident_anchors() {
        let state = rig().forward(&HandParams::default());
        let target = points_mesh(state.anchors.clone());
        let f = field(17, &(0..17).map(|i| (i, i, 1.0)).collect::<Vec<_>>());
        assert_eq!(energy_consis(&state, &f, &target).unwrap(), 0.0);
    }

    #[test]
    fn consis_single_and_weighted_terms() {
        let state = rig().forward(&HandParams::default());
        let a = state.anchors[3];
        let target = points_mesh(vec![a + Vec3::new(0.01, 0.0, 0.0), a + Vec3::new(0.0, 0.02, 0.0)]);
        let one = field(2, &[(0, 3, 1.0)]);
        assert_relative_eq!(energy_consis(&state, &one, &target).unwrap(), 1e-4, epsilon = 1e-15);
        let two = field(2, &[(0, 3, 1.0), (1, 3, 0.5)]);
        let brute = (1.0 * 0.01f64.powi(2) + 0.5 * 0.02f64.powi(2)) / 1.5;
        let e = energy_consis(&state, &two, &target).unwrap();
        assert_relative_eq!(e, brute, epsilon = 1e-15);
        assert_relative_eq!(e, 2e-4, epsilon = 1e-15);
    }

    #[test]
    fn consis_requires_contacts() {
        let state = rig().forward(&HandParams::default());
        let target = points_mesh(vec![Point::origin()]);
        assert!(matches!(
            energy_consis(&state, &ContactnessField::empty(1), &target),
            Err(Error::EmptyContacts)
        ));
    }

    #[test]
    fn anat_examples() {
        let r = rig();
        assert_eq!(energy_anat(&HandParams::default(), r), 0.0);
        let j = 5; // index PIP, not an MCP joint
        let mut p = HandParams::default();
        p.theta[j] = r.axes[j].splay * PI;
        assert_relative_eq!(energy_anat(&p, r), FRAC_PI_2 + 1.0, epsilon = 1e-12);
        let mcp = 4;
        let flex = r.axes[mcp].twist.cross(&r.axes[mcp].splay);
        let mut q = HandParams::default();
        q.theta[mcp] = (flex + r.axes[mcp].splay).normalize() * (PI / 4.0);
        assert!(energy_anat(&q, r).abs() < 1e-12);
    }

    #[test]
    fn intp_examples() {
        let grid = SdfGrid::from_fn(Point::origin(), 0.01, [3, 3, 3], |p| p.x - 0.01).unwrap();
        let state = rig().forward(&HandParams {
            wrist: Vec3::new(1.0, 0.0, 0.0),
            ..HandParams::default()
        });
        assert_eq!(energy_intp(&state, &grid), 0.0);
    }

    #[test]
    fn intp_matches_analytic_sphere_penetration() {
        let r = rig();
        // Push the middle fingertip 5 mm into a 4 cm sphere.
        let tip = r.forward(&HandParams::default()).joints[12];
        let center = tip + Vec3::new(0.0, 0.04 - 0.005, 0.0);
        let grid = sphere_grid(center, 0.04, 0.002, 0.01);
        let state = r.forward(&HandParams::default());
        let brute: f64 = state
            .vertices
            .iter()
            .map(|v| (0.04 - (v - center).norm()).max(0.0))
            .sum();
        let e = energy_intp(&state, &grid);
        assert!(brute > 0.0);
        assert!((e - brute).abs() < 0.1 * brute + 1e-4, "{e} vs {brute}");
    }

    fn fixture() -> (TriMesh, SdfGrid, ContactnessField, HandParams) {
        let r = rig();
        let center = Point::new(0.0, 0.06, -0.06);
        let sphere = icosphere(center, 0.045, 3);
        let grid = sphere_grid(center, 0.045, 0.003, 0.02);
        let state = r.forward(&HandParams::default());
        let f = crate::contact::derive_contact(
            &state.anchors,
            &r.anchors.iter().map(|a| a.part).collect::<Vec<_>>(),
            &sphere,
            &Default::default(),
        );
        let mut init = HandParams {
            wrist: Vec3::new(0.004, -0.003, 0.006),
            ..HandParams::default()
        };
        init.theta[7] = Vec3::new(0.1, 0.05, -0.02);
        (sphere, grid, f, init)
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let r = rig();
        let (sphere, grid, f, init) = fixture();
        let targets = ContactTargets::new(&f, &sphere).unwrap();
        let w = Weights::default();
        let (_, grad) = evaluate(r, &targets, &grid, &w, &init);
        let x = init.to_vector();
        let h = 1e-7;
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..PARAMS {
            let mut hi = x;
            hi[i] += h;
            let mut lo = x;
            lo[i] -= h;
            let e = |v| evaluate(r, &targets, &grid, &w, &HandParams::from_vector(&v)).0.total;
            let fd = (e(hi) - e(lo)) / (2.0 * h);
            diff = diff.max((fd - grad[i]).abs());
            scale = scale.max(fd.abs());
        }
        assert!(diff / scale < 1e-3, "relative error {}", diff / scale);
    }

    #[test]
    fn scaled_weights_give_parallel_gradients() {
        let r = rig();
        let (sphere, grid, f, init) = fixture();
        let targets = ContactTargets::new(&f, &sphere).unwrap();
        let one = Weights { consis: 1.0, anat: 1.0, intp: 1.0 };
        let two = Weights { consis: 2.0, anat: 2.0, intp: 2.0 };
        let (_, g1) = evaluate(r, &targets, &grid, &one, &init);
        let (_, g2) = evaluate(r, &targets, &grid, &two, &init);
        assert!(g1.dot(&g2) / (g1.norm() * g2.norm()) > 0.999);
    }

    #[test]
    fn zero_energy_start_is_a_fixed_point() {
        let r = rig();
        let init = HandParams::default();
        let state = r.forward(&init);
        // Target vertices sit exactly on the anchors; the object lies far away.
        let target = points_mesh(state.anchors.clone());
        let grid = sphere_grid(Point::new(1.0, 0.0, 0.0), 0.05, 0.01, 0.02);
        let f = field(17, &(0..17).map(|i| (i, i, 1.0)).collect::<Vec<_>>());
        let report = refine(&RefineProblem {
            rig: r,
            init: init.clone(),
            target: &target,
            sdf: &grid,
            contacts: &f,
            config: RefineConfig::default(),
        })
        .unwrap();
        assert!(report.params.max_abs_diff(&init) < 1e-6);
        assert!(report.trace.iter().all(|t| t.total < 1e-10));
        assert_eq!(report.iterations(), report.trace.len());
    }

    #[test]
    fn refine_pulls_the_hand_onto_contacts() {
        let r = rig();
        let (sphere, grid, f, init) = fixture();
        let report = refine(&RefineProblem {
            rig: r,
            init,
            target: &sphere,
            sdf: &grid,
            contacts: &f,
            config: RefineConfig::default(),
        })
        .unwrap();
        let first = report.trace[0];
        let last = *report.trace.last().unwrap();
        assert!(last.total < first.total);
        assert!(last.intp < 1e-4, "E_intp {}", last.intp);
    }
}
