//! Hand fitting to calibrated multi-view 2D keypoints, and temporal
//! smoothing of fitted sequences.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Matrix3x4, SMatrix, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{HandParams, HandRig, HandState, OutputGrad, JOINTS, KEYPOINTS};
use crate::mesh::{Point, Vec3};
use crate::optim::{minimize, AdamConfig};
use crate::refine::{energy_anat_with_grad, energy_intp_with_grad};
use crate::sdf::SdfGrid;
use crate::so3;

pub type Pixel = Vector2<f64>;

/// Pinhole camera: world point `p` maps to `K (R p + t)` followed by
/// perspective division.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vec3,
    pub width: u32,
    pub height: u32,
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        let k = &self.k;
        let upper = k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0;
        let focal = k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0;
        let orthonormal = (self.r * self.r.transpose() - Matrix3::identity()).amax() < 1e-6;
        let proper = (self.r.determinant() - 1.0).abs() < 1e-6;
        if !(upper && focal) {
            return Err(Error::invalid("intrinsics must be upper triangular with positive focal terms"));
        }
        if !(orthonormal && proper) {
            return Err(Error::invalid("extrinsic rotation must be proper and orthonormal"));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target`, with image-up close to `up`.
    pub fn look_at(eye: Point, target: Point, up: Vec3, focal: f64, width: u32, height: u32) -> Self {
        let z = (target - eye).normalize();
        let x = up.cross(&z).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        CameraView {
            k,
            r,
            t: -(r * eye.coords),
            width,
            height,
        }
    }

    pub fn focal(&self) -> f64 {
        0.5 * (self.k[(0, 0)] + self.k[(1, 1)])
    }

    /// Pixel position and camera-frame depth.
    pub fn project(&self, p: &Point) -> (Pixel, f64) {
        let c = self.r * p.coords + self.t;
        let q = self.k * c;
        (Pixel::new(q.x / q.z, q.y / q.z), c.z)
    }

    /// Pixel position and its Jacobian with respect to the world point.
    fn project_with_jacobian(&self, p: &Point) -> (Pixel, f64, SMatrix<f64, 2, 3>) {
        let c = self.r * p.coords + self.t;
        let q = self.k * c;
        let pix = Pixel::new(q.x / q.z, q.y / q.z);
        let mut dq = SMatrix::<f64, 2, 3>::zeros();
        for row in 0..2 {
            for col in 0..3 {
                dq[(row, col)] = (self.k[(row, col)] - pix[row] * self.k[(2, col)]) / q.z;
            }
        }
        (pix, c.z, dq * self.r)
    }

    fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        rt.set_column(3, &self.t);
        self.k * rt
    }
}

/// Keypoints and visibility weights of one frame, per view.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewObservation {
    pub views: Vec<CameraView>,
    pub keypoints: Vec<Vec<Pixel>>,
    pub weights: Vec<Vec<f64>>,
}

impl MultiViewObservation {
    pub fn validate(&self) -> Result<()> {
        let n = self.views.len();
        if self.keypoints.len() != n || self.weights.len() != n {
            return Err(Error::invalid("keypoints and weights must be given for every view"));
        }
        for v in 0..n {
            self.views[v].validate()?;
            if self.keypoints[v].len() != KEYPOINTS || self.weights[v].len() != KEYPOINTS {
                return Err(Error::invalid(format!("view {v} must carry {KEYPOINTS} keypoints")));
            }
            if self.weights[v].iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::invalid(format!("view {v} has weights outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn weight_sum(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }

    /// Observation of `joints` by `views`, all keypoints fully visible.
    pub fn synthesize(views: Vec<CameraView>, joints: &[Point]) -> Self {
        let keypoints = views
            .iter()
            .map(|cam| joints.iter().map(|j| cam.project(j).0).collect())
            .collect();
        let weights = vec![vec![1.0; KEYPOINTS]; views.len()];
        MultiViewObservation {
            views,
            keypoints,
            weights,
        }
    }

    /// Linear triangulation of keypoint `joint` from its weighted views.
    pub fn triangulate(&self, joint: usize) -> Result<Point> {
        let mut a = SMatrix::<f64, 4, 4>::zeros();
        let mut used = 0;
        for (v, cam) in self.views.iter().enumerate() {
            let w = self.weights[v][joint];
            if w <= 0.0 {
                continue;
            }
            used += 1;
            let p = cam.projection_matrix();
            let kp = self.keypoints[v][joint];
            let r0: Vector4<f64> = (p.row(0) * 1.0 - p.row(2) * kp.x).transpose();
            let r1: Vector4<f64> = (p.row(1) * 1.0 - p.row(2) * kp.y).transpose();
            a += (r0 * r0.transpose() + r1 * r1.transpose()) * w;
        }
        if used < 2 {
            return Err(Error::invalid(format!("keypoint {joint} is seen by fewer than two views")));
        }
        let eig = a.symmetric_eigen();
        let (i, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .expect("four eigenvalues");
        let h = eig.eigenvectors.column(i);
        Ok(Point::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
    }
}

/// Weighted mean squared pixel error and its gradient by keypoint. With
/// `normalize`, each view's errors are divided by its focal length squared.
fn reprojection(
    joints: &[Point],
    obs: &MultiViewObservation,
    normalize: bool,
) -> Result<(f64, Vec<(usize, Vec3)>)> {
    let wsum = obs.weight_sum();
    if !(wsum > 0.0) {
        return Err(Error::AllInvisible);
    }
    let mut e = 0.0;
    let mut grads = Vec::new();
    for (v, cam) in obs.views.iter().enumerate() {
        let norm = if normalize { cam.focal().powi(2) } else { 1.0 };
        for j in 0..KEYPOINTS {
            let w = obs.weights[v][j];
            if w <= 0.0 {
                continue;
            }
            let (pix, depth, jac) = cam.project_with_jacobian(&joints[j]);
            if depth <= 0.0 {
                return Err(Error::BehindCamera { joint: j, view: v });
            }
            let r = pix - obs.keypoints[v][j];
            e += w * r.norm_squared() / norm;
            grads.push((j, jac.transpose() * r * (2.0 * w / (norm * wsum))));
        }
    }
    Ok((e / wsum, grads))
}

/// Weighted mean squared reprojection error in pixels².
pub fn energy_repj(params: &HandParams, rig: &HandRig, obs: &MultiViewObservation) -> Result<f64> {
    let state = rig.forward(params);
    Ok(reprojection(&state.joints, obs, false)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub repj: f64,
    pub anat: f64,
    pub intp: f64,
    pub adam: AdamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            repj: 1.0,
            anat: 0.1,
            intp: 10.0,
            adam: AdamConfig {
                iterations: 3000,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitTerms {
    /// Focal-normalized reprojection term.
    pub repj: f64,
    pub anat: f64,
    pub intp: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FrameFit {
    pub params: HandParams,
    /// Pixel error per view and keypoint; `None` behind the camera.
    pub residuals: Vec<Vec<Option<f64>>>,
    pub trace: Vec<FitTerms>,
}

/// Total fitting objective and its gradient.
pub fn fit_objective(
    rig: &HandRig,
    obs: &MultiViewObservation,
    sdf: Option<&SdfGrid>,
    config: &FitConfig,
    params: &HandParams,
) -> Result<(FitTerms, crate::hand::ParamVec)> {
    let state = rig.forward(params);
    let (repj, joint_grads) = reprojection(&state.joints, obs, true)?;
    let (anat, anat_grad) = energy_anat_with_grad(params, rig);
    let (intp, vertex_grads) = match sdf {
        Some(g) => energy_intp_with_grad(&state, g),
        None => (0.0, Vec::new()),
    };
    let out = OutputGrad {
        joints: joint_grads.into_iter().map(|(j, g)| (j, g * config.repj)).collect(),
        vertices: vertex_grads.into_iter().map(|(v, g)| (v, g * config.intp)).collect(),
        anchors: Vec::new(),
    };
    let mut grad = rig.pullback(&state, &out);
    for (j, g) in anat_grad.iter().enumerate() {
        for c in 0..3 {
            grad[3 * j + c] += config.anat * g[c];
        }
    }
    let total = config.repj * repj + config.anat * anat + config.intp * intp;
    Ok((
        FitTerms {
            repj,
            anat,
            intp,
            total,
        },
        grad,
    ))
}

fn residuals(state: &HandState, obs: &MultiViewObservation) -> Vec<Vec<Option<f64>>> {
    obs.views
        .iter()
        .enumerate()
        .map(|(v, cam)| {
            (0..KEYPOINTS)
                .map(|j| {
                    let (pix, depth) = cam.project(&state.joints[j]);
                    (depth > 0.0).then(|| (pix - obs.keypoints[v][j]).norm())
                })
                .collect()
        })
        .collect()
}

pub fn fit_frame(
    rig: &HandRig,
    obs: &MultiViewObservation,
    sdf: Option<&SdfGrid>,
    init: &HandParams,
    config: &FitConfig,
) -> Result<FrameFit> {
    obs.validate()?;
    init.validate()?;
    let result = minimize(init, &config.adam, |p| {
        let (terms, grad) = fit_objective(rig, obs, sdf, config, p)?;
        Ok((terms.total, grad, terms))
    })?;
    let state = rig.forward(&result.params);
    Ok(FrameFit {
        residuals: residuals(&state, obs),
        params: result.params,
        trace: result.trace,
    })
}

/// Time-stamped frames sharing one camera set.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub views: Vec<CameraView>,
    pub times: Vec<f64>,
    pub frames: Vec<MultiViewObservation>,
}

#[derive(Deserialize)]
struct CameraDoc {
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    w: u32,
    h: u32,
}

#[derive(Deserialize)]
struct FrameDoc {
    t: f64,
    kp: Vec<Vec<[f64; 2]>>,
    w: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct SequenceDoc {
    cameras: Vec<CameraDoc>,
    frames: Vec<FrameDoc>,
}

impl FrameSequence {
    pub fn from_json(s: &str) -> std::result::Result<Self, String> {
        let doc: SequenceDoc = serde_json::from_str(s).map_err(|e| e.to_string())?;
        let views: Vec<CameraView> = doc
            .cameras
            .iter()
            .map(|c| CameraView {
                k: Matrix3::from_row_slice(&c.k),
                r: Matrix3::from_row_slice(&c.r),
                t: Vec3::from(c.t),
                width: c.w,
                height: c.h,
            })
            .collect();
        let mut times = Vec::with_capacity(doc.frames.len());
        let mut frames = Vec::with_capacity(doc.frames.len());
        for (i, f) in doc.frames.into_iter().enumerate() {
            if times.last().is_some_and(|&prev| f.t <= prev) {
                return Err(format!("frame {i}: timestamps must increase strictly"));
            }
            times.push(f.t);
            let obs = MultiViewObservation {
                views: views.clone(),
                keypoints: f
                    .kp
                    .iter()
                    .map(|view| view.iter().map(|p| Pixel::new(p[0], p[1])).collect())
                    .collect(),
                weights: f.w,
            };
            obs.validate().map_err(|e| format!("frame {i}: {e}"))?;
            frames.push(obs);
        }
        Ok(FrameSequence {
            views,
            times,
            frames,
        })
    }
}

/// Open hand placed at the triangulated wrist keypoint.
pub fn initial_params(rig: &HandRig, obs: &MultiViewObservation) -> Result<HandParams> {
    let wrist = obs.triangulate(0)?;
    Ok(HandParams {
        wrist: wrist - rig.bones[0].rest,
        ..HandParams::default()
    })
}

/// Fits every frame in order, warm-starting each from the previous fit.
pub fn fit_sequence(
    rig: &HandRig,
    seq: &FrameSequence,
    sdfs: Option<&[SdfGrid]>,
    config: &FitConfig,
) -> Result<Vec<FrameFit>> {
    let mut fits: Vec<FrameFit> = Vec::with_capacity(seq.frames.len());
    for (i, obs) in seq.frames.iter().enumerate() {
        let init = match fits.last() {
            Some(prev) => prev.params.clone(),
            None => initial_params(rig, obs)?,
        };
        let sdf = sdfs.map(|s| &s[i]);
        fits.push(fit_frame(rig, obs, sdf, &init, config)?);
    }
    Ok(fits)
}

pub fn residuals_csv(fits: &[FrameFit]) -> String {
    let mut s = String::from("frame,joint,view,pixels\n");
    for (f, fit) in fits.iter().enumerate() {
        for (v, row) in fit.residuals.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                if let Some(px) = r {
                    let _ = writeln!(s, "{f},{j},{v},{px}");
                }
            }
        }
    }
    s
}

/// Second-order Butterworth low-pass; `cutoff` is a fraction of the
/// Nyquist frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn butterworth(cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < 1.0) {
            return Err(Error::invalid("cutoff must lie in (0, 1) of the Nyquist frequency"));
        }
        let k = (PI * cutoff / 2.0).tan();
        let s2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + s2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - s2 * k + k * k) * norm],
        })
    }

    fn pole_radius(&self) -> f64 {
        let [a1, a2] = self.a;
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-a1 + s) / 2.0).abs().max(((-a1 - s) / 2.0).abs())
        }
    }

    /// Filters one period of a periodic signal in steady state.
    fn periodic(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let decay = (1e-17f64).ln() / self.pole_radius().ln();
        let periods = (decay / n as f64).ceil() as usize + 1;
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        let mut out = vec![0.0; n];
        for _ in 0..periods {
            for (i, &xi) in x.iter().enumerate() {
                let y = self.b[0] * xi + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = xi;
                y2 = y1;
                y1 = y;
                out[i] = y;
            }
        }
        out
    }

    /// Zero-phase forward-backward filtering. The signal is extended by its
    /// mirror image into a periodic sequence so the ends carry no transient
    /// and constant offsets pass unchanged.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut ext: Vec<f64> = x.to_vec();
        ext.extend(x.iter().rev());
        let mut y = self.periodic(&ext);
        y.reverse();
        let mut z = self.periodic(&y);
        z.reverse();
        z.truncate(n);
        z
    }
}

/// Rotation equivalent to `w` closest to `reference`, among the
/// representations differing by whole turns about the same axis.
fn unwrap_rotation(w: &Vec3, reference: &Vec3) -> Vec3 {
    let phi = w.norm();
    if phi < 1e-12 {
        return *w;
    }
    let axis = w / phi;
    (-2..=2)
        .map(|k| axis * (phi + 2.0 * PI * k as f64))
        .chain((-2..=2).map(|k| -axis * (2.0 * PI - phi + 2.0 * PI * k as f64)))
        .min_by(|a, b| (a - reference).norm().total_cmp(&(b - reference).norm()))
        .expect("candidates")
}

/// Low-pass filters wrist and joint rotations over time and replaces shape
/// by its sequence mean.
pub fn smooth_sequence(fits: &[HandParams], cutoff: f64) -> Result<Vec<HandParams>> {
    if fits.len() < 3 {
        return Err(Error::TooShort(fits.len()));
    }
    for p in fits {
        p.validate()?;
    }
    let filter = Biquad::butterworth(cutoff)?;
    let n = fits.len();
    let mut out: Vec<HandParams> = fits.to_vec();

    for j in 0..JOINTS {
        let mut seq = vec![fits[0].theta[j]];
        for f in &fits[1..] {
            let prev = *seq.last().expect("non-empty");
            seq.push(unwrap_rotation(&f.theta[j], &prev));
        }
        for c in 0..3 {
            let comp: Vec<f64> = seq.iter().map(|w| w[c]).collect();
            for (k, y) in filter.filtfilt(&comp).into_iter().enumerate() {
                out[k].theta[j][c] = y;
            }
        }
    }
    for c in 0..3 {
        let comp: Vec<f64> = fits.iter().map(|p| p.wrist[c]).collect();
        for (k, y) in filter.filtfilt(&comp).into_iter().enumerate() {
            out[k].wrist[c] = y;
        }
    }
    let dims = fits[0].beta.len();
    let mean: Vec<f64> = (0..dims)
        .map(|i| fits.iter().map(|p| p.beta[i]).sum::<f64>() / n as f64)
        .collect();
    for p in &mut out {
        p.beta = mean.clone();
        for t in &mut p.theta {
            *t = so3::canonical(t);
        }
    }
    Ok(out)
}
