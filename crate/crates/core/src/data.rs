//! Pose samples, datasets, 2D normalization and the synthetic lifting task.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{SkeletonGraph, H36M16_PARENTS, ROOT_JOINT};
use crate::matrix::Matrix;

/// One training pair: normalized 2D keypoints and root-centered 3D joints (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub input_2d: Matrix,
    pub target_3d: Matrix,
    pub action: Option<String>,
    pub subject: Option<String>,
}

impl PoseSample {
    pub fn new(input_2d: Matrix, target_3d: Matrix) -> Self {
        Self { input_2d, target_3d, action: None, subject: None }
    }

    pub fn with_action(mut self, action: impl Into<String>) -> Self {
        self.action = Some(action.into());
        self
    }

    pub fn joint_count(&self) -> usize {
        self.input_2d.rows()
    }
}

/// Image size used to normalize the 2D inputs, if known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationMeta {
    pub image_width: f64,
    pub image_height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<PoseSample>,
    skeleton: SkeletonGraph,
    normalization: Option<NormalizationMeta>,
}

impl Dataset {
    /// Validates shapes and finiteness, and root-centers every 3D target.
    pub fn new(mut samples: Vec<PoseSample>, skeleton: SkeletonGraph, normalization: Option<NormalizationMeta>) -> Result<Self> {
        let j = skeleton.joint_count();
        for (i, s) in samples.iter_mut().enumerate() {
            for m in [&s.input_2d, &s.target_3d] {
                if m.rows() != j {
                    return Err(Error::JointCountMismatch { expected: j, actual: m.rows() });
                }
            }
            s.input_2d.ensure_shape(j, 2)?;
            s.target_3d.ensure_shape(j, 3)?;
            if !(s.input_2d.is_finite() && s.target_3d.is_finite()) {
                return Err(Error::NonFiniteValue { sample: i });
            }
            root_center(&mut s.target_3d);
        }
        Ok(Self { samples, skeleton, normalization })
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn skeleton(&self) -> &SkeletonGraph {
        &self.skeleton
    }

    pub fn normalization(&self) -> Option<NormalizationMeta> {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Subtracts the root joint row from every row, leaving the root exactly zero.
pub fn root_center(pose: &mut Matrix) {
    let root: Vec<f64> = pose.row(ROOT_JOINT).to_vec();
    for j in 0..pose.rows() {
        for (v, r) in pose.row_mut(j).iter_mut().zip(&root) {
            *v -= r;
        }
    }
    pose.row_mut(ROOT_JOINT).fill(0.0);
}

fn check_dims(width: f64, height: f64) -> Result<()> {
    if width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite() {
        Ok(())
    } else {
        Err(Error::BadImageDims { width, height })
    }
}

/// Pixel coordinates to `[-1, 1]` with the width as shared divisor:
/// `x' = (2x - w)/w`, `y' = (2y - h)/w`.
pub fn normalize_2d(raw: &Matrix, width: f64, height: f64) -> Result<Matrix> {
    check_dims(width, height)?;
    raw.ensure_shape(raw.rows(), 2)?;
    let mut out = raw.clone();
    for j in 0..out.rows() {
        let r = out.row_mut(j);
        r[0] = (2.0 * r[0] - width) / width;
        r[1] = (2.0 * r[1] - height) / width;
    }
    Ok(out)
}

pub fn denormalize_2d(normalized: &Matrix, width: f64, height: f64) -> Result<Matrix> {
    check_dims(width, height)?;
    normalized.ensure_shape(normalized.rows(), 2)?;
    let mut out = normalized.clone();
    for j in 0..out.rows() {
        let r = out.row_mut(j);
        r[0] = (r[0] * width + width) / 2.0;
        r[1] = (r[1] * width + height) / 2.0;
    }
    Ok(out)
}

/// Pinhole camera looking down +z at a subject placed `depth` mm away.
///
/// Body frame: x right, y up, z away from the camera. Camera frame flips y so
/// image rows grow downward: `u = f·x/(z + depth) + cx`,
/// `v = -f·y/(z + depth) + cy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCamera {
    pub focal: f64,
    pub depth: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for SyntheticCamera {
    fn default() -> Self {
        Self { focal: 1150.0, depth: 4500.0, width: 1000.0, height: 1000.0 }
    }
}

impl SyntheticCamera {
    pub fn project_pixels(&self, pose: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(pose.rows(), 2);
        for j in 0..pose.rows() {
            let p = pose.row(j);
            let z = p[2] + self.depth;
            out[(j, 0)] = self.focal * p[0] / z + self.width / 2.0;
            out[(j, 1)] = -self.focal * p[1] / z + self.height / 2.0;
        }
        out
    }

    /// Projection followed by [`normalize_2d`].
    pub fn project(&self, pose: &Matrix) -> Matrix {
        normalize_2d(&self.project_pixels(pose), self.width, self.height).expect("camera dims are positive")
    }

    pub fn meta(&self) -> NormalizationMeta {
        NormalizationMeta { image_width: self.width, image_height: self.height }
    }
}

/// Bone offsets (mm) from each joint's parent in the rest pose.
const H36M16_REST: [[f64; 3]; 16] = [
    [0.0, 0.0, 0.0],
    [-130.0, 0.0, 0.0],
    [0.0, -450.0, 0.0],
    [0.0, -440.0, 0.0],
    [130.0, 0.0, 0.0],
    [0.0, -450.0, 0.0],
    [0.0, -440.0, 0.0],
    [0.0, 230.0, 0.0],
    [0.0, 250.0, 0.0],
    [0.0, 200.0, 0.0],
    [150.0, 0.0, 0.0],
    [0.0, -280.0, 0.0],
    [0.0, -250.0, 0.0],
    [-150.0, 0.0, 0.0],
    [0.0, -280.0, 0.0],
    [0.0, -250.0, 0.0],
];

/// Flexion range (radians, about the body's lateral axis) of the bone ending
/// at each joint. One-sided ranges keep every bone's depth sign recoverable
/// from the image, so the lifting map is a function.
const H36M16_FLEX: [(f64, f64); 16] = [
    (0.0, 0.0),
    (0.0, 0.1),
    (0.0, 1.2),
    (-1.3, 0.0),
    (0.0, 0.1),
    (0.0, 1.2),
    (-1.3, 0.0),
    (0.0, 0.35),
    (0.0, 0.25),
    (0.0, 0.4),
    (0.0, 0.1),
    (0.0, 1.4),
    (0.0, 1.4),
    (0.0, 0.1),
    (0.0, 1.4),
    (0.0, 1.4),
];

/// Abduction range (radians, about the viewing axis at zero yaw) per joint.
const H36M16_ABDUCT: [f64; 16] = [0.1, 0.05, 0.3, 0.1, 0.05, 0.3, 0.1, 0.15, 0.1, 0.2, 0.1, 0.6, 0.3, 0.1, 0.6, 0.3];

/// Largest yaw of the whole body away from facing the camera.
const MAX_YAW: f64 = core::f64::consts::FRAC_PI_4;

pub const SYNTHETIC_ACTIONS: [&str; 4] = ["synth-a", "synth-b", "synth-c", "synth-d"];

type Rot = [[f64; 3]; 3];

fn rot_mul(a: &Rot, b: &Rot) -> Rot {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn rot_apply(r: &Rot, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
}

/// Rodrigues rotation about a unit axis.
fn axis_angle(axis: [f64; 3], angle: f64) -> Rot {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// Random 16-joint pose via forward kinematics with fixed bone lengths.
fn random_h36m16_pose<R: Rng>(rng: &mut R) -> Matrix {
    let mut global: [Rot; 16] = [[[0.0; 3]; 3]; 16];
    let mut pose = Matrix::zeros(16, 3);
    let yaw = axis_angle([0.0, 1.0, 0.0], rng.random_range(-MAX_YAW..=MAX_YAW));
    for j in 0..16 {
        let (lo, hi) = H36M16_FLEX[j];
        let flex = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let abduct = rng.random_range(-H36M16_ABDUCT[j]..=H36M16_ABDUCT[j]);
        let local = rot_mul(&axis_angle([0.0, 0.0, 1.0], abduct), &axis_angle([1.0, 0.0, 0.0], flex));
        match H36M16_PARENTS[j] {
            None => global[j] = rot_mul(&yaw, &local),
            Some(p) => {
                global[j] = rot_mul(&global[p], &local);
                let off = rot_apply(&global[j], &H36M16_REST[j]);
                for c in 0..3 {
                    pose[(j, c)] = pose[(p, c)] + off[c];
                }
            }
        }
    }
    pose
}

/// Deterministic, exactly-projected lifting task on the default skeleton.
///
/// Inputs are the [`SyntheticCamera`] projection of the root-centered
/// target, so `camera.project(target_3d) == input_2d`.
pub fn make_synthetic_task(joint_count: usize, n_samples: usize, seed: u64) -> Result<Dataset> {
    if joint_count != H36M16_PARENTS.len() {
        return Err(Error::BadConfig(format!(
            "synthetic poses exist only for the {}-joint skeleton, not {joint_count}",
            H36M16_PARENTS.len()
        )));
    }
    if n_samples == 0 {
        return Err(Error::BadConfig("synthetic task needs at least one sample".into()));
    }
    let camera = SyntheticCamera::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n_samples)
        .map(|i| {
            let target = random_h36m16_pose(&mut rng);
            let input = camera.project(&target);
            PoseSample::new(input, target).with_action(SYNTHETIC_ACTIONS[i % SYNTHETIC_ACTIONS.len()])
        })
        .collect();
    Dataset::new(samples, SkeletonGraph::h36m16(), Some(camera.meta()))
}
