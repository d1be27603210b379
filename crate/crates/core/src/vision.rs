/*
Copyright 2026 The softarm Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
//! Two-camera frame chain: an eye-to-hand camera (C1) fixed in the world and
//! an eye-in-hand camera (C2) on the end-effector.
//!
//! Transforms follow the `T_a_b` convention: the pose of frame `a` expressed
//! in frame `b`, mapping `a` coordinates into `b` coordinates. Camera
//! detection is emulated; C2 reports the berry as a 3-D point.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ConfigError, RegistrationError, VisionError};
use crate::kinematics::Pose;

/// Radius of the end-effector footprint that blocks C1's line of sight.
pub const DEFAULT_FOOTPRINT_RADIUS: f64 = 0.04;

/// Camera transforms used to bring measurements into the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRegistry {
    /// C1 in the base frame, from point registration.
    pub t_c1_base: Pose,
    /// C2 mount on the end-effector.
    pub t_c2_ee: Pose,
    /// RMS residual of the registration that produced `t_c1_base`, meters.
    pub registration_residual: f64,
}

impl FrameRegistry {
    pub fn new(t_c1_base: Pose, t_c2_ee: Pose) -> Self {
        FrameRegistry {
            t_c1_base,
            t_c2_ee,
            registration_residual: 0.0,
        }
    }

    /// C1 about 1.2 m from the base looking at the workspace, C2 on the tool
    /// axis 3 cm behind the end-effector frame.
    pub fn default_layout() -> Self {
        let eye = Vector3::new(1.2, 0.0, 0.0);
        let t_c1_base = Pose::new(eye, look_at(&eye, &Vector3::new(0.0, 0.15, 0.4)));
        let t_c2_ee = Pose::from_translation(Vector3::new(0.0, 0.0, -0.03));
        FrameRegistry::new(t_c1_base, t_c2_ee)
    }

    /// Registers C1 from points known in the base frame and measured by C1.
    pub fn register_c1(
        points_c1: &[Vector3<f64>],
        points_base: &[Vector3<f64>],
        t_c2_ee: Pose,
    ) -> Result<Self, RegistrationError> {
        let (t_c1_base, residual) = register_rigid(points_c1, points_base)?;
        Ok(FrameRegistry {
            t_c1_base,
            t_c2_ee,
            registration_residual: residual,
        })
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.t_c1_base.is_valid(tol) && self.t_c2_ee.is_valid(tol)
    }

    /// End-effector pose in C1 given its pose in the base frame.
    pub fn ee_in_c1(&self, ee_in_base: &Pose) -> Pose {
        self.t_c1_base.inverse() * *ee_in_base
    }
}

/// Rotation of a camera at `eye` whose optical (Z) axis points at `target`.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Matrix3<f64> {
    let z = (target - eye).normalize();
    let up = if z.cross(&Vector3::z()).norm() > 1e-6 {
        Vector3::z()
    } else {
        Vector3::x()
    };
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Least-squares rigid transform `T` minimizing `sum |T a_i - b_i|^2`.
///
/// Returns the transform and the RMS residual.
pub fn register_rigid(
    points_a: &[Vector3<f64>],
    points_b: &[Vector3<f64>],
) -> Result<(Pose, f64), RegistrationError> {
    if points_a.len() != points_b.len() {
        return Err(RegistrationError::DegenerateConfiguration(
            "point sets differ in length",
        ));
    }
    if points_a.len() < 3 {
        return Err(RegistrationError::DegenerateConfiguration(
            "at least 3 correspondences required",
        ));
    }
    let n = points_a.len() as f64;
    let ca = points_a.iter().sum::<Vector3<f64>>() / n;
    let cb = points_b.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in points_a.iter().zip(points_b) {
        h += (a - ca) * (b - cb).transpose();
    }
    let scale = points_a.iter().map(|a| (a - ca).norm()).fold(0.0, f64::max);
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    // Sort-independent rank check: the second singular value of the spread
    // must be non-negligible, otherwise the points are collinear.
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if scale == 0.0 || sorted[1] <= 1e-10 * sorted[0].max(f64::MIN_POSITIVE) {
        return Err(RegistrationError::DegenerateConfiguration(
            "points are coincident or collinear",
        ));
    }
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let d = (v_t.transpose() * u.transpose()).determinant().signum();
    // Flip the axis of the smallest singular value to exclude reflections.
    let smallest = (0..3).min_by(|&i, &j| sv[i].total_cmp(&sv[j])).unwrap_or(2);
    sv.fill(1.0);
    sv[smallest] = d;
    let rotation = v_t.transpose() * Matrix3::from_diagonal(&sv) * u.transpose();
    let translation = cb - rotation * ca;
    let pose = Pose::new(translation, rotation);
    let sq: f64 = points_a
        .iter()
        .zip(points_b)
        .map(|(a, b)| (pose.transform_point(a) - b).norm_squared())
        .sum();
    Ok((pose, (sq / n).sqrt()))
}

/// Corners-and-faces layout used for C1 registration: 6 points of a cube of
/// side `side` centered at `center`.
pub fn registration_points(center: &Vector3<f64>, side: f64) -> Vec<Vector3<f64>> {
    let h = side / 2.0;
    [
        [-h, -h, -h],
        [h, -h, -h],
        [-h, h, -h],
        [-h, -h, h],
        [h, h, h],
        [h, h, -h],
    ]
    .iter()
    .map(|p| center + Vector3::new(p[0], p[1], p[2]))
    .collect()
}

/// Reads points, one `x y z` triple per line (commas also accepted).
///
/// Blank lines and lines starting with `#` are skipped.
pub fn read_points(path: &Path) -> Result<Vec<Vector3<f64>>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_points(&text)
}

pub fn parse_points(text: &str) -> Result<Vec<Vector3<f64>>, ConfigError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect();
        match vals {
            Ok(v) if v.len() == 3 => out.push(Vector3::new(v[0], v[1], v[2])),
            _ => {
                return Err(ConfigError::Invalid(format!(
                    "line {}: expected three numbers",
                    n + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Latest berry sightings plus the last position resolved in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BerryTarget {
    pub position_c2: Option<Vector3<f64>>,
    pub position_c1: Option<Vector3<f64>>,
    pub last_known_base: Option<Vector3<f64>>,
    /// C2 has no sighting this cycle.
    pub occluded: bool,
}

impl BerryTarget {
    /// Next cycle's target: new sightings, remembered base position.
    fn carry(&self) -> Self {
        BerryTarget {
            last_known_base: self.last_known_base,
            ..Default::default()
        }
    }
}

/// Berry position in the base frame through C2:
/// `P_base = T_c1_base T_ee_c1 T_c2_ee P_c2`.
///
/// While occluded the last resolved position is held.
pub fn berry_to_base(
    target: &mut BerryTarget,
    t_ee_c1: &Pose,
    registry: &FrameRegistry,
) -> Result<Vector3<f64>, VisionError> {
    match target.position_c2 {
        Some(p) if !target.occluded => {
            let t_ee_base = registry.t_c1_base * *t_ee_c1;
            let base = (t_ee_base * registry.t_c2_ee).transform_point(&p);
            target.last_known_base = Some(base);
            Ok(base)
        }
        _ => target.last_known_base.ok_or(VisionError::NoTargetEverSeen),
    }
}

/// Berry position in the base frame through C1 directly, with the same hold
/// rule when C1 cannot see it.
pub fn berry_from_c1(
    target: &mut BerryTarget,
    registry: &FrameRegistry,
) -> Result<Vector3<f64>, VisionError> {
    match target.position_c1 {
        Some(p) => {
            let base = registry.t_c1_base.transform_point(&p);
            target.last_known_base = Some(base);
            Ok(base)
        }
        None => target.last_known_base.ok_or(VisionError::NoTargetEverSeen),
    }
}

/// When the berry is hidden from the cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionRule {
    /// C1 loses the berry when the end-effector is within this distance of
    /// the segment from C1 to the berry.
    pub footprint_radius: f64,
    /// Hide the berry from both cameras regardless of geometry.
    pub forced: bool,
}

impl Default for OcclusionRule {
    fn default() -> Self {
        OcclusionRule {
            footprint_radius: DEFAULT_FOOTPRINT_RADIUS,
            forced: false,
        }
    }
}

/// Distance from `p` to the segment `a`–`b`.
pub fn distance_to_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Emulated detection of a berry at `berry_base` with the arm at `ee_in_base`.
///
/// `truth` holds the real camera placement. C2 sees the berry only when it
/// lies in front of the camera (positive optical axis). Each available
/// sighting gets independent Gaussian noise of `noise_std` per axis.
pub fn simulate_observation<R: Rng + ?Sized>(
    berry_base: &Vector3<f64>,
    ee_in_base: &Pose,
    truth: &FrameRegistry,
    noise_std: f64,
    rule: &OcclusionRule,
    prior: &BerryTarget,
    rng: &mut R,
) -> BerryTarget {
    let mut out = prior.carry();
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let noisy = |p: Vector3<f64>, rng: &mut R| {
        if noise_std > 0.0 {
            p + Vector3::from_fn(|_, _| noise.sample(rng))
        } else {
            p
        }
    };
    if !rule.forced {
        let c1 = truth.t_c1_base.position;
        if distance_to_segment(&ee_in_base.position, &c1, berry_base) > rule.footprint_radius {
            out.position_c1 = Some(noisy(
                truth.t_c1_base.inverse().transform_point(berry_base),
                rng,
            ));
        }
        let t_c2_base = *ee_in_base * truth.t_c2_ee;
        let p_c2 = t_c2_base.inverse().transform_point(berry_base);
        if p_c2.z > 0.0 {
            out.position_c2 = Some(noisy(p_c2, rng));
        }
    }
    out.occluded = out.position_c2.is_none();
    out
}
