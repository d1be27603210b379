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
//! Simulated arm standing in for the hardware loop.
//!
//! The plant evaluates forward kinematics on its own (possibly perturbed)
//! geometry, saturates actuators at their physical range, adds measurement
//! noise and low-pass filters the measured pose the way the tracking camera
//! output is filtered.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    elongation_to_pressure, ActuatorState, ActuatorVector, RobotGeometry, NUM_ACTUATORS,
};
use crate::kinematics::{forward_kinematics, Pose};
use crate::so3::{exp_so3, log_so3};

/// Default filter cut-off in rad/s.
pub const DEFAULT_FILTER_CUTOFF: f64 = 10.0;

/// What the controller sees after commanding the arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantObservation {
    pub pose_filtered: Pose,
    pub pose_raw: Pose,
    /// Pressures corresponding to the commanded elongations.
    pub pressures: [f64; NUM_ACTUATORS],
    /// Commanded elongation below zero or above the actuator maximum.
    pub infeasible_flags: [bool; NUM_ACTUATORS],
}

/// Source of end-effector feedback for a control loop.
pub trait Feedback {
    /// Puts the arm at `q0` and returns the first observation.
    fn reset(&mut self, q0: &ActuatorState) -> PlantObservation;
    /// Commands `q` and returns the resulting observation.
    fn apply(&mut self, q: &ActuatorState) -> PlantObservation;
}

fn command_flags(
    q: &ActuatorState,
    geom: &RobotGeometry,
) -> ([f64; NUM_ACTUATORS], [bool; NUM_ACTUATORS]) {
    let limits = geom.joint_limits();
    let pressures = std::array::from_fn(|m| elongation_to_pressure(q[m]));
    (pressures, limits.violations(&q.q))
}

/// Noise-free feedback straight from the nominal model, without saturation.
#[derive(Debug, Clone)]
pub struct ModelFeedback {
    pub geometry: RobotGeometry,
}

impl ModelFeedback {
    pub fn new(geometry: RobotGeometry) -> Self {
        ModelFeedback { geometry }
    }
}

impl Feedback for ModelFeedback {
    fn reset(&mut self, q0: &ActuatorState) -> PlantObservation {
        self.apply(q0)
    }

    fn apply(&mut self, q: &ActuatorState) -> PlantObservation {
        let pose = forward_kinematics(q, &self.geometry);
        let (pressures, infeasible_flags) = command_flags(q, &self.geometry);
        PlantObservation {
            pose_filtered: pose,
            pose_raw: pose,
            pressures,
            infeasible_flags,
        }
    }
}

/// First-order low-pass with unit DC gain, discretized exactly for a
/// piecewise-constant input: `y += (1 - exp(-wc dt)) (x - y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPassFilter {
    coefficient: f64,
    state: Option<Vector3<f64>>,
}

impl LowPassFilter {
    pub fn new(cutoff: f64, dt: f64) -> Self {
        LowPassFilter {
            coefficient: 1.0 - (-cutoff * dt).exp(),
            state: None,
        }
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    /// Starts the filter at `x` with no transient.
    pub fn reset_to(&mut self, x: Vector3<f64>) {
        self.state = Some(x);
    }

    /// Starts the filter from rest at zero.
    pub fn reset_zero(&mut self) {
        self.state = Some(Vector3::zeros());
    }

    pub fn update(&mut self, x: Vector3<f64>) -> Vector3<f64> {
        let y = match self.state {
            Some(y) => y + self.coefficient * (x - y),
            None => x,
        };
        self.state = Some(y);
        y
    }
}

/// Low-pass on a pose: positions directly, rotations through incremental
/// rotation vectors so the output stays a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFilter {
    position: LowPassFilter,
    rotation: Option<Matrix3<f64>>,
}

impl PoseFilter {
    pub fn new(cutoff: f64, dt: f64) -> Self {
        PoseFilter {
            position: LowPassFilter::new(cutoff, dt),
            rotation: None,
        }
    }

    pub fn reset_to(&mut self, pose: &Pose) {
        self.position.reset_to(pose.position);
        self.rotation = Some(pose.rotation);
    }

    pub fn update(&mut self, raw: &Pose) -> Pose {
        let position = self.position.update(raw.position);
        let rotation = match self.rotation {
            Some(r) => {
                let increment = log_so3(&(r.transpose() * raw.rotation));
                r * exp_so3(&(increment * self.position.coefficient()))
            }
            None => raw.rotation,
        };
        self.rotation = Some(rotation);
        Pose::new(position, rotation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Geometry of the simulated arm; may differ from the controller's model.
    pub true_geometry: RobotGeometry,
    /// Multiplicative elongation error per actuator.
    #[serde(default)]
    pub length_scale_error: [f64; NUM_ACTUATORS],
    /// Standard deviation of additive position noise per axis, meters.
    #[serde(default)]
    pub position_noise_std: f64,
    /// Standard deviation of rotation noise per axis, radians.
    #[serde(default)]
    pub rotation_noise_std: f64,
    #[serde(default = "default_cutoff")]
    pub filter_cutoff: f64,
    pub dt: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_cutoff() -> f64 {
    DEFAULT_FILTER_CUTOFF
}

impl PlantConfig {
    /// Exact plant: no mismatch, no noise.
    pub fn ideal(geometry: RobotGeometry, dt: f64) -> Self {
        PlantConfig {
            true_geometry: geometry,
            length_scale_error: [0.0; NUM_ACTUATORS],
            position_noise_std: 0.0,
            rotation_noise_std: 0.0,
            filter_cutoff: DEFAULT_FILTER_CUTOFF,
            dt,
            rng_seed: 0,
        }
    }

    /// Draws each actuator's scale error uniformly from `[-magnitude, magnitude]`.
    pub fn with_random_mismatch(mut self, magnitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in &mut self.length_scale_error {
            *e = if magnitude > 0.0 {
                rng.random_range(-magnitude..=magnitude)
            } else {
                0.0
            };
        }
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.filter_cutoff > 0.0) {
            return Err("filter_cutoff must be > 0".into());
        }
        if !(self.dt > 0.0) {
            return Err("dt must be > 0".into());
        }
        if !(self.position_noise_std >= 0.0 && self.rotation_noise_std >= 0.0) {
            return Err("noise standard deviations must be >= 0".into());
        }
        let report = crate::geometry::validate_geometry(&self.true_geometry);
        if !report.is_valid() {
            return Err(format!("true_geometry: {report}"));
        }
        Ok(())
    }
}

/// Quasi-static simulated arm.
#[derive(Debug, Clone)]
pub struct Plant {
    config: PlantConfig,
    rng: ChaCha8Rng,
    filter: PoseFilter,
    elongation: ActuatorState,
}

impl Plant {
    pub fn new(config: PlantConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let filter = PoseFilter::new(config.filter_cutoff, config.dt);
        Plant {
            config,
            rng,
            filter,
            elongation: ActuatorState::zeros(),
        }
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    /// Elongations actually realized by the actuators.
    pub fn true_elongation(&self) -> &ActuatorState {
        &self.elongation
    }

    /// Noise-free pose of the simulated arm.
    pub fn true_pose(&self) -> Pose {
        forward_kinematics(&self.elongation, &self.config.true_geometry)
    }

    /// Command mapped through the scale error and saturated at `[0, max]`.
    pub fn realized(&self, q_cmd: &ActuatorState) -> ActuatorState {
        let limits = self.config.true_geometry.joint_limits();
        ActuatorState::new(ActuatorVector::from_fn(|m, _| {
            (q_cmd[m] * (1.0 + self.config.length_scale_error[m]))
                .clamp(limits.lower[m], limits.upper[m])
        }))
    }

    fn measure(&mut self) -> Pose {
        let truth = self.true_pose();
        let mut position = truth.position;
        let mut rotation = truth.rotation;
        if self.config.position_noise_std > 0.0 {
            let n = Normal::new(0.0, self.config.position_noise_std).expect("std >= 0");
            position += Vector3::from_fn(|_, _| n.sample(&mut self.rng));
        }
        if self.config.rotation_noise_std > 0.0 {
            let n = Normal::new(0.0, self.config.rotation_noise_std).expect("std >= 0");
            let w = Vector3::from_fn(|_, _| n.sample(&mut self.rng));
            rotation = exp_so3(&w) * rotation;
        }
        Pose::new(position, rotation)
    }

    fn observe(&mut self, q_cmd: &ActuatorState, reset_filter: bool) -> PlantObservation {
        self.elongation = self.realized(q_cmd);
        let raw = self.measure();
        let filtered = if reset_filter {
            self.filter.reset_to(&raw);
            raw
        } else {
            self.filter.update(&raw)
        };
        let (pressures, infeasible_flags) = command_flags(q_cmd, &self.config.true_geometry);
        PlantObservation {
            pose_filtered: filtered,
            pose_raw: raw,
            pressures,
            infeasible_flags,
        }
    }

    /// Re-seeds the noise, moves to `q0` and starts the filter there.
    pub fn reset(&mut self, q0: &ActuatorState) -> PlantObservation {
        self.rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        self.observe(q0, true)
    }

    pub fn apply_command(&mut self, q_cmd: &ActuatorState) -> PlantObservation {
        self.observe(q_cmd, false)
    }
}

impl Feedback for Plant {
    fn reset(&mut self, q0: &ActuatorState) -> PlantObservation {
        Plant::reset(self, q0)
    }

    fn apply(&mut self, q: &ActuatorState) -> PlantObservation {
        self.apply_command(q)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    fn q_mid() -> ActuatorState {
        let mut q = ActuatorState::new(ActuatorVector::repeat(0.05));
        q[0] = 0.03;
        q[4] = 0.07;
        q
    }

    #[test]
    fn ideal_plant_reports_nominal_kinematics() {
        let g = RobotGeometry::default();
        let mut plant = Plant::new(PlantConfig::ideal(g.clone(), 0.05));
        plant.reset(&ActuatorState::zeros());
        let obs = plant.apply_command(&q_mid());
        assert_eq!(obs.pose_raw, forward_kinematics(&q_mid(), &g));
        assert!(obs.infeasible_flags.iter().all(|f| !f));
    }

    #[test]
    fn negative_command_is_flagged_and_saturated() {
        let g = RobotGeometry::default();
        let mut plant = Plant::new(PlantConfig::ideal(g, 0.05));
        let mut q = q_mid();
        q[2] = -0.01;
        let obs = plant.reset(&q);
        assert!(obs.infeasible_flags[2]);
        assert!(obs.pressures[2] < 0.0);
        assert_relative_eq!(obs.pressures[2], -21.0, epsilon = 1e-9);
        assert_eq!(plant.true_elongation()[2], 0.0);
        assert_eq!(obs.infeasible_flags.iter().filter(|f| **f).count(), 1);
    }

    #[test]
    fn over_range_command_is_flagged() {
        let mut plant = Plant::new(PlantConfig::ideal(RobotGeometry::default(), 0.05));
        let mut q = q_mid();
        q[8] = 0.11;
        let obs = plant.reset(&q);
        assert!(obs.infeasible_flags[8]);
        assert_eq!(plant.true_elongation()[8], 0.10);
    }

    #[test]
    fn filter_has_unit_dc_gain() {
        let (cutoff, dt) = (10.0, 0.01);
        let mut f = LowPassFilter::new(cutoff, dt);
        f.reset_zero();
        let x = Vector3::new(0.3, -0.2, 1.0);
        let tau_steps = (1.0 / (cutoff * dt)).round() as usize;
        let mut y = Vector3::zeros();
        for _ in 0..5 * tau_steps {
            y = f.update(x);
        }
        // A first-order lag is at exp(-5) of the step after five time constants.
        let rel = (y - x).norm() / x.norm();
        assert!(rel <= (-5.0f64).exp() * (1.0 + 1e-9), "{rel}");
        for _ in 0..2 * tau_steps {
            y = f.update(x);
        }
        assert!((y - x).norm() / x.norm() < 1e-3);
    }

    #[test]
    fn filter_is_linear() {
        let mut fa = LowPassFilter::new(10.0, 0.05);
        let mut fb = LowPassFilter::new(10.0, 0.05);
        let mut fs = LowPassFilter::new(10.0, 0.05);
        for f in [&mut fa, &mut fb, &mut fs] {
            f.reset_zero();
        }
        for k in 0..200 {
            let t = k as f64 * 0.05;
            let a = Vector3::new(t.sin(), 0.5 * t, (3.0 * t).cos());
            let b = Vector3::new(-0.1 * t * t, (0.7 * t).sin(), 1.0);
            let ya = fa.update(a);
            let yb = fb.update(b);
            let ys = fs.update(a + b);
            assert!((ys - ya - yb).norm() < 1e-10);
        }
    }

    #[test]
    fn rotation_filter_converges_and_stays_orthonormal() {
        let mut f = PoseFilter::new(10.0, 0.05);
        f.reset_to(&Pose::identity());
        let target = Pose::from_rotation(crate::so3::rot_x(-1.2));
        let mut out = Pose::identity();
        for _ in 0..100 {
            out = f.update(&target);
            assert!(out.is_valid(1e-9));
        }
        assert!((out.rotation - target.rotation).norm() < 1e-9);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let mut cfg = PlantConfig::ideal(RobotGeometry::default(), 0.05);
        cfg.position_noise_std = 1e-3;
        cfg.rotation_noise_std = 1e-3;
        cfg.rng_seed = 42;
        let run = |cfg: &PlantConfig| {
            let mut p = Plant::new(cfg.clone());
            let mut out = vec![p.reset(&q_mid())];
            for k in 0..20 {
                let mut q = q_mid();
                q[k % 9] += 0.001;
                out.push(p.apply_command(&q));
            }
            out
        };
        assert_eq!(run(&cfg), run(&cfg));
        let mut other = cfg.clone();
        other.rng_seed = 43;
        let (a, b) = (run(&cfg), run(&other));
        assert_ne!(a[3].pose_raw, b[3].pose_raw);
    }

    #[test]
    fn reset_then_same_command_keeps_pose() {
        let g = RobotGeometry::default();
        let mut plant = Plant::new(PlantConfig::ideal(g, 0.05));
        let first = plant.reset(&q_mid());
        let again = plant.apply_command(&q_mid());
        assert_relative_eq!(
            first.pose_filtered.position,
            again.pose_filtered.position,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            first.pose_filtered.rotation,
            again.pose_filtered.rotation,
            epsilon = 1e-12
        );
    }

    #[test]
    fn reset_restarts_the_noise_stream() {
        let mut cfg = PlantConfig::ideal(RobotGeometry::default(), 0.05);
        cfg.position_noise_std = 5e-4;
        cfg.rng_seed = 7;
        let mut plant = Plant::new(cfg);
        let a: Vec<_> = std::iter::once(plant.reset(&q_mid()))
            .chain((0..5).map(|_| plant.apply_command(&q_mid())))
            .collect();
        let b: Vec<_> = std::iter::once(plant.reset(&q_mid()))
            .chain((0..5).map(|_| plant.apply_command(&q_mid())))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatch_is_seeded_and_bounded() {
        let cfg = PlantConfig::ideal(RobotGeometry::default(), 0.05).with_random_mismatch(0.02, 5);
        assert!(cfg.length_scale_error.iter().all(|e| e.abs() <= 0.02));
        assert!(cfg.length_scale_error.iter().any(|e| *e != 0.0));
        let again =
            PlantConfig::ideal(RobotGeometry::default(), 0.05).with_random_mismatch(0.02, 5);
        assert_eq!(cfg, again);
    }
}
