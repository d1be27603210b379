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
//! Resolved-rate control laws with task-priority redundancy resolution.
//!
//! Every law produces an actuator increment `dq` that is added to the current
//! command. Task 1 is end-effector position, task 2 orientation, task 3
//! joint-limit avoidance (descending the barrier cost [`jl_cost`]).

use std::fmt;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::JacobianError;
use crate::geometry::{
    ActuatorState, ActuatorVector, JointLimits, RobotGeometry, JOINT_LIMIT_MARGIN, NUM_ACTUATORS,
};
use crate::jacobian::{jacobian, pinv, Jacobian6x9, Matrix9, DEFAULT_SV_TOL};
use crate::kinematics::Pose;
use crate::plant::{Feedback, PlantObservation};
use crate::so3::log_so3;

/// Position and orientation error, both expressed in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskError {
    pub e_p: Vector3<f64>,
    /// Rotation vector of `R_d R_c^T`, norm in `[0, pi]`.
    pub e_zeta: Vector3<f64>,
}

impl TaskError {
    pub fn position_norm(&self) -> f64 {
        self.e_p.norm()
    }

    pub fn orientation_norm(&self) -> f64 {
        self.e_zeta.norm()
    }

    pub fn stacked(&self) -> SVector<f64, 6> {
        SVector::<f64, 6>::new(
            self.e_p.x,
            self.e_p.y,
            self.e_p.z,
            self.e_zeta.x,
            self.e_zeta.y,
            self.e_zeta.z,
        )
    }
}

pub fn pose_error(desired: &Pose, current: &Pose) -> TaskError {
    TaskError {
        e_p: desired.position - current.position,
        e_zeta: log_so3(&(desired.rotation * current.rotation.transpose())),
    }
}

/// Joint-limit barrier `H(q) = sum 1/4 (max - min)^2 / ((max - q)(q - min))`.
///
/// `q` is first clamped into the limit box shrunk by [`JOINT_LIMIT_MARGIN`].
pub fn jl_cost(q: &ActuatorState, limits: &JointLimits) -> f64 {
    let q = limits.clamp_inside(&q.q, JOINT_LIMIT_MARGIN);
    (0..NUM_ACTUATORS)
        .map(|m| {
            let (lo, hi) = (limits.lower[m], limits.upper[m]);
            0.25 * (hi - lo).powi(2) / ((hi - q[m]) * (q[m] - lo))
        })
        .sum()
}

/// Analytic gradient of [`jl_cost`] (same clamping).
pub fn jl_gradient(q: &ActuatorState, limits: &JointLimits) -> ActuatorVector {
    let q = limits.clamp_inside(&q.q, JOINT_LIMIT_MARGIN);
    ActuatorVector::from_fn(|m, _| {
        let (lo, hi) = (limits.lower[m], limits.upper[m]);
        let (a, b) = (hi - q[m], q[m] - lo);
        0.25 * (hi - lo).powi(2) * (2.0 * q[m] - lo - hi) / (a * a * b * b)
    })
}

/// Which error norm switches a joint-limit gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMetric {
    Position,
    Orientation,
}

/// Piecewise-constant joint-limit gain: `value_far` while the error norm is
/// above `switch_threshold`, `value_near` (zero) once inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimitSchedule {
    pub value_far: f64,
    #[serde(default)]
    pub value_near: f64,
    /// Meters or radians depending on `threshold_metric`.
    pub switch_threshold: f64,
    pub threshold_metric: ThresholdMetric,
}

impl JointLimitSchedule {
    /// Joint-limit avoidance disabled.
    pub fn off() -> Self {
        JointLimitSchedule {
            value_far: 0.0,
            value_near: 0.0,
            switch_threshold: 0.0,
            threshold_metric: ThresholdMetric::Position,
        }
    }

    pub fn gain(&self, err: &TaskError) -> f64 {
        let norm = match self.threshold_metric {
            ThresholdMetric::Position => err.position_norm(),
            ThresholdMetric::Orientation => err.orientation_norm(),
        };
        if norm > self.switch_threshold {
            self.value_far
        } else {
            self.value_near
        }
    }
}

/// Step gain and redundancy-resolution weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub alpha: f64,
    /// Weight of the position term in the combined law.
    #[serde(default = "one")]
    pub gamma_position: f64,
    /// Weight of the orientation term in the combined law.
    #[serde(default)]
    pub gamma_orientation: f64,
    pub gamma_jointlimit: JointLimitSchedule,
}

fn one() -> f64 {
    1.0
}

impl GainSchedule {
    /// Position with joint-limit avoidance: alpha 0.074, gamma -0.01 beyond 30 mm.
    pub fn position_jl() -> Self {
        GainSchedule {
            alpha: 0.074,
            gamma_position: 1.0,
            gamma_orientation: 0.0,
            gamma_jointlimit: JointLimitSchedule {
                value_far: -0.01,
                value_near: 0.0,
                switch_threshold: 0.030,
                threshold_metric: ThresholdMetric::Position,
            },
        }
    }

    /// Orientation with joint-limit avoidance: alpha 0.05, gamma -0.005 beyond 30 degrees.
    pub fn orientation_jl() -> Self {
        GainSchedule {
            alpha: 0.05,
            gamma_position: 0.0,
            gamma_orientation: 1.0,
            gamma_jointlimit: JointLimitSchedule {
                value_far: -0.005,
                value_near: 0.0,
                switch_threshold: 30f64.to_radians(),
                threshold_metric: ThresholdMetric::Orientation,
            },
        }
    }

    /// Combined law: alpha 0.05, position weight 1, orientation weight 0.1,
    /// joint-limit gain -5e-5 beyond 50 mm.
    pub fn full_three_task() -> Self {
        GainSchedule {
            alpha: 0.05,
            gamma_position: 1.0,
            gamma_orientation: 0.1,
            gamma_jointlimit: JointLimitSchedule {
                value_far: -5e-5,
                value_near: 0.0,
                switch_threshold: 0.050,
                threshold_metric: ThresholdMetric::Position,
            },
        }
    }

    /// Plain resolved rate on the stacked pose error.
    pub fn conventional() -> Self {
        GainSchedule {
            alpha: 0.05,
            gamma_position: 1.0,
            gamma_orientation: 1.0,
            gamma_jointlimit: JointLimitSchedule::off(),
        }
    }

    /// Default gains for each mode.
    pub fn default_for(mode: ControlMode) -> Self {
        match mode {
            ControlMode::ConventionalRR => Self::conventional(),
            ControlMode::PositionWithJL => Self::position_jl(),
            ControlMode::OrientationWithJL => Self::orientation_jl(),
            ControlMode::PosOriPriority => GainSchedule {
                gamma_jointlimit: JointLimitSchedule::off(),
                ..Self::full_three_task()
            },
            ControlMode::FullThreeTask => Self::full_three_task(),
        }
    }

    /// Same gains with joint-limit avoidance disabled.
    pub fn without_joint_limits(self) -> Self {
        GainSchedule {
            gamma_jointlimit: JointLimitSchedule::off(),
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0) {
            return Err(format!("alpha must be > 0, got {}", self.alpha));
        }
        if self.gamma_jointlimit.value_near != 0.0 {
            return Err("gamma_jointlimit.value_near must be 0".into());
        }
        Ok(())
    }
}

/// Control law selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlMode {
    /// Pseudoinverse of the stacked 6x9 Jacobian, no redundancy resolution.
    ConventionalRR,
    /// Position, with joint-limit avoidance in its null space.
    PositionWithJL,
    /// Orientation, with joint-limit avoidance in its null space.
    OrientationWithJL,
    /// Position over orientation (the combined law with the joint-limit gain off).
    PosOriPriority,
    /// Position over orientation over joint-limit avoidance.
    FullThreeTask,
}

impl ControlMode {
    pub const ALL: [ControlMode; 5] = [
        ControlMode::ConventionalRR,
        ControlMode::PositionWithJL,
        ControlMode::OrientationWithJL,
        ControlMode::PosOriPriority,
        ControlMode::FullThreeTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControlMode::ConventionalRR => "ConventionalRR",
            ControlMode::PositionWithJL => "PositionWithJL",
            ControlMode::OrientationWithJL => "OrientationWithJL",
            ControlMode::PosOriPriority => "PosOriPriority",
            ControlMode::FullThreeTask => "FullThreeTask",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(name))
    }

    pub fn controls_position(self) -> bool {
        !matches!(self, ControlMode::OrientationWithJL)
    }

    pub fn controls_orientation(self) -> bool {
        !matches!(self, ControlMode::PositionWithJL)
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Control period in seconds; used by the plant filter and for logging.
    pub dt: f64,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    pub max_iterations: usize,
    pub joint_limits: JointLimits,
    pub mode: ControlMode,
    pub sv_tol: f64,
}

impl ControllerConfig {
    /// 0.8 mm / 0.6 degree tolerances, 3000 iterations, 20 Hz.
    pub fn new(mode: ControlMode, joint_limits: JointLimits) -> Self {
        ControllerConfig {
            dt: 0.05,
            position_tolerance: 0.8e-3,
            orientation_tolerance: 0.6f64.to_radians(),
            max_iterations: 3000,
            joint_limits,
            mode,
            sv_tol: DEFAULT_SV_TOL,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err("dt must be > 0".into());
        }
        if !(self.position_tolerance > 0.0 && self.orientation_tolerance > 0.0) {
            return Err("tolerances must be > 0".into());
        }
        if !self.joint_limits.is_valid() {
            return Err("joint limits must satisfy lower < upper".into());
        }
        Ok(())
    }

    /// True when every error component the mode controls is within tolerance.
    pub fn satisfied(&self, err: &TaskError) -> bool {
        let pos_ok =
            !self.mode.controls_position() || err.position_norm() < self.position_tolerance;
        let ori_ok = !self.mode.controls_orientation()
            || err.orientation_norm() < self.orientation_tolerance;
        pos_ok && ori_ok
    }

    /// Error normalized by the tolerances of the controlled components.
    pub fn error_metric(&self, err: &TaskError) -> f64 {
        let mut metric = 0.0;
        if self.mode.controls_position() {
            metric += err.position_norm() / self.position_tolerance;
        }
        if self.mode.controls_orientation() {
            metric += err.orientation_norm() / self.orientation_tolerance;
        }
        metric
    }
}

/// Largest share of an actuator's remaining room (toward the bound it is
/// moving to) that the avoidance term may use in one step.
pub const AVOIDANCE_STEP_FRACTION: f64 = 0.5;

/// Scales the joint-limit increment `avoid` so that, starting from `q`
/// plus the task increment `task`, no actuator moves more than
/// [`AVOIDANCE_STEP_FRACTION`] of its distance to the bound it is heading
/// toward. A scalar factor keeps the term inside the task null space.
///
/// The barrier gradient grows like the inverse square of the distance to a
/// bound, so an unscaled step near a bound can jump past the opposite one.
pub fn limit_avoidance_step(
    q: &ActuatorState,
    task: &ActuatorVector,
    avoid: &ActuatorVector,
    limits: &JointLimits,
) -> ActuatorVector {
    let mut scale: f64 = 1.0;
    for m in 0..NUM_ACTUATORS {
        let next = q[m] + task[m];
        let d = avoid[m];
        if d == 0.0 {
            continue;
        }
        let room = if d > 0.0 {
            limits.upper[m] - next
        } else {
            next - limits.lower[m]
        };
        let allowed = AVOIDANCE_STEP_FRACTION * room.max(0.0);
        if d.abs() > allowed {
            scale = scale.min(allowed / d.abs());
        }
    }
    if scale.is_finite() {
        avoid * scale
    } else {
        ActuatorVector::zeros()
    }
}

/// Increment `dq = alpha J^+ [e_p; e_zeta]`.
///
/// The `1/dt` of the rate and the `dt` of the integration cancel, so the
/// increment does not depend on the control period.
pub fn conventional_increment(
    jac: &Jacobian6x9,
    err: &TaskError,
    gains: &GainSchedule,
    sv_tol: f64,
) -> ActuatorVector {
    gains.alpha * pinv(&jac.stacked(), sv_tol) * err.stacked()
}

/// `dq = alpha (Jv^+ e_p + gamma(|e_p|) (I - Jv^+ Jv) grad H)`.
pub fn position_jl_increment(
    q: &ActuatorState,
    jac: &Jacobian6x9,
    err: &TaskError,
    gains: &GainSchedule,
    limits: &JointLimits,
    sv_tol: f64,
) -> ActuatorVector {
    let jv_pinv = pinv(&jac.jv, sv_tol);
    let task = gains.alpha * (jv_pinv * err.e_p);
    let gamma = gains.gamma_jointlimit.gain(err);
    if gamma == 0.0 {
        return task;
    }
    let projector = Matrix9::identity() - jv_pinv * jac.jv;
    let avoid = gains.alpha * gamma * projector * jl_gradient(q, limits);
    task + limit_avoidance_step(q, &task, &avoid, limits)
}

/// `dq = alpha (Jw^+ e_zeta + gamma(|e_zeta|) (I - Jw^+ Jw) grad H)`.
pub fn orientation_jl_increment(
    q: &ActuatorState,
    jac: &Jacobian6x9,
    err: &TaskError,
    gains: &GainSchedule,
    limits: &JointLimits,
    sv_tol: f64,
) -> ActuatorVector {
    let jw_pinv = pinv(&jac.jw, sv_tol);
    let task = gains.alpha * (jw_pinv * err.e_zeta);
    let gamma = gains.gamma_jointlimit.gain(err);
    if gamma == 0.0 {
        return task;
    }
    let projector = Matrix9::identity() - jw_pinv * jac.jw;
    let avoid = gains.alpha * gamma * projector * jl_gradient(q, limits);
    task + limit_avoidance_step(q, &task, &avoid, limits)
}

/// Three-task law:
/// `dq = alpha [g6 Jv^+ e_p + g4 Jt^+ (e_zeta - Jw Jv^+ e_p) + g5 (I - Jv^+ Jv - Jt^+ Jt) grad H]`
/// with `Jt = Jw (I - Jv^+ Jv)`.
pub fn full_increment(
    q: &ActuatorState,
    jac: &Jacobian6x9,
    err: &TaskError,
    gains: &GainSchedule,
    limits: &JointLimits,
    sv_tol: f64,
) -> ActuatorVector {
    let jv_pinv = pinv(&jac.jv, sv_tol);
    let position_rate = jv_pinv * err.e_p;
    let position_null = Matrix9::identity() - jv_pinv * jac.jv;
    let jt = jac.jw * position_null;
    let jt_pinv = pinv(&jt, sv_tol);
    let task = gains.alpha
        * (gains.gamma_position * position_rate
            + gains.gamma_orientation * jt_pinv * (err.e_zeta - jac.jw * position_rate));
    let gamma = gains.gamma_jointlimit.gain(err);
    if gamma == 0.0 {
        return task;
    }
    let projector = position_null - jt_pinv * jt;
    let avoid = gains.alpha * gamma * projector * jl_gradient(q, limits);
    task + limit_avoidance_step(q, &task, &avoid, limits)
}

/// Increment for `mode`, given a Jacobian and error.
pub fn increment(
    mode: ControlMode,
    q: &ActuatorState,
    jac: &Jacobian6x9,
    err: &TaskError,
    gains: &GainSchedule,
    limits: &JointLimits,
    sv_tol: f64,
) -> ActuatorVector {
    match mode {
        ControlMode::ConventionalRR => conventional_increment(jac, err, gains, sv_tol),
        ControlMode::PositionWithJL => position_jl_increment(q, jac, err, gains, limits, sv_tol),
        ControlMode::OrientationWithJL => {
            orientation_jl_increment(q, jac, err, gains, limits, sv_tol)
        }
        ControlMode::PosOriPriority => {
            let gains = gains.without_joint_limits();
            full_increment(q, jac, err, &gains, limits, sv_tol)
        }
        ControlMode::FullThreeTask => full_increment(q, jac, err, gains, limits, sv_tol),
    }
}

/// One resolved-rate step: the next command for `mode`, using the model
/// Jacobian at `q` and the measured pose `current`.
pub fn step(
    model: &RobotGeometry,
    q: &ActuatorState,
    desired: &Pose,
    current: &Pose,
    gains: &GainSchedule,
    cfg: &ControllerConfig,
) -> Result<ActuatorState, JacobianError> {
    let jac = jacobian(q, model)?;
    let err = pose_error(desired, current);
    let dq = increment(
        cfg.mode,
        q,
        &jac,
        &err,
        gains,
        &cfg.joint_limits,
        cfg.sv_tol,
    );
    Ok(ActuatorState::new(q.q + dq))
}

/// Resolved-rate step on the stacked pose error. Infeasible results are returned as-is.
pub fn step_conventional(
    model: &RobotGeometry,
    q: &ActuatorState,
    desired: &Pose,
    current: &Pose,
    gains: &GainSchedule,
    cfg: &ControllerConfig,
) -> Result<ActuatorState, JacobianError> {
    let cfg = ControllerConfig {
        mode: ControlMode::ConventionalRR,
        ..*cfg
    };
    step(model, q, desired, current, gains, &cfg)
}

pub fn step_position_jl(
    model: &RobotGeometry,
    q: &ActuatorState,
    desired_position: &Vector3<f64>,
    current: &Pose,
    gains: &GainSchedule,
    cfg: &ControllerConfig,
) -> Result<ActuatorState, JacobianError> {
    let desired = Pose::new(*desired_position, current.rotation);
    let cfg = ControllerConfig {
        mode: ControlMode::PositionWithJL,
        ..*cfg
    };
    step(model, q, &desired, current, gains, &cfg)
}

pub fn step_orientation_jl(
    model: &RobotGeometry,
    q: &ActuatorState,
    desired_rotation: &nalgebra::Matrix3<f64>,
    current: &Pose,
    gains: &GainSchedule,
    cfg: &ControllerConfig,
) -> Result<ActuatorState, JacobianError> {
    let desired = Pose::new(current.position, *desired_rotation);
    let cfg = ControllerConfig {
        mode: ControlMode::OrientationWithJL,
        ..*cfg
    };
    step(model, q, &desired, current, gains, &cfg)
}

pub fn step_full(
    model: &RobotGeometry,
    q: &ActuatorState,
    desired: &Pose,
    current: &Pose,
    gains: &GainSchedule,
    cfg: &ControllerConfig,
) -> Result<ActuatorState, JacobianError> {
    let cfg = ControllerConfig {
        mode: ControlMode::FullThreeTask,
        ..*cfg
    };
    step(model, q, desired, current, gains, &cfg)
}

/// One logged control iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    /// Command applied to reach this state.
    pub q: ActuatorState,
    pub pressures: [f64; NUM_ACTUATORS],
    pub infeasible: [bool; NUM_ACTUATORS],
    /// Measured (filtered) end-effector pose.
    pub pose: Pose,
    pub error: TaskError,
    /// Joint-limit gain in effect when this state was commanded.
    pub jl_gain: f64,
}

impl StepRecord {
    fn new(
        iteration: usize,
        q: ActuatorState,
        obs: &PlantObservation,
        error: TaskError,
        jl_gain: f64,
    ) -> Self {
        StepRecord {
            iteration,
            q,
            pressures: obs.pressures,
            infeasible: obs.infeasible_flags,
            pose: obs.pose_filtered,
            error,
            jl_gain,
        }
    }
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    Diverged,
}

/// Full per-step history of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: ControlMode,
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
}

impl Trajectory {
    /// Control iterations performed (the first record is the initial state).
    pub fn iterations(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn last(&self) -> &StepRecord {
        self.steps
            .last()
            .expect("trajectory always holds the initial state")
    }

    pub fn final_error(&self) -> TaskError {
        self.last().error
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// True when any commanded actuator left its limits at any step.
    pub fn any_infeasible(&self) -> bool {
        self.steps.iter().any(|s| s.infeasible.iter().any(|f| *f))
    }

    pub fn any_negative_pressure(&self) -> bool {
        self.steps
            .iter()
            .any(|s| s.pressures.iter().any(|p| *p < 0.0))
    }

    /// First iteration whose error metric satisfies `pred`.
    pub fn first_iteration_where(&self, pred: impl Fn(&TaskError) -> bool) -> Option<usize> {
        self.steps
            .iter()
            .find(|s| pred(&s.error))
            .map(|s| s.iteration)
    }
}

/// Failures of [`solve`]; both carry the trajectory up to the failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("{} diverged after {} iterations", .0.mode, .0.iterations())]
    DivergenceDetected(Box<Trajectory>),
    #[error("jacobian unavailable at iteration {iteration}: {source}")]
    Singular {
        iteration: usize,
        source: JacobianError,
        trajectory: Box<Trajectory>,
    },
}

impl SolveError {
    pub fn trajectory(&self) -> &Trajectory {
        match self {
            SolveError::DivergenceDetected(t) => t,
            SolveError::Singular { trajectory, .. } => trajectory,
        }
    }
}

/// Error growth factor and persistence that count as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_STEPS: usize = 50;

/// Closed-loop resolved-rate solve.
///
/// Each iteration reads the current pose from `feedback`, stops if the
/// controlled errors are within tolerance, and otherwise commands the next
/// actuator state.
pub fn solve(
    q0: &ActuatorState,
    desired: &Pose,
    model: &RobotGeometry,
    gains: &GainSchedule,
    cfg: &ControllerConfig,
    feedback: &mut dyn Feedback,
) -> Result<Trajectory, SolveError> {
    let mut q = *q0;
    let obs = feedback.reset(&q);
    let mut err = pose_error(desired, &obs.pose_filtered);
    let initial_metric = cfg.error_metric(&err);
    let mut traj = Trajectory {
        mode: cfg.mode,
        steps: vec![StepRecord::new(0, q, &obs, err, 0.0)],
        termination: Termination::MaxIterations,
    };
    let mut growth_run = 0;
    for iteration in 1..=cfg.max_iterations {
        if cfg.satisfied(&err) {
            traj.termination = Termination::Converged;
            return Ok(traj);
        }
        let jac = match jacobian(&q, model) {
            Ok(j) => j,
            Err(source) => {
                traj.termination = Termination::Diverged;
                return Err(SolveError::Singular {
                    iteration,
                    source,
                    trajectory: Box::new(traj),
                });
            }
        };
        let jl_gain = match cfg.mode {
            ControlMode::ConventionalRR | ControlMode::PosOriPriority => 0.0,
            _ => gains.gamma_jointlimit.gain(&err),
        };
        let dq = increment(
            cfg.mode,
            &q,
            &jac,
            &err,
            gains,
            &cfg.joint_limits,
            cfg.sv_tol,
        );
        q = ActuatorState::new(q.q + dq);
        let obs = feedback.apply(&q);
        err = pose_error(desired, &obs.pose_filtered);
        traj.steps
            .push(StepRecord::new(iteration, q, &obs, err, jl_gain));

        let metric = cfg.error_metric(&err);
        if !q.is_finite() || !metric.is_finite() {
            traj.termination = Termination::Diverged;
            return Err(SolveError::DivergenceDetected(Box::new(traj)));
        }
        if metric > DIVERGENCE_FACTOR * initial_metric {
            growth_run += 1;
            if growth_run >= DIVERGENCE_STEPS {
                traj.termination = Termination::Diverged;
                return Err(SolveError::DivergenceDetected(Box::new(traj)));
            }
        } else {
            growth_run = 0;
        }
    }
    if cfg.satisfied(&err) {
        traj.termination = Termination::Converged;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::jacobian::pinv;
    use crate::kinematics::forward_kinematics;
    use crate::plant::ModelFeedback;
    use crate::so3::rot_x;

    fn geom() -> RobotGeometry {
        RobotGeometry::default()
    }

    fn bent_mid() -> ActuatorState {
        let mut q = ActuatorState::new(ActuatorVector::from_element(0.05));
        q[0] += 0.004;
        q[4] -= 0.003;
        q[8] += 0.005;
        q
    }

    fn err(e_p: Vector3<f64>, e_zeta: Vector3<f64>) -> TaskError {
        TaskError { e_p, e_zeta }
    }

    #[test]
    fn pose_error_examples() {
        let a = Pose::new(Vector3::new(0.1, 0.2, 0.3), rot_x(0.3));
        let e = pose_error(&a, &a);
        assert_eq!(e.position_norm(), 0.0);
        assert!(e.orientation_norm() < 1e-15);

        let b = Pose::from_translation(Vector3::new(0.01, 0.0, 0.0));
        let e = pose_error(&b, &Pose::identity());
        assert_eq!(e.e_p, Vector3::new(0.01, 0.0, 0.0));
        assert_eq!(e.e_zeta, Vector3::zeros());

        let d = Pose::from_rotation(rot_x(-150f64.to_radians()));
        let e = pose_error(&d, &Pose::identity());
        assert_relative_eq!(
            e.e_zeta,
            Vector3::new(-150f64.to_radians(), 0.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn jl_cost_minimum_at_midpoint() {
        let limits = geom().joint_limits();
        let q = ActuatorState::new(limits.midpoint());
        assert_relative_eq!(jl_cost(&q, &limits), 9.0, epsilon = 1e-12);
        assert!(jl_gradient(&q, &limits).norm() < 1e-9);
    }

    #[test]
    fn jl_cost_near_limit() {
        let limits = geom().joint_limits();
        let mut q = ActuatorState::new(limits.midpoint());
        q[3] = 1e-4;
        let term = jl_cost(&q, &limits) - 8.0;
        let expected = 0.25 * 0.1f64.powi(2) / ((0.1 - 1e-4) * 1e-4);
        assert_relative_eq!(term, expected, max_relative = 1e-12);
        assert!((term - 250.25).abs() < 0.01);
    }

    #[test]
    fn jl_cost_clamps_outside_box() {
        let limits = geom().joint_limits();
        let mut q = ActuatorState::new(limits.midpoint());
        q[0] = -0.2;
        let h = jl_cost(&q, &limits);
        assert!(h.is_finite() && h > 1e3);
        assert!(jl_gradient(&q, &limits)[0] < 0.0);
    }

    #[test]
    fn schedule_switches_strictly_above_threshold() {
        let g = GainSchedule::position_jl();
        let near = err(Vector3::new(0.02, 0.0, 0.0), Vector3::zeros());
        let far = err(Vector3::new(0.031, 0.0, 0.0), Vector3::zeros());
        assert_eq!(g.gamma_jointlimit.gain(&near), 0.0);
        assert_eq!(g.gamma_jointlimit.gain(&far), -0.01);
        let o = GainSchedule::orientation_jl();
        let far = err(Vector3::zeros(), Vector3::new(0.0, 31f64.to_radians(), 0.0));
        assert_eq!(o.gamma_jointlimit.gain(&far), -0.005);
    }

    #[test]
    fn default_gains() {
        let f = GainSchedule::full_three_task();
        assert_eq!(
            (f.alpha, f.gamma_position, f.gamma_orientation),
            (0.05, 1.0, 0.1)
        );
        assert_eq!(f.gamma_jointlimit.value_far, -5e-5);
        assert_eq!(f.gamma_jointlimit.switch_threshold, 0.05);
        assert_eq!(GainSchedule::position_jl().alpha, 0.074);
        assert!(f.validate().is_ok());
        let bad = GainSchedule { alpha: 0.0, ..f };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_error_leaves_q_unchanged() {
        let g = geom();
        let q = bent_mid();
        let here = forward_kinematics(&q, &g);
        for mode in ControlMode::ALL {
            let cfg = ControllerConfig::new(mode, g.joint_limits());
            let gains = GainSchedule::default_for(mode);
            let next = step(&g, &q, &here, &here, &gains, &cfg).unwrap();
            assert!((next.q - q.q).norm() < 1e-15, "{mode}");
        }
    }

    #[test]
    fn conventional_linear_in_alpha() {
        let g = geom();
        let q = bent_mid();
        let here = forward_kinematics(&q, &g);
        let target = Pose::new(
            here.position + Vector3::new(0.0, 0.01, -0.01),
            rot_x(0.1) * here.rotation,
        );
        let cfg = ControllerConfig::new(ControlMode::ConventionalRR, g.joint_limits());
        let g1 = GainSchedule::conventional();
        let g2 = GainSchedule {
            alpha: 2.0 * g1.alpha,
            ..g1
        };
        let d1 = step_conventional(&g, &q, &target, &here, &g1, &cfg)
            .unwrap()
            .q
            - q.q;
        let d2 = step_conventional(&g, &q, &target, &here, &g2, &cfg)
            .unwrap()
            .q
            - q.q;
        assert_relative_eq!(d2, d1 * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn single_step_reduces_error() {
        let g = geom();
        let q = bent_mid();
        let here = forward_kinematics(&q, &g);
        let target = here.position + Vector3::new(0.0, 0.0, 0.01);
        let cfg = ControllerConfig::new(ControlMode::PositionWithJL, g.joint_limits());
        let next =
            step_position_jl(&g, &q, &target, &here, &GainSchedule::position_jl(), &cfg).unwrap();
        let after = forward_kinematics(&next, &g).position;
        assert!((target - after).norm() < 0.01);
    }

    #[test]
    fn joint_limit_term_invisible_to_position() {
        let g = geom();
        let q = bent_mid();
        let jac = jacobian(&q, &g).unwrap();
        let limits = g.joint_limits();
        let e = err(
            Vector3::new(0.05, -0.03, 0.02),
            Vector3::new(0.2, 0.1, -0.3),
        );
        let with = position_jl_increment(
            &q,
            &jac,
            &e,
            &GainSchedule::position_jl(),
            &limits,
            DEFAULT_SV_TOL,
        );
        let without = position_jl_increment(
            &q,
            &jac,
            &e,
            &GainSchedule::position_jl().without_joint_limits(),
            &limits,
            DEFAULT_SV_TOL,
        );
        assert!((with - without).norm() > 0.0);
        let (a, b) = (jac.jv * with, jac.jv * without);
        assert!((a - b).norm() <= 1e-8 * b.norm());
    }

    #[test]
    fn joint_limit_term_invisible_to_orientation() {
        let g = geom();
        let q = bent_mid();
        let jac = jacobian(&q, &g).unwrap();
        let limits = g.joint_limits();
        let e = err(Vector3::zeros(), Vector3::new(1.0, 0.2, -0.1));
        let gains = GainSchedule::orientation_jl();
        assert_eq!(gains.gamma_jointlimit.gain(&e), -0.005);
        let with = orientation_jl_increment(&q, &jac, &e, &gains, &limits, DEFAULT_SV_TOL);
        let without = orientation_jl_increment(
            &q,
            &jac,
            &e,
            &gains.without_joint_limits(),
            &limits,
            DEFAULT_SV_TOL,
        );
        let (a, b) = (jac.jw * with, jac.jw * without);
        assert!((a - b).norm() <= 1e-8 * b.norm());
    }

    #[test]
    fn full_law_preserves_position_rate() {
        let g = geom();
        let q = bent_mid();
        let jac = jacobian(&q, &g).unwrap();
        let limits = g.joint_limits();
        let e = err(
            Vector3::new(0.08, 0.01, -0.02),
            Vector3::new(0.3, -0.2, 0.1),
        );
        let gains = GainSchedule::full_three_task();
        let full = full_increment(&q, &jac, &e, &gains, &limits, DEFAULT_SV_TOL);
        let position_only = pinv(&jac.jv, DEFAULT_SV_TOL) * e.e_p;
        let expected = jac.jv * position_only * (gains.alpha * gains.gamma_position);
        assert!((jac.jv * full - expected).norm() <= 1e-8 * expected.norm());
    }

    #[test]
    fn schedule_off_removes_avoidance() {
        let g = geom();
        let limits = g.joint_limits();
        let mut q = bent_mid();
        q[2] = 0.097;
        let jac = jacobian(&q, &g).unwrap();
        let e = err(Vector3::new(0.02, 0.0, 0.0), Vector3::zeros());
        let gains = GainSchedule::position_jl();
        let a = position_jl_increment(&q, &jac, &e, &gains, &limits, DEFAULT_SV_TOL);
        let b = position_jl_increment(
            &q,
            &jac,
            &e,
            &gains.without_joint_limits(),
            &limits,
            DEFAULT_SV_TOL,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn avoidance_step_respects_room() {
        let limits = geom().joint_limits();
        let mut q = ActuatorState::new(limits.midpoint());
        q[2] = 0.098;
        let task = ActuatorVector::zeros();
        let mut avoid = ActuatorVector::zeros();
        avoid[2] = -0.5;
        let limited = limit_avoidance_step(&q, &task, &avoid, &limits);
        assert_relative_eq!(limited[2], -0.5 * 0.098, epsilon = 1e-15);
        avoid[2] = 1e-4;
        let limited = limit_avoidance_step(&q, &task, &avoid, &limits);
        assert_relative_eq!(limited[2], 1e-4, epsilon = 1e-18);
    }

    #[test]
    fn solve_at_target_takes_no_steps() {
        let g = geom();
        let q0 = bent_mid();
        let desired = forward_kinematics(&q0, &g);
        let cfg = ControllerConfig::new(ControlMode::FullThreeTask, g.joint_limits());
        let mut fb = ModelFeedback::new(g.clone());
        let t = solve(
            &q0,
            &desired,
            &g,
            &GainSchedule::full_three_task(),
            &cfg,
            &mut fb,
        )
        .unwrap();
        assert_eq!(t.iterations(), 0);
        assert!(t.converged());
    }

    #[test]
    fn solve_reaches_position_target_feasibly() {
        let g = geom();
        let q0 = bent_mid();
        let mut qt = q0;
        qt[1] = 0.08;
        qt[5] = 0.02;
        let desired = forward_kinematics(&qt, &g);
        let cfg = ControllerConfig::new(ControlMode::PositionWithJL, g.joint_limits());
        let mut fb = ModelFeedback::new(g.clone());
        let t = solve(
            &q0,
            &desired,
            &g,
            &GainSchedule::position_jl(),
            &cfg,
            &mut fb,
        )
        .unwrap();
        assert!(t.converged());
        assert!(t.final_error().position_norm() < cfg.position_tolerance);
        assert!(!t.any_negative_pressure());
        assert_eq!(t.steps.len(), t.iterations() + 1);
    }

    #[test]
    fn straight_start_is_singular() {
        let g = geom();
        let q0 = ActuatorState::zeros();
        let desired = Pose::from_translation(Vector3::new(0.1, 0.0, 0.5));
        let cfg = ControllerConfig::new(ControlMode::PositionWithJL, g.joint_limits());
        let mut fb = ModelFeedback::new(g.clone());
        let r = solve(
            &q0,
            &desired,
            &g,
            &GainSchedule::position_jl(),
            &cfg,
            &mut fb,
        );
        assert!(matches!(r, Err(SolveError::Singular { iteration: 1, .. })));
    }

    struct Drifting {
        model: ModelFeedback,
        offset: f64,
    }

    impl Feedback for Drifting {
        fn reset(&mut self, q0: &ActuatorState) -> PlantObservation {
            self.model.reset(q0)
        }

        fn apply(&mut self, q: &ActuatorState) -> PlantObservation {
            self.offset += 0.01;
            let mut obs = self.model.apply(q);
            obs.pose_filtered.position.x += self.offset;
            obs.pose_raw = obs.pose_filtered;
            obs
        }
    }

    #[test]
    fn persistent_error_growth_is_divergence() {
        let g = geom();
        let q0 = bent_mid();
        let here = forward_kinematics(&q0, &g);
        let desired = Pose::from_translation(here.position + Vector3::new(0.0, 0.0, -0.01));
        let cfg = ControllerConfig::new(ControlMode::PositionWithJL, g.joint_limits());
        let mut fb = Drifting {
            model: ModelFeedback::new(g.clone()),
            offset: 0.0,
        };
        match solve(
            &q0,
            &desired,
            &g,
            &GainSchedule::position_jl(),
            &cfg,
            &mut fb,
        ) {
            Err(SolveError::DivergenceDetected(t)) => {
                assert_eq!(t.termination, Termination::Diverged);
                assert!(t.iterations() < cfg.max_iterations);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ControlMode::ALL {
            assert_eq!(ControlMode::from_name(m.name()), Some(m));
        }
        assert_eq!(
            ControlMode::from_name("fullthreetask"),
            Some(ControlMode::FullThreeTask)
        );
        assert_eq!(ControlMode::from_name("nope"), None);
    }
}
