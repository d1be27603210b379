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
//! Staged harvesting: initial placement, fine positioning, grasp and return
//! to home.
//!
//! Stage transitions are one-way. Initial placement steers toward a standoff
//! pose in front of the berry using the eye-to-hand camera; once the
//! end-effector is within the coarse threshold, the berry is tracked through
//! the eye-in-hand camera for the rest of the attempt.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{increment, pose_error, ControlMode, GainSchedule, TaskError};
use crate::geometry::{ActuatorState, RobotGeometry, NUM_ACTUATORS};
use crate::jacobian::{jacobian, DEFAULT_SV_TOL};
use crate::kinematics::Pose;
use crate::plant::{Plant, PlantObservation};
use crate::vision::{
    berry_from_c1, berry_to_base, simulate_observation, BerryTarget, FrameRegistry, OcclusionRule,
};

/// Mid-range elongations with a 1 mm bias on one actuator per section, so
/// that no section starts exactly straight.
pub const DEFAULT_HOME_Q: [f64; NUM_ACTUATORS] =
    [0.051, 0.05, 0.05, 0.05, 0.051, 0.05, 0.05, 0.05, 0.051];

/// Why an attempt stopped early.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    StageTimeout(Stage),
    Diverged(Stage),
    TargetLost(Stage),
    GraspMissed,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::StageTimeout(s) => write!(f, "stage timeout in {s}"),
            FailureReason::Diverged(s) => write!(f, "controller diverged in {s}"),
            FailureReason::TargetLost(s) => write!(f, "berry never observed in {s}"),
            FailureReason::GraspMissed => f.write_str("berry outside grasp threshold"),
        }
    }
}

/// Active stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    InitialPlacement,
    FinePositioning,
    Grasp,
    ReturnHome,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::InitialPlacement,
        Stage::FinePositioning,
        Stage::Grasp,
        Stage::ReturnHome,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::InitialPlacement => "initial_placement",
            Stage::FinePositioning => "fine_positioning",
            Stage::Grasp => "grasp",
            Stage::ReturnHome => "return_home",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Harvest state machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarvestState {
    InitialPlacement,
    FinePositioning,
    Grasp,
    ReturnHome,
    Done,
    Failed(FailureReason),
}

impl HarvestState {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            HarvestState::InitialPlacement => Some(Stage::InitialPlacement),
            HarvestState::FinePositioning => Some(Stage::FinePositioning),
            HarvestState::Grasp => Some(Stage::Grasp),
            HarvestState::ReturnHome => Some(Stage::ReturnHome),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, HarvestState::Done | HarvestState::Failed(_))
    }

    /// Whether `next` is an allowed successor.
    pub fn can_transition_to(&self, next: &HarvestState) -> bool {
        use HarvestState::*;
        match (self, next) {
            (_, Failed(_)) => !self.is_terminal(),
            (InitialPlacement, FinePositioning)
            | (FinePositioning, Grasp)
            | (Grasp, ReturnHome)
            | (ReturnHome, Done) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperState {
    #[default]
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Close,
}

/// Stand-in for the tendon-driven gripper: the state simply follows the
/// last command.
pub fn gripper_stub(_state: GripperState, command: GripperCommand) -> GripperState {
    match command {
        GripperCommand::Open => GripperState::Open,
        GripperCommand::Close => GripperState::Closed,
    }
}

/// Where the berry estimate of a cycle came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    C1,
    C2,
    Hold,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    /// End-effector to berry distance that ends initial placement, meters.
    pub coarse_threshold: f64,
    /// Distance within which a grasp succeeds, meters.
    pub grasp_threshold: f64,
    /// Distance at which fine positioning stops, meters.
    pub fine_tolerance: f64,
    /// Pre-grasp distance short of the berry along the approach axis.
    pub standoff_distance: f64,
    pub home_q: [f64; NUM_ACTUATORS],
    pub placement_mode: ControlMode,
    pub placement_gains: GainSchedule,
    pub fine_mode: ControlMode,
    pub fine_gains: GainSchedule,
    pub placement_max_iterations: usize,
    pub fine_max_iterations: usize,
    /// Joint-space interpolation steps back to `home_q`.
    pub return_steps: usize,
    pub sv_tol: f64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            coarse_threshold: 0.06,
            grasp_threshold: 0.02,
            fine_tolerance: 0.005,
            standoff_distance: 0.05,
            home_q: DEFAULT_HOME_Q,
            placement_mode: ControlMode::FullThreeTask,
            placement_gains: GainSchedule::full_three_task(),
            fine_mode: ControlMode::PosOriPriority,
            fine_gains: GainSchedule::full_three_task().without_joint_limits(),
            placement_max_iterations: 2000,
            fine_max_iterations: 1000,
            return_steps: 40,
            sv_tol: DEFAULT_SV_TOL,
        }
    }
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.grasp_threshold > 0.0 && self.grasp_threshold < self.coarse_threshold) {
            return Err("need 0 < grasp_threshold < coarse_threshold".into());
        }
        if !(self.fine_tolerance > 0.0 && self.fine_tolerance <= self.grasp_threshold) {
            return Err("need 0 < fine_tolerance <= grasp_threshold".into());
        }
        if !(self.standoff_distance >= 0.0 && self.standoff_distance < self.coarse_threshold) {
            return Err("need 0 <= standoff_distance < coarse_threshold".into());
        }
        if self.home_q.iter().any(|v| !v.is_finite()) {
            return Err("home_q must be finite".into());
        }
        if self.return_steps == 0 {
            return Err("return_steps must be > 0".into());
        }
        self.placement_gains.validate()?;
        self.fine_gains.validate()
    }
}

/// Camera emulation for one attempt.
#[derive(Debug, Clone)]
pub struct VisionSim {
    /// Real camera placement, used to generate sightings.
    pub truth: FrameRegistry,
    /// Registered placement, used to interpret them.
    pub estimate: FrameRegistry,
    pub noise_std: f64,
    pub rule: OcclusionRule,
    /// Fine-positioning iterations `[start, start + len)` during which the
    /// berry is hidden from both cameras.
    pub forced_occlusion: Option<(usize, usize)>,
    rng: ChaCha8Rng,
}

impl VisionSim {
    pub fn new(truth: FrameRegistry, estimate: FrameRegistry, noise_std: f64, seed: u64) -> Self {
        VisionSim {
            truth,
            estimate,
            noise_std,
            rule: OcclusionRule::default(),
            forced_occlusion: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Noise-free cameras with exact registration.
    pub fn ideal(registry: FrameRegistry) -> Self {
        VisionSim::new(registry, registry, 0.0, 0)
    }

    pub fn with_forced_occlusion(mut self, start: usize, len: usize) -> Self {
        self.forced_occlusion = Some((start, len));
        self
    }

    fn observe(
        &mut self,
        berry: &Vector3<f64>,
        ee_true: &Pose,
        prior: &BerryTarget,
        forced: bool,
    ) -> BerryTarget {
        let rule = OcclusionRule {
            forced,
            ..self.rule
        };
        simulate_observation(
            berry,
            ee_true,
            &self.truth,
            self.noise_std,
            &rule,
            prior,
            &mut self.rng,
        )
    }
}

/// One logged cycle of an attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestStep {
    /// Global iteration, counting across stages.
    pub iteration: usize,
    pub stage: Stage,
    pub q: ActuatorState,
    pub observation: PlantObservation,
    pub error: TaskError,
    /// End-effector to berry-estimate distance.
    pub distance: f64,
    pub berry_estimate: Option<Vector3<f64>>,
    pub source: TargetSource,
    pub c1_visible: bool,
    pub gripper: GripperState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub iterations: usize,
    /// End-effector to berry distance (true berry) at the end of the stage.
    pub final_distance: f64,
    pub succeeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperEvent {
    pub iteration: usize,
    pub time: f64,
    pub state: GripperState,
}

/// Complete record of a harvest attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestLog {
    pub state: HarvestState,
    pub steps: Vec<HarvestStep>,
    pub stages: Vec<StageOutcome>,
    pub gripper_events: Vec<GripperEvent>,
    pub grasp_success: bool,
    /// True distance from the end-effector to the berry when fine
    /// positioning ended.
    pub fine_distance: Option<f64>,
}

impl HarvestLog {
    pub fn stage_outcome(&self, stage: Stage) -> Option<&StageOutcome> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn steps_in(&self, stage: Stage) -> impl Iterator<Item = &HarvestStep> {
        self.steps.iter().filter(move |s| s.stage == stage)
    }
}

struct Attempt<'a> {
    model: &'a RobotGeometry,
    plant: &'a mut Plant,
    vision: &'a mut VisionSim,
    cfg: &'a WorkflowConfig,
    berry: Vector3<f64>,
    log: HarvestLog,
    target: BerryTarget,
    q: ActuatorState,
    obs: PlantObservation,
    gripper: GripperState,
    iteration: usize,
}

enum StageEnd {
    Reached,
    Failed(FailureReason),
}

impl Attempt<'_> {
    fn dt(&self) -> f64 {
        self.plant.config().dt
    }

    fn true_distance(&self) -> f64 {
        (self.plant.true_pose().position - self.berry).norm()
    }

    fn record(
        &mut self,
        stage: Stage,
        error: TaskError,
        estimate: Option<Vector3<f64>>,
        source: TargetSource,
    ) {
        let distance = estimate
            .map(|b| (self.obs.pose_filtered.position - b).norm())
            .unwrap_or(f64::NAN);
        self.log.steps.push(HarvestStep {
            iteration: self.iteration,
            stage,
            q: self.q,
            observation: self.obs,
            error,
            distance,
            berry_estimate: estimate,
            source,
            c1_visible: self.target.position_c1.is_some(),
            gripper: self.gripper,
        });
    }

    fn finish_stage(&mut self, stage: Stage, iterations: usize, succeeded: bool) {
        let final_distance = self.true_distance();
        self.log.stages.push(StageOutcome {
            stage,
            iterations,
            final_distance,
            succeeded,
        });
    }

    /// Berry in the base frame for this cycle.
    fn estimate(
        &mut self,
        stage: Stage,
        stage_iter: usize,
    ) -> (Option<Vector3<f64>>, TargetSource) {
        let forced = stage == Stage::FinePositioning
            && self
                .vision
                .forced_occlusion
                .is_some_and(|(start, len)| stage_iter >= start && stage_iter < start + len);
        let ee_true = self.plant.true_pose();
        self.target = self
            .vision
            .observe(&self.berry, &ee_true, &self.target, forced);
        let registry = self.vision.estimate;
        match stage {
            Stage::InitialPlacement => {
                let source = if self.target.position_c1.is_some() {
                    TargetSource::C1
                } else {
                    TargetSource::Hold
                };
                match berry_from_c1(&mut self.target, &registry) {
                    Ok(p) => (Some(p), source),
                    Err(_) => (None, TargetSource::None),
                }
            }
            _ => {
                let source = if self.target.occluded {
                    TargetSource::Hold
                } else {
                    TargetSource::C2
                };
                // Pair the sighting with the same-cycle (unfiltered) C1 measurement.
                let t_ee_c1 = registry.ee_in_c1(&self.obs.pose_raw);
                match berry_to_base(&mut self.target, &t_ee_c1, &registry) {
                    Ok(p) => (Some(p), source),
                    Err(_) => (None, TargetSource::None),
                }
            }
        }
    }

    /// Closed loop toward a target pose built from the berry estimate each
    /// cycle, until the estimate is within `threshold` of the end-effector.
    fn servo(
        &mut self,
        stage: Stage,
        mode: ControlMode,
        gains: GainSchedule,
        max_iterations: usize,
        threshold: f64,
        desired_for: impl Fn(&Vector3<f64>) -> Pose,
    ) -> StageEnd {
        let limits = self.model.joint_limits();
        for k in 0..=max_iterations {
            let (estimate, source) = self.estimate(stage, k);
            let Some(berry) = estimate else {
                self.record(stage, TaskError::default(), None, source);
                self.finish_stage(stage, k, false);
                return StageEnd::Failed(FailureReason::TargetLost(stage));
            };
            let desired = desired_for(&berry);
            let err = pose_error(&desired, &self.obs.pose_filtered);
            self.record(stage, err, Some(berry), source);
            let distance = (self.obs.pose_filtered.position - berry).norm();
            if distance <= threshold {
                self.finish_stage(stage, k, true);
                return StageEnd::Reached;
            }
            if k == max_iterations {
                break;
            }
            let jac = match jacobian(&self.q, self.model) {
                Ok(j) => j,
                Err(_) => {
                    self.finish_stage(stage, k, false);
                    return StageEnd::Failed(FailureReason::Diverged(stage));
                }
            };
            let dq = increment(mode, &self.q, &jac, &err, &gains, &limits, self.cfg.sv_tol);
            self.q = ActuatorState::new(self.q.q + dq);
            if !self.q.is_finite() {
                self.finish_stage(stage, k + 1, false);
                return StageEnd::Failed(FailureReason::Diverged(stage));
            }
            self.obs = self.plant.apply_command(&self.q);
            self.iteration += 1;
        }
        self.finish_stage(stage, max_iterations, false);
        StageEnd::Failed(FailureReason::StageTimeout(stage))
    }
}

/// Runs one harvest attempt from `cfg.home_q`.
///
/// `approach` is the desired end-effector rotation; its Z axis is the
/// approach direction. `model` is the controller's geometry, which may differ
/// from the plant's.
pub fn run_harvest(
    berry_base_truth: &Vector3<f64>,
    approach: &Matrix3<f64>,
    model: &RobotGeometry,
    plant: &mut Plant,
    vision: &mut VisionSim,
    cfg: &WorkflowConfig,
) -> HarvestLog {
    let home = ActuatorState::new(cfg.home_q.into());
    let obs = plant.reset(&home);
    let mut run = Attempt {
        model,
        plant,
        vision,
        cfg,
        berry: *berry_base_truth,
        log: HarvestLog {
            state: HarvestState::InitialPlacement,
            steps: Vec::new(),
            stages: Vec::new(),
            gripper_events: Vec::new(),
            grasp_success: false,
            fine_distance: None,
        },
        target: BerryTarget::default(),
        q: home,
        obs,
        gripper: GripperState::Open,
        iteration: 0,
    };
    let fail = |mut run: Attempt, reason| {
        run.log.state = HarvestState::Failed(reason);
        run.log
    };

    let approach = *approach;
    let axis = approach.column(2).into_owned();
    let standoff = cfg.standoff_distance;
    if let StageEnd::Failed(r) = run.servo(
        Stage::InitialPlacement,
        cfg.placement_mode,
        cfg.placement_gains,
        cfg.placement_max_iterations,
        cfg.coarse_threshold,
        |b| Pose::new(b - axis * standoff, approach),
    ) {
        return fail(run, r);
    }

    run.log.state = HarvestState::FinePositioning;
    let frozen = run.obs.pose_filtered.rotation;
    let fine = run.servo(
        Stage::FinePositioning,
        cfg.fine_mode,
        cfg.fine_gains,
        cfg.fine_max_iterations,
        cfg.fine_tolerance,
        |b| Pose::new(*b, frozen),
    );
    run.log.fine_distance = Some(run.true_distance());
    if let StageEnd::Failed(r) = fine {
        return fail(run, r);
    }

    run.log.state = HarvestState::Grasp;
    run.gripper = gripper_stub(run.gripper, GripperCommand::Close);
    run.log.gripper_events.push(GripperEvent {
        iteration: run.iteration,
        time: run.iteration as f64 * run.dt(),
        state: run.gripper,
    });
    let distance = run.true_distance();
    run.log.grasp_success = distance <= cfg.grasp_threshold;
    let berry_est = run.target.last_known_base;
    run.record(
        Stage::Grasp,
        TaskError::default(),
        berry_est,
        TargetSource::Hold,
    );
    run.finish_stage(Stage::Grasp, 0, run.log.grasp_success);
    if !run.log.grasp_success {
        return fail(run, FailureReason::GraspMissed);
    }

    run.log.state = HarvestState::ReturnHome;
    let start = run.q;
    for k in 1..=cfg.return_steps {
        let s = k as f64 / cfg.return_steps as f64;
        run.q = ActuatorState::new(start.q + (home.q - start.q) * s);
        run.obs = run.plant.apply_command(&run.q);
        run.iteration += 1;
        run.record(
            Stage::ReturnHome,
            TaskError::default(),
            None,
            TargetSource::None,
        );
    }
    run.finish_stage(Stage::ReturnHome, cfg.return_steps, true);
    run.log.state = HarvestState::Done;
    run.log
}
