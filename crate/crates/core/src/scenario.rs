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
//! Scenario files, batch runners and reports.
//!
//! A scenario is one JSON file naming the geometry, the controller runs to
//! execute, the plant and the targets (or berries for a harvest). Running it
//! produces a per-step CSV log and a JSON summary; both are deterministic for
//! a given seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::{
    solve, ControlMode, ControllerConfig, GainSchedule, SolveError, Termination, Trajectory,
};
use crate::error::ConfigError;
use crate::geometry::{ActuatorState, RobotGeometry, NUM_ACTUATORS};
use crate::jacobian::DEFAULT_SV_TOL;
use crate::kinematics::{forward_kinematics, Pose};
use crate::plant::{Feedback, ModelFeedback, Plant, PlantConfig, DEFAULT_FILTER_CUTOFF};
use crate::so3::{log_so3, rot_x, rot_y, rot_z};
use crate::vision::{registration_points, FrameRegistry};
use crate::workflow::{
    run_harvest, HarvestLog, HarvestState, StageOutcome, VisionSim, WorkflowConfig, DEFAULT_HOME_Q,
};

/// Loop settings shared by every run of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSettings {
    pub dt: f64,
    pub position_tolerance: f64,
    pub orientation_tolerance_deg: f64,
    pub max_iterations: usize,
    pub sv_tol: f64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        ControllerSettings {
            dt: 0.05,
            position_tolerance: 0.8e-3,
            orientation_tolerance_deg: 0.6,
            max_iterations: 3000,
            sv_tol: DEFAULT_SV_TOL,
        }
    }
}

/// What closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    /// Simulated arm: saturation, mismatch, noise and filtering.
    #[default]
    Plant,
    /// Exact nominal model without saturation.
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSettings {
    pub feedback: FeedbackKind,
    /// Per-actuator elongation scale error drawn from `[-mismatch, mismatch]`.
    pub mismatch: f64,
    pub position_noise_std: f64,
    pub rotation_noise_std: f64,
    pub filter_cutoff: f64,
}

impl Default for PlantSettings {
    fn default() -> Self {
        PlantSettings {
            feedback: FeedbackKind::Plant,
            mismatch: 0.0,
            position_noise_std: 0.0,
            rotation_noise_std: 0.0,
            filter_cutoff: DEFAULT_FILTER_CUTOFF,
        }
    }
}

/// One controller variant to run on every target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub mode: ControlMode,
    /// Defaults to [`GainSchedule::default_for`] of `mode`.
    #[serde(default)]
    pub gains: Option<GainSchedule>,
    /// Set false to switch joint-limit avoidance off.
    #[serde(default = "yes")]
    pub joint_limits: bool,
}

fn yes() -> bool {
    true
}

impl RunSpec {
    pub fn new(mode: ControlMode) -> Self {
        RunSpec {
            label: None,
            mode,
            gains: None,
            joint_limits: true,
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.mode.name().to_string())
    }

    pub fn resolved_gains(&self) -> GainSchedule {
        let gains = self
            .gains
            .unwrap_or_else(|| GainSchedule::default_for(self.mode));
        if self.joint_limits {
            gains
        } else {
            gains.without_joint_limits()
        }
    }
}

/// A desired pose.
///
/// Either `q` (target = nominal forward kinematics of `q`) or any of
/// `position` / `rotation_deg`. Rotations are X-Y-Z angles in degrees applied
/// on top of the home orientation: `R = Rx Ry Rz R_home`. Missing parts are
/// taken from the home pose.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub q: Option<[f64; NUM_ACTUATORS]>,
    pub position: Option<[f64; 3]>,
    pub rotation_deg: Option<[f64; 3]>,
}

/// Rotation from X-Y-Z angles in degrees applied on top of `base`.
pub fn relative_rotation(angles_deg: [f64; 3], base: &Matrix3<f64>) -> Matrix3<f64> {
    let [x, y, z] = angles_deg.map(f64::to_radians);
    rot_x(x) * rot_y(y) * rot_z(z) * base
}

impl TargetSpec {
    pub fn resolve(&self, geom: &RobotGeometry, home: &Pose) -> Pose {
        if let Some(q) = self.q {
            return forward_kinematics(&ActuatorState::new(q.into()), geom);
        }
        let position = self.position.map(Vector3::from).unwrap_or(home.position);
        let rotation = self
            .rotation_deg
            .map(|a| relative_rotation(a, &home.rotation))
            .unwrap_or(home.rotation);
        Pose::new(position, rotation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerrySpec {
    pub position: [f64; 3],
    /// Approach rotation, relative to the home orientation as in [`TargetSpec`].
    pub approach_deg: [f64; 3],
    /// Fine-positioning iterations `[start, length]` with the berry hidden.
    #[serde(default)]
    pub forced_occlusion: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvestSpec {
    pub berries: Vec<BerrySpec>,
    #[serde(default)]
    pub workflow: WorkflowConfig,
    #[serde(default)]
    pub camera_noise_std: f64,
    /// Noise on the C1 registration measurements, meters.
    #[serde(default)]
    pub registration_noise_std: f64,
}

/// Contents of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Geometry file, relative to the scenario file; default geometry if absent.
    #[serde(default)]
    pub geometry: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Report failure (exit code 2) when any target fails.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub controller: ControllerSettings,
    #[serde(default)]
    pub plant: PlantSettings,
    /// Initial command; the default home configuration if absent.
    #[serde(default)]
    pub initial_q: Option<[f64; NUM_ACTUATORS]>,
    #[serde(default)]
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub harvest: Option<HarvestSpec>,
}

fn one() -> usize {
    1
}

/// A parsed scenario with its geometry resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub geometry: RobotGeometry,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: ScenarioConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_config(config, base)
    }

    /// Resolves the geometry path against `base_dir` and validates.
    pub fn from_config(config: ScenarioConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        let geometry = match &config.geometry {
            Some(p) => RobotGeometry::from_json_file(base_dir.join(p))?,
            None => RobotGeometry::default(),
        };
        let scenario = Scenario { config, geometry };
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if c.name.is_empty() || c.name.contains(['/', '\\']) {
            return bad("name must be a non-empty file-name-safe string".into());
        }
        if c.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        let s = &c.controller;
        if !(s.dt > 0.0 && s.position_tolerance > 0.0 && s.orientation_tolerance_deg > 0.0) {
            return bad("controller dt and tolerances must be > 0".into());
        }
        let p = &c.plant;
        if !(p.mismatch >= 0.0
            && p.position_noise_std >= 0.0
            && p.rotation_noise_std >= 0.0
            && p.filter_cutoff > 0.0)
        {
            return bad("plant mismatch and noise must be >= 0 and filter_cutoff > 0".into());
        }
        if c.initial_q
            .is_some_and(|q| q.iter().any(|v| !v.is_finite()))
        {
            return bad("initial_q must be finite".into());
        }
        for run in &c.runs {
            run.resolved_gains()
                .validate()
                .map_err(ConfigError::Invalid)?;
        }
        match &c.harvest {
            Some(h) => {
                h.workflow.validate().map_err(ConfigError::Invalid)?;
                if !(h.camera_noise_std >= 0.0 && h.registration_noise_std >= 0.0) {
                    return bad("camera noise must be >= 0".into());
                }
            }
            None if c.runs.is_empty() && !c.targets.is_empty() => {
                return bad("targets given but no runs".into());
            }
            None => {}
        }
        Ok(())
    }

    pub fn initial_q(&self) -> ActuatorState {
        ActuatorState::new(self.config.initial_q.unwrap_or(DEFAULT_HOME_Q).into())
    }

    pub fn home_pose(&self) -> Pose {
        forward_kinematics(&self.initial_q(), &self.geometry)
    }

    pub fn targets(&self) -> Vec<Pose> {
        let home = self.home_pose();
        self.config
            .targets
            .iter()
            .map(|t| t.resolve(&self.geometry, &home))
            .collect()
    }

    pub fn controller_config(&self, mode: ControlMode) -> ControllerConfig {
        let s = &self.config.controller;
        ControllerConfig {
            dt: s.dt,
            position_tolerance: s.position_tolerance,
            orientation_tolerance: s.orientation_tolerance_deg.to_radians(),
            max_iterations: s.max_iterations,
            joint_limits: self.geometry.joint_limits(),
            mode,
            sv_tol: s.sv_tol,
        }
    }

    /// Seed for the noise of one target and repetition.
    pub fn run_seed(&self, target: usize, repetition: usize) -> u64 {
        self.config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((repetition as u64) << 32)
            .wrapping_add(target as u64)
    }

    /// Plant for one target and repetition. Model mismatch depends on the
    /// scenario seed only, so every target sees the same physical arm.
    pub fn plant(&self, target: usize, repetition: usize) -> Plant {
        let p = &self.config.plant;
        let mut cfg = PlantConfig::ideal(self.geometry.clone(), self.config.controller.dt)
            .with_random_mismatch(p.mismatch, self.config.seed);
        cfg.position_noise_std = p.position_noise_std;
        cfg.rotation_noise_std = p.rotation_noise_std;
        cfg.filter_cutoff = p.filter_cutoff;
        cfg.rng_seed = self.run_seed(target, repetition);
        Plant::new(cfg)
    }

    fn feedback(&self, target: usize, repetition: usize) -> Box<dyn Feedback> {
        match self.config.plant.feedback {
            FeedbackKind::Plant => Box::new(self.plant(target, repetition)),
            FeedbackKind::Model => Box::new(ModelFeedback::new(self.geometry.clone())),
        }
    }

    /// Runs one controller variant on one target.
    pub fn solve_one(
        &self,
        run: &RunSpec,
        target: &Pose,
        index: usize,
        repetition: usize,
    ) -> Trajectory {
        let cfg = self.controller_config(run.mode);
        let mut feedback = self.feedback(index, repetition);
        match solve(
            &self.initial_q(),
            target,
            &self.geometry,
            &run.resolved_gains(),
            &cfg,
            feedback.as_mut(),
        ) {
            Ok(t) => t,
            Err(SolveError::DivergenceDetected(t)) => *t,
            Err(SolveError::Singular { trajectory, .. }) => *trajectory,
        }
    }
}

/// Outcome label for a control run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converged,
    Diverged,
    InfeasiblePressuresDetected,
    NotConverged,
}

impl Verdict {
    pub fn of(traj: &Trajectory) -> Self {
        if traj.termination == Termination::Diverged {
            Verdict::Diverged
        } else if traj.any_negative_pressure() || traj.any_infeasible() {
            Verdict::InfeasiblePressuresDetected
        } else if traj.converged() {
            Verdict::Converged
        } else {
            Verdict::NotConverged
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::Diverged => "diverged",
            Verdict::InfeasiblePressuresDetected => "infeasible-pressures-detected",
            Verdict::NotConverged => "not-converged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub target: usize,
    pub repetition: usize,
    pub termination: Termination,
    pub converged: bool,
    pub iterations: usize,
    /// Measured (filtered) errors at the last step.
    pub position_error: f64,
    pub orientation_error_deg: f64,
    pub any_infeasible: bool,
    pub any_negative_pressure: bool,
    pub min_q: f64,
    pub max_q: f64,
    pub verdict: Verdict,
}

impl TargetResult {
    fn new(traj: &Trajectory, target: usize, repetition: usize) -> Self {
        let err = traj.final_error();
        let (min_q, max_q) = traj
            .steps
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.q.q.min()), hi.max(s.q.q.max()))
            });
        TargetResult {
            target,
            repetition,
            termination: traj.termination,
            converged: traj.converged(),
            iterations: traj.iterations(),
            position_error: err.position_norm(),
            orientation_error_deg: err.orientation_norm().to_degrees(),
            any_infeasible: traj.any_infeasible(),
            any_negative_pressure: traj.any_negative_pressure(),
            min_q,
            max_q,
            verdict: Verdict::of(traj),
        }
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Sample statistics (n - 1 in the variance); zero spread for n <= 1.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub total: usize,
    pub converged: usize,
    pub position_error: Stat,
    pub orientation_error_deg: Stat,
    pub iterations: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub mode: ControlMode,
    pub gains: GainSchedule,
    pub summary: RunSummary,
    pub results: Vec<TargetResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestResult {
    pub berry: usize,
    pub repetition: usize,
    pub state: HarvestState,
    pub grasp_success: bool,
    pub fine_distance: Option<f64>,
    pub stages: Vec<StageOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub runs: Vec<RunReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub harvests: Vec<HarvestResult>,
}

impl ScenarioReport {
    /// Any failed target or harvest.
    pub fn any_failure(&self) -> bool {
        self.runs
            .iter()
            .flat_map(|r| &r.results)
            .any(|t| t.verdict != Verdict::Converged)
            || self.harvests.iter().any(|h| h.state != HarvestState::Done)
    }

    pub fn run(&self, label: &str) -> Option<&RunReport> {
        self.runs.iter().find(|r| r.label == label)
    }

    /// Human-readable summary, one row per run in the style `mean ± std`.
    pub fn table(&self) -> String {
        let mut out = format!("scenario {} (seed {})\n", self.name, self.seed);
        for r in &self.runs {
            let s = &r.summary;
            let pos = if r.mode.controls_position() {
                format!(
                    "{:.3} ± {:.3} mm",
                    s.position_error.mean * 1e3,
                    s.position_error.std * 1e3
                )
            } else {
                "n/a".to_string()
            };
            let ori = if r.mode.controls_orientation() {
                format!(
                    "{:.3} ± {:.3} deg",
                    s.orientation_error_deg.mean, s.orientation_error_deg.std
                )
            } else {
                "n/a".to_string()
            };
            let _ = writeln!(
                out,
                "  {:<24} converged {:>3}/{:<3} e_p {pos}  e_zeta {ori}  iterations {:.0} ± {:.0}",
                r.label, s.converged, s.total, s.iterations.mean, s.iterations.std,
            );
        }
        for h in &self.harvests {
            let _ = writeln!(
                out,
                "  harvest berry {} rep {}: {:?}, fine distance {}",
                h.berry,
                h.repetition,
                h.state,
                h.fine_distance
                    .map_or("-".into(), |d| format!("{:.2} mm", d * 1e3)),
            );
        }
        out
    }
}

/// Column names of the per-step CSV.
pub fn step_csv_header() -> Vec<String> {
    let mut cols: Vec<String> = ["run", "target", "repetition", "iteration", "stage"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..NUM_ACTUATORS).map(|m| format!("q{m}")));
    cols.extend((0..NUM_ACTUATORS).map(|m| format!("p{m}")));
    for c in [
        "x",
        "y",
        "z",
        "rx",
        "ry",
        "rz",
        "e_p",
        "e_zeta",
        "infeasible",
        "negative_pressure",
        "jl_gain",
    ] {
        cols.push(c.to_string());
    }
    cols
}

struct RowData<'a> {
    run: &'a str,
    target: usize,
    repetition: usize,
    iteration: usize,
    stage: &'a str,
    q: &'a ActuatorState,
    pressures: &'a [f64; NUM_ACTUATORS],
    infeasible: &'a [bool; NUM_ACTUATORS],
    pose: &'a Pose,
    e_p: f64,
    e_zeta: f64,
    jl_gain: f64,
}

fn push_row<W: std::io::Write>(w: &mut csv::Writer<W>, r: RowData) -> csv::Result<()> {
    let mut rec: Vec<String> = vec![
        r.run.to_string(),
        r.target.to_string(),
        r.repetition.to_string(),
        r.iteration.to_string(),
        r.stage.to_string(),
    ];
    rec.extend(r.q.q.iter().map(|v| v.to_string()));
    rec.extend(r.pressures.iter().map(|v| v.to_string()));
    let rv = log_so3(&r.pose.rotation);
    rec.extend(
        r.pose
            .position
            .iter()
            .chain(rv.iter())
            .map(|v| v.to_string()),
    );
    rec.push(r.e_p.to_string());
    rec.push(r.e_zeta.to_string());
    rec.push(r.infeasible.iter().filter(|f| **f).count().to_string());
    rec.push(u8::from(r.pressures.iter().any(|p| *p < 0.0)).to_string());
    rec.push(r.jl_gain.to_string());
    w.write_record(&rec)
}

fn trajectory_rows<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    label: &str,
    target: usize,
    repetition: usize,
    traj: &Trajectory,
) -> csv::Result<()> {
    for s in &traj.steps {
        push_row(
            w,
            RowData {
                run: label,
                target,
                repetition,
                iteration: s.iteration,
                stage: "control",
                q: &s.q,
                pressures: &s.pressures,
                infeasible: &s.infeasible,
                pose: &s.pose,
                e_p: s.error.position_norm(),
                e_zeta: s.error.orientation_norm(),
                jl_gain: s.jl_gain,
            },
        )?;
    }
    Ok(())
}

fn harvest_rows<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    berry: usize,
    repetition: usize,
    log: &HarvestLog,
) -> csv::Result<()> {
    for s in &log.steps {
        push_row(
            w,
            RowData {
                run: "harvest",
                target: berry,
                repetition,
                iteration: s.iteration,
                stage: s.stage.name(),
                q: &s.q,
                pressures: &s.observation.pressures,
                infeasible: &s.observation.infeasible_flags,
                pose: &s.observation.pose_filtered,
                e_p: s.error.position_norm(),
                e_zeta: s.error.orientation_norm(),
                jl_gain: 0.0,
            },
        )?;
    }
    Ok(())
}

/// Everything a scenario run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub report: ScenarioReport,
    /// Per-step CSV, header included.
    pub steps_csv: String,
    /// Aligned error-vs-iteration CSV (comparisons only).
    pub compare_csv: Option<String>,
    pub trajectories: Vec<Vec<Trajectory>>,
    pub harvest_logs: Vec<HarvestLog>,
}

impl ScenarioOutput {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n"
    }

    /// Writes `<name>_steps.csv`, `<name>_summary.json` and, for comparisons,
    /// `<name>_compare.csv` into `dir`; returns the paths written.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let name = &self.report.name;
        let mut files = vec![
            (
                dir.join(format!("{name}_steps.csv")),
                self.steps_csv.clone(),
            ),
            (
                dir.join(format!("{name}_summary.json")),
                self.summary_json(),
            ),
        ];
        if let Some(c) = &self.compare_csv {
            files.push((dir.join(format!("{name}_compare.csv")), c.clone()));
        }
        for (path, body) in &files {
            std::fs::write(path, body)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

fn csv_string(build: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    build(&mut w).expect("writing to memory cannot fail");
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
}

/// Maps `f` over `0..n` on all available cores, keeping order.
fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |p| p.get())
        .min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                results.lock().expect("no panics while holding the lock")[i] = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|v| v.expect("every index computed"))
        .collect()
}

fn summarize(results: &[TargetResult]) -> RunSummary {
    let pick = |f: fn(&TargetResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
    RunSummary {
        total: results.len(),
        converged: results.iter().filter(|r| r.converged).count(),
        position_error: Stat::of(&pick(|r| r.position_error)),
        orientation_error_deg: Stat::of(&pick(|r| r.orientation_error_deg)),
        iterations: Stat::of(&pick(|r| r.iterations as f64)),
    }
}

/// Builds the C1 registration used by harvests: registers the default
/// camera layout from 6 cube points, optionally with measurement noise.
fn harvest_vision(h: &HarvestSpec, seed: u64) -> VisionSim {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let truth = FrameRegistry::default_layout();
    let base_pts = registration_points(&Vector3::new(0.0, 0.15, 0.4), 0.2);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, h.registration_noise_std).expect("std >= 0");
    let c1_pts: Vec<_> = base_pts
        .iter()
        .map(|p| {
            let exact = truth.t_c1_base.inverse().transform_point(p);
            if h.registration_noise_std > 0.0 {
                exact + Vector3::from_fn(|_, _| normal.sample(&mut rng))
            } else {
                exact
            }
        })
        .collect();
    let estimate = match FrameRegistry::register_c1(&c1_pts, &base_pts, truth.t_c2_ee) {
        Ok(reg) => reg,
        Err(_) => truth,
    };
    VisionSim::new(truth, estimate, h.camera_noise_std, seed)
}

/// Executes every run on every target (and every harvest) of a scenario.
pub fn run_scenario(scenario: &Scenario) -> ScenarioOutput {
    let c = &scenario.config;
    let targets = scenario.targets();
    let reps = c.repetitions;
    let jobs = targets.len() * reps;

    let mut runs = Vec::new();
    let mut trajectories = Vec::new();
    for run in &c.runs {
        let trajs = parallel_map(jobs, |j| {
            let (t, rep) = (j / reps, j % reps);
            scenario.solve_one(run, &targets[t], t, rep)
        });
        let results: Vec<_> = trajs
            .iter()
            .enumerate()
            .map(|(j, tr)| TargetResult::new(tr, j / reps, j % reps))
            .collect();
        runs.push(RunReport {
            label: run.label(),
            mode: run.mode,
            gains: run.resolved_gains(),
            summary: summarize(&results),
            results,
        });
        trajectories.push(trajs);
    }

    let mut harvests = Vec::new();
    let mut harvest_logs = Vec::new();
    if let Some(h) = &c.harvest {
        let home = scenario.home_pose();
        let logs = parallel_map(h.berries.len() * reps, |j| {
            let (b, rep) = (j / reps, j % reps);
            let berry = &h.berries[b];
            let seed = scenario.run_seed(b, rep);
            let mut vision = harvest_vision(h, seed);
            vision.forced_occlusion = berry.forced_occlusion.map(|[s, l]| (s, l));
            let mut plant = scenario.plant(b, rep);
            let mut wf = h.workflow.clone();
            wf.home_q = scenario.initial_q().q.into();
            let approach = relative_rotation(berry.approach_deg, &home.rotation);
            run_harvest(
                &Vector3::from(berry.position),
                &approach,
                &scenario.geometry,
                &mut plant,
                &mut vision,
                &wf,
            )
        });
        for (j, log) in logs.iter().enumerate() {
            harvests.push(HarvestResult {
                berry: j / reps,
                repetition: j % reps,
                state: log.state.clone(),
                grasp_success: log.grasp_success,
                fine_distance: log.fine_distance,
                stages: log.stages.clone(),
            });
        }
        harvest_logs = logs;
    }

    let steps_csv = csv_string(|w| {
        w.write_record(step_csv_header())?;
        for (run, trajs) in runs.iter().zip(&trajectories) {
            for (j, tr) in trajs.iter().enumerate() {
                trajectory_rows(w, &run.label, j / reps, j % reps, tr)?;
            }
        }
        for (j, log) in harvest_logs.iter().enumerate() {
            harvest_rows(w, j / reps, j % reps, log)?;
        }
        Ok(())
    });

    ScenarioOutput {
        report: ScenarioReport {
            name: c.name.clone(),
            seed: c.seed,
            runs,
            harvests,
        },
        steps_csv,
        compare_csv: None,
        trajectories,
        harvest_logs,
    }
}

/// Runs every controller variant from the same initial state and seed on a
/// single target and adds an aligned error-vs-iteration table.
pub fn compare_controllers(scenario: &Scenario) -> Result<ScenarioOutput, ConfigError> {
    let c = &scenario.config;
    if c.runs.len() < 2 {
        return Err(ConfigError::Invalid("compare needs at least 2 runs".into()));
    }
    if c.targets.len() != 1 {
        return Err(ConfigError::Invalid(
            "compare needs exactly 1 target".into(),
        ));
    }
    let mut out = run_scenario(scenario);
    let labels: Vec<String> = out.report.runs.iter().map(|r| r.label.clone()).collect();
    // First repetition of each run.
    let trajs: Vec<&Trajectory> = out.trajectories.iter().map(|t| &t[0]).collect();
    let len = trajs.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    out.compare_csv = Some(csv_string(|w| {
        let mut header = vec!["iteration".to_string()];
        for l in &labels {
            header.push(format!("{l}_e_p"));
            header.push(format!("{l}_e_zeta"));
        }
        w.write_record(&header)?;
        for i in 0..len {
            let mut rec = vec![i.to_string()];
            for t in &trajs {
                match t.steps.get(i) {
                    Some(s) => {
                        rec.push(s.error.position_norm().to_string());
                        rec.push(s.error.orientation_norm().to_string());
                    }
                    None => {
                        rec.push(String::new());
                        rec.push(String::new());
                    }
                }
            }
            w.write_record(&rec)?;
        }
        Ok(())
    }));
    Ok(out)
}

/// One line per run: `label: verdict (iterations, final errors)`.
pub fn verdict_lines(report: &ScenarioReport) -> Vec<String> {
    report
        .runs
        .iter()
        .flat_map(|r| {
            r.results.iter().map(move |t| {
                let mut errors = Vec::new();
                if r.mode.controls_position() {
                    errors.push(format!("e_p {:.3} mm", t.position_error * 1e3));
                }
                if r.mode.controls_orientation() {
                    errors.push(format!("e_zeta {:.3} deg", t.orientation_error_deg));
                }
                format!(
                    "{}: {} after {} iterations ({})",
                    r.label,
                    t.verdict.name(),
                    t.iterations,
                    errors.join(", ")
                )
            })
        })
        .collect()
}
