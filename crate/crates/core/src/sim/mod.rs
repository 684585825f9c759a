//! Closed-loop simulation of controller plus kinematic plant, with zero-order
//! hold between control ticks and per-step trace recording.

pub mod metrics;
pub mod trace;

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::htidkc::{htidkc_step, HtidkcConfig, HtidkcError};
use crate::htmpc::{
    active_hierarchy, advance_window, htmpc_step, ActiveTask, HtmpcConfig, HtmpcError,
    WindowState,
};
use crate::model::{GeneralizedState, RobotModel};
use crate::nlp::DecisionTrajectory;
use crate::tasks::{to_waypoint_variant, Scenario, TaskError};

pub use metrics::{compute_metrics, heatmap_row, HeatmapRow, MetricsReport, PartMetrics};
pub use trace::{ControlRecord, LevelRecord, Sample, Trace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("controller failed: {0}")]
    Controller(String),
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ControllerError(pub String);

impl From<HtmpcError> for ControllerError {
    fn from(e: HtmpcError) -> Self {
        Self(e.to_string())
    }
}

impl From<HtidkcError> for ControllerError {
    fn from(e: HtidkcError) -> Self {
        Self(e.to_string())
    }
}

/// Command applied to the plant until the next control tick.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Acceleration(DVector<f64>),
    Velocity(DVector<f64>),
}

/// A closed-loop controller: one command per tick at its own rate.
pub trait Controller {
    fn control_period(&self) -> f64;
    fn step(
        &mut self,
        t: f64,
        state: &GeneralizedState,
        window: &[ActiveTask],
    ) -> Result<(Command, ControlRecord), ControllerError>;
    fn reset(&mut self);
}

/// Receding-horizon hierarchical-task MPC controller.
pub struct HtmpcController {
    pub model: Arc<RobotModel>,
    pub obstacles: Vec<crate::model::WorldSphere>,
    pub config: HtmpcConfig,
    warm: Option<DecisionTrajectory>,
    u_prev: DVector<f64>,
}

impl HtmpcController {
    pub fn new(scenario: &Scenario, config: HtmpcConfig) -> Self {
        let model = Arc::new(scenario.model.clone());
        let m = model.dof();
        Self {
            model,
            obstacles: scenario.obstacles.clone(),
            config,
            warm: None,
            u_prev: DVector::zeros(m),
        }
    }
}

impl Controller for HtmpcController {
    fn control_period(&self) -> f64 {
        self.config.control_period
    }

    fn step(
        &mut self,
        t: f64,
        state: &GeneralizedState,
        window: &[ActiveTask],
    ) -> Result<(Command, ControlRecord), ControllerError> {
        let x0 = state.stacked();
        let output = htmpc_step(
            &self.model,
            &self.obstacles,
            window,
            t,
            &x0,
            &self.u_prev,
            self.warm.as_ref(),
            &self.config,
        )?;
        self.warm = output.level_trajectories.last().cloned();
        self.u_prev = output.command.clone();
        let levels = output
            .level_costs
            .iter()
            .zip(output.stats.iter())
            .map(|(cost, stats)| LevelRecord {
                cost: *cost,
                alpha: stats.alpha,
                sqp_iterations: stats.sqp_iterations,
                max_h: stats.max_h,
                status: format!("{:?}", stats.status),
            })
            .collect();
        let record = ControlRecord {
            t,
            window_offset: 0,
            solve_ms: output.total_ms,
            levels,
            cross_costs: output.cross_costs,
            cross_h: output.cross_h,
            level_deltas: output.level_deltas,
            failure: None,
        };
        Ok((Command::Acceleration(output.command), record))
    }

    fn reset(&mut self) {
        self.warm = None;
        self.u_prev = DVector::zeros(self.model.dof());
    }
}

/// Velocity-level task-priority baseline controller.
pub struct HtidkcController {
    pub model: Arc<RobotModel>,
    pub config: HtidkcConfig,
    prev_v: DVector<f64>,
}

impl HtidkcController {
    pub fn new(scenario: &Scenario, config: HtidkcConfig) -> Self {
        let model = Arc::new(scenario.model.clone());
        let m = model.dof();
        Self {
            model,
            config,
            prev_v: DVector::zeros(m),
        }
    }
}

impl Controller for HtidkcController {
    fn control_period(&self) -> f64 {
        self.config.control_period
    }

    fn step(
        &mut self,
        t: f64,
        state: &GeneralizedState,
        window: &[ActiveTask],
    ) -> Result<(Command, ControlRecord), ControllerError> {
        let started = std::time::Instant::now();
        match htidkc_step(&self.model, window, t, &state.q, &self.config) {
            Ok(v) => {
                self.prev_v = v.clone();
                let record = ControlRecord {
                    t,
                    solve_ms: started.elapsed().as_secs_f64() * 1e3,
                    ..ControlRecord::default()
                };
                Ok((Command::Velocity(v), record))
            }
            // An unsolvable level holds the previous command.
            Err(HtidkcError::LevelFailed { level, status }) => {
                let record = ControlRecord {
                    t,
                    solve_ms: started.elapsed().as_secs_f64() * 1e3,
                    failure: Some(format!("level {level} {status:?}, holding")),
                    ..ControlRecord::default()
                };
                Ok((Command::Velocity(self.prev_v.clone()), record))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn reset(&mut self) {
        self.prev_v = DVector::zeros(self.model.dof());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerId {
    Htmpc,
    HtmpcWpt,
    Htidkc,
}

impl ControllerId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerId::Htmpc => "htmpc",
            ControllerId::HtmpcWpt => "htmpc-wpt",
            ControllerId::Htidkc => "htidkc",
        }
    }
}

impl FromStr for ControllerId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "htmpc" => Ok(ControllerId::Htmpc),
            "htmpc-wpt" | "htmpc_wpt" => Ok(ControllerId::HtmpcWpt),
            "htidkc" => Ok(ControllerId::Htidkc),
            other => Err(format!("unknown controller `{other}`")),
        }
    }
}

/// Simulation knobs. The plant integrates at `sim_dt`; controllers run at
/// their own periods on the shared clock.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub sim_dt: f64,
    /// Override the scenario duration.
    pub duration: Option<f64>,
    /// Standard deviation of Gaussian measurement noise per state coordinate
    /// (length 2n), applied to the state the controller sees.
    pub noise_std: Option<DVector<f64>>,
    /// Keep the previous command when the controller errors instead of
    /// aborting the run.
    pub hold_on_failure: bool,
    /// Delay command application by the measured solve time, in whole control
    /// periods.
    pub wall_clock_coupled: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sim_dt: 0.005,
            duration: None,
            noise_std: None,
            hold_on_failure: true,
            wall_clock_coupled: false,
        }
    }
}

/// Run one controller against one scenario. Commands hold between ticks, the
/// plant integrates every `sim_dt`, and the trace records every step.
pub fn run_closed_loop(
    controller: &mut dyn Controller,
    scenario: &Scenario,
    config: &SimConfig,
) -> Result<Trace, SimError> {
    scenario.validate()?;
    let model = &scenario.model;
    let n = model.dof();
    let duration = config.duration.unwrap_or(scenario.duration);
    let steps = (duration / config.sim_dt).round() as usize;
    let period = controller.control_period();
    assert!(
        config.sim_dt <= period + 1e-12,
        "simulation step must not exceed the control period"
    );

    let all_tasks: Vec<crate::tasks::TrackingTask> =
        scenario.all_tasks().into_iter().cloned().collect();
    let task_names: Vec<String> = all_tasks.iter().map(|t| t.name.clone()).collect();

    let mut state = scenario.start_state();
    let mut window = WindowState::new(&scenario.sequence, 0.0);
    let mut command = Command::Acceleration(DVector::zeros(n));
    let mut pending: Option<(f64, Command)> = None;
    let mut next_tick = 0.0;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x6e6f6973);

    let mut trace = Trace {
        sim_dt: config.sim_dt,
        task_names,
        samples: Vec::with_capacity(steps),
        task_errors: Vec::with_capacity(steps),
        control: Vec::new(),
        finished_at: None,
        failure: None,
    };

    for step in 0..steps {
        let t = step as f64 * config.sim_dt;

        if let Some((apply_at, cmd)) = &pending {
            if t + 1e-12 >= *apply_at {
                command = cmd.clone();
                pending = None;
            }
        }

        if t + 1e-12 >= next_tick {
            next_tick += period;
            advance_window(&scenario.sequence, &mut window, model, &state.q, t);
            let hierarchy = active_hierarchy(scenario, &window);
            if hierarchy.is_empty() {
                // Whole sequence served: freeze in place.
                command = Command::Velocity(DVector::zeros(n));
                pending = None;
            } else {
                let measured = match &config.noise_std {
                    Some(std) => {
                        let mut x = state.stacked();
                        for j in 0..x.len() {
                            if std[j] > 0.0 {
                                let dist = Normal::new(0.0, std[j]).expect("finite std");
                                x[j] += dist.sample(&mut noise_rng);
                            }
                        }
                        GeneralizedState::from_stacked(&x)
                    }
                    None => state.clone(),
                };
                match controller.step(t, &measured, &hierarchy) {
                    Ok((new_command, mut record)) => {
                        record.window_offset = window.offset;
                        let delay_periods = if config.wall_clock_coupled {
                            (record.solve_ms / 1e3 / period).floor() * period
                        } else {
                            0.0
                        };
                        if delay_periods > 0.0 {
                            pending = Some((t + delay_periods, new_command));
                        } else {
                            command = new_command;
                        }
                        trace.control.push(record);
                    }
                    Err(e) => {
                        let record = ControlRecord {
                            t,
                            window_offset: window.offset,
                            failure: Some(e.to_string()),
                            ..ControlRecord::default()
                        };
                        trace.control.push(record);
                        if !config.hold_on_failure {
                            trace.failure = Some(e.to_string());
                            break;
                        }
                    }
                }
            }
        }

        // Record the sample, then integrate over [t, t + sim_dt).
        let (cmd_vec, is_velocity) = match &command {
            Command::Acceleration(u) => (u.clone(), false),
            Command::Velocity(v) => (v.clone(), true),
        };
        let errors: Vec<f64> = all_tasks
            .iter()
            .enumerate()
            .map(|(j, task)| {
                let clock = if j < scenario.persistent_tasks.len() {
                    t
                } else {
                    window.clock(j - scenario.persistent_tasks.len() + 1, t)
                };
                crate::tasks::tracking_error(model, task, &state.q, clock)
                    .map(|e| e.norm())
                    .unwrap_or(f64::NAN)
            })
            .collect();
        trace.samples.push(Sample {
            t,
            q: state.q.clone(),
            v: state.v.clone(),
            command: cmd_vec,
            command_is_velocity: is_velocity,
            window_offset: window.offset,
            sequence_done: window.finished,
        });
        trace.task_errors.push(errors);

        match &command {
            Command::Acceleration(u) => {
                let dq = model.coordinate_rates(&state.q, &state.v);
                state.q += config.sim_dt * dq;
                state.v += config.sim_dt * u;
            }
            Command::Velocity(v) => {
                state.v = v.clone();
                let dq = model.coordinate_rates(&state.q, &state.v);
                state.q += config.sim_dt * dq;
            }
        }
    }
    trace.finished_at = window.finished_at;
    Ok(trace)
}

/// Build the controller for an id. The waypoint variant uses the identical
/// MPC solver; its scenario must be rewired with `to_waypoint_variant`.
pub fn build_controller(
    id: ControllerId,
    scenario: &Scenario,
    htmpc_config: &HtmpcConfig,
    htidkc_config: &HtidkcConfig,
) -> Box<dyn Controller> {
    match id {
        ControllerId::Htmpc | ControllerId::HtmpcWpt => {
            Box::new(HtmpcController::new(scenario, htmpc_config.clone()))
        }
        ControllerId::Htidkc => Box::new(HtidkcController::new(scenario, htidkc_config.clone())),
    }
}

/// Run a scenario under a named controller, applying the waypoint rewiring
/// for the `htmpc-wpt` variant.
pub fn run_scenario(
    id: ControllerId,
    scenario: &Scenario,
    sim_config: &SimConfig,
    htmpc_config: &HtmpcConfig,
    htidkc_config: &HtidkcConfig,
) -> Result<(Trace, Scenario), SimError> {
    let effective = match id {
        ControllerId::HtmpcWpt => to_waypoint_variant(scenario),
        _ => scenario.clone(),
    };
    let mut controller = build_controller(id, &effective, htmpc_config, htidkc_config);
    let trace = run_closed_loop(controller.as_mut(), &effective, sim_config)?;
    Ok((trace, effective))
}

/// Outcome of the single-task vs hierarchical-task architecture comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ArchComparison {
    pub st_time: Option<f64>,
    pub ht_time: Option<f64>,
    /// `st_time / ht_time` when both runs finish.
    pub ratio: Option<f64>,
    /// Largest base speed observed while an EE task was at the window head
    /// with its error inside the lexicographic tolerance.
    pub ht_base_speed_during_ee_hold: f64,
    pub delta_used: f64,
}

/// Run the same delivery scenario under window sizes 1 (single-task
/// architecture) and 2 (hierarchical-task architecture) and compare
/// completion times.
pub fn compare_architectures(
    scenario: &Scenario,
    sim_config: &SimConfig,
    htmpc_config: &HtmpcConfig,
) -> Result<(ArchComparison, Trace, Trace), SimError> {
    let mut st_scenario = scenario.clone();
    st_scenario.sequence.window_size = 1;
    st_scenario.name = format!("{}_st", scenario.name);
    let mut ht_scenario = scenario.clone();
    ht_scenario.sequence.window_size = 2.min(scenario.sequence.tasks.len());
    ht_scenario.name = format!("{}_ht", scenario.name);
    let htidkc_config = HtidkcConfig::default();

    let (st_trace, _) = run_scenario(
        ControllerId::Htmpc,
        &st_scenario,
        sim_config,
        htmpc_config,
        &htidkc_config,
    )?;
    let (ht_trace, _) = run_scenario(
        ControllerId::Htmpc,
        &ht_scenario,
        sim_config,
        htmpc_config,
        &htidkc_config,
    )?;

    let delta = scenario
        .sequence
        .tasks
        .iter()
        .map(|t| t.delta)
        .fold(f64::INFINITY, f64::min);
    let mut max_speed: f64 = 0.0;
    for (sample, errors) in ht_trace.samples.iter().zip(ht_trace.task_errors.iter()) {
        if sample.sequence_done {
            continue;
        }
        let head = sample.window_offset - 1;
        let name = &ht_trace.task_names[head];
        if name.starts_with("ee") && errors[head] < delta {
            let base_speed = (sample.v[0].powi(2) + sample.v[1].powi(2)).sqrt();
            max_speed = max_speed.max(base_speed);
        }
    }

    let comparison = ArchComparison {
        st_time: st_trace.finished_at,
        ht_time: ht_trace.finished_at,
        ratio: match (st_trace.finished_at, ht_trace.finished_at) {
            (Some(st), Some(ht)) if ht > 0.0 => Some(st / ht),
            _ => None,
        },
        ht_base_speed_during_ee_hold: max_speed,
        delta_used: delta,
    };
    Ok((comparison, st_trace, ht_trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Bounds;
    use crate::tasks::{
        sample_square_wave_tests, ReferenceTrajectory, ScenarioKind, ScenarioParams, TaskSequence,
        TrackingTask,
    };
    use nalgebra::Vector2;

    fn hold_scenario(unbounded: bool) -> Scenario {
        let mut model = crate::model::RobotModel::planar5();
        if unbounded {
            model.bounds = Bounds::unbounded(5);
        }
        let ee_home = model.forward_kinematics(&model.q_home, "EE").unwrap();
        let base_home = model.forward_kinematics(&model.q_home, "BASE").unwrap();
        let ee = TrackingTask {
            name: "ee_hold".into(),
            point: "EE".into(),
            reference: ReferenceTrajectory::constant(ee_home, 4.0),
            stage_weight: DVector::from_element(2, 60.0),
            terminal_weight: DVector::from_element(2, 120.0),
            delta: 0.01,
            eps_done: f64::INFINITY,
        };
        let base = TrackingTask {
            name: "base_hold".into(),
            point: "BASE".into(),
            reference: ReferenceTrajectory::constant(base_home, 4.0),
            stage_weight: DVector::from_element(2, 8.0),
            terminal_weight: DVector::from_element(2, 40.0),
            delta: 0.01,
            eps_done: f64::INFINITY,
        };
        Scenario {
            name: "hold".into(),
            model,
            persistent_tasks: vec![ee],
            sequence: TaskSequence::new(vec![base], 1).unwrap(),
            obstacles: vec![],
            duration: 4.0,
            seed: 1,
            kind: ScenarioKind::Custom,
        }
    }

    #[test]
    fn hold_task_from_home_stays_at_home() {
        let scenario = hold_scenario(true);
        let cfg = HtmpcConfig::for_model(&scenario.model);
        let mut controller = HtmpcController::new(&scenario, cfg);
        let trace = run_closed_loop(&mut controller, &scenario, &SimConfig::default()).unwrap();
        for errors in &trace.task_errors {
            assert!(errors[0] < 1e-6, "EE error {}", errors[0]);
            assert!(errors[1] < 1e-6, "base error {}", errors[1]);
        }

        // With the default barriers the drift stays small as well.
        let scenario = hold_scenario(false);
        let cfg = HtmpcConfig::for_model(&scenario.model);
        let mut controller = HtmpcController::new(&scenario, cfg);
        let trace = run_closed_loop(&mut controller, &scenario, &SimConfig::default()).unwrap();
        for errors in &trace.task_errors {
            assert!(errors[0] < 1e-3);
        }
    }

    #[test]
    fn reachable_ee_target_converges_into_the_tolerance_band() {
        // The lower-priority base task may trade EE error up to δ per cycle,
        // so the closed loop settles inside an O(δ) band around the target.
        let mut scenario = hold_scenario(false);
        let target = DVector::from_vec(vec![0.6, 0.35]);
        scenario.persistent_tasks[0].reference =
            ReferenceTrajectory::constant(target, scenario.duration);
        scenario.persistent_tasks[0].delta = 1e-3;
        scenario.sequence.tasks[0].delta = 1e-3;
        let cfg = HtmpcConfig::for_model(&scenario.model);
        let mut controller = HtmpcController::new(&scenario, cfg);
        let trace = run_closed_loop(&mut controller, &scenario, &SimConfig::default()).unwrap();
        let last = trace.task_errors.last().unwrap();
        assert!(last[0] < 2.5e-3, "final EE error {}", last[0]);
        assert!(last[1] < 6e-3, "final base error {}", last[1]);
    }

    #[test]
    fn traces_are_bitwise_deterministic() {
        let model = crate::model::RobotModel::planar5();
        let params = ScenarioParams::default();
        let scenario = sample_square_wave_tests(11, 1, &model, &params)
            .unwrap()
            .remove(0);
        let cfg = HtmpcConfig::for_model(&model);
        let sim = SimConfig {
            duration: Some(3.0),
            ..SimConfig::default()
        };
        let run = |scenario: &Scenario| {
            let mut controller = HtmpcController::new(scenario, cfg.clone());
            run_closed_loop(&mut controller, scenario, &sim).unwrap()
        };
        let a = run(&scenario);
        let b = run(&scenario);
        assert_eq!(a.samples.len(), b.samples.len());
        for (sa, sb) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(sa.q, sb.q);
            assert_eq!(sa.v, sb.v);
            assert_eq!(sa.command, sb.command);
        }
    }

    #[test]
    fn plant_never_teleports() {
        let model = crate::model::RobotModel::planar5();
        let params = ScenarioParams::default();
        let scenario = sample_square_wave_tests(12, 1, &model, &params)
            .unwrap()
            .remove(0);
        let cfg = HtmpcConfig::for_model(&model);
        let mut controller = HtmpcController::new(&scenario, cfg);
        let sim = SimConfig {
            duration: Some(4.0),
            ..SimConfig::default()
        };
        let trace = run_closed_loop(&mut controller, &scenario, &sim).unwrap();
        let vmax = model.bounds.v_upper.norm();
        for pair in trace.samples.windows(2) {
            let dq = (&pair[1].q - &pair[0].q).norm();
            assert!(dq <= (1.2 * vmax + 0.1) * sim.sim_dt);
        }
    }

    #[test]
    fn metrics_normalization_and_convergence_marker() {
        // Synthetic exponential decay toward the valley after the switch.
        let model = crate::model::RobotModel::planar5();
        let params = ScenarioParams::default();
        let scenario = sample_square_wave_tests(13, 1, &model, &params)
            .unwrap()
            .remove(0);
        let (peak, switch) = match &scenario.kind {
            ScenarioKind::SquareWave {
                peak, switch_time, ..
            } => (*peak, *switch_time),
            _ => unreachable!(),
        };
        let rate = 0.8;
        let sim_dt = 0.01;
        let steps = (scenario.duration / sim_dt) as usize;
        let base_home = Vector2::new(0.0, 0.0);
        let mut samples = Vec::new();
        let mut task_errors = Vec::new();
        for k in 0..steps {
            let t = k as f64 * sim_dt;
            // Part 1: stay at home (constant error to the peak). Part 2:
            // decay exponentially back toward home from the peak.
            let pos = if t < switch {
                base_home
            } else {
                let w = (-(rate) * (t - switch)).exp();
                Vector2::new(peak.x * w, peak.y * w)
            };
            let mut q = model.q_home.clone();
            q[0] = pos.x;
            q[1] = pos.y;
            samples.push(Sample {
                t,
                q,
                v: DVector::zeros(5),
                command: DVector::zeros(5),
                command_is_velocity: false,
                window_offset: 1,
                sequence_done: false,
            });
            task_errors.push(vec![0.0, 0.0]);
        }
        let trace = Trace {
            sim_dt,
            task_names: vec!["ee_hold".into(), "base_wave".into()],
            samples,
            task_errors,
            control: vec![],
            finished_at: None,
            failure: None,
        };
        let report = compute_metrics(&trace, &scenario);
        assert_eq!(report.parts.len(), 2);
        // Part 1 is a constant error: normalized 1 throughout, no convergence.
        assert!((report.parts[0].steady_state - 1.0).abs() < 1e-9);
        assert_eq!(report.parts[0].convergence_time, None);
        // Part 2 decays: convergence time matches ln(20)/rate on the grid.
        let expect = (1.0 / metrics::CONVERGENCE_BAND).ln() / rate;
        let got = report.parts[1].convergence_time.expect("converged");
        assert!(
            (got - expect).abs() < 0.05,
            "convergence {got} vs analytic {expect}"
        );
        // Halved error normalizes to one half.
        let e0 = report.parts[1].initial_error;
        let curve = &report.parts[1].normalized_curve;
        let half_t = switch + (2.0f64).ln() / rate;
        let at_half = curve
            .iter()
            .min_by(|a, b| {
                (a.0 - half_t)
                    .abs()
                    .partial_cmp(&(b.0 - half_t).abs())
                    .unwrap()
            })
            .unwrap();
        assert!((at_half.1 - 0.5).abs() < 0.01);
        assert!(e0 > 1.0);
    }

    #[test]
    fn htidkc_runs_at_its_own_rate() {
        let model = crate::model::RobotModel::planar5();
        let params = ScenarioParams::default();
        let scenario = sample_square_wave_tests(14, 1, &model, &params)
            .unwrap()
            .remove(0);
        let mut controller = HtidkcController::new(&scenario, HtidkcConfig::default());
        let sim = SimConfig {
            duration: Some(1.0),
            ..SimConfig::default()
        };
        let trace = run_closed_loop(&mut controller, &scenario, &sim).unwrap();
        // 1 s at 50 Hz.
        assert_eq!(trace.control.len(), 50);
        assert!(trace.samples.iter().all(|s| s.command_is_velocity));
    }

    #[test]
    fn noise_injection_stays_deterministic() {
        let model = crate::model::RobotModel::planar5();
        let params = ScenarioParams::default();
        let scenario = sample_square_wave_tests(15, 1, &model, &params)
            .unwrap()
            .remove(0);
        let cfg = HtmpcConfig::for_model(&model);
        let sim = SimConfig {
            duration: Some(1.0),
            noise_std: Some(DVector::from_element(10, 1e-4)),
            ..SimConfig::default()
        };
        let run = |scenario: &Scenario| {
            let mut controller = HtmpcController::new(scenario, cfg.clone());
            run_closed_loop(&mut controller, scenario, &sim).unwrap()
        };
        let a = run(&scenario);
        let b = run(&scenario);
        for (sa, sb) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(sa.q, sb.q);
        }
    }

    #[test]
    fn csv_export_shape() {
        let scenario = hold_scenario(true);
        let cfg = HtmpcConfig::for_model(&scenario.model);
        let mut controller = HtmpcController::new(&scenario, cfg);
        let sim = SimConfig {
            duration: Some(0.5),
            ..SimConfig::default()
        };
        let trace = run_closed_loop(&mut controller, &scenario, &sim).unwrap();
        let mut samples_csv = Vec::new();
        trace.write_samples_csv(&mut samples_csv).unwrap();
        let text = String::from_utf8(samples_csv).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("t,q0"));
        assert!(header.ends_with("e_ee_hold,e_base_hold"));
        assert_eq!(lines.count(), trace.samples.len());

        let mut control_csv = Vec::new();
        trace.write_control_csv(&mut control_csv).unwrap();
        let text = String::from_utf8(control_csv).unwrap();
        assert!(text.lines().count() > 1);
    }
}
