//! Reference trajectories, tracking tasks and the benchmark scenario
//! generators.

use nalgebra::{DVector, Vector2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{GeneralizedState, ModelError, RobotModel, WorldSphere};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task: {0}")]
    Invalid(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Shape of a reference signal over its duration.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferencePath {
    Constant { value: DVector<f64> },
    SquareWave {
        peak: DVector<f64>,
        valley: DVector<f64>,
        half_period: f64,
    },
}

/// Reference signal `r(t)` defined on `[0, duration]`; sampling beyond the
/// duration clamps to the final value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub path: ReferencePath,
    pub duration: f64,
}

impl ReferenceTrajectory {
    pub fn constant(value: DVector<f64>, duration: f64) -> Self {
        Self {
            path: ReferencePath::Constant { value },
            duration,
        }
    }

    /// Square wave holding `peak` on `[0, half_period)` and `valley` on
    /// `[half_period, 2 half_period]`.
    pub fn square_wave(peak: DVector<f64>, valley: DVector<f64>, half_period: f64) -> Self {
        assert!(half_period > 0.0, "half period must be positive");
        Self {
            duration: 2.0 * half_period,
            path: ReferencePath::SquareWave {
                peak,
                valley,
                half_period,
            },
        }
    }

    pub fn dim(&self) -> usize {
        match &self.path {
            ReferencePath::Constant { value } => value.len(),
            ReferencePath::SquareWave { peak, .. } => peak.len(),
        }
    }

    pub fn sample(&self, t: f64) -> DVector<f64> {
        let t = t.clamp(0.0, self.duration);
        match &self.path {
            ReferencePath::Constant { value } => value.clone(),
            ReferencePath::SquareWave {
                peak,
                valley,
                half_period,
            } => {
                if t < *half_period {
                    peak.clone()
                } else {
                    valley.clone()
                }
            }
        }
    }

    /// Time derivative of the reference; zero almost everywhere for the
    /// piecewise-constant paths supported here.
    pub fn rate(&self, _t: f64) -> DVector<f64> {
        DVector::zeros(self.dim())
    }
}

/// One tracking task: a body point that must follow a reference, with
/// lexicographic tolerance and a completion threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTask {
    pub name: String,
    /// FK point id on the robot.
    pub point: String,
    pub reference: ReferenceTrajectory,
    /// Diagonal of the stage weight matrix.
    pub stage_weight: DVector<f64>,
    /// Diagonal of the terminal weight matrix.
    pub terminal_weight: DVector<f64>,
    /// Lexicographic tolerance, task units (metres).
    pub delta: f64,
    /// Completion threshold on ‖e‖; infinite means time-based completion.
    pub eps_done: f64,
}

impl TrackingTask {
    pub fn validate(&self, model: &RobotModel) -> Result<(), TaskError> {
        let point = model.fk_point(&self.point)?;
        let s = self.reference.dim();
        if s != point.dim {
            return Err(TaskError::Invalid(format!(
                "task `{}`: reference dim {} != point dim {}",
                self.name, s, point.dim
            )));
        }
        if self.stage_weight.len() != s || self.terminal_weight.len() != s {
            return Err(TaskError::Invalid(format!(
                "task `{}`: weight dims must equal task dim {s}",
                self.name
            )));
        }
        if self
            .stage_weight
            .iter()
            .chain(self.terminal_weight.iter())
            .any(|w| *w < 0.0)
        {
            return Err(TaskError::Invalid(format!(
                "task `{}`: weights must be non-negative",
                self.name
            )));
        }
        if !(self.delta > 0.0) {
            return Err(TaskError::Invalid(format!(
                "task `{}`: delta must be positive",
                self.name
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.reference.dim()
    }
}

/// Tracking error `e = f(q) − r(t)`.
pub fn tracking_error(
    model: &RobotModel,
    task: &TrackingTask,
    q: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>, TaskError> {
    let f = model.forward_kinematics(q, &task.point)?;
    Ok(f - task.reference.sample(t))
}

/// Tracking errors of one task along a horizon of stacked states, one per
/// reference sample.
pub fn horizon_errors(
    model: &RobotModel,
    task: &TrackingTask,
    states: &[DVector<f64>],
    refs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, TaskError> {
    if states.len() != refs.len() || states.is_empty() {
        return Err(TaskError::Invalid(
            "states and reference samples must have equal nonzero length".into(),
        ));
    }
    let dof = model.dof();
    states
        .iter()
        .zip(refs.iter())
        .map(|(x, r)| {
            let q = x.rows(0, dof).into_owned();
            Ok(model.forward_kinematics(&q, &task.point)? - r)
        })
        .collect()
}

/// Weighted cost of a precomputed error sequence.
pub fn cost_of_errors(task: &TrackingTask, errors: &[DVector<f64>]) -> f64 {
    let n_steps = errors.len() - 1;
    let mut total = 0.0;
    for (k, e) in errors.iter().enumerate() {
        let w = if k < n_steps {
            &task.stage_weight
        } else {
            &task.terminal_weight
        };
        total += e.iter().zip(w.iter()).map(|(ei, wi)| wi * ei * ei).sum::<f64>();
    }
    0.5 * total
}

/// Accumulated tracking cost over a horizon:
/// `J = ½(Σ_{k<N} ‖e_k‖²_Q + ‖e_N‖²_P)` with errors computed against the
/// provided reference samples (length N+1).
pub fn task_cost(
    model: &RobotModel,
    task: &TrackingTask,
    states: &[DVector<f64>],
    refs: &[DVector<f64>],
) -> Result<f64, TaskError> {
    let errors = horizon_errors(model, task, states, refs)?;
    Ok(cost_of_errors(task, &errors))
}

/// Ordered task list together with the receding window exposed to the
/// controller.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    pub tasks: Vec<TrackingTask>,
    /// 1-based index of the window head.
    pub window_offset: usize,
    /// Number of tasks exposed at once.
    pub window_size: usize,
}

impl TaskSequence {
    pub fn new(tasks: Vec<TrackingTask>, window_size: usize) -> Result<Self, TaskError> {
        let seq = Self {
            tasks,
            window_offset: 1,
            window_size,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.tasks.is_empty() {
            return Err(TaskError::InvalidScenario("empty task sequence".into()));
        }
        if self.window_offset < 1 || self.window_offset > self.tasks.len() {
            return Err(TaskError::InvalidScenario("window offset out of range".into()));
        }
        let max = self.tasks.len() - self.window_offset + 1;
        if self.window_size < 1 || self.window_size > max {
            return Err(TaskError::InvalidScenario(format!(
                "window size {} outside [1, {max}]",
                self.window_size
            )));
        }
        Ok(())
    }

    /// Tasks currently visible to the controller, clipped at the tail.
    pub fn window(&self, offset: usize) -> &[TrackingTask] {
        let start = offset - 1;
        let end = (start + self.window_size).min(self.tasks.len());
        &self.tasks[start..end]
    }
}

/// Extra structure metrics and benchmarks need about a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioKind {
    SquareWave {
        switch_time: f64,
        peak: Vector2<f64>,
        /// Polar coordinates of the peak relative to the home base position.
        peak_angle: f64,
        peak_radius: f64,
    },
    Delivery,
    Custom,
}

/// A complete benchmark instance: model, tasks, obstacles and timing.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: RobotModel,
    /// Tasks always present at the top of the hierarchy, in priority order.
    pub persistent_tasks: Vec<TrackingTask>,
    pub sequence: TaskSequence,
    pub obstacles: Vec<WorldSphere>,
    pub duration: f64,
    pub seed: u64,
    pub kind: ScenarioKind,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), TaskError> {
        for task in self.persistent_tasks.iter().chain(self.sequence.tasks.iter()) {
            task.validate(&self.model)?;
            if task.reference.duration > self.duration + 1e-9 {
                return Err(TaskError::InvalidScenario(format!(
                    "task `{}` reference outlives the scenario",
                    task.name
                )));
            }
        }
        self.sequence.validate()?;
        // Window dimension guidance: the exposed hierarchy must stay below
        // the robot's DoF so redundancy is available for every level.
        let persistent: usize = self.persistent_tasks.iter().map(|t| t.dim()).sum();
        let window: usize = self
            .sequence
            .window(self.sequence.window_offset)
            .iter()
            .map(|t| t.dim())
            .sum();
        if persistent + window > self.model.dof() {
            return Err(TaskError::InvalidScenario(format!(
                "hierarchy dimension {} exceeds robot DoF {}",
                persistent + window,
                self.model.dof()
            )));
        }
        Ok(())
    }

    pub fn start_state(&self) -> GeneralizedState {
        self.model.home_state()
    }

    /// Full task list in priority order: persistent tasks then the sequence.
    pub fn all_tasks(&self) -> Vec<&TrackingTask> {
        self.persistent_tasks
            .iter()
            .chain(self.sequence.tasks.iter())
            .collect()
    }
}

/// Weight defaults for the square-wave and delivery scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub half_period: f64,
    /// Lexicographic tolerance applied to every task, metres.
    pub delta: f64,
    pub ee_stage_weight: f64,
    pub ee_terminal_weight: f64,
    pub base_stage_weight: f64,
    pub base_terminal_weight: f64,
    pub ee_eps_done: f64,
    pub base_eps_done: f64,
    /// Ratio range of peak radius to the base-position reach.
    pub peak_radius_range: (f64, f64),
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            half_period: 8.0,
            delta: 0.01,
            ee_stage_weight: 60.0,
            ee_terminal_weight: 120.0,
            base_stage_weight: 8.0,
            base_terminal_weight: 40.0,
            ee_eps_done: 0.005,
            base_eps_done: 0.01,
            peak_radius_range: (1.1, 2.0),
        }
    }
}

fn ee_hold_task(model: &RobotModel, duration: f64, params: &ScenarioParams) -> TrackingTask {
    let ee_home = model
        .forward_kinematics(&model.q_home, "EE")
        .expect("model has an EE point");
    let s = ee_home.len();
    TrackingTask {
        name: "ee_hold".into(),
        point: "EE".into(),
        reference: ReferenceTrajectory::constant(ee_home, duration),
        stage_weight: DVector::from_element(s, params.ee_stage_weight),
        terminal_weight: DVector::from_element(s, params.ee_terminal_weight),
        delta: params.delta,
        eps_done: params.ee_eps_done,
    }
}

fn base_task(
    name: impl Into<String>,
    reference: ReferenceTrajectory,
    params: &ScenarioParams,
    eps_done: f64,
) -> TrackingTask {
    let s = reference.dim();
    TrackingTask {
        name: name.into(),
        point: "BASE".into(),
        reference,
        stage_weight: DVector::from_element(s, params.base_stage_weight),
        terminal_weight: DVector::from_element(s, params.base_terminal_weight),
        delta: params.delta,
        eps_done,
    }
}

/// Base-position reach while the end effector is held: the farthest the base
/// can sit from its home position with the EE pinned at its home target.
pub fn base_hold_reach(model: &RobotModel) -> Result<f64, TaskError> {
    let arm_reach = model.max_point_reach("EE")?;
    if !(arm_reach > 0.0) {
        return Err(TaskError::InvalidScenario(
            "EE reach is not computable for this model".into(),
        ));
    }
    let ee_home = model.forward_kinematics(&model.q_home, "EE")?;
    let base_home = model.forward_kinematics(&model.q_home, "BASE")?;
    let d0 = ((ee_home[0] - base_home[0]).powi(2) + (ee_home[1] - base_home[1]).powi(2)).sqrt();
    Ok(arm_reach + d0)
}

/// Randomized square-wave tests: the end effector holds its home pose while
/// the base tracks a square wave whose peak lies strictly outside the
/// base-position reach. Deterministic in the seed.
pub fn sample_square_wave_tests(
    seed: u64,
    count: usize,
    model: &RobotModel,
    params: &ScenarioParams,
) -> Result<Vec<Scenario>, TaskError> {
    if count < 1 {
        return Err(TaskError::InvalidScenario("count must be at least 1".into()));
    }
    let reach = base_hold_reach(model)?;
    let base_home = model.forward_kinematics(&model.q_home, "BASE")?;
    let duration = 2.0 * params.half_period;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenarios = Vec::with_capacity(count);
    for i in 0..count {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius =
            rng.random_range(params.peak_radius_range.0..params.peak_radius_range.1) * reach;
        assert!(radius > reach, "sampled peak radius must exceed the reach");
        let peak = DVector::from_vec(vec![
            base_home[0] + radius * angle.cos(),
            base_home[1] + radius * angle.sin(),
        ]);
        let valley = base_home.clone();
        let wave = ReferenceTrajectory::square_wave(peak.clone(), valley, params.half_period);
        let sequence = TaskSequence::new(
            vec![base_task("base_wave", wave, params, params.base_eps_done)],
            1,
        )?;
        let scenario = Scenario {
            name: format!("squarewave_{i:03}"),
            model: model.clone(),
            persistent_tasks: vec![ee_hold_task(model, duration, params)],
            sequence,
            obstacles: vec![],
            duration,
            seed: seed.wrapping_add(i as u64),
            kind: ScenarioKind::SquareWave {
                switch_time: params.half_period,
                peak: Vector2::new(peak[0], peak[1]),
                peak_angle: angle,
                peak_radius: radius,
            },
        };
        scenario.validate()?;
        scenarios.push(scenario);
    }
    Ok(scenarios)
}

/// Rewire a square-wave scenario for the waypoint-fed controller variant:
/// the base square wave is split into two sequential constant-reference
/// waypoint tasks that complete on time alone, so the controller cannot
/// foresee the switch.
pub fn to_waypoint_variant(scenario: &Scenario) -> Scenario {
    let mut out = scenario.clone();
    let mut tasks = Vec::new();
    for task in &scenario.sequence.tasks {
        match &task.reference.path {
            ReferencePath::SquareWave {
                peak,
                valley,
                half_period,
            } => {
                let mut peak_task = task.clone();
                peak_task.name = format!("{}_peak", task.name);
                peak_task.reference =
                    ReferenceTrajectory::constant(peak.clone(), *half_period);
                peak_task.eps_done = f64::INFINITY;
                let mut valley_task = task.clone();
                valley_task.name = format!("{}_valley", task.name);
                valley_task.reference =
                    ReferenceTrajectory::constant(valley.clone(), *half_period);
                valley_task.eps_done = f64::INFINITY;
                tasks.push(peak_task);
                tasks.push(valley_task);
            }
            _ => tasks.push(task.clone()),
        }
    }
    out.sequence = TaskSequence {
        tasks,
        window_offset: 1,
        window_size: scenario.sequence.window_size,
    };
    out
}

/// One leg of a delivery route.
#[derive(Debug, Clone, PartialEq)]
pub enum DeliveryLeg {
    /// Move the base to a planar target.
    Base(Vector2<f64>),
    /// Bring the end effector to a planar target and hold it there.
    Ee(Vector2<f64>),
}

/// Knobs for delivery scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryParams {
    pub scenario: ScenarioParams,
    /// How long the EE must dwell on each waypoint, seconds.
    pub ee_hold: f64,
    pub duration: f64,
}

impl Default for DeliveryParams {
    fn default() -> Self {
        Self {
            scenario: ScenarioParams::default(),
            ee_hold: 2.0,
            duration: 240.0,
        }
    }
}

/// Build a delivery scenario from alternating base and EE legs; the window
/// size selects the control architecture (1 = single-task, 2 = hierarchical).
pub fn delivery_scenario(
    model: &RobotModel,
    legs: &[DeliveryLeg],
    window_size: usize,
    params: &DeliveryParams,
) -> Result<Scenario, TaskError> {
    if legs.is_empty() {
        return Err(TaskError::InvalidScenario("empty delivery route".into()));
    }
    for pair in legs.windows(2) {
        let alternating = matches!(
            (&pair[0], &pair[1]),
            (DeliveryLeg::Base(_), DeliveryLeg::Ee(_)) | (DeliveryLeg::Ee(_), DeliveryLeg::Base(_))
        );
        if !alternating {
            return Err(TaskError::InvalidScenario(
                "delivery legs must alternate between base and EE".into(),
            ));
        }
    }
    let sp = &params.scenario;
    let tasks: Vec<TrackingTask> = legs
        .iter()
        .enumerate()
        .map(|(i, leg)| match leg {
            DeliveryLeg::Base(target) => base_task(
                format!("base_{i:02}"),
                ReferenceTrajectory::constant(
                    DVector::from_vec(vec![target.x, target.y]),
                    0.0,
                ),
                sp,
                sp.base_eps_done,
            ),
            DeliveryLeg::Ee(target) => TrackingTask {
                name: format!("ee_{i:02}"),
                point: "EE".into(),
                reference: ReferenceTrajectory::constant(
                    DVector::from_vec(vec![target.x, target.y]),
                    params.ee_hold,
                ),
                stage_weight: DVector::from_element(2, sp.ee_stage_weight),
                terminal_weight: DVector::from_element(2, sp.ee_terminal_weight),
                delta: sp.delta,
                eps_done: sp.ee_eps_done,
            },
        })
        .collect();
    let scenario = Scenario {
        name: format!("delivery_l{window_size}"),
        model: model.clone(),
        persistent_tasks: vec![],
        sequence: TaskSequence::new(tasks, window_size)?,
        obstacles: vec![],
        duration: params.duration,
        seed: 0,
        kind: ScenarioKind::Delivery,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Default desk-scale route: three stations visited for four rounds, each
/// round alternating a base move with an EE waypoint at the station.
pub fn default_delivery_legs(model: &RobotModel) -> Vec<DeliveryLeg> {
    let ee_home = model
        .forward_kinematics(&model.q_home, "EE")
        .expect("model has an EE point");
    let center = Vector2::new(ee_home[0], ee_home[1]);
    let station_radius = 1.3;
    let stations: Vec<Vector2<f64>> = (0..3)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / 3.0;
            center + station_radius * Vector2::new(angle.cos(), angle.sin())
        })
        .collect();
    let mut legs = Vec::new();
    for round in 0..4 {
        for s in 0..3 {
            let station = stations[(round * 3 + s) % 3];
            // Park the base short of the station so the arm can reach it.
            let toward = (station - center).normalize();
            legs.push(DeliveryLeg::Base(station - 0.55 * toward));
            legs.push(DeliveryLeg::Ee(station));
        }
    }
    legs
}
