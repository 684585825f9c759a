//! The hierarchical-task MPC cascade: one single-task MPC per level, each
//! constrained by the frozen solutions of every prior level, plus the
//! receding task-window bookkeeping and lexicographic-order utilities.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{RobotModel, WorldSphere};
use crate::nlp::{
    build_stmpc, coupled_delta_for, BarrierParams, DecisionTrajectory, EffortWeights, LevelSpec,
    LexKind, StmpcParams,
};
use crate::qp::QpStatus;
use crate::sqp::{sqp_solve, SqpConfig, SqpError, SqpStatus};
use crate::tasks::{task_cost, tracking_error, Scenario, TaskSequence, TrackingTask};

#[derive(Debug, Error)]
pub enum HtmpcError {
    #[error("empty task window")]
    EmptyWindow,
    #[error(transparent)]
    Nlp(#[from] crate::nlp::NlpError),
    #[error(transparent)]
    Sqp(#[from] SqpError),
    #[error(transparent)]
    Task(#[from] crate::tasks::TaskError),
}

/// Controller configuration. Defaults follow the benchmark setup: ten steps
/// of 0.1 s and a single SQP round per level at a 10 Hz control rate.
#[derive(Debug, Clone)]
pub struct HtmpcConfig {
    pub n_steps: usize,
    pub dt: f64,
    pub control_period: f64,
    pub lex_kind: LexKind,
    pub sqp: SqpConfig,
    pub effort: EffortWeights,
    pub barrier: BarrierParams,
}

impl HtmpcConfig {
    pub fn for_model(model: &RobotModel) -> Self {
        let n = model.dof();
        let mut state = DVector::zeros(2 * n);
        for j in n..2 * n {
            state[j] = 0.1;
        }
        Self {
            n_steps: 10,
            dt: 0.1,
            control_period: 0.1,
            lex_kind: LexKind::Box,
            sqp: SqpConfig::default(),
            effort: EffortWeights {
                state,
                input: DVector::from_element(n, 0.05),
                input_diff: DVector::from_element(n, 0.2),
            },
            barrier: BarrierParams::default(),
        }
    }
}

/// One task of the controller's current hierarchy together with the absolute
/// time at which it entered the window; the task samples its reference on the
/// clock `t − activation`.
#[derive(Debug, Clone)]
pub struct ActiveTask {
    pub task: TrackingTask,
    pub activation: f64,
}

#[derive(Debug, Clone)]
pub struct LevelStats {
    pub status: SqpStatus,
    pub qp_status: Option<QpStatus>,
    pub alpha: f64,
    pub sqp_iterations: usize,
    pub max_h: f64,
    pub solve_ms: f64,
}

/// Everything one control cycle produces: per-level optimal trajectories,
/// the applied command from the deepest level and the cost bookkeeping used
/// by the cascade-safety checks.
#[derive(Debug, Clone)]
pub struct HtmpcOutput {
    pub level_trajectories: Vec<DecisionTrajectory>,
    /// Acceleration command applied to the robot: `u₀` of the deepest level.
    pub command: DVector<f64>,
    /// `level_costs[l]` is task cost `J_{l+1}` of its own level's trajectory.
    pub level_costs: Vec<f64>,
    /// `cross_costs[l][i]` is `J_{i+1}` evaluated on the level-(l+1)
    /// trajectory, for `i ≤ l`.
    pub cross_costs: Vec<Vec<f64>>,
    /// `cross_h[l][i]` is the lexicographic constraint value of prior level
    /// `i+1` evaluated at the level-(l+1) trajectory, in the active form:
    /// the cost difference for the coupled form, the worst error margin for
    /// the box form. The contract is `cross_h[l][i] ≤ level_deltas[i]`.
    pub cross_h: Vec<Vec<f64>>,
    /// Per-level lexicographic tolerance in the active constraint's units.
    pub level_deltas: Vec<f64>,
    pub stats: Vec<LevelStats>,
    pub total_ms: f64,
}

/// Strict lexicographic order: true iff the first differing entry of `a` is
/// smaller.
pub fn lex_less(a: &[f64], b: &[f64]) -> bool {
    assert_eq!(a.len(), b.len(), "lexicographic compare needs equal lengths");
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Shift a previous solution one control step: drop the first control, repeat
/// the last, re-anchor at the measured state and re-integrate the dynamics.
pub fn warm_start_shift(
    previous: &DecisionTrajectory,
    model: &RobotModel,
    x0: &DVector<f64>,
) -> DecisionTrajectory {
    let mut controls: Vec<DVector<f64>> = previous.controls[1..].to_vec();
    if let Some(last) = previous.controls.last() {
        controls.push(last.clone());
    }
    DecisionTrajectory::rollout(model, x0, controls, previous.dt)
}

/// Run the cascade over the active window: level l is initialized from level
/// l−1's solution and constrained by all prior levels. A level whose line
/// search fails keeps the previous level's trajectory, which satisfies every
/// prior constraint.
pub fn htmpc_step(
    model: &Arc<RobotModel>,
    obstacles: &[WorldSphere],
    window: &[ActiveTask],
    t: f64,
    x0: &DVector<f64>,
    u_prev: &DVector<f64>,
    warm_start: Option<&DecisionTrajectory>,
    config: &HtmpcConfig,
) -> Result<HtmpcOutput, HtmpcError> {
    if window.is_empty() {
        return Err(HtmpcError::EmptyWindow);
    }
    let started = Instant::now();

    // Sample every level's reference over the horizon on its own clock.
    let hierarchy: Vec<LevelSpec> = window
        .iter()
        .map(|active| {
            let clock = t - active.activation;
            let refs = (0..=config.n_steps)
                .map(|k| active.task.reference.sample(clock + k as f64 * config.dt))
                .collect();
            LevelSpec {
                task: active.task.clone(),
                refs,
            }
        })
        .collect();

    let params = StmpcParams {
        effort: config.effort.clone(),
        barrier: config.barrier,
        lex_kind: config.lex_kind,
        n_steps: config.n_steps,
        dt: config.dt,
    };

    let guess = match warm_start {
        Some(previous) => warm_start_shift(previous, model, x0),
        None => DecisionTrajectory::zero_rollout(model, x0, config.n_steps, config.dt),
    };

    let levels = window.len();
    let mut solutions: Vec<DecisionTrajectory> = Vec::with_capacity(levels);
    let mut stats = Vec::with_capacity(levels);
    for level in 1..=levels {
        let problem = build_stmpc(
            model.clone(),
            obstacles,
            &hierarchy,
            level,
            &solutions,
            x0,
            u_prev,
            &params,
        )?;
        let init = if level == 1 {
            guess.clone()
        } else {
            solutions[level - 2].clone()
        };
        let level_start = Instant::now();
        let result = sqp_solve(&problem, &init, &config.sqp)?;
        let solve_ms = level_start.elapsed().as_secs_f64() * 1e3;
        let last = result.log.last();
        stats.push(LevelStats {
            status: result.status,
            qp_status: last.map(|r| r.qp_status),
            alpha: last.map_or(0.0, |r| r.alpha),
            sqp_iterations: result.iterations,
            max_h: last.map_or(0.0, |r| r.max_h),
            solve_ms,
        });
        solutions.push(result.trajectory);
    }

    // Cost and constraint bookkeeping for lexicographic-safety audits.
    let mut level_costs: Vec<f64> = Vec::with_capacity(levels);
    let mut cross_costs: Vec<Vec<f64>> = Vec::with_capacity(levels);
    let mut cross_h: Vec<Vec<f64>> = Vec::with_capacity(levels);
    let mut level_errors: Vec<Vec<DVector<f64>>> = Vec::with_capacity(levels);
    for (l, traj) in solutions.iter().enumerate() {
        level_errors.push(crate::tasks::horizon_errors(
            model,
            &hierarchy[l].task,
            &traj.states,
            &hierarchy[l].refs,
        )?);
        let mut cost_row = Vec::with_capacity(l + 1);
        let mut h_row = Vec::with_capacity(l);
        for (i, spec) in hierarchy.iter().take(l + 1).enumerate() {
            let cost = task_cost(model, &spec.task, &traj.states, &spec.refs)?;
            if i < l {
                let h = match config.lex_kind {
                    LexKind::Coupled => cost - cross_costs[i][i],
                    LexKind::Box => {
                        let errors = crate::tasks::horizon_errors(
                            model,
                            &spec.task,
                            &traj.states,
                            &spec.refs,
                        )?;
                        errors
                            .iter()
                            .zip(level_errors[i].iter())
                            .flat_map(|(e, e_star)| {
                                e.iter()
                                    .zip(e_star.iter())
                                    .map(|(a, b)| a.abs() - b.abs())
                            })
                            .fold(f64::NEG_INFINITY, f64::max)
                    }
                };
                h_row.push(h);
            }
            cost_row.push(cost);
        }
        level_costs.push(cost_row[l]);
        cross_costs.push(cost_row);
        cross_h.push(h_row);
    }
    let level_deltas = hierarchy
        .iter()
        .map(|spec| match config.lex_kind {
            LexKind::Box => spec.task.delta,
            LexKind::Coupled => coupled_delta_for(&spec.task, spec.task.delta, config.n_steps),
        })
        .collect();

    let deepest = solutions.last().expect("at least one level");
    let command = deepest.controls[0].clone();
    Ok(HtmpcOutput {
        level_trajectories: solutions,
        command,
        level_costs,
        cross_costs,
        cross_h,
        level_deltas,
        stats,
        total_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runtime cursor over a task sequence: the window offset, per-task
/// activation times and the completion flag.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState {
    pub offset: usize,
    pub activations: Vec<Option<f64>>,
    pub finished: bool,
    pub finished_at: Option<f64>,
}

impl WindowState {
    pub fn new(sequence: &TaskSequence, t0: f64) -> Self {
        let mut state = Self {
            offset: sequence.window_offset,
            activations: vec![None; sequence.tasks.len()],
            finished: false,
            finished_at: None,
        };
        state.activate_window(sequence, t0);
        state
    }

    fn activate_window(&mut self, sequence: &TaskSequence, t: f64) {
        if self.finished {
            return;
        }
        let start = self.offset - 1;
        let end = (start + sequence.window_size).min(sequence.tasks.len());
        for idx in start..end {
            self.activations[idx].get_or_insert(t);
        }
    }

    /// Clock of the task at 1-based sequence index `idx` at time `t`.
    pub fn clock(&self, idx: usize, t: f64) -> f64 {
        t - self.activations[idx - 1].unwrap_or(t)
    }
}

/// Advance the window past completed head tasks: a task completes when its
/// reference time is exhausted and, unless the threshold is infinite, the
/// tracking error is inside the completion band. Returns true if the offset
/// moved.
pub fn advance_window(
    sequence: &TaskSequence,
    state: &mut WindowState,
    model: &RobotModel,
    q: &DVector<f64>,
    t: f64,
) -> bool {
    let mut advanced = false;
    while !state.finished {
        let head = &sequence.tasks[state.offset - 1];
        let clock = state.clock(state.offset, t);
        if clock + 1e-9 < head.reference.duration {
            break;
        }
        if head.eps_done.is_finite() {
            let error = tracking_error(model, head, q, clock)
                .expect("task validated against the model");
            if error.norm() >= head.eps_done {
                break;
            }
        }
        advanced = true;
        if state.offset == sequence.tasks.len() {
            state.finished = true;
            state.finished_at = Some(t);
        } else {
            state.offset += 1;
            state.activate_window(sequence, t);
        }
    }
    advanced
}

/// The hierarchy the controller sees right now: persistent tasks first, then
/// the current window.
pub fn active_hierarchy(scenario: &Scenario, state: &WindowState) -> Vec<ActiveTask> {
    let mut out: Vec<ActiveTask> = scenario
        .persistent_tasks
        .iter()
        .map(|task| ActiveTask {
            task: task.clone(),
            activation: 0.0,
        })
        .collect();
    if !state.finished {
        let start = state.offset - 1;
        let end = (start + scenario.sequence.window_size).min(scenario.sequence.tasks.len());
        for idx in start..end {
            out.push(ActiveTask {
                task: scenario.sequence.tasks[idx].clone(),
                activation: state.activations[idx].unwrap_or(0.0),
            });
        }
    }
    out
}
