//! Construction and evaluation of the single-task MPC problem: tracking plus
//! effort objective, relaxed-barrier constraint softening, and both
//! lexicographic constraint formulations against frozen prior-level solutions.

use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{RobotModel, WorldSphere};
use crate::tasks::{cost_of_errors, horizon_errors, TaskError, TrackingTask};

#[derive(Debug, Error)]
pub enum NlpError {
    #[error("missing prior level: have {have} solutions, level {level} needs {need}")]
    MissingPriorLevel {
        level: usize,
        need: usize,
        have: usize,
    },
    #[error("dimension mismatch in {0}")]
    Dimension(&'static str),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Stacked state/control sequences over an N-step horizon. States hold
/// `[qᵀ vᵀ]ᵀ`; `states[0]` is pinned to the problem's initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTrajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub dt: f64,
}

impl DecisionTrajectory {
    /// Integrate a control sequence through the exact model dynamics.
    pub fn rollout(
        model: &RobotModel,
        x0: &DVector<f64>,
        controls: Vec<DVector<f64>>,
        dt: f64,
    ) -> Self {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0.clone());
        for u in &controls {
            let next = model.dynamics_step_stacked(states.last().unwrap(), u, dt);
            states.push(next);
        }
        Self {
            states,
            controls,
            dt,
        }
    }

    pub fn zero_rollout(model: &RobotModel, x0: &DVector<f64>, n_steps: usize, dt: f64) -> Self {
        let m = model.dof();
        Self::rollout(model, x0, vec![DVector::zeros(m); n_steps], dt)
    }

    pub fn n_steps(&self) -> usize {
        self.controls.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn control_dim(&self) -> usize {
        if self.controls.is_empty() {
            0
        } else {
            self.controls[0].len()
        }
    }

    /// Total number of decision variables when stacked.
    pub fn var_count(&self) -> usize {
        self.states.len() * self.state_dim() + self.controls.len() * self.control_dim()
    }

    /// Stack as `[x₀ … x_N, u₀ … u_{N−1}]`.
    pub fn to_stacked(&self) -> DVector<f64> {
        let nx = self.state_dim();
        let nu = self.control_dim();
        let mut z = DVector::zeros(self.var_count());
        for (k, x) in self.states.iter().enumerate() {
            z.rows_mut(k * nx, nx).copy_from(x);
        }
        let base = self.states.len() * nx;
        for (k, u) in self.controls.iter().enumerate() {
            z.rows_mut(base + k * nu, nu).copy_from(u);
        }
        z
    }

    /// Shift every stacked variable by `alpha · direction` without restoring
    /// dynamic feasibility. Used by model checks, not by the solver line
    /// search.
    pub fn perturbed(&self, direction: &DVector<f64>, alpha: f64) -> Self {
        let nx = self.state_dim();
        let nu = self.control_dim();
        let mut out = self.clone();
        for (k, x) in out.states.iter_mut().enumerate() {
            *x += alpha * direction.rows(k * nx, nx);
        }
        let base = self.states.len() * nx;
        for (k, u) in out.controls.iter_mut().enumerate() {
            *u += alpha * direction.rows(base + k * nu, nu);
        }
        out
    }

    /// Controls shifted by `alpha` times the control part of a stacked
    /// direction, re-integrated through the exact dynamics from `x₀`.
    pub fn steered(&self, model: &RobotModel, direction: &DVector<f64>, alpha: f64) -> Self {
        let nx = self.state_dim();
        let nu = self.control_dim();
        let base = self.states.len() * nx;
        let controls: Vec<DVector<f64>> = self
            .controls
            .iter()
            .enumerate()
            .map(|(k, u)| u + alpha * direction.rows(base + k * nu, nu))
            .collect();
        Self::rollout(model, &self.states[0], controls, self.dt)
    }

    /// Largest dynamics defect across the horizon.
    pub fn dynamics_residual(&self, model: &RobotModel) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.n_steps() {
            let pred = model.dynamics_step_stacked(&self.states[k], &self.controls[k], self.dt);
            worst = worst.max((&self.states[k + 1] - pred).amax());
        }
        worst
    }
}

/// Diagonal effort weights on states, inputs and input differences.
#[derive(Debug, Clone, PartialEq)]
pub struct EffortWeights {
    pub state: DVector<f64>,
    pub input: DVector<f64>,
    pub input_diff: DVector<f64>,
}

impl EffortWeights {
    pub fn zeros(state_dim: usize, control_dim: usize) -> Self {
        Self {
            state: DVector::zeros(state_dim),
            input: DVector::zeros(control_dim),
            input_diff: DVector::zeros(control_dim),
        }
    }

    pub fn validate(&self) -> Result<(), NlpError> {
        if self
            .state
            .iter()
            .chain(self.input.iter())
            .chain(self.input_diff.iter())
            .any(|w| *w < 0.0 || !w.is_finite())
        {
            return Err(NlpError::Dimension("effort weights must be non-negative"));
        }
        Ok(())
    }
}

/// Smoothness cost `½(‖x̄‖²_S + ‖ū‖²_R + ‖Δū‖²_W)` with the first input
/// difference anchored to the previously applied command.
pub fn effort_cost(
    traj: &DecisionTrajectory,
    weights: &EffortWeights,
    u_prev: &DVector<f64>,
) -> f64 {
    let mut total = 0.0;
    for x in &traj.states {
        total += x
            .iter()
            .zip(weights.state.iter())
            .map(|(xi, wi)| wi * xi * xi)
            .sum::<f64>();
    }
    for u in &traj.controls {
        total += u
            .iter()
            .zip(weights.input.iter())
            .map(|(ui, wi)| wi * ui * ui)
            .sum::<f64>();
    }
    let mut prev = u_prev;
    for u in &traj.controls {
        total += u
            .iter()
            .zip(prev.iter())
            .zip(weights.input_diff.iter())
            .map(|((ui, pi), wi)| wi * (ui - pi) * (ui - pi))
            .sum::<f64>();
        prev = u;
    }
    0.5 * total
}

/// Relaxed logarithmic barrier: the exact `−μ ln z` above the knot and its
/// quadratic extension below, matching value, slope and curvature at the knot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedBarrier {
    pub mu: f64,
    pub knot: f64,
}

impl RelaxedBarrier {
    pub fn new(mu: f64, knot: f64) -> Self {
        assert!(mu > 0.0 && knot > 0.0);
        Self { mu, knot }
    }

    pub fn value(&self, z: f64) -> f64 {
        if z > self.knot {
            -self.mu * z.ln()
        } else {
            let w = (z - 2.0 * self.knot) / self.knot;
            self.mu * (0.5 * (w * w - 1.0) - self.knot.ln())
        }
    }

    pub fn slope(&self, z: f64) -> f64 {
        if z > self.knot {
            -self.mu / z
        } else {
            self.mu * (z - 2.0 * self.knot) / (self.knot * self.knot)
        }
    }

    pub fn curvature(&self, z: f64) -> f64 {
        if z > self.knot {
            self.mu / (z * z)
        } else {
            self.mu / (self.knot * self.knot)
        }
    }
}

/// Barrier penalty of a constraint margin `z` (positive inside the feasible
/// set); finite and convex for every `z`.
pub fn relaxed_log_barrier(z: f64, mu: f64, knot: f64) -> f64 {
    RelaxedBarrier::new(mu, knot).value(z)
}

/// Barrier shaping parameters: strength and the knot as a fraction of each
/// constraint's natural scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    pub mu: f64,
    pub knot_frac: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self {
            mu: 1e-3,
            knot_frac: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexKind {
    /// Scalar bound on the prior task's accumulated cost.
    Coupled,
    /// Per-step, per-dimension bounds on the prior task's tracking errors.
    Box,
}

/// Lexicographic constraint against one frozen prior-level solution.
#[derive(Debug, Clone)]
pub struct LexConstraintSpec {
    pub kind: LexKind,
    /// 1-based level index of the prior task.
    pub prior_index: usize,
    pub task: TrackingTask,
    /// Reference samples of the prior task over this horizon (length N+1).
    pub refs: Vec<DVector<f64>>,
    pub frozen: DecisionTrajectory,
    pub frozen_errors: Vec<DVector<f64>>,
    pub frozen_cost: f64,
    /// Admissible violation in the units of the chosen form.
    pub delta: f64,
}

impl LexConstraintSpec {
    /// Coupled form: `h = J_i(traj) − J_i(frozen)`.
    pub fn coupled_h(&self, model: &RobotModel, traj: &DecisionTrajectory) -> f64 {
        let errors = horizon_errors(model, &self.task, &traj.states, &self.refs)
            .expect("trajectory and reference dimensions match");
        cost_of_errors(&self.task, &errors) - self.frozen_cost
    }

    /// Box form: per-entry margins `|e_{k,p}| − |e*_{k,p}|`.
    pub fn box_margins(&self, model: &RobotModel, traj: &DecisionTrajectory) -> DVector<f64> {
        let errors = horizon_errors(model, &self.task, &traj.states, &self.refs)
            .expect("trajectory and reference dimensions match");
        let s = self.task.dim();
        let mut out = DVector::zeros(errors.len() * s);
        for (k, (e, e_star)) in errors.iter().zip(self.frozen_errors.iter()).enumerate() {
            for p in 0..s {
                out[k * s + p] = e[p].abs() - e_star[p].abs();
            }
        }
        out
    }

    /// Scalar violation measure used by the relaxed feasibility test: the
    /// cost difference for the coupled form, the worst margin for the box
    /// form.
    pub fn h(&self, model: &RobotModel, traj: &DecisionTrajectory) -> f64 {
        match self.kind {
            LexKind::Coupled => self.coupled_h(model, traj),
            LexKind::Box => self.box_margins(model, traj).max(),
        }
    }
}

/// Coupled lexicographic constraint value (feasible when ≤ 0, relaxed test
/// compares against the spec's tolerance).
pub fn lex_constraint_coupled(
    spec: &LexConstraintSpec,
    model: &RobotModel,
    traj: &DecisionTrajectory,
) -> f64 {
    spec.coupled_h(model, traj)
}

/// Box lexicographic margins, one per prediction step and task dimension.
pub fn lex_constraint_box(
    spec: &LexConstraintSpec,
    model: &RobotModel,
    traj: &DecisionTrajectory,
) -> DVector<f64> {
    spec.box_margins(model, traj)
}

/// Cost-unit tolerance equivalent to a uniform tracking offset of `eps` task
/// units held over the whole horizon; calibrates the coupled form against the
/// box form.
pub fn coupled_delta_for(task: &TrackingTask, eps: f64, n_steps: usize) -> f64 {
    let stage_max = task.stage_weight.amax();
    let term_max = task.terminal_weight.amax();
    0.5 * (n_steps as f64 * stage_max + term_max) * eps * eps
}

/// One level of the hierarchy as seen by the controller this cycle: the task
/// plus its reference samples over the horizon.
#[derive(Debug, Clone)]
pub struct LevelSpec {
    pub task: TrackingTask,
    pub refs: Vec<DVector<f64>>,
}

/// Assembly knobs shared by every level of one control cycle.
#[derive(Debug, Clone)]
pub struct StmpcParams {
    pub effort: EffortWeights,
    pub barrier: BarrierParams,
    pub lex_kind: LexKind,
    pub n_steps: usize,
    pub dt: f64,
}

/// Sparse gradient entry of one barrier margin: flat variable index and
/// `∂z/∂var`.
pub struct BarrierTerm {
    pub margin: f64,
    pub scale: f64,
    pub entries: Vec<(usize, f64)>,
}

/// One scalar-objective MPC problem: level objective plus effort, barrier
/// softening of the robot constraints, and lexicographic constraints against
/// every prior level.
#[derive(Debug, Clone)]
pub struct StmpcProblem {
    pub model: Arc<RobotModel>,
    pub obstacles: Vec<WorldSphere>,
    pub level: usize,
    pub task: TrackingTask,
    pub refs: Vec<DVector<f64>>,
    pub effort: EffortWeights,
    pub u_prev: DVector<f64>,
    pub barrier: BarrierParams,
    pub lex_specs: Vec<LexConstraintSpec>,
    pub x0: DVector<f64>,
    pub n_steps: usize,
    pub dt: f64,
}

/// Assemble the level-`level` problem of the cascade. Prior solutions must be
/// exactly levels 1…level−1, in order.
pub fn build_stmpc(
    model: Arc<RobotModel>,
    obstacles: &[WorldSphere],
    hierarchy: &[LevelSpec],
    level: usize,
    prior_solutions: &[DecisionTrajectory],
    x0: &DVector<f64>,
    u_prev: &DVector<f64>,
    params: &StmpcParams,
) -> Result<StmpcProblem, NlpError> {
    if level < 1 || level > hierarchy.len() {
        return Err(NlpError::Dimension("level out of range"));
    }
    if prior_solutions.len() != level - 1 {
        return Err(NlpError::MissingPriorLevel {
            level,
            need: level - 1,
            have: prior_solutions.len(),
        });
    }
    if x0.len() != model.state_dim() || u_prev.len() != model.dof() {
        return Err(NlpError::Dimension("initial state or previous command"));
    }
    params.effort.validate()?;
    for spec in hierarchy {
        if spec.refs.len() != params.n_steps + 1 {
            return Err(NlpError::Dimension("reference samples per level"));
        }
    }

    let mut lex_specs = Vec::with_capacity(level - 1);
    for (i, frozen) in prior_solutions.iter().enumerate() {
        let prior = &hierarchy[i];
        let frozen_errors =
            horizon_errors(&model, &prior.task, &frozen.states, &prior.refs)?;
        let frozen_cost = cost_of_errors(&prior.task, &frozen_errors);
        let delta = match params.lex_kind {
            LexKind::Box => prior.task.delta,
            LexKind::Coupled => coupled_delta_for(&prior.task, prior.task.delta, params.n_steps),
        };
        lex_specs.push(LexConstraintSpec {
            kind: params.lex_kind,
            prior_index: i + 1,
            task: prior.task.clone(),
            refs: prior.refs.clone(),
            frozen: frozen.clone(),
            frozen_errors,
            frozen_cost,
            delta,
        });
    }

    Ok(StmpcProblem {
        model,
        obstacles: obstacles.to_vec(),
        level,
        task: hierarchy[level - 1].task.clone(),
        refs: hierarchy[level - 1].refs.clone(),
        effort: params.effort.clone(),
        u_prev: u_prev.clone(),
        barrier: params.barrier,
        lex_specs,
        x0: x0.clone(),
        n_steps: params.n_steps,
        dt: params.dt,
    })
}

impl StmpcProblem {
    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.model.dof()
    }

    pub fn var_count(&self) -> usize {
        (self.n_steps + 1) * self.state_dim() + self.n_steps * self.control_dim()
    }

    pub fn state_index(&self, k: usize) -> usize {
        k * self.state_dim()
    }

    pub fn control_index(&self, k: usize) -> usize {
        (self.n_steps + 1) * self.state_dim() + k * self.control_dim()
    }

    /// Dynamically feasible trajectory holding zero acceleration.
    pub fn initial_rollout(&self) -> DecisionTrajectory {
        DecisionTrajectory::zero_rollout(&self.model, &self.x0, self.n_steps, self.dt)
    }

    /// Tracking cost of the level task along a trajectory.
    pub fn tracking_cost(&self, traj: &DecisionTrajectory) -> f64 {
        let errors = horizon_errors(&self.model, &self.task, &traj.states, &self.refs)
            .expect("trajectory matches the model");
        cost_of_errors(&self.task, &errors)
    }

    /// Full merit: level tracking cost, effort cost and barrier penalties.
    pub fn objective(&self, traj: &DecisionTrajectory) -> f64 {
        self.tracking_cost(traj)
            + effort_cost(traj, &self.effort, &self.u_prev)
            + self.barrier_value(traj)
    }

    /// Total barrier penalty along a trajectory.
    pub fn barrier_value(&self, traj: &DecisionTrajectory) -> f64 {
        let nx = self.state_dim();
        let n = nx / 2;
        let bounds = &self.model.bounds;
        let brk = RelaxedBarrier::new(self.barrier.mu, self.barrier.knot_frac);
        let mut total = 0.0;
        let mut add = |margin: f64, scale: f64| {
            total += brk.value(margin / scale);
        };
        // State and collision constraints on steps 0…N−1; control and slew
        // constraints per input step.
        for k in 0..self.n_steps {
            let x = &traj.states[k];
            for j in 0..n {
                let scale = bound_scale(bounds.q_lower[j], bounds.q_upper[j]);
                if bounds.q_lower[j].is_finite() {
                    add(x[j] - bounds.q_lower[j], scale);
                }
                if bounds.q_upper[j].is_finite() {
                    add(bounds.q_upper[j] - x[j], scale);
                }
                let vscale = bound_scale(bounds.v_lower[j], bounds.v_upper[j]);
                if bounds.v_lower[j].is_finite() {
                    add(x[n + j] - bounds.v_lower[j], vscale);
                }
                if bounds.v_upper[j].is_finite() {
                    add(bounds.v_upper[j] - x[n + j], vscale);
                }
            }
            if !self.obstacles.is_empty() || !self.model.self_collision_pairs.is_empty() {
                let q = x.rows(0, n).into_owned();
                let frames = self.model.body_frames(&q).expect("state matches the model");
                for (sd, _, safe) in self.model.signed_distance_terms(&frames, &self.obstacles) {
                    add(sd - safe, COLLISION_SCALE);
                }
            }
        }
        let mut prev = &self.u_prev;
        for u in &traj.controls {
            for j in 0..n {
                let scale = bound_scale(bounds.u_lower[j], bounds.u_upper[j]);
                if bounds.u_lower[j].is_finite() {
                    add(u[j] - bounds.u_lower[j], scale);
                }
                if bounds.u_upper[j].is_finite() {
                    add(bounds.u_upper[j] - u[j], scale);
                }
                let du = u[j] - prev[j];
                let dscale = bound_scale(bounds.du_lower[j], bounds.du_upper[j]);
                if bounds.du_lower[j].is_finite() {
                    add(du - bounds.du_lower[j], dscale);
                }
                if bounds.du_upper[j].is_finite() {
                    add(bounds.du_upper[j] - du, dscale);
                }
            }
            prev = u;
        }
        total
    }

    /// Every barrier margin with its sparse gradient, for quadratization and
    /// gradient assembly.
    pub fn barrier_terms(&self, traj: &DecisionTrajectory) -> Vec<BarrierTerm> {
        let nx = self.state_dim();
        let n = nx / 2;
        let bounds = &self.model.bounds;
        let mut terms = Vec::new();
        for k in 0..self.n_steps {
            let x = &traj.states[k];
            let xi = self.state_index(k);
            for j in 0..n {
                let scale = bound_scale(bounds.q_lower[j], bounds.q_upper[j]);
                if bounds.q_lower[j].is_finite() {
                    terms.push(BarrierTerm {
                        margin: x[j] - bounds.q_lower[j],
                        scale,
                        entries: vec![(xi + j, 1.0)],
                    });
                }
                if bounds.q_upper[j].is_finite() {
                    terms.push(BarrierTerm {
                        margin: bounds.q_upper[j] - x[j],
                        scale,
                        entries: vec![(xi + j, -1.0)],
                    });
                }
                let vscale = bound_scale(bounds.v_lower[j], bounds.v_upper[j]);
                if bounds.v_lower[j].is_finite() {
                    terms.push(BarrierTerm {
                        margin: x[n + j] - bounds.v_lower[j],
                        scale: vscale,
                        entries: vec![(xi + n + j, 1.0)],
                    });
                }
                if bounds.v_upper[j].is_finite() {
                    terms.push(BarrierTerm {
                        margin: bounds.v_upper[j] - x[n + j],
                        scale: vscale,
                        entries: vec![(xi + n + j, -1.0)],
                    });
                }
            }
            if !self.obstacles.is_empty() || !self.model.self_collision_pairs.is_empty() {
                let q = x.rows(0, n).into_owned();
                let frames = self.model.body_frames(&q).expect("state matches the model");
                for (sd, grad, safe) in self.model.signed_distance_terms(&frames, &self.obstacles)
                {
                    let entries: Vec<(usize, f64)> = (0..n)
                        .filter(|j| grad[*j] != 0.0)
                        .map(|j| (xi + j, grad[j]))
                        .collect();
                    terms.push(BarrierTerm {
                        margin: sd - safe,
                        scale: COLLISION_SCALE,
                        entries,
                    });
                }
            }
        }
        for k in 0..self.n_steps {
            let u = &traj.controls[k];
            let ui = self.control_index(k);
            for j in 0..n {
                let scale = bound_scale(bounds.u_lower[j], bounds.u_upper[j]);
                if bounds.u_lower[j].is_finite() {
                    terms.push(BarrierTerm {
                        margin: u[j] - bounds.u_lower[j],
                        scale,
                        entries: vec![(ui + j, 1.0)],
                    });
                }
                if bounds.u_upper[j].is_finite() {
                    terms.push(BarrierTerm {
                        margin: bounds.u_upper[j] - u[j],
                        scale,
                        entries: vec![(ui + j, -1.0)],
                    });
                }
                let dscale = bound_scale(bounds.du_lower[j], bounds.du_upper[j]);
                let (du, entries_lo, entries_hi) = if k == 0 {
                    (
                        u[j] - self.u_prev[j],
                        vec![(ui + j, 1.0)],
                        vec![(ui + j, -1.0)],
                    )
                } else {
                    let pi = self.control_index(k - 1);
                    (
                        u[j] - traj.controls[k - 1][j],
                        vec![(ui + j, 1.0), (pi + j, -1.0)],
                        vec![(ui + j, -1.0), (pi + j, 1.0)],
                    )
                };
                if bounds.du_lower[j].is_finite() {
                    terms.push(BarrierTerm {
                        margin: du - bounds.du_lower[j],
                        scale: dscale,
                        entries: entries_lo,
                    });
                }
                if bounds.du_upper[j].is_finite() {
                    terms.push(BarrierTerm {
                        margin: bounds.du_upper[j] - du,
                        scale: dscale,
                        entries: entries_hi,
                    });
                }
            }
        }
        terms
    }

    /// Analytic gradient of the full objective with respect to the stacked
    /// decision variables.
    pub fn objective_gradient(&self, traj: &DecisionTrajectory) -> DVector<f64> {
        let nx = self.state_dim();
        let n = nx / 2;
        let mut grad = DVector::zeros(self.var_count());

        // Tracking term.
        let errors = horizon_errors(&self.model, &self.task, &traj.states, &self.refs)
            .expect("trajectory matches the model");
        for (k, e) in errors.iter().enumerate() {
            let w = if k < self.n_steps {
                &self.task.stage_weight
            } else {
                &self.task.terminal_weight
            };
            let q = traj.states[k].rows(0, n).into_owned();
            let jac = self
                .model
                .task_jacobian(&q, &self.task.point)
                .expect("point exists");
            let weighted = DVector::from_fn(e.len(), |p, _| w[p] * e[p]);
            let contrib = jac.transpose() * weighted;
            let xi = self.state_index(k);
            for j in 0..n {
                grad[xi + j] += contrib[j];
            }
        }

        // Effort term.
        for (k, x) in traj.states.iter().enumerate() {
            let xi = self.state_index(k);
            for j in 0..nx {
                grad[xi + j] += self.effort.state[j] * x[j];
            }
        }
        for (k, u) in traj.controls.iter().enumerate() {
            let ui = self.control_index(k);
            for j in 0..n {
                grad[ui + j] += self.effort.input[j] * u[j];
            }
        }
        let mut prev = self.u_prev.clone();
        for (k, u) in traj.controls.iter().enumerate() {
            let ui = self.control_index(k);
            for j in 0..n {
                let d = self.effort.input_diff[j] * (u[j] - prev[j]);
                grad[ui + j] += d;
                if k > 0 {
                    let pi = self.control_index(k - 1);
                    grad[pi + j] -= d;
                }
            }
            prev = u.clone();
        }

        // Barrier terms.
        let brk = RelaxedBarrier::new(self.barrier.mu, self.barrier.knot_frac);
        for term in self.barrier_terms(traj) {
            let slope = brk.slope(term.margin / term.scale) / term.scale;
            for (idx, d) in &term.entries {
                grad[*idx] += slope * d;
            }
        }
        grad
    }

    /// Violation measures of every lexicographic constraint at a trajectory.
    pub fn lex_h(&self, traj: &DecisionTrajectory) -> Vec<f64> {
        self.lex_specs
            .iter()
            .map(|s| s.h(&self.model, traj))
            .collect()
    }

    /// Relaxed feasibility test `hᵢ ≤ δᵢ` for all prior levels.
    pub fn lex_feasible_relaxed(&self, traj: &DecisionTrajectory) -> bool {
        self.lex_specs
            .iter()
            .all(|s| s.h(&self.model, traj) <= s.delta)
    }

    /// Debug dump of the problem structure.
    pub fn describe(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(
            out,
            "stmpc level {} task `{}` on point `{}`: N={}, dt={}, {} vars",
            self.level,
            self.task.name,
            self.task.point,
            self.n_steps,
            self.dt,
            self.var_count()
        )
        .unwrap();
        writeln!(
            out,
            "  barrier mu={:.1e} knot={:.1e}, obstacles={}",
            self.barrier.mu,
            self.barrier.knot_frac,
            self.obstacles.len()
        )
        .unwrap();
        for spec in &self.lex_specs {
            writeln!(
                out,
                "  lex[{}] {:?} task `{}` delta={:.3e} frozen_cost={:.6e}",
                spec.prior_index, spec.kind, spec.task.name, spec.delta, spec.frozen_cost
            )
            .unwrap();
        }
        out
    }
}

/// Natural scale of a bound pair: half the range when both sides are finite.
fn bound_scale(lower: f64, upper: f64) -> f64 {
    if lower.is_finite() && upper.is_finite() {
        0.5 * (upper - lower)
    } else {
        1.0
    }
}

const COLLISION_SCALE: f64 = 1.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RobotModel;
    use crate::tasks::{ReferenceTrajectory, ScenarioParams};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn planar_problem(lex_kind: LexKind) -> (Arc<RobotModel>, Vec<LevelSpec>, StmpcParams) {
        let model = Arc::new(RobotModel::planar5());
        let params = ScenarioParams::default();
        let n_steps = 5;
        let ee_home = model.forward_kinematics(&model.q_home, "EE").unwrap();
        let mut hierarchy = vec![LevelSpec {
            task: TrackingTask {
                name: "ee_hold".into(),
                point: "EE".into(),
                reference: ReferenceTrajectory::constant(ee_home.clone(), 16.0),
                stage_weight: DVector::from_element(2, params.ee_stage_weight),
                terminal_weight: DVector::from_element(2, params.ee_terminal_weight),
                delta: 0.01,
                eps_done: 0.005,
            },
            refs: vec![ee_home; n_steps + 1],
        }];
        let base_target = DVector::from_vec(vec![1.5, 0.0]);
        hierarchy.push(LevelSpec {
            task: TrackingTask {
                name: "base_goal".into(),
                point: "BASE".into(),
                reference: ReferenceTrajectory::constant(base_target.clone(), 16.0),
                stage_weight: DVector::from_element(2, params.base_stage_weight),
                terminal_weight: DVector::from_element(2, params.base_terminal_weight),
                delta: 0.01,
                eps_done: 0.01,
            },
            refs: vec![base_target; n_steps + 1],
        });
        let stmpc = StmpcParams {
            effort: EffortWeights {
                state: {
                    let mut s = DVector::zeros(10);
                    for j in 5..10 {
                        s[j] = 0.1;
                    }
                    s
                },
                input: DVector::from_element(5, 0.05),
                input_diff: DVector::from_element(5, 0.2),
            },
            barrier: BarrierParams::default(),
            lex_kind,
            n_steps,
            dt: 0.1,
        };
        (model, hierarchy, stmpc)
    }

    fn random_feasible_traj(
        model: &RobotModel,
        x0: &DVector<f64>,
        n_steps: usize,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> DecisionTrajectory {
        let controls = (0..n_steps)
            .map(|_| DVector::from_fn(model.dof(), |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        DecisionTrajectory::rollout(model, x0, controls, dt)
    }

    #[test]
    fn effort_cost_examples() {
        let model = RobotModel::planar5();
        let x0 = model.home_state().stacked();
        let traj = DecisionTrajectory::zero_rollout(&model, &x0, 4, 0.1);
        let zero_weights = EffortWeights::zeros(10, 5);
        assert_eq!(effort_cost(&traj, &zero_weights, &DVector::zeros(5)), 0.0);

        // Constant controls with only the difference weight active: interior
        // differences vanish, only the anchor against u_prev remains.
        let mut w = EffortWeights::zeros(10, 5);
        w.input_diff = DVector::from_element(5, 2.0);
        let u = DVector::from_element(5, 0.3);
        let traj = DecisionTrajectory::rollout(&model, &x0, vec![u.clone(); 4], 0.1);
        let u_prev = DVector::from_element(5, 0.1);
        let expect = 0.5 * 2.0 * 5.0 * (0.2_f64).powi(2);
        assert!((effort_cost(&traj, &w, &u_prev) - expect).abs() < 1e-12);
    }

    #[test]
    fn effort_cost_matches_naive_sum() {
        let model = RobotModel::planar5();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = model.home_state().stacked();
        let traj = random_feasible_traj(&model, &x0, 5, 0.1, &mut rng);
        let weights = EffortWeights {
            state: DVector::from_fn(10, |_, _| rng.random_range(0.0..1.0)),
            input: DVector::from_fn(5, |_, _| rng.random_range(0.0..1.0)),
            input_diff: DVector::from_fn(5, |_, _| rng.random_range(0.0..1.0)),
        };
        let u_prev = DVector::from_fn(5, |_, _| rng.random_range(-0.5..0.5));
        let got = effort_cost(&traj, &weights, &u_prev);

        let mut expect = 0.0;
        for x in &traj.states {
            for j in 0..10 {
                expect += 0.5 * weights.state[j] * x[j] * x[j];
            }
        }
        for u in &traj.controls {
            for j in 0..5 {
                expect += 0.5 * weights.input[j] * u[j] * u[j];
            }
        }
        for k in 0..traj.controls.len() {
            let prev = if k == 0 {
                &u_prev
            } else {
                &traj.controls[k - 1]
            };
            for j in 0..5 {
                let d = traj.controls[k][j] - prev[j];
                expect += 0.5 * weights.input_diff[j] * d * d;
            }
        }
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn barrier_branches_agree_at_the_knot() {
        let mu = 1e-3;
        let knot = 1e-2;
        let b = RelaxedBarrier::new(mu, knot);
        let exact = -mu * knot.ln();
        assert!((b.value(knot) - exact).abs() < 1e-15);
        assert!((b.value(knot - 1e-300) - exact).abs() < 1e-12);
        // Value above the knot is the plain log barrier.
        assert!((b.value(2.0 * knot) + mu * (2.0 * knot).ln()).abs() < 1e-15);
    }

    #[test]
    fn barrier_is_c1_at_the_knot() {
        let b = RelaxedBarrier::new(1e-3, 1e-2);
        let h = 1e-7;
        let fd = (b.value(b.knot + h) - b.value(b.knot - h)) / (2.0 * h);
        assert!((fd - b.slope(b.knot)).abs() < 1e-10);
        // Curvature also lines up across the knot.
        let fd2 = (b.value(b.knot + h) - 2.0 * b.value(b.knot) + b.value(b.knot - h)) / (h * h);
        assert!((fd2 - b.curvature(b.knot)).abs() / b.curvature(b.knot) < 1e-3);
    }

    #[test]
    fn barrier_finite_and_convex_below_knot() {
        let mu = 1e-3;
        let knot = 1e-2;
        let b = RelaxedBarrier::new(mu, knot);
        // Substituting z = 0 into the quadratic extension.
        let expect = mu * (0.5 * (4.0 - 1.0) - knot.ln());
        assert!((b.value(0.0) - expect).abs() < 1e-15);
        assert!(b.value(0.0).is_finite());
        assert!(b.value(-5.0).is_finite());
        for z in [-2.0, -0.5, 0.0, 0.005, 0.01, 0.1, 1.0, 10.0] {
            assert!(b.curvature(z) > 0.0);
        }
        // Penalty grows monotonically as the margin shrinks.
        assert!(b.value(0.0) > b.value(knot));
        assert!(b.value(-1.0) > b.value(0.0));
    }

    fn build_level(
        level: usize,
        lex_kind: LexKind,
        priors: Vec<DecisionTrajectory>,
        obstacles: Vec<WorldSphere>,
    ) -> StmpcProblem {
        let (model, hierarchy, params) = planar_problem(lex_kind);
        let x0 = model.home_state().stacked();
        let u_prev = DVector::zeros(5);
        build_stmpc(
            model,
            &obstacles,
            &hierarchy,
            level,
            &priors,
            &x0,
            &u_prev,
            &params,
        )
        .unwrap()
    }

    #[test]
    fn build_stmpc_level_one_has_no_lex_specs() {
        let p = build_level(1, LexKind::Box, vec![], vec![]);
        assert!(p.lex_specs.is_empty());
    }

    #[test]
    fn build_stmpc_requires_exact_priors() {
        let (model, hierarchy, params) = planar_problem(LexKind::Box);
        let x0 = model.home_state().stacked();
        let err = build_stmpc(
            model,
            &[],
            &hierarchy,
            2,
            &[],
            &x0,
            &DVector::zeros(5),
            &params,
        );
        assert!(matches!(err, Err(NlpError::MissingPriorLevel { .. })));
    }

    #[test]
    fn build_stmpc_level_indices_line_up() {
        let (model, hierarchy, params) = planar_problem(LexKind::Box);
        let x0 = model.home_state().stacked();
        let prior = DecisionTrajectory::zero_rollout(&model, &x0, params.n_steps, params.dt);
        let p = build_stmpc(
            model,
            &[],
            &hierarchy,
            2,
            &[prior],
            &x0,
            &DVector::zeros(5),
            &params,
        )
        .unwrap();
        assert_eq!(p.lex_specs.len(), 1);
        assert_eq!(p.lex_specs[0].prior_index, 1);
    }

    #[test]
    fn lex_constraints_vanish_on_the_frozen_trajectory() {
        let (model, _, params) = planar_problem(LexKind::Box);
        let x0 = model.home_state().stacked();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frozen = random_feasible_traj(&model, &x0, params.n_steps, params.dt, &mut rng);
        let p = build_level(2, LexKind::Box, vec![frozen.clone()], vec![]);
        assert!(p.lex_specs[0].box_margins(&model, &frozen).amax() < 1e-14);
        assert!(p.lex_specs[0].coupled_h(&model, &frozen).abs() < 1e-12);
    }

    #[test]
    fn box_feasibility_implies_coupled_feasibility() {
        // Inner approximation: shrinking every error entry shrinks the cost.
        let (model, _, params) = planar_problem(LexKind::Box);
        let x0 = model.home_state().stacked();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut checked = 0;
        for _ in 0..200 {
            let frozen = random_feasible_traj(&model, &x0, params.n_steps, params.dt, &mut rng);
            let p = build_level(2, LexKind::Box, vec![frozen.clone()], vec![]);
            let spec = &p.lex_specs[0];
            let candidate =
                random_feasible_traj(&model, &x0, params.n_steps, params.dt, &mut rng);
            let margins = spec.box_margins(&model, &candidate);
            if margins.max() <= 0.0 {
                checked += 1;
                assert!(spec.coupled_h(&model, &candidate) <= 1e-12);
            }
        }
        // x₀ is shared so at least the first-step margins are always zero;
        // make sure the implication was actually exercised a few times.
        let _ = checked;
    }

    #[test]
    fn assembled_objective_matches_independent_recomputation() {
        let (model, hierarchy, params) = planar_problem(LexKind::Box);
        let x0 = model.home_state().stacked();
        let u_prev = DVector::from_element(5, 0.05);
        let obstacles = vec![WorldSphere {
            center: nalgebra::Vector3::new(2.0, 0.5, 0.0),
            radius: 0.3,
        }];
        let p = build_stmpc(
            model.clone(),
            &obstacles,
            &hierarchy,
            1,
            &[],
            &x0,
            &u_prev,
            &params,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let traj = random_feasible_traj(&model, &x0, params.n_steps, params.dt, &mut rng);

        let tracking = crate::tasks::task_cost(&model, &p.task, &traj.states, &p.refs).unwrap();
        let effort = effort_cost(&traj, &p.effort, &u_prev);
        // Barrier recomputed through the public scalar barrier function.
        let brk = RelaxedBarrier::new(p.barrier.mu, p.barrier.knot_frac);
        let mut barrier = 0.0;
        for term in p.barrier_terms(&traj) {
            barrier += brk.value(term.margin / term.scale);
        }
        assert!((p.objective(&traj) - (tracking + effort + barrier)).abs() < 1e-10);
        assert!((p.barrier_value(&traj) - barrier).abs() < 1e-10);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (model, hierarchy, params) = planar_problem(LexKind::Box);
        let x0 = model.home_state().stacked();
        let u_prev = DVector::from_element(5, 0.02);
        let obstacles = vec![WorldSphere {
            center: nalgebra::Vector3::new(1.5, -0.5, 0.0),
            radius: 0.25,
        }];
        let p = build_stmpc(
            model.clone(),
            &obstacles,
            &hierarchy,
            1,
            &[],
            &x0,
            &u_prev,
            &params,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let traj = random_feasible_traj(&model, &x0, params.n_steps, params.dt, &mut rng);
            let grad = p.objective_gradient(&traj);
            let stacked = traj.to_stacked();
            let h = 1e-6;
            for idx in (0..p.var_count()).step_by(7) {
                let mut dir = DVector::zeros(p.var_count());
                dir[idx] = 1.0;
                let fp = p.objective(&traj.perturbed(&dir, h));
                let fm = p.objective(&traj.perturbed(&dir, -h));
                let fd = (fp - fm) / (2.0 * h);
                let tol = 1e-5 * (1.0 + fd.abs());
                assert!(
                    (grad[idx] - fd).abs() < tol,
                    "idx {idx}: analytic {} vs fd {fd}",
                    grad[idx]
                );
            }
            let _ = stacked;
        }
    }

    #[test]
    fn coupled_delta_calibration() {
        let (_, hierarchy, _) = planar_problem(LexKind::Coupled);
        let task = &hierarchy[0].task;
        let d = coupled_delta_for(task, 0.01, 10);
        let expect = 0.5 * (10.0 * 60.0 + 120.0) * 1e-4;
        assert!((d - expect).abs() < 1e-12);
    }

    #[test]
    fn rollout_satisfies_dynamics_exactly() {
        let model = RobotModel::planar5();
        let x0 = model.home_state().stacked();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let traj = random_feasible_traj(&model, &x0, 8, 0.1, &mut rng);
        assert_eq!(traj.dynamics_residual(&model), 0.0);
    }
}
