//! SQP solver for one single-task MPC problem: quadratize around the current
//! trajectory, solve the QP subproblem, then backtrack along the control
//! direction under the relaxed lexicographic feasibility test.
//!
//! Line-search candidates re-integrate the shifted controls through the exact
//! dynamics, so accepted iterates satisfy the dynamics and initial-state
//! constraints by construction and the merit function needs no constraint
//! penalty: it is the objective (tracking + effort) plus barriers.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::nlp::{DecisionTrajectory, LexKind, RelaxedBarrier, StmpcProblem};
use crate::qp::{qp_solve, QpError, QpStatus, QuadraticProgram};
use crate::tasks::horizon_errors;

#[derive(Debug, Error)]
pub enum SqpError {
    #[error("non-finite derivatives during quadratization")]
    NonFiniteDerivatives,
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpConfig {
    /// QP/line-search rounds per solve.
    pub max_iter: usize,
    /// Backtracking shrink factor.
    pub beta: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Smallest step is betaᵖ with p = alpha_min_pow.
    pub alpha_min_pow: u32,
    /// Direction norm below which the iterate counts as converged.
    pub step_tol: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for SqpConfig {
    fn default() -> Self {
        Self {
            max_iter: 1,
            beta: 0.5,
            armijo_c: 1e-4,
            alpha_min_pow: 8,
            step_tol: 1e-8,
            qp_tol: 1e-8,
            qp_max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    MaxIter,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct SqpIterationRecord {
    pub merit: f64,
    pub alpha: f64,
    pub step_norm: f64,
    /// Worst relaxed lexicographic violation of the accepted iterate.
    pub max_h: f64,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SqpResult {
    pub trajectory: DecisionTrajectory,
    pub status: SqpStatus,
    pub iterations: usize,
    pub merit: f64,
    pub log: Vec<SqpIterationRecord>,
}

/// Second-order model of the problem around `traj`: Gauss-Newton tracking
/// Hessian, exact effort quadratics, second-order barrier expansion,
/// linearized dynamics as equalities and linearized lexicographic constraints
/// shifted by their tolerances.
pub fn quadratize(
    problem: &StmpcProblem,
    traj: &DecisionTrajectory,
) -> Result<QuadraticProgram, SqpError> {
    let nx = problem.state_dim();
    let n = nx / 2;
    let n_steps = problem.n_steps;
    let d = problem.var_count();

    let gradient = problem.objective_gradient(traj);
    let mut hessian = DMatrix::zeros(d, d);

    // Gauss-Newton tracking blocks on the configuration part of each state.
    for k in 0..=n_steps {
        let w = if k < n_steps {
            &problem.task.stage_weight
        } else {
            &problem.task.terminal_weight
        };
        let q = traj.states[k].rows(0, n).into_owned();
        let jac = problem
            .model
            .task_jacobian(&q, &problem.task.point)
            .expect("point exists");
        let xi = problem.state_index(k);
        let s = jac.nrows();
        for a in 0..n {
            for b in a..n {
                let mut acc = 0.0;
                for p in 0..s {
                    acc += jac[(p, a)] * w[p] * jac[(p, b)];
                }
                hessian[(xi + a, xi + b)] += acc;
                if a != b {
                    hessian[(xi + b, xi + a)] += acc;
                }
            }
        }
    }

    // Exact effort quadratics.
    for k in 0..=n_steps {
        let xi = problem.state_index(k);
        for j in 0..nx {
            hessian[(xi + j, xi + j)] += problem.effort.state[j];
        }
    }
    for k in 0..n_steps {
        let ui = problem.control_index(k);
        for j in 0..n {
            hessian[(ui + j, ui + j)] += problem.effort.input[j] + problem.effort.input_diff[j];
            if k > 0 {
                let pi = problem.control_index(k - 1);
                hessian[(pi + j, pi + j)] += problem.effort.input_diff[j];
                hessian[(ui + j, pi + j)] -= problem.effort.input_diff[j];
                hessian[(pi + j, ui + j)] -= problem.effort.input_diff[j];
            }
        }
    }

    // Barrier curvature as outer products of the margin gradients.
    let brk = RelaxedBarrier::new(problem.barrier.mu, problem.barrier.knot_frac);
    for term in problem.barrier_terms(traj) {
        let c = brk.curvature(term.margin / term.scale) / (term.scale * term.scale);
        for (i, di) in &term.entries {
            for (j, dj) in &term.entries {
                hessian[(*i, *j)] += c * di * dj;
            }
        }
    }

    // Linearized dynamics and the pinned initial state.
    let n_eq = (n_steps + 1) * nx;
    let mut eq_matrix = DMatrix::zeros(n_eq, d);
    let mut eq_rhs = DVector::zeros(n_eq);
    for j in 0..nx {
        eq_matrix[(j, j)] = 1.0;
        eq_rhs[j] = problem.x0[j] - traj.states[0][j];
    }
    for k in 0..n_steps {
        let (a, b) = problem.model.dynamics_jacobians(&traj.states[k], traj.dt);
        let row = (k + 1) * nx;
        let xi = problem.state_index(k);
        let xn = problem.state_index(k + 1);
        let ui = problem.control_index(k);
        for r in 0..nx {
            eq_matrix[(row + r, xn + r)] = 1.0;
            for c in 0..nx {
                let v = a[(r, c)];
                if v != 0.0 {
                    eq_matrix[(row + r, xi + c)] = -v;
                }
            }
            for c in 0..n {
                let v = b[(r, c)];
                if v != 0.0 {
                    eq_matrix[(row + r, ui + c)] = -v;
                }
            }
        }
        let predicted =
            problem
                .model
                .dynamics_step_stacked(&traj.states[k], &traj.controls[k], traj.dt);
        for r in 0..nx {
            eq_rhs[row + r] = predicted[r] - traj.states[k + 1][r];
        }
    }

    // Linearized lexicographic constraints, shifted by the tolerance.
    let mut in_rows: Vec<DVector<f64>> = Vec::new();
    let mut in_rhs: Vec<f64> = Vec::new();
    for spec in &problem.lex_specs {
        let errors = horizon_errors(&problem.model, &spec.task, &traj.states, &spec.refs)
            .expect("trajectory matches the model");
        match spec.kind {
            LexKind::Box => {
                let s = spec.task.dim();
                for k in 0..=n_steps {
                    let q = traj.states[k].rows(0, n).into_owned();
                    let jac = problem
                        .model
                        .task_jacobian(&q, &spec.task.point)
                        .expect("point exists");
                    let xi = problem.state_index(k);
                    for p in 0..s {
                        let bound = spec.frozen_errors[k][p].abs() + spec.delta;
                        let e0 = errors[k][p];
                        // e₀ + J δq ≤ bound and −(e₀ + J δq) ≤ bound.
                        let mut row_pos = DVector::zeros(d);
                        let mut row_neg = DVector::zeros(d);
                        for c in 0..n {
                            row_pos[xi + c] = jac[(p, c)];
                            row_neg[xi + c] = -jac[(p, c)];
                        }
                        in_rows.push(row_pos);
                        in_rhs.push(bound - e0);
                        in_rows.push(row_neg);
                        in_rhs.push(bound + e0);
                    }
                }
            }
            LexKind::Coupled => {
                let mut row = DVector::zeros(d);
                let mut cost0 = 0.0;
                for k in 0..=n_steps {
                    let w = if k < n_steps {
                        &spec.task.stage_weight
                    } else {
                        &spec.task.terminal_weight
                    };
                    let q = traj.states[k].rows(0, n).into_owned();
                    let jac = problem
                        .model
                        .task_jacobian(&q, &spec.task.point)
                        .expect("point exists");
                    let e = &errors[k];
                    let weighted = DVector::from_fn(e.len(), |p, _| w[p] * e[p]);
                    let contrib = jac.transpose() * weighted;
                    let xi = problem.state_index(k);
                    for c in 0..n {
                        row[xi + c] += contrib[c];
                    }
                    cost0 += 0.5
                        * e.iter()
                            .zip(w.iter())
                            .map(|(ei, wi)| wi * ei * ei)
                            .sum::<f64>();
                }
                in_rows.push(row);
                in_rhs.push(spec.frozen_cost + spec.delta - cost0);
            }
        }
    }
    let m_in = in_rows.len();
    let mut in_matrix = DMatrix::zeros(m_in, d);
    for (r, row) in in_rows.iter().enumerate() {
        in_matrix.row_mut(r).copy_from(&row.transpose());
    }
    let in_rhs = DVector::from_vec(in_rhs);

    let finite = hessian
        .iter()
        .chain(gradient.iter())
        .chain(eq_matrix.iter())
        .chain(eq_rhs.iter())
        .chain(in_matrix.iter())
        .chain(in_rhs.iter())
        .all(|x| x.is_finite());
    if !finite {
        return Err(SqpError::NonFiniteDerivatives);
    }

    Ok(QuadraticProgram {
        hessian,
        gradient,
        eq_matrix,
        eq_rhs,
        in_matrix,
        in_rhs,
        lower: None,
        upper: None,
    })
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub candidate: Option<DecisionTrajectory>,
    pub merit: f64,
    pub max_h: f64,
}

/// Backtracking line search along the QP direction. A step is accepted when
/// the merit decreases (Armijo) and every prior-level constraint stays within
/// its relaxed tolerance `hᵢ ≤ δᵢ`. Candidates re-integrate the shifted
/// controls so the dynamics hold exactly at every trial point.
pub fn line_search(
    problem: &StmpcProblem,
    traj: &DecisionTrajectory,
    direction: &DVector<f64>,
    config: &SqpConfig,
) -> LineSearchOutcome {
    let merit0 = problem.objective(traj);
    let nu = problem.control_dim();
    let base = (problem.n_steps + 1) * problem.state_dim();
    let control_norm = direction.rows(base, problem.n_steps * nu).amax();
    if control_norm <= f64::EPSILON {
        let max_h = problem
            .lex_h(traj)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        return LineSearchOutcome {
            alpha: 1.0,
            candidate: Some(traj.clone()),
            merit: merit0,
            max_h: if max_h.is_finite() { max_h } else { 0.0 },
        };
    }

    let grad = problem.objective_gradient(traj);
    let descent = grad.dot(direction);

    let mut alpha = 1.0;
    for _ in 0..=config.alpha_min_pow {
        let candidate = traj.steered(&problem.model, direction, alpha);
        let merit = problem.objective(&candidate);
        let sufficient = if descent < 0.0 {
            merit <= merit0 + config.armijo_c * alpha * descent
        } else {
            merit < merit0
        };
        if sufficient {
            let h = problem.lex_h(&candidate);
            let max_h = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lex_ok = h
                .iter()
                .zip(problem.lex_specs.iter())
                .all(|(hi, spec)| *hi <= spec.delta);
            if lex_ok {
                return LineSearchOutcome {
                    alpha,
                    candidate: Some(candidate),
                    merit,
                    max_h: if max_h.is_finite() { max_h } else { 0.0 },
                };
            }
        }
        alpha *= config.beta;
    }

    LineSearchOutcome {
        alpha: 0.0,
        candidate: None,
        merit: merit0,
        max_h: 0.0,
    }
}

/// Iterate quadratize → QP → line search up to `max_iter` rounds and return
/// the best iterate. Every accepted iterate satisfies the relaxed
/// lexicographic constraints of all prior levels.
pub fn sqp_solve(
    problem: &StmpcProblem,
    initial_guess: &DecisionTrajectory,
    config: &SqpConfig,
) -> Result<SqpResult, SqpError> {
    // Re-anchor the guess if it is stale: integrate its controls from the
    // problem's initial state.
    let mut traj = if (&initial_guess.states[0] - &problem.x0).amax() > 0.0
        || initial_guess.dynamics_residual(&problem.model) > 1e-9
    {
        DecisionTrajectory::rollout(
            &problem.model,
            &problem.x0,
            initial_guess.controls.clone(),
            problem.dt,
        )
    } else {
        initial_guess.clone()
    };

    let mut merit = problem.objective(&traj);
    let mut log = Vec::new();
    let mut status = SqpStatus::MaxIter;
    let mut iterations = 0;

    for _ in 0..config.max_iter {
        let qp = quadratize(problem, &traj)?;
        let sol = qp_solve(&qp, config.qp_tol, config.qp_max_iter)?;
        iterations += 1;
        if matches!(sol.status, QpStatus::Infeasible | QpStatus::Unbounded) {
            log.push(SqpIterationRecord {
                merit,
                alpha: 0.0,
                step_norm: 0.0,
                max_h: 0.0,
                qp_status: sol.status,
                qp_iterations: sol.iterations,
            });
            status = SqpStatus::LineSearchFailed;
            break;
        }
        let step_norm = sol.z.amax();
        if step_norm <= config.step_tol * (1.0 + traj.to_stacked().amax()) {
            log.push(SqpIterationRecord {
                merit,
                alpha: 0.0,
                step_norm,
                max_h: 0.0,
                qp_status: sol.status,
                qp_iterations: sol.iterations,
            });
            status = SqpStatus::Converged;
            break;
        }
        let outcome = line_search(problem, &traj, &sol.z, config);
        log.push(SqpIterationRecord {
            merit: outcome.merit,
            alpha: outcome.alpha,
            step_norm,
            max_h: outcome.max_h,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
        });
        log::debug!(
            "sqp level {} iter {}: merit {:.6e} alpha {:.3} step {:.3e} max_h {:.3e}",
            problem.level,
            iterations,
            outcome.merit,
            outcome.alpha,
            step_norm,
            outcome.max_h
        );
        match outcome.candidate {
            Some(candidate) => {
                traj = candidate;
                merit = outcome.merit;
            }
            None => {
                status = SqpStatus::LineSearchFailed;
                break;
            }
        }
    }

    Ok(SqpResult {
        trajectory: traj,
        status,
        iterations,
        merit,
        log,
    })
}
