//! Baseline hierarchical task-priority controller at the velocity level:
//! per-task feedback rates tracked through a cascade of small QPs, freezing
//! each solved level's task rates as equality constraints for the levels
//! below, with damping to survive singular arm configurations.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::htmpc::ActiveTask;
use crate::model::RobotModel;
use crate::qp::{qp_solve, QpError, QpStatus, QuadraticProgram};
use crate::tasks::TrackingTask;

#[derive(Debug, Error)]
pub enum HtidkcError {
    #[error("empty task window")]
    EmptyWindow,
    #[error("level {level} QP did not solve: {status:?}")]
    LevelFailed { level: usize, status: QpStatus },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Velocity-level controller configuration. Gains are proportional feedback
/// per tracked FK point, 1/s.
#[derive(Debug, Clone)]
pub struct HtidkcConfig {
    pub control_period: f64,
    pub gains: BTreeMap<String, f64>,
    pub default_gain: f64,
    /// Damping weight on ‖v‖² at every level.
    pub lambda: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    /// Apply the model's velocity bounds in each level's QP.
    pub use_velocity_bounds: bool,
}

impl Default for HtidkcConfig {
    fn default() -> Self {
        let mut gains = BTreeMap::new();
        gains.insert("EE".to_string(), 3.0);
        gains.insert("BASE".to_string(), 0.8);
        Self {
            control_period: 0.02,
            gains,
            default_gain: 1.0,
            lambda: 1e-3,
            qp_tol: 1e-9,
            qp_max_iter: 60,
            use_velocity_bounds: true,
        }
    }
}

impl HtidkcConfig {
    pub fn gain_for(&self, task: &TrackingTask) -> f64 {
        *self.gains.get(&task.point).unwrap_or(&self.default_gain)
    }
}

/// Commanded task-space rate: reference feedforward plus proportional error
/// feedback, `ẋ* = ṙ(t) − K e`.
pub fn desired_task_rate(
    model: &RobotModel,
    task: &TrackingTask,
    gain: f64,
    q: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>, HtidkcError> {
    let error = model.forward_kinematics(q, &task.point)? - task.reference.sample(t);
    Ok(task.reference.rate(t) - gain * error)
}

/// One velocity command from the cascaded task-priority QPs. Level `l`
/// minimizes its own rate residual plus damping subject to the velocity
/// bounds and the frozen task rates of every prior level.
pub fn htidkc_step(
    model: &RobotModel,
    window: &[ActiveTask],
    t: f64,
    q: &DVector<f64>,
    config: &HtidkcConfig,
) -> Result<DVector<f64>, HtidkcError> {
    if window.is_empty() {
        return Err(HtidkcError::EmptyWindow);
    }
    let m = model.dof();
    let transport = model.transport_matrix(q)?;

    // Task-to-velocity maps J_l(q) G(q) and desired rates per level.
    let mut maps: Vec<DMatrix<f64>> = Vec::with_capacity(window.len());
    let mut rates: Vec<DVector<f64>> = Vec::with_capacity(window.len());
    for active in window {
        let jac = model.task_jacobian(q, &active.task.point)?;
        maps.push(&jac * &transport);
        let clock = t - active.activation;
        rates.push(desired_task_rate(
            model,
            &active.task,
            config.gain_for(&active.task),
            q,
            clock,
        )?);
    }

    let mut solution = DVector::zeros(m);
    for level in 0..window.len() {
        let map = &maps[level];
        let mut hessian = map.transpose() * map;
        for j in 0..m {
            hessian[(j, j)] += config.lambda;
        }
        let gradient = -(map.transpose() * &rates[level]);

        let mut eq_rows = DMatrix::zeros(0, m);
        let mut eq_rhs = DVector::zeros(0);
        for prior in 0..level {
            let frozen_rate = &maps[prior] * &solution;
            let offset = eq_rows.nrows();
            eq_rows = eq_rows.insert_rows(offset, maps[prior].nrows(), 0.0);
            eq_rhs = eq_rhs.insert_rows(offset, maps[prior].nrows(), 0.0);
            eq_rows
                .view_mut((offset, 0), (maps[prior].nrows(), m))
                .copy_from(&maps[prior]);
            eq_rhs
                .rows_mut(offset, maps[prior].nrows())
                .copy_from(&frozen_rate);
        }

        let qp = QuadraticProgram {
            hessian,
            gradient,
            eq_matrix: eq_rows,
            eq_rhs,
            in_matrix: DMatrix::zeros(0, m),
            in_rhs: DVector::zeros(0),
            lower: config
                .use_velocity_bounds
                .then(|| model.bounds.v_lower.clone()),
            upper: config
                .use_velocity_bounds
                .then(|| model.bounds.v_upper.clone()),
        };
        let sol = qp_solve(&qp, config.qp_tol, config.qp_max_iter)?;
        match sol.status {
            QpStatus::Optimal | QpStatus::MaxIter => solution = sol.z,
            status => {
                return Err(HtidkcError::LevelFailed {
                    level: level + 1,
                    status,
                })
            }
        }
    }
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bounds, RobotModel};
    use crate::tasks::ReferenceTrajectory;

    fn active(task: TrackingTask) -> ActiveTask {
        ActiveTask {
            task,
            activation: 0.0,
        }
    }

    fn ee_task(model: &RobotModel, target: [f64; 2]) -> TrackingTask {
        let _ = model;
        TrackingTask {
            name: "ee".into(),
            point: "EE".into(),
            reference: ReferenceTrajectory::constant(DVector::from_vec(target.to_vec()), 16.0),
            stage_weight: DVector::from_element(2, 1.0),
            terminal_weight: DVector::from_element(2, 1.0),
            delta: 0.01,
            eps_done: 0.005,
        }
    }

    fn base_task(target: [f64; 2]) -> TrackingTask {
        TrackingTask {
            name: "base".into(),
            point: "BASE".into(),
            reference: ReferenceTrajectory::constant(DVector::from_vec(target.to_vec()), 16.0),
            stage_weight: DVector::from_element(2, 1.0),
            terminal_weight: DVector::from_element(2, 1.0),
            delta: 0.01,
            eps_done: 0.01,
        }
    }

    fn square_wave_task(peak: [f64; 2], valley: [f64; 2]) -> TrackingTask {
        TrackingTask {
            name: "wave".into(),
            point: "BASE".into(),
            reference: ReferenceTrajectory::square_wave(
                DVector::from_vec(peak.to_vec()),
                DVector::from_vec(valley.to_vec()),
                8.0,
            ),
            stage_weight: DVector::from_element(2, 1.0),
            terminal_weight: DVector::from_element(2, 1.0),
            delta: 0.01,
            eps_done: 0.01,
        }
    }

    #[test]
    fn rate_is_zero_on_target_with_constant_reference() {
        let model = RobotModel::planar5();
        let ee_home = model.forward_kinematics(&model.q_home, "EE").unwrap();
        let task = ee_task(&model, [ee_home[0], ee_home[1]]);
        let rate = desired_task_rate(&model, &task, 2.0, &model.q_home, 1.0).unwrap();
        assert!(rate.amax() < 1e-12);
    }

    #[test]
    fn rate_feedback_arithmetic() {
        // Constant reference, scalar-style check: e = +0.1 with K = 2 gives −0.2.
        let model = RobotModel::planar5();
        let base_home = model.forward_kinematics(&model.q_home, "BASE").unwrap();
        let task = base_task([base_home[0] - 0.1, base_home[1]]);
        let rate = desired_task_rate(&model, &task, 2.0, &model.q_home, 0.0).unwrap();
        assert!((rate[0] + 0.2).abs() < 1e-12);
        assert!(rate[1].abs() < 1e-12);
    }

    #[test]
    fn rate_jumps_with_the_square_wave_switch() {
        let model = RobotModel::planar5();
        let task = square_wave_task([2.0, 0.0], [0.0, 0.0]);
        let before = desired_task_rate(&model, &task, 1.5, &model.q_home, 8.0 - 1e-9).unwrap();
        let after = desired_task_rate(&model, &task, 1.5, &model.q_home, 8.0).unwrap();
        // Before the switch e = (−2, 0) so the rate is +3; after it both are
        // zero. The jump equals the gain times the peak-to-valley distance.
        assert!((before[0] - 3.0).abs() < 1e-9);
        assert!((after[0] - before[0] + 3.0).abs() < 1e-9);
    }

    #[test]
    fn single_task_without_damping_recovers_the_pseudoinverse() {
        let model = RobotModel::planar5();
        let task = ee_task(&model, [0.9, 0.7]);
        let window = [active(task.clone())];
        let config = HtidkcConfig {
            lambda: 0.0,
            use_velocity_bounds: false,
            ..HtidkcConfig::default()
        };
        let q = model.q_home.clone();
        let v = htidkc_step(&model, &window, 0.0, &q, &config).unwrap();

        let jac = model.task_jacobian(&q, "EE").unwrap();
        let transport = model.transport_matrix(&q).unwrap();
        let map = &jac * &transport;
        let gain = config.gain_for(&task);
        let rate = desired_task_rate(&model, &task, gain, &q, 0.0).unwrap();
        let pinv = map
            .clone()
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .unwrap();
        let expect = &pinv * &rate;
        assert!((&v - &expect).amax() < 1e-6);
        // The rate residual vanishes on this redundant robot.
        assert!((&map * &v - rate).amax() < 1e-8);
    }

    #[test]
    fn compatible_tasks_reach_both_rates() {
        let model = RobotModel::planar5();
        let window = [
            active(ee_task(&model, [0.75, 0.55])),
            active(base_task([0.1, 0.05])),
        ];
        let config = HtidkcConfig {
            lambda: 1e-9,
            use_velocity_bounds: false,
            ..HtidkcConfig::default()
        };
        let q = model.q_home.clone();
        let v = htidkc_step(&model, &window, 0.0, &q, &config).unwrap();
        let transport = model.transport_matrix(&q).unwrap();
        for active in &window {
            let map = model.task_jacobian(&q, &active.task.point).unwrap() * &transport;
            let rate = desired_task_rate(
                &model,
                &active.task,
                config.gain_for(&active.task),
                &q,
                0.0,
            )
            .unwrap();
            assert!(
                (&map * &v - rate).amax() < 1e-6,
                "task {} residual too large",
                active.task.name
            );
        }
    }

    #[test]
    fn priority_preserved_when_adding_a_lower_task() {
        let model = RobotModel::planar5();
        let primary = ee_task(&model, [1.0, 0.3]);
        let q = model.q_home.clone();
        let config = HtidkcConfig::default();

        let alone = htidkc_step(&model, &[active(primary.clone())], 0.0, &q, &config).unwrap();
        let stacked = htidkc_step(
            &model,
            &[active(primary.clone()), active(base_task([2.0, -1.0]))],
            0.0,
            &q,
            &config,
        )
        .unwrap();

        let transport = model.transport_matrix(&q).unwrap();
        let map = model.task_jacobian(&q, "EE").unwrap() * &transport;
        let r1 = &map * &alone;
        let r2 = &map * &stacked;
        assert!((r1 - r2).amax() < 1e-6);
        // And the secondary actually moves the base.
        assert!((alone.clone() - stacked).amax() > 1e-3 || alone.amax() > 0.0);
    }

    #[test]
    fn damping_bounds_velocity_near_singularity() {
        let mut model = RobotModel::planar5();
        model.bounds = Bounds::unbounded(5);
        // Arm almost fully extended toward +x, EE target far beyond it.
        let q = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.02]);
        let task = ee_task(&model, [4.0, 0.0]);
        let window = [active(task)];
        let mut norms = Vec::new();
        for lambda in [1e-6, 1e-4, 1e-2, 1.0] {
            let config = HtidkcConfig {
                lambda,
                use_velocity_bounds: false,
                ..HtidkcConfig::default()
            };
            let v = htidkc_step(&model, &window, 0.0, &q, &config).unwrap();
            norms.push(v.norm());
        }
        for pair in norms.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "damping must shrink ‖v‖: {norms:?}");
        }
    }

    #[test]
    fn velocity_bounds_clip_the_command() {
        let model = RobotModel::planar5();
        let window = [active(base_task([8.0, 0.0]))];
        let config = HtidkcConfig {
            gains: BTreeMap::new(),
            default_gain: 5.0,
            ..HtidkcConfig::default()
        };
        let v = htidkc_step(&model, &window, 0.0, &model.q_home, &config).unwrap();
        for j in 0..5 {
            assert!(v[j] <= model.bounds.v_upper[j] + 1e-6);
            assert!(v[j] >= model.bounds.v_lower[j] - 1e-6);
        }
        assert!((v[0] - model.bounds.v_upper[0]).abs() < 1e-4, "x velocity saturates");
    }
}
