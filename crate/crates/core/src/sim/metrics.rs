//! Metric computation over closed-loop traces: normalized per-part base
//! error curves, end-effector statistics, convergence times and execution
//! time.

use serde::Serialize;

use crate::tasks::{Scenario, ScenarioKind};

use super::trace::Trace;

/// Fraction of the initial error that counts as converged.
pub const CONVERGENCE_BAND: f64 = 0.05;
/// Arm Jacobian singular values below this flag a singularity passage.
pub const SINGULARITY_SIGMA: f64 = 0.05;

/// Metrics of one reference segment (square-wave part or whole run).
#[derive(Debug, Clone, Serialize)]
pub struct PartMetrics {
    pub start: f64,
    pub end: f64,
    pub initial_error: f64,
    /// `(t, e/e₀)` samples over the part.
    pub normalized_curve: Vec<(f64, f64)>,
    /// Mean normalized error over the last quarter of the part.
    pub steady_state: f64,
    /// Mean normalized error over the whole part.
    pub mean_normalized: f64,
    /// Seconds from part start until the error enters the band and never
    /// leaves it; `None` marks divergence.
    pub convergence_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub parts: Vec<PartMetrics>,
    pub ee_error_mean_mm: f64,
    pub ee_error_std_mm: f64,
    /// Time the final sequence task completed, when it did.
    pub execution_time: Option<f64>,
    /// Execution time with the simulation duration as fallback.
    pub total_time: f64,
    pub singularity_flagged: bool,
}

fn part_metrics(times: &[f64], errors: &[f64], start: f64, end: f64) -> PartMetrics {
    let idx: Vec<usize> = times
        .iter()
        .enumerate()
        .filter(|(_, t)| **t >= start - 1e-9 && **t < end - 1e-9)
        .map(|(i, _)| i)
        .collect();
    let initial_error = idx.first().map_or(0.0, |i| errors[*i]).max(1e-12);
    let normalized_curve: Vec<(f64, f64)> = idx
        .iter()
        .map(|i| (times[*i], errors[*i] / initial_error))
        .collect();
    let quarter = normalized_curve.len().max(4) * 3 / 4;
    let tail = &normalized_curve[quarter.min(normalized_curve.len().saturating_sub(1))..];
    let steady_state = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|(_, e)| e).sum::<f64>() / tail.len() as f64
    };
    let mean_normalized = if normalized_curve.is_empty() {
        0.0
    } else {
        normalized_curve.iter().map(|(_, e)| e).sum::<f64>() / normalized_curve.len() as f64
    };
    // First entry into the band that is never left before the part ends.
    let mut convergence_time = None;
    for (i, (t, e)) in normalized_curve.iter().enumerate() {
        if *e <= CONVERGENCE_BAND {
            if normalized_curve[i..].iter().all(|(_, e)| *e <= CONVERGENCE_BAND) {
                convergence_time = Some(t - start);
            }
            break;
        }
    }
    PartMetrics {
        start,
        end,
        initial_error,
        normalized_curve,
        steady_state,
        mean_normalized,
        convergence_time,
    }
}

/// Compute the report for one trace. Square-wave scenarios yield two parts
/// (peak tracking and valley return) with base errors measured against the
/// original wave; other scenarios yield no parts and rely on the task error
/// columns.
pub fn compute_metrics(trace: &Trace, scenario: &Scenario) -> MetricsReport {
    let model = &scenario.model;
    let duration = trace.samples.last().map_or(0.0, |s| s.t + trace.sim_dt);
    let times: Vec<f64> = trace.samples.iter().map(|s| s.t).collect();

    let mut parts = Vec::new();
    let mut ee_errors_m: Vec<f64> = Vec::new();
    match &scenario.kind {
        ScenarioKind::SquareWave {
            switch_time, peak, ..
        } => {
            let valley = model
                .forward_kinematics(&model.q_home, "BASE")
                .expect("model has a base point");
            let base_errors: Vec<f64> = trace
                .samples
                .iter()
                .map(|s| {
                    let p = model
                        .forward_kinematics(&s.q, "BASE")
                        .expect("state matches model");
                    let target = if s.t < *switch_time {
                        [peak.x, peak.y]
                    } else {
                        [valley[0], valley[1]]
                    };
                    ((p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2)).sqrt()
                })
                .collect();
            parts.push(part_metrics(&times, &base_errors, 0.0, *switch_time));
            parts.push(part_metrics(&times, &base_errors, *switch_time, duration));

            let ee_home = model
                .forward_kinematics(&model.q_home, "EE")
                .expect("model has an EE point");
            ee_errors_m = trace
                .samples
                .iter()
                .map(|s| {
                    let p = model.forward_kinematics(&s.q, "EE").expect("state ok");
                    (&p - &ee_home).norm()
                })
                .collect();
        }
        _ => {
            // Errors of the head task while it is an end-effector task.
            for (sample, errors) in trace.samples.iter().zip(trace.task_errors.iter()) {
                if sample.sequence_done {
                    continue;
                }
                let head = scenario.persistent_tasks.len() + sample.window_offset - 1;
                if let Some(name) = trace.task_names.get(head) {
                    if name.starts_with("ee") {
                        ee_errors_m.push(errors[head]);
                    }
                }
            }
        }
    }

    let (ee_mean, ee_std) = mean_std(&ee_errors_m);
    let singularity_flagged = trace.samples.iter().any(|s| {
        let jac = model
            .task_jacobian(&s.q, "EE")
            .expect("state matches model");
        let arm = jac
            .columns(3, model.dof() - 3)
            .into_owned()
            .svd(false, false);
        let smin = arm
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        smin < SINGULARITY_SIGMA
    });

    MetricsReport {
        scenario: scenario.name.clone(),
        parts,
        ee_error_mean_mm: ee_mean * 1e3,
        ee_error_std_mm: ee_std * 1e3,
        execution_time: trace.finished_at,
        total_time: trace.finished_at.unwrap_or(duration),
        singularity_flagged,
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / values.len() as f64;
    (mean, var.sqrt())
}

/// One heat-map row per square-wave scenario: peak direction, peak radius and
/// the steady-state normalized valley-return error.
#[derive(Debug, Clone, Serialize)]
pub struct HeatmapRow {
    pub scenario: String,
    pub peak_angle: f64,
    pub peak_radius: f64,
    pub part2_error: f64,
}

pub fn heatmap_row(report: &MetricsReport, scenario: &Scenario) -> Option<HeatmapRow> {
    match &scenario.kind {
        ScenarioKind::SquareWave {
            peak_angle,
            peak_radius,
            ..
        } => Some(HeatmapRow {
            scenario: scenario.name.clone(),
            peak_angle: *peak_angle,
            peak_radius: *peak_radius,
            part2_error: report.parts.get(1).map_or(f64::NAN, |p| p.steady_state),
        }),
        _ => None,
    }
}
