//! Closed-loop trace recording and CSV export.

use std::io::{self, Write};

use nalgebra::DVector;

/// One plant sample per simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub command: DVector<f64>,
    pub command_is_velocity: bool,
    pub window_offset: usize,
    pub sequence_done: bool,
}

/// Per-level solver outcome at one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub cost: f64,
    pub alpha: f64,
    pub sqp_iterations: usize,
    pub max_h: f64,
    pub status: String,
}

/// Everything one control tick produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlRecord {
    pub t: f64,
    pub window_offset: usize,
    pub solve_ms: f64,
    pub levels: Vec<LevelRecord>,
    /// `cross_costs[l][i]`: prior-level cost `J_{i+1}` on the level-(l+1)
    /// trajectory.
    pub cross_costs: Vec<Vec<f64>>,
    /// Lexicographic constraint values against each prior level, in the
    /// active form's units.
    pub cross_h: Vec<Vec<f64>>,
    pub level_deltas: Vec<f64>,
    pub failure: Option<String>,
}

/// Full closed-loop log: one sample per simulation step, one control record
/// per tick, and per-task tracking error norms alongside the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub sim_dt: f64,
    pub task_names: Vec<String>,
    pub samples: Vec<Sample>,
    /// `task_errors[s][j]`: error norm of task `j` at sample `s`.
    pub task_errors: Vec<Vec<f64>>,
    pub control: Vec<ControlRecord>,
    pub finished_at: Option<f64>,
    pub failure: Option<String>,
}

impl Trace {
    /// Column layout: `t, q0.., v0.., cmd0.., cmd_is_velocity, window_offset,
    /// sequence_done, e_<task>..` — one row per simulation step.
    pub fn write_samples_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let n = self.samples.first().map_or(0, |s| s.q.len());
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((0..n).map(|j| format!("q{j}")));
        header.extend((0..n).map(|j| format!("v{j}")));
        header.extend((0..n).map(|j| format!("cmd{j}")));
        header.push("cmd_is_velocity".into());
        header.push("window_offset".into());
        header.push("sequence_done".into());
        header.extend(self.task_names.iter().map(|t| format!("e_{t}")));
        writeln!(out, "{}", header.join(","))?;
        for (sample, errors) in self.samples.iter().zip(self.task_errors.iter()) {
            let mut row: Vec<String> = vec![format!("{}", sample.t)];
            row.extend(sample.q.iter().map(|x| format!("{x}")));
            row.extend(sample.v.iter().map(|x| format!("{x}")));
            row.extend(sample.command.iter().map(|x| format!("{x}")));
            row.push(format!("{}", sample.command_is_velocity as u8));
            row.push(format!("{}", sample.window_offset));
            row.push(format!("{}", sample.sequence_done as u8));
            row.extend(errors.iter().map(|x| format!("{x}")));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// One row per (control tick, level): solver statistics plus the
    /// lexicographic audit values against up to two prior levels.
    pub fn write_control_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(
            out,
            "t,window_offset,level,cost,alpha,sqp_iterations,max_h,status,solve_ms,\
             h_prior_1,h_prior_2,delta_1,delta_2,failure"
        )?;
        for record in &self.control {
            for (l, level) in record.levels.iter().enumerate() {
                let h1 = record
                    .cross_h
                    .get(l)
                    .and_then(|row| row.first())
                    .map_or("nan".to_string(), |v| format!("{v}"));
                let h2 = record
                    .cross_h
                    .get(l)
                    .and_then(|row| row.get(1))
                    .map_or("nan".to_string(), |v| format!("{v}"));
                let d1 = record
                    .level_deltas
                    .first()
                    .map_or("nan".to_string(), |v| format!("{v}"));
                let d2 = record
                    .level_deltas
                    .get(1)
                    .map_or("nan".to_string(), |v| format!("{v}"));
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    record.t,
                    record.window_offset,
                    l + 1,
                    level.cost,
                    level.alpha,
                    level.sqp_iterations,
                    level.max_h,
                    level.status,
                    record.solve_ms,
                    h1,
                    h2,
                    d1,
                    d2,
                    record.failure.as_deref().unwrap_or("")
                )?;
            }
        }
        Ok(())
    }
}
