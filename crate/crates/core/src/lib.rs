//! Hierarchical-task model predictive control for redundant mobile
//! manipulators: a cascade of single-task MPC problems solved by SQP under
//! lexicographic optimality constraints, plus a task-priority inverse
//! differential kinematic baseline and a closed-loop benchmark harness.

pub mod model;
pub mod config;
pub mod htidkc;
pub mod htmpc;
pub mod nlp;
pub mod qp;
pub mod sim;
pub mod sqp;
pub mod tasks;

pub use model::{ControlInput, GeneralizedState, RobotModel, WorldSphere};
pub use qp::{qp_solve, QpSolution, QpStatus, QuadraticProgram};
pub use tasks::{ReferenceTrajectory, Scenario, TaskSequence, TrackingTask};
