//! Decision-focused identification of RC thermal models for day-ahead
//! HVAC scheduling: a differentiable QP layer, the scheduler built on it,
//! a nonlinear building plant, and the training and evaluation protocol.

pub mod linalg;
pub mod qp;
pub mod rc;
pub mod scenarios;
pub mod scheduler;
pub mod plant_sim;
pub mod learning;
pub mod config;
pub mod pipeline;
pub mod reporting;

pub use config::{ConfigError, RunConfig};
pub use learning::{DflOutcome, EpochRecord, SplitMetrics, Task, TrainConfig};
pub use linalg::CscMatrix;
pub use plant_sim::{Plant, PlantSpec, SimulationTrace, Transition};
pub use qp::{QpError, QpProblem, QpSolution, QpStatus, SolutionSensitivity};
pub use rc::{ParamLayout, ThetaParams, ZoneTopology};
pub use reporting::{Comparison, MetricsReport, SplitReport};
pub use scenarios::{Clustering, DayScenario};
pub use scheduler::{Capacities, ComfortSchedule, ScheduleResult, Tariff};
