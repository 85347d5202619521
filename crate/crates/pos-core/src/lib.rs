//! Core engine for plan-of-SQLs table question answering.
//!
//! A natural-language question over a table is decomposed into a sequence of
//! atomic steps, each step is converted to a single SQL query, and the queries
//! are executed one after another against an in-memory SQLite database. Every
//! step records which rows, columns, and condition cells of its input table
//! determined its output, so the final answer comes with a step-by-step,
//! cell-level visual explanation. A judging harness scores those explanations
//! with LLM judges and correlates judge preferences with judge accuracy.

pub mod attribution;
pub mod dataset;
pub mod eval;
pub mod explain;
pub mod gateway;
pub mod goldens;
pub mod pipeline;
pub mod planner;
mod sqlscan;
pub mod stepper;
pub mod table;


pub use attribution::{AttributionMap, StepExecution, TrackedTable};
pub use dataset::{DatasetError, Gold, Sample, TaskKind};
pub use gateway::{Backend, CallCounters, CompletionParams, Gateway, GatewayError, TemplateId};
pub use pipeline::{ExecutionTrace, FinalAnswer, RunConfig, RunSummary};
pub use planner::{Plan, PlanError, PlanningMode, Step};
pub use stepper::{ResultTable, SqlError, StepStatus};
pub use table::{CellValue, Column, ColumnType, Table, TableError};
