//! Procedural object suites, experiment configs, orchestration and reports.
pub mod config;
pub mod objects;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, ExploreConfig, GoalConfig, InferConfig};
pub use objects::{gen_objects, generate, load_suite, Category, CategorySpec, ObjectSuiteSpec};
pub use report::{read_csv, summarize, write_csv, Manifest, ResultRow, Summary};
pub use run::{AxisRecord, Cancel, RunContext, RunOutput, TraceSource};
