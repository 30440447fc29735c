//! Fault maintenance trees: model, parser, CTMC semantics and analysis.

pub mod analysis;
pub mod ctmc;
pub mod decomposition;
pub mod error;
pub mod model;
pub mod parser;
pub mod semantics;
pub mod sim;
pub mod strategy;

pub use ctmc::{Ctmc, CtmcBuilder, CtmcError};
pub use error::{Error, Result};
pub use model::{CostModel, EbeSpec, FmtModel, GateKind, GateSpec, MaintenancePolicy, Node};
pub use parser::{parse, serialize, ParseError};
pub use semantics::{compile, CompileOptions, CompiledModel};
pub use analysis::{compute_metric, equivalent_failure_rate, AnalysisResult, Metric, MetricQuery, TransientOptions};
pub use decomposition::{abstract_analyze, compare, decompose, ComparisonRow, Decomposition, DecompositionOptions, SubGraph};
pub use sim::{simulate, simulate_runs, summarize, Estimate, RunSummary, SimConfig, SimResult};
pub use strategy::{Strategy, StrategySet};
