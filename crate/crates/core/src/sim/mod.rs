//! Discrete-event simulation of sessions, anchors and requests.

pub mod config;
mod engine;
pub mod service;
pub mod trace;

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{self, MetricsError, MetricsParams, MetricsReport};

pub use config::{ConfigError, FailureKind, FailureSpec, ScenarioConfig, SetupId};
pub use trace::{Record, Trace, TraceEntry, TraceError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario setup: {0}")]
    Setup(String),
    #[error("internal invariant violated: {0}")]
    InvariantAbort(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub report: MetricsReport,
}

pub fn metrics_params(cfg: &ScenarioConfig) -> MetricsParams {
    MetricsParams {
        recovery_window: ScenarioConfig::dur(cfg.recovery_window_ms),
    }
}

/// Runs one scenario to its horizon and computes its metrics from the trace.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let trace = engine::Engine::new(cfg)?.run()?;
    let report = metrics::compute(&trace, &metrics_params(cfg))?;
    Ok(RunOutput { trace, report })
}

/// Runs independent scenarios in parallel. Results keep the input order.
pub fn run_batch(cfgs: &[ScenarioConfig]) -> Vec<Result<RunOutput, SimError>> {
    cfgs.par_iter().map(run_scenario).collect()
}
