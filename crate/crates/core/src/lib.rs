//! Intent-driven admission with lease-gated steering and make-before-break
//! relocation, plus the simulator and trace oracle used to evaluate it.

pub mod controller;
pub mod enforcement;
pub mod lease;
pub mod metrics;
pub mod model;
pub mod relocation;
pub mod sim;

pub use controller::{PolicyKind, SessionBehavior};
pub use metrics::oracle::{oracle_check, InvariantViolation, OracleError, ViolationClass};
pub use metrics::stats::{aggregate, Aggregate, Summary};
pub use metrics::{compute, MetricsError, MetricsParams, MetricsReport};
pub use model::{
    Aisi, Aist, Anchor, AnchorId, Asp, Backing, Commit, EviKind, EviRecord, EvidenceLevel, Health,
    LeaseId, LeaseState, RejectCause, SimDuration, SimTime, TierId,
};
pub use sim::{run_batch, run_scenario, RunOutput, ScenarioConfig, SetupId, SimError, Trace};
