// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Fixtures shared by the criterion benches.

use aipaging_core::{run_scenario, PolicyKind, ScenarioConfig, SetupId, Trace};

/// A shipped preset cut to `horizon_ms`.
pub fn fixture(setup: SetupId, policy: PolicyKind, horizon_ms: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::preset(setup);
    c.policy = policy;
    c.horizon_ms = horizon_ms;
    c
}

pub fn fixture_trace(setup: SetupId, policy: PolicyKind, horizon_ms: f64) -> Trace {
    run_scenario(&fixture(setup, policy, horizon_ms))
        .expect("fixture runs")
        .trace
}
