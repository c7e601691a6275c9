// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Metrics computed from a finished trace, and the trace oracle.

pub mod oracle;
pub mod replay;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::controller::PolicyKind;
use crate::model::{Backing, SimDuration, SimTime};
use crate::sim::trace::{Record, Served, Trace};

use replay::{intervals, Header, LiveSteering, Replay};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trace incomplete: {0}")]
    Incomplete(&'static str),
    #[error("trace inconsistent: {0}")]
    Inconsistent(String),
    #[error("nothing to aggregate")]
    EmptyInput,
}

/// Per-run metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub policy: PolicyKind,
    pub setup: String,
    pub seed: u64,
    pub horizon_s: f64,
    pub sessions: u32,
    /// Session start to first steering install, ms, one per attached session.
    pub transaction_time_samples: Vec<f64>,
    pub requests: u64,
    pub failed_requests: u64,
    pub request_failure_rate: f64,
    pub injected_failures: u64,
    pub recovered_failures: u64,
    /// `None` when no failure hit a serving anchor.
    pub recovery_success_probability: Option<f64>,
    pub evidence_records: u64,
    /// Evidence records per simulated second.
    pub evidence_traffic_rate: f64,
    pub violation_rate_percent: f64,
    pub relocation_count: u64,
    pub relocation_failures: u64,
    /// Flip to old-path removal, ms.
    pub overlap_samples: Vec<f64>,
    pub overlap_mean_ms: Option<f64>,
    pub overlap_max_ms: Option<f64>,
}

impl MetricsReport {
    pub fn check_ranges(&self) -> bool {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        frac(self.request_failure_rate)
            && self.recovery_success_probability.is_none_or(frac)
            && (0.0..=100.0).contains(&self.violation_rate_percent)
    }
}

/// Knobs that are not recorded in the trace header.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsParams {
    pub recovery_window: SimDuration,
}

impl Default for MetricsParams {
    fn default() -> Self {
        MetricsParams {
            recovery_window: SimDuration::from_ms(2_000),
        }
    }
}

pub fn compute(trace: &Trace, params: &MetricsParams) -> Result<MetricsReport, MetricsError> {
    if !matches!(trace.entries.last().map(|e| &e.record), Some(Record::RunEnd)) {
        return Err(MetricsError::Incomplete("no run_end record"));
    }
    let replay = Replay::build(trace)?;
    let h = &replay.header;
    let horizon_s = SimDuration::from_us(h.horizon.as_us()).as_secs_f64();

    let (requests, failed) = request_counts(trace);
    let (injected, recovered) = recovery_counts(trace, params.recovery_window);
    let evidence = trace
        .iter()
        .filter(|e| matches!(e.record, Record::Evi { .. }) && e.time < h.horizon)
        .count() as u64;
    let (relocations, reloc_failures) = relocation_counts(trace);
    let overlap = overlap_samples(trace, &replay);
    let overlap_max = overlap.iter().copied().max_by(f64::total_cmp);

    Ok(MetricsReport {
        policy: h.policy,
        setup: h.setup.clone(),
        seed: h.seed,
        horizon_s,
        sessions: h.sessions,
        transaction_time_samples: transaction_times(trace),
        requests,
        failed_requests: failed,
        request_failure_rate: ratio(failed, requests).unwrap_or(0.0),
        injected_failures: injected,
        recovered_failures: recovered,
        recovery_success_probability: ratio(recovered, injected),
        evidence_records: evidence,
        evidence_traffic_rate: evidence as f64 / horizon_s,
        violation_rate_percent: violation_rate(&replay),
        relocation_count: relocations,
        relocation_failures: reloc_failures,
        overlap_mean_ms: stats::mean(&overlap),
        overlap_max_ms: overlap_max,
        overlap_samples: overlap,
    })
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn transaction_times(trace: &Trace) -> Vec<f64> {
    let mut started: BTreeMap<u32, SimTime> = BTreeMap::new();
    let mut session_of: BTreeMap<u64, u32> = BTreeMap::new();
    let mut done: BTreeSet<u64> = BTreeSet::new();
    let mut out = Vec::new();
    for e in trace.iter() {
        match &e.record {
            Record::SessionStart { session, .. } => {
                started.entry(*session).or_insert(e.time);
            }
            Record::Identity { session, aisi, .. } => {
                session_of.entry(*aisi).or_insert(*session);
            }
            Record::SteerInstall { aisi, .. } if done.insert(*aisi) => {
                if let Some(t0) = session_of.get(aisi).and_then(|s| started.get(s)) {
                    out.push(e.time.since(*t0).as_ms_f64());
                }
            }
            _ => {}
        }
    }
    out
}

/// Requests and failed requests. Requests censored by the end of the run
/// are excluded from both.
fn request_counts(trace: &Trace) -> (u64, u64) {
    let mut total = 0;
    let mut failed = 0;
    for e in trace.iter() {
        if let Record::Outcome { result, reason, .. } = &e.record {
            if reason.as_deref() == Some("horizon") {
                continue;
            }
            total += 1;
            if *result != Served::Served {
                failed += 1;
            }
        }
    }
    (total, failed)
}

/// Every hard failure of an anchor counts once for each identity whose
/// top-priority route points at it. The failure is recovered when a request
/// from that identity arriving at or after the failure is served within the
/// window.
fn recovery_counts(trace: &Trace, window: SimDuration) -> (u64, u64) {
    let mut live = LiveSteering::default();
    let mut pending: Vec<(u64, SimTime)> = Vec::new();
    for e in trace.iter() {
        live.apply(&e.record);
        if let Record::Inject {
            what,
            anchor: Some(anchor),
            ..
        } = &e.record
        {
            if what == "fail" {
                let hit = live.aisis().filter(|a| live.top_anchor(*a) == Some(anchor.as_str()));
                pending.extend(hit.map(|a| (a, e.time)));
            }
        }
    }
    let mut served: BTreeMap<u64, Vec<(SimTime, SimTime)>> = BTreeMap::new();
    for e in trace.iter() {
        if let Record::Outcome {
            aisi,
            arrived_us,
            result: Served::Served,
            ..
        } = &e.record
        {
            served
                .entry(*aisi)
                .or_default()
                .push((SimTime::from_us(*arrived_us), e.time));
        }
    }
    let recovered = pending
        .iter()
        .filter(|(aisi, f)| {
            served.get(aisi).is_some_and(|v| {
                v.iter()
                    .any(|(arr, done)| *arr >= *f && *done <= *f + window)
            })
        })
        .count() as u64;
    (pending.len() as u64, recovered)
}

fn relocation_counts(trace: &Trace) -> (u64, u64) {
    let mut ok = 0;
    let mut failed = 0;
    for e in trace.iter() {
        if let Record::RelocEnd { done, .. } = e.record {
            if done {
                ok += 1;
            } else {
                failed += 1;
            }
        }
    }
    (ok, failed)
}

/// For each flip, time until the demoted entry disappears.
fn overlap_samples(trace: &Trace, replay: &Replay) -> Vec<f64> {
    let mut out = Vec::new();
    for e in trace.iter() {
        if let Record::SteerFlip {
            aisi,
            demoted: Some(d),
            ..
        } = &e.record
        {
            let removed = replay
                .entries
                .iter()
                .filter(|x| x.aisi == *aisi && x.backing == *d && x.installed <= e.time)
                .filter_map(|x| x.removed)
                .filter(|r| *r >= e.time)
                .min()
                .unwrap_or(replay.header.horizon);
            out.push(removed.since(e.time).as_ms_f64());
        }
    }
    out
}

/// Time-weighted share of (sessions x horizon) during which an installed
/// steering entry lacks a valid backing lease, as a percentage.
pub fn violation_rate(replay: &Replay) -> f64 {
    let h: &Header = &replay.header;
    let horizon = h.horizon;
    let clip = |a: SimTime, b: SimTime| (a.min(horizon), b.min(horizon));

    // Validity per (aisi, anchor), for ungated entries.
    let mut valid_on: BTreeMap<(u64, &str), Vec<intervals::Iv>> = BTreeMap::new();
    for l in replay.leases.values() {
        valid_on
            .entry((l.aisi, l.anchor.as_str()))
            .or_default()
            .push((l.granted, l.valid_until()));
    }
    let valid_on: BTreeMap<_, _> = valid_on
        .into_iter()
        .map(|(k, v)| (k, intervals::normalize(v)))
        .collect();

    let mut bad: BTreeMap<u64, Vec<intervals::Iv>> = BTreeMap::new();
    for x in &replay.entries {
        let installed = clip(x.installed, x.removed.unwrap_or(horizon));
        let uncovered = match x.backing {
            Backing::Lease(id) => match replay.leases.get(&id) {
                Some(l) => intervals::subtract(
                    installed,
                    &intervals::normalize(vec![(l.granted, l.valid_until())]),
                ),
                None => vec![installed],
            },
            Backing::Ungated => {
                let cover = valid_on
                    .get(&(x.aisi, x.anchor.as_str()))
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                intervals::subtract(installed, cover)
            }
        };
        bad.entry(x.aisi).or_default().extend(uncovered);
    }
    let total: u64 = bad
        .into_values()
        .map(|v| intervals::total_us(&intervals::normalize(v)))
        .sum();
    let denom = f64::from(h.sessions) * horizon.as_us() as f64;
    if denom == 0.0 {
        0.0
    } else {
        100.0 * total as f64 / denom
    }
}
