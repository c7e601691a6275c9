// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Brute-force invariant checker. It reads nothing but the trace.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::controller::PolicyKind;
use crate::model::{Backing, LeaseId, LeaseState, SimDuration, SimTime};
use crate::sim::trace::{Record, Reply, Trace};

use super::replay::{intervals, LiveSteering, Replay};
use super::MetricsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationClass {
    LeaseGate,
    MakeBeforeBreak,
    OverlapBound,
    AisiStability,
    CommitTimeout,
    DoubleTerminal,
    ExpiryRemoval,
    FailedRelocation,
}

impl ViolationClass {
    pub const ALL: [ViolationClass; 8] = [
        ViolationClass::LeaseGate,
        ViolationClass::MakeBeforeBreak,
        ViolationClass::OverlapBound,
        ViolationClass::AisiStability,
        ViolationClass::CommitTimeout,
        ViolationClass::DoubleTerminal,
        ViolationClass::ExpiryRemoval,
        ViolationClass::FailedRelocation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationClass::LeaseGate => "lease-gate",
            ViolationClass::MakeBeforeBreak => "make-before-break",
            ViolationClass::OverlapBound => "overlap-bound",
            ViolationClass::AisiStability => "aisi-stability",
            ViolationClass::CommitTimeout => "commit-timeout",
            ViolationClass::DoubleTerminal => "double-terminal",
            ViolationClass::ExpiryRemoval => "expiry-removal",
            ViolationClass::FailedRelocation => "failed-relocation",
        }
    }

    pub fn parse(s: &str) -> Option<ViolationClass> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for ViolationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvariantViolation {
    pub class: ViolationClass,
    pub time: SimTime,
    pub detail: String,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}us: {}", self.class, self.time.as_us(), self.detail)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("malformed trace: {0}")]
    Malformed(String),
}

impl From<MetricsError> for OracleError {
    fn from(e: MetricsError) -> Self {
        OracleError::Malformed(e.to_string())
    }
}

struct Checker<'t> {
    trace: &'t Trace,
    replay: Replay,
    out: Vec<InvariantViolation>,
}

impl Checker<'_> {
    fn report(&mut self, class: ViolationClass, time: SimTime, detail: String) {
        self.out.push(InvariantViolation {
            class,
            time,
            detail,
        });
    }
}

/// Re-derives the safety invariants from the trace. An empty list means the
/// run conforms.
pub fn oracle_check(trace: &Trace) -> Result<Vec<InvariantViolation>, OracleError> {
    if !matches!(trace.entries.last().map(|e| &e.record), Some(Record::RunEnd)) {
        return Err(OracleError::Malformed("no run_end record".into()));
    }
    let replay = Replay::build(trace)?;
    let mut c = Checker {
        trace,
        replay,
        out: Vec::new(),
    };
    let gated = c.replay.header.policy == PolicyKind::AiPaging;
    if gated {
        check_lease_gate(&mut c);
        check_expiry_removal(&mut c);
    }
    check_relocations(&mut c);
    check_identity(&mut c);
    check_commit_timeout(&mut c);
    check_terminal(&mut c);
    c.out.sort_by_key(|v| (v.time, v.class));
    Ok(c.out)
}

/// No steering entry may exist, inside the horizon, outside the validity
/// of its lease.
fn check_lease_gate(c: &mut Checker<'_>) {
    let horizon = c.replay.header.horizon;
    let mut found = Vec::new();
    for x in &c.replay.entries {
        let installed = (
            x.installed.min(horizon),
            x.removed.unwrap_or(horizon).min(horizon),
        );
        let (uncovered, what) = match x.backing {
            Backing::Ungated => (vec![installed], "ungated entry".to_string()),
            Backing::Lease(id) => match c.replay.leases.get(&id) {
                None => (vec![installed], format!("entry backed by unknown lease {id}")),
                Some(l) => (
                    intervals::subtract(
                        installed,
                        &intervals::normalize(vec![(l.granted, l.valid_until())]),
                    ),
                    format!("entry backed by lease {id}"),
                ),
            },
        };
        if let Some((a, b)) = uncovered.first() {
            found.push((
                *a,
                format!(
                    "aisi={} anchor={}: {what} without valid lease for {}us",
                    x.aisi,
                    x.anchor,
                    intervals::total_us(&uncovered).max(b.since(*a).as_us())
                ),
            ));
        }
    }
    for (t, d) in found {
        c.report(ViolationClass::LeaseGate, t, d);
    }
}

/// An expired lease ends exactly at its expiry time, and its steering goes
/// in the same instant.
fn check_expiry_removal(c: &mut Checker<'_>) {
    let horizon = c.replay.header.horizon;
    let mut found = Vec::new();
    for (id, l) in &c.replay.leases {
        match l.ended {
            Some((t, LeaseState::Expired)) => {
                if t != l.expires {
                    found.push((t, format!("lease {id} expired at {}us, due {}us", t.as_us(), l.expires.as_us())));
                }
                for x in &c.replay.entries {
                    if x.backing == Backing::Lease(*id)
                        && x.installed <= t
                        && x.removed.is_none_or(|r| r > t)
                    {
                        found.push((
                            t,
                            format!(
                                "lease {id} expired at {}us but its entry on {} was removed at {}",
                                t.as_us(),
                                x.anchor,
                                x.removed.map_or("never".to_string(), |r| format!("{}us", r.as_us()))
                            ),
                        ));
                    }
                }
            }
            None if l.expires < horizon => {
                found.push((l.expires, format!("lease {id} passed its expiry with no end record")));
            }
            _ => {}
        }
    }
    for (t, d) in found {
        c.report(ViolationClass::ExpiryRemoval, t, d);
    }
}

#[derive(Default)]
struct JobView {
    aisi: u64,
    start: Option<(SimTime, u64)>,
    old: Option<LeaseId>,
    shape_at_start: Vec<(String, i32)>,
}

fn check_relocations(c: &mut Checker<'_>) {
    let td = SimDuration::from_us(c.replay.header.td_us);
    let horizon = c.replay.header.horizon;
    let mut live = LiveSteering::default();
    let mut jobs: BTreeMap<u64, JobView> = BTreeMap::new();
    // Position of each record, for ordering within one timestamp.
    let pos = |t: SimTime, seq: u64| (t, seq);
    let mut installs: BTreeMap<LeaseId, (SimTime, u64)> = BTreeMap::new();
    let mut flips: BTreeMap<LeaseId, (SimTime, u64)> = BTreeMap::new();
    let mut ends: BTreeMap<LeaseId, (SimTime, u64, LeaseState)> = BTreeMap::new();
    let mut renewed_by: BTreeMap<LeaseId, (LeaseId, SimTime)> = BTreeMap::new();
    let mut lease_ends_by_aisi: BTreeMap<u64, Vec<SimTime>> = BTreeMap::new();
    let mut found = Vec::new();

    for e in c.trace.iter() {
        let here = pos(e.time, e.seq);
        match &e.record {
            Record::SteerInstall {
                backing: Backing::Lease(id),
                ..
            } => {
                installs.entry(*id).or_insert(here);
            }
            Record::SteerFlip { aisi, lease, .. } => {
                flips.entry(*lease).or_insert(here);
                if !installs.contains_key(lease) {
                    found.push((
                        ViolationClass::MakeBeforeBreak,
                        e.time,
                        format!("aisi={aisi}: flip to lease {lease} before its entry was installed"),
                    ));
                }
            }
            Record::LeaseGrant {
                lease,
                renews: Some(old),
                ..
            } => {
                renewed_by.insert(*old, (*lease, e.time));
            }
            Record::LeaseEnd { lease, aisi, state } => {
                ends.entry(*lease).or_insert((e.time, e.seq, *state));
                lease_ends_by_aisi.entry(*aisi).or_default().push(e.time);
            }
            Record::RelocStart { aisi, job, old, .. } => {
                jobs.insert(
                    *job,
                    JobView {
                        aisi: *aisi,
                        start: Some(here),
                        old: *old,
                        shape_at_start: live.shape(*aisi),
                    },
                );
            }
            Record::RelocEnd {
                aisi,
                job,
                done,
                new,
                ..
            } => {
                let Some(view) = jobs.remove(job) else {
                    found.push((
                        ViolationClass::FailedRelocation,
                        e.time,
                        format!("aisi={aisi}: end of unknown relocation {job}"),
                    ));
                    live.apply(&e.record);
                    continue;
                };
                let started = view.start.map_or(SimTime::ZERO, |s| s.0);
                if !done {
                    let lease_lost = lease_ends_by_aisi
                        .get(&view.aisi)
                        .is_some_and(|v| v.iter().any(|t| *t >= started));
                    if !lease_lost && live.shape(view.aisi) != view.shape_at_start {
                        found.push((
                            ViolationClass::FailedRelocation,
                            e.time,
                            format!("aisi={aisi}: failed relocation {job} changed steering"),
                        ));
                    }
                } else if let Some(l1) = new {
                    // Gated relocation: install <= flip < release.
                    let Some(&flip) = flips.get(l1) else {
                        found.push((
                            ViolationClass::MakeBeforeBreak,
                            e.time,
                            format!("aisi={aisi}: relocation {job} completed without a flip"),
                        ));
                        live.apply(&e.record);
                        continue;
                    };
                    match installs.get(l1) {
                        Some(&inst) if inst <= flip => {}
                        _ => found.push((
                            ViolationClass::MakeBeforeBreak,
                            flip.0,
                            format!("aisi={aisi}: lease {l1} flipped before install"),
                        )),
                    }
                    if let Some(l) = c.replay.leases.get(l1) {
                        if !l.valid_at(flip.0) {
                            found.push((
                                ViolationClass::MakeBeforeBreak,
                                flip.0,
                                format!("aisi={aisi}: target lease {l1} not valid at flip"),
                            ));
                        }
                    }
                    if let Some(mut old) = view.old {
                        while let Some(&(next, t)) = renewed_by.get(&old) {
                            if t > flip.0 {
                                break;
                            }
                            old = next;
                        }
                        if let Some(&(t, seq, state)) = ends.get(&old) {
                            if state == LeaseState::Released && (t, seq) < flip {
                                found.push((
                                    ViolationClass::MakeBeforeBreak,
                                    t,
                                    format!("aisi={aisi}: old lease {old} released before flip"),
                                ));
                            }
                        }
                        let removed = c
                            .replay
                            .entries
                            .iter()
                            .filter(|x| x.backing == Backing::Lease(old) && x.installed <= flip.0)
                            .map(|x| x.removed.unwrap_or(horizon))
                            .max();
                        if let Some(r) = removed {
                            let overlap = r.since(flip.0);
                            let censored = r == horizon && flip.0 + td >= horizon;
                            if overlap > td && !censored {
                                found.push((
                                    ViolationClass::OverlapBound,
                                    r,
                                    format!(
                                        "aisi={aisi}: old path kept {}us after flip, bound {}us",
                                        overlap.as_us(),
                                        td.as_us()
                                    ),
                                ));
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        live.apply(&e.record);
    }
    for (class, t, d) in found {
        c.report(class, t, d);
    }
}

fn check_identity(c: &mut Checker<'_>) {
    let mut by_session: BTreeMap<u32, u64> = BTreeMap::new();
    let mut by_aisi: BTreeMap<u64, u32> = BTreeMap::new();
    let mut found = Vec::new();
    for e in c.trace.iter() {
        if let Record::Identity { session, aisi, .. } = &e.record {
            if let Some(prev) = by_session.insert(*session, *aisi) {
                found.push((
                    e.time,
                    format!("session {session} re-issued identity: {prev} then {aisi}"),
                ));
            }
            if let Some(other) = by_aisi.insert(*aisi, *session) {
                if other != *session {
                    found.push((e.time, format!("aisi {aisi} issued to sessions {other} and {session}")));
                }
            }
        }
    }
    for (t, d) in found {
        c.report(ViolationClass::AisiStability, t, d);
    }
}

fn check_commit_timeout(c: &mut Checker<'_>) {
    let tc = SimDuration::from_us(c.replay.header.tc_us);
    let mut started: BTreeMap<u64, SimTime> = BTreeMap::new();
    let mut found = Vec::new();
    for e in c.trace.iter() {
        match &e.record {
            Record::TxnStart { txn, .. } => {
                started.insert(*txn, e.time);
            }
            Record::Attempt { aisi, txn, anchor, .. } => {
                if let Some(t0) = started.get(txn) {
                    if e.time.since(*t0) >= tc {
                        found.push((
                            e.time,
                            format!("aisi={aisi} txn={txn}: attempt on {anchor} {}us after start", e.time.since(*t0).as_us()),
                        ));
                    }
                }
            }
            Record::AttemptReply {
                aisi,
                txn,
                reply: Reply::Accept(lease),
                ..
            } => {
                if let Some(t0) = started.get(txn) {
                    if e.time.since(*t0) > tc {
                        found.push((
                            e.time,
                            format!("aisi={aisi} txn={txn}: lease {lease} accepted after the commit timeout"),
                        ));
                    }
                }
            }
            _ => {}
        }
    }
    for (t, d) in found {
        c.report(ViolationClass::CommitTimeout, t, d);
    }
}

fn check_terminal(c: &mut Checker<'_>) {
    let found: Vec<_> = c
        .replay
        .leases
        .iter()
        .filter(|(_, l)| l.extra_ends > 0)
        .map(|(id, l)| {
            (
                l.ended.map_or(SimTime::ZERO, |e| e.0),
                format!("lease {id} reached a terminal state {} times", l.extra_ends + 1),
            )
        })
        .collect();
    for (t, d) in found {
        c.report(ViolationClass::DoubleTerminal, t, d);
    }
}

/// Violation share estimated by sampling every `step`: at each sample, an
/// identity counts when any of its installed entries lacks a valid lease.
/// Deliberately naive; it cross-checks the interval algebra.
pub fn sampled_violation_rate(trace: &Trace, step: SimDuration) -> Result<f64, OracleError> {
    let Some(Record::Run {
        horizon_us,
        sessions,
        ..
    }) = trace.header()
    else {
        return Err(OracleError::Malformed("no run header".into()));
    };
    // (lease, aisi, anchor, from, until)
    let mut leases: Vec<(LeaseId, u64, String, u64, u64)> = Vec::new();
    // (aisi, anchor, backing, from, until)
    let mut entries: Vec<(u64, String, Backing, u64, u64)> = Vec::new();
    for e in trace.iter() {
        let t = e.time.as_us();
        match &e.record {
            Record::LeaseGrant {
                lease,
                aisi,
                anchor,
                expires_us,
                ..
            } => leases.push((*lease, *aisi, anchor.clone(), t, *expires_us)),
            Record::LeaseEnd { lease, .. } => {
                for l in leases.iter_mut().filter(|l| l.0 == *lease) {
                    l.4 = l.4.min(t);
                }
            }
            Record::SteerInstall {
                aisi,
                anchor,
                backing,
                ..
            } => entries.push((*aisi, anchor.clone(), *backing, t, u64::MAX)),
            Record::SteerRemove {
                aisi,
                anchor,
                backing,
            } => {
                if let Some(x) = entries.iter_mut().rev().find(|x| {
                    x.4 == u64::MAX && x.0 == *aisi && &x.1 == anchor && x.2 == *backing
                }) {
                    x.4 = t;
                }
            }
            _ => {}
        }
    }
    let step = step.as_us().max(1);
    let mut hits = 0u64;
    let mut samples = 0u64;
    let aisis: std::collections::BTreeSet<u64> = entries.iter().map(|x| x.0).collect();
    let mut t = 0;
    while t < *horizon_us {
        samples += 1;
        for a in &aisis {
            let bad = entries.iter().any(|x| {
                x.0 == *a
                    && x.3 <= t
                    && t < x.4
                    && !leases.iter().any(|l| {
                        l.3 <= t
                            && t < l.4
                            && match x.2 {
                                Backing::Lease(id) => l.0 == id,
                                Backing::Ungated => l.1 == x.0 && l.2 == x.1,
                            }
                    })
            });
            hits += u64::from(bad);
        }
        t += step;
    }
    let denom = samples * u64::from(*sessions);
    Ok(if denom == 0 {
        0.0
    } else {
        100.0 * hits as f64 / denom as f64
    })
}
