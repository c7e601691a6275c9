// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Make-before-break anchor moves.
//!
//! A job selects a target excluding the current anchor, obtains a lease for
//! it through the ordinary admission loop, installs the target at standby
//! priority, flips, and drains the old path for `T_D` before releasing the
//! old lease. Anything that goes wrong before the flip leaves the old path
//! exactly as it was.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::controller::{fallback_variants, generate_candidates, Telemetry, Transaction};
use crate::enforcement::{EnforcementError, SteeringTable};
use crate::lease::{LeaseError, LeaseTable};
use crate::model::{
    Aisi, Anchor, AnchorId, Asp, Backing, Commit, EviKind, EviRecord, Health, LeaseId, Observables,
    SimDuration, SimTime, TokenId, PRIORITY_STANDBY,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Trigger {
    Mobility,
    Overload,
    Health,
    Failure,
    Maintenance,
}

impl Trigger {
    pub const ALL: [Trigger; 5] = [
        Trigger::Mobility,
        Trigger::Overload,
        Trigger::Health,
        Trigger::Failure,
        Trigger::Maintenance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::Mobility => "mobility",
            Trigger::Overload => "overload",
            Trigger::Health => "health",
            Trigger::Failure => "failure",
            Trigger::Maintenance => "maintenance",
        }
    }

    pub fn parse(s: &str) -> Option<Trigger> {
        Trigger::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Selecting,
    Admitting,
    Installing,
    Flipped,
    Draining,
    Done,
    Failed,
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum RelocFailure {
    #[error("no-feasible-target")]
    NoFeasibleTarget,
    #[error("admission-timeout")]
    AdmissionTimeout,
    #[error("rate-limited")]
    RateLimited,
    /// The target lease stopped being valid between admission and flip.
    #[error("target-lease-lost")]
    TargetLeaseLost,
}

impl RelocFailure {
    pub fn as_str(self) -> &'static str {
        match self {
            RelocFailure::NoFeasibleTarget => "no-feasible-target",
            RelocFailure::AdmissionTimeout => "admission-timeout",
            RelocFailure::RateLimited => "rate-limited",
            RelocFailure::TargetLeaseLost => "target-lease-lost",
        }
    }
}

/// Hysteresis and margin used by [`should_relocate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelocationParams {
    /// Current predicted latency must exceed `hysteresis * target`.
    pub hysteresis: f64,
    /// A path change must make some alternative better by this fraction.
    pub margin: f64,
    /// Sliding window over which `max_relocation_rate` is measured.
    pub rate_window: SimDuration,
}

impl Default for RelocationParams {
    fn default() -> Self {
        RelocationParams {
            hysteresis: 1.2,
            margin: 0.2,
            rate_window: SimDuration::from_secs(10),
        }
    }
}

/// Per-session record of relocation starts inside the sliding window.
#[derive(Clone, Debug, Default)]
pub struct RateLimiter {
    starts: VecDeque<SimTime>,
}

impl RateLimiter {
    fn prune(&mut self, now: SimTime, window: SimDuration) {
        while self
            .starts
            .front()
            .is_some_and(|t| now.since(*t) >= window)
        {
            self.starts.pop_front();
        }
    }

    /// True when another relocation may start at `now`.
    pub fn allows(&mut self, now: SimTime, max_rate: f64, window: SimDuration) -> bool {
        self.prune(now, window);
        let budget = max_rate * window.as_secs_f64();
        (self.starts.len() as f64) < budget
    }

    pub fn record(&mut self, now: SimTime) {
        self.starts.push_back(now);
    }

    pub fn in_window(&self) -> usize {
        self.starts.len()
    }
}

/// What the caller observed about the current anchor.
#[derive(Clone, Copy, Debug)]
pub struct TriggerInput {
    pub health: Health,
    /// Predicted latency of the current anchor, ms.
    pub current_ms: f64,
    /// Best predicted latency among other feasible anchors, ms.
    pub best_alternative_ms: Option<f64>,
    /// A path change was observed since the last evaluation.
    pub path_changed: bool,
}

/// Decides whether the serving anchor should be left. Rate limiting
/// suppresses every trigger, including failures.
pub fn should_relocate(
    asp: &Asp,
    input: TriggerInput,
    limiter: &mut RateLimiter,
    params: &RelocationParams,
    now: SimTime,
) -> Option<Trigger> {
    let trigger = classify_trigger(asp, input, params)?;
    if limiter.allows(now, asp.max_relocation_rate, params.rate_window) {
        Some(trigger)
    } else {
        None
    }
}

/// The trigger condition alone, without rate limiting.
pub fn classify_trigger(asp: &Asp, input: TriggerInput, params: &RelocationParams) -> Option<Trigger> {
    match input.health {
        Health::Failed => Some(Trigger::Failure),
        Health::Degraded => Some(Trigger::Health),
        Health::Healthy => {
            let better = input
                .best_alternative_ms
                .is_some_and(|alt| alt < input.current_ms * (1.0 - params.margin));
            if input.path_changed && better {
                Some(Trigger::Mobility)
            } else if input.current_ms > asp.target_latency.as_ms_f64() * params.hysteresis {
                Some(Trigger::Overload)
            } else {
                None
            }
        }
    }
}

/// Builds the admission loop for a relocation: same ranking as the initial
/// transaction, current anchor excluded, tier downshift kept in reserve.
#[allow(clippy::too_many_arguments)]
pub fn relocation_transaction(
    aisi: Aisi,
    asp: &Asp,
    anchors: &[Anchor],
    current: &AnchorId,
    telemetry: &Telemetry,
    budget: f64,
    now: SimTime,
    commit_timeout: SimDuration,
) -> Result<Transaction, RelocFailure> {
    let others: Vec<&Anchor> = anchors.iter().filter(|a| &a.anchor_id != current).collect();
    let ranked = generate_candidates(asp, others.iter().copied(), telemetry, budget);
    let reserve = fallback_variants(asp, others.iter().copied(), telemetry, budget);
    if ranked.is_empty() {
        return Err(RelocFailure::NoFeasibleTarget);
    }
    Ok(Transaction::new(aisi, now, commit_timeout, ranked, reserve))
}

/// One make-before-break move for one identity.
#[derive(Clone, Debug, PartialEq)]
pub struct RelocationJob {
    pub id: u64,
    pub aisi: Aisi,
    pub trigger: Trigger,
    pub old_lease: Option<LeaseId>,
    pub old_anchor: AnchorId,
    pub new_lease: Option<LeaseId>,
    pub new_anchor: Option<AnchorId>,
    pub phase: Phase,
    pub started_at: SimTime,
    pub flipped_at: Option<SimTime>,
    pub drain_deadline: Option<SimTime>,
    pub failure: Option<RelocFailure>,
}

/// Result of the drain deadline.
#[derive(Clone, Debug, PartialEq)]
pub struct DrainResult {
    /// False when the old lease had already ended (expired or revoked).
    pub released: bool,
    pub removed: Vec<crate::model::SteeringEntry>,
    pub evidence: EviRecord,
}

impl RelocationJob {
    pub fn new(
        id: u64,
        aisi: Aisi,
        trigger: Trigger,
        old_lease: Option<LeaseId>,
        old_anchor: AnchorId,
        now: SimTime,
    ) -> Self {
        RelocationJob {
            id,
            aisi,
            trigger,
            old_lease,
            old_anchor,
            new_lease: None,
            new_anchor: None,
            phase: Phase::Selecting,
            started_at: now,
            flipped_at: None,
            drain_deadline: None,
            failure: None,
        }
    }

    fn advance(&mut self, to: Phase) {
        assert!(
            to > self.phase && !self.is_terminal(),
            "relocation phase {:?} -> {:?}",
            self.phase,
            to
        );
        self.phase = to;
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Failed)
    }

    pub fn is_pre_flip(&self) -> bool {
        self.phase < Phase::Flipped
    }

    pub fn begin_admission(&mut self) {
        self.advance(Phase::Admitting);
    }

    /// Ends the job before the flip. The old path is never touched here.
    pub fn fail(&mut self, cause: RelocFailure) {
        assert!(self.is_pre_flip(), "cannot fail a flipped relocation");
        self.failure = Some(cause);
        self.phase = Phase::Failed;
    }

    /// Steps 3 and 4: install the target at standby, then flip, in one
    /// instant. On an invalid target lease the job fails and nothing is
    /// installed.
    pub fn install_and_flip(
        &mut self,
        steering: &mut SteeringTable,
        target: &Commit,
        aist: TokenId,
        drain: SimDuration,
        now: SimTime,
    ) -> Result<(crate::model::SteeringEntry, Option<Backing>), RelocFailure> {
        if self.phase == Phase::Selecting {
            self.advance(Phase::Admitting);
        }
        self.new_lease = Some(target.lease_id);
        self.new_anchor = Some(target.anchor_id.clone());
        let entry = match steering.install_steering(target, aist, PRIORITY_STANDBY, now) {
            Ok(e) => e,
            Err(EnforcementError::LeaseInvalid(_)) => {
                self.fail(RelocFailure::TargetLeaseLost);
                return Err(RelocFailure::TargetLeaseLost);
            }
            Err(e) => panic!("standby install failed: {e}"),
        };
        self.advance(Phase::Installing);
        let demoted = steering
            .flip_priority(self.aisi, target.lease_id, now)
            .expect("standby entry was just installed");
        self.advance(Phase::Flipped);
        self.flipped_at = Some(now);
        self.drain_deadline = Some(now + drain);
        self.advance(Phase::Draining);
        Ok((entry, demoted))
    }

    /// Steps 6 and 7. Releasing an old lease that already ended is
    /// tolerated; the evidence record is produced exactly once.
    pub fn on_drain_deadline(
        &mut self,
        leases: &mut LeaseTable,
        steering: &mut SteeringTable,
        now: SimTime,
    ) -> DrainResult {
        assert_eq!(self.phase, Phase::Draining, "drain deadline outside draining");
        assert_eq!(Some(now), self.drain_deadline, "drain deadline fired off schedule");
        let mut released = false;
        let mut removed = Vec::new();
        if let Some(old) = self.old_lease {
            released = match leases.release(old, now) {
                Ok(_) => true,
                Err(LeaseError::AlreadyTerminal(..)) => false,
                Err(e) => panic!("old lease vanished: {e}"),
            };
            removed = steering.remove_steering(old, now);
        }
        self.advance(Phase::Done);
        let new = self.new_lease.expect("flipped job has a target lease");
        let refs = vec![self.old_lease.unwrap_or(new), new];
        let evidence = EviRecord::new(
            now,
            self.aisi,
            EviKind::Relocation,
            refs,
            self.new_anchor.clone().expect("flipped job has a target"),
            None,
            Observables::default(),
        )
        .expect("relocation evidence carries two refs");
        DrainResult {
            released,
            removed,
            evidence,
        }
    }
}
