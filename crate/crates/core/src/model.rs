// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Domain vocabulary shared by every other module.
//!
//! Nothing in here has behavior beyond construction, validation and
//! equality. Simulation time is an integer number of microseconds so event
//! ordering never depends on floating-point rounding; identifiers are plain
//! 64-bit counters handed out by an [`IdSource`] owned by a single run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid field(s): {}", .0.join(", "))]
    InvalidField(Vec<&'static str>),
    #[error("illegal lease transition {from} -> {to}")]
    IllegalTransition { from: LeaseState, to: LeaseState },
    #[error("evidence record of kind {kind} needs {expected} lease refs, got {got}")]
    LeaseRefCount {
        kind: EviKind,
        expected: usize,
        got: usize,
    },
    #[error("duration {0} ms is not representable")]
    BadDuration(f64),
}

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

/// Absolute simulation time in microseconds.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

/// Non-negative span of simulation time in microseconds.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimDuration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    /// Elapsed span since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub const fn from_us(us: u64) -> Self {
        SimDuration(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimDuration(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimDuration(s * 1_000_000)
    }

    /// Converts a millisecond quantity from a config file. Values are rounded
    /// to the nearest microsecond; negative or non-finite input is rejected.
    pub fn from_ms_f64(ms: f64) -> Result<Self, ModelError> {
        if !ms.is_finite() || ms < 0.0 || ms * 1_000.0 > u64::MAX as f64 {
            return Err(ModelError::BadDuration(ms));
        }
        Ok(SimDuration((ms * 1_000.0).round() as u64))
    }

    pub const fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn mul_f64(self, factor: f64) -> SimDuration {
        SimDuration((self.0 as f64 * factor).round().max(0.0) as u64)
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub<SimDuration> for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_add(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

/// Per-run monotone counter. Every opaque identifier in a run (service
/// identities, tokens, leases) comes from the same source, starting at 1.
#[derive(Debug, Clone)]
pub struct IdSource {
    next: u64,
}

impl Default for IdSource {
    fn default() -> Self {
        IdSource { next: 1 }
    }
}

impl IdSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct LeaseId(pub u64);

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct TokenId(pub u64);

impl fmt::Display for LeaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

macro_rules! label {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }
    };
}

label!(
    /// Execution anchor label, e.g. `edge-0`.
    AnchorId
);
label!(TierId);
label!(Region);

/// Stable service identity. Issued once per transaction and never changed
/// by relocation.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Aisi {
    pub id: u64,
    pub created_at: SimTime,
}

impl fmt::Display for Aisi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenScope {
    pub tiers: Vec<TierId>,
    pub regions: BTreeSet<Region>,
}

/// Scoped session token bound to one [`Aisi`]. Not cryptographic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aist {
    pub token_id: TokenId,
    pub bound_aisi: Aisi,
    pub scope: TokenScope,
    pub issued_at: SimTime,
    pub expires_at: SimTime,
}

// ---------------------------------------------------------------------------
// Intent and service profile
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub outcome_tag: String,
    pub target_latency: SimDuration,
    pub reliability_target: f64,
    /// Empty means the client expressed no locality constraint.
    pub locality_requirement: BTreeSet<Region>,
    pub trust_requirements: BTreeSet<String>,
    pub budget: f64,
}

impl Intent {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut bad = Vec::new();
        if self.target_latency.is_zero() {
            bad.push("target_latency");
        }
        if !(0.0..=1.0).contains(&self.reliability_target) {
            bad.push("reliability_target");
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            bad.push("budget");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidField(bad))
        }
    }
}

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceLevel {
    Minimal,
    PerEvent,
    PerRequest,
}

/// Service contract for one intent: targets, locality, fallback tiers, evidence and lease terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Asp {
    pub target_latency: SimDuration,
    pub max_jitter: SimDuration,
    pub max_loss_rate: f64,
    pub locality_region: BTreeSet<Region>,
    /// Preferred tier first.
    pub allowed_fallback_tiers: Vec<TierId>,
    pub evidence_requirements: EvidenceLevel,
    /// Relocations per second, measured over a sliding window.
    pub max_relocation_rate: f64,
    pub lease_duration: SimDuration,
}

/// Checks every [`Asp`] invariant and reports all offending fields at once.
pub fn validate_asp(asp: &Asp) -> Result<(), ModelError> {
    let mut bad = Vec::new();
    if asp.target_latency.is_zero() {
        bad.push("target_latency");
    }
    if asp.max_jitter.is_zero() {
        bad.push("max_jitter");
    }
    if !(0.0..=1.0).contains(&asp.max_loss_rate) {
        bad.push("max_loss_rate");
    }
    if asp.locality_region.is_empty() {
        bad.push("locality_region");
    }
    let distinct: BTreeSet<_> = asp.allowed_fallback_tiers.iter().collect();
    if asp.allowed_fallback_tiers.is_empty() || distinct.len() != asp.allowed_fallback_tiers.len()
    {
        bad.push("allowed_fallback_tiers");
    }
    if !(asp.max_relocation_rate >= 0.0 && asp.max_relocation_rate.is_finite()) {
        bad.push("max_relocation_rate");
    }
    if asp.lease_duration.is_zero() {
        bad.push("lease_duration");
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(ModelError::InvalidField(bad))
    }
}

// ---------------------------------------------------------------------------
// Anchors and tiers
// ---------------------------------------------------------------------------

/// Shifted-exponential service time: a deterministic floor of
/// `mean - std` plus an exponential tail with mean `std`. `std = 0` gives a
/// constant service time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceTime {
    pub mean_ms: f64,
    #[serde(default)]
    pub std_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTier {
    pub tier_id: TierId,
    pub service_time: ServiceTime,
    pub cost: f64,
}

impl ModelTier {
    pub fn validate(&self) -> Result<(), ModelError> {
        let st = self.service_time;
        let mut bad = Vec::new();
        if !(st.mean_ms > 0.0 && st.mean_ms.is_finite()) {
            bad.push("service_time.mean_ms");
        }
        if !(st.std_ms >= 0.0 && st.std_ms <= st.mean_ms) {
            bad.push("service_time.std_ms");
        }
        if !(self.cost >= 0.0 && self.cost.is_finite()) {
            bad.push("cost");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidField(bad))
        }
    }
}

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum SiteClass {
    Edge,
    Cloud,
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Health {
    #[default]
    Healthy,
    Degraded,
    Failed,
}

impl fmt::Display for Health {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Health::Healthy => "healthy",
            Health::Degraded => "degraded",
            Health::Failed => "failed",
        })
    }
}

/// An execution anchor (edge or cloud site).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub anchor_id: AnchorId,
    pub site_class: SiteClass,
    pub region: Region,
    pub tiers_offered: Vec<ModelTier>,
    /// Maximum concurrent admissions (active leases).
    pub capacity: u32,
    #[serde(default)]
    pub health: Health,
    /// Base one-way path latency seen by a client attached locally.
    #[serde(with = "ms")]
    pub path_latency: SimDuration,
    /// Mobility zone served locally by this anchor. `None` means the anchor
    /// is equally reachable from every zone.
    #[serde(default)]
    pub zone: Option<u32>,
}

impl Anchor {
    pub fn tier(&self, tier: &TierId) -> Option<&ModelTier> {
        self.tiers_offered.iter().find(|t| &t.tier_id == tier)
    }

    pub fn accepts_admissions(&self) -> bool {
        self.health != Health::Failed
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.anchor_id.0.is_empty() || self.tiers_offered.is_empty() {
            return Err(ModelError::InvalidField(vec!["anchors"]));
        }
        for t in &self.tiers_offered {
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosBinding {
    pub treatment_class: String,
    pub latency_budget: SimDuration,
}

// ---------------------------------------------------------------------------
// Leases and steering
// ---------------------------------------------------------------------------

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum LeaseState {
    Active,
    Expired,
    Revoked,
    Released,
}

impl LeaseState {
    pub fn is_terminal(self) -> bool {
        self != LeaseState::Active
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LeaseState::Active => "active",
            LeaseState::Expired => "expired",
            LeaseState::Revoked => "revoked",
            LeaseState::Released => "released",
        }
    }
}

impl fmt::Display for LeaseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An admission lease: the only object that can justify enforcement state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    pub lease_id: LeaseId,
    pub aisi: Aisi,
    pub anchor_id: AnchorId,
    pub tier: TierId,
    pub qos: QosBinding,
    pub issued_at: SimTime,
    pub expires_at: SimTime,
    pub state: LeaseState,
}

impl Commit {
    /// Moves the lease to a terminal state. Only `Active` may leave.
    pub fn transition(&mut self, to: LeaseState) -> Result<(), ModelError> {
        if self.state.is_terminal() || to == LeaseState::Active {
            return Err(ModelError::IllegalTransition {
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }

    /// Validity is the half-open interval `[issued_at, expires_at)`.
    pub fn is_valid_at(&self, now: SimTime) -> bool {
        self.state == LeaseState::Active && self.issued_at <= now && now < self.expires_at
    }
}

/// What a steering entry points to for its authority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Backing {
    Lease(LeaseId),
    /// Baseline policies install state without consulting a lease.
    Ungated,
}

impl fmt::Display for Backing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backing::Lease(id) => write!(f, "{}", id.0),
            Backing::Ungated => f.write_str("ungated"),
        }
    }
}

pub const PRIORITY_ACTIVE: i32 = 10;
pub const PRIORITY_STANDBY: i32 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringEntry {
    pub aisi: Aisi,
    pub aist: TokenId,
    pub anchor_id: AnchorId,
    pub qos: QosBinding,
    pub backing: Backing,
    pub priority: i32,
    pub installed_at: SimTime,
}

// ---------------------------------------------------------------------------
// Evidence
// ---------------------------------------------------------------------------

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum EviKind {
    Serve,
    Relocation,
    LeaseExpiry,
    LeaseRevocation,
    AdmissionReject,
    HealthChange,
    Violation,
}

impl EviKind {
    pub const ALL: [EviKind; 7] = [
        EviKind::Serve,
        EviKind::Relocation,
        EviKind::LeaseExpiry,
        EviKind::LeaseRevocation,
        EviKind::AdmissionReject,
        EviKind::HealthChange,
        EviKind::Violation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EviKind::Serve => "serve",
            EviKind::Relocation => "relocation",
            EviKind::LeaseExpiry => "lease_expiry",
            EviKind::LeaseRevocation => "lease_revocation",
            EviKind::AdmissionReject => "admission_reject",
            EviKind::HealthChange => "health_change",
            EviKind::Violation => "violation",
        }
    }

    pub fn parse(s: &str) -> Option<EviKind> {
        EviKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Number of lease references a record of this kind carries.
    pub fn lease_ref_count(self) -> usize {
        match self {
            EviKind::Relocation => 2,
            // Rejected admissions never produced a lease.
            EviKind::AdmissionReject => 0,
            _ => 1,
        }
    }
}

impl fmt::Display for EviKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub delivery_latency: Option<SimDuration>,
    pub queueing_delay: Option<SimDuration>,
    pub lost: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EviRecord {
    pub timestamp: SimTime,
    pub aisi: Aisi,
    pub lease_refs: Vec<LeaseId>,
    pub anchor_id: AnchorId,
    pub tier_id: Option<TierId>,
    pub event_kind: EviKind,
    pub observables: Observables,
}

impl EviRecord {
    pub fn new(
        timestamp: SimTime,
        aisi: Aisi,
        event_kind: EviKind,
        lease_refs: Vec<LeaseId>,
        anchor_id: AnchorId,
        tier_id: Option<TierId>,
        observables: Observables,
    ) -> Result<Self, ModelError> {
        let expected = event_kind.lease_ref_count();
        if lease_refs.len() != expected {
            return Err(ModelError::LeaseRefCount {
                kind: event_kind,
                expected,
                got: lease_refs.len(),
            });
        }
        Ok(EviRecord {
            timestamp,
            aisi,
            lease_refs,
            anchor_id,
            tier_id,
            event_kind,
            observables,
        })
    }
}

// ---------------------------------------------------------------------------
// Transaction results
// ---------------------------------------------------------------------------

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum RejectCause {
    Capacity,
    Policy,
    Locality,
    Health,
    Timeout,
}

impl RejectCause {
    pub const ALL: [RejectCause; 5] = [
        RejectCause::Capacity,
        RejectCause::Policy,
        RejectCause::Locality,
        RejectCause::Health,
        RejectCause::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectCause::Capacity => "capacity",
            RejectCause::Policy => "policy",
            RejectCause::Locality => "locality",
            RejectCause::Health => "health",
            RejectCause::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<RejectCause> {
        RejectCause::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for RejectCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Histogram of admission reject causes within one transaction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseStats {
    pub histogram: BTreeMap<RejectCause, u32>,
}

impl CauseStats {
    pub fn record(&mut self, cause: RejectCause) {
        *self.histogram.entry(cause).or_insert(0) += 1;
    }

    pub fn count(&self, cause: RejectCause) -> u32 {
        self.histogram.get(&cause).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.histogram.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }
}

impl fmt::Display for CauseStats {
    /// `capacity:2,timeout:1`, or `-` when empty.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        let mut first = true;
        for (cause, n) in &self.histogram {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            write!(f, "{cause}:{n}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TxnResult {
    Success {
        aisi: Aisi,
        aist: Aist,
        commit: Commit,
    },
    Reject {
        aisi: Aisi,
        causes: CauseStats,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransactionOutcome {
    pub result: TxnResult,
    pub elapsed: SimDuration,
}

impl TransactionOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self.result, TxnResult::Success { .. })
    }
}

/// Serde helper: durations written as (possibly fractional) milliseconds.
pub mod ms {
    use super::SimDuration;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &SimDuration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_ms_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SimDuration, D::Error> {
        let v = f64::deserialize(d)?;
        SimDuration::from_ms_f64(v).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn sample_asp() -> Asp {
        Asp {
            target_latency: SimDuration::from_ms(50),
            max_jitter: SimDuration::from_ms(10),
            max_loss_rate: 0.01,
            locality_region: [Region::from("EU")].into_iter().collect(),
            allowed_fallback_tiers: vec![TierId::from("large"), TierId::from("small")],
            evidence_requirements: EvidenceLevel::Minimal,
            max_relocation_rate: 2.0,
            lease_duration: SimDuration::from_ms(500),
        }
    }

    #[test]
    fn well_formed_asp_is_ok() {
        assert_eq!(validate_asp(&sample_asp()), Ok(()));
    }

    #[test]
    fn zero_lease_duration_is_rejected() {
        let mut asp = sample_asp();
        asp.lease_duration = SimDuration::ZERO;
        assert_eq!(
            validate_asp(&asp),
            Err(ModelError::InvalidField(vec!["lease_duration"]))
        );
    }

    #[test]
    fn loss_rate_above_one_is_rejected() {
        let mut asp = sample_asp();
        asp.max_loss_rate = 1.5;
        assert_eq!(
            validate_asp(&asp),
            Err(ModelError::InvalidField(vec!["max_loss_rate"]))
        );
    }

    #[test]
    fn all_violations_are_reported() {
        let mut asp = sample_asp();
        asp.max_loss_rate = -0.1;
        asp.lease_duration = SimDuration::ZERO;
        asp.allowed_fallback_tiers.clear();
        let Err(ModelError::InvalidField(names)) = validate_asp(&asp) else {
            panic!("expected invalid fields");
        };
        assert_eq!(
            names,
            vec!["max_loss_rate", "allowed_fallback_tiers", "lease_duration"]
        );
    }

    #[test]
    fn ms_conversion_is_exact_to_the_microsecond() {
        assert_eq!(SimDuration::from_ms_f64(500.0).unwrap(), SimDuration(500_000));
        assert_eq!(SimDuration::from_ms_f64(0.001).unwrap(), SimDuration(1));
        assert_eq!(SimDuration::from_ms_f64(12.345).unwrap(), SimDuration(12_345));
        assert!(SimDuration::from_ms_f64(-1.0).is_err());
        assert!(SimDuration::from_ms_f64(f64::NAN).is_err());
    }

    #[test]
    fn ids_are_monotone_from_one() {
        let mut ids = IdSource::new();
        assert_eq!(ids.next_id(), 1);
        assert_eq!(ids.next_id(), 2);
    }

    #[test]
    fn relocation_evidence_needs_two_leases() {
        let aisi = Aisi { id: 1, created_at: SimTime::ZERO };
        let anchor = AnchorId::from("edge-0");
        let ok = EviRecord::new(
            SimTime::ZERO,
            aisi,
            EviKind::Relocation,
            vec![LeaseId(3), LeaseId(4)],
            anchor.clone(),
            None,
            Observables::default(),
        );
        assert!(ok.is_ok());
        let bad = EviRecord::new(
            SimTime::ZERO,
            aisi,
            EviKind::Relocation,
            vec![LeaseId(3)],
            anchor.clone(),
            None,
            Observables::default(),
        );
        assert!(matches!(bad, Err(ModelError::LeaseRefCount { expected: 2, .. })));
        let serve = EviRecord::new(
            SimTime::ZERO,
            aisi,
            EviKind::Serve,
            vec![LeaseId(3), LeaseId(4)],
            anchor,
            None,
            Observables::default(),
        );
        assert!(serve.is_err());
    }

    #[test]
    fn aisi_equality_is_stable_across_copies() {
        let a = Aisi { id: 7, created_at: SimTime::from_ms(3) };
        let b = a;
        let mut set = BTreeSet::new();
        set.insert(a);
        assert!(set.contains(&b));
        assert_eq!(a, b);
    }

    fn commit() -> Commit {
        Commit {
            lease_id: LeaseId(1),
            aisi: Aisi { id: 1, created_at: SimTime::ZERO },
            anchor_id: AnchorId::from("a"),
            tier: TierId::from("t"),
            qos: QosBinding {
                treatment_class: "assured".into(),
                latency_budget: SimDuration::from_ms(50),
            },
            issued_at: SimTime::ZERO,
            expires_at: SimTime::from_ms(500),
            state: LeaseState::Active,
        }
    }

    #[test]
    fn validity_interval_is_half_open() {
        let c = commit();
        assert!(c.is_valid_at(SimTime::ZERO));
        assert!(c.is_valid_at(SimTime::from_us(499_999)));
        assert!(!c.is_valid_at(SimTime::from_ms(500)));
    }

    fn any_state() -> impl Strategy<Value = LeaseState> {
        prop_oneof![
            Just(LeaseState::Active),
            Just(LeaseState::Expired),
            Just(LeaseState::Revoked),
            Just(LeaseState::Released),
        ]
    }

    proptest! {
        #[test]
        fn terminal_states_are_absorbing(seq in proptest::collection::vec(any_state(), 1..12)) {
            let mut c = commit();
            let mut terminal_seen = false;
            for to in seq {
                let before = c.state;
                let r = c.transition(to);
                if terminal_seen || to == LeaseState::Active {
                    prop_assert!(r.is_err());
                    prop_assert_eq!(c.state, before);
                } else {
                    prop_assert!(r.is_ok());
                    prop_assert_eq!(c.state, to);
                    terminal_seen = true;
                }
            }
        }

        #[test]
        fn evidence_lease_ref_counts(kind_idx in 0usize..7, n in 0usize..4) {
            let kind = EviKind::ALL[kind_idx];
            let refs: Vec<_> = (0..n as u64).map(LeaseId).collect();
            let r = EviRecord::new(
                SimTime::ZERO,
                Aisi { id: 1, created_at: SimTime::ZERO },
                kind,
                refs,
                AnchorId::from("a"),
                None,
                Observables::default(),
            );
            prop_assert_eq!(r.is_ok(), n == kind.lease_ref_count());
        }
    }
}
