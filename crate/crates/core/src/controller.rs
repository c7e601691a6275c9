// SPDX-License-Identifier: Apache-2.0 OR MIT

//! The intent-to-execution transaction.
//!
//! A transaction derives the service profile from an intent, issues the
//! identity and token, ranks candidate (anchor, tier) pairs and then walks
//! the ranked list asking for an admission lease until one is granted, the
//! list is exhausted, or the commit timeout elapses. Steering is installed
//! only after a lease has been granted.
//!
//! The admission loop is exposed as a [`Transaction`] stepper so the event
//! engine can interleave attempts with other events; [`run_transaction`]
//! drives the same stepper synchronously with a fixed per-attempt delay.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_asp, Aisi, Aist, Anchor, AnchorId, Asp, CauseStats, Commit, EvidenceLevel, Health,
    IdSource, Intent, ModelError, ModelTier, Region, RejectCause, SimDuration, SimTime, SiteClass,
    TierId, TokenId, TokenScope, TransactionOutcome, TxnResult,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("policy-infeasible: {0}")]
    PolicyInfeasible(String),
    #[error("invalid intent: {0}")]
    InvalidIntent(ModelError),
    #[error("invalid policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("internal invariant violated: {0}")]
    InvariantAbort(String),
}

/// Hard eligibility predicate applied at admission time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eligibility {
    pub site_classes: BTreeSet<SiteClass>,
    #[serde(default)]
    pub excluded_anchors: BTreeSet<AnchorId>,
}

impl Default for Eligibility {
    fn default() -> Self {
        Eligibility {
            site_classes: [SiteClass::Edge, SiteClass::Cloud].into_iter().collect(),
            excluded_anchors: BTreeSet::new(),
        }
    }
}

impl Eligibility {
    pub fn allows(&self, anchor: &Anchor, _asp: &Asp) -> bool {
        self.site_classes.contains(&anchor.site_class)
            && !self.excluded_anchors.contains(&anchor.anchor_id)
    }
}

/// Operator policy: eligibility, tier mapping, lease and timer defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorPolicy {
    pub eligibility: Eligibility,
    pub allowed_regions: BTreeSet<Region>,
    /// Intent outcome tag to permitted tiers, most capable first.
    pub tier_policy: BTreeMap<String, Vec<TierId>>,
    pub default_lease_duration: SimDuration,
    pub commit_timeout: SimDuration,
    pub drain_timeout: SimDuration,
    pub default_evidence: EvidenceLevel,
    pub default_max_relocation_rate: f64,
    pub token_lifetime: SimDuration,
}

impl OperatorPolicy {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.commit_timeout.is_zero() {
            return Err(ControllerError::InvalidPolicy("commit_timeout"));
        }
        if self.drain_timeout.is_zero() {
            return Err(ControllerError::InvalidPolicy("drain_timeout"));
        }
        if self.default_lease_duration.is_zero() {
            return Err(ControllerError::InvalidPolicy("default_lease_duration"));
        }
        Ok(())
    }
}

/// Which session behavior a simulated client follows.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum PolicyKind {
    #[serde(rename = "aipaging")]
    AiPaging,
    #[serde(rename = "endpoint-bound")]
    EndpointBound,
    #[serde(rename = "best-effort")]
    BestEffort,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::EndpointBound,
        PolicyKind::BestEffort,
        PolicyKind::AiPaging,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::AiPaging => "aipaging",
            PolicyKind::EndpointBound => "endpoint-bound",
            PolicyKind::BestEffort => "best-effort",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "aipaging" | "ai-paging" => Ok(PolicyKind::AiPaging),
            "endpoint-bound" | "endpointbound" => Ok(PolicyKind::EndpointBound),
            "best-effort" | "besteffort" => Ok(PolicyKind::BestEffort),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

/// Default application retry count for endpoint-bound sessions.
pub const ENDPOINT_RETRIES: u32 = 3;

/// How a session governed by a [`PolicyKind`] behaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionBehavior {
    /// Steering may be installed or kept only while a valid lease backs it.
    pub lease_gated: bool,
    /// Whether relocation triggers are acted on at all.
    pub relocates: bool,
    /// Relocation installs and admits the target before draining the source.
    pub make_before_break: bool,
    /// Application-level retries against the same anchor.
    pub retries: u32,
}

pub fn select_action(kind: PolicyKind) -> SessionBehavior {
    match kind {
        PolicyKind::AiPaging => SessionBehavior {
            lease_gated: true,
            relocates: true,
            make_before_break: true,
            retries: 0,
        },
        PolicyKind::EndpointBound => SessionBehavior {
            lease_gated: false,
            relocates: false,
            make_before_break: false,
            retries: ENDPOINT_RETRIES,
        },
        PolicyKind::BestEffort => SessionBehavior {
            lease_gated: false,
            relocates: true,
            make_before_break: false,
            retries: 0,
        },
    }
}

// ---------------------------------------------------------------------------
// Profile derivation and identity
// ---------------------------------------------------------------------------

pub const JITTER_FRACTION: f64 = 0.2;

pub fn derive_asp(intent: &Intent, policy: &OperatorPolicy) -> Result<Asp, ControllerError> {
    intent.validate().map_err(ControllerError::InvalidIntent)?;
    let regions: BTreeSet<Region> = if intent.locality_requirement.is_empty() {
        policy.allowed_regions.clone()
    } else {
        intent
            .locality_requirement
            .intersection(&policy.allowed_regions)
            .cloned()
            .collect()
    };
    if regions.is_empty() {
        return Err(ControllerError::PolicyInfeasible(format!(
            "no permitted region among {:?}",
            intent.locality_requirement
        )));
    }
    let tiers = policy
        .tier_policy
        .get(&intent.outcome_tag)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| {
            ControllerError::PolicyInfeasible(format!(
                "no tier permitted for `{}`",
                intent.outcome_tag
            ))
        })?;
    let asp = Asp {
        target_latency: intent.target_latency,
        max_jitter: intent.target_latency.mul_f64(JITTER_FRACTION),
        max_loss_rate: 1.0 - intent.reliability_target,
        locality_region: regions,
        allowed_fallback_tiers: tiers.clone(),
        evidence_requirements: policy.default_evidence,
        max_relocation_rate: policy.default_max_relocation_rate,
        lease_duration: policy.default_lease_duration,
    };
    validate_asp(&asp).map_err(ControllerError::InvalidIntent)?;
    Ok(asp)
}

/// Issues a fresh identity and a token scoped to the profile. No
/// enforcement state is created here.
pub fn issue_identity(
    asp: &Asp,
    now: SimTime,
    ids: &mut IdSource,
    token_lifetime: SimDuration,
) -> (Aisi, Aist) {
    let aisi = Aisi {
        id: ids.next_id(),
        created_at: now,
    };
    let lifetime = token_lifetime.max(asp.lease_duration);
    let aist = Aist {
        token_id: TokenId(ids.next_id()),
        bound_aisi: aisi,
        scope: TokenScope {
            tiers: asp.allowed_fallback_tiers.clone(),
            regions: asp.locality_region.clone(),
        },
        issued_at: now,
        expires_at: now + lifetime,
    };
    (aisi, aist)
}

// ---------------------------------------------------------------------------
// Candidates
// ---------------------------------------------------------------------------

/// Observed path and load for one anchor, from the client's point of view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorView {
    pub path_latency: SimDuration,
    /// Active leases divided by capacity.
    pub load_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Telemetry {
    pub views: BTreeMap<AnchorId, AnchorView>,
}

impl Telemetry {
    pub fn view(&self, anchor: &Anchor) -> AnchorView {
        self.views.get(&anchor.anchor_id).copied().unwrap_or(AnchorView {
            path_latency: anchor.path_latency,
            load_fraction: 0.0,
        })
    }
}

/// `path + mean_service * (1 + load)`, in milliseconds.
pub fn predicted_latency_ms(view: AnchorView, tier: &ModelTier) -> f64 {
    view.path_latency.as_ms_f64()
        + tier.service_time.mean_ms * (1.0 + view.load_fraction.max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub anchor_id: AnchorId,
    pub tier: ModelTier,
    /// Predicted latency in ms; lower is better.
    pub score: f64,
    pub feasibility: bool,
    /// Index of the tier in the profile's fallback list (0 = preferred).
    pub tier_rank: usize,
    pub over_budget: bool,
}

impl Candidate {
    fn key(&self) -> (AnchorId, TierId) {
        (self.anchor_id.clone(), self.tier.tier_id.clone())
    }
}

/// Ranking order: score, then within-budget first, then cost, anchor id and
/// tier rank.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then(a.over_budget.cmp(&b.over_budget))
        .then(a.tier.cost.total_cmp(&b.tier.cost))
        .then_with(|| a.anchor_id.cmp(&b.anchor_id))
        .then(a.tier_rank.cmp(&b.tier_rank))
}

fn hard_filter(asp: &Asp, anchor: &Anchor) -> bool {
    asp.locality_region.contains(&anchor.region) && anchor.health != Health::Failed
}

fn make_candidate(
    anchor: &Anchor,
    tier: &ModelTier,
    tier_rank: usize,
    telemetry: &Telemetry,
    budget: f64,
) -> Candidate {
    let score = predicted_latency_ms(telemetry.view(anchor), tier);
    Candidate {
        anchor_id: anchor.anchor_id.clone(),
        tier: tier.clone(),
        score,
        feasibility: score.is_finite(),
        tier_rank,
        over_budget: tier.cost > budget,
    }
}

/// Ranked candidates, one per eligible anchor, each at the most preferred
/// allowed tier the anchor offers.
pub fn generate_candidates<'a>(
    asp: &Asp,
    anchors: impl IntoIterator<Item = &'a Anchor>,
    telemetry: &Telemetry,
    budget: f64,
) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = anchors
        .into_iter()
        .filter(|a| hard_filter(asp, a))
        .filter_map(|a| {
            asp.allowed_fallback_tiers
                .iter()
                .enumerate()
                .find_map(|(rank, t)| a.tier(t).map(|tier| (rank, tier)))
                .map(|(rank, tier)| make_candidate(a, tier, rank, telemetry, budget))
        })
        .filter(|c| c.feasibility)
        .collect();
    out.sort_by(rank_order);
    out
}

/// Lower-tier variants that [`generate_candidates`] did not produce.
pub fn fallback_variants<'a>(
    asp: &Asp,
    anchors: impl IntoIterator<Item = &'a Anchor>,
    telemetry: &Telemetry,
    budget: f64,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for a in anchors.into_iter().filter(|a| hard_filter(asp, a)) {
        let mut offered = asp
            .allowed_fallback_tiers
            .iter()
            .enumerate()
            .filter_map(|(rank, t)| a.tier(t).map(|tier| (rank, tier)));
        // Skip the preferred variant; that one is a primary candidate.
        offered.next();
        for (rank, tier) in offered {
            let c = make_candidate(a, tier, rank, telemetry, budget);
            if c.feasibility {
                out.push(c);
            }
        }
    }
    out.sort_by(rank_order);
    out
}

// ---------------------------------------------------------------------------
// Admission loop
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum Resolution {
    Accepted { candidate: Candidate, commit: Commit },
    Rejected { candidate: Candidate, cause: RejectCause },
}

/// The admission loop, one attempt at a time.
#[derive(Clone, Debug)]
pub struct Transaction {
    pub aisi: Aisi,
    pub started_at: SimTime,
    pub commit_timeout: SimDuration,
    queue: VecDeque<Candidate>,
    reserve: Vec<Candidate>,
    enqueued: BTreeSet<(AnchorId, TierId)>,
    causes: CauseStats,
    in_flight: Option<Candidate>,
    attempts: u32,
}

impl Transaction {
    pub fn new(
        aisi: Aisi,
        started_at: SimTime,
        commit_timeout: SimDuration,
        ranked: Vec<Candidate>,
        reserve: Vec<Candidate>,
    ) -> Self {
        let enqueued = ranked.iter().map(Candidate::key).collect();
        Transaction {
            aisi,
            started_at,
            commit_timeout,
            queue: ranked.into(),
            reserve,
            enqueued,
            causes: CauseStats::default(),
            in_flight: None,
            attempts: 0,
        }
    }

    /// Loop guard: `elapsed < T_C` and candidates remain. Returns the next
    /// candidate to ask for a lease, or `None` when the loop must exit.
    pub fn next_attempt(&mut self, now: SimTime) -> Option<Candidate> {
        assert!(self.in_flight.is_none(), "attempt already in flight");
        if now.since(self.started_at) >= self.commit_timeout {
            return None;
        }
        let next = self.queue.pop_front()?;
        self.attempts += 1;
        self.in_flight = Some(next.clone());
        Some(next)
    }

    /// Resolves the in-flight attempt when its reply arrives. A reply that
    /// lands after the commit timeout is counted as `timeout` and `admit` is
    /// never consulted, so no lease is created for it.
    pub fn resolve<F>(&mut self, now: SimTime, admit: F) -> Resolution
    where
        F: FnOnce(&Candidate) -> Result<Commit, RejectCause>,
    {
        let candidate = self
            .in_flight
            .take()
            .expect("resolve called without an attempt in flight");
        let outcome = if now.since(self.started_at) > self.commit_timeout {
            Err(RejectCause::Timeout)
        } else {
            admit(&candidate)
        };
        match outcome {
            Ok(commit) => Resolution::Accepted { candidate, commit },
            Err(cause) => {
                self.causes.record(cause);
                if matches!(cause, RejectCause::Capacity | RejectCause::Health) {
                    self.expand_fallback();
                }
                Resolution::Rejected { candidate, cause }
            }
        }
    }

    /// Appends lower-tier variants of anchors still queued, keeping the
    /// remaining queue in rank order.
    fn expand_fallback(&mut self) {
        let remaining: BTreeSet<AnchorId> =
            self.queue.iter().map(|c| c.anchor_id.clone()).collect();
        let mut added = false;
        for c in &self.reserve {
            if remaining.contains(&c.anchor_id) && self.enqueued.insert(c.key()) {
                self.queue.push_back(c.clone());
                added = true;
            }
        }
        if added {
            self.queue.make_contiguous().sort_by(rank_order);
        }
    }

    pub fn causes(&self) -> &CauseStats {
        &self.causes
    }

    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }

    pub fn elapsed(&self, now: SimTime) -> SimDuration {
        now.since(self.started_at)
    }
}

/// Grants or rejects admission leases.
pub trait AdmissionPort {
    fn request_lease(
        &mut self,
        candidate: &Candidate,
        aisi: Aisi,
        asp: &Asp,
        now: SimTime,
    ) -> Result<Commit, RejectCause>;
}

/// Installs lease-backed steering.
pub trait SteeringPort {
    fn install_for(&mut self, commit: &Commit, aist: &Aist, now: SimTime) -> Result<(), String>;
}

/// Everything a synchronous transaction needs beyond the ports.
pub struct TxnInputs<'a> {
    pub anchors: &'a [Anchor],
    pub telemetry: &'a Telemetry,
    /// Round trip of one admission request.
    pub admission_delay: SimDuration,
}

/// Runs the whole transaction synchronously. Attempt `k` starts when the
/// reply to attempt `k-1` arrives; each reply takes `admission_delay`.
pub fn run_transaction(
    intent: &Intent,
    policy: &OperatorPolicy,
    now: SimTime,
    ids: &mut IdSource,
    inputs: &TxnInputs<'_>,
    lease_mgr: &mut impl AdmissionPort,
    enforcement: &mut impl SteeringPort,
) -> Result<TransactionOutcome, ControllerError> {
    policy.validate()?;
    let asp = derive_asp(intent, policy)?;
    let (aisi, aist) = issue_identity(&asp, now, ids, policy.token_lifetime);
    let ranked = generate_candidates(&asp, inputs.anchors, inputs.telemetry, intent.budget);
    let reserve = fallback_variants(&asp, inputs.anchors, inputs.telemetry, intent.budget);
    let mut txn = Transaction::new(aisi, now, policy.commit_timeout, ranked, reserve);
    let mut clock = now;
    while txn.next_attempt(clock).is_some() {
        clock = clock + inputs.admission_delay;
        let at = clock;
        match txn.resolve(at, |c| lease_mgr.request_lease(c, aisi, &asp, at)) {
            Resolution::Accepted { commit, .. } => {
                if !commit.is_valid_at(clock) {
                    return Err(ControllerError::InvariantAbort(format!(
                        "lease {} not valid at install",
                        commit.lease_id
                    )));
                }
                enforcement
                    .install_for(&commit, &aist, clock)
                    .map_err(ControllerError::InvariantAbort)?;
                return Ok(TransactionOutcome {
                    result: TxnResult::Success { aisi, aist, commit },
                    elapsed: clock.since(now),
                });
            }
            Resolution::Rejected { .. } => {}
        }
    }
    Ok(TransactionOutcome {
        elapsed: clock.since(now),
        result: TxnResult::Reject {
            aisi,
            causes: txn.causes().clone(),
        },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{LeaseId, LeaseState, QosBinding, ServiceTime};

    pub(crate) fn tier(id: &str, mean: f64, cost: f64) -> ModelTier {
        ModelTier {
            tier_id: TierId::from(id),
            service_time: ServiceTime {
                mean_ms: mean,
                std_ms: 0.0,
            },
            cost,
        }
    }

    pub(crate) fn anchor(id: &str, class: SiteClass, path_ms: u64, tiers: Vec<ModelTier>) -> Anchor {
        Anchor {
            anchor_id: AnchorId::from(id),
            site_class: class,
            region: Region::from("EU"),
            tiers_offered: tiers,
            capacity: 4,
            health: Health::Healthy,
            path_latency: SimDuration::from_ms(path_ms),
            zone: None,
        }
    }

    pub(crate) fn policy() -> OperatorPolicy {
        OperatorPolicy {
            eligibility: Eligibility::default(),
            allowed_regions: [Region::from("EU")].into_iter().collect(),
            tier_policy: [(
                "inference".to_owned(),
                vec![TierId::from("large"), TierId::from("small")],
            )]
            .into_iter()
            .collect(),
            default_lease_duration: SimDuration::from_ms(500),
            commit_timeout: SimDuration::from_ms(100),
            drain_timeout: SimDuration::from_ms(50),
            default_evidence: EvidenceLevel::Minimal,
            default_max_relocation_rate: 2.0,
            token_lifetime: SimDuration::from_secs(60),
        }
    }

    pub(crate) fn intent(latency_ms: u64, reliability: f64) -> Intent {
        Intent {
            outcome_tag: "inference".into(),
            target_latency: SimDuration::from_ms(latency_ms),
            reliability_target: reliability,
            locality_requirement: [Region::from("EU")].into_iter().collect(),
            trust_requirements: BTreeSet::new(),
            budget: 10.0,
        }
    }

    #[test]
    fn asp_maps_fields_from_intent() {
        let asp = derive_asp(&intent(50, 0.99), &policy()).unwrap();
        assert_eq!(asp.target_latency, SimDuration::from_ms(50));
        assert!((asp.max_loss_rate - 0.01).abs() < 1e-12);
        assert_eq!(asp.lease_duration, SimDuration::from_ms(500));
    }

    #[test]
    fn asp_jitter_and_lease_by_hand() {
        // 0.2 * 100 ms = 20 ms; lease comes from the policy default.
        let asp = derive_asp(&intent(100, 0.999), &policy()).unwrap();
        assert_eq!(asp.max_jitter, SimDuration::from_ms(20));
        assert_eq!(asp.lease_duration, SimDuration::from_ms(500));
        assert!((asp.max_loss_rate - 0.001).abs() < 1e-12);
    }

    #[test]
    fn region_outside_policy_is_infeasible() {
        let mut p = policy();
        p.allowed_regions = [Region::from("US")].into_iter().collect();
        assert!(matches!(
            derive_asp(&intent(50, 0.99), &p),
            Err(ControllerError::PolicyInfeasible(_))
        ));
    }

    #[test]
    fn unknown_outcome_is_infeasible() {
        let mut i = intent(50, 0.99);
        i.outcome_tag = "translation".into();
        assert!(matches!(
            derive_asp(&i, &policy()),
            Err(ControllerError::PolicyInfeasible(_))
        ));
    }

    #[test]
    fn identities_come_from_the_run_counter() {
        let asp = derive_asp(&intent(50, 0.99), &policy()).unwrap();
        let mut ids = IdSource::new();
        let (a1, t1) = issue_identity(&asp, SimTime::ZERO, &mut ids, SimDuration::ZERO);
        assert_eq!(a1.id, 1);
        assert_eq!(t1.token_id, TokenId(2));
        assert_eq!(t1.bound_aisi, a1);
        assert!(t1.expires_at >= SimTime::from_ms(500));
        let (a2, _) = issue_identity(&asp, SimTime::ZERO, &mut ids, SimDuration::ZERO);
        assert_ne!(a1, a2);
    }

    #[test]
    fn failed_anchor_is_filtered() {
        let asp = derive_asp(&intent(50, 0.99), &policy()).unwrap();
        let mut dead = anchor("a", SiteClass::Edge, 5, vec![tier("small", 10.0, 1.0)]);
        dead.health = Health::Failed;
        let live = anchor("b", SiteClass::Edge, 5, vec![tier("small", 10.0, 1.0)]);
        let c = generate_candidates(&asp, &[dead, live], &Telemetry::default(), 10.0);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].anchor_id, AnchorId::from("b"));
    }

    #[test]
    fn edge_outranks_cloud_by_score() {
        // edge: 5 + 10*(1+0) = 15; cloud: 40 + 10*(1+0) = 50
        let asp = derive_asp(&intent(50, 0.99), &policy()).unwrap();
        let edge = anchor("edge", SiteClass::Edge, 5, vec![tier("small", 10.0, 1.0)]);
        let cloud = anchor("cloud", SiteClass::Cloud, 40, vec![tier("small", 10.0, 1.0)]);
        let c = generate_candidates(&asp, &[cloud, edge], &Telemetry::default(), 10.0);
        assert_eq!(c[0].anchor_id, AnchorId::from("edge"));
        assert!((c[0].score - 15.0).abs() < 1e-9);
        assert!((c[1].score - 50.0).abs() < 1e-9);
    }

    #[test]
    fn load_raises_score() {
        let asp = derive_asp(&intent(50, 0.99), &policy()).unwrap();
        let edge = anchor("edge", SiteClass::Edge, 5, vec![tier("small", 10.0, 1.0)]);
        let mut t = Telemetry::default();
        t.views.insert(
            edge.anchor_id.clone(),
            AnchorView {
                path_latency: SimDuration::from_ms(5),
                load_fraction: 0.5,
            },
        );
        let c = generate_candidates(&asp, &[edge], &t, 10.0);
        assert!((c[0].score - 20.0).abs() < 1e-9);
    }

    #[test]
    fn equal_scores_prefer_cheaper() {
        let asp = derive_asp(&intent(50, 0.99), &policy()).unwrap();
        let pricey = anchor("a", SiteClass::Edge, 5, vec![tier("small", 10.0, 2.0)]);
        let cheap = anchor("b", SiteClass::Edge, 5, vec![tier("small", 10.0, 1.0)]);
        let c = generate_candidates(&asp, &[pricey, cheap], &Telemetry::default(), 10.0);
        assert_eq!(c[0].anchor_id, AnchorId::from("b"));
    }

    #[test]
    fn candidate_uses_preferred_offered_tier() {
        let asp = derive_asp(&intent(50, 0.99), &policy()).unwrap();
        let both = anchor(
            "cloud",
            SiteClass::Cloud,
            30,
            vec![tier("small", 10.0, 1.0), tier("large", 20.0, 3.0)],
        );
        let c = generate_candidates(&asp, std::slice::from_ref(&both), &Telemetry::default(), 10.0);
        assert_eq!(c[0].tier.tier_id, TierId::from("large"));
        let f = fallback_variants(&asp, std::slice::from_ref(&both), &Telemetry::default(), 10.0);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].tier.tier_id, TierId::from("small"));
    }

    /// Admission stub replaying a fixed script of replies.
    pub(crate) struct Scripted {
        pub replies: VecDeque<Result<(), RejectCause>>,
        pub asked: Vec<(SimTime, AnchorId)>,
        pub ids: u64,
    }

    impl AdmissionPort for Scripted {
        fn request_lease(
            &mut self,
            c: &Candidate,
            aisi: Aisi,
            asp: &Asp,
            now: SimTime,
        ) -> Result<Commit, RejectCause> {
            self.asked.push((now, c.anchor_id.clone()));
            self.replies.pop_front().unwrap_or(Err(RejectCause::Capacity))?;
            self.ids += 1;
            Ok(Commit {
                lease_id: LeaseId(1000 + self.ids),
                aisi,
                anchor_id: c.anchor_id.clone(),
                tier: c.tier.tier_id.clone(),
                qos: QosBinding {
                    treatment_class: "assured".into(),
                    latency_budget: asp.target_latency,
                },
                issued_at: now,
                expires_at: now + asp.lease_duration,
                state: LeaseState::Active,
            })
        }
    }

    #[derive(Default)]
    pub(crate) struct Recorder {
        pub installed: Vec<(SimTime, LeaseId)>,
    }

    impl SteeringPort for Recorder {
        fn install_for(&mut self, c: &Commit, _aist: &Aist, now: SimTime) -> Result<(), String> {
            self.installed.push((now, c.lease_id));
            Ok(())
        }
    }

    fn three_anchors() -> Vec<Anchor> {
        vec![
            anchor("a", SiteClass::Edge, 5, vec![tier("small", 10.0, 1.0)]),
            anchor("b", SiteClass::Edge, 10, vec![tier("small", 10.0, 1.0)]),
            anchor("c", SiteClass::Cloud, 30, vec![tier("small", 10.0, 1.0)]),
        ]
    }

    fn run(
        anchors: &[Anchor],
        replies: Vec<Result<(), RejectCause>>,
        delay_ms: u64,
    ) -> (TransactionOutcome, Scripted, Recorder) {
        let mut port = Scripted {
            replies: replies.into(),
            asked: vec![],
            ids: 0,
        };
        let mut rec = Recorder::default();
        let inputs = TxnInputs {
            anchors,
            telemetry: &Telemetry::default(),
            admission_delay: SimDuration::from_ms(delay_ms),
        };
        let out = run_transaction(
            &intent(50, 0.99),
            &policy(),
            SimTime::ZERO,
            &mut IdSource::new(),
            &inputs,
            &mut port,
            &mut rec,
        )
        .unwrap();
        (out, port, rec)
    }

    #[test]
    fn single_candidate_accepts() {
        let anchors = vec![anchor("a", SiteClass::Edge, 5, vec![tier("small", 10.0, 1.0)])];
        let (out, _, rec) = run(&anchors, vec![Ok(())], 5);
        let TxnResult::Success { commit, .. } = &out.result else {
            panic!("expected success");
        };
        assert_eq!(commit.anchor_id, AnchorId::from("a"));
        assert_eq!(rec.installed, vec![(SimTime::from_ms(5), commit.lease_id)]);
    }

    #[test]
    fn no_candidates_rejects_immediately() {
        let (out, port, _) = run(&[], vec![], 5);
        assert!(port.asked.is_empty());
        assert_eq!(out.elapsed, SimDuration::ZERO);
        let TxnResult::Reject { causes, .. } = out.result else {
            panic!("expected reject");
        };
        assert!(causes.is_empty());
    }

    #[test]
    fn two_capacity_rejects_then_accept() {
        let (out, port, _) = run(
            &three_anchors(),
            vec![Err(RejectCause::Capacity), Err(RejectCause::Capacity), Ok(())],
            5,
        );
        assert!(out.is_success());
        assert_eq!(port.asked.len(), 3);
        assert_eq!(
            port.asked.iter().map(|a| a.1.as_str()).collect::<Vec<_>>(),
            vec!["a", "b", "c"]
        );
        assert_eq!(out.elapsed, SimDuration::from_ms(15));
    }

    #[test]
    fn commit_timeout_bounds_attempts() {
        let mut anchors = three_anchors();
        anchors.push(anchor("d", SiteClass::Cloud, 40, vec![tier("small", 10.0, 1.0)]));
        anchors.push(anchor("e", SiteClass::Cloud, 45, vec![tier("small", 10.0, 1.0)]));
        // 40 ms per attempt, T_C = 100 ms: attempts start at 0, 40, 80. The
        // third reply lands at 120 > 100 and is counted as a timeout.
        let (out, port, _) = run(&anchors, vec![Err(RejectCause::Capacity); 5], 40);
        assert_eq!(port.asked.len(), 2, "late reply must not reach admission");
        let TxnResult::Reject { causes, .. } = out.result else {
            panic!("expected reject");
        };
        assert_eq!(causes.count(RejectCause::Capacity), 2);
        assert_eq!(causes.count(RejectCause::Timeout), 1);
        assert_eq!(causes.total(), 3);
    }

    #[test]
    fn fallback_expands_on_capacity_only() {
        let anchors = vec![
            anchor("a", SiteClass::Edge, 5, vec![tier("large", 20.0, 3.0)]),
            anchor(
                "b",
                SiteClass::Cloud,
                30,
                vec![tier("large", 20.0, 3.0), tier("small", 10.0, 1.0)],
            ),
        ];
        let asp = derive_asp(&intent(50, 0.99), &policy()).unwrap();
        let t = Telemetry::default();
        let ranked = generate_candidates(&asp, &anchors, &t, 10.0);
        let reserve = fallback_variants(&asp, &anchors, &t, 10.0);

        let mut txn = Transaction::new(
            Aisi { id: 1, created_at: SimTime::ZERO },
            SimTime::ZERO,
            SimDuration::from_ms(100),
            ranked.clone(),
            reserve.clone(),
        );
        txn.next_attempt(SimTime::ZERO).unwrap();
        txn.resolve(SimTime::from_ms(5), |_| Err(RejectCause::Policy));
        assert_eq!(txn.remaining(), 1, "policy rejects never expand");

        let mut txn = Transaction::new(
            Aisi { id: 1, created_at: SimTime::ZERO },
            SimTime::ZERO,
            SimDuration::from_ms(100),
            ranked,
            reserve,
        );
        txn.next_attempt(SimTime::ZERO).unwrap();
        txn.resolve(SimTime::from_ms(5), |_| Err(RejectCause::Capacity));
        assert_eq!(txn.remaining(), 2);
        // b/small (30 + 10 = 40) now precedes b/large (30 + 20 = 50).
        let next = txn.next_attempt(SimTime::from_ms(5)).unwrap();
        assert_eq!(next.tier.tier_id, TierId::from("small"));
    }

    #[test]
    fn behaviors_match_policy_kinds() {
        assert!(select_action(PolicyKind::AiPaging).lease_gated);
        let eb = select_action(PolicyKind::EndpointBound);
        assert!(!eb.relocates && !eb.lease_gated && eb.retries == 3);
        let be = select_action(PolicyKind::BestEffort);
        assert!(be.relocates && !be.lease_gated && !be.make_before_break);
    }

    #[test]
    fn policy_kind_parses() {
        assert_eq!("AiPaging".parse::<PolicyKind>(), Ok(PolicyKind::AiPaging));
        assert_eq!("endpoint_bound".parse::<PolicyKind>(), Ok(PolicyKind::EndpointBound));
        assert!("random".parse::<PolicyKind>().is_err());
    }
}
