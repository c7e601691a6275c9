// SPDX-License-Identifier: Apache-2.0 OR MIT

//! The event loop. One engine instance runs one scenario under one policy
//! and produces the trace; all metrics are later computed from that trace.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::controller::{
    derive_asp, fallback_variants, generate_candidates, issue_identity, predicted_latency_ms,
    select_action, AnchorView, Eligibility, OperatorPolicy, Resolution, SessionBehavior, Telemetry,
    Transaction,
};
use crate::enforcement::{Classification, SteeringTable, ACTIVE};
use crate::lease::{LeaseRequest, LeaseTable};
use crate::model::{
    Aisi, Anchor, Asp, Backing, Commit, EviKind, EviRecord, EvidenceLevel, Health, IdSource,
    Intent, LeaseId, LeaseState, ModelTier, Observables, QosBinding, RejectCause, SimDuration,
    SimTime, SiteClass, TierId, TokenId,
};
use crate::relocation::{
    classify_trigger, relocation_transaction, RateLimiter, RelocFailure, RelocationJob,
    RelocationParams, TriggerInput,
};

use super::config::{FailureKind, ScenarioConfig};
use super::service::{sample_service, AnchorService};
use super::trace::{Purpose, Record, Reply, Served, Trace};
use super::SimError;

const OUTCOME_TAG: &str = "inference";
const BUDGET: f64 = 2.0;
const DEFAULT_BACKOFF: SimDuration = SimDuration::from_ms(10);

const STREAM_SERVICE: u64 = 1;
const STREAM_MOBILITY: u64 = 2;
const STREAM_FAILURE: u64 = 3;
const STREAM_ARRIVALS: u64 = 1000;

#[derive(Debug)]
enum Ev {
    SessionStart(usize),
    Arrival(usize),
    AdmissionReply { s: usize, txn: u64 },
    Renew { s: usize, lease: LeaseId },
    DrainDeadline { s: usize, job: u64 },
    MobilityTick,
    FailureTick,
    AnchorFail { a: usize, hard: bool, recover_after: Option<SimDuration> },
    AnchorRecover(usize),
    Overload,
    RequestDone(InFlight),
    RequestRetry { s: usize, req: u64, arrived: SimTime, attempt: u32 },
    Reattach(usize),
    Recheck(usize),
    Resteer { s: usize, to: usize, job: u64 },
}

impl Ev {
    /// Events still processed after the horizon so that in-flight requests
    /// get an outcome.
    fn drains(&self) -> bool {
        matches!(self, Ev::RequestDone(_) | Ev::RequestRetry { .. })
    }
}

#[derive(Debug)]
struct InFlight {
    s: usize,
    req: u64,
    arrived: SimTime,
    anchor: usize,
    epoch: u64,
    lease: Option<LeaseId>,
    tier: TierId,
    queueing: SimDuration,
    attempt: u32,
}

struct Scheduled {
    time: SimTime,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct PendingTxn {
    id: u64,
    txn: Transaction,
    purpose: Purpose,
}

struct Session {
    zone: u32,
    aisi: Option<Aisi>,
    token: TokenId,
    /// Lease currently carrying traffic (gated policy only).
    lease: Option<LeaseId>,
    txn: Option<PendingTxn>,
    job: Option<RelocationJob>,
    /// Anchor of the ungated route (baselines only).
    route: Option<usize>,
    resteering: bool,
    path_dirty: bool,
    reattach_pending: bool,
    recheck_pending: bool,
    limiter: RateLimiter,
    arrivals: ChaCha8Rng,
}

pub(super) struct Engine<'c> {
    cfg: &'c ScenarioConfig,
    behavior: SessionBehavior,
    asp: Asp,
    params: RelocationParams,
    anchors: Vec<Anchor>,
    anchor_index: BTreeMap<String, usize>,
    zones: u32,
    service: Vec<AnchorService>,
    leases: LeaseTable,
    steering: SteeringTable,
    ids: IdSource,
    sessions: Vec<Session>,
    by_aisi: BTreeMap<u64, usize>,
    queue: BinaryHeap<Scheduled>,
    next_seq: u64,
    next_txn: u64,
    next_job: u64,
    next_req: u64,
    now: SimTime,
    horizon: SimTime,
    trace: Trace,
    abort: Option<String>,
    rng_service: ChaCha8Rng,
    rng_mobility: ChaCha8Rng,
    rng_failure: ChaCha8Rng,
    // Derived durations.
    tc: SimDuration,
    td: SimDuration,
    rtt: SimDuration,
    deadline: SimDuration,
    renew_lead: SimDuration,
}

fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(n);
    r
}

fn exp_gap(rng: &mut ChaCha8Rng, rate_per_s: f64) -> SimDuration {
    let secs: f64 = Exp::new(rate_per_s).expect("positive rate").sample(rng);
    SimDuration::from_us((secs * 1e6).round() as u64)
}

impl<'c> Engine<'c> {
    pub(super) fn new(cfg: &'c ScenarioConfig) -> Result<Self, SimError> {
        let dur = ScenarioConfig::dur;
        let regions: BTreeSet<_> = cfg.anchors.iter().map(|a| a.region.clone()).collect();
        let mut tiers: Vec<TierId> = Vec::new();
        for a in &cfg.anchors {
            let mut offered: Vec<&ModelTier> = a.tiers_offered.iter().collect();
            offered.sort_by(|x, y| x.cost.total_cmp(&y.cost));
            for t in offered {
                if !tiers.contains(&t.tier_id) {
                    tiers.push(t.tier_id.clone());
                }
            }
        }
        let policy = OperatorPolicy {
            eligibility: Eligibility::default(),
            allowed_regions: regions,
            tier_policy: BTreeMap::from([(OUTCOME_TAG.to_string(), tiers)]),
            default_lease_duration: dur(cfg.lease_duration_ms),
            commit_timeout: dur(cfg.commit_timeout_ms),
            drain_timeout: dur(cfg.drain_timeout_ms),
            default_evidence: cfg.evidence,
            default_max_relocation_rate: cfg.max_relocation_rate,
            token_lifetime: dur(cfg.horizon_ms),
        };
        let intent = Intent {
            outcome_tag: OUTCOME_TAG.into(),
            target_latency: dur(cfg.target_latency_ms),
            reliability_target: cfg.reliability_target,
            locality_requirement: BTreeSet::from([cfg.region.clone()]),
            trust_requirements: BTreeSet::new(),
            budget: BUDGET,
        };
        let asp = derive_asp(&intent, &policy).map_err(|e| SimError::Setup(e.to_string()))?;
        let behavior = select_action(cfg.policy);
        let zones = cfg
            .anchors
            .iter()
            .filter_map(|a| a.zone)
            .max()
            .map_or(0, |z| z + 1);
        let sessions = (0..cfg.sessions)
            .map(|i| Session {
                zone: if zones == 0 { 0 } else { i % zones },
                aisi: None,
                token: TokenId(0),
                lease: None,
                txn: None,
                job: None,
                route: None,
                resteering: false,
                path_dirty: false,
                reattach_pending: false,
                recheck_pending: false,
                limiter: RateLimiter::default(),
                arrivals: stream(cfg.seed, STREAM_ARRIVALS + u64::from(i)),
            })
            .collect();
        let target = dur(cfg.target_latency_ms);
        Ok(Engine {
            cfg,
            behavior,
            params: RelocationParams {
                hysteresis: cfg.hysteresis,
                margin: cfg.margin,
                ..RelocationParams::default()
            },
            asp,
            anchor_index: cfg
                .anchors
                .iter()
                .enumerate()
                .map(|(i, a)| (a.anchor_id.as_str().to_string(), i))
                .collect(),
            zones,
            service: cfg.anchors.iter().map(|a| AnchorService::new(a.capacity)).collect(),
            anchors: cfg.anchors.clone(),
            leases: LeaseTable::new(),
            steering: SteeringTable::new(behavior.lease_gated),
            ids: IdSource::new(),
            sessions,
            by_aisi: BTreeMap::new(),
            queue: BinaryHeap::new(),
            next_seq: 0,
            next_txn: 1,
            next_job: 1,
            next_req: 1,
            now: SimTime::ZERO,
            horizon: SimTime::ZERO + dur(cfg.horizon_ms),
            trace: Trace::default(),
            abort: None,
            rng_service: stream(cfg.seed, STREAM_SERVICE),
            rng_mobility: stream(cfg.seed, STREAM_MOBILITY),
            rng_failure: stream(cfg.seed, STREAM_FAILURE),
            tc: dur(cfg.commit_timeout_ms),
            td: dur(cfg.drain_timeout_ms),
            rtt: dur(cfg.admission_rtt_ms),
            deadline: target.mul_f64(cfg.deadline_factor),
            renew_lead: dur(cfg.lease_duration_ms).mul_f64(cfg.renew_ahead),
        })
    }

    // -----------------------------------------------------------------------
    // Loop
    // -----------------------------------------------------------------------

    pub(super) fn run(mut self) -> Result<Trace, SimError> {
        let cfg = self.cfg;
        self.emit(Record::Run {
            policy: cfg.policy,
            setup: cfg.setup.to_string(),
            seed: cfg.seed,
            horizon_us: self.horizon.as_us(),
            tc_us: self.tc.as_us(),
            td_us: self.td.as_us(),
            sessions: cfg.sessions,
        });
        let spacing = ScenarioConfig::dur(cfg.session_spacing_ms);
        for s in 0..self.sessions.len() {
            let at = SimTime::ZERO + SimDuration::from_us(spacing.as_us() * s as u64);
            self.schedule(at, Ev::SessionStart(s));
        }
        self.schedule_after(ScenarioConfig::dur(cfg.mobility_interval_ms), Ev::MobilityTick);
        let rate = cfg.effective_failure_rate();
        if rate > 0.0 {
            let gap = exp_gap(&mut self.rng_failure, rate);
            self.schedule_after(gap, Ev::FailureTick);
        }
        for f in &cfg.failure_schedule {
            let a = self.anchor_index[f.anchor.as_str()];
            self.schedule(
                SimTime::ZERO + ScenarioConfig::dur(f.at_ms),
                Ev::AnchorFail {
                    a,
                    hard: f.kind == FailureKind::Hard,
                    recover_after: f.recover_after_ms.map(ScenarioConfig::dur),
                },
            );
        }
        if self.anchors.iter().any(|a| cfg.overloaded_capacity(a.capacity).is_some()) {
            let at = cfg
                .overload_at_ms
                .map(|ms| SimTime::ZERO + ScenarioConfig::dur(ms))
                .unwrap_or(SimTime::from_us(self.horizon.as_us() / 2));
            self.schedule(at, Ev::Overload);
        }

        loop {
            let next_ev = self.queue.peek().map(|e| e.time);
            let next_exp = self.leases.next_expiry().filter(|t| *t < self.horizon);
            match (next_exp, next_ev) {
                (Some(te), Some(tv)) if te <= tv => self.process_expiries(te),
                (Some(te), None) => self.process_expiries(te),
                (_, Some(_)) => {
                    let Scheduled { time, ev, .. } = self.queue.pop().expect("peeked");
                    if time >= self.horizon && !ev.drains() {
                        continue;
                    }
                    self.now = time;
                    self.handle(ev);
                }
                (None, None) => break,
            }
            if let Some(msg) = self.abort.take() {
                return Err(SimError::InvariantAbort(msg));
            }
        }
        self.now = self.now.max(self.horizon);
        self.emit(Record::RunEnd);
        Ok(self.trace)
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::SessionStart(s) => self.on_session_start(s),
            Ev::Arrival(s) => self.on_arrival(s),
            Ev::AdmissionReply { s, txn } => self.on_admission_reply(s, txn),
            Ev::Renew { s, lease } => self.on_renew(s, lease),
            Ev::DrainDeadline { s, job } => self.on_drain_deadline(s, job),
            Ev::MobilityTick => self.on_mobility_tick(),
            Ev::FailureTick => self.on_failure_tick(),
            Ev::AnchorFail { a, hard, recover_after } => self.on_anchor_fail(a, hard, recover_after),
            Ev::AnchorRecover(a) => self.on_anchor_recover(a),
            Ev::Overload => self.on_overload(),
            Ev::RequestDone(f) => self.on_request_done(f),
            Ev::RequestRetry { s, req, arrived, attempt } => {
                if self.now >= self.horizon {
                    // Censored: the run ended before the retry.
                    self.outcome(s, req, arrived, Served::Lost, Some("horizon"), None, None);
                } else {
                    self.route_request(s, req, arrived, attempt);
                }
            }
            Ev::Reattach(s) => self.on_reattach(s),
            Ev::Recheck(s) => {
                self.sessions[s].recheck_pending = false;
                self.evaluate(s);
            }
            Ev::Resteer { s, to, job } => self.on_resteer(s, to, job),
        }
    }

    fn schedule(&mut self, time: SimTime, ev: Ev) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled { time, seq, ev });
    }

    fn schedule_after(&mut self, d: SimDuration, ev: Ev) {
        self.schedule(self.now + d, ev);
    }

    fn emit(&mut self, r: Record) {
        self.trace.push(self.now, r);
    }

    fn fail_invariant(&mut self, msg: String) {
        self.abort.get_or_insert(msg);
    }

    // -----------------------------------------------------------------------
    // Views
    // -----------------------------------------------------------------------

    fn aisi(&self, s: usize) -> Aisi {
        self.sessions[s].aisi.expect("session started")
    }

    fn path(&self, s: usize, a: usize) -> SimDuration {
        let anchor = &self.anchors[a];
        match anchor.zone {
            Some(z) if z != self.sessions[s].zone => {
                anchor.path_latency + ScenarioConfig::dur(self.cfg.remote_penalty_ms)
            }
            _ => anchor.path_latency,
        }
    }

    fn telemetry(&self, s: usize) -> Telemetry {
        Telemetry {
            views: self
                .anchors
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    (
                        a.anchor_id.clone(),
                        AnchorView {
                            path_latency: self.path(s, i),
                            load_fraction: self.leases.load_fraction(a),
                        },
                    )
                })
                .collect(),
        }
    }

    fn preferred_tier(&self, a: usize) -> Option<&ModelTier> {
        let anchor = &self.anchors[a];
        self.asp.allowed_fallback_tiers.iter().find_map(|t| anchor.tier(t))
    }

    fn predicted_ms(&self, s: usize, a: usize) -> f64 {
        let Some(tier) = self.preferred_tier(a) else {
            return f64::INFINITY;
        };
        let view = AnchorView {
            path_latency: self.path(s, a),
            load_fraction: self.leases.load_fraction(&self.anchors[a]),
        };
        predicted_latency_ms(view, tier)
    }

    fn idx(&self, anchor: &str) -> usize {
        self.anchor_index[anchor]
    }

    fn anchor_name(&self, a: usize) -> String {
        self.anchors[a].anchor_id.as_str().to_string()
    }

    /// Anchor currently carrying the session's traffic.
    fn serving_anchor(&self, s: usize) -> Option<usize> {
        if self.behavior.lease_gated {
            let aisi = self.sessions[s].aisi?;
            self.steering.top(aisi).map(|e| self.idx(e.anchor_id.as_str()))
        } else {
            self.sessions[s].route
        }
    }

    fn has_route(&self, s: usize) -> bool {
        let sess = &self.sessions[s];
        if self.behavior.lease_gated {
            sess.aisi.is_some_and(|a| !self.steering.entries_for(a).is_empty())
        } else {
            sess.route.is_some() || sess.resteering
        }
    }

    fn qos(&self) -> QosBinding {
        QosBinding {
            treatment_class: "assured".into(),
            latency_budget: self.asp.target_latency,
        }
    }

    // -----------------------------------------------------------------------
    // Evidence
    // -----------------------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn evi(
        &mut self,
        kind: EviKind,
        aisi: Aisi,
        refs: Vec<LeaseId>,
        anchor: usize,
        tier: Option<TierId>,
        latency: Option<SimDuration>,
        lost: bool,
    ) {
        let record = EviRecord::new(
            self.now,
            aisi,
            kind,
            refs,
            self.anchors[anchor].anchor_id.clone(),
            tier,
            Observables {
                delivery_latency: latency,
                queueing_delay: None,
                lost,
            },
        );
        match record {
            Ok(r) => self.emit_evi(r),
            Err(e) => self.fail_invariant(format!("evidence record: {e}")),
        }
    }

    fn emit_evi(&mut self, r: EviRecord) {
        self.emit(Record::Evi {
            kind: r.event_kind,
            aisi: r.aisi.id,
            leases: r.lease_refs,
            anchor: r.anchor_id.as_str().to_string(),
            tier: r.tier_id.map(|t| t.as_str().to_string()),
            latency_us: r.observables.delivery_latency.map(SimDuration::as_us),
            lost: r.observables.lost,
        });
    }

    fn level(&self) -> EvidenceLevel {
        self.asp.evidence_requirements
    }

    fn escalated(&self, a: usize) -> bool {
        self.leases.load_fraction(&self.anchors[a]) > self.cfg.overload_threshold
    }

    /// Evidence for one admission decision on anchor `a`.
    fn admission_evidence(&mut self, s: usize, a: usize, result: Result<LeaseId, RejectCause>) {
        let aisi = self.aisi(s);
        let escalated = self.escalated(a);
        match result {
            Err(_) if escalated || self.level() >= EvidenceLevel::PerEvent => {
                self.evi(EviKind::AdmissionReject, aisi, vec![], a, None, None, false);
            }
            Ok(id) if escalated => {
                self.evi(EviKind::HealthChange, aisi, vec![id], a, None, None, false);
            }
            _ => {}
        }
    }

    // -----------------------------------------------------------------------
    // Sessions and transactions
    // -----------------------------------------------------------------------

    fn on_session_start(&mut self, s: usize) {
        let zone = self.sessions[s].zone;
        self.emit(Record::SessionStart { session: s as u32, zone });
        let (aisi, aist) = issue_identity(
            &self.asp,
            self.now,
            &mut self.ids,
            ScenarioConfig::dur(self.cfg.horizon_ms),
        );
        self.emit(Record::Identity {
            session: s as u32,
            aisi: aisi.id,
            aist: aist.token_id.0,
        });
        self.by_aisi.insert(aisi.id, s);
        let sess = &mut self.sessions[s];
        sess.aisi = Some(aisi);
        sess.token = aist.token_id;
        let gap = exp_gap(&mut sess.arrivals, self.cfg.effective_arrival_rate());
        self.schedule_after(gap, Ev::Arrival(s));
        self.start_txn(s, Purpose::Initial);
    }

    fn start_txn(&mut self, s: usize, purpose: Purpose) {
        let aisi = self.aisi(s);
        let tel = self.telemetry(s);
        let txn = if purpose == Purpose::Relocation {
            let from = self.sessions[s]
                .job
                .as_ref()
                .expect("relocation job")
                .old_anchor
                .clone();
            match relocation_transaction(
                aisi, &self.asp, &self.anchors, &from, &tel, BUDGET, self.now, self.tc,
            ) {
                Ok(t) => {
                    if let Some(job) = self.sessions[s].job.as_mut() {
                        job.begin_admission();
                    }
                    t
                }
                Err(f) => {
                    self.fail_job(s, f);
                    return;
                }
            }
        } else {
            let mut ranked = generate_candidates(&self.asp, &self.anchors, &tel, BUDGET);
            let mut reserve = fallback_variants(&self.asp, &self.anchors, &tel, BUDGET);
            if !self.behavior.lease_gated {
                ranked.truncate(1);
                reserve.clear();
            }
            Transaction::new(aisi, self.now, self.tc, ranked, reserve)
        };
        let id = self.next_txn;
        self.next_txn += 1;
        self.emit(Record::TxnStart { aisi: aisi.id, txn: id, purpose });
        self.sessions[s].txn = Some(PendingTxn { id, txn, purpose });
        self.step_txn(s);
    }

    fn step_txn(&mut self, s: usize) {
        let aisi = self.aisi(s);
        let now = self.now;
        let p = self.sessions[s].txn.as_mut().expect("pending transaction");
        let id = p.id;
        match p.txn.next_attempt(now) {
            Some(c) => {
                self.emit(Record::Attempt {
                    aisi: aisi.id,
                    txn: id,
                    anchor: c.anchor_id.as_str().to_string(),
                    tier: c.tier.tier_id.as_str().to_string(),
                    score: c.score,
                });
                self.schedule_after(self.rtt, Ev::AdmissionReply { s, txn: id });
            }
            None => {
                let p = self.sessions[s].txn.take().expect("pending transaction");
                self.finish_rejected(s, p);
            }
        }
    }

    fn finish_rejected(&mut self, s: usize, p: PendingTxn) {
        let aisi = self.aisi(s);
        let elapsed = p.txn.elapsed(self.now);
        self.emit(Record::TxnEnd {
            aisi: aisi.id,
            txn: p.id,
            success: false,
            causes: p.txn.causes().to_string(),
            elapsed_us: elapsed.as_us(),
        });
        match p.purpose {
            Purpose::Relocation => {
                let cause = if elapsed >= self.tc || p.txn.causes().count(RejectCause::Timeout) > 0 {
                    RelocFailure::AdmissionTimeout
                } else {
                    RelocFailure::NoFeasibleTarget
                };
                self.fail_job(s, cause);
            }
            Purpose::Initial | Purpose::Reattach => self.schedule_reattach(s, true),
        }
    }

    fn on_admission_reply(&mut self, s: usize, txn_id: u64) {
        let Some(mut p) = self.sessions[s].txn.take() else {
            return;
        };
        if p.id != txn_id {
            self.sessions[s].txn = Some(p);
            return;
        }
        let aisi = self.aisi(s);
        let now = self.now;
        let resolution = p.txn.resolve(now, |c| {
            let a = self.anchor_index[c.anchor_id.as_str()];
            let req = LeaseRequest {
                anchor: &self.anchors[a],
                tier: &c.tier.tier_id,
                aisi,
                asp: &self.asp,
                eligible: true,
                qos: QosBinding {
                    treatment_class: "assured".into(),
                    latency_budget: self.asp.target_latency,
                },
                renewing: None,
            };
            self.leases.request_lease(&mut self.ids, req, now)
        });
        match resolution {
            Resolution::Accepted { candidate, commit } => {
                let a = self.idx(candidate.anchor_id.as_str());
                self.emit(Record::AttemptReply {
                    aisi: aisi.id,
                    txn: p.id,
                    anchor: self.anchor_name(a),
                    reply: Reply::Accept(commit.lease_id),
                });
                self.emit_grant(&commit, None);
                self.admission_evidence(s, a, Ok(commit.lease_id));
                match (self.behavior.lease_gated, p.purpose) {
                    (true, Purpose::Relocation) => self.complete_relocation(s, &commit),
                    (true, _) => self.install_initial(s, &commit),
                    (false, _) => self.install_baseline(s, a),
                }
                self.emit(Record::TxnEnd {
                    aisi: aisi.id,
                    txn: p.id,
                    success: true,
                    causes: p.txn.causes().to_string(),
                    elapsed_us: p.txn.elapsed(now).as_us(),
                });
            }
            Resolution::Rejected { candidate, cause } => {
                let a = self.idx(candidate.anchor_id.as_str());
                self.emit(Record::AttemptReply {
                    aisi: aisi.id,
                    txn: p.id,
                    anchor: self.anchor_name(a),
                    reply: Reply::Reject(cause),
                });
                self.admission_evidence(s, a, Err(cause));
                if !self.behavior.lease_gated {
                    // Baselines install the route regardless of the reply.
                    self.install_baseline(s, a);
                    self.emit(Record::TxnEnd {
                        aisi: aisi.id,
                        txn: p.id,
                        success: false,
                        causes: p.txn.causes().to_string(),
                        elapsed_us: p.txn.elapsed(now).as_us(),
                    });
                    return;
                }
                self.sessions[s].txn = Some(p);
                self.step_txn(s);
            }
        }
    }

    fn emit_grant(&mut self, c: &Commit, renews: Option<LeaseId>) {
        self.emit(Record::LeaseGrant {
            lease: c.lease_id,
            aisi: c.aisi.id,
            anchor: c.anchor_id.as_str().to_string(),
            tier: c.tier.as_str().to_string(),
            expires_us: c.expires_at.as_us(),
            renews,
        });
    }

    fn install_initial(&mut self, s: usize, commit: &Commit) {
        let token = self.sessions[s].token;
        match self.steering.install_steering(commit, token, ACTIVE, self.now) {
            Ok(e) => {
                self.emit(Record::SteerInstall {
                    aisi: e.aisi.id,
                    anchor: e.anchor_id.as_str().to_string(),
                    backing: e.backing,
                    prio: e.priority,
                });
                self.sessions[s].lease = Some(commit.lease_id);
                self.schedule_renew(s, commit);
            }
            Err(e) => self.fail_invariant(format!("initial install: {e}")),
        }
    }

    fn install_baseline(&mut self, s: usize, a: usize) {
        let aisi = self.aisi(s);
        let token = self.sessions[s].token;
        let anchor = self.anchors[a].anchor_id.clone();
        match self
            .steering
            .install_ungated(aisi, token, anchor, self.qos(), ACTIVE, self.now)
        {
            Ok(e) => {
                self.emit(Record::SteerInstall {
                    aisi: aisi.id,
                    anchor: e.anchor_id.as_str().to_string(),
                    backing: e.backing,
                    prio: e.priority,
                });
                self.sessions[s].route = Some(a);
            }
            Err(e) => self.fail_invariant(format!("baseline install: {e}")),
        }
    }

    fn schedule_reattach(&mut self, s: usize, backoff: bool) {
        let sess = &mut self.sessions[s];
        if sess.reattach_pending {
            return;
        }
        sess.reattach_pending = true;
        let d = if backoff {
            ScenarioConfig::dur(self.cfg.reattach_backoff_ms)
        } else {
            SimDuration::ZERO
        };
        self.schedule_after(d, Ev::Reattach(s));
    }

    fn on_reattach(&mut self, s: usize) {
        self.sessions[s].reattach_pending = false;
        if self.has_route(s) || self.sessions[s].txn.is_some() || self.sessions[s].job.is_some() {
            return;
        }
        self.start_txn(s, Purpose::Reattach);
    }

    // -----------------------------------------------------------------------
    // Leases
    // -----------------------------------------------------------------------

    fn schedule_renew(&mut self, s: usize, commit: &Commit) {
        let at = commit.expires_at - self.renew_lead;
        if at > self.now {
            self.schedule(at, Ev::Renew { s, lease: commit.lease_id });
        }
    }

    fn on_renew(&mut self, s: usize, lease: LeaseId) {
        if self.sessions[s].lease != Some(lease) || !self.leases.is_valid(lease, self.now) {
            return;
        }
        let aisi = self.aisi(s);
        let old = self.leases.get(lease).expect("valid lease").clone();
        let a = self.idx(old.anchor_id.as_str());
        let req = LeaseRequest {
            anchor: &self.anchors[a],
            tier: &old.tier,
            aisi,
            asp: &self.asp,
            eligible: true,
            qos: old.qos.clone(),
            renewing: Some(lease),
        };
        match self.leases.request_lease(&mut self.ids, req, self.now) {
            Ok(new) => {
                self.emit_grant(&new, Some(lease));
                self.admission_evidence(s, a, Ok(new.lease_id));
                match self.steering.rebind(lease, &new, self.now) {
                    Ok((removed, installed)) => {
                        for e in removed {
                            self.emit_remove(&e.anchor_id, e.aisi, e.backing);
                        }
                        for e in installed {
                            self.emit(Record::SteerInstall {
                                aisi: e.aisi.id,
                                anchor: e.anchor_id.as_str().to_string(),
                                backing: e.backing,
                                prio: e.priority,
                            });
                        }
                    }
                    Err(e) => return self.fail_invariant(format!("rebind: {e}")),
                }
                if let Err(e) = self.leases.release(lease, self.now) {
                    return self.fail_invariant(format!("release after renewal: {e}"));
                }
                self.emit(Record::LeaseEnd {
                    lease,
                    aisi: aisi.id,
                    state: LeaseState::Released,
                });
                let sess = &mut self.sessions[s];
                sess.lease = Some(new.lease_id);
                if let Some(job) = sess.job.as_mut() {
                    if job.is_pre_flip() && job.old_lease == Some(lease) {
                        job.old_lease = Some(new.lease_id);
                    }
                }
                self.schedule_renew(s, &new);
            }
            Err(cause) => {
                self.emit(Record::RenewReject { aisi: aisi.id, lease, cause });
                self.admission_evidence(s, a, Err(cause));
            }
        }
    }

    fn emit_remove(&mut self, anchor: &crate::model::AnchorId, aisi: Aisi, backing: Backing) {
        self.emit(Record::SteerRemove {
            aisi: aisi.id,
            anchor: anchor.as_str().to_string(),
            backing,
        });
    }

    fn process_expiries(&mut self, t: SimTime) {
        self.now = self.now.max(t);
        for id in self.leases.expire_due(t) {
            self.on_lease_end(id, LeaseState::Expired);
        }
    }

    /// Bookkeeping after a lease expired or was revoked.
    fn on_lease_end(&mut self, id: LeaseId, state: LeaseState) {
        let c = self.leases.get(id).expect("ended lease").clone();
        let Some(&s) = self.by_aisi.get(&c.aisi.id) else {
            return self.fail_invariant(format!("lease {id} has unknown aisi"));
        };
        let a = self.idx(c.anchor_id.as_str());
        self.emit(Record::LeaseEnd { lease: id, aisi: c.aisi.id, state });
        let kind = if state == LeaseState::Revoked {
            EviKind::LeaseRevocation
        } else {
            EviKind::LeaseExpiry
        };
        self.evi(kind, c.aisi, vec![id], a, Some(c.tier.clone()), None, false);
        if self.behavior.lease_gated {
            for e in self.steering.remove_steering(id, self.now) {
                self.emit_remove(&e.anchor_id, e.aisi, e.backing);
            }
            let sess = &mut self.sessions[s];
            if sess.lease == Some(id) {
                sess.lease = None;
            }
            if !self.has_route(s) && self.sessions[s].txn.is_none() && self.sessions[s].job.is_none() {
                self.schedule_reattach(s, false);
            }
        } else {
            let routed = self
                .steering
                .entries_for(c.aisi)
                .iter()
                .any(|e| e.anchor_id == c.anchor_id);
            if routed && self.leases.valid_for(c.aisi, &c.anchor_id, self.now).is_none() {
                self.evi(EviKind::Violation, c.aisi, vec![id], a, None, None, false);
            }
        }
    }

    // -----------------------------------------------------------------------
    // Requests
    // -----------------------------------------------------------------------

    fn on_arrival(&mut self, s: usize) {
        let gap = exp_gap(&mut self.sessions[s].arrivals, self.cfg.effective_arrival_rate());
        if self.now + gap < self.horizon {
            self.schedule_after(gap, Ev::Arrival(s));
        }
        let req = self.next_req;
        self.next_req += 1;
        let aisi = self.aisi(s);
        self.emit(Record::Request { req, aisi: aisi.id });
        self.route_request(s, req, self.now, 0);
    }

    fn route_request(&mut self, s: usize, req: u64, arrived: SimTime, attempt: u32) {
        let aisi = self.aisi(s);
        let token = self.sessions[s].token;
        match self.steering.classify(aisi, token, self.now, &self.leases) {
            Classification::NoRoute => {
                self.emit(Record::Classify { req, route: None });
                self.fail_or_retry(s, req, arrived, attempt, "no_route", None);
            }
            Classification::Stale { lease, anchor_id } => {
                // Unreachable while removal is tied to lease end.
                self.emit(Record::Classify { req, route: None });
                self.emit(Record::Tripwire { aisi: aisi.id, lease });
                let a = self.idx(anchor_id.as_str());
                self.evi(EviKind::Violation, aisi, vec![lease], a, None, None, false);
                self.fail_or_retry(s, req, arrived, attempt, "stale", None);
            }
            Classification::Route { anchor_id, backing, .. } => {
                self.emit(Record::Classify {
                    req,
                    route: Some(anchor_id.as_str().to_string()),
                });
                let a = self.idx(anchor_id.as_str());
                let (lease, tier, extra) = match backing {
                    Backing::Lease(id) => {
                        let tier = self.leases.get(id).expect("routed lease").tier.clone();
                        (Some(id), tier, SimDuration::ZERO)
                    }
                    Backing::Ungated => {
                        let Some(tier) = self.preferred_tier(a).map(|t| t.tier_id.clone()) else {
                            return self.fail_or_retry(s, req, arrived, attempt, "refused", Some(a));
                        };
                        match self.leases.valid_for(aisi, &anchor_id, self.now) {
                            Some(id) => (Some(id), tier, SimDuration::ZERO),
                            None => match self.lazy_admit(s, a, &tier) {
                                Ok(id) => (Some(id), tier, self.rtt),
                                Err(_) => {
                                    return self
                                        .fail_or_retry(s, req, arrived, attempt, "refused", Some(a))
                                }
                            },
                        }
                    }
                };
                self.serve(s, req, arrived, attempt, a, lease, tier, extra);
            }
        }
    }

    /// Baseline re-admission on demand, after the previous lease lapsed.
    fn lazy_admit(&mut self, s: usize, a: usize, tier: &TierId) -> Result<LeaseId, RejectCause> {
        let req = LeaseRequest {
            anchor: &self.anchors[a],
            tier,
            aisi: self.aisi(s),
            asp: &self.asp,
            eligible: true,
            qos: self.qos(),
            renewing: None,
        };
        let result = self.leases.request_lease(&mut self.ids, req, self.now);
        match &result {
            Ok(c) => {
                let c = c.clone();
                self.emit_grant(&c, None);
                self.admission_evidence(s, a, Ok(c.lease_id));
            }
            Err(cause) => self.admission_evidence(s, a, Err(*cause)),
        }
        result.map(|c| c.lease_id)
    }

    #[allow(clippy::too_many_arguments)]
    fn serve(
        &mut self,
        s: usize,
        req: u64,
        arrived: SimTime,
        attempt: u32,
        a: usize,
        lease: Option<LeaseId>,
        tier: TierId,
        extra: SimDuration,
    ) {
        if self.anchors[a].health == Health::Failed {
            return self.fail_or_retry(s, req, arrived, attempt, "anchor_failed", Some(a));
        }
        let st = self.anchors[a]
            .tier(&tier)
            .map(|t| t.service_time)
            .expect("routed tier is offered");
        let service = sample_service(st, &mut self.rng_service);
        let path = self.path(s, a);
        let queueing = self.service[a].enqueue(self.now + extra + path, service);
        let epoch = self.service[a].epoch;
        let done = extra + path + queueing + service;
        self.schedule_after(
            done,
            Ev::RequestDone(InFlight {
                s,
                req,
                arrived,
                anchor: a,
                epoch,
                lease,
                tier,
                queueing,
                attempt,
            }),
        );
    }

    fn on_request_done(&mut self, f: InFlight) {
        if self.service[f.anchor].epoch != f.epoch {
            return self.fail_or_retry(f.s, f.req, f.arrived, f.attempt, "anchor_failed", Some(f.anchor));
        }
        let latency = self.now.since(f.arrived);
        if latency > self.deadline {
            self.outcome(f.s, f.req, f.arrived, Served::Lost, Some("deadline"), Some(f.anchor), Some(latency));
            return;
        }
        self.outcome(f.s, f.req, f.arrived, Served::Served, None, Some(f.anchor), Some(latency));
        if self.level() >= EvidenceLevel::PerRequest {
            if let Some(lease) = f.lease {
                let aisi = self.aisi(f.s);
                let record = EviRecord::new(
                    self.now,
                    aisi,
                    EviKind::Serve,
                    vec![lease],
                    self.anchors[f.anchor].anchor_id.clone(),
                    Some(f.tier),
                    Observables {
                        delivery_latency: Some(latency),
                        queueing_delay: Some(f.queueing),
                        lost: false,
                    },
                );
                match record {
                    Ok(r) => self.emit_evi(r),
                    Err(e) => self.fail_invariant(format!("serve evidence: {e}")),
                }
            }
        }
    }

    fn fail_or_retry(
        &mut self,
        s: usize,
        req: u64,
        arrived: SimTime,
        attempt: u32,
        reason: &'static str,
        anchor: Option<usize>,
    ) {
        let retryable = matches!(reason, "refused" | "anchor_failed");
        if retryable && attempt < self.behavior.retries {
            let backoff = anchor
                .and_then(|a| self.preferred_tier(a))
                .and_then(|t| SimDuration::from_ms_f64(t.service_time.mean_ms).ok())
                .unwrap_or(DEFAULT_BACKOFF);
            self.emit(Record::Retry { req, attempt: attempt + 1 });
            self.schedule_after(backoff, Ev::RequestRetry { s, req, arrived, attempt: attempt + 1 });
        } else {
            self.outcome(s, req, arrived, Served::Lost, Some(reason), anchor, None);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn outcome(
        &mut self,
        s: usize,
        req: u64,
        arrived: SimTime,
        result: Served,
        reason: Option<&str>,
        anchor: Option<usize>,
        latency: Option<SimDuration>,
    ) {
        let aisi = self.aisi(s);
        self.emit(Record::Outcome {
            req,
            aisi: aisi.id,
            arrived_us: arrived.as_us(),
            result,
            reason: reason.map(str::to_string),
            anchor: anchor.map(|a| self.anchor_name(a)),
            latency_us: latency.map(SimDuration::as_us),
        });
    }

    // -----------------------------------------------------------------------
    // Relocation
    // -----------------------------------------------------------------------

    fn evaluate(&mut self, s: usize) {
        if !self.behavior.relocates {
            return;
        }
        let sess = &self.sessions[s];
        if sess.aisi.is_none() || sess.txn.is_some() || sess.job.is_some() || sess.resteering {
            return;
        }
        let Some(cur) = self.serving_anchor(s) else {
            return;
        };
        let current_ms = self.predicted_ms(s, cur);
        let best_alternative_ms = (0..self.anchors.len())
            .filter(|&i| i != cur && self.anchors[i].health != Health::Failed)
            .map(|i| self.predicted_ms(s, i))
            .filter(|v| v.is_finite())
            .min_by(f64::total_cmp);
        let input = TriggerInput {
            health: self.anchors[cur].health,
            current_ms,
            best_alternative_ms,
            path_changed: self.sessions[s].path_dirty,
        };
        let Some(trigger) = classify_trigger(&self.asp, input, &self.params) else {
            self.sessions[s].path_dirty = false;
            return;
        };
        let now = self.now;
        let rate = self.asp.max_relocation_rate;
        let window = self.params.rate_window;
        if !self.sessions[s].limiter.allows(now, rate, window) {
            self.schedule_recheck(s);
            return;
        }
        self.sessions[s].limiter.record(now);
        let aisi = self.aisi(s);
        let job_id = self.next_job;
        self.next_job += 1;
        let from = self.anchors[cur].anchor_id.clone();
        if self.behavior.lease_gated {
            let old = match self.steering.top(aisi).map(|e| e.backing) {
                Some(Backing::Lease(id)) => Some(id),
                _ => None,
            };
            self.emit(Record::RelocStart {
                aisi: aisi.id,
                job: job_id,
                trigger: trigger.as_str().to_string(),
                from: from.as_str().to_string(),
                old,
            });
            self.sessions[s].job = Some(RelocationJob::new(job_id, aisi, trigger, old, from, now));
            self.start_txn(s, Purpose::Relocation);
        } else {
            let old = self.leases.valid_for(aisi, &from, now);
            self.emit(Record::RelocStart {
                aisi: aisi.id,
                job: job_id,
                trigger: trigger.as_str().to_string(),
                from: from.as_str().to_string(),
                old,
            });
            let tel = self.telemetry(s);
            let others = self.anchors.iter().filter(|a| a.anchor_id != from);
            let Some(target) = generate_candidates(&self.asp, others, &tel, BUDGET).into_iter().next()
            else {
                self.emit(Record::RelocEnd {
                    aisi: aisi.id,
                    job: job_id,
                    done: false,
                    cause: Some(RelocFailure::NoFeasibleTarget.as_str().to_string()),
                    new: None,
                });
                self.schedule_recheck(s);
                return;
            };
            let to = self.idx(target.anchor_id.as_str());
            // Break before make: the old route goes first.
            for e in self.steering.remove_route(aisi, &from) {
                self.emit_remove(&e.anchor_id, e.aisi, e.backing);
            }
            let sess = &mut self.sessions[s];
            sess.route = None;
            sess.resteering = true;
            let gap = ScenarioConfig::dur(self.cfg.resteer_gap_ms);
            self.schedule_after(gap, Ev::Resteer { s, to, job: job_id });
        }
    }

    fn schedule_recheck(&mut self, s: usize) {
        if self.sessions[s].recheck_pending {
            return;
        }
        self.sessions[s].recheck_pending = true;
        let d = ScenarioConfig::dur(self.cfg.relocation_recheck_ms);
        self.schedule_after(d, Ev::Recheck(s));
    }

    fn on_resteer(&mut self, s: usize, to: usize, job: u64) {
        let aisi = self.aisi(s);
        self.sessions[s].resteering = false;
        self.install_baseline(s, to);
        self.sessions[s].path_dirty = false;
        self.emit(Record::RelocEnd {
            aisi: aisi.id,
            job,
            done: true,
            cause: None,
            new: None,
        });
        self.evaluate(s);
    }

    fn fail_job(&mut self, s: usize, cause: RelocFailure) {
        let aisi = self.aisi(s);
        let Some(mut job) = self.sessions[s].job.take() else {
            return;
        };
        job.fail(cause);
        self.emit(Record::RelocEnd {
            aisi: aisi.id,
            job: job.id,
            done: false,
            cause: Some(cause.as_str().to_string()),
            new: None,
        });
        if self.has_route(s) {
            self.schedule_recheck(s);
        } else {
            self.schedule_reattach(s, false);
        }
    }

    fn complete_relocation(&mut self, s: usize, commit: &Commit) {
        let token = self.sessions[s].token;
        let job = self.sessions[s].job.as_mut().expect("relocation job");
        let job_id = job.id;
        match job.install_and_flip(&mut self.steering, commit, token, self.td, self.now) {
            Ok((entry, demoted)) => {
                self.emit(Record::SteerInstall {
                    aisi: entry.aisi.id,
                    anchor: entry.anchor_id.as_str().to_string(),
                    backing: entry.backing,
                    prio: entry.priority,
                });
                self.emit(Record::SteerFlip {
                    aisi: entry.aisi.id,
                    lease: commit.lease_id,
                    demoted,
                });
                let sess = &mut self.sessions[s];
                sess.lease = Some(commit.lease_id);
                sess.path_dirty = false;
                self.schedule_renew(s, commit);
                self.schedule_after(self.td, Ev::DrainDeadline { s, job: job_id });
            }
            Err(cause) => {
                // The unused target lease is handed back.
                if self.leases.release(commit.lease_id, self.now).is_ok() {
                    self.emit(Record::LeaseEnd {
                        lease: commit.lease_id,
                        aisi: commit.aisi.id,
                        state: LeaseState::Released,
                    });
                }
                self.fail_job(s, cause);
            }
        }
    }

    fn on_drain_deadline(&mut self, s: usize, job_id: u64) {
        let Some(job) = self.sessions[s].job.as_mut() else {
            return;
        };
        if job.id != job_id {
            return;
        }
        let r = job.on_drain_deadline(&mut self.leases, &mut self.steering, self.now);
        let old = job.old_lease;
        let new = job.new_lease;
        let aisi = job.aisi;
        self.sessions[s].job = None;
        if r.released {
            let old = old.expect("released lease");
            self.emit(Record::LeaseEnd {
                lease: old,
                aisi: aisi.id,
                state: LeaseState::Released,
            });
        }
        for e in r.removed {
            self.emit_remove(&e.anchor_id, e.aisi, e.backing);
        }
        self.emit_evi(r.evidence);
        self.emit(Record::RelocEnd {
            aisi: aisi.id,
            job: job_id,
            done: true,
            cause: None,
            new,
        });
        if self.has_route(s) {
            self.evaluate(s);
        } else {
            self.schedule_reattach(s, false);
        }
    }

    // -----------------------------------------------------------------------
    // Injections
    // -----------------------------------------------------------------------

    fn on_mobility_tick(&mut self) {
        let interval = ScenarioConfig::dur(self.cfg.mobility_interval_ms);
        if self.now + interval < self.horizon {
            self.schedule_after(interval, Ev::MobilityTick);
        }
        let p = self.cfg.relocation_probability;
        for s in 0..self.sessions.len() {
            let u: f64 = self.rng_mobility.random();
            if u >= p || self.zones < 2 {
                continue;
            }
            let k = self.rng_mobility.random_range(0..self.zones - 1);
            let cur = self.sessions[s].zone;
            let zone = if k >= cur { k + 1 } else { k };
            self.sessions[s].zone = zone;
            if self.sessions[s].aisi.is_none() {
                continue;
            }
            self.emit(Record::Inject {
                what: "path_change".into(),
                anchor: None,
                session: Some(s as u32),
                value: Some(zone.to_string()),
            });
            self.sessions[s].path_dirty = true;
            self.evaluate(s);
        }
    }

    fn on_failure_tick(&mut self) {
        let gap = exp_gap(&mut self.rng_failure, self.cfg.effective_failure_rate());
        if self.now + gap < self.horizon {
            self.schedule_after(gap, Ev::FailureTick);
        }
        let u_anchor: f64 = self.rng_failure.random();
        let u_kind: f64 = self.rng_failure.random();
        let healthy: Vec<usize> = (0..self.anchors.len())
            .filter(|&i| {
                self.anchors[i].site_class == SiteClass::Edge
                    && self.anchors[i].health == Health::Healthy
            })
            .collect();
        if healthy.is_empty() {
            return;
        }
        let a = healthy[((u_anchor * healthy.len() as f64) as usize).min(healthy.len() - 1)];
        let hard = u_kind >= self.cfg.soft_failure_fraction;
        let recover = ScenarioConfig::dur(self.cfg.failure_duration_ms);
        self.on_anchor_fail(a, hard, Some(recover));
    }

    fn on_anchor_fail(&mut self, a: usize, hard: bool, recover_after: Option<SimDuration>) {
        let anchor = &mut self.anchors[a];
        if hard {
            if anchor.health == Health::Failed {
                return;
            }
            anchor.health = Health::Failed;
            self.service[a].epoch += 1;
        } else {
            if anchor.health != Health::Healthy {
                return;
            }
            anchor.health = Health::Degraded;
        }
        self.emit(Record::Inject {
            what: if hard { "fail" } else { "degrade" }.into(),
            anchor: Some(self.anchor_name(a)),
            session: None,
            value: None,
        });
        self.health_evidence(a);
        if let Some(d) = recover_after {
            self.schedule_after(d, Ev::AnchorRecover(a));
        }
        for s in 0..self.sessions.len() {
            if self.serving_anchor(s) == Some(a) {
                self.evaluate(s);
            }
        }
    }

    fn on_anchor_recover(&mut self, a: usize) {
        if self.anchors[a].health == Health::Healthy {
            return;
        }
        self.anchors[a].health = Health::Healthy;
        self.emit(Record::Inject {
            what: "recover".into(),
            anchor: Some(self.anchor_name(a)),
            session: None,
            value: None,
        });
        self.health_evidence(a);
    }

    /// One health record per lease held on the anchor.
    fn health_evidence(&mut self, a: usize) {
        if self.level() < EvidenceLevel::PerEvent && !self.escalated(a) {
            return;
        }
        let id = self.anchors[a].anchor_id.clone();
        for lease in self.leases.active_on(&id) {
            let aisi = self.leases.get(lease).expect("active lease").aisi;
            self.evi(EviKind::HealthChange, aisi, vec![lease], a, None, None, false);
        }
    }

    fn on_overload(&mut self) {
        for a in 0..self.anchors.len() {
            if self.anchors[a].site_class != SiteClass::Edge {
                continue;
            }
            let Some(cap) = self.cfg.overloaded_capacity(self.anchors[a].capacity) else {
                continue;
            };
            self.anchors[a].capacity = cap;
            self.service[a].resize(cap);
            self.emit(Record::Inject {
                what: "capacity".into(),
                anchor: Some(self.anchor_name(a)),
                session: None,
                value: Some(cap.to_string()),
            });
            let id = self.anchors[a].anchor_id.clone();
            while self.leases.usage(&id) > cap {
                let victim = self.leases.active_on(&id)[0];
                if let Err(e) = self.leases.revoke(victim, self.now) {
                    return self.fail_invariant(format!("revoke: {e}"));
                }
                self.on_lease_end(victim, LeaseState::Revoked);
            }
        }
        for s in 0..self.sessions.len() {
            self.evaluate(s);
        }
    }
}
