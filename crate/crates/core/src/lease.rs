// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Admission leases.
//!
//! The lease table couples anchor-side capacity admission (one token per
//! active lease) with the authorization to install steering. It is the only
//! authority on whether a lease is valid.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::controller::{AdmissionPort, Candidate, Eligibility};
use crate::model::{
    Aisi, Anchor, AnchorId, Asp, Commit, IdSource, LeaseId, LeaseState, QosBinding, RejectCause,
    SimTime, TierId,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LeaseError {
    #[error("lease {0} not found")]
    NotFound(LeaseId),
    #[error("lease {0} already {1}")]
    AlreadyTerminal(LeaseId, LeaseState),
}

/// One admission request against a concrete anchor.
pub struct LeaseRequest<'a> {
    pub anchor: &'a Anchor,
    pub tier: &'a TierId,
    pub aisi: Aisi,
    pub asp: &'a Asp,
    pub eligible: bool,
    pub qos: QosBinding,
    /// A lease on the same anchor being replaced; its token is reused.
    pub renewing: Option<LeaseId>,
}

#[derive(Debug, Default, Clone)]
pub struct LeaseTable {
    leases: BTreeMap<LeaseId, Commit>,
    expiry_queue: BTreeSet<(SimTime, LeaseId)>,
    anchor_usage: BTreeMap<AnchorId, u32>,
}

impl LeaseTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Admission checks in order: health, capacity, locality, policy.
    pub fn request_lease(
        &mut self,
        ids: &mut IdSource,
        req: LeaseRequest<'_>,
        now: SimTime,
    ) -> Result<Commit, RejectCause> {
        let anchor = req.anchor;
        if !anchor.accepts_admissions() {
            return Err(RejectCause::Health);
        }
        let reused = req
            .renewing
            .and_then(|id| self.leases.get(&id))
            .is_some_and(|c| c.state == LeaseState::Active && c.anchor_id == anchor.anchor_id);
        let usage = self.usage(&anchor.anchor_id) - u32::from(reused);
        if usage >= anchor.capacity {
            return Err(RejectCause::Capacity);
        }
        if !req.asp.locality_region.contains(&anchor.region) {
            return Err(RejectCause::Locality);
        }
        if !req.eligible || anchor.tier(req.tier).is_none() {
            return Err(RejectCause::Policy);
        }
        let commit = Commit {
            lease_id: LeaseId(ids.next_id()),
            aisi: req.aisi,
            anchor_id: anchor.anchor_id.clone(),
            tier: req.tier.clone(),
            qos: req.qos,
            issued_at: now,
            expires_at: now + req.asp.lease_duration,
            state: LeaseState::Active,
        };
        self.expiry_queue.insert((commit.expires_at, commit.lease_id));
        *self.anchor_usage.entry(anchor.anchor_id.clone()).or_insert(0) += 1;
        self.leases.insert(commit.lease_id, commit.clone());
        Ok(commit)
    }

    /// Time at which the head of the expiry queue falls due.
    pub fn next_expiry(&self) -> Option<SimTime> {
        self.expiry_queue.first().map(|(t, _)| *t)
    }

    /// Expires every active lease with `expires_at <= now`, in
    /// (expiry time, lease id) order.
    pub fn expire_due(&mut self, now: SimTime) -> Vec<LeaseId> {
        let mut out = Vec::new();
        while let Some(&(t, id)) = self.expiry_queue.first() {
            if t > now {
                break;
            }
            self.expiry_queue.pop_first();
            self.terminate(id, LeaseState::Expired)
                .expect("expiry queue only holds active leases");
            out.push(id);
        }
        out
    }

    pub fn revoke(&mut self, id: LeaseId, _now: SimTime) -> Result<Commit, LeaseError> {
        self.terminate(id, LeaseState::Revoked)
    }

    pub fn release(&mut self, id: LeaseId, _now: SimTime) -> Result<Commit, LeaseError> {
        self.terminate(id, LeaseState::Released)
    }

    fn terminate(&mut self, id: LeaseId, to: LeaseState) -> Result<Commit, LeaseError> {
        let c = self.leases.get_mut(&id).ok_or(LeaseError::NotFound(id))?;
        if c.state.is_terminal() {
            return Err(LeaseError::AlreadyTerminal(id, c.state));
        }
        c.transition(to).expect("active lease may terminate");
        self.expiry_queue.remove(&(c.expires_at, id));
        let usage = self
            .anchor_usage
            .get_mut(&c.anchor_id)
            .expect("active lease is counted");
        *usage -= 1;
        Ok(c.clone())
    }

    /// True iff the lease exists, is active, and `now < expires_at`.
    pub fn is_valid(&self, id: LeaseId, now: SimTime) -> bool {
        self.leases.get(&id).is_some_and(|c| c.is_valid_at(now))
    }

    pub fn get(&self, id: LeaseId) -> Option<&Commit> {
        self.leases.get(&id)
    }

    pub fn usage(&self, anchor: &AnchorId) -> u32 {
        self.anchor_usage.get(anchor).copied().unwrap_or(0)
    }

    pub fn load_fraction(&self, anchor: &Anchor) -> f64 {
        if anchor.capacity == 0 {
            1.0
        } else {
            f64::from(self.usage(&anchor.anchor_id)) / f64::from(anchor.capacity)
        }
    }

    /// Active leases on an anchor, newest first.
    pub fn active_on(&self, anchor: &AnchorId) -> Vec<LeaseId> {
        self.leases
            .values()
            .rev()
            .filter(|c| c.state == LeaseState::Active && &c.anchor_id == anchor)
            .map(|c| c.lease_id)
            .collect()
    }

    /// Valid lease held by `aisi` on `anchor`, if any.
    pub fn valid_for(&self, aisi: Aisi, anchor: &AnchorId, now: SimTime) -> Option<LeaseId> {
        self.leases
            .values()
            .rev()
            .find(|c| c.aisi == aisi && &c.anchor_id == anchor && c.is_valid_at(now))
            .map(|c| c.lease_id)
    }

    /// Recomputes usage and queue membership from scratch and compares them
    /// with the incremental bookkeeping.
    pub fn check_invariants<'a>(
        &self,
        anchors: impl IntoIterator<Item = &'a Anchor>,
    ) -> Result<(), String> {
        let mut counted: BTreeMap<&AnchorId, u32> = BTreeMap::new();
        let mut queued = 0usize;
        for c in self.leases.values().filter(|c| c.state == LeaseState::Active) {
            *counted.entry(&c.anchor_id).or_insert(0) += 1;
            if !self.expiry_queue.contains(&(c.expires_at, c.lease_id)) {
                return Err(format!("active lease {} missing from expiry queue", c.lease_id));
            }
            queued += 1;
        }
        if queued != self.expiry_queue.len() {
            return Err("expiry queue holds non-active leases".into());
        }
        for a in anchors {
            let n = counted.get(&a.anchor_id).copied().unwrap_or(0);
            if n != self.usage(&a.anchor_id) {
                return Err(format!("usage drift on {}", a.anchor_id));
            }
            if n > a.capacity {
                return Err(format!("{} over capacity: {n} > {}", a.anchor_id, a.capacity));
            }
        }
        Ok(())
    }
}

/// [`AdmissionPort`] backed by a [`LeaseTable`] and a fixed anchor set.
pub struct LeaseAdmission<'a> {
    pub table: &'a mut LeaseTable,
    pub ids: &'a mut IdSource,
    pub anchors: &'a [Anchor],
    pub eligibility: &'a Eligibility,
    pub treatment_class: &'a str,
}

impl AdmissionPort for LeaseAdmission<'_> {
    fn request_lease(
        &mut self,
        candidate: &Candidate,
        aisi: Aisi,
        asp: &Asp,
        now: SimTime,
    ) -> Result<Commit, RejectCause> {
        let anchor = self
            .anchors
            .iter()
            .find(|a| a.anchor_id == candidate.anchor_id)
            .ok_or(RejectCause::Policy)?;
        let req = LeaseRequest {
            anchor,
            tier: &candidate.tier.tier_id,
            aisi,
            asp,
            eligible: self.eligibility.allows(anchor, asp),
            qos: QosBinding {
                treatment_class: self.treatment_class.to_owned(),
                latency_budget: asp.target_latency,
            },
            renewing: None,
        };
        self.table.request_lease(self.ids, req, now)
    }
}
