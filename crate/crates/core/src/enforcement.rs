// SPDX-License-Identifier: Apache-2.0 OR MIT

//! User-plane steering table.
//!
//! Entries map a service identity to an anchor at a priority. Under a
//! lease-gated table an entry can only be installed from a lease that is
//! valid at that instant, and classification re-checks the backing lease;
//! baseline tables accept ungated entries.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::controller::SteeringPort;
use crate::model::{
    Aisi, Aist, AnchorId, Backing, Commit, LeaseId, QosBinding, SimTime, SteeringEntry, TokenId,
    PRIORITY_ACTIVE, PRIORITY_STANDBY,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnforcementError {
    #[error("lease {0} is not valid; refusing to install steering")]
    LeaseInvalid(LeaseId),
    #[error("ungated install refused by a lease-gated table")]
    UngatedRefused,
    #[error("no steering entry backed by lease {1} for service {0}")]
    NoSuchEntry(Aisi, LeaseId),
    #[error("service {0} already has an entry at priority {1}")]
    PriorityTaken(Aisi, i32),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Classification {
    Route {
        anchor_id: AnchorId,
        qos: QosBinding,
        backing: Backing,
    },
    NoRoute,
    /// A lease-gated entry whose lease is no longer valid. Never expected;
    /// the caller records it as a violation and treats it as no route.
    Stale { lease: LeaseId, anchor_id: AnchorId },
}

/// Read access to lease validity.
pub trait LeaseValidity {
    fn is_valid(&self, id: LeaseId, now: SimTime) -> bool;
}

impl LeaseValidity for crate::lease::LeaseTable {
    fn is_valid(&self, id: LeaseId, now: SimTime) -> bool {
        crate::lease::LeaseTable::is_valid(self, id, now)
    }
}

#[derive(Debug, Clone)]
pub struct SteeringTable {
    lease_gated: bool,
    /// Per service, sorted by priority descending.
    entries: BTreeMap<Aisi, Vec<SteeringEntry>>,
}

impl SteeringTable {
    pub fn new(lease_gated: bool) -> Self {
        SteeringTable {
            lease_gated,
            entries: BTreeMap::new(),
        }
    }

    pub fn is_lease_gated(&self) -> bool {
        self.lease_gated
    }

    fn insert(&mut self, entry: SteeringEntry) -> Result<SteeringEntry, EnforcementError> {
        let list = self.entries.entry(entry.aisi).or_default();
        if list.iter().any(|e| e.priority == entry.priority) {
            return Err(EnforcementError::PriorityTaken(entry.aisi, entry.priority));
        }
        list.push(entry.clone());
        list.sort_by_key(|e| std::cmp::Reverse(e.priority));
        Ok(entry)
    }

    /// Installs an entry bound to `lease`. Under a gated table the lease
    /// must be valid at `now` or nothing is installed.
    pub fn install_steering(
        &mut self,
        lease: &Commit,
        aist: TokenId,
        priority: i32,
        now: SimTime,
    ) -> Result<SteeringEntry, EnforcementError> {
        if self.lease_gated && !lease.is_valid_at(now) {
            return Err(EnforcementError::LeaseInvalid(lease.lease_id));
        }
        self.insert(SteeringEntry {
            aisi: lease.aisi,
            aist,
            anchor_id: lease.anchor_id.clone(),
            qos: lease.qos.clone(),
            backing: Backing::Lease(lease.lease_id),
            priority,
            installed_at: now,
        })
    }

    /// Baseline install with no lease behind it.
    pub fn install_ungated(
        &mut self,
        aisi: Aisi,
        aist: TokenId,
        anchor_id: AnchorId,
        qos: QosBinding,
        priority: i32,
        now: SimTime,
    ) -> Result<SteeringEntry, EnforcementError> {
        if self.lease_gated {
            return Err(EnforcementError::UngatedRefused);
        }
        self.insert(SteeringEntry {
            aisi,
            aist,
            anchor_id,
            qos,
            backing: Backing::Ungated,
            priority,
            installed_at: now,
        })
    }

    /// Removes every entry backed by `lease`. Idempotent.
    pub fn remove_steering(&mut self, lease: LeaseId, _now: SimTime) -> Vec<SteeringEntry> {
        let mut removed = Vec::new();
        self.entries.retain(|_, list| {
            list.retain(|e| {
                if e.backing == Backing::Lease(lease) {
                    removed.push(e.clone());
                    false
                } else {
                    true
                }
            });
            !list.is_empty()
        });
        removed
    }

    /// Removes the entries of `aisi` pointing at `anchor`.
    pub fn remove_route(&mut self, aisi: Aisi, anchor: &AnchorId) -> Vec<SteeringEntry> {
        let mut removed = Vec::new();
        if let Some(list) = self.entries.get_mut(&aisi) {
            list.retain(|e| {
                if &e.anchor_id == anchor {
                    removed.push(e.clone());
                    false
                } else {
                    true
                }
            });
            if list.is_empty() {
                self.entries.remove(&aisi);
            }
        }
        removed
    }

    /// Makes the entry backed by `new_lease` the unique highest-priority
    /// entry for `aisi` by swapping priorities with the current top entry.
    /// Returns the lease (if any) that was demoted.
    pub fn flip_priority(
        &mut self,
        aisi: Aisi,
        new_lease: LeaseId,
        _now: SimTime,
    ) -> Result<Option<Backing>, EnforcementError> {
        let list = self
            .entries
            .get_mut(&aisi)
            .ok_or(EnforcementError::NoSuchEntry(aisi, new_lease))?;
        let idx = list
            .iter()
            .position(|e| e.backing == Backing::Lease(new_lease))
            .ok_or(EnforcementError::NoSuchEntry(aisi, new_lease))?;
        if idx == 0 {
            // Nothing above it: the entry simply becomes active.
            list[0].priority = list[0].priority.max(PRIORITY_ACTIVE);
            return Ok(None);
        }
        let top_prio = list[0].priority;
        let new_prio = list[idx].priority;
        list[0].priority = new_prio;
        list[idx].priority = top_prio;
        let demoted = list[0].backing;
        list.sort_by_key(|e| std::cmp::Reverse(e.priority));
        Ok(Some(demoted))
    }

    /// Replaces the backing of every entry bound to `old` with the renewed
    /// lease, keeping anchor and priority. Returns `(removed, installed)`.
    pub fn rebind(
        &mut self,
        old: LeaseId,
        renewed: &Commit,
        now: SimTime,
    ) -> Result<(Vec<SteeringEntry>, Vec<SteeringEntry>), EnforcementError> {
        if self.lease_gated && !renewed.is_valid_at(now) {
            return Err(EnforcementError::LeaseInvalid(renewed.lease_id));
        }
        let mut removed = Vec::new();
        let mut installed = Vec::new();
        for list in self.entries.values_mut() {
            for e in list.iter_mut().filter(|e| e.backing == Backing::Lease(old)) {
                removed.push(e.clone());
                e.backing = Backing::Lease(renewed.lease_id);
                e.qos = renewed.qos.clone();
                e.installed_at = now;
                installed.push(e.clone());
            }
        }
        Ok((removed, installed))
    }

    /// Routes `(aisi, aist)` to the anchor of its highest-priority entry.
    pub fn classify(
        &self,
        aisi: Aisi,
        aist: TokenId,
        now: SimTime,
        leases: &impl LeaseValidity,
    ) -> Classification {
        let Some(top) = self
            .entries
            .get(&aisi)
            .and_then(|l| l.iter().find(|e| e.aist == aist))
        else {
            return Classification::NoRoute;
        };
        if self.lease_gated {
            match top.backing {
                Backing::Lease(id) if leases.is_valid(id, now) => {}
                Backing::Lease(id) => {
                    return Classification::Stale {
                        lease: id,
                        anchor_id: top.anchor_id.clone(),
                    }
                }
                Backing::Ungated => return Classification::NoRoute,
            }
        }
        Classification::Route {
            anchor_id: top.anchor_id.clone(),
            qos: top.qos.clone(),
            backing: top.backing,
        }
    }

    pub fn entries_for(&self, aisi: Aisi) -> &[SteeringEntry] {
        self.entries.get(&aisi).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn top(&self, aisi: Aisi) -> Option<&SteeringEntry> {
        self.entries_for(aisi).first()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl SteeringPort for SteeringTable {
    fn install_for(&mut self, commit: &Commit, aist: &Aist, now: SimTime) -> Result<(), String> {
        self.install_steering(commit, aist.token_id, PRIORITY_ACTIVE, now)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}

/// Default priority a relocation target is installed at before the flip.
pub const STANDBY: i32 = PRIORITY_STANDBY;
pub const ACTIVE: i32 = PRIORITY_ACTIVE;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LeaseState, SimDuration, TierId};
    use std::collections::BTreeSet;

    struct Valid(BTreeSet<LeaseId>);
    impl LeaseValidity for Valid {
        fn is_valid(&self, id: LeaseId, _now: SimTime) -> bool {
            self.0.contains(&id)
        }
    }

    fn aisi() -> Aisi {
        Aisi { id: 1, created_at: SimTime::ZERO }
    }

    fn lease(id: u64, anchor: &str, expires_ms: u64) -> Commit {
        Commit {
            lease_id: LeaseId(id),
            aisi: aisi(),
            anchor_id: AnchorId::from(anchor),
            tier: TierId::from("small"),
            qos: QosBinding {
                treatment_class: "assured".into(),
                latency_budget: SimDuration::from_ms(50),
            },
            issued_at: SimTime::ZERO,
            expires_at: SimTime::from_ms(expires_ms),
            state: LeaseState::Active,
        }
    }

    fn valid(ids: &[u64]) -> Valid {
        Valid(ids.iter().copied().map(LeaseId).collect())
    }

    const TOKEN: TokenId = TokenId(2);

    #[test]
    fn install_then_classify_routes() {
        let mut t = SteeringTable::new(true);
        assert_eq!(
            t.classify(aisi(), TOKEN, SimTime::ZERO, &valid(&[])),
            Classification::NoRoute
        );
        t.install_steering(&lease(3, "a0", 500), TOKEN, ACTIVE, SimTime::ZERO).unwrap();
        let Classification::Route { anchor_id, .. } =
            t.classify(aisi(), TOKEN, SimTime::from_ms(1), &valid(&[3]))
        else {
            panic!("expected route");
        };
        assert_eq!(anchor_id, AnchorId::from("a0"));
    }

    #[test]
    fn gate_refuses_expired_lease() {
        let mut t = SteeringTable::new(true);
        let mut l = lease(3, "a0", 500);
        l.state = LeaseState::Expired;
        assert_eq!(
            t.install_steering(&l, TOKEN, ACTIVE, SimTime::from_ms(600)),
            Err(EnforcementError::LeaseInvalid(LeaseId(3)))
        );
        assert!(t.is_empty());
        let live = lease(4, "a0", 500);
        assert!(t.install_steering(&live, TOKEN, ACTIVE, SimTime::from_ms(500)).is_err());
    }

    #[test]
    fn baseline_table_accepts_ungated() {
        let mut t = SteeringTable::new(false);
        let e = t
            .install_ungated(
                aisi(),
                TOKEN,
                AnchorId::from("a0"),
                lease(1, "a0", 1).qos,
                ACTIVE,
                SimTime::ZERO,
            )
            .unwrap();
        assert_eq!(e.backing, Backing::Ungated);
        assert!(matches!(
            t.classify(aisi(), TOKEN, SimTime::from_ms(10), &valid(&[])),
            Classification::Route { .. }
        ));
        let mut gated = SteeringTable::new(true);
        assert!(gated
            .install_ungated(aisi(), TOKEN, AnchorId::from("a0"), e.qos, ACTIVE, SimTime::ZERO)
            .is_err());
    }

    #[test]
    fn removal_is_idempotent() {
        let mut t = SteeringTable::new(true);
        t.install_steering(&lease(3, "a0", 500), TOKEN, ACTIVE, SimTime::ZERO).unwrap();
        assert_eq!(t.remove_steering(LeaseId(3), SimTime::from_ms(500)).len(), 1);
        assert_eq!(t.remove_steering(LeaseId(3), SimTime::from_ms(500)).len(), 0);
        assert!(t.is_empty());
    }

    #[test]
    fn make_before_break_flip() {
        let mut t = SteeringTable::new(true);
        let v = valid(&[3, 4]);
        t.install_steering(&lease(3, "a0", 500), TOKEN, ACTIVE, SimTime::ZERO).unwrap();
        t.install_steering(&lease(4, "a1", 900), TOKEN, STANDBY, SimTime::from_ms(10))
            .unwrap();
        // Installed but not flipped: old anchor still wins.
        let before = t.classify(aisi(), TOKEN, SimTime::from_ms(10), &v);
        assert!(matches!(before, Classification::Route { ref anchor_id, .. } if anchor_id.as_str() == "a0"));
        let demoted = t.flip_priority(aisi(), LeaseId(4), SimTime::from_ms(10)).unwrap();
        assert_eq!(demoted, Some(Backing::Lease(LeaseId(3))));
        let prios: Vec<_> = t
            .entries_for(aisi())
            .iter()
            .map(|e| (e.anchor_id.as_str().to_owned(), e.priority))
            .collect();
        assert_eq!(prios, vec![("a1".into(), ACTIVE), ("a0".into(), STANDBY)]);
        let after = t.classify(aisi(), TOKEN, SimTime::from_ms(10), &v);
        assert!(matches!(after, Classification::Route { ref anchor_id, .. } if anchor_id.as_str() == "a1"));
    }

    #[test]
    fn flip_with_old_entry_gone_promotes() {
        let mut t = SteeringTable::new(true);
        t.install_steering(&lease(4, "a1", 900), TOKEN, STANDBY, SimTime::ZERO).unwrap();
        assert_eq!(t.flip_priority(aisi(), LeaseId(4), SimTime::ZERO).unwrap(), None);
        assert_eq!(t.top(aisi()).unwrap().priority, ACTIVE);
    }

    #[test]
    fn flip_without_entry_fails() {
        let mut t = SteeringTable::new(true);
        assert!(matches!(
            t.flip_priority(aisi(), LeaseId(9), SimTime::ZERO),
            Err(EnforcementError::NoSuchEntry(..))
        ));
    }

    #[test]
    fn stale_entry_trips() {
        let mut t = SteeringTable::new(true);
        t.install_steering(&lease(3, "a0", 500), TOKEN, ACTIVE, SimTime::ZERO).unwrap();
        assert_eq!(
            t.classify(aisi(), TOKEN, SimTime::from_ms(500), &valid(&[])),
            Classification::Stale {
                lease: LeaseId(3),
                anchor_id: AnchorId::from("a0")
            }
        );
    }

    #[test]
    fn rebind_keeps_route() {
        let mut t = SteeringTable::new(true);
        t.install_steering(&lease(3, "a0", 500), TOKEN, ACTIVE, SimTime::ZERO).unwrap();
        let mut renewed = lease(7, "a0", 1_300);
        renewed.issued_at = SimTime::from_ms(400);
        let (removed, installed) = t.rebind(LeaseId(3), &renewed, SimTime::from_ms(400)).unwrap();
        assert_eq!(removed.len(), 1);
        assert_eq!(installed[0].backing, Backing::Lease(LeaseId(7)));
        assert_eq!(t.top(aisi()).unwrap().priority, ACTIVE);
    }

    #[test]
    fn classification_is_deterministic() {
        let mut t = SteeringTable::new(true);
        t.install_steering(&lease(3, "a0", 500), TOKEN, ACTIVE, SimTime::ZERO).unwrap();
        t.install_steering(&lease(4, "a1", 500), TOKEN, STANDBY, SimTime::ZERO).unwrap();
        let v = valid(&[3, 4]);
        let first = t.classify(aisi(), TOKEN, SimTime::from_ms(5), &v);
        for _ in 0..10 {
            assert_eq!(t.classify(aisi(), TOKEN, SimTime::from_ms(5), &v), first);
        }
    }

    #[test]
    fn duplicate_priority_refused() {
        let mut t = SteeringTable::new(true);
        t.install_steering(&lease(3, "a0", 500), TOKEN, ACTIVE, SimTime::ZERO).unwrap();
        assert!(matches!(
            t.install_steering(&lease(4, "a1", 500), TOKEN, ACTIVE, SimTime::ZERO),
            Err(EnforcementError::PriorityTaken(..))
        ));
    }
}
