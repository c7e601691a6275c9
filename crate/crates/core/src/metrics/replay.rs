// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Lease and steering lifetimes rebuilt from a trace alone.

use std::collections::BTreeMap;

use crate::controller::PolicyKind;
use crate::model::{Backing, LeaseId, LeaseState, SimTime, PRIORITY_ACTIVE};
use crate::sim::trace::{Record, Trace};

use super::MetricsError;

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub policy: PolicyKind,
    pub setup: String,
    pub seed: u64,
    pub horizon: SimTime,
    pub tc_us: u64,
    pub td_us: u64,
    pub sessions: u32,
}

impl Header {
    pub fn of(trace: &Trace) -> Result<Header, MetricsError> {
        match trace.header() {
            Some(Record::Run {
                policy,
                setup,
                seed,
                horizon_us,
                tc_us,
                td_us,
                sessions,
            }) => Ok(Header {
                policy: *policy,
                setup: setup.clone(),
                seed: *seed,
                horizon: SimTime::from_us(*horizon_us),
                tc_us: *tc_us,
                td_us: *td_us,
                sessions: *sessions,
            }),
            _ => Err(MetricsError::Incomplete("no run header")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeaseLife {
    pub aisi: u64,
    pub anchor: String,
    pub granted: SimTime,
    pub expires: SimTime,
    /// First terminal record; later ones are a defect, counted separately.
    pub ended: Option<(SimTime, LeaseState)>,
    pub extra_ends: u32,
}

impl LeaseLife {
    /// End of validity: the terminal record, or the scheduled expiry.
    pub fn valid_until(&self) -> SimTime {
        match self.ended {
            Some((t, _)) => t.min(self.expires),
            None => self.expires,
        }
    }

    pub fn valid_at(&self, t: SimTime) -> bool {
        self.granted <= t && t < self.valid_until()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryLife {
    pub aisi: u64,
    pub anchor: String,
    pub backing: Backing,
    pub installed: SimTime,
    pub removed: Option<SimTime>,
}

impl EntryLife {
    pub fn present_at(&self, t: SimTime) -> bool {
        self.installed <= t && self.removed.is_none_or(|r| t < r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub header: Header,
    pub leases: BTreeMap<LeaseId, LeaseLife>,
    pub entries: Vec<EntryLife>,
}

impl Replay {
    pub fn build(trace: &Trace) -> Result<Replay, MetricsError> {
        let header = Header::of(trace)?;
        let mut leases: BTreeMap<LeaseId, LeaseLife> = BTreeMap::new();
        let mut entries: Vec<EntryLife> = Vec::new();
        for e in trace.iter() {
            match &e.record {
                Record::LeaseGrant {
                    lease,
                    aisi,
                    anchor,
                    expires_us,
                    ..
                } => {
                    let life = LeaseLife {
                        aisi: *aisi,
                        anchor: anchor.clone(),
                        granted: e.time,
                        expires: SimTime::from_us(*expires_us),
                        ended: None,
                        extra_ends: 0,
                    };
                    if leases.insert(*lease, life).is_some() {
                        return Err(MetricsError::Inconsistent(format!(
                            "lease {lease} granted twice"
                        )));
                    }
                }
                Record::LeaseEnd { lease, state, .. } => {
                    let life = leases.get_mut(lease).ok_or_else(|| {
                        MetricsError::Inconsistent(format!("end of unknown lease {lease}"))
                    })?;
                    if life.ended.is_some() {
                        life.extra_ends += 1;
                    } else {
                        life.ended = Some((e.time, *state));
                    }
                }
                Record::SteerInstall {
                    aisi,
                    anchor,
                    backing,
                    ..
                } => entries.push(EntryLife {
                    aisi: *aisi,
                    anchor: anchor.clone(),
                    backing: *backing,
                    installed: e.time,
                    removed: None,
                }),
                Record::SteerRemove {
                    aisi,
                    anchor,
                    backing,
                } => {
                    let open = entries.iter_mut().rev().find(|x| {
                        x.removed.is_none()
                            && x.aisi == *aisi
                            && &x.anchor == anchor
                            && x.backing == *backing
                    });
                    match open {
                        Some(x) => x.removed = Some(e.time),
                        None => {
                            return Err(MetricsError::Inconsistent(format!(
                                "removal of absent entry aisi={aisi} anchor={anchor}"
                            )))
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(Replay {
            header,
            leases,
            entries,
        })
    }
}

/// Steering state at one point of a forward walk over the trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LiveSteering {
    routes: BTreeMap<u64, Vec<(String, Backing, i32)>>,
}

impl LiveSteering {
    /// Applies a steering record; other records are ignored.
    pub fn apply(&mut self, r: &Record) {
        match r {
            Record::SteerInstall {
                aisi,
                anchor,
                backing,
                prio,
            } => self
                .routes
                .entry(*aisi)
                .or_default()
                .push((anchor.clone(), *backing, *prio)),
            Record::SteerRemove {
                aisi,
                anchor,
                backing,
            } => {
                if let Some(list) = self.routes.get_mut(aisi) {
                    if let Some(i) = list.iter().position(|(a, b, _)| a == anchor && b == backing) {
                        list.remove(i);
                    }
                }
            }
            Record::SteerFlip {
                aisi,
                lease,
                demoted,
            } => {
                if let Some(list) = self.routes.get_mut(aisi) {
                    let new = list.iter().position(|(_, b, _)| *b == Backing::Lease(*lease));
                    let old = demoted.and_then(|d| list.iter().position(|(_, b, _)| *b == d));
                    match (new, old) {
                        (Some(n), Some(o)) => {
                            let p = list[n].2;
                            list[n].2 = list[o].2;
                            list[o].2 = p;
                        }
                        (Some(n), None) => list[n].2 = list[n].2.max(PRIORITY_ACTIVE),
                        _ => {}
                    }
                }
            }
            _ => {}
        }
    }

    pub fn top_anchor(&self, aisi: u64) -> Option<&str> {
        self.routes
            .get(&aisi)?
            .iter()
            .max_by_key(|(_, _, p)| *p)
            .map(|(a, _, _)| a.as_str())
    }

    /// Sorted `(anchor, priority)` pairs for one identity.
    pub fn shape(&self, aisi: u64) -> Vec<(String, i32)> {
        let mut v: Vec<(String, i32)> = self
            .routes
            .get(&aisi)
            .map(|l| l.iter().map(|(a, _, p)| (a.clone(), *p)).collect())
            .unwrap_or_default();
        v.sort();
        v
    }

    pub fn aisis(&self) -> impl Iterator<Item = u64> + '_ {
        self.routes.keys().copied()
    }
}

/// Half-open interval set arithmetic on sorted, disjoint `[start, end)` lists.
pub mod intervals {
    use crate::model::SimTime;

    pub type Iv = (SimTime, SimTime);

    pub fn normalize(mut v: Vec<Iv>) -> Vec<Iv> {
        v.retain(|(a, b)| a < b);
        v.sort();
        let mut out: Vec<Iv> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match out.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        out
    }

    /// `x` minus the union of `cover` (which must be normalized).
    pub fn subtract(x: Iv, cover: &[Iv]) -> Vec<Iv> {
        let mut out = Vec::new();
        let (mut cur, end) = x;
        for &(a, b) in cover {
            if b <= cur {
                continue;
            }
            if a >= end {
                break;
            }
            if a > cur {
                out.push((cur, a));
            }
            cur = cur.max(b);
            if cur >= end {
                break;
            }
        }
        if cur < end {
            out.push((cur, end));
        }
        out
    }

    pub fn total_us(v: &[Iv]) -> u64 {
        v.iter().map(|(a, b)| b.since(*a).as_us()).sum()
    }
}
