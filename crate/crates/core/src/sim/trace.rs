// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Run trace: typed records and their line format.
//!
//! One record per line, tab-separated: `time_us`, `seq`, `category`, then
//! `key=value` pairs in a fixed order per category. Absent optional values
//! are written as `-`. Floating-point fields are written with three
//! decimals so the text is identical on every platform.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::controller::PolicyKind;
use crate::model::{Backing, EviKind, LeaseId, LeaseState, RejectCause, SimTime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trace has no run header")]
    MissingHeader,
    #[error("trace is truncated (no run_end record)")]
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Initial,
    Reattach,
    Relocation,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Initial => "initial",
            Purpose::Reattach => "reattach",
            Purpose::Relocation => "relocation",
        }
    }
}

impl FromStr for Purpose {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "initial" => Ok(Purpose::Initial),
            "reattach" => Ok(Purpose::Reattach),
            "relocation" => Ok(Purpose::Relocation),
            _ => Err(format!("bad purpose `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reply {
    Accept(LeaseId),
    Reject(RejectCause),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Served {
    Served,
    Lost,
    NoRoute,
}

impl Served {
    pub fn as_str(self) -> &'static str {
        match self {
            Served::Served => "served",
            Served::Lost => "lost",
            Served::NoRoute => "no_route",
        }
    }
}

impl FromStr for Served {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "served" => Ok(Served::Served),
            "lost" => Ok(Served::Lost),
            "no_route" => Ok(Served::NoRoute),
            _ => Err(format!("bad outcome `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Run {
        policy: PolicyKind,
        setup: String,
        seed: u64,
        horizon_us: u64,
        tc_us: u64,
        td_us: u64,
        sessions: u32,
    },
    SessionStart {
        session: u32,
        zone: u32,
    },
    Identity {
        session: u32,
        aisi: u64,
        aist: u64,
    },
    TxnStart {
        aisi: u64,
        txn: u64,
        purpose: Purpose,
    },
    Attempt {
        aisi: u64,
        txn: u64,
        anchor: String,
        tier: String,
        score: f64,
    },
    AttemptReply {
        aisi: u64,
        txn: u64,
        anchor: String,
        reply: Reply,
    },
    TxnEnd {
        aisi: u64,
        txn: u64,
        success: bool,
        causes: String,
        elapsed_us: u64,
    },
    LeaseGrant {
        lease: LeaseId,
        aisi: u64,
        anchor: String,
        tier: String,
        expires_us: u64,
        renews: Option<LeaseId>,
    },
    LeaseEnd {
        lease: LeaseId,
        aisi: u64,
        state: LeaseState,
    },
    RenewReject {
        aisi: u64,
        lease: LeaseId,
        cause: RejectCause,
    },
    SteerInstall {
        aisi: u64,
        anchor: String,
        backing: Backing,
        prio: i32,
    },
    SteerRemove {
        aisi: u64,
        anchor: String,
        backing: Backing,
    },
    SteerFlip {
        aisi: u64,
        lease: LeaseId,
        demoted: Option<Backing>,
    },
    RelocStart {
        aisi: u64,
        job: u64,
        trigger: String,
        from: String,
        old: Option<LeaseId>,
    },
    RelocEnd {
        aisi: u64,
        job: u64,
        done: bool,
        cause: Option<String>,
        new: Option<LeaseId>,
    },
    Request {
        req: u64,
        aisi: u64,
    },
    Classify {
        req: u64,
        route: Option<String>,
    },
    Outcome {
        req: u64,
        aisi: u64,
        arrived_us: u64,
        result: Served,
        reason: Option<String>,
        anchor: Option<String>,
        latency_us: Option<u64>,
    },
    Retry {
        req: u64,
        attempt: u32,
    },
    Evi {
        kind: EviKind,
        aisi: u64,
        leases: Vec<LeaseId>,
        anchor: String,
        tier: Option<String>,
        latency_us: Option<u64>,
        lost: bool,
    },
    Inject {
        what: String,
        anchor: Option<String>,
        session: Option<u32>,
        value: Option<String>,
    },
    Tripwire {
        aisi: u64,
        lease: LeaseId,
    },
    RunEnd,
}

impl Record {
    pub fn category(&self) -> &'static str {
        match self {
            Record::Run { .. } => "run",
            Record::SessionStart { .. } => "session_start",
            Record::Identity { .. } => "identity",
            Record::TxnStart { .. } => "txn_start",
            Record::Attempt { .. } => "attempt",
            Record::AttemptReply { .. } => "attempt_reply",
            Record::TxnEnd { .. } => "txn_end",
            Record::LeaseGrant { .. } => "lease_grant",
            Record::LeaseEnd { .. } => "lease_end",
            Record::RenewReject { .. } => "renew_reject",
            Record::SteerInstall { .. } => "steer_install",
            Record::SteerRemove { .. } => "steer_remove",
            Record::SteerFlip { .. } => "steer_flip",
            Record::RelocStart { .. } => "reloc_start",
            Record::RelocEnd { .. } => "reloc_end",
            Record::Request { .. } => "request",
            Record::Classify { .. } => "classify",
            Record::Outcome { .. } => "outcome",
            Record::Retry { .. } => "retry",
            Record::Evi { .. } => "evi",
            Record::Inject { .. } => "inject",
            Record::Tripwire { .. } => "tripwire",
            Record::RunEnd => "run_end",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub time: SimTime,
    pub seq: u64,
    pub record: Record,
}

/// Append-only, totally ordered by `(time, seq)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn push(&mut self, time: SimTime, record: Record) {
        let seq = self.entries.len() as u64;
        debug_assert!(self.entries.last().is_none_or(|e| e.time <= time));
        self.entries.push(TraceEntry { time, seq, record });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter()
    }

    pub fn header(&self) -> Option<&Record> {
        self.entries
            .first()
            .map(|e| &e.record)
            .filter(|r| matches!(r, Record::Run { .. }))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 64);
        for e in &self.entries {
            write_entry(&mut out, e).expect("writing to a String cannot fail");
            out.push('\n');
        }
        out
    }

    /// Parses a trace and checks it is complete: a run header first and a
    /// `run_end` record last.
    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            entries.push(parse_line(line).map_err(|msg| TraceError::Malformed { line: i + 1, msg })?);
        }
        let trace = Trace { entries };
        if trace.header().is_none() {
            return Err(TraceError::MissingHeader);
        }
        if !matches!(trace.entries.last().map(|e| &e.record), Some(Record::RunEnd)) {
            return Err(TraceError::Truncated);
        }
        Ok(trace)
    }
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "-".into(),
    }
}

fn lease_list(ids: &[LeaseId]) -> String {
    if ids.is_empty() {
        return "-".into();
    }
    ids.iter().map(|l| l.0.to_string()).collect::<Vec<_>>().join(",")
}

fn fields(r: &Record) -> Vec<(&'static str, String)> {
    match r {
        Record::Run { policy, setup, seed, horizon_us, tc_us, td_us, sessions } => vec![
            ("policy", policy.to_string()),
            ("setup", setup.clone()),
            ("seed", seed.to_string()),
            ("horizon_us", horizon_us.to_string()),
            ("tc_us", tc_us.to_string()),
            ("td_us", td_us.to_string()),
            ("sessions", sessions.to_string()),
        ],
        Record::SessionStart { session, zone } => {
            vec![("session", session.to_string()), ("zone", zone.to_string())]
        }
        Record::Identity { session, aisi, aist } => vec![
            ("session", session.to_string()),
            ("aisi", aisi.to_string()),
            ("aist", aist.to_string()),
        ],
        Record::TxnStart { aisi, txn, purpose } => vec![
            ("aisi", aisi.to_string()),
            ("txn", txn.to_string()),
            ("purpose", purpose.as_str().into()),
        ],
        Record::Attempt { aisi, txn, anchor, tier, score } => vec![
            ("aisi", aisi.to_string()),
            ("txn", txn.to_string()),
            ("anchor", anchor.clone()),
            ("tier", tier.clone()),
            ("score", format!("{score:.3}")),
        ],
        Record::AttemptReply { aisi, txn, anchor, reply } => {
            let (result, detail) = match reply {
                Reply::Accept(l) => ("accept", l.0.to_string()),
                Reply::Reject(c) => ("reject", c.as_str().to_owned()),
            };
            vec![
                ("aisi", aisi.to_string()),
                ("txn", txn.to_string()),
                ("anchor", anchor.clone()),
                ("result", result.into()),
                ("detail", detail),
            ]
        }
        Record::TxnEnd { aisi, txn, success, causes, elapsed_us } => vec![
            ("aisi", aisi.to_string()),
            ("txn", txn.to_string()),
            ("result", if *success { "success" } else { "reject" }.into()),
            ("causes", causes.clone()),
            ("elapsed_us", elapsed_us.to_string()),
        ],
        Record::LeaseGrant { lease, aisi, anchor, tier, expires_us, renews } => vec![
            ("lease", lease.to_string()),
            ("aisi", aisi.to_string()),
            ("anchor", anchor.clone()),
            ("tier", tier.clone()),
            ("expires_us", expires_us.to_string()),
            ("renews", opt(renews)),
        ],
        Record::LeaseEnd { lease, aisi, state } => vec![
            ("lease", lease.to_string()),
            ("aisi", aisi.to_string()),
            ("state", state.as_str().into()),
        ],
        Record::RenewReject { aisi, lease, cause } => vec![
            ("aisi", aisi.to_string()),
            ("lease", lease.to_string()),
            ("cause", cause.as_str().into()),
        ],
        Record::SteerInstall { aisi, anchor, backing, prio } => vec![
            ("aisi", aisi.to_string()),
            ("anchor", anchor.clone()),
            ("backing", backing.to_string()),
            ("prio", prio.to_string()),
        ],
        Record::SteerRemove { aisi, anchor, backing } => vec![
            ("aisi", aisi.to_string()),
            ("anchor", anchor.clone()),
            ("backing", backing.to_string()),
        ],
        Record::SteerFlip { aisi, lease, demoted } => vec![
            ("aisi", aisi.to_string()),
            ("lease", lease.to_string()),
            ("demoted", opt(demoted)),
        ],
        Record::RelocStart { aisi, job, trigger, from, old } => vec![
            ("aisi", aisi.to_string()),
            ("job", job.to_string()),
            ("trigger", trigger.clone()),
            ("from", from.clone()),
            ("old", opt(old)),
        ],
        Record::RelocEnd { aisi, job, done, cause, new } => vec![
            ("aisi", aisi.to_string()),
            ("job", job.to_string()),
            ("result", if *done { "done" } else { "failed" }.into()),
            ("cause", opt(cause)),
            ("new", opt(new)),
        ],
        Record::Request { req, aisi } => {
            vec![("req", req.to_string()), ("aisi", aisi.to_string())]
        }
        Record::Classify { req, route } => {
            vec![("req", req.to_string()), ("route", opt(route))]
        }
        Record::Outcome { req, aisi, arrived_us, result, reason, anchor, latency_us } => vec![
            ("req", req.to_string()),
            ("aisi", aisi.to_string()),
            ("arrived_us", arrived_us.to_string()),
            ("result", result.as_str().into()),
            ("reason", opt(reason)),
            ("anchor", opt(anchor)),
            ("latency_us", opt(latency_us)),
        ],
        Record::Retry { req, attempt } => {
            vec![("req", req.to_string()), ("attempt", attempt.to_string())]
        }
        Record::Evi { kind, aisi, leases, anchor, tier, latency_us, lost } => vec![
            ("kind", kind.as_str().into()),
            ("aisi", aisi.to_string()),
            ("leases", lease_list(leases)),
            ("anchor", anchor.clone()),
            ("tier", opt(tier)),
            ("latency_us", opt(latency_us)),
            ("lost", u8::from(*lost).to_string()),
        ],
        Record::Inject { what, anchor, session, value } => vec![
            ("what", what.clone()),
            ("anchor", opt(anchor)),
            ("session", opt(session)),
            ("value", opt(value)),
        ],
        Record::Tripwire { aisi, lease } => {
            vec![("aisi", aisi.to_string()), ("lease", lease.to_string())]
        }
        Record::RunEnd => vec![],
    }
}

fn write_entry(out: &mut String, e: &TraceEntry) -> fmt::Result {
    write!(out, "{}\t{}\t{}", e.time.as_us(), e.seq, e.record.category())?;
    for (k, v) in fields(&e.record) {
        write!(out, "\t{k}={v}")?;
    }
    Ok(())
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_entry(&mut s, self)?;
        f.write_str(&s)
    }
}

struct Kv<'a> {
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Kv<'a> {
    fn raw(&self, key: &str) -> Result<&'a str, String> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("missing field `{key}`"))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, String> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.raw(key)? {
            "-" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    fn string(&self, key: &str) -> Result<String, String> {
        self.raw(key).map(str::to_owned)
    }

    fn lease(&self, key: &str) -> Result<LeaseId, String> {
        self.get(key).map(LeaseId)
    }

    fn opt_lease(&self, key: &str) -> Result<Option<LeaseId>, String> {
        Ok(self.opt::<u64>(key)?.map(LeaseId))
    }

    fn backing(&self, key: &str) -> Result<Backing, String> {
        parse_backing(self.raw(key)?)
    }
}

fn parse_backing(s: &str) -> Result<Backing, String> {
    if s == "ungated" {
        return Ok(Backing::Ungated);
    }
    s.parse()
        .map(|n| Backing::Lease(LeaseId(n)))
        .map_err(|_| format!("bad backing `{s}`"))
}

fn parse_state(s: &str) -> Result<LeaseState, String> {
    match s {
        "active" => Ok(LeaseState::Active),
        "expired" => Ok(LeaseState::Expired),
        "revoked" => Ok(LeaseState::Revoked),
        "released" => Ok(LeaseState::Released),
        _ => Err(format!("bad lease state `{s}`")),
    }
}

fn parse_cause(s: &str) -> Result<RejectCause, String> {
    RejectCause::parse(s).ok_or_else(|| format!("bad reject cause `{s}`"))
}

fn parse_line(line: &str) -> Result<TraceEntry, String> {
    let mut cols = line.split('\t');
    let time: u64 = cols
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or("bad time column")?;
    let seq: u64 = cols
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or("bad seq column")?;
    let category = cols.next().ok_or("missing category")?;
    let mut pairs = Vec::new();
    for c in cols {
        let (k, v) = c.split_once('=').ok_or_else(|| format!("bad field `{c}`"))?;
        pairs.push((k, v));
    }
    let kv = Kv { pairs };
    let record = match category {
        "run" => Record::Run {
            policy: kv.get("policy")?,
            setup: kv.string("setup")?,
            seed: kv.get("seed")?,
            horizon_us: kv.get("horizon_us")?,
            tc_us: kv.get("tc_us")?,
            td_us: kv.get("td_us")?,
            sessions: kv.get("sessions")?,
        },
        "session_start" => Record::SessionStart {
            session: kv.get("session")?,
            zone: kv.get("zone")?,
        },
        "identity" => Record::Identity {
            session: kv.get("session")?,
            aisi: kv.get("aisi")?,
            aist: kv.get("aist")?,
        },
        "txn_start" => Record::TxnStart {
            aisi: kv.get("aisi")?,
            txn: kv.get("txn")?,
            purpose: kv.get("purpose")?,
        },
        "attempt" => Record::Attempt {
            aisi: kv.get("aisi")?,
            txn: kv.get("txn")?,
            anchor: kv.string("anchor")?,
            tier: kv.string("tier")?,
            score: kv.get("score")?,
        },
        "attempt_reply" => {
            let detail = kv.raw("detail")?;
            let reply = match kv.raw("result")? {
                "accept" => Reply::Accept(kv.lease("detail")?),
                "reject" => Reply::Reject(parse_cause(detail)?),
                other => return Err(format!("bad reply `{other}`")),
            };
            Record::AttemptReply {
                aisi: kv.get("aisi")?,
                txn: kv.get("txn")?,
                anchor: kv.string("anchor")?,
                reply,
            }
        }
        "txn_end" => Record::TxnEnd {
            aisi: kv.get("aisi")?,
            txn: kv.get("txn")?,
            success: match kv.raw("result")? {
                "success" => true,
                "reject" => false,
                other => return Err(format!("bad txn result `{other}`")),
            },
            causes: kv.string("causes")?,
            elapsed_us: kv.get("elapsed_us")?,
        },
        "lease_grant" => Record::LeaseGrant {
            lease: kv.lease("lease")?,
            aisi: kv.get("aisi")?,
            anchor: kv.string("anchor")?,
            tier: kv.string("tier")?,
            expires_us: kv.get("expires_us")?,
            renews: kv.opt_lease("renews")?,
        },
        "lease_end" => Record::LeaseEnd {
            lease: kv.lease("lease")?,
            aisi: kv.get("aisi")?,
            state: parse_state(kv.raw("state")?)?,
        },
        "renew_reject" => Record::RenewReject {
            aisi: kv.get("aisi")?,
            lease: kv.lease("lease")?,
            cause: parse_cause(kv.raw("cause")?)?,
        },
        "steer_install" => Record::SteerInstall {
            aisi: kv.get("aisi")?,
            anchor: kv.string("anchor")?,
            backing: kv.backing("backing")?,
            prio: kv.get("prio")?,
        },
        "steer_remove" => Record::SteerRemove {
            aisi: kv.get("aisi")?,
            anchor: kv.string("anchor")?,
            backing: kv.backing("backing")?,
        },
        "steer_flip" => Record::SteerFlip {
            aisi: kv.get("aisi")?,
            lease: kv.lease("lease")?,
            demoted: match kv.raw("demoted")? {
                "-" => None,
                s => Some(parse_backing(s)?),
            },
        },
        "reloc_start" => Record::RelocStart {
            aisi: kv.get("aisi")?,
            job: kv.get("job")?,
            trigger: kv.string("trigger")?,
            from: kv.string("from")?,
            old: kv.opt_lease("old")?,
        },
        "reloc_end" => Record::RelocEnd {
            aisi: kv.get("aisi")?,
            job: kv.get("job")?,
            done: match kv.raw("result")? {
                "done" => true,
                "failed" => false,
                other => return Err(format!("bad relocation result `{other}`")),
            },
            cause: kv.opt("cause")?,
            new: kv.opt_lease("new")?,
        },
        "request" => Record::Request {
            req: kv.get("req")?,
            aisi: kv.get("aisi")?,
        },
        "classify" => Record::Classify {
            req: kv.get("req")?,
            route: kv.opt("route")?,
        },
        "outcome" => Record::Outcome {
            req: kv.get("req")?,
            aisi: kv.get("aisi")?,
            arrived_us: kv.get("arrived_us")?,
            result: kv.get("result")?,
            reason: kv.opt("reason")?,
            anchor: kv.opt("anchor")?,
            latency_us: kv.opt("latency_us")?,
        },
        "retry" => Record::Retry {
            req: kv.get("req")?,
            attempt: kv.get("attempt")?,
        },
        "evi" => {
            let kind = kv.raw("kind")?;
            let leases = match kv.raw("leases")? {
                "-" => Vec::new(),
                s => s
                    .split(',')
                    .map(|x| x.parse().map(LeaseId).map_err(|_| format!("bad lease `{x}`")))
                    .collect::<Result<_, _>>()?,
            };
            Record::Evi {
                kind: EviKind::parse(kind).ok_or_else(|| format!("bad evidence kind `{kind}`"))?,
                aisi: kv.get("aisi")?,
                leases,
                anchor: kv.string("anchor")?,
                tier: kv.opt("tier")?,
                latency_us: kv.opt("latency_us")?,
                lost: kv.get::<u8>("lost")? != 0,
            }
        }
        "inject" => Record::Inject {
            what: kv.string("what")?,
            anchor: kv.opt("anchor")?,
            session: kv.opt("session")?,
            value: kv.opt("value")?,
        },
        "tripwire" => Record::Tripwire {
            aisi: kv.get("aisi")?,
            lease: kv.lease("lease")?,
        },
        "run_end" => Record::RunEnd,
        other => return Err(format!("unknown category `{other}`")),
    };
    Ok(TraceEntry {
        time: SimTime::from_us(time),
        seq,
        record,
    })
}
