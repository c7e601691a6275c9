// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Anchor-side request service: a FIFO queue in front of `capacity`
//! identical servers.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::model::{ServiceTime, SimDuration, SimTime};

#[derive(Clone, Debug)]
pub struct AnchorService {
    /// Time at which each server next becomes free.
    free_at: Vec<SimTime>,
    /// Bumped on every hard failure; requests started under an older epoch
    /// are lost.
    pub epoch: u64,
}

impl AnchorService {
    pub fn new(servers: u32) -> Self {
        AnchorService {
            free_at: vec![SimTime::ZERO; servers.max(1) as usize],
            epoch: 0,
        }
    }

    pub fn servers(&self) -> usize {
        self.free_at.len()
    }

    /// Changes the server count. Shrinking drops the busiest servers; work
    /// already started on them still completes.
    pub fn resize(&mut self, servers: u32) {
        let n = servers.max(1) as usize;
        self.free_at.sort();
        self.free_at.resize(n, SimTime::ZERO);
    }

    /// Queues a job arriving at `now` and returns its queueing delay.
    pub fn enqueue(&mut self, now: SimTime, service: SimDuration) -> SimDuration {
        let (idx, free) = self
            .free_at
            .iter()
            .copied()
            .enumerate()
            .min_by_key(|&(i, t)| (t, i))
            .expect("at least one server");
        let start = free.max(now);
        self.free_at[idx] = start + service;
        start.since(now)
    }
}

/// Shifted exponential: `mean - std` plus an exponential tail of mean `std`.
pub fn sample_service(st: ServiceTime, rng: &mut impl Rng) -> SimDuration {
    let floor = (st.mean_ms - st.std_ms).max(0.0);
    let tail = if st.std_ms > 0.0 {
        Exp::new(1.0 / st.std_ms).expect("positive rate").sample(rng)
    } else {
        0.0
    };
    SimDuration::from_ms_f64(floor + tail).expect("finite service time")
}
