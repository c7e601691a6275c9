// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Summaries over seeds. Percentiles are nearest-rank.

use serde::Serialize;

use super::{MetricsError, MetricsReport};

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Nearest-rank percentile: the smallest sample with at least `p` percent
/// of the samples at or below it.
pub fn percentile(v: &[f64], p: f64) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    Some(s[rank.min(s.len()) - 1])
}

/// Empirical CDF as `(value, fraction <= value)`, one point per distinct
/// value.
pub fn cdf(v: &[f64]) -> Vec<(f64, f64)> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in s.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Option<Summary> {
        Some(Summary {
            n: v.len(),
            mean: mean(v)?,
            p50: percentile(v, 50.0)?,
            p90: percentile(v, 90.0)?,
            p99: percentile(v, 99.0)?,
        })
    }
}

/// Seed-level aggregate for one (setup, policy) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    /// Pooled over all runs.
    pub transaction_time: Option<Summary>,
    pub request_failure_rate: Summary,
    /// Pooled ratio: recovered over injected, summed across runs.
    pub recovery_success_probability: Option<f64>,
    pub injected_failures: u64,
    pub evidence_traffic_rate: Summary,
    pub violation_rate_percent: Summary,
    pub relocation_count: Summary,
    pub overlap_mean_ms: Option<f64>,
    pub overlap_max_ms: Option<f64>,
    pub transaction_time_cdf: Vec<(f64, f64)>,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<Aggregate, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let col = |f: fn(&MetricsReport) -> f64| -> Summary {
        let v: Vec<f64> = reports.iter().map(f).collect();
        Summary::of(&v).expect("non-empty")
    };
    let tt: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.transaction_time_samples.iter().copied())
        .collect();
    let overlap: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.overlap_samples.iter().copied())
        .collect();
    let injected: u64 = reports.iter().map(|r| r.injected_failures).sum();
    let recovered: u64 = reports.iter().map(|r| r.recovered_failures).sum();
    Ok(Aggregate {
        runs: reports.len(),
        transaction_time: Summary::of(&tt),
        request_failure_rate: col(|r| r.request_failure_rate),
        recovery_success_probability: (injected > 0).then(|| recovered as f64 / injected as f64),
        injected_failures: injected,
        evidence_traffic_rate: col(|r| r.evidence_traffic_rate),
        violation_rate_percent: col(|r| r.violation_rate_percent),
        relocation_count: col(|r| r.relocation_count as f64),
        overlap_mean_ms: mean(&overlap),
        overlap_max_ms: overlap.iter().copied().max_by(f64::total_cmp),
        transaction_time_cdf: cdf(&tt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_by_hand() {
        let v = [40.0, 10.0, 30.0, 20.0];
        assert_eq!(percentile(&v, 50.0), Some(20.0));
        assert_eq!(percentile(&v, 90.0), Some(40.0));
        assert_eq!(percentile(&v, 25.0), Some(10.0));
        assert_eq!(percentile(&v, 0.0), Some(10.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn cdf_steps() {
        assert_eq!(cdf(&[2.0, 1.0, 2.0, 3.0]), vec![(1.0, 0.25), (2.0, 0.75), (3.0, 1.0)]);
    }

    #[test]
    fn empty_aggregate_is_an_error() {
        assert_eq!(aggregate(&[]), Err(MetricsError::EmptyInput));
    }
}
