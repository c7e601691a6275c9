// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Scenario configuration and the shipped S1-S5 parameter sets.
//!
//! A config file is TOML. It names a `setup`, and every other key overrides
//! the preset of that setup. Unknown keys are rejected. Durations are in
//! milliseconds.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::PolicyKind;
use crate::model::{
    Anchor, AnchorId, EvidenceLevel, Health, ModelTier, Region, ServiceTime, SimDuration,
    SiteClass, TierId,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_owned(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SetupId {
    S1,
    S2,
    S3,
    S4,
    S5,
    Custom,
}

impl SetupId {
    pub const SHIPPED: [SetupId; 5] = [SetupId::S1, SetupId::S2, SetupId::S3, SetupId::S4, SetupId::S5];

    pub fn label(self) -> &'static str {
        match self {
            SetupId::S1 => "Nominal",
            SetupId::S2 => "HighMobility",
            SetupId::S3 => "HighLoad",
            SetupId::S4 => "MobilityLoad",
            SetupId::S5 => "FailureStress",
            SetupId::Custom => "Custom",
        }
    }
}

impl fmt::Display for SetupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for SetupId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(SetupId::S1),
            "S2" => Ok(SetupId::S2),
            "S3" => Ok(SetupId::S3),
            "S4" => Ok(SetupId::S4),
            "S5" => Ok(SetupId::S5),
            "CUSTOM" => Ok(SetupId::Custom),
            _ => Err(format!("unknown setup `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Hard,
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub at_ms: f64,
    pub anchor: AnchorId,
    pub kind: FailureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recover_after_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub setup: SetupId,
    pub policy: PolicyKind,
    pub seed: u64,
    pub horizon_ms: f64,
    pub sessions: u32,
    /// Session `i` starts at `i * session_spacing_ms`.
    pub session_spacing_ms: f64,
    /// Requests per second per session, before stress scaling.
    pub arrival_rate: f64,
    /// Per-session, per-interval probability of a path change.
    pub relocation_probability: f64,
    pub mobility_interval_ms: f64,
    /// Extra one-way latency to an edge anchor outside the session's zone.
    pub remote_penalty_ms: f64,
    pub stress_level: f64,
    pub overload_threshold: f64,
    pub lease_duration_ms: f64,
    /// Renewal is attempted this fraction of the lease before expiry.
    pub renew_ahead: f64,
    pub commit_timeout_ms: f64,
    pub drain_timeout_ms: f64,
    pub admission_rtt_ms: f64,
    pub target_latency_ms: f64,
    pub reliability_target: f64,
    /// A request slower than `deadline_factor * target_latency` is lost.
    pub deadline_factor: f64,
    pub region: Region,
    pub evidence: EvidenceLevel,
    pub max_relocation_rate: f64,
    pub hysteresis: f64,
    pub margin: f64,
    pub recovery_window_ms: f64,
    /// Time a non-transactional move leaves the session without a route.
    pub resteer_gap_ms: f64,
    pub reattach_backoff_ms: f64,
    pub relocation_recheck_ms: f64,
    /// Random anchor failures per second, before stress scaling.
    pub failure_rate: f64,
    pub failure_duration_ms: f64,
    pub soft_failure_fraction: f64,
    #[serde(default)]
    pub failure_schedule: Vec<FailureSpec>,
    pub overload: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overload_at_ms: Option<f64>,
    /// Edge capacity becomes `ceil(capacity * (1 - overload_cut * stress))`.
    pub overload_cut: f64,
    pub anchors: Vec<Anchor>,
}

fn tier(id: &str, mean: f64, std: f64, cost: f64) -> ModelTier {
    ModelTier {
        tier_id: TierId::from(id),
        service_time: ServiceTime {
            mean_ms: mean,
            std_ms: std,
        },
        cost,
    }
}

fn default_anchors() -> Vec<Anchor> {
    let mut out: Vec<Anchor> = (0..3)
        .map(|i| Anchor {
            anchor_id: AnchorId::new(format!("edge-{i}")),
            site_class: SiteClass::Edge,
            region: Region::from("EU"),
            tiers_offered: vec![tier("small", 10.0, 2.0, 1.0)],
            capacity: 8,
            health: Health::Healthy,
            path_latency: SimDuration::from_ms(5),
            zone: Some(i),
        })
        .collect();
    out.push(Anchor {
        anchor_id: AnchorId::from("cloud-0"),
        site_class: SiteClass::Cloud,
        region: Region::from("EU"),
        tiers_offered: vec![tier("large", 20.0, 4.0, 3.0), tier("small", 10.0, 2.0, 1.0)],
        capacity: 40,
        health: Health::Healthy,
        path_latency: SimDuration::from_ms(30),
        zone: None,
    });
    out
}

impl ScenarioConfig {
    /// The documented parameter set for a setup.
    pub fn preset(setup: SetupId) -> ScenarioConfig {
        let mut c = ScenarioConfig {
            setup,
            policy: PolicyKind::AiPaging,
            seed: 1,
            horizon_ms: 60_000.0,
            sessions: 18,
            session_spacing_ms: 10.0,
            arrival_rate: 5.0,
            relocation_probability: 0.02,
            mobility_interval_ms: 1_000.0,
            remote_penalty_ms: 100.0,
            stress_level: 0.0,
            overload_threshold: 0.8,
            lease_duration_ms: 1_000.0,
            renew_ahead: 0.2,
            commit_timeout_ms: 100.0,
            drain_timeout_ms: 50.0,
            admission_rtt_ms: 5.0,
            target_latency_ms: 50.0,
            reliability_target: 0.99,
            deadline_factor: 2.0,
            region: Region::from("EU"),
            evidence: EvidenceLevel::Minimal,
            max_relocation_rate: 2.0,
            hysteresis: 1.2,
            margin: 0.2,
            recovery_window_ms: 2_000.0,
            resteer_gap_ms: 200.0,
            reattach_backoff_ms: 200.0,
            relocation_recheck_ms: 250.0,
            failure_rate: 0.0,
            failure_duration_ms: 5_000.0,
            soft_failure_fraction: 0.3,
            failure_schedule: Vec::new(),
            overload: false,
            overload_at_ms: None,
            overload_cut: 0.8,
            anchors: default_anchors(),
        };
        match setup {
            SetupId::S1 | SetupId::Custom => {}
            SetupId::S2 => c.relocation_probability = 0.3,
            SetupId::S3 => {
                c.overload = true;
                c.stress_level = 1.0;
            }
            SetupId::S4 => {
                c.overload = true;
                c.stress_level = 1.0;
                c.relocation_probability = 0.3;
            }
            SetupId::S5 => c.failure_rate = 0.05,
        }
        c
    }

    /// Parses a TOML document over the preset of its `setup` key
    /// (`Custom` when absent) and validates the result.
    pub fn from_toml_str(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let setup = match file.get("setup") {
            None => SetupId::Custom,
            Some(toml::Value::String(s)) => s.parse().map_err(|e: String| invalid("setup", e))?,
            Some(_) => return Err(invalid("setup", "expected a string")),
        };
        let preset = toml::Table::try_from(ScenarioConfig::preset(setup))
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut merged = preset;
        for (k, v) in file {
            merged.insert(k, v);
        }
        let cfg: ScenarioConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the stress mapping for a stress sweep point: the scalar also
    /// becomes the path-change probability.
    pub fn apply_stress(&mut self, s: f64) {
        self.stress_level = s;
        self.relocation_probability = s;
    }

    pub fn effective_arrival_rate(&self) -> f64 {
        self.arrival_rate * (1.0 + 4.0 * self.stress_level)
    }

    pub fn effective_failure_rate(&self) -> f64 {
        self.failure_rate * (1.0 + 2.0 * self.stress_level)
    }

    /// Edge capacity after the overload injection, or `None` when the
    /// injection does not lower it.
    pub fn overloaded_capacity(&self, capacity: u32) -> Option<u32> {
        if !self.overload || self.stress_level <= 0.0 {
            return None;
        }
        let cut = (f64::from(capacity) * (1.0 - self.overload_cut * self.stress_level)).ceil();
        let cut = cut.max(0.0) as u32;
        (cut < capacity).then_some(cut)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("horizon_ms", self.horizon_ms),
            ("arrival_rate", self.arrival_rate),
            ("mobility_interval_ms", self.mobility_interval_ms),
            ("lease_duration_ms", self.lease_duration_ms),
            ("commit_timeout_ms", self.commit_timeout_ms),
            ("drain_timeout_ms", self.drain_timeout_ms),
            ("target_latency_ms", self.target_latency_ms),
            ("deadline_factor", self.deadline_factor),
            ("recovery_window_ms", self.recovery_window_ms),
            ("reattach_backoff_ms", self.reattach_backoff_ms),
            ("relocation_recheck_ms", self.relocation_recheck_ms),
            ("failure_duration_ms", self.failure_duration_ms),
            ("hysteresis", self.hysteresis),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("session_spacing_ms", self.session_spacing_ms),
            ("remote_penalty_ms", self.remote_penalty_ms),
            ("admission_rtt_ms", self.admission_rtt_ms),
            ("resteer_gap_ms", self.resteer_gap_ms),
            ("failure_rate", self.failure_rate),
            ("max_relocation_rate", self.max_relocation_rate),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be >= 0, got {v}")));
            }
        }
        let fractions = [
            ("relocation_probability", self.relocation_probability),
            ("stress_level", self.stress_level),
            ("reliability_target", self.reliability_target),
            ("renew_ahead", self.renew_ahead),
            ("margin", self.margin),
            ("soft_failure_fraction", self.soft_failure_fraction),
            ("overload_cut", self.overload_cut),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("must be in [0, 1], got {v}")));
            }
        }
        if !(self.overload_threshold >= 0.0 && self.overload_threshold.is_finite()) {
            return Err(invalid("overload_threshold", "must be >= 0"));
        }
        if self.sessions == 0 {
            return Err(invalid("sessions", "must be > 0"));
        }
        if self.renew_ahead >= 1.0 {
            return Err(invalid("renew_ahead", "must be < 1"));
        }
        if self.anchors.is_empty() {
            return Err(invalid("anchors", "at least one anchor is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.anchors {
            a.validate().map_err(|e| invalid("anchors", e.to_string()))?;
            if !seen.insert(&a.anchor_id) {
                return Err(invalid("anchors", format!("duplicate anchor `{}`", a.anchor_id)));
            }
        }
        for f in &self.failure_schedule {
            if !seen.contains(&f.anchor) {
                return Err(invalid(
                    "failure_schedule",
                    format!("unknown anchor `{}`", f.anchor),
                ));
            }
            if !(f.at_ms >= 0.0 && f.at_ms.is_finite()) {
                return Err(invalid("failure_schedule", "at_ms must be >= 0"));
            }
            if f.recover_after_ms.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
                return Err(invalid("failure_schedule", "recover_after_ms must be > 0"));
            }
        }
        if let Some(at) = self.overload_at_ms {
            if !(at >= 0.0 && at.is_finite()) {
                return Err(invalid("overload_at_ms", "must be >= 0"));
            }
        }
        Ok(())
    }

    /// Converts a millisecond field; only called on validated configs.
    pub fn dur(ms: f64) -> SimDuration {
        SimDuration::from_ms_f64(ms).expect("validated duration")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for s in SetupId::SHIPPED {
            ScenarioConfig::preset(s).validate().unwrap();
        }
    }

    #[test]
    fn file_overrides_preset() {
        let c = ScenarioConfig::from_toml_str("setup = \"S2\"\nseed = 9\nsessions = 4\n").unwrap();
        assert_eq!(c.setup, SetupId::S2);
        assert_eq!(c.seed, 9);
        assert_eq!(c.sessions, 4);
        assert_eq!(c.relocation_probability, 0.3);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = ScenarioConfig::from_toml_str("setup = \"S1\"\nwarp_factor = 3\n").unwrap_err();
        assert!(e.to_string().contains("warp_factor"), "{e}");
    }

    #[test]
    fn zero_arrival_rate_names_the_field() {
        let e = ScenarioConfig::from_toml_str("arrival_rate = 0.0\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { ref field, .. } if field == "arrival_rate"));
    }

    #[test]
    fn failure_schedule_needs_known_anchor() {
        let text = "setup = \"S5\"\n[[failure_schedule]]\nat_ms = 100.0\nanchor = \"edge-9\"\nkind = \"hard\"\n";
        let e = ScenarioConfig::from_toml_str(text).unwrap_err();
        assert!(e.to_string().contains("edge-9"), "{e}");
    }

    #[test]
    fn preset_round_trips_through_toml() {
        let c = ScenarioConfig::preset(SetupId::S4);
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn stress_mapping() {
        let mut c = ScenarioConfig::preset(SetupId::S5);
        c.apply_stress(0.5);
        assert_eq!(c.relocation_probability, 0.5);
        assert!((c.effective_arrival_rate() - 15.0).abs() < 1e-12);
        assert!((c.effective_failure_rate() - 0.1).abs() < 1e-12);
        c.overload = true;
        // ceil(8 * (1 - 0.8 * 0.5)) = ceil(4.8) = 5
        assert_eq!(c.overloaded_capacity(8), Some(5));
        c.stress_level = 0.0;
        assert_eq!(c.overloaded_capacity(8), None);
        c.stress_level = 1.0;
        // 10 -> 2
        assert_eq!(c.overloaded_capacity(10), Some(2));
    }
}
