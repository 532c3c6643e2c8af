//! Experiment reports and plot-ready CSV emission.
//!
//! A report is a pure function of (scenario, seed): metric maps are ordered,
//! floats serialize via the shortest round-trip form, and the scenario
//! digest pins which configuration produced it. Re-running the same
//! experiment must yield byte-identical output.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use zlsim_core::dist::ByteDistribution;

/// One metric value. Serialized untagged, so reports read naturally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metric {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<bool> for Metric {
    fn from(v: bool) -> Metric {
        Metric::Bool(v)
    }
}

impl From<i64> for Metric {
    fn from(v: i64) -> Metric {
        Metric::Int(v)
    }
}

impl From<u64> for Metric {
    fn from(v: u64) -> Metric {
        Metric::Int(v as i64)
    }
}

impl From<usize> for Metric {
    fn from(v: usize) -> Metric {
        Metric::Int(v as i64)
    }
}

impl From<f64> for Metric {
    fn from(v: f64) -> Metric {
        Metric::Float(v)
    }
}

impl From<&str> for Metric {
    fn from(v: &str) -> Metric {
        Metric::Text(v.to_string())
    }
}

impl From<String> for Metric {
    fn from(v: String) -> Metric {
        Metric::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    /// Artifact version stamped into every report.
    pub version: String,
    pub seed: u64,
    /// FNV-1a over the canonical serialized scenario.
    pub scenario_digest: String,
    pub metrics: BTreeMap<String, Metric>,
}

impl Report {
    pub fn new(experiment: &str, seed: u64, scenario_digest: String) -> Report {
        Report {
            experiment: experiment.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            scenario_digest,
            metrics: BTreeMap::new(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl Into<Metric>) {
        self.metrics.insert(key.to_string(), value.into());
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `key,value` rows in metric order; values use their JSON form so the
    /// two formats never disagree on a number.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        for (k, v) in &self.metrics {
            out.push_str(k);
            out.push(',');
            out.push_str(&serde_json::to_string(v).expect("metric serializes"));
            out.push('\n');
        }
        out
    }
}

/// A named side file produced by an experiment (CSV curves, sample dumps).
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Artifact {
        Artifact { name: name.into(), contents: contents.into() }
    }
}

/// Everything one experiment run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{h:016x}")
}

/// `n,latency` rows for the store-latency sweep.
pub fn curve_csv(points: &[(u64, u64)]) -> String {
    let mut out = String::from("n,latency\n");
    for (n, latency) in points {
        out.push_str(&format!("{n},{latency}\n"));
    }
    out
}

/// `value,count` rows, all 256 bins, values in hex. Fixed shape keeps the
/// files diffable across runs.
pub fn dist_csv(d: &ByteDistribution) -> String {
    let mut out = String::from("value,count\n");
    for v in 0..=255u8 {
        out.push_str(&format!("{v:#04x},{}\n", d.count(v)));
    }
    out
}
