//! Noise calibration consumed by the variant presets.
//!
//! The shipped file pins the background byte mix and the gadget victim's
//! defaults so the targeted-leakage accuracy targets hold; `zlsim
//! calibrate` re-fits it by grid search (see `experiments::run_calibrate`).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::OnceLock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GadgetDefaults {
    /// Chance a victim step speculatively touches the secret line.
    pub mispredict_fraction: f64,
    /// Ticks between victim steps.
    pub step_interval: u64,
    /// Byte offset of the secret within its line.
    pub secret_offset: u8,
    /// In-bounds array size in bytes.
    pub array_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub version: u32,
    /// High-byte background mix per preset; 0 means uniform noise.
    pub background_weight: BTreeMap<String, f64>,
    pub gadget: GadgetDefaults,
    /// Accuracy metrics measured when this file was fitted.
    pub fit: BTreeMap<String, f64>,
}

impl Calibration {
    pub fn background_weight(&self, preset: &str) -> f64 {
        self.background_weight.get(preset).copied().unwrap_or(0.0)
    }
}

/// Calibration bundled with the binary; regenerate with `zlsim calibrate`.
pub fn shipped() -> &'static Calibration {
    static CAL: OnceLock<Calibration> = OnceLock::new();
    CAL.get_or_init(|| {
        serde_json::from_str(include_str!("../calibration.json"))
            .expect("shipped calibration parses")
    })
}

/// Targets for the calibration fit, as trial-accuracy fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateTargets {
    pub raw_10s: f64,
    pub raw_20s: f64,
    pub ascii_10s: f64,
}

impl Default for CalibrateTargets {
    fn default() -> Self {
        CalibrateTargets { raw_10s: 0.38, raw_20s: 0.46, ascii_10s: 0.72 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub seed: u64,
    #[serde(default = "default_preset")]
    pub preset: String,
    /// Target sampler true-positive rate; 1.0 trivially forces a zero
    /// background weight, values above 1 are rejected.
    #[serde(default)]
    pub target_tp: Option<f64>,
    #[serde(default)]
    pub targets: CalibrateTargets,
    /// Trials per grid point when estimating accuracy.
    #[serde(default = "default_trials")]
    pub trials: u64,
    /// Background-weight grid; empty → built-in grid.
    #[serde(default)]
    pub weights: Vec<f64>,
    /// Mispredict-fraction grid; empty → built-in grid.
    #[serde(default)]
    pub fractions: Vec<f64>,
}

fn default_preset() -> String {
    "v1-tsx".to_string()
}

fn default_trials() -> u64 {
    30
}

impl CalibrateConfig {
    pub fn weight_grid(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            vec![0.70, 0.80, 0.85, 0.90]
        } else {
            self.weights.clone()
        }
    }

    pub fn fraction_grid(&self) -> Vec<f64> {
        if self.fractions.is_empty() {
            vec![0.30, 0.35, 0.40, 0.45, 0.50]
        } else {
            self.fractions.clone()
        }
    }
}

pub fn load_calibrate_config(path: &std::path::Path) -> Result<CalibrateConfig, crate::HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        crate::HarnessError::config(format!("cannot read config `{}`: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| crate::HarnessError::config(format!("{}: invalid config: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_calibration_parses_and_covers_presets() {
        let cal = shipped();
        for preset in zlsim_core::sampler::VariantConfig::preset_names() {
            assert!(
                cal.background_weight.contains_key(*preset),
                "calibration misses preset {preset}"
            );
        }
        assert!(cal.gadget.mispredict_fraction > 0.0 && cal.gadget.mispredict_fraction <= 1.0);
        assert!(cal.gadget.step_interval > 4);
    }

    #[test]
    fn calibrate_config_defaults() {
        let ccfg: CalibrateConfig = serde_json::from_str(r#"{"seed": 5}"#).unwrap();
        assert_eq!(ccfg.preset, "v1-tsx");
        assert_eq!(ccfg.trials, 30);
        assert_eq!(ccfg.targets, CalibrateTargets::default());
        assert!(!ccfg.weight_grid().is_empty());
        assert!(!ccfg.fraction_grid().is_empty());
    }
}
