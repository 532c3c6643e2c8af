//! Scenario files: one JSON document drives machine construction, sampling
//! variant, victim program and attacker schedule.
//!
//! Unknown fields are rejected everywhere; omitted fields take the defaults
//! documented on each section. Only `seed` is mandatory.

use crate::calibrate::Calibration;
use crate::error::HarnessError;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::path::Path;
use zlsim_core::rng::derive_seed;
use zlsim_core::sampler::{ByteSource, Suppression, VariantConfig};
use zlsim_core::uarch::{MachineConfig, ReplacementPolicy, UarchGen, ZombieMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub machine: MachineSection,
    #[serde(default)]
    pub variant: VariantSection,
    #[serde(default)]
    pub victim: VictimSection,
    #[serde(default)]
    pub attacker: AttackerSection,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            machine: MachineSection::default(),
            variant: VariantSection::default(),
            victim: VictimSection::default(),
            attacker: AttackerSection::default(),
            seed: 0,
        }
    }
}

// ---- machine ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UarchName {
    PreSkylake,
    Skylake,
}

impl From<UarchName> for UarchGen {
    fn from(u: UarchName) -> UarchGen {
        match u {
            UarchName::PreSkylake => UarchGen::PreSkylake,
            UarchName::Skylake => UarchGen::Skylake,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    RoundRobin,
    PseudoLru { reuse_p: f64 },
}

/// Defaults mirror `MachineConfig::default()`: skylake, 1-tick stores,
/// 5-tick stall, pseudo-LRU reuse 0.3, in-flight entries leak-eligible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MachineSection {
    pub uarch: UarchName,
    pub fb_entries: Option<usize>,
    pub c_store: u64,
    pub c_stall: u64,
    pub replacement_policy: PolicyName,
    pub stale_allocated_eligible: bool,
}

impl Default for MachineSection {
    fn default() -> Self {
        MachineSection {
            uarch: UarchName::Skylake,
            fb_entries: None,
            c_store: 1,
            c_stall: 5,
            replacement_policy: PolicyName::PseudoLru { reuse_p: ReplacementPolicy::DEFAULT_REUSE_P },
            stale_allocated_eligible: true,
        }
    }
}

impl MachineSection {
    pub fn to_machine_config(&self, seed: u64) -> MachineConfig {
        MachineConfig {
            uarch: self.uarch.into(),
            fb_entries: self.fb_entries,
            c_store: self.c_store,
            c_stall: self.c_stall,
            replacement: match self.replacement_policy {
                PolicyName::RoundRobin => ReplacementPolicy::RoundRobin,
                PolicyName::PseudoLru { reuse_p } => ReplacementPolicy::PseudoLru { reuse_p },
            },
            policy_seed: derive_seed(seed, "policy"),
            stale_allocated_eligible: self.stale_allocated_eligible,
        }
    }
}

// ---- variant ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    KernelAlias,
    ClearedAccessed,
}

impl From<ModeName> for ZombieMode {
    fn from(m: ModeName) -> ZombieMode {
        match m {
            ModeName::KernelAlias => ZombieMode::KernelAlias,
            ModeName::ClearedAccessed => ZombieMode::ClearedAccessed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SuppressionName {
    #[default]
    Tsx,
    SignalHandler,
    Speculation,
}

impl From<SuppressionName> for Suppression {
    fn from(s: SuppressionName) -> Suppression {
        match s {
            SuppressionName::Tsx => Suppression::Tsx,
            SuppressionName::SignalHandler => Suppression::SignalHandler,
            SuppressionName::Speculation => Suppression::Speculation,
        }
    }
}

/// Explicit variant: attempts per simulated second plus true-positive rate;
/// mode defaults to kernel-alias under TSX, background to the calibrated
/// high-biased mix (or uniform when `background_weight` is 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitVariant {
    pub rate: f64,
    pub tp_rate: f64,
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default)]
    pub suppression: SuppressionName,
    #[serde(default)]
    pub background_weight: Option<f64>,
}

/// Either a named preset (`"v1-tsx"`, `"v2-signal"`, `"v2-tsx"`) or an
/// explicit `{rate, tp_rate, ...}` object.
#[derive(Debug, Clone, PartialEq)]
pub enum VariantSection {
    Preset(String),
    Explicit(ExplicitVariant),
}

impl Default for VariantSection {
    fn default() -> Self {
        VariantSection::Preset("v1-tsx".to_string())
    }
}

impl Serialize for VariantSection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            VariantSection::Preset(name) => s.serialize_str(name),
            VariantSection::Explicit(e) => e.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for VariantSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = VariantSection;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a variant preset name or an explicit {{rate, tp_rate}} object")
            }

            fn visit_str<E: serde::de::Error>(self, s: &str) -> Result<Self::Value, E> {
                if VariantConfig::preset(s).is_some() {
                    Ok(VariantSection::Preset(s.to_string()))
                } else {
                    Err(E::custom(format!(
                        "unknown variant preset `{s}`; expected one of {:?}",
                        VariantConfig::preset_names()
                    )))
                }
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<Self::Value, A::Error> {
                ExplicitVariant::deserialize(serde::de::value::MapAccessDeserializer::new(map))
                    .map(VariantSection::Explicit)
            }
        }
        d.deserialize_any(V)
    }
}

impl VariantSection {
    /// Materialize the sampling config, folding in the calibrated
    /// background mix for presets.
    pub fn to_variant_config(&self, cal: &Calibration) -> Result<VariantConfig, HarnessError> {
        match self {
            VariantSection::Preset(name) => {
                let mut v = VariantConfig::preset(name)
                    .ok_or_else(|| HarnessError::config(format!("unknown variant preset `{name}`")))?;
                v.background = background_from_weight(cal.background_weight(name));
                Ok(v)
            }
            VariantSection::Explicit(e) => {
                if !(0.0..=1.0).contains(&e.tp_rate) {
                    return Err(HarnessError::config(format!(
                        "variant tp_rate {} outside [0, 1]",
                        e.tp_rate
                    )));
                }
                if e.rate <= 0.0 {
                    return Err(HarnessError::config(format!(
                        "variant rate {} must be positive",
                        e.rate
                    )));
                }
                if let Some(w) = e.background_weight {
                    if !(0.0..=1.0).contains(&w) {
                        return Err(HarnessError::config(format!(
                            "background_weight {w} outside [0, 1]"
                        )));
                    }
                }
                Ok(VariantConfig {
                    mode: e.mode.into(),
                    suppression: e.suppression.into(),
                    attempts_per_second: e.rate,
                    true_positive_rate: e.tp_rate,
                    background: background_from_weight(e.background_weight.unwrap_or(0.0)),
                })
            }
        }
    }
}

pub fn background_from_weight(weight: f64) -> ByteSource {
    if weight > 0.0 {
        ByteSource::HighBiased { weight }
    } else {
        ByteSource::Uniform
    }
}

// ---- victim ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VictimKind {
    Aes,
    Browse,
    Gadget,
    CovertSender,
    /// Reloads one fixed secret line indefinitely (register-dump style
    /// victims).
    #[default]
    CustomTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteProfile {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakName {
    Raw,
    Ascii7,
}

/// Parameter bag shared by all victim kinds; each kind documents which
/// entries it reads in the builder. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct VictimParams {
    /// aes: 32 hex chars of AES-128 key material.
    pub key: Option<String>,
    /// aes: scheduled key loads (defaults to the attacker budget).
    pub loads: Option<u64>,
    /// aes: key loads per simulated second.
    pub load_rate: Option<f64>,
    /// browse: hosts to request, e.g. `"www.kernel.org"`.
    pub urls: Option<Vec<String>>,
    /// browse: simulated ticks each reload is sampled for.
    pub reload_interval: Option<u64>,
    pub profile: Option<SiteProfile>,
    /// browse: request lines emitted per reload.
    pub requests_per_reload: Option<usize>,
    /// browse (static profile): chance a reload maps a request line with
    /// the full URL in view.
    pub full_view_probability: Option<f64>,
    /// gadget: in-bounds array size in bytes.
    pub array_len: Option<u64>,
    /// gadget: planted secret byte (decimal or via hex string elsewhere);
    /// omitted → drawn per trial.
    pub secret: Option<u8>,
    /// gadget: byte offset of the secret within its line.
    pub secret_offset: Option<u8>,
    pub mispredict_fraction: Option<f64>,
    /// gadget / custom-trace: ticks between victim steps.
    pub step_interval: Option<u64>,
    /// gadget: detection mode for targeted recovery.
    pub leak_mode: Option<LeakName>,
    /// covert-sender: UTF-8 payload.
    pub payload: Option<String>,
    /// covert-sender: payload as hex, for binary data.
    pub payload_hex: Option<String>,
    pub repeats: Option<usize>,
    pub prefix: Option<u8>,
    pub attempts_per_packet: Option<f64>,
    /// custom-trace: line contents as hex (up to 64 bytes, zero padded).
    pub line: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct VictimSection {
    pub kind: VictimKind,
    pub parameters: VictimParams,
}

// ---- attacker -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    /// Watched line as a hex virtual address, e.g. `"0x2000"`.
    pub vaddr: String,
    pub asid: u16,
}

/// Defaults: one simulated second of sampling, no flush-reload trigger, no
/// budget cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerSection {
    /// Sampling duration in ticks (1 tick = 1 µs).
    pub duration: u64,
    /// Experiment budget: AES key loads or URL reloads.
    pub budget: Option<u64>,
    pub trigger: Option<TriggerSection>,
}

impl Default for AttackerSection {
    fn default() -> Self {
        AttackerSection { duration: 1_000_000, budget: None, trigger: None }
    }
}

// ---- loading ---------------------------------------------------------------

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, HarnessError> {
    let cfg: ScenarioConfig = serde_json::from_str(text)
        .map_err(|e| HarnessError::config(format!("invalid scenario: {e}")))?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        HarnessError::config(format!("cannot read scenario `{}`: {e}", path.display()))
    })?;
    parse_scenario(&text)
        .map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))
}

/// Canonical serialization used for the report digest.
pub fn canonical_json(cfg: &ScenarioConfig) -> String {
    serde_json::to_string(cfg).expect("scenario serializes")
}

pub fn parse_hex_bytes(field: &str, s: &str) -> Result<Vec<u8>, HarnessError> {
    let s = s.trim().trim_start_matches("0x");
    if s.len() % 2 != 0 {
        return Err(HarnessError::config(format!("{field}: hex string has odd length")));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|_| HarnessError::config(format!("{field}: invalid hex near `{}`", &s[i..i + 2])))
        })
        .collect()
}

pub fn parse_hex_u64(field: &str, s: &str) -> Result<u64, HarnessError> {
    let t = s.trim();
    let t = t.strip_prefix("0x").unwrap_or(t);
    u64::from_str_radix(t, 16)
        .map_err(|_| HarnessError::config(format!("{field}: `{s}` is not a hex address")))
}
