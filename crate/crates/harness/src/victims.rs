//! Victim-program library: the op schedules the experiments run against.
//!
//! Every builder returns the machine with its mappings installed alongside
//! the program, so a scenario is runnable the moment it is built. Address
//! layouts are fixed per victim and chosen for their line indexes: lines at
//! index 0 of a page tag-match the attacker's probe and are selected
//! preferentially; lines at other indexes are only reachable through the
//! newest-entry fallback.

use crate::calibrate::Calibration;
use crate::error::HarnessError;
use crate::scenario::{SiteProfile, VictimParams};
use rand::Rng;
use zlsim_core::addr::{Asid, VirtAddr};
use zlsim_core::recover::AesVictim;
use zlsim_core::rng::{derive_seed, rng_from_seed};
use zlsim_core::sampler::{TriggerMode, TriggerSpec};
use zlsim_core::uarch::{Machine, MachineConfig, Op, PteFlags, VictimProgram};
use zlsim_core::Result as CoreResult;

type Result<T> = std::result::Result<T, HarnessError>;

pub const AES_ASID: Asid = Asid(0x11);
pub const BROWSE_ASID: Asid = Asid(0x22);
pub const GADGET_ASID: Asid = Asid(0x33);
pub const TRACE_ASID: Asid = Asid(0x44);

/// FIPS-197 example key; the default AES victim secret.
pub const DEFAULT_AES_KEY: [u8; 16] =
    *b"\x2b\x7e\x15\x16\x28\xae\xd2\xa6\xab\xf7\x15\x88\x09\xcf\x4f\x3c";

fn map_user(m: &mut Machine, asid: Asid, v: u64, p: u64) -> CoreResult<()> {
    m.map_page(asid, VirtAddr(v), zlsim_core::addr::PhysAddr(p), PteFlags::user())
}

// ---- AES loader -----------------------------------------------------------

const AES_TRIGGER_V: u64 = 0x2000;
const AES_KEY_V: u64 = 0x3000;
const AES_NOISE_V: u64 = 0x4000;
const AES_KEY_P: u64 = 0x9000;

/// Key-schedule victim: each key load flushes the key line, touches the
/// trigger code line, and re-loads the key; a noise step runs in between.
/// The key line sits at line index 0 so it tag-matches the probe while its
/// fill-buffer entry is fresh.
pub fn victim_aes(
    mcfg: MachineConfig,
    key: [u8; 16],
    loads: u64,
    load_interval: u64,
) -> Result<(Machine, AesVictim)> {
    if loads == 0 {
        return Err(HarnessError::config("aes victim needs at least one key load"));
    }
    if load_interval < 8 || load_interval % 2 != 0 {
        return Err(HarnessError::config(format!(
            "aes load_interval must be an even number of ticks >= 8, got {load_interval}"
        )));
    }
    let mut m = Machine::new(mcfg);
    for (v, p) in [(AES_TRIGGER_V, 0x8000u64), (AES_KEY_V, AES_KEY_P), (AES_NOISE_V, 0xA000)] {
        map_user(&mut m, AES_ASID, v, p)?;
    }
    let mut key_line = [0u8; 64];
    key_line[..16].copy_from_slice(&key);
    m.write_line(zlsim_core::addr::PhysAddr(AES_KEY_P), key_line)?;
    m.write_line(zlsim_core::addr::PhysAddr(0xA000), [0x77; 64])?;

    let mut steps = Vec::with_capacity(loads as usize * 2);
    for _ in 0..loads {
        steps.push(vec![
            Op::Flush { asid: AES_ASID, v: VirtAddr(AES_KEY_V) },
            Op::Read { asid: AES_ASID, v: VirtAddr(AES_TRIGGER_V) },
            Op::Read { asid: AES_ASID, v: VirtAddr(AES_KEY_V) },
        ]);
        steps.push(vec![
            Op::Flush { asid: AES_ASID, v: VirtAddr(AES_NOISE_V) },
            Op::Read { asid: AES_ASID, v: VirtAddr(AES_NOISE_V) },
        ]);
    }
    let step_interval = load_interval / 2;
    let victim = AesVictim {
        program: VictimProgram::new(steps, step_interval),
        trigger: TriggerSpec {
            asid: AES_ASID,
            watched_line: VirtAddr(AES_TRIGGER_V),
            mode: TriggerMode::FlushReloadHit,
        },
        window: step_interval - 2,
        load_interval,
        truth: key,
    };
    Ok((m, victim))
}

pub fn aes_key_from_params(p: &VictimParams) -> Result<[u8; 16]> {
    match &p.key {
        None => Ok(DEFAULT_AES_KEY),
        Some(hex) => {
            let bytes = crate::scenario::parse_hex_bytes("victim.parameters.key", hex)?;
            bytes.try_into().map_err(|v: Vec<u8>| {
                HarnessError::config(format!("aes key must be 16 bytes, got {}", v.len()))
            })
        }
    }
}

// ---- browsing emitter -------------------------------------------------------

const BROWSE_BASE_V: u64 = 0x10_0000;
const BROWSE_BASE_P: u64 = 0x80_0000;
const MAX_REQUEST_SLOTS: usize = 64;
/// Tail-truncated request views start this deep into the line.
const TRUNCATED_OFFSETS: std::ops::RangeInclusive<u64> = 52..=58;

#[derive(Debug, Clone)]
pub struct BrowseSpec {
    pub hosts: Vec<String>,
    pub profile: SiteProfile,
    /// Static profile: chance a request line shows the full URL.
    pub full_view_probability: f64,
    pub requests_per_reload: usize,
    pub step_interval: u64,
}

pub fn default_requests(profile: SiteProfile) -> usize {
    match profile {
        // A dynamic site issues many distinct requests per refresh; a
        // static one mostly hits its cache.
        SiteProfile::Dynamic => 5,
        SiteProfile::Static => 2,
    }
}

pub fn browse_spec_from_params(p: &VictimParams) -> Result<BrowseSpec> {
    let hosts = p.urls.clone().unwrap_or_else(|| vec!["www.kernel.org".to_string()]);
    if hosts.is_empty() {
        return Err(HarnessError::config("browse victim needs at least one url"));
    }
    for h in &hosts {
        if !h.starts_with("www.") || h.len() < 8 || h.len() > 40 {
            return Err(HarnessError::config(format!(
                "browse url `{h}` must start with `www.` and be 8..=40 bytes"
            )));
        }
    }
    let profile = p.profile.unwrap_or(SiteProfile::Dynamic);
    let requests = p.requests_per_reload.unwrap_or_else(|| default_requests(profile));
    if requests == 0 || hosts.len() * requests > MAX_REQUEST_SLOTS {
        return Err(HarnessError::config(format!(
            "browse needs 1..={MAX_REQUEST_SLOTS} request lines per reload, got {}",
            hosts.len() * requests
        )));
    }
    let p_full = p.full_view_probability.unwrap_or(0.15);
    if !(0.0..=1.0).contains(&p_full) {
        return Err(HarnessError::config(format!(
            "full_view_probability {p_full} outside [0, 1]"
        )));
    }
    Ok(BrowseSpec {
        hosts,
        profile,
        full_view_probability: p_full,
        requests_per_reload: requests,
        step_interval: p.step_interval.unwrap_or(400),
    })
}

fn request_vaddr(slot: usize) -> u64 {
    BROWSE_BASE_V + slot as u64 * 0x1000 + 0x40
}

/// Machine with every request-line page the spec can touch mapped up front.
pub fn browse_machine(mcfg: MachineConfig, spec: &BrowseSpec) -> Result<Machine> {
    let mut m = Machine::new(mcfg);
    for slot in 0..spec.hosts.len() * spec.requests_per_reload {
        map_user(
            &mut m,
            BROWSE_ASID,
            BROWSE_BASE_V + slot as u64 * 0x1000,
            BROWSE_BASE_P + slot as u64 * 0x1000,
        )?;
    }
    Ok(m)
}

/// One refresh: per host and request slot, store a request line with the
/// URL at a profile-chosen offset, then keep it cycling through the fill
/// buffer with a flush+reload pair.
pub fn browse_reload_program(spec: &BrowseSpec, reload: u64, seed: u64) -> VictimProgram {
    let mut rng = rng_from_seed(derive_seed(seed, format!("browse-{reload}")));
    let mut steps = Vec::new();
    for (h, host) in spec.hosts.iter().enumerate() {
        let url = format!("{host}/");
        for j in 0..spec.requests_per_reload {
            let full_limit = 64u64.saturating_sub(url.len() as u64);
            let full_offset = rng.gen_range(2..=full_limit.max(2));
            let offset = match spec.profile {
                SiteProfile::Dynamic => full_offset,
                SiteProfile::Static => {
                    // First touch after a cold cache shows only the tail
                    // end of the request buffer.
                    let truncated = rng.gen_range(TRUNCATED_OFFSETS);
                    if reload > 0 && rng.gen_bool(spec.full_view_probability) {
                        full_offset
                    } else {
                        truncated
                    }
                }
            };
            let mut data = [b' '; 64];
            for (i, &b) in url.as_bytes().iter().enumerate() {
                let at = offset as usize + i;
                if at < 64 {
                    data[at] = b;
                }
            }
            let v = VirtAddr(request_vaddr(h * spec.requests_per_reload + j));
            steps.push(vec![Op::StoreNt { asid: BROWSE_ASID, v, data }]);
            steps.push(vec![
                Op::Flush { asid: BROWSE_ASID, v },
                Op::Read { asid: BROWSE_ASID, v },
            ]);
        }
    }
    VictimProgram::new(steps, spec.step_interval)
}

// ---- bounds-check gadget ----------------------------------------------------

const GADGET_ARRAY_PAGE_V: u64 = 0x1000;
const GADGET_SECRET_PAGE_V: u64 = 0x2000;
const GADGET_SECRET_V: u64 = GADGET_SECRET_PAGE_V + 0x80;

pub struct GadgetSetup {
    pub active: (Machine, VictimProgram),
    pub baseline: (Machine, VictimProgram),
    pub secret: u8,
    pub secret_offset: u8,
}

fn gadget_machine(mcfg: MachineConfig, secret: u8, secret_offset: u8) -> Result<Machine> {
    let mut m = Machine::new(mcfg);
    map_user(&mut m, GADGET_ASID, GADGET_ARRAY_PAGE_V, 0x11000)?;
    map_user(&mut m, GADGET_ASID, GADGET_SECRET_PAGE_V, 0x12000)?;
    let mut line = [0u8; 64];
    line[secret_offset as usize] = secret;
    m.write_line(zlsim_core::addr::PhysAddr(0x12080), line)?;
    Ok(m)
}

/// Bounds-check gadget: every step reloads one in-bounds array line; with
/// probability `fraction` the step first issues a speculative out-of-bounds
/// read of the secret line two ticks ahead of the refill. The array starts
/// at line index 1 so nothing the victim touches tag-matches the probe;
/// inside the two-tick gap the secret entry is the newest stale entry.
#[allow(clippy::too_many_arguments)]
pub fn victim_gadget(
    mcfg: MachineConfig,
    secret: u8,
    secret_offset: u8,
    array_len: u64,
    fraction: f64,
    steps: u64,
    step_interval: u64,
    seed: u64,
) -> Result<GadgetSetup> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(HarnessError::config(format!(
            "mispredict_fraction {fraction} outside [0, 1]"
        )));
    }
    if step_interval < 4 {
        return Err(HarnessError::config("gadget step_interval must be at least 4 ticks"));
    }
    if secret_offset > 63 {
        return Err(HarnessError::config("secret_offset must be a line offset (0..=63)"));
    }
    if array_len == 0 {
        return Err(HarnessError::config("array_len must be positive"));
    }
    let lines = (array_len.div_ceil(64)).clamp(1, 62) as usize;

    let mut coins = rng_from_seed(derive_seed(seed, "gadget-coins"));
    let mut active = Vec::new();
    let mut baseline = Vec::new();
    for k in 0..steps {
        let base = k * step_interval;
        let array_v = VirtAddr(GADGET_ARRAY_PAGE_V + 0x40 + (k as usize % lines) as u64 * 64);
        if coins.gen_bool(fraction) {
            active.push((
                base,
                vec![Op::SpecRead { asid: GADGET_ASID, v: VirtAddr(GADGET_SECRET_V) }],
            ));
        }
        let refill = vec![
            Op::Flush { asid: GADGET_ASID, v: array_v },
            Op::Read { asid: GADGET_ASID, v: array_v },
        ];
        active.push((base + 2, refill.clone()));
        baseline.push((base + 2, refill));
    }

    Ok(GadgetSetup {
        active: (
            gadget_machine(mcfg.clone(), secret, secret_offset)?,
            VictimProgram::at_ticks(active),
        ),
        baseline: (
            gadget_machine(mcfg, secret, secret_offset)?,
            VictimProgram::at_ticks(baseline),
        ),
        secret,
        secret_offset,
    })
}

/// Resolve gadget parameters against the calibration defaults.
pub struct GadgetParams {
    pub secret: Option<u8>,
    pub secret_offset: u8,
    pub array_len: u64,
    pub fraction: f64,
    pub step_interval: u64,
}

pub fn gadget_params(p: &VictimParams, cal: &Calibration) -> Result<GadgetParams> {
    Ok(GadgetParams {
        secret: p.secret,
        secret_offset: p.secret_offset.unwrap_or(cal.gadget.secret_offset),
        array_len: p.array_len.unwrap_or(cal.gadget.array_len),
        fraction: p.mispredict_fraction.unwrap_or(cal.gadget.mispredict_fraction),
        step_interval: p.step_interval.unwrap_or(cal.gadget.step_interval),
    })
}

// ---- fixed-line reloader ------------------------------------------------------

const TRACE_V: u64 = 0x6000;
const TRACE_P: u64 = 0xB000;

/// Reloads one fixed line forever — the shape of a victim that keeps
/// restoring the same register file or secret block.
pub fn victim_custom_trace(
    mcfg: MachineConfig,
    line: [u8; 64],
    steps: u64,
    step_interval: u64,
) -> Result<(Machine, VictimProgram)> {
    if step_interval == 0 {
        return Err(HarnessError::config("custom-trace step_interval must be positive"));
    }
    let mut m = Machine::new(mcfg);
    map_user(&mut m, TRACE_ASID, TRACE_V, TRACE_P)?;
    m.write_line(zlsim_core::addr::PhysAddr(TRACE_P), line)?;
    let step = vec![
        Op::Flush { asid: TRACE_ASID, v: VirtAddr(TRACE_V) },
        Op::Read { asid: TRACE_ASID, v: VirtAddr(TRACE_V) },
    ];
    let program = VictimProgram::new(vec![step; steps as usize], step_interval);
    Ok((m, program))
}

pub fn trace_line_from_params(p: &VictimParams) -> Result<[u8; 64]> {
    let mut line = [0u8; 64];
    match &p.line {
        None => {
            // Recognizable default: a counting pattern.
            for (i, b) in line.iter_mut().enumerate() {
                *b = i as u8;
            }
        }
        Some(hex) => {
            let bytes = crate::scenario::parse_hex_bytes("victim.parameters.line", hex)?;
            if bytes.len() > 64 {
                return Err(HarnessError::config(format!(
                    "custom-trace line holds at most 64 bytes, got {}",
                    bytes.len()
                )));
            }
            line[..bytes.len()].copy_from_slice(&bytes);
        }
    }
    Ok(line)
}
