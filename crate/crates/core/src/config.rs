//! `key=value` run configuration files.
//!
//! ```text
//! mode=function:memoryGasCost      # or `binary`
//! profile=tinygo                   # tinygo | gc | c
//! scheduler=main-only              # or round-robin:Q
//! symbolic=n                       # comma list; default: every parameter
//! seed.n=64
//! input.addr=0x5000                # binary mode buffer
//! input.bytes=01ff                 # hex seed bytes; input.len=N pads with zeros
//! ram.0x2000=0xffffffff:4          # initial RAM value:size
//! overlay_depth=15
//! depth_unit=blocks                # or instructions
//! max_steps=100000
//! null_page=0x1000
//! gating=on  overlays=on  gate_overlays=off  add_sub=off  neutralize=on
//! solver_bits=20  solver_seed=0  scan_budget=64
//! ```

use thiserror::Error;

use crate::exec::{DepthUnit, ExecConfig, Mode, Profile};
use crate::threads::SchedulerPolicy;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("config line {line}: {reason}")]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

pub fn parse_int(s: &str) -> Option<u128> {
    let s = s.trim().replace('_', "");
    match s.strip_prefix("0x") {
        Some(hex) => u128::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

pub fn parse_mode(s: &str) -> Option<Mode> {
    if s == "binary" {
        return Some(Mode::Binary { addr: 0, len: 0 });
    }
    let name = s.strip_prefix("function:")?;
    (!name.is_empty()).then(|| Mode::Function { name: name.to_string() })
}

pub fn parse_profile(s: &str) -> Option<Profile> {
    match s {
        "tinygo" => Some(Profile::TinyGo),
        "gc" => Some(Profile::Gc),
        "c" | "c-like" => Some(Profile::CLike),
        _ => None,
    }
}

pub fn parse_scheduler(s: &str) -> Option<SchedulerPolicy> {
    if s == "main-only" {
        return Some(SchedulerPolicy::MainOnly);
    }
    let q = s.strip_prefix("round-robin:")?.parse::<u64>().ok()?;
    (q >= 1).then(|| SchedulerPolicy::round_robin(q))
}

fn parse_hex_bytes(s: &str) -> Option<Vec<u8>> {
    let s = s.strip_prefix("0x").unwrap_or(s);
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

/// Applies a configuration file on top of `base`.
pub fn parse_config(text: &str, base: ExecConfig) -> Result<ExecConfig, ConfigError> {
    let mut cfg = base;
    let mut input_addr = None;
    let mut input_len = None;
    let mut include_sysmon = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |reason: String| ConfigError { line, reason };
        let Some((key, value)) = content.split_once('=') else {
            return Err(err(format!("expected key=value, got `{content}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        let bad = || err(format!("bad value `{value}` for `{key}`"));
        let int = || parse_int(value).ok_or_else(bad);
        let flag = || parse_bool(value).ok_or_else(bad);
        match key {
            "mode" => cfg.mode = parse_mode(value).ok_or_else(bad)?,
            "profile" => cfg.profile = parse_profile(value).ok_or_else(bad)?,
            "scheduler" => cfg.scheduler = parse_scheduler(value).ok_or_else(bad)?,
            "symbolic" => {
                cfg.symbolic = Some(
                    value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect(),
                )
            }
            "input.addr" => input_addr = Some(int()? as u64),
            "input.len" => input_len = Some(int()? as usize),
            "input.bytes" => cfg.input_bytes = parse_hex_bytes(value).ok_or_else(bad)?,
            "overlay_depth" => cfg.overlay_depth = u32::try_from(int()?).map_err(|_| bad())?,
            "depth_unit" => {
                cfg.depth_unit = match value {
                    "blocks" => DepthUnit::Blocks,
                    "instructions" => DepthUnit::Instructions,
                    _ => return Err(bad()),
                }
            }
            "max_steps" => cfg.max_steps = int()? as u64,
            "null_page" => cfg.null_page = int()? as u64,
            "gating" => cfg.gating = flag()?,
            "gate_overlays" => cfg.gate_overlays = flag()?,
            "overlays" => cfg.overlays = flag()?,
            "add_sub" => cfg.check_add_sub = flag()?,
            "neutralize" => cfg.neutralize_preemption = flag()?,
            "include_sysmon" => include_sysmon = flag()?,
            "solver_bits" => cfg.solver.exhaustive_bits_limit = int()? as u32,
            "solver_seed" => cfg.solver.seed = int()? as u64,
            "scan_budget" => cfg.scan_budget = int()? as usize,
            _ => {
                if let Some(name) = key.strip_prefix("seed.") {
                    cfg.seeds.insert(name.to_string(), int()?);
                } else if let Some(addr) = key.strip_prefix("ram.") {
                    let addr = parse_int(addr).ok_or_else(bad)? as u64;
                    let (v, size) = value.split_once(':').ok_or_else(bad)?;
                    let v = parse_int(v).ok_or_else(bad)?;
                    let size = parse_int(size)
                        .and_then(|s| u8::try_from(s).ok())
                        .filter(|s| (1..=16).contains(s))
                        .ok_or_else(bad)?;
                    cfg.ram.push((addr, v, size));
                } else {
                    return Err(err(format!("unknown key `{key}`")));
                }
            }
        }
    }
    if let Mode::Binary { addr, len } = &mut cfg.mode {
        if let Some(a) = input_addr {
            *addr = a;
        }
        *len = input_len.unwrap_or(cfg.input_bytes.len()).max(cfg.input_bytes.len());
    }
    if include_sysmon {
        if let SchedulerPolicy::RoundRobin { include_sysmon: s, .. } = &mut cfg.scheduler {
            *s = true;
        }
    }
    Ok(cfg)
}
