//! Thread-dump ingestion, classification, preemption neutralisation and
//! scheduling.
//!
//! Dump format, one directive per line:
//!
//! ```text
//! thread <tid>
//! reg <name> <hex>
//! tls <hex>
//! desc <hex>
//! bt <innermost> ... <outermost>
//! ```
//!
//! `#` starts a comment. Each `thread` line opens a new record.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{Space, Varnode, DESCRIPTOR_REG};
use crate::state::{ConcolicValue, MachineState};
use crate::sym::ExprPool;

pub const MAIN_FRAME: &str = "main.main";
pub const SYSMON_FRAME: &str = "runtime.sysmon";
/// Sentinel value meaning "no preemption requested".
pub const NO_PREEMPT: u128 = 0;
pub const SENTINEL_SIZE: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ThreadClass {
    Main,
    Sysmon,
    Waiting,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreadRecord {
    pub tid: u64,
    pub registers: BTreeMap<String, u64>,
    pub tls_base: u64,
    pub backtrace: Vec<String>,
    pub class: ThreadClass,
    pub descriptor_addr: Option<u64>,
}

impl ThreadRecord {
    /// Innermost frame of the backtrace.
    pub fn leaf(&self) -> Option<&str> {
        self.backtrace.first().map(String::as_str)
    }

    /// Register writes materialising this thread's register file.
    /// `rN` names map to register slot N; the descriptor address, when
    /// present, is placed in `r14`.
    pub fn register_writes(&self) -> Vec<(Varnode, u64)> {
        let mut out: Vec<(Varnode, u64)> = self
            .registers
            .iter()
            .filter_map(|(name, v)| {
                let idx: u64 = name.strip_prefix('r')?.parse().ok()?;
                Some((Varnode::reg(idx, 8), *v))
            })
            .collect();
        if let Some(desc) = self.descriptor_addr {
            out.retain(|(v, _)| *v != Varnode::reg(DESCRIPTOR_REG, 8));
            out.push((Varnode::reg(DESCRIPTOR_REG, 8), desc));
        }
        out
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DumpError {
    #[error("thread dump line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("thread dump: {0}")]
    Classification(String),
    #[error("thread dump has no thread executing main.main")]
    MissingMainThread,
    #[error("cannot read thread dump: {0}")]
    Io(String),
}

fn hex(s: &str, line: usize) -> Result<u64, DumpError> {
    let digits = s.strip_prefix("0x").unwrap_or(s);
    u64::from_str_radix(digits, 16).map_err(|_| DumpError::Format {
        line,
        reason: format!("bad hex value `{s}`"),
    })
}

/// Parses and classifies a dump.
pub fn parse_thread_dump(text: &str) -> Result<Vec<ThreadRecord>, DumpError> {
    let mut records: Vec<ThreadRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut words = content.split_whitespace();
        let kw = words.next().unwrap_or_default();
        let args: Vec<&str> = words.collect();
        let err = |reason: &str| DumpError::Format {
            line,
            reason: reason.to_string(),
        };
        if kw == "thread" {
            let [tid] = args[..] else {
                return Err(err("expected `thread <tid>`"));
            };
            let tid: u64 = tid.parse().map_err(|_| err("bad thread id"))?;
            if records.iter().any(|r| r.tid == tid) {
                return Err(err("duplicate thread id"));
            }
            records.push(ThreadRecord {
                tid,
                registers: BTreeMap::new(),
                tls_base: 0,
                backtrace: Vec::new(),
                class: ThreadClass::Waiting,
                descriptor_addr: None,
            });
            continue;
        }
        let Some(rec) = records.last_mut() else {
            return Err(err("directive before any `thread` line"));
        };
        match (kw, &args[..]) {
            ("reg", [name, value]) => {
                rec.registers.insert(name.to_string(), hex(value, line)?);
            }
            ("tls", [value]) => rec.tls_base = hex(value, line)?,
            ("desc", [value]) => rec.descriptor_addr = Some(hex(value, line)?),
            ("bt", frames) if !frames.is_empty() => {
                rec.backtrace = frames.iter().map(|s| s.to_string()).collect();
            }
            _ => return Err(err(&format!("malformed `{kw}` directive"))),
        }
    }
    if records.is_empty() {
        return Err(DumpError::Format {
            line: 0,
            reason: "no threads".into(),
        });
    }
    classify(&mut records)?;
    Ok(records)
}

pub fn load_thread_dump(path: &Path) -> Result<Vec<ThreadRecord>, DumpError> {
    let text = std::fs::read_to_string(path).map_err(|e| DumpError::Io(format!("{}: {e}", path.display())))?;
    parse_thread_dump(&text)
}

/// The thread running `main.main` is MAIN, the one running `runtime.sysmon`
/// is SYSMON, everything else is WAITING.
pub fn classify(records: &mut [ThreadRecord]) -> Result<(), DumpError> {
    let has = |r: &ThreadRecord, f: &str| r.backtrace.iter().any(|b| b == f);
    let mains = records.iter().filter(|r| has(r, MAIN_FRAME)).count();
    match mains {
        0 => return Err(DumpError::MissingMainThread),
        1 => {}
        n => {
            return Err(DumpError::Classification(format!(
                "{n} threads claim {MAIN_FRAME}"
            )))
        }
    }
    for r in records.iter_mut() {
        r.class = if has(r, MAIN_FRAME) {
            ThreadClass::Main
        } else if has(r, SYSMON_FRAME) {
            ThreadClass::Sysmon
        } else {
            ThreadClass::Waiting
        };
    }
    Ok(())
}

pub fn main_thread(records: &[ThreadRecord]) -> &ThreadRecord {
    records
        .iter()
        .find(|r| r.class == ThreadClass::Main)
        .expect("classified dumps have a main thread")
}

/// Clears the preemption sentinel in the thread's descriptor.
pub fn neutralize_preemption(state: &mut MachineState, pool: &mut ExprPool, record: &ThreadRecord) {
    if let Some(addr) = record.descriptor_addr {
        let zero = ConcolicValue::constant(pool, NO_PREEMPT, SENTINEL_SIZE);
        state
            .write_bytes(pool, Space::Ram, addr, &zero)
            .expect("RAM is writable");
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerPolicy {
    MainOnly,
    RoundRobin { quantum: u64, include_sysmon: bool },
}

impl SchedulerPolicy {
    pub fn round_robin(quantum: u64) -> Self {
        SchedulerPolicy::RoundRobin {
            quantum: quantum.max(1),
            include_sysmon: false,
        }
    }
}

/// Thread to run next. `records` lists the threads able to run; round-robin
/// only switches at a call boundary once the quantum is spent, and then
/// moves to the next eligible thread in tid order.
pub fn next_thread(
    policy: SchedulerPolicy,
    current: u64,
    records: &[ThreadRecord],
    instructions_since_switch: u64,
    at_call_boundary: bool,
) -> u64 {
    match policy {
        SchedulerPolicy::MainOnly => main_thread(records).tid,
        SchedulerPolicy::RoundRobin {
            quantum,
            include_sysmon,
        } => {
            if !at_call_boundary || instructions_since_switch < quantum {
                return current;
            }
            let mut tids: Vec<u64> = records
                .iter()
                .filter(|r| include_sysmon || r.class != ThreadClass::Sysmon)
                .map(|r| r.tid)
                .collect();
            tids.sort_unstable();
            tids.iter()
                .copied()
                .find(|&t| t > current)
                .or_else(|| tids.first().copied())
                .unwrap_or(current)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Pc;

    const DUMP: &str = "
# three OS threads
thread 1
reg r0 0x40
reg rip 0x401000
tls 0x7f0000
desc 0x2000
bt memoryGasCost main.main runtime.main
thread 2
bt runtime.sysmon runtime.mstart
thread 3
bt runtime.futexsleep runtime.notesleep
";

    #[test]
    fn three_thread_dump() {
        let recs = parse_thread_dump(DUMP).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].class, ThreadClass::Main);
        assert_eq!(recs[1].class, ThreadClass::Sysmon);
        assert_eq!(recs[2].class, ThreadClass::Waiting);
        assert_eq!(recs[0].descriptor_addr, Some(0x2000));
        assert_eq!(recs[0].leaf(), Some("memoryGasCost"));
        let writes = recs[0].register_writes();
        assert!(writes.contains(&(Varnode::reg(0, 8), 0x40)));
        assert!(writes.contains(&(Varnode::reg(DESCRIPTOR_REG, 8), 0x2000)));
    }

    #[test]
    fn missing_and_duplicate_main() {
        let e = parse_thread_dump("thread 1\nbt runtime.sysmon\n").unwrap_err();
        assert_eq!(e, DumpError::MissingMainThread);
        let e = parse_thread_dump("thread 1\nbt main.main\nthread 2\nbt x main.main\n").unwrap_err();
        assert!(matches!(e, DumpError::Classification(_)));
        let one = parse_thread_dump("thread 7\nbt main.main\n").unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].class, ThreadClass::Main);
    }

    #[test]
    fn format_errors() {
        assert!(matches!(
            parse_thread_dump("reg r0 0x1\n"),
            Err(DumpError::Format { line: 1, .. })
        ));
        assert!(matches!(
            parse_thread_dump("thread 1\nreg r0 zz\n"),
            Err(DumpError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn classification_is_pure() {
        let mut a = parse_thread_dump(DUMP).unwrap();
        let before = a.clone();
        classify(&mut a).unwrap();
        assert_eq!(a, before);
    }

    #[test]
    fn neutralization() {
        let mut pool = ExprPool::new();
        let mut s = MachineState::new(Pc {
            function: "main".into(),
            block: 0,
            index: 0,
        });
        let sentinel = ConcolicValue::constant(&mut pool, 0xffff_ffff, 4);
        s.write_bytes(&mut pool, Space::Ram, 0x2000, &sentinel).unwrap();
        let recs = parse_thread_dump(DUMP).unwrap();
        let read = |s: &MachineState, pool: &mut ExprPool| s.read_bytes(pool, Space::Ram, 0x2000, 4).concrete;
        assert_eq!(read(&s, &mut pool), 0xffff_ffff);
        neutralize_preemption(&mut s, &mut pool, &recs[0]);
        assert_eq!(read(&s, &mut pool), 0);
        let h = s.state_hash(&pool);
        neutralize_preemption(&mut s, &mut pool, &recs[0]);
        assert_eq!(s.state_hash(&pool), h);
    }

    #[test]
    fn scheduling() {
        let recs = parse_thread_dump(DUMP).unwrap();
        for (since, call) in [(0, false), (100, true), (3, true)] {
            assert_eq!(next_thread(SchedulerPolicy::MainOnly, 3, &recs, since, call), 1);
        }
        let rr = SchedulerPolicy::round_robin(10);
        assert_eq!(next_thread(rr, 1, &recs, 12, false), 1);
        assert_eq!(next_thread(rr, 1, &recs, 9, true), 1);
        // sysmon (tid 2) is skipped
        assert_eq!(next_thread(rr, 1, &recs, 12, true), 3);
        assert_eq!(next_thread(rr, 3, &recs, 12, true), 1);
        let with_sysmon = SchedulerPolicy::RoundRobin {
            quantum: 10,
            include_sysmon: true,
        };
        assert_eq!(next_thread(with_sysmon, 1, &recs, 12, true), 2);
    }
}
