//! Brute-force ground truth: run the program concretely under every
//! assignment of the symbolic inputs and record, per instruction site, which
//! runtime failures some assignment triggers.
//!
//! This interpreter is deliberately separate from the executor. It shares
//! only the integer semantics of individual opcodes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::exec::{ExecConfig, Mode, STACK_REGION};
use crate::ir::{Opcode, Program, Space, Varnode, DESCRIPTOR_REG, SP_OFFSET};
use crate::ir::Location;
use crate::semantics::{apply, mask_bytes, mul_wraps};
use crate::solver::Model;
use crate::threads::{classify, ThreadClass, ThreadRecord, SENTINEL_SIZE};

pub const MAX_DOMAIN_BITS: u32 = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Wrap,
    Nil,
    DivZero,
    Panic,
    Freed,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("input domain of {bits} bits exceeds the {MAX_DOMAIN_BITS}-bit oracle limit")]
    DomainTooLarge { bits: u32 },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("thread dump: {0}")]
    Dump(String),
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct OracleReport {
    pub assignments: u64,
    pub inputs: Vec<(String, u8)>,
    /// Sites where some assignment triggers an event.
    pub sites: BTreeMap<Location, BTreeSet<Event>>,
    /// Smallest triggering assignment per site and event.
    #[serde(skip)]
    pub witnesses: BTreeMap<(Location, Event), Model>,
    /// Sites executed by at least one assignment.
    #[serde(skip)]
    pub reached: BTreeSet<Location>,
}

impl OracleReport {
    pub fn has(&self, loc: &Location, e: Event) -> bool {
        self.sites.get(loc).is_some_and(|s| s.contains(&e))
    }

    pub fn sites_with(&self, e: Event) -> Vec<&Location> {
        self.sites.iter().filter(|(_, s)| s.contains(&e)).map(|(l, _)| l).collect()
    }
}

#[derive(Clone)]
struct Frame {
    ret: Option<(usize, usize, usize)>,
    base: u64,
    size: u64,
}

struct Machine<'p> {
    program: &'p Program,
    mem: [HashMap<u64, u8>; 4],
    frames: Vec<Frame>,
    freed: Vec<(u64, u64)>,
}

fn slot(space: Space) -> usize {
    match space {
        Space::Register => 0,
        Space::Unique => 1,
        Space::Ram => 2,
        Space::Stack => 3,
        Space::Const => unreachable!("constants are not stored"),
    }
}

impl Machine<'_> {
    fn load(&self, space: Space, addr: u64, size: u8) -> u128 {
        let m = &self.mem[slot(space)];
        (0..u64::from(size)).fold(0u128, |acc, i| {
            acc | u128::from(*m.get(&addr.wrapping_add(i)).unwrap_or(&0)) << (8 * i)
        })
    }

    fn store(&mut self, space: Space, addr: u64, size: u8, value: u128) {
        let m = &mut self.mem[slot(space)];
        for i in 0..u64::from(size) {
            m.insert(addr.wrapping_add(i), (value >> (8 * i)) as u8);
        }
    }

    fn base(&self) -> u64 {
        self.frames.last().map_or(0, |f| f.base)
    }

    fn addr(&self, v: &Varnode) -> u64 {
        if v.space == Space::Stack {
            self.base().wrapping_add(v.offset)
        } else {
            v.offset
        }
    }

    fn read(&self, v: &Varnode) -> u128 {
        if v.space == Space::Const {
            return u128::from(v.offset) & mask_bytes(v.size);
        }
        self.load(v.space, self.addr(v), v.size)
    }

    fn write(&mut self, v: &Varnode, value: u128) {
        let a = self.addr(v);
        self.store(v.space, a, v.size, value);
    }

    fn set_sp(&mut self) {
        let b = u128::from(self.base());
        self.store(Space::Register, SP_OFFSET, 8, b);
    }
}

/// Symbolic inputs of a run as `(name, bytes)`.
fn input_layout(program: &Program, cfg: &ExecConfig) -> Result<Vec<(String, u8)>, OracleError> {
    match &cfg.mode {
        Mode::Function { name } => {
            let f = program
                .function(name)
                .ok_or_else(|| OracleError::UnknownFunction(name.clone()))?;
            Ok(f.params
                .iter()
                .filter(|p| cfg.symbolic.as_ref().is_none_or(|s| s.contains(&p.name)))
                .map(|p| (p.name.clone(), p.size))
                .collect())
        }
        Mode::Binary { len, .. } => Ok((0..*len).map(|i| (format!("in{i}"), 1)).collect()),
    }
}

/// Exhaustive concrete exploration of all input assignments.
pub fn run_oracle(program: &Program, cfg: &ExecConfig, dump: &[ThreadRecord]) -> Result<OracleReport, OracleError> {
    let mut records = dump.to_vec();
    classify(&mut records).map_err(|e| OracleError::Dump(e.to_string()))?;
    records.sort_by_key(|r| r.tid);
    let main_pos = records
        .iter()
        .position(|r| r.class == ThreadClass::Main)
        .expect("classified");
    let main = &records[main_pos];
    let layout = input_layout(program, cfg)?;
    let bits: u32 = layout.iter().map(|(_, s)| u32::from(*s) * 8).sum();
    if bits > MAX_DOMAIN_BITS {
        return Err(OracleError::DomainTooLarge { bits });
    }
    let start = match &cfg.mode {
        Mode::Function { name } => name.clone(),
        Mode::Binary { .. } => program.entry_function.clone(),
    };
    let start_idx = program
        .functions
        .get_index_of(&start)
        .ok_or_else(|| OracleError::UnknownFunction(start.clone()))?;

    let mut report = OracleReport {
        inputs: layout.clone(),
        ..Default::default()
    };
    let mut m = Machine {
        program,
        mem: Default::default(),
        frames: Vec::new(),
        freed: Vec::new(),
    };
    for assignment in 0..(1u64 << bits) {
        report.assignments += 1;
        let mut model = Model::new();
        let mut rest = assignment;
        for (name, size) in &layout {
            let w = u32::from(*size) * 8;
            model.insert(name.clone(), u128::from(rest & ((1u64 << w) - 1)));
            rest >>= w;
        }
        for map in &mut m.mem {
            map.clear();
        }
        m.freed.clear();
        for &(addr, value, size) in &cfg.ram {
            m.store(Space::Ram, addr, size, value);
        }
        if cfg.neutralize_preemption {
            for r in &records {
                if let Some(d) = r.descriptor_addr {
                    m.store(Space::Ram, d, SENTINEL_SIZE, 0);
                }
            }
        }
        for (name, value) in &main.registers {
            if let Some(idx) = name.strip_prefix('r').and_then(|s| s.parse::<u64>().ok()) {
                m.store(Space::Register, idx * crate::ir::REG_SLOT, 8, u128::from(*value));
            }
        }
        if let Some(d) = main.descriptor_addr {
            m.store(Space::Register, DESCRIPTOR_REG * crate::ir::REG_SLOT, 8, u128::from(d));
        }
        let f = &program.functions[start_idx];
        m.frames = vec![Frame {
            ret: None,
            base: STACK_REGION * (main_pos as u64 + 1),
            size: f.frame_size,
        }];
        m.set_sp();
        match &cfg.mode {
            Mode::Function { .. } => {
                for (k, p) in f.params.iter().enumerate() {
                    let v = model
                        .get(&p.name)
                        .copied()
                        .unwrap_or_else(|| cfg.seeds.get(&p.name).copied().unwrap_or(0));
                    m.write(&Varnode::reg(k as u64, p.size), v);
                }
            }
            Mode::Binary { addr, len } => {
                for i in 0..*len {
                    m.store(Space::Ram, addr + i as u64, 1, model[&format!("in{i}")]);
                }
            }
        }
        run_one(&mut m, cfg, start_idx, &model, &mut report);
    }
    Ok(report)
}

fn run_one(m: &mut Machine<'_>, cfg: &ExecConfig, start: usize, model: &Model, report: &mut OracleReport) {
    let program = m.program;
    let (mut func, mut block, mut index) = (start, program.functions[start].entry_index(), 0usize);
    let note = |report: &mut OracleReport, loc: &Location, e: Event| {
        if report.sites.entry(loc.clone()).or_default().insert(e) {
            report.witnesses.insert((loc.clone(), e), model.clone());
        }
    };
    for _ in 0..cfg.max_steps {
        let f = &program.functions[func];
        let Some(ins) = f.blocks.get(block).and_then(|b| b.instructions.get(index)) else {
            return;
        };
        let loc = Location {
            function: f.name.clone(),
            block: f.blocks[block].label.clone(),
            index,
        };
        report.reached.insert(loc.clone());
        let vals: Vec<(u128, u8)> = ins.inputs.iter().map(|v| (m.read(v), v.size)).collect();
        let (mut nb, mut ni) = if index + 1 < f.blocks[block].instructions.len() {
            (block, index + 1)
        } else {
            (block + 1, 0)
        };
        let mut nf = func;
        match ins.opcode {
            Opcode::Load | Opcode::Store => {
                let addr = vals[0].0 as u64;
                if addr < cfg.null_page {
                    note(report, &loc, Event::Nil);
                    return;
                }
                let space = ins.mem_space();
                if space == Space::Stack && m.freed.iter().any(|&(s, e)| s <= addr && addr < e) {
                    note(report, &loc, Event::Freed);
                }
                if ins.opcode == Opcode::Load {
                    let out = ins.output.expect("LOAD output");
                    let v = m.load(space, addr, out.size);
                    m.write(&out, v);
                } else {
                    m.store(space, addr, vals[1].1, vals[1].0);
                }
            }
            Opcode::Branch | Opcode::Cbranch => {
                if ins.opcode == Opcode::Branch || vals[0].0 != 0 {
                    nb = f.block_index(ins.label().unwrap_or_default()).unwrap_or(usize::MAX);
                    ni = 0;
                }
            }
            Opcode::Call => {
                let callee = ins.callee().unwrap_or_default();
                if program.is_sink(callee) {
                    note(report, &loc, Event::Panic);
                    return;
                }
                let Some(ci) = program.functions.get_index_of(callee) else {
                    return;
                };
                let caller = m.frames.last().expect("frame").clone();
                let base = caller.base + caller.size;
                let size = program.functions[ci].frame_size;
                m.freed.retain(|&(s, e)| e <= base || base + size <= s);
                m.frames.push(Frame {
                    ret: Some((func, nb, ni)),
                    base,
                    size,
                });
                m.set_sp();
                nf = ci;
                nb = program.functions[ci].entry_index();
                ni = 0;
            }
            Opcode::Return => {
                let fr = m.frames.pop().expect("frame");
                if !m.freed.contains(&(fr.base, fr.base + fr.size)) {
                    m.freed.push((fr.base, fr.base + fr.size));
                }
                let Some((rf, rb, ri)) = fr.ret else {
                    return;
                };
                m.set_sp();
                (nf, nb, ni) = (rf, rb, ri);
            }
            op => {
                if op == Opcode::IntMult && mul_wraps(vals[0].0, vals[1].0, vals[0].1) {
                    note(report, &loc, Event::Wrap);
                }
                if cfg.check_add_sub {
                    let wraps = match op {
                        Opcode::IntAdd => vals[0].0 + vals[1].0 > mask_bytes(vals[0].1),
                        Opcode::IntSub => vals[0].0 < vals[1].0,
                        _ => false,
                    };
                    if wraps {
                        note(report, &loc, Event::Wrap);
                    }
                }
                let out = ins.output.expect("value opcode output");
                match apply(op, &vals, out.size) {
                    Some(v) => m.write(&out, v),
                    None => {
                        note(report, &loc, Event::DivZero);
                        return;
                    }
                }
            }
        }
        (func, block, index) = (nf, nb, ni);
    }
}
