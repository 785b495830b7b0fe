//! Concolic machine state and its copy-on-write overlay.
//!
//! Every space is a sparse byte map. A byte carries its concrete value and,
//! when symbolic, a reference to the expression it was sliced from. While an
//! overlay is active all writes land in the overlay's delta and reads consult
//! the delta byte by byte before falling through to the base maps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ir::{Space, Varnode};
use crate::sym::{ExprPool, ExprRef};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cell {
    pub concrete: u8,
    /// `(expression, byte index)`: this byte is bits `8k..8k+7` of the expression.
    pub symbolic: Option<(ExprRef, u8)>,
}

impl Cell {
    fn is_default(&self) -> bool {
        self.concrete == 0 && self.symbolic.is_none()
    }
}

pub type ByteMap = BTreeMap<u64, Cell>;

/// A value of `size` bytes: little-endian concrete bits plus their symbolic shadow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConcolicValue {
    pub concrete: u128,
    pub symbolic: ExprRef,
    pub size: u8,
}

impl ConcolicValue {
    pub fn constant(pool: &mut ExprPool, value: u128, size: u8) -> Self {
        let value = value & crate::sym::mask(u32::from(size) * 8);
        ConcolicValue {
            concrete: value,
            symbolic: pool.constant(value, u32::from(size) * 8),
            size,
        }
    }

    pub fn bytes(&self) -> Vec<u8> {
        (0..self.size).map(|i| (self.concrete >> (8 * i)) as u8).collect()
    }

    pub fn is_symbolic(&self, pool: &ExprPool) -> bool {
        !pool.is_const(self.symbolic)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pc {
    pub function: String,
    pub block: usize,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Extent {
    pub start: u64,
    pub end: u64,
}

impl Extent {
    pub fn contains(&self, addr: u64) -> bool {
        self.start <= addr && addr < self.end
    }

    pub fn overlaps(&self, other: &Extent) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub function: String,
    /// Where to resume in the caller; `None` for a thread's bottom frame.
    pub return_to: Option<Pc>,
    pub base: u64,
    pub size: u64,
}

impl Frame {
    pub fn extent(&self) -> Extent {
        Extent {
            start: self.base,
            end: self.base + self.size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheVerdict {
    Sat,
    Unsat,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("write to CONST varnode")]
    WriteToConst,
    #[error("size mismatch: varnode has {expected} bytes, value has {actual}")]
    SizeMismatch { expected: u8, actual: u8 },
    #[error("an overlay is already active")]
    NestedOverlay,
    #[error("no overlay is active")]
    NoOverlay,
}

/// Executor scratch saved when an overlay begins.
#[derive(Clone, Debug)]
struct Scratch {
    unique: ByteMap,
    pc: Pc,
    call_stack: Vec<Frame>,
    freed_frames: Vec<Extent>,
    null_cache: BTreeMap<ExprRef, CacheVerdict>,
}

#[derive(Clone, Debug)]
pub struct Overlay {
    delta: [ByteMap; 4],
    saved: Scratch,
}

impl Overlay {
    /// Bytes written since the overlay began, per space.
    pub fn delta(&self, space: Space) -> &ByteMap {
        &self.delta[space_index(space)]
    }

    pub fn written_bytes(&self) -> usize {
        self.delta.iter().map(BTreeMap::len).sum()
    }
}

fn space_index(space: Space) -> usize {
    match space {
        Space::Register => 0,
        Space::Unique => 1,
        Space::Ram => 2,
        Space::Stack => 3,
        Space::Const => panic!("CONST has no backing store"),
    }
}

const SPACES: [Space; 4] = [Space::Register, Space::Unique, Space::Ram, Space::Stack];

#[derive(Clone, Debug)]
pub struct MachineState {
    spaces: [ByteMap; 4],
    pub pc: Pc,
    pub call_stack: Vec<Frame>,
    pub freed_frames: Vec<Extent>,
    pub null_cache: BTreeMap<ExprRef, CacheVerdict>,
    overlay: Option<Box<Overlay>>,
}

impl MachineState {
    pub fn new(pc: Pc) -> Self {
        MachineState {
            spaces: Default::default(),
            pc,
            call_stack: Vec::new(),
            freed_frames: Vec::new(),
            null_cache: BTreeMap::new(),
            overlay: None,
        }
    }

    pub fn frame_base(&self) -> u64 {
        self.call_stack.last().map(|f| f.base).unwrap_or(0)
    }

    /// Absolute address of a varnode in its space.
    pub fn resolve(&self, v: &Varnode) -> u64 {
        match v.space {
            Space::Stack => self.frame_base().wrapping_add(v.offset),
            _ => v.offset,
        }
    }

    fn cell(&self, space: Space, addr: u64) -> Cell {
        let i = space_index(space);
        if let Some(ov) = &self.overlay {
            if let Some(c) = ov.delta[i].get(&addr) {
                return *c;
            }
        }
        self.spaces[i].get(&addr).copied().unwrap_or_default()
    }

    /// Reads `size` bytes at an absolute address.
    pub fn read_bytes(&self, pool: &mut ExprPool, space: Space, addr: u64, size: u8) -> ConcolicValue {
        let cells: Vec<Cell> = (0..u64::from(size))
            .map(|i| self.cell(space, addr.wrapping_add(i)))
            .collect();
        compose(pool, &cells)
    }

    pub fn read_varnode(&self, pool: &mut ExprPool, v: &Varnode) -> ConcolicValue {
        if v.is_const() {
            return ConcolicValue::constant(pool, u128::from(v.offset), v.size);
        }
        self.read_bytes(pool, v.space, self.resolve(v), v.size)
    }

    /// Writes at an absolute address; routed to the overlay when one is active.
    pub fn write_bytes(
        &mut self,
        pool: &mut ExprPool,
        space: Space,
        addr: u64,
        val: &ConcolicValue,
    ) -> Result<(), StateError> {
        if space == Space::Const {
            return Err(StateError::WriteToConst);
        }
        let sym = pool.fold(val.symbolic);
        let symbolic = !pool.is_const(sym);
        let i = space_index(space);
        let map = match &mut self.overlay {
            Some(ov) => &mut ov.delta[i],
            None => &mut self.spaces[i],
        };
        for k in 0..val.size {
            map.insert(
                addr.wrapping_add(u64::from(k)),
                Cell {
                    concrete: (val.concrete >> (8 * u32::from(k))) as u8,
                    symbolic: symbolic.then_some((sym, k)),
                },
            );
        }
        Ok(())
    }

    pub fn write_varnode(
        &mut self,
        pool: &mut ExprPool,
        v: &Varnode,
        val: &ConcolicValue,
    ) -> Result<(), StateError> {
        if v.is_const() {
            return Err(StateError::WriteToConst);
        }
        if v.size != val.size {
            return Err(StateError::SizeMismatch {
                expected: v.size,
                actual: val.size,
            });
        }
        let addr = self.resolve(v);
        self.write_bytes(pool, v.space, addr, val)
    }

    pub fn overlay(&self) -> Option<&Overlay> {
        self.overlay.as_deref()
    }

    pub fn in_overlay(&self) -> bool {
        self.overlay.is_some()
    }

    /// Saves scratch and starts routing writes to a fresh delta. The working
    /// null cache keeps only SAT entries.
    pub fn overlay_begin(&mut self) -> Result<(), StateError> {
        if self.overlay.is_some() {
            return Err(StateError::NestedOverlay);
        }
        let saved = Scratch {
            unique: self.spaces[space_index(Space::Unique)].clone(),
            pc: self.pc.clone(),
            call_stack: self.call_stack.clone(),
            freed_frames: self.freed_frames.clone(),
            null_cache: self.null_cache.clone(),
        };
        self.null_cache.retain(|_, v| *v == CacheVerdict::Sat);
        self.overlay = Some(Box::new(Overlay {
            delta: Default::default(),
            saved,
        }));
        Ok(())
    }

    /// Drops the delta and restores saved scratch. SAT cache entries learned
    /// inside the overlay are merged into the restored cache.
    pub fn overlay_discard(&mut self) -> Result<(), StateError> {
        let ov = self.overlay.take().ok_or(StateError::NoOverlay)?;
        let Scratch {
            unique,
            pc,
            call_stack,
            freed_frames,
            mut null_cache,
        } = ov.saved;
        for (k, v) in &self.null_cache {
            if *v == CacheVerdict::Sat {
                null_cache.entry(*k).or_insert(CacheVerdict::Sat);
            }
        }
        self.spaces[space_index(Space::Unique)] = unique;
        self.pc = pc;
        self.call_stack = call_stack;
        self.freed_frames = freed_frames;
        self.null_cache = null_cache;
        Ok(())
    }

    /// Swaps out the register file (thread switch).
    pub fn replace_registers(&mut self, regs: ByteMap) -> ByteMap {
        self.replace_space(Space::Register, regs)
    }

    /// Swaps out the base map of one space.
    pub fn replace_space(&mut self, space: Space, map: ByteMap) -> ByteMap {
        std::mem::replace(&mut self.spaces[space_index(space)], map)
    }

    /// Base map of a space, ignoring any overlay.
    pub fn base_space(&self, space: Space) -> &ByteMap {
        &self.spaces[space_index(space)]
    }

    /// Content digest over all spaces and scratch.
    pub fn state_hash(&self, pool: &ExprPool) -> [u8; 32] {
        let mut h = Sha256::new();
        let put_map = |h: &mut Sha256, tag: u8, map: &ByteMap| {
            h.update([tag]);
            for (addr, cell) in map.iter().filter(|(_, c)| !c.is_default()) {
                h.update(addr.to_le_bytes());
                h.update([cell.concrete]);
                match cell.symbolic {
                    Some((e, k)) => {
                        h.update([1, k]);
                        h.update(pool.structural_hash(e).to_le_bytes());
                    }
                    None => h.update([0]),
                }
            }
            h.update([0xff]);
        };
        for (i, map) in self.spaces.iter().enumerate() {
            put_map(&mut h, i as u8, map);
        }
        if let Some(ov) = &self.overlay {
            h.update(b"overlay");
            for (i, map) in ov.delta.iter().enumerate() {
                put_map(&mut h, 0x10 + i as u8, map);
            }
        }
        h.update(self.pc.function.as_bytes());
        h.update([0]);
        h.update((self.pc.block as u64).to_le_bytes());
        h.update((self.pc.index as u64).to_le_bytes());
        for f in &self.call_stack {
            h.update(f.function.as_bytes());
            h.update([0]);
            if let Some(r) = &f.return_to {
                h.update(r.function.as_bytes());
                h.update((r.block as u64).to_le_bytes());
                h.update((r.index as u64).to_le_bytes());
            }
            h.update(f.base.to_le_bytes());
            h.update(f.size.to_le_bytes());
        }
        h.update(b"freed");
        for e in &self.freed_frames {
            h.update(e.start.to_le_bytes());
            h.update(e.end.to_le_bytes());
        }
        h.update(b"cache");
        let mut cache: Vec<(u64, u8)> = self
            .null_cache
            .iter()
            .map(|(e, v)| (pool.structural_hash(*e), *v as u8))
            .collect();
        cache.sort_unstable();
        for (k, v) in cache {
            h.update(k.to_le_bytes());
            h.update([v]);
        }
        h.finalize().into()
    }

    /// Non-default bytes per space, one line each.
    pub fn dump(&self, pool: &ExprPool) -> String {
        let mut out = String::new();
        for space in SPACES {
            let i = space_index(space);
            let mut merged = self.spaces[i].clone();
            if let Some(ov) = &self.overlay {
                merged.extend(ov.delta[i].iter().map(|(k, v)| (*k, *v)));
            }
            let cells: Vec<_> = merged.iter().filter(|(_, c)| !c.is_default()).collect();
            if cells.is_empty() {
                continue;
            }
            let _ = writeln!(out, "[{}]", space.name());
            for (addr, cell) in cells {
                let _ = write!(out, "  {addr:#x}: {:#04x}", cell.concrete);
                if let Some((e, k)) = cell.symbolic {
                    let _ = write!(out, "  byte {k} of {}", pool.render(e));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Builds a value from little-endian cells, slicing symbolic bytes with
/// Extract and merging adjacent slices of the same expression.
fn compose(pool: &mut ExprPool, cells: &[Cell]) -> ConcolicValue {
    let size = cells.len() as u8;
    let concrete = cells
        .iter()
        .enumerate()
        .fold(0u128, |acc, (i, c)| acc | (u128::from(c.concrete) << (8 * i)));
    let width = u32::from(size) * 8;
    if cells.iter().all(|c| c.symbolic.is_none()) {
        return ConcolicValue {
            concrete,
            symbolic: pool.constant(concrete, width),
            size,
        };
    }
    if let Some((e, 0)) = cells[0].symbolic {
        let whole = pool.width(e) == width
            && cells
                .iter()
                .enumerate()
                .all(|(i, c)| c.symbolic == Some((e, i as u8)));
        if whole {
            return ConcolicValue {
                concrete,
                symbolic: e,
                size,
            };
        }
    }
    // runs from most significant byte down
    let mut pieces: Vec<ExprRef> = Vec::new();
    let mut i = cells.len();
    while i > 0 {
        let top = i - 1;
        let mut j = top;
        match cells[top].symbolic {
            Some((e, k)) => {
                while j > 0 {
                    let d = top - j + 1;
                    if usize::from(k) >= d && cells[j - 1].symbolic == Some((e, k - d as u8)) {
                        j -= 1;
                    } else {
                        break;
                    }
                }
                let lo_k = u32::from(k) - (top - j) as u32;
                pieces.push(
                    pool.extract(u32::from(k) * 8 + 7, lo_k * 8, e)
                        .expect("byte slice within expression"),
                );
            }
            None => {
                while j > 0 && cells[j - 1].symbolic.is_none() {
                    j -= 1;
                }
                let v = cells[j..=top]
                    .iter()
                    .rev()
                    .fold(0u128, |acc, c| (acc << 8) | u128::from(c.concrete));
                pieces.push(pool.constant(v, ((top - j + 1) * 8) as u32));
            }
        }
        i = j;
    }
    let mut acc = *pieces.last().expect("at least one byte");
    for &p in pieces.iter().rev().skip(1) {
        acc = pool.concat(p, acc).expect("width within bounds");
    }
    ConcolicValue {
        concrete,
        symbolic: pool.fold(acc),
        size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{evaluate, Model};
    use crate::sym::Node;

    fn state() -> MachineState {
        MachineState::new(Pc {
            function: "main".into(),
            block: 0,
            index: 0,
        })
    }

    #[test]
    fn const_and_default_reads() {
        let mut pool = ExprPool::new();
        let s = state();
        let v = s.read_varnode(&mut pool, &Varnode::constant(0x2a, 8));
        assert_eq!(v.concrete, 42);
        assert_eq!(pool.node(v.symbolic), &Node::Const { value: 42, width: 64 });
        let v = s.read_varnode(&mut pool, &Varnode::ram(0x100, 1));
        assert_eq!(v.concrete, 0);
        assert_eq!(pool.node(v.symbolic), &Node::Const { value: 0, width: 8 });
    }

    #[test]
    fn read_after_write_and_errors() {
        let mut pool = ExprPool::new();
        let mut s = state();
        let r0 = Varnode::reg(0, 8);
        let seven = ConcolicValue::constant(&mut pool, 7, 8);
        s.write_varnode(&mut pool, &r0, &seven).unwrap();
        assert_eq!(s.read_varnode(&mut pool, &r0).concrete, 7);
        assert_eq!(
            s.write_varnode(&mut pool, &Varnode::constant(1, 8), &seven),
            Err(StateError::WriteToConst)
        );
        assert!(matches!(
            s.write_varnode(&mut pool, &Varnode::reg(1, 4), &seven),
            Err(StateError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn partial_overlap_composes_bytes() {
        let mut pool = ExprPool::new();
        let mut s = state();
        let v = ConcolicValue::constant(&mut pool, 0xdead_beef, 4);
        s.write_varnode(&mut pool, &Varnode::ram(0x2002, 4), &v).unwrap();
        let r = s.read_varnode(&mut pool, &Varnode::ram(0x2000, 8));
        assert_eq!(r.concrete, 0x0000_dead_beef_0000);
    }

    #[test]
    fn symbolic_slices_evaluate_consistently() {
        let mut pool = ExprPool::new();
        let mut s = state();
        let x = pool.var("x", 32).unwrap();
        let val = ConcolicValue {
            concrete: 0x1122_3344,
            symbolic: x,
            size: 4,
        };
        s.write_varnode(&mut pool, &Varnode::ram(0x3000, 4), &val).unwrap();
        let whole = s.read_varnode(&mut pool, &Varnode::ram(0x3000, 4));
        assert_eq!(whole.symbolic, x);
        let model: Model = [("x".to_string(), 0x1122_3344u128)].into_iter().collect();
        for (addr, size) in [(0x3001, 2), (0x2ffe, 8), (0x3003, 1), (0x3000, 2)] {
            let r = s.read_varnode(&mut pool, &Varnode::ram(addr, size));
            assert_eq!(evaluate(&pool, r.symbolic, &model).unwrap(), r.concrete, "{addr:#x}/{size}");
        }
    }

    #[test]
    fn overlay_fall_through_and_exclusivity() {
        let mut pool = ExprPool::new();
        let mut s = state();
        let a = Varnode::ram(0x1000, 1);
        let v2a = ConcolicValue::constant(&mut pool, 0x2a, 1);
        s.write_varnode(&mut pool, &a, &v2a).unwrap();
        s.overlay_begin().unwrap();
        assert!(s.overlay().unwrap().delta(Space::Ram).is_empty());
        assert_eq!(s.read_varnode(&mut pool, &a).concrete, 0x2a);
        let v7 = ConcolicValue::constant(&mut pool, 0x07, 1);
        s.write_varnode(&mut pool, &a, &v7).unwrap();
        assert_eq!(s.read_varnode(&mut pool, &a).concrete, 0x07);
        assert_eq!(s.base_space(Space::Ram)[&0x1000].concrete, 0x2a);
        assert_eq!(s.overlay_begin(), Err(StateError::NestedOverlay));
        s.overlay_discard().unwrap();
        assert_eq!(s.read_varnode(&mut pool, &a).concrete, 0x2a);
    }

    #[test]
    fn null_cache_filtering_and_merge() {
        let mut pool = ExprPool::new();
        let mut s = state();
        let e1 = pool.var("p", 8).unwrap();
        let e2 = pool.var("q", 8).unwrap();
        let e3 = pool.var("r", 8).unwrap();
        s.null_cache.insert(e1, CacheVerdict::Sat);
        s.null_cache.insert(e2, CacheVerdict::Unsat);
        s.overlay_begin().unwrap();
        assert_eq!(s.null_cache.len(), 1);
        assert_eq!(s.null_cache[&e1], CacheVerdict::Sat);
        s.null_cache.insert(e3, CacheVerdict::Sat);
        s.null_cache.insert(e2, CacheVerdict::Sat);
        s.overlay_discard().unwrap();
        assert_eq!(s.null_cache[&e1], CacheVerdict::Sat);
        // base verdict wins for keys it already had
        assert_eq!(s.null_cache[&e2], CacheVerdict::Unsat);
        assert_eq!(s.null_cache[&e3], CacheVerdict::Sat);
    }

    #[test]
    fn hashing() {
        let mut pool = ExprPool::new();
        let build = |pool: &mut ExprPool, byte: u128| {
            let mut s = state();
            let v = ConcolicValue::constant(pool, byte, 1);
            s.write_varnode(pool, &Varnode::ram(0x4000, 1), &v).unwrap();
            s
        };
        let a = build(&mut pool, 5);
        let b = build(&mut pool, 5);
        let c = build(&mut pool, 6);
        assert_eq!(a.state_hash(&pool), b.state_hash(&pool));
        assert_ne!(a.state_hash(&pool), c.state_hash(&pool));
        // an explicit zero is indistinguishable from an untouched byte
        let z = build(&mut pool, 0);
        assert_eq!(z.state_hash(&pool), state().state_hash(&pool));
        assert!(a.dump(&pool).contains("0x4000: 0x05"));
    }

    #[test]
    fn noop_overlay_restores_hash() {
        let pool = ExprPool::new();
        let mut s = state();
        let before = s.state_hash(&pool);
        s.overlay_begin().unwrap();
        s.overlay_discard().unwrap();
        assert_eq!(s.state_hash(&pool), before);
    }
}
