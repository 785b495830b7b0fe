#![allow(dead_code)]

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use pcx::detect::{run_all, DetectCtx, Finding};
use pcx::exec::{ExecConfig, Mode};
use pcx::ir::{Instruction, Location, Opcode, Varnode};
use pcx::solver::{Model, Solver, SolverConfig};
use pcx::state::{ConcolicValue, MachineState, Pc};
use pcx::sym::{ExprPool, PathCondition};
use pcx::threads::{parse_thread_dump, ThreadRecord};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn single_thread_dump() -> Vec<ThreadRecord> {
    parse_thread_dump("thread 1\ndesc 0x2000\nbt f main.main\n").unwrap()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GenOpts {
    /// RAM and stack traffic plus a helper call.
    pub memory: bool,
    /// Symbolic pointers into the first pages of RAM.
    pub pointers: bool,
}

pub struct Generated {
    pub source: String,
    pub config: ExecConfig,
}

const VALUE_OPS: [&str; 7] = ["INT_ADD", "INT_SUB", "INT_MULT", "INT_MULT", "INT_AND", "INT_XOR", "INT_OR"];

fn hex(v: u64, size: u8) -> String {
    format!("{v:#x}:{size}")
}

/// A guard chain over `f`: each block computes, then may exit early to its
/// own exit block. Every block is therefore reached along exactly one path,
/// which keeps per-site verdicts comparable with exhaustive ground truth.
/// Symbolic inputs total 16 bits.
pub fn random_program(rng: &mut ChaCha8Rng, opts: GenOpts) -> Generated {
    let size: u8 = *[1u8, 2].choose(rng).unwrap();
    let params: Vec<&str> = if size == 1 { vec!["a", "b"] } else { vec!["a"] };
    let max = if size == 1 { 0xffu64 } else { 0xffff };
    let regs = [2u64, 3, 4, 5, 6];
    let mut src = String::new();
    let sig: Vec<String> = params.iter().map(|p| format!("{p}:{size}")).collect();
    let _ = writeln!(src, "entry f");
    let _ = writeln!(src, "func f({}) frame 48 {{", sig.join(", "));
    let n_blocks = rng.gen_range(2..=5);
    let mut exits = Vec::new();
    let operand = |rng: &mut ChaCha8Rng| -> String {
        match rng.gen_range(0..6) {
            0 => hex(rng.gen_range(0..=max), size),
            1 => hex(rng.gen_range(1..=16), size),
            _ => format!("r{}:{size}", regs.choose(rng).unwrap()),
        }
    };
    for b in 0..n_blocks {
        let _ = writeln!(src, "  block b{b}:");
        if b == 0 {
            for (i, r) in regs.iter().enumerate() {
                let from = if i < params.len() {
                    format!("r{i}:{size}")
                } else if i == params.len() {
                    format!("r0:{size}")
                } else {
                    hex(rng.gen_range(0..=max), size)
                };
                let _ = writeln!(src, "    r{r}:{size} = COPY {from}");
            }
        }
        for _ in 0..rng.gen_range(1..=4) {
            let dst = regs.choose(rng).unwrap();
            let op = VALUE_OPS.choose(rng).unwrap();
            let lhs = format!("r{}:{size}", regs.choose(rng).unwrap());
            let rhs = operand(rng);
            let _ = writeln!(src, "    r{dst}:{size} = {op} {lhs}, {rhs}");
        }
        if opts.memory {
            emit_memory(rng, &mut src, size, &regs);
        }
        if opts.pointers && rng.gen_bool(0.5) {
            let r = regs.choose(rng).unwrap();
            let _ = writeln!(src, "    r7:8 = INT_ZEXT r{r}:{size}");
            let _ = writeln!(src, "    r7:8 = INT_LEFT r7:8, 0x{:x}:1", rng.gen_range(4..=12));
            if rng.gen_bool(0.3) {
                let _ = writeln!(src, "    r7:8 = INT_OR r7:8, 0x4000:8");
            }
            let _ = writeln!(src, "    r8:1 = LOAD ram r7:8");
        }
        if b + 1 < n_blocks {
            let r = regs.choose(rng).unwrap();
            let c = hex(rng.gen_range(0..=max), size);
            let cmp = match rng.gen_range(0..3) {
                0 => format!("INT_LESS r{r}:{size}, {c}"),
                1 => format!("INT_LESS {c}, r{r}:{size}"),
                _ => format!("INT_EQUAL r{r}:{size}, {c}"),
            };
            let _ = writeln!(src, "    u{b}:1 = {cmp}");
            let _ = writeln!(src, "    CBRANCH u{b}:1, x{b}");
            exits.push(b);
        } else {
            let _ = writeln!(src, "    r0:{size} = COPY r2:{size}");
            let _ = writeln!(src, "    RETURN");
        }
    }
    for b in exits {
        let _ = writeln!(src, "  block x{b}:");
        for _ in 0..rng.gen_range(0..=2) {
            let dst = regs.choose(rng).unwrap();
            let op = VALUE_OPS.choose(rng).unwrap();
            let lhs = format!("r{}:{size}", regs.choose(rng).unwrap());
            let rhs = operand(rng);
            let _ = writeln!(src, "    r{dst}:{size} = {op} {lhs}, {rhs}");
        }
        if opts.memory && rng.gen_bool(0.5) {
            emit_memory(rng, &mut src, size, &regs);
        }
        let _ = writeln!(src, "    RETURN");
    }
    let _ = writeln!(src, "}}");
    if opts.memory {
        let _ = writeln!(src, "func g {{");
        let _ = writeln!(src, "  block e:");
        let _ = writeln!(src, "    [stk+0]:{size} = COPY r2:{size}");
        let _ = writeln!(src, "    r3:{size} = INT_ADD r3:{size}, [stk+0]:{size}");
        let _ = writeln!(src, "    STORE ram 0x4100:8, r3:{size}");
        let _ = writeln!(src, "    RETURN");
        let _ = writeln!(src, "}}");
    }

    let mut config = ExecConfig {
        mode: Mode::Function { name: "f".into() },
        ..Default::default()
    };
    for p in &params {
        config.seeds.insert(p.to_string(), u128::from(rng.gen_range(0..=max)));
    }
    Generated { source: src, config }
}

fn emit_memory(rng: &mut ChaCha8Rng, src: &mut String, size: u8, regs: &[u64]) {
    let r = regs.choose(rng).unwrap();
    let d = regs.choose(rng).unwrap();
    let off = rng.gen_range(0..4) * 8;
    match rng.gen_range(0..4) {
        0 => {
            let _ = writeln!(src, "    STORE ram 0x4000:8, r{r}:{size}");
            let _ = writeln!(src, "    r{d}:{size} = LOAD ram 0x4000:8");
        }
        1 => {
            let _ = writeln!(src, "    [stk+{off}]:{size} = COPY r{r}:{size}");
            let _ = writeln!(src, "    r{d}:{size} = INT_ADD r{d}:{size}, [stk+{off}]:{size}");
        }
        2 => {
            let _ = writeln!(src, "    u20:{size} = INT_XOR r{r}:{size}, r{d}:{size}");
            let _ = writeln!(src, "    r{d}:{size} = COPY u20:{size}");
        }
        _ => {
            let _ = writeln!(src, "    CALL g");
        }
    }
}

/// Machine state plus everything a detector needs, outside any executor.
pub struct DetectHarness {
    pub pool: ExprPool,
    pub solver: Solver,
    pub state: MachineState,
    pub path: PathCondition,
    pub inputs: Model,
}

impl DetectHarness {
    pub fn new() -> Self {
        DetectHarness {
            pool: ExprPool::new(),
            solver: Solver::new(SolverConfig::default()),
            state: MachineState::new(Pc {
                function: "f".into(),
                block: 0,
                index: 0,
            }),
            path: PathCondition::new(),
            inputs: Model::new(),
        }
    }

    /// Writes register `reg`; symbolic as input `var` when given.
    pub fn set(&mut self, reg: u64, value: u128, size: u8, var: Option<&str>) {
        let mut v = ConcolicValue::constant(&mut self.pool, value, size);
        if let Some(name) = var {
            v.symbolic = self.pool.var(name, u32::from(size) * 8).unwrap();
            self.inputs.insert(name.into(), value);
        }
        self.state.write_varnode(&mut self.pool, &Varnode::reg(reg, size), &v).unwrap();
    }

    pub fn run(&mut self, instr: &Instruction) -> Option<Finding> {
        let mut ctx = DetectCtx {
            pool: &mut self.pool,
            solver: &mut self.solver,
            path: &self.path,
            inputs: &self.inputs,
            null_page: 0x1000,
            location: Location {
                function: "f".into(),
                block: "b".into(),
                index: 0,
            },
            on_overlay: false,
            depth: 0,
            branch: None,
        };
        run_all(&mut self.state, &mut ctx, instr, false)
    }
}

pub fn mult(size: u8) -> Instruction {
    Instruction::new(
        Opcode::IntMult,
        Some(Varnode::reg(2, size)),
        vec![Varnode::reg(0, size), Varnode::reg(1, size)],
    )
}

pub fn load(ptr_reg: u64) -> Instruction {
    Instruction::new(Opcode::Load, Some(Varnode::reg(2, 8)), vec![Varnode::reg(ptr_reg, 8)])
}
