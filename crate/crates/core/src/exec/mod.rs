//! The concolic interpreter.

mod overlay;
mod trace;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::detect::{self, DetectCtx, Finding, FindingKind, Mechanism};
use crate::gate::{compute_reach, scan_untaken, PanicReachSet, ScanCtx, ScanOutcome, ScanStats, DEFAULT_SCAN_BUDGET};
use crate::ir::{Instruction, Location, Opcode, Program, Space, Varnode};
use crate::semantics;
use crate::solver::{evaluate, Model, Solver, SolverConfig, SolverStats};
use crate::state::{ByteMap, ConcolicValue, Frame, MachineState, Pc};
use crate::sym::{ExprPool, ExprRef, OpKind, PathCondition, UnOp};
use crate::threads::{self, DumpError, SchedulerPolicy, ThreadClass, ThreadRecord};

pub use overlay::{OverlayPhase, OverlayRecord, OverlayStop};
pub use trace::{render_trace, TraceRecord};

/// Each thread gets its own 1 MiB stack region starting here.
pub const STACK_REGION: u64 = 0x10_0000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Start at a function; its parameters become symbolic.
    Function { name: String },
    /// Start at the program entry with a symbolic input buffer in RAM.
    Binary { addr: u64, len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Explicit panic calls: panic scan and overlay.
    TinyGo,
    /// Explicit panic calls and trap-style checks: panic scan and overlay.
    Gc,
    /// No panic runtime: overlay only.
    CLike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthUnit {
    Blocks,
    Instructions,
}

#[derive(Clone, Debug)]
pub struct ExecConfig {
    pub mode: Mode,
    pub profile: Profile,
    pub scheduler: SchedulerPolicy,
    pub overlay_depth: u32,
    pub depth_unit: DepthUnit,
    pub max_steps: u64,
    pub gating: bool,
    /// With gating on, also skip overlays in functions that cannot panic.
    pub gate_overlays: bool,
    pub overlays: bool,
    pub check_add_sub: bool,
    pub null_page: u64,
    pub scan_budget: usize,
    pub neutralize_preemption: bool,
    /// Concrete seeds by parameter name (function mode).
    pub seeds: BTreeMap<String, u128>,
    /// Parameters to make symbolic; `None` means all of them.
    pub symbolic: Option<BTreeSet<String>>,
    /// Concrete seed bytes of the input buffer (binary mode).
    pub input_bytes: Vec<u8>,
    /// Initial RAM contents: `(address, value, size)`.
    pub ram: Vec<(u64, u128, u8)>,
    pub solver: SolverConfig,
    /// Check at every step that the symbolic output evaluates to the
    /// concrete one under the seed inputs, and that Π holds for them.
    pub assert_mirroring: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            mode: Mode::Function { name: "main".into() },
            profile: Profile::TinyGo,
            scheduler: SchedulerPolicy::MainOnly,
            overlay_depth: 15,
            depth_unit: DepthUnit::Blocks,
            max_steps: 100_000,
            gating: true,
            gate_overlays: false,
            overlays: true,
            check_add_sub: false,
            null_page: 0x1000,
            scan_budget: DEFAULT_SCAN_BUDGET,
            neutralize_preemption: true,
            seeds: BTreeMap::new(),
            symbolic: None,
            input_bytes: Vec::new(),
            ram: Vec::new(),
            solver: SolverConfig::default(),
            assert_mirroring: false,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Budget,
    UnmappedTarget,
    NilAccess,
    DivByZero,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Continue,
    Returned,
    Halted(HaltReason),
    Panicked(String),
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunStats {
    pub steps: u64,
    pub solver: SolverStats,
    pub gate: ScanStats,
    pub overlays: Vec<OverlayRecord>,
    pub context_switches: u64,
    /// Steps where the symbolic shadow disagreed with the concrete value,
    /// or Π was violated by the seed inputs. Only counted in assertion mode.
    pub mirroring_mismatches: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub status: StepOutcome,
    pub findings: Vec<Finding>,
    pub inputs: Model,
    pub stats: RunStats,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

/// Saved context of a thread that is not running.
#[derive(Clone, Debug)]
struct ThreadCtx {
    record: ThreadRecord,
    regs: ByteMap,
    unique: ByteMap,
    pc: Pc,
    call_stack: Vec<Frame>,
    runnable: bool,
}

/// Data effect of one instruction and what control should do next.
enum Effect {
    Next,
    Jump(usize),
    Call(String),
    Sink(String),
    Return,
    Fault(HaltReason),
}

pub type OverlayObserver = Box<dyn FnMut(OverlayPhase, &MachineState, &ExprPool)>;

pub struct Executor<'p> {
    program: &'p Program,
    pub config: ExecConfig,
    pool: ExprPool,
    solver: Solver,
    state: MachineState,
    path: PathCondition,
    reach: PanicReachSet,
    inputs: Model,
    threads: Vec<ThreadCtx>,
    current: usize,
    since_switch: u64,
    findings: Vec<Finding>,
    seen: HashSet<(FindingKind, Location, bool)>,
    trace: Vec<TraceRecord>,
    stats: RunStats,
    outcome: Option<StepOutcome>,
    observer: Option<OverlayObserver>,
}

impl<'p> Executor<'p> {
    /// Restores thread state from the dump, neutralises preemption and
    /// symbolises the inputs.
    pub fn new(program: &'p Program, config: ExecConfig, dump: &[ThreadRecord]) -> Result<Self, ExecError> {
        if config.overlay_depth == 0 || config.max_steps == 0 {
            return Err(ExecError::Config("overlay_depth and max_steps must be at least 1".into()));
        }
        let mut records = dump.to_vec();
        threads::classify(&mut records)?;
        records.sort_by_key(|r| r.tid);
        let start = match &config.mode {
            Mode::Function { name } => name.clone(),
            Mode::Binary { .. } => program.entry_function.clone(),
        };
        let start_fn = program
            .function(&start)
            .ok_or_else(|| ExecError::UnknownFunction(start.clone()))?;

        let mut pool = ExprPool::new();
        let entry_pc = |name: &str| Pc {
            function: name.to_string(),
            block: program.function(name).map_or(0, |f| f.entry_index()),
            index: 0,
        };
        let mut state = MachineState::new(entry_pc(&start));
        for &(addr, value, size) in &config.ram {
            let v = ConcolicValue::constant(&mut pool, value, size);
            state
                .write_bytes(&mut pool, Space::Ram, addr, &v)
                .map_err(|e| ExecError::Config(e.to_string()))?;
        }
        if config.neutralize_preemption {
            for r in &records {
                threads::neutralize_preemption(&mut state, &mut pool, r);
            }
        }

        let mut inputs = Model::new();
        if let Mode::Binary { addr, len } = config.mode {
            for i in 0..len {
                let seed = config.input_bytes.get(i).copied().unwrap_or(0);
                let name = format!("in{i}");
                let v = ConcolicValue {
                    concrete: u128::from(seed),
                    symbolic: pool.var(&name, 8).expect("8-bit var"),
                    size: 1,
                };
                inputs.insert(name, u128::from(seed));
                state
                    .write_bytes(&mut pool, Space::Ram, addr + i as u64, &v)
                    .expect("RAM is writable");
            }
        }

        let mut ctxs = Vec::new();
        let mut current = 0;
        for (i, rec) in records.iter().enumerate() {
            let base = STACK_REGION * (i as u64 + 1);
            let is_main = rec.class == ThreadClass::Main;
            let func = if is_main {
                Some(start_fn)
            } else {
                rec.leaf().and_then(|l| program.function(l)).filter(|f| !f.is_panic_sink)
            };
            let Some(func) = func else {
                ctxs.push(ThreadCtx {
                    record: rec.clone(),
                    regs: ByteMap::new(),
                    unique: ByteMap::new(),
                    pc: entry_pc(&start),
                    call_stack: Vec::new(),
                    runnable: false,
                });
                continue;
            };
            state.replace_registers(ByteMap::new());
            for (vn, value) in rec.register_writes() {
                let v = ConcolicValue::constant(&mut pool, u128::from(value), vn.size);
                state.write_varnode(&mut pool, &vn, &v).expect("register write");
            }
            let sp = ConcolicValue::constant(&mut pool, u128::from(base), 8);
            state.write_varnode(&mut pool, &Varnode::sp(), &sp).expect("sp write");
            if is_main && matches!(config.mode, Mode::Function { .. }) {
                for (k, p) in func.params.iter().enumerate() {
                    let seed = config.seeds.get(&p.name).copied().unwrap_or(0);
                    let mut v = ConcolicValue::constant(&mut pool, seed, p.size);
                    let symbolic = config.symbolic.as_ref().is_none_or(|s| s.contains(&p.name));
                    if symbolic {
                        v.symbolic = pool
                            .var(&p.name, u32::from(p.size) * 8)
                            .map_err(|e| ExecError::Config(e.to_string()))?;
                        inputs.insert(p.name.clone(), v.concrete);
                    }
                    state
                        .write_varnode(&mut pool, &Varnode::reg(k as u64, p.size), &v)
                        .expect("parameter write");
                }
            }
            let regs = state.replace_registers(ByteMap::new());
            if is_main {
                current = i;
            }
            ctxs.push(ThreadCtx {
                record: rec.clone(),
                regs,
                unique: ByteMap::new(),
                pc: entry_pc(&func.name),
                call_stack: vec![Frame {
                    function: func.name.clone(),
                    return_to: None,
                    base,
                    size: func.frame_size,
                }],
                runnable: true,
            });
        }
        if let Some(unknown) = config.seeds.keys().find(|k| !start_fn.params.iter().any(|p| &p.name == *k)) {
            if matches!(config.mode, Mode::Function { .. }) {
                return Err(ExecError::Config(format!("seed for unknown parameter `{unknown}`")));
            }
        }

        let main = &mut ctxs[current];
        state.replace_registers(std::mem::take(&mut main.regs));
        state.pc = main.pc.clone();
        state.call_stack = std::mem::take(&mut main.call_stack);

        let solver = Solver::new(config.solver.clone());
        Ok(Executor {
            program,
            reach: compute_reach(program),
            config,
            pool,
            solver,
            state,
            path: PathCondition::new(),
            inputs,
            threads: ctxs,
            current,
            since_switch: 0,
            findings: Vec::new(),
            seen: HashSet::new(),
            trace: Vec::new(),
            stats: RunStats::default(),
            outcome: None,
            observer: None,
        })
    }

    pub fn program(&self) -> &'p Program {
        self.program
    }

    pub fn state(&self) -> &MachineState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut MachineState {
        &mut self.state
    }

    pub fn pool(&self) -> &ExprPool {
        &self.pool
    }

    pub fn pool_mut(&mut self) -> &mut ExprPool {
        &mut self.pool
    }

    pub fn path(&self) -> &PathCondition {
        &self.path
    }

    pub fn inputs(&self) -> &Model {
        &self.inputs
    }

    pub fn findings(&self) -> &[Finding] {
        &self.findings
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn solver_stats(&self) -> SolverStats {
        self.solver.stats
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn reach_set(&self) -> &PanicReachSet {
        &self.reach
    }

    pub fn current_tid(&self) -> u64 {
        self.threads[self.current].record.tid
    }

    /// Called with the machine state right before an overlay begins and
    /// right after it is discarded.
    pub fn set_overlay_observer(&mut self, observer: OverlayObserver) {
        self.observer = Some(observer);
    }

    fn location(&self, pc: &Pc) -> Location {
        let f = &self.program.functions[&pc.function];
        Location {
            function: pc.function.clone(),
            block: f.blocks[pc.block].label.clone(),
            index: pc.index,
        }
    }

    /// Position after `pc`; may point past the end of the function.
    fn after(&self, pc: &Pc) -> Pc {
        let f = &self.program.functions[&pc.function];
        if pc.index + 1 < f.blocks[pc.block].instructions.len() {
            Pc {
                index: pc.index + 1,
                ..pc.clone()
            }
        } else {
            Pc {
                function: pc.function.clone(),
                block: pc.block + 1,
                index: 0,
            }
        }
    }

    fn fetch(&self, pc: &Pc) -> Option<&'p Instruction> {
        self.program.instruction(&pc.function, pc.block, pc.index)
    }

    fn record(&mut self, f: Finding) {
        if self.seen.insert(f.key()) {
            self.findings.push(f);
        }
    }

    /// Runs the detectors for `instr` under `path`.
    fn detect(
        &mut self,
        instr: &Instruction,
        location: Location,
        path: &PathCondition,
        overlay: Option<(u32, Location)>,
    ) -> Option<Finding> {
        let (on_overlay, depth, branch) = match overlay {
            Some((d, b)) => (true, d, Some(b)),
            None => (false, 0, None),
        };
        let mut ctx = DetectCtx {
            pool: &mut self.pool,
            solver: &mut self.solver,
            path,
            inputs: &self.inputs,
            null_page: self.config.null_page,
            location,
            on_overlay,
            depth,
            branch,
        };
        detect::run_all(&mut self.state, &mut ctx, instr, self.config.check_add_sub)
    }

    /// Executes the data part of `instr` against the current state.
    fn execute(&mut self, instr: &Instruction) -> (Effect, Vec<u128>, Option<ConcolicValue>) {
        let pool = &mut self.pool;
        let ins: Vec<ConcolicValue> = instr
            .inputs
            .iter()
            .map(|v| self.state.read_varnode(pool, v))
            .collect();
        let concrete_ins = ins.iter().map(|v| v.concrete).collect();
        let mut output = None;
        let effect = match instr.opcode {
            Opcode::Copy => {
                output = Some(ins[0]);
                Effect::Next
            }
            Opcode::Load => {
                let addr = ins[0].concrete as u64;
                if addr < self.config.null_page {
                    Effect::Fault(HaltReason::NilAccess)
                } else {
                    let size = instr.output.expect("LOAD has an output").size;
                    output = Some(self.state.read_bytes(pool, instr.mem_space(), addr, size));
                    Effect::Next
                }
            }
            Opcode::Store => {
                let addr = ins[0].concrete as u64;
                if addr < self.config.null_page {
                    Effect::Fault(HaltReason::NilAccess)
                } else {
                    self.state
                        .write_bytes(pool, instr.mem_space(), addr, &ins[1])
                        .expect("STORE targets RAM or STACK");
                    Effect::Next
                }
            }
            Opcode::Branch => Effect::Jump(self.label_index(instr)),
            Opcode::Cbranch => {
                if ins[0].concrete != 0 {
                    Effect::Jump(self.label_index(instr))
                } else {
                    Effect::Next
                }
            }
            Opcode::Call => {
                let callee = instr.callee().expect("CALL names a function").to_string();
                if self.program.is_sink(&callee) {
                    Effect::Sink(callee)
                } else {
                    Effect::Call(callee)
                }
            }
            Opcode::Return => Effect::Return,
            op => {
                let out_size = instr.output.expect("arithmetic has an output").size;
                let operands: Vec<(u128, u8)> = ins.iter().map(|v| (v.concrete, v.size)).collect();
                match semantics::apply(op, &operands, out_size) {
                    None => Effect::Fault(HaltReason::DivByZero),
                    Some(concrete) => {
                        let symbolic = shadow(pool, op, &ins, out_size);
                        output = Some(ConcolicValue {
                            concrete,
                            symbolic,
                            size: out_size,
                        });
                        Effect::Next
                    }
                }
            }
        };
        if let (Some(out), Some(vn)) = (output, instr.output) {
            self.state
                .write_varnode(&mut self.pool, &vn, &out)
                .expect("validated output varnode");
        }
        (effect, concrete_ins, output)
    }

    fn label_index(&self, instr: &Instruction) -> usize {
        let f = &self.program.functions[&self.state.pc.function];
        instr.label().and_then(|l| f.block_index(l)).unwrap_or(usize::MAX)
    }

    fn write_sp(&mut self, base: u64) {
        let sp = ConcolicValue::constant(&mut self.pool, u128::from(base), 8);
        self.state
            .write_varnode(&mut self.pool, &Varnode::sp(), &sp)
            .expect("sp is a register");
    }

    /// Pushes a frame for `callee` and jumps to its entry.
    fn enter(&mut self, callee: &str) -> bool {
        let Some(f) = self.program.function(callee) else {
            return false;
        };
        let caller = self.state.call_stack.last().expect("a running thread has a frame");
        let base = caller.base + caller.size;
        let frame = Frame {
            function: callee.to_string(),
            return_to: Some(self.after(&self.state.pc)),
            base,
            size: f.frame_size,
        };
        let extent = frame.extent();
        self.state.freed_frames.retain(|e| !e.overlaps(&extent));
        self.state.call_stack.push(frame);
        self.state.pc = Pc {
            function: callee.to_string(),
            block: f.entry_index(),
            index: 0,
        };
        self.write_sp(base);
        true
    }

    /// Pops the current frame. Returns `false` when it was the thread's bottom frame.
    fn leave(&mut self) -> bool {
        let frame = self.state.call_stack.pop().expect("a running thread has a frame");
        let extent = frame.extent();
        if !self.state.freed_frames.contains(&extent) {
            self.state.freed_frames.push(extent);
        }
        match frame.return_to {
            Some(pc) => {
                self.state.pc = pc;
                let base = self.state.frame_base();
                self.write_sp(base);
                true
            }
            None => false,
        }
    }

    fn finish(&mut self, outcome: StepOutcome) -> StepOutcome {
        self.outcome = Some(outcome.clone());
        outcome
    }

    fn check_mirroring(&mut self, out: Option<ConcolicValue>) {
        if !self.config.assert_mirroring {
            return;
        }
        if let Some(v) = out {
            if evaluate(&self.pool, v.symbolic, &self.inputs).ok() != Some(v.concrete) {
                self.stats.mirroring_mismatches += 1;
            }
        }
    }

    /// Executes one main-path instruction.
    pub fn step(&mut self) -> StepOutcome {
        if let Some(done) = &self.outcome {
            return done.clone();
        }
        if self.stats.steps >= self.config.max_steps {
            return self.finish(StepOutcome::Halted(HaltReason::Budget));
        }
        let pc = self.state.pc.clone();
        let Some(instr) = self.fetch(&pc) else {
            return self.finish(StepOutcome::Halted(HaltReason::UnmappedTarget));
        };
        let loc = self.location(&pc);
        let path = self.path.clone();
        if let Some(f) = self.detect(instr, loc.clone(), &path, None) {
            self.record(f);
        }
        if instr.opcode == Opcode::Cbranch {
            self.analyze_branch(instr, &pc, &loc);
        }
        let (effect, ins, out) = self.execute(instr);
        self.trace.push(TraceRecord {
            step: self.stats.steps,
            tid: self.current_tid(),
            function: loc.function.clone(),
            block: loc.block.clone(),
            index: loc.index,
            opcode: instr.opcode,
            inputs: ins,
            output: out.map(|v| v.concrete),
            output_symbolic: out.is_some_and(|v| v.is_symbolic(&self.pool)),
        });
        self.stats.steps += 1;
        self.since_switch += 1;
        self.check_mirroring(out);

        match effect {
            Effect::Next => {
                self.state.pc = self.after(&pc);
                StepOutcome::Continue
            }
            Effect::Jump(b) => {
                self.state.pc = Pc {
                    function: pc.function,
                    block: b,
                    index: 0,
                };
                StepOutcome::Continue
            }
            Effect::Fault(reason) => self.finish(StepOutcome::Halted(reason)),
            Effect::Sink(name) => {
                let f = Finding {
                    kind: FindingKind::ConcretePanic,
                    mechanism: Mechanism::Concrete,
                    location: loc,
                    on_overlay: false,
                    overlay_depth: 0,
                    branch: None,
                    path_condition: self.path.conjuncts().iter().map(|c| self.pool.render(*c)).collect(),
                    witness: None,
                    detail: format!("call to panic sink `{name}`"),
                    query: None,
                };
                self.record(f);
                self.finish(StepOutcome::Panicked(name))
            }
            Effect::Call(callee) => {
                if !self.enter(&callee) {
                    return self.finish(StepOutcome::Halted(HaltReason::UnmappedTarget));
                }
                self.maybe_switch(false);
                StepOutcome::Continue
            }
            Effect::Return => {
                if self.leave() {
                    return StepOutcome::Continue;
                }
                if self.threads[self.current].record.class == ThreadClass::Main {
                    return self.finish(StepOutcome::Returned);
                }
                self.threads[self.current].runnable = false;
                self.maybe_switch(true);
                StepOutcome::Continue
            }
        }
    }

    /// Consults the scheduler after a CALL, or unconditionally when the
    /// current thread has finished.
    fn maybe_switch(&mut self, forced: bool) {
        let runnable: Vec<ThreadRecord> = self
            .threads
            .iter()
            .filter(|t| t.runnable)
            .map(|t| t.record.clone())
            .collect();
        let cur = self.current_tid();
        let next = match (self.config.scheduler, forced) {
            (SchedulerPolicy::MainOnly, _) => return,
            (policy, true) => threads::next_thread(policy, cur, &runnable, u64::MAX, true),
            (policy, false) => threads::next_thread(policy, cur, &runnable, self.since_switch, true),
        };
        if next == cur {
            return;
        }
        let Some(idx) = self.threads.iter().position(|t| t.record.tid == next) else {
            return;
        };
        let regs = std::mem::take(&mut self.threads[idx].regs);
        let unique = std::mem::take(&mut self.threads[idx].unique);
        let pc = self.threads[idx].pc.clone();
        let stack = std::mem::take(&mut self.threads[idx].call_stack);
        let cur_ctx = &mut self.threads[self.current];
        cur_ctx.regs = self.state.replace_registers(regs);
        cur_ctx.unique = self.state.replace_space(Space::Unique, unique);
        cur_ctx.pc = std::mem::replace(&mut self.state.pc, pc);
        cur_ctx.call_stack = std::mem::replace(&mut self.state.call_stack, stack);
        self.current = idx;
        self.since_switch = 0;
        self.stats.context_switches += 1;
    }

    /// Untaken-side analysis of a symbolic CBRANCH, then Π grows by the taken predicate.
    fn analyze_branch(&mut self, instr: &Instruction, pc: &Pc, loc: &Location) {
        let cond = self.state.read_varnode(&mut self.pool, &instr.inputs[0]);
        let phi = self.pool.truthy(cond.symbolic);
        if !self.pool.is_symbolic(phi) {
            return;
        }
        let taken = cond.concrete != 0;
        let taken_pred = if taken { phi } else { self.pool.not(phi) };
        let untaken_pred = self.pool.not(taken_pred);
        let untaken = if taken {
            self.after(pc)
        } else {
            Pc {
                function: pc.function.clone(),
                block: self.label_index(instr),
                index: 0,
            }
        };
        if self.fetch(&untaken).is_some() {
            let gated_out = self.config.gating && !self.reach.contains(&pc.function);
            if self.config.profile != Profile::CLike {
                self.panic_scan(loc, &untaken, &self.path.clone(), untaken_pred, None);
            }
            if self.config.overlays && !(gated_out && self.config.gate_overlays) {
                self.explore_untaken(loc.clone(), untaken, untaken_pred);
            } else if self.config.overlays {
                self.stats.overlays.push(OverlayRecord::gated(loc.clone()));
            }
        }
        self.path.assert(&self.pool, taken_pred).expect("truthy is boolean");
        if self.config.assert_mirroring && evaluate(&self.pool, taken_pred, &self.inputs).ok() != Some(1) {
            self.stats.mirroring_mismatches += 1;
        }
    }

    /// Bounded panic scan from `from`; a PANIC_REACHABLE finding at `site`
    /// when a sink is reachable and `path ∧ negated` is satisfiable.
    fn panic_scan(
        &mut self,
        site: &Location,
        from: &Pc,
        path: &PathCondition,
        negated: ExprRef,
        depth: Option<u32>,
    ) -> Option<Finding> {
        let mut ctx = ScanCtx {
            program: self.program,
            reach: self.config.gating.then_some(&self.reach),
            pool: &mut self.pool,
            solver: &mut self.solver,
            hint: &self.inputs,
            budget: self.config.scan_budget,
            stats: &mut self.stats.gate,
        };
        let ScanOutcome::Reachable { sink, verdict } = scan_untaken(&mut ctx, &from.function, from.block, path, negated)
        else {
            return None;
        };
        let mut witness = self.inputs.clone();
        witness.extend(verdict.model.unwrap_or_default());
        let f = Finding {
            kind: FindingKind::PanicReachable,
            mechanism: Mechanism::PanicReachAst,
            location: site.clone(),
            on_overlay: depth.is_some(),
            overlay_depth: depth.unwrap_or(0),
            branch: Some(site.clone()),
            path_condition: path.conjuncts().iter().map(|c| self.pool.render(*c)).collect(),
            witness: Some(witness),
            detail: format!("`{}` reachable at {}", sink.sink, sink.site),
            query: Some((path.clone(), negated)),
        };
        self.record(f.clone());
        Some(f)
    }

    /// Steps until the run ends.
    pub fn run(&mut self) -> StepOutcome {
        loop {
            match self.step() {
                StepOutcome::Continue => {}
                done => return done,
            }
        }
    }

    pub fn into_report(mut self) -> RunReport {
        let status = self.outcome.clone().unwrap_or(StepOutcome::Continue);
        self.stats.solver = self.solver.stats;
        RunReport {
            status,
            findings: self.findings,
            inputs: self.inputs,
            stats: self.stats,
            trace: self.trace,
        }
    }
}

/// Symbolic counterpart of an arithmetic, comparison, shift or extension opcode.
fn shadow(pool: &mut ExprPool, op: Opcode, ins: &[ConcolicValue], out_size: u8) -> ExprRef {
    let out_bits = u32::from(out_size) * 8;
    if ins.iter().all(|v| !v.is_symbolic(pool)) {
        let operands: Vec<(u128, u8)> = ins.iter().map(|v| (v.concrete, v.size)).collect();
        let value = semantics::apply(op, &operands, out_size).unwrap_or(0);
        return pool.constant(value, out_bits);
    }
    let e = match OpKind::for_opcode(op).expect("value opcode") {
        OpKind::Binary(b) => {
            let r = pool.binary(b, ins[0].symbolic, ins[1].symbolic).expect("validated widths");
            if b.is_compare() {
                pool.widen_unsigned(r, out_bits).expect("byte-sized flag")
            } else {
                r
            }
        }
        OpKind::Zext => pool.unary(UnOp::Zext(out_bits), ins[0].symbolic).expect("widening"),
        OpKind::Sext => pool.unary(UnOp::Sext(out_bits), ins[0].symbolic).expect("widening"),
    };
    pool.fold(e)
}

/// Parses, configures and runs in one go.
pub fn analyze(program: &Program, config: ExecConfig, dump: &[ThreadRecord]) -> Result<RunReport, ExecError> {
    let mut ex = Executor::new(program, config, dump)?;
    ex.run();
    Ok(ex.into_report())
}
