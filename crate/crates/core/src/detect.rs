//! Vulnerability checks run before an instruction executes, on the main path
//! and inside overlays alike.

use serde::Serialize;

use crate::ir::{Instruction, Location, Opcode, Space};
use crate::semantics::{mask_bytes, mul_wraps};
use crate::solver::{evaluate, Model, SatBackend, SatQuery, SatStatus, SatVerdict};
use crate::state::{CacheVerdict, ConcolicValue, MachineState};
use crate::sym::{BinOp, ExprPool, ExprRef, PathCondition, UnOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingKind {
    NilDerefConcrete,
    NilDerefSymbolic,
    NilWriteConcrete,
    IntOverflow,
    DivByZero,
    FreedFrameAccess,
    PanicReachable,
    ConcretePanic,
}

impl FindingKind {
    pub fn name(self) -> &'static str {
        match self {
            FindingKind::NilDerefConcrete => "NIL_DEREF_CONCRETE",
            FindingKind::NilDerefSymbolic => "NIL_DEREF_SYMBOLIC",
            FindingKind::NilWriteConcrete => "NIL_WRITE_CONCRETE",
            FindingKind::IntOverflow => "INT_OVERFLOW",
            FindingKind::DivByZero => "DIV_BY_ZERO",
            FindingKind::FreedFrameAccess => "FREED_FRAME_ACCESS",
            FindingKind::PanicReachable => "PANIC_REACHABLE",
            FindingKind::ConcretePanic => "CONCRETE_PANIC",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        use FindingKind::*;
        [
            NilDerefConcrete,
            NilDerefSymbolic,
            NilWriteConcrete,
            IntOverflow,
            DivByZero,
            FreedFrameAccess,
            PanicReachable,
            ConcretePanic,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    pub fn is_nil(self) -> bool {
        matches!(
            self,
            FindingKind::NilDerefConcrete | FindingKind::NilDerefSymbolic | FindingKind::NilWriteConcrete
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mechanism {
    AnalyzerLoad,
    AnalyzerStore,
    AnalyzerIntMult,
    AnalyzerAddSub,
    AnalyzerDiv,
    AnalyzerFrame,
    PanicReachAst,
    Concrete,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::AnalyzerLoad => "ANALYZER_LOAD",
            Mechanism::AnalyzerStore => "ANALYZER_STORE",
            Mechanism::AnalyzerIntMult => "ANALYZER_INT_MULT",
            Mechanism::AnalyzerAddSub => "ANALYZER_ADD_SUB",
            Mechanism::AnalyzerDiv => "ANALYZER_DIV",
            Mechanism::AnalyzerFrame => "ANALYZER_FRAME",
            Mechanism::PanicReachAst => "PANIC_REACH_AST",
            Mechanism::Concrete => "CONCRETE",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub mechanism: Mechanism,
    pub location: Location,
    pub on_overlay: bool,
    /// Blocks consumed by the overlay when the finding was made; 0 on the main path.
    pub overlay_depth: u32,
    /// The symbolic branch whose untaken side produced this finding.
    pub branch: Option<Location>,
    /// Rendered conjuncts of the path condition in force.
    pub path_condition: Vec<String>,
    pub witness: Option<Model>,
    pub detail: String,
    /// The query behind the witness, kept for re-verification.
    #[serde(skip)]
    pub query: Option<(PathCondition, ExprRef)>,
}

impl Finding {
    /// Re-evaluates the path condition and goal under the witness. `true`
    /// when there is nothing to verify.
    pub fn verify_witness(&self, pool: &ExprPool) -> bool {
        let (Some(model), Some((pc, goal))) = (&self.witness, &self.query) else {
            return true;
        };
        pc.conjuncts()
            .iter()
            .chain([goal])
            .all(|&c| evaluate(pool, c, model).is_ok_and(|v| v == 1))
    }

    /// Identity used for de-duplication.
    pub fn key(&self) -> (FindingKind, Location, bool) {
        (self.kind, self.location.clone(), self.on_overlay)
    }
}

/// Everything a detector needs besides the machine state.
pub struct DetectCtx<'a> {
    pub pool: &'a mut ExprPool,
    pub solver: &'a mut dyn SatBackend,
    pub path: &'a PathCondition,
    /// Concrete initial inputs; used as the solver hint and to complete witnesses.
    pub inputs: &'a Model,
    pub null_page: u64,
    pub location: Location,
    pub on_overlay: bool,
    pub depth: u32,
    pub branch: Option<Location>,
}

impl DetectCtx<'_> {
    fn finding(&self, kind: FindingKind, mechanism: Mechanism, detail: String) -> Finding {
        Finding {
            kind,
            mechanism,
            location: self.location.clone(),
            on_overlay: self.on_overlay,
            overlay_depth: self.depth,
            branch: self.branch.clone(),
            path_condition: self.path.conjuncts().iter().map(|c| self.pool.render(*c)).collect(),
            witness: None,
            detail,
            query: None,
        }
    }

    fn query(&mut self, goal: ExprRef) -> SatVerdict {
        let q = SatQuery::new(self.path.clone(), goal).with_hint(self.inputs.clone());
        self.solver.check(self.pool, &q)
    }

    fn with_witness(&self, mut f: Finding, goal: ExprRef, verdict: SatVerdict) -> Finding {
        let mut model = self.inputs.clone();
        model.extend(verdict.model.unwrap_or_default());
        f.witness = Some(model);
        f.query = Some((self.path.clone(), goal));
        f
    }

    /// Decides `goal` under the path condition; a finding on SAT only.
    fn solve(&mut self, goal: ExprRef, kind: FindingKind, mech: Mechanism, detail: String) -> Option<Finding> {
        let v = self.query(goal);
        if v.status != SatStatus::Sat {
            return None;
        }
        let f = self.finding(kind, mech, detail);
        Some(self.with_witness(f, goal, v))
    }
}

fn read(state: &MachineState, ctx: &mut DetectCtx<'_>, instr: &Instruction, i: usize) -> ConcolicValue {
    state.read_varnode(ctx.pool, &instr.inputs[i])
}

/// Nil-pointer check for LOAD and STORE.
pub fn check_mem_access(state: &mut MachineState, ctx: &mut DetectCtx<'_>, instr: &Instruction) -> Option<Finding> {
    let store = match instr.opcode {
        Opcode::Load => false,
        Opcode::Store => true,
        _ => return None,
    };
    let mech = if store {
        Mechanism::AnalyzerStore
    } else {
        Mechanism::AnalyzerLoad
    };
    let ptr = read(state, ctx, instr, 0);
    if ptr.concrete < u128::from(ctx.null_page) {
        let kind = if store {
            FindingKind::NilWriteConcrete
        } else {
            FindingKind::NilDerefConcrete
        };
        let detail = format!("{} through pointer {:#x}", instr.opcode, ptr.concrete);
        return Some(ctx.finding(kind, mech, detail));
    }
    let addr = ctx.pool.fold(ptr.symbolic);
    if !ctx.pool.is_symbolic(addr) {
        return None;
    }
    match state.null_cache.get(&addr) {
        Some(CacheVerdict::Unsat) => return None,
        Some(CacheVerdict::Sat) => {
            // cached: report without a new query
            let mut f = ctx.finding(
                FindingKind::NilDerefSymbolic,
                mech,
                format!("pointer {} may be nil (cached)", ctx.pool.render(addr)),
            );
            f.witness = None;
            return Some(f);
        }
        None => {}
    }
    let bits = ctx.pool.width(addr);
    let page = ctx.pool.constant(u128::from(ctx.null_page), bits);
    let goal = ctx.pool.binary(BinOp::Ult, addr, page).expect("same width");
    let goal = ctx.pool.fold(goal);
    let v = ctx.query(goal);
    match v.status {
        SatStatus::Sat => {
            state.null_cache.insert(addr, CacheVerdict::Sat);
            let detail = format!("pointer {} may be nil", ctx.pool.render(addr));
            let f = ctx.finding(FindingKind::NilDerefSymbolic, mech, detail);
            Some(ctx.with_witness(f, goal, v))
        }
        SatStatus::Unsat => {
            state.null_cache.insert(addr, CacheVerdict::Unsat);
            None
        }
        SatStatus::Unknown => None,
    }
}

/// Widening overflow check for INT_MULT: the product wraps iff the upper
/// half of the double-width product can be non-zero.
pub fn check_int_mult(state: &MachineState, ctx: &mut DetectCtx<'_>, instr: &Instruction) -> Option<Finding> {
    if instr.opcode != Opcode::IntMult {
        return None;
    }
    let a = read(state, ctx, instr, 0);
    let b = read(state, ctx, instr, 1);
    if mul_wraps(a.concrete, b.concrete, a.size) {
        let detail = format!(
            "{:#x} * {:#x} wraps at {} bits",
            a.concrete,
            b.concrete,
            u32::from(a.size) * 8
        );
        return Some(ctx.finding(FindingKind::IntOverflow, Mechanism::AnalyzerIntMult, detail));
    }
    if !a.is_symbolic(ctx.pool) && !b.is_symbolic(ctx.pool) {
        return None;
    }
    let w = u32::from(a.size) * 8;
    if 2 * w > crate::sym::MAX_WIDTH {
        return None;
    }
    let pool = &mut *ctx.pool;
    let wa = pool.unary(UnOp::Zext(2 * w), a.symbolic).ok()?;
    let wb = pool.unary(UnOp::Zext(2 * w), b.symbolic).ok()?;
    let prod = pool.binary(BinOp::Mul, wa, wb).ok()?;
    let upper = pool.extract(2 * w - 1, w, prod).ok()?;
    let goal = pool.truthy(upper);
    let detail = format!("upper half of {} can be non-zero", pool.render(prod));
    ctx.solve(goal, FindingKind::IntOverflow, Mechanism::AnalyzerIntMult, detail)
}

/// Carry/borrow check for INT_ADD and INT_SUB (off unless enabled).
pub fn check_add_sub(state: &MachineState, ctx: &mut DetectCtx<'_>, instr: &Instruction) -> Option<Finding> {
    let op = match instr.opcode {
        Opcode::IntAdd => BinOp::Add,
        Opcode::IntSub => BinOp::Sub,
        _ => return None,
    };
    let a = read(state, ctx, instr, 0);
    let b = read(state, ctx, instr, 1);
    let concrete = match op {
        BinOp::Add => a.concrete + b.concrete > mask_bytes(a.size),
        _ => a.concrete < b.concrete,
    };
    if concrete {
        let detail = format!("{} {:#x}, {:#x} wraps", instr.opcode, a.concrete, b.concrete);
        return Some(ctx.finding(FindingKind::IntOverflow, Mechanism::AnalyzerAddSub, detail));
    }
    if !a.is_symbolic(ctx.pool) && !b.is_symbolic(ctx.pool) {
        return None;
    }
    let w = u32::from(a.size) * 8;
    if w >= crate::sym::MAX_WIDTH {
        return None;
    }
    let pool = &mut *ctx.pool;
    let goal = match op {
        BinOp::Add => {
            let wa = pool.unary(UnOp::Zext(w + 1), a.symbolic).ok()?;
            let wb = pool.unary(UnOp::Zext(w + 1), b.symbolic).ok()?;
            let sum = pool.binary(BinOp::Add, wa, wb).ok()?;
            let carry = pool.extract(w, w, sum).ok()?;
            pool.truthy(carry)
        }
        _ => {
            let lt = pool.binary(BinOp::Ult, a.symbolic, b.symbolic).ok()?;
            pool.fold(lt)
        }
    };
    let detail = format!("{} can wrap", instr.opcode);
    ctx.solve(goal, FindingKind::IntOverflow, Mechanism::AnalyzerAddSub, detail)
}

/// Division-by-zero check for INT_DIV and INT_REM.
pub fn check_div(state: &MachineState, ctx: &mut DetectCtx<'_>, instr: &Instruction) -> Option<Finding> {
    if !matches!(instr.opcode, Opcode::IntDiv | Opcode::IntRem) {
        return None;
    }
    let d = read(state, ctx, instr, 1);
    if d.concrete == 0 {
        let detail = format!("{} by zero", instr.opcode);
        return Some(ctx.finding(FindingKind::DivByZero, Mechanism::AnalyzerDiv, detail));
    }
    if !d.is_symbolic(ctx.pool) {
        return None;
    }
    let zero = ctx.pool.constant(0, u32::from(d.size) * 8);
    let eq = ctx.pool.binary(BinOp::Eq, d.symbolic, zero).expect("same width");
    let goal = ctx.pool.fold(eq);
    let detail = format!("divisor {} can be zero", ctx.pool.render(d.symbolic));
    ctx.solve(goal, FindingKind::DivByZero, Mechanism::AnalyzerDiv, detail)
}

/// Access through a pointer into a stack frame that has been returned from.
pub fn check_frame(state: &MachineState, ctx: &mut DetectCtx<'_>, instr: &Instruction) -> Option<Finding> {
    if !matches!(instr.opcode, Opcode::Load | Opcode::Store) || instr.mem_space() != Space::Stack {
        return None;
    }
    let ptr = read(state, ctx, instr, 0);
    let addr = u64::try_from(ptr.concrete).ok()?;
    let hit = state.freed_frames.iter().find(|e| e.contains(addr))?;
    let detail = format!(
        "{} at {addr:#x} inside freed frame [{:#x}, {:#x})",
        instr.opcode, hit.start, hit.end
    );
    Some(ctx.finding(FindingKind::FreedFrameAccess, Mechanism::AnalyzerFrame, detail))
}

/// Runs every applicable check in a fixed order; first finding wins.
pub fn run_all(
    state: &mut MachineState,
    ctx: &mut DetectCtx<'_>,
    instr: &Instruction,
    add_sub: bool,
) -> Option<Finding> {
    match instr.opcode {
        Opcode::Load | Opcode::Store => {
            check_mem_access(state, ctx, instr).or_else(|| check_frame(state, ctx, instr))
        }
        Opcode::IntMult => check_int_mult(state, ctx, instr),
        Opcode::IntDiv | Opcode::IntRem => check_div(state, ctx, instr),
        Opcode::IntAdd | Opcode::IntSub if add_sub => check_add_sub(state, ctx, instr),
        _ => None,
    }
}
