//! Panic reachability: the reverse-call-graph filter and the bounded CFG scan
//! from an untaken branch to a panic sink.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use crate::ir::{build_call_graph, Location, Opcode, Program};
use crate::solver::{Model, SatBackend, SatQuery, SatVerdict};
use crate::sym::{ExprPool, ExprRef, PathCondition};

pub const DEFAULT_SCAN_BUDGET: usize = 64;

/// Functions from which some panic sink is reachable through calls.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PanicReachSet(BTreeSet<String>);

impl PanicReachSet {
    pub fn contains(&self, f: &str) -> bool {
        self.0.contains(f)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

pub fn compute_reach(program: &Program) -> PanicReachSet {
    let reversed = build_call_graph(program).reversed();
    let mut set: BTreeSet<String> = program
        .functions
        .values()
        .filter(|f| f.is_panic_sink)
        .map(|f| f.name.clone())
        .collect();
    let mut work: Vec<String> = set.iter().cloned().collect();
    while let Some(f) = work.pop() {
        for caller in reversed.get(&f).into_iter().flatten() {
            if set.insert(caller.to_string()) {
                work.push(caller.to_string());
            }
        }
    }
    PanicReachSet(set)
}

/// A sink call found by the walk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SinkSite {
    pub sink: String,
    pub site: Location,
}

/// Breadth-first walk from `(function, block)` over at most `budget` blocks,
/// following calls one level deep, looking for a call to a panic sink.
pub fn find_sink(program: &Program, function: &str, block: usize, budget: usize) -> Option<SinkSite> {
    let mut queue = VecDeque::from([(function.to_string(), block, 0u8)]);
    let mut seen = BTreeSet::new();
    let mut visited = 0;
    while let Some((fname, b, level)) = queue.pop_front() {
        if visited >= budget {
            break;
        }
        if !seen.insert((fname.clone(), b)) {
            continue;
        }
        visited += 1;
        let func = program.function(&fname)?;
        for (i, ins) in func.blocks[b].instructions.iter().enumerate() {
            if ins.opcode != Opcode::Call {
                continue;
            }
            let callee = ins.callee().unwrap_or_default();
            if program.is_sink(callee) {
                return Some(SinkSite {
                    sink: callee.to_string(),
                    site: Location {
                        function: fname.clone(),
                        block: func.blocks[b].label.clone(),
                        index: i,
                    },
                });
            }
            if level == 0 {
                if let Some(cf) = program.function(callee) {
                    queue.push_back((cf.name.clone(), cf.entry_index(), 1));
                }
            }
        }
        for s in func.successors(b) {
            queue.push_back((fname.clone(), s, level));
        }
    }
    None
}

#[derive(Clone, Debug)]
pub enum ScanOutcome {
    /// Gating proved the region panic-free; no query issued.
    Skipped,
    /// No sink call within the budget.
    NoSink,
    /// The untaken side is not feasible (UNSAT or UNKNOWN).
    Infeasible(SatVerdict),
    Reachable { sink: SinkSite, verdict: SatVerdict },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ScanStats {
    pub scans: u64,
    pub queries: u64,
    pub skipped: u64,
}

/// Everything `scan_untaken` needs besides the start point.
pub struct ScanCtx<'a> {
    pub program: &'a Program,
    /// `Some` when gating is enabled.
    pub reach: Option<&'a PanicReachSet>,
    pub pool: &'a mut ExprPool,
    pub solver: &'a mut dyn SatBackend,
    pub hint: &'a Model,
    pub budget: usize,
    pub stats: &'a mut ScanStats,
}

/// Looks for a feasible panic sink on the untaken side. With gating, a
/// function outside the reach set is skipped outright and the solver is only
/// asked once a sink call has been found. Without gating, feasibility of
/// `path ∧ negated` is decided first and the walk follows.
pub fn scan_untaken(
    ctx: &mut ScanCtx<'_>,
    function: &str,
    block: usize,
    path: &PathCondition,
    negated: ExprRef,
) -> ScanOutcome {
    ctx.stats.scans += 1;
    let mut query = || {
        ctx.stats.queries += 1;
        let q = SatQuery::new(path.clone(), negated).with_hint(ctx.hint.clone());
        ctx.solver.check(ctx.pool, &q)
    };
    match ctx.reach {
        Some(reach) => {
            if !reach.contains(function) {
                ctx.stats.skipped += 1;
                return ScanOutcome::Skipped;
            }
            let Some(sink) = find_sink(ctx.program, function, block, ctx.budget) else {
                return ScanOutcome::NoSink;
            };
            let verdict = query();
            if verdict.is_sat() {
                ScanOutcome::Reachable { sink, verdict }
            } else {
                ScanOutcome::Infeasible(verdict)
            }
        }
        None => {
            let verdict = query();
            if !verdict.is_sat() {
                return ScanOutcome::Infeasible(verdict);
            }
            match find_sink(ctx.program, function, block, ctx.budget) {
                Some(sink) => ScanOutcome::Reachable { sink, verdict },
                None => ScanOutcome::NoSink,
            }
        }
    }
}
