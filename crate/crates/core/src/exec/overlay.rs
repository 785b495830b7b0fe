//! Copy-on-write exploration of the untaken side of a symbolic branch.

use std::collections::HashSet;

use serde::Serialize;

use super::{DepthUnit, Effect, Executor, Profile};
use crate::detect::Finding;
use crate::ir::Location;
use crate::solver::SatQuery;
use crate::solver::SatBackend;
use crate::state::Pc;
use crate::sym::ExprRef;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverlayPhase {
    Before,
    After,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayStop {
    /// The untaken side is not satisfiable under Π; nothing executed.
    Infeasible,
    /// Skipped by gating.
    Gated,
    Finding,
    Return,
    /// A call into a panic sink, left to the panic scan.
    SinkCall,
    Loop,
    DepthLimit,
    /// Execution faulted or left mapped code.
    Fault,
}

#[derive(Clone, Debug, Serialize)]
pub struct OverlayRecord {
    pub branch: Location,
    pub depth: u32,
    pub stop: OverlayStop,
    pub findings: usize,
}

impl OverlayRecord {
    pub(super) fn gated(branch: Location) -> Self {
        OverlayRecord {
            branch,
            depth: 0,
            stop: OverlayStop::Gated,
            findings: 0,
        }
    }
}

impl Executor<'_> {
    /// Executes the untaken side on an overlay for up to `overlay_depth`
    /// units with the detectors armed, then discards it. Findings are also
    /// recorded in the run's finding list.
    pub fn explore_untaken(&mut self, branch: Location, untaken: Pc, negated: ExprRef) -> Vec<Finding> {
        let mut record = OverlayRecord {
            branch: branch.clone(),
            depth: 0,
            stop: OverlayStop::Infeasible,
            findings: 0,
        };
        let path = self.path.with(&self.pool, negated).expect("boolean predicate");
        let feasible = {
            let truth = self.pool.bool_const(true);
            let q = SatQuery::new(path.clone(), truth).with_hint(self.inputs.clone());
            self.solver.check(&mut self.pool, &q)
        };
        if !feasible.is_sat() {
            self.stats.overlays.push(record);
            return Vec::new();
        }
        let mut witness = self.inputs.clone();
        witness.extend(feasible.model.unwrap_or_default());

        if let Some(obs) = self.observer.as_mut() {
            obs(OverlayPhase::Before, &self.state, &self.pool);
        }
        self.state.overlay_begin().expect("overlays do not nest");
        self.state.pc = untaken;

        let limit = self.config.overlay_depth;
        let mut depth = 1u32;
        let mut visited = HashSet::from([(self.state.pc.function.clone(), self.state.pc.block)]);
        let mut found = Vec::new();
        let stop = loop {
            let pc = self.state.pc.clone();
            let Some(instr) = self.fetch(&pc) else {
                break OverlayStop::Fault;
            };
            let loc = self.location(&pc);
            if let Some(mut f) = self.detect(instr, loc, &path, Some((depth, branch.clone()))) {
                if f.witness.is_none() {
                    f.witness = Some(witness.clone());
                    f.query = Some((self.path.clone(), negated));
                }
                found.push(f);
                break OverlayStop::Finding;
            }
            let (effect, _, _) = self.execute(instr);
            match effect {
                Effect::Next => self.state.pc = self.after(&pc),
                Effect::Jump(b) => {
                    self.state.pc = Pc {
                        function: pc.function.clone(),
                        block: b,
                        index: 0,
                    }
                }
                Effect::Call(callee) => {
                    if !self.enter(&callee) {
                        break OverlayStop::Fault;
                    }
                }
                Effect::Sink(_) => break OverlayStop::SinkCall,
                Effect::Return => break OverlayStop::Return,
                Effect::Fault(_) => break OverlayStop::Fault,
            }
            if self.fetch(&self.state.pc).is_none() {
                break OverlayStop::Fault;
            }
            match self.config.depth_unit {
                DepthUnit::Blocks => {
                    if self.state.pc.index == 0 {
                        let key = (self.state.pc.function.clone(), self.state.pc.block);
                        if visited.contains(&key) {
                            break OverlayStop::Loop;
                        }
                        if depth == limit {
                            break OverlayStop::DepthLimit;
                        }
                        depth += 1;
                        visited.insert(key);
                    }
                }
                DepthUnit::Instructions => {
                    if self.state.pc.index == 0 {
                        let key = (self.state.pc.function.clone(), self.state.pc.block);
                        if !visited.insert(key) {
                            break OverlayStop::Loop;
                        }
                    }
                    if depth == limit {
                        break OverlayStop::DepthLimit;
                    }
                    depth += 1;
                }
            }
        };

        if stop == OverlayStop::DepthLimit && self.config.profile != Profile::CLike {
            let frontier = self.state.pc.clone();
            let truth = self.pool.bool_const(true);
            if let Some(f) = self.panic_scan(&branch, &frontier, &path, truth, Some(limit)) {
                found.push(f);
            }
        }

        self.state.overlay_discard().expect("overlay is active");
        if let Some(obs) = self.observer.as_mut() {
            obs(OverlayPhase::After, &self.state, &self.pool);
        }
        record.depth = depth;
        record.stop = stop;
        record.findings = found.len();
        self.stats.overlays.push(record);
        for f in &found {
            self.record(f.clone());
        }
        found
    }
}
