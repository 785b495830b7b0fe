use std::collections::{BTreeMap, BTreeSet};

use super::{Function, Opcode, Program};

/// Per-function control-flow graph over block indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cfg {
    pub nodes: Vec<String>,
    pub successors: Vec<Vec<usize>>,
}

impl Cfg {
    pub fn edge_count(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }
}

pub fn build_cfg(f: &Function) -> Cfg {
    Cfg {
        nodes: f.blocks.iter().map(|b| b.label.clone()).collect(),
        successors: (0..f.blocks.len()).map(|i| f.successors(i)).collect(),
    }
}

/// Function → set of direct callees.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CallGraph {
    pub edges: BTreeMap<String, BTreeSet<String>>,
}

impl CallGraph {
    pub fn callees(&self, f: &str) -> impl Iterator<Item = &String> {
        self.edges.get(f).into_iter().flatten()
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.get(from).is_some_and(|s| s.contains(to))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }

    /// Callee → callers.
    pub fn reversed(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut rev: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (from, tos) in &self.edges {
            for to in tos {
                rev.entry(to.clone()).or_default().insert(from.clone());
            }
        }
        rev
    }
}

pub fn build_call_graph(p: &Program) -> CallGraph {
    let mut edges: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for f in p.functions.values() {
        for i in f.blocks.iter().flat_map(|b| &b.instructions) {
            if i.opcode == Opcode::Call {
                if let Some(callee) = i.callee() {
                    edges
                        .entry(f.name.clone())
                        .or_default()
                        .insert(callee.to_string());
                }
            }
        }
    }
    CallGraph { edges }
}
