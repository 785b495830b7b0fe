//! Satisfiability of a goal under a path condition, with witness extraction.
//!
//! Queries are folded, split into variable-independent clusters, and each
//! cluster is decided by exhaustive enumeration when its domain is small
//! enough. Larger clusters fall back to seeded random search, which can only
//! answer SAT or UNKNOWN.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::sym::{apply_binary, apply_unary, mask, BinOp, ExprPool, ExprRef, Node, PathCondition, UnOp};

/// Assignment of input variables by name.
pub type Model = BTreeMap<String, u128>;

#[derive(Clone, Debug)]
pub struct SatQuery {
    pub assertions: PathCondition,
    pub goal: ExprRef,
    /// A model known to satisfy `assertions` (typically the concrete inputs).
    /// Clusters it already satisfies are not enumerated.
    pub hint: Option<Model>,
}

impl SatQuery {
    pub fn new(assertions: PathCondition, goal: ExprRef) -> Self {
        SatQuery {
            assertions,
            goal,
            hint: None,
        }
    }

    pub fn with_hint(mut self, hint: Model) -> Self {
        self.hint = Some(hint);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SatStatus {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub candidates_tried: u64,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SatVerdict {
    pub status: SatStatus,
    pub model: Option<Model>,
    pub stats: SolveStats,
}

impl SatVerdict {
    pub fn is_sat(&self) -> bool {
        self.status == SatStatus::Sat
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Largest cluster domain, in total variable bits, decided exhaustively.
    pub exhaustive_bits_limit: u32,
    pub random_budget: u64,
    pub time_budget: Duration,
    pub seed: u64,
    /// When set, every query is written here in prefix form.
    pub dump_dir: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            exhaustive_bits_limit: 20,
            random_budget: 200_000,
            time_budget: Duration::from_secs(2),
            seed: 0,
            dump_dir: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("model has no value for `{0}`")]
pub struct MissingVar(pub String);

/// Bit-exact evaluation of `e` under `model`.
pub fn evaluate(pool: &ExprPool, e: ExprRef, model: &Model) -> Result<u128, MissingVar> {
    let compiled = Compiled::new(pool, &[e]);
    let values = compiled.bind(model)?;
    let mut slots = vec![0u128; compiled.ops.len()];
    compiled.run(&values, &mut slots);
    Ok(slots[compiled.roots[0]])
}

/// Anything that can decide a [`SatQuery`].
pub trait SatBackend {
    fn check(&mut self, pool: &mut ExprPool, query: &SatQuery) -> SatVerdict;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SolverStats {
    pub queries: u64,
    pub sat: u64,
    pub unsat: u64,
    pub unknown: u64,
    pub candidates: u64,
}

/// The built-in enumerating backend with query accounting.
#[derive(Clone, Debug, Default)]
pub struct Solver {
    pub config: SolverConfig,
    pub stats: SolverStats,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Self {
        Solver {
            config,
            stats: SolverStats::default(),
        }
    }

    fn dump(&self, pool: &ExprPool, query: &SatQuery) {
        let Some(dir) = &self.config.dump_dir else {
            return;
        };
        let mut text = String::new();
        for c in query.assertions.conjuncts() {
            let _ = writeln!(text, "(assert {})", pool.render(*c));
        }
        let _ = writeln!(text, "(goal {})", pool.render(query.goal));
        let path = dir.join(format!("query-{:05}.txt", self.stats.queries));
        // best effort: dumping is a debugging aid
        let _ = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(path, text));
    }
}

impl SatBackend for Solver {
    fn check(&mut self, pool: &mut ExprPool, query: &SatQuery) -> SatVerdict {
        self.stats.queries += 1;
        self.dump(pool, query);
        let v = check(pool, query, &self.config);
        match v.status {
            SatStatus::Sat => self.stats.sat += 1,
            SatStatus::Unsat => self.stats.unsat += 1,
            SatStatus::Unknown => self.stats.unknown += 1,
        }
        self.stats.candidates += v.stats.candidates_tried;
        v
    }
}

/// Decides `goal ∧ assertions`.
pub fn check(pool: &mut ExprPool, query: &SatQuery, cfg: &SolverConfig) -> SatVerdict {
    let start = Instant::now();
    let mut constraints = Vec::new();
    for &c in query.assertions.conjuncts().iter().chain([&query.goal]) {
        let f = pool.fold(c);
        match pool.as_const(f) {
            Some(0) => {
                return SatVerdict {
                    status: SatStatus::Unsat,
                    model: None,
                    stats: SolveStats {
                        candidates_tried: 0,
                        elapsed: start.elapsed(),
                    },
                }
            }
            Some(_) => {}
            None => constraints.push(f),
        }
    }

    let mut model = Model::new();
    let mut tried = 0u64;
    let mut status = SatStatus::Sat;
    for cluster in clusters(pool, &constraints) {
        let compiled = Compiled::new(pool, &cluster);
        if let Some(hint) = &query.hint {
            if let Some(assign) = compiled.hint_assignment(hint) {
                model.extend(assign);
                continue;
            }
        }
        let search = Search {
            compiled: &compiled,
            cfg,
            start,
        };
        let (outcome, n) = search.run(query.hint.as_ref());
        tried += n;
        match outcome {
            Outcome::Found(assign) => model.extend(assign),
            Outcome::Exhausted => {
                status = SatStatus::Unsat;
                break;
            }
            Outcome::GaveUp => status = SatStatus::Unknown,
        }
    }

    if status == SatStatus::Sat {
        debug_assert!(constraints
            .iter()
            .all(|&c| evaluate(pool, c, &model).map(|v| v == 1).unwrap_or(false)));
    }
    SatVerdict {
        model: (status == SatStatus::Sat).then_some(model),
        status,
        stats: SolveStats {
            candidates_tried: tried,
            elapsed: start.elapsed(),
        },
    }
}

/// Groups constraints into clusters that share no variables.
fn clusters(pool: &ExprPool, constraints: &[ExprRef]) -> Vec<Vec<ExprRef>> {
    let var_sets: Vec<BTreeSet<ExprRef>> = constraints.iter().map(|&c| pool.free_vars(c)).collect();
    let mut parent: Vec<usize> = (0..constraints.len()).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    let mut owner: HashMap<ExprRef, usize> = HashMap::new();
    for (i, vars) in var_sets.iter().enumerate() {
        for v in vars {
            if let Some(&j) = owner.get(v) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            } else {
                owner.insert(*v, i);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<ExprRef>> = BTreeMap::new();
    for (i, &c) in constraints.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(c);
    }
    groups.into_values().collect()
}

enum Outcome {
    Found(Model),
    Exhausted,
    GaveUp,
}

struct Search<'a> {
    compiled: &'a Compiled,
    cfg: &'a SolverConfig,
    start: Instant,
}

impl Search<'_> {
    fn model(&self, values: &[u128]) -> Model {
        self.compiled
            .var_names
            .iter()
            .zip(values)
            .map(|((n, _), v)| (n.clone(), *v))
            .collect()
    }

    fn run(&self, hint: Option<&Model>) -> (Outcome, u64) {
        let vars = &self.compiled.var_names;
        let total_bits: u32 = vars.iter().map(|v| v.1).sum();
        let mut slots = vec![0u128; self.compiled.ops.len()];
        let mut values: Vec<u128> = vec![0; vars.len()];
        let mut tried = 0u64;
        if total_bits <= self.cfg.exhaustive_bits_limit {
            loop {
                tried += 1;
                if self.compiled.satisfied(&values, &mut slots) {
                    return (Outcome::Found(self.model(&values)), tried);
                }
                if tried.is_multiple_of(4096) && self.start.elapsed() > self.cfg.time_budget {
                    return (Outcome::GaveUp, tried);
                }
                // odometer, first variable least significant
                let mut i = 0;
                loop {
                    if i == values.len() {
                        return (Outcome::Exhausted, tried);
                    }
                    let w = vars[i].1;
                    if values[i] == mask(w) {
                        values[i] = 0;
                        i += 1;
                    } else {
                        values[i] += 1;
                        break;
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        while tried < self.cfg.random_budget {
            for (i, (name, w)) in vars.iter().enumerate() {
                let m = mask(*w);
                values[i] = match rng.gen_range(0..8) {
                    0 => 0,
                    1 => 1,
                    2 => m,
                    3 => hint.and_then(|h| h.get(name)).copied().unwrap_or(0) & m,
                    4 => m >> 1,
                    _ => rng.gen::<u128>() & m,
                };
            }
            tried += 1;
            if self.compiled.satisfied(&values, &mut slots) {
                return (Outcome::Found(self.model(&values)), tried);
            }
            if tried.is_multiple_of(4096) && self.start.elapsed() > self.cfg.time_budget {
                break;
            }
        }
        (Outcome::GaveUp, tried)
    }
}

#[derive(Clone, Copy, Debug)]
enum COp {
    Var(usize),
    Const(u128),
    Un(UnOp, usize, u32),
    Bin(BinOp, usize, usize, u32),
    Extract(u32, u32, usize),
    Concat(usize, usize, u32),
}

/// A DAG flattened into topological order over value slots.
struct Compiled {
    ops: Vec<COp>,
    roots: Vec<usize>,
    var_names: Vec<(String, u32)>,
}

impl Compiled {
    fn new(pool: &ExprPool, roots: &[ExprRef]) -> Self {
        let mut ops = Vec::new();
        let mut slot_of: HashMap<ExprRef, usize> = HashMap::new();
        let mut var_names: Vec<(String, u32)> = Vec::new();
        let mut var_index: HashMap<String, usize> = HashMap::new();
        let mut root_slots = Vec::new();
        for &root in roots {
            let mut stack = vec![(root, false)];
            while let Some((e, expanded)) = stack.pop() {
                if slot_of.contains_key(&e) {
                    continue;
                }
                let children: Vec<ExprRef> = match pool.node(e) {
                    Node::Var { .. } | Node::Const { .. } => vec![],
                    Node::Unary(_, a) | Node::Extract { arg: a, .. } => vec![*a],
                    Node::Binary(_, a, b) | Node::Concat(a, b) => vec![*a, *b],
                };
                if !expanded && children.iter().any(|c| !slot_of.contains_key(c)) {
                    stack.push((e, true));
                    stack.extend(children.into_iter().map(|c| (c, false)));
                    continue;
                }
                let s = |x: &ExprRef| slot_of[x];
                let op = match pool.node(e) {
                    Node::Var { name, width } => {
                        let next = var_names.len();
                        let idx = *var_index.entry(name.to_string()).or_insert_with(|| {
                            var_names.push((name.to_string(), *width));
                            next
                        });
                        COp::Var(idx)
                    }
                    Node::Const { value, .. } => COp::Const(*value),
                    Node::Unary(op, a) => COp::Un(*op, s(a), pool.width(*a)),
                    Node::Binary(op, a, b) => COp::Bin(*op, s(a), s(b), pool.width(*a)),
                    Node::Extract { hi, lo, arg } => COp::Extract(*lo, hi - lo + 1, s(arg)),
                    Node::Concat(a, b) => COp::Concat(s(a), s(b), pool.width(*b)),
                };
                slot_of.insert(e, ops.len());
                ops.push(op);
            }
            root_slots.push(slot_of[&root]);
        }
        Compiled {
            ops,
            roots: root_slots,
            var_names,
        }
    }

    /// Values for the compiled variables, in compile order.
    fn bind(&self, model: &Model) -> Result<Vec<u128>, MissingVar> {
        self.var_names
            .iter()
            .map(|(n, w)| {
                model
                    .get(n)
                    .map(|v| v & mask(*w))
                    .ok_or_else(|| MissingVar(n.clone()))
            })
            .collect()
    }

    fn run(&self, vars: &[u128], slots: &mut [u128]) {
        for (i, op) in self.ops.iter().enumerate() {
            slots[i] = match *op {
                COp::Var(v) => vars[v],
                COp::Const(c) => c,
                COp::Un(op, a, w) => apply_unary(op, slots[a], w),
                COp::Bin(op, a, b, w) => apply_binary(op, slots[a], slots[b], w),
                COp::Extract(lo, width, a) => (slots[a] >> lo) & mask(width),
                COp::Concat(h, l, wl) => (slots[h] << wl) | slots[l],
            };
        }
    }

    fn satisfied(&self, values: &[u128], slots: &mut [u128]) -> bool {
        self.run(values, slots);
        self.roots.iter().all(|&r| slots[r] == 1)
    }

    /// The hint restricted to this cluster, if it satisfies every root.
    fn hint_assignment(&self, hint: &Model) -> Option<Model> {
        let values = self.bind(hint).ok()?;
        let mut slots = vec![0u128; self.ops.len()];
        self.satisfied(&values, &mut slots).then(|| {
            self.var_names
                .iter()
                .zip(values)
                .map(|((n, _), v)| (n.clone(), v))
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sym::BinOp;

    fn model(pairs: &[(&str, u128)]) -> Model {
        pairs.iter().map(|(n, v)| (n.to_string(), *v)).collect()
    }

    #[test]
    fn evaluate_basics() {
        let mut p = ExprPool::new();
        let x = p.var("x", 8).unwrap();
        let y = p.var("y", 8).unwrap();
        let x16 = p.widen_unsigned(x, 16).unwrap();
        let y16 = p.widen_unsigned(y, 16).unwrap();
        let m = p.binary(BinOp::Mul, x16, y16).unwrap();
        assert_eq!(evaluate(&p, m, &model(&[("x", 16), ("y", 16)])), Ok(256));

        let one = p.constant(1, 8);
        let inc = p.binary(BinOp::Add, x, one).unwrap();
        assert_eq!(evaluate(&p, inc, &model(&[("x", 255)])), Ok(0));

        let c = p.constant(0x0100, 16);
        let ex = p.extract(15, 8, c).unwrap();
        assert_eq!(evaluate(&p, ex, &Model::new()), Ok(1));

        assert_eq!(evaluate(&p, inc, &Model::new()), Err(MissingVar("x".into())));
    }

    /// x:4 > 9 with goal "x*x wraps at 4 bits".
    fn square_wraps(p: &mut ExprPool, bound_is_lower: bool, bound: u128) -> SatQuery {
        let x = p.var("x", 4).unwrap();
        let b = p.constant(bound, 4);
        let guard = if bound_is_lower {
            p.binary(BinOp::Ult, b, x).unwrap()
        } else {
            p.binary(BinOp::Ult, x, b).unwrap()
        };
        let x8 = p.widen_unsigned(x, 8).unwrap();
        let sq = p.binary(BinOp::Mul, x8, x8).unwrap();
        let hi = p.extract(7, 4, sq).unwrap();
        let zero = p.constant(0, 4);
        let goal = p.binary(BinOp::Ne, hi, zero).unwrap();
        let mut pc = PathCondition::new();
        pc.assert(p, guard).unwrap();
        SatQuery::new(pc, goal)
    }

    #[test]
    fn sat_with_smallest_witness() {
        // enumeration: x in 10..=15 all satisfy x > 9, and 10*10 = 100 > 15
        let mut p = ExprPool::new();
        let q = square_wraps(&mut p, true, 9);
        let v = check(&mut p, &q, &SolverConfig::default());
        assert_eq!(v.status, SatStatus::Sat);
        assert_eq!(v.model.unwrap()["x"], 10);
    }

    #[test]
    fn unsat_by_enumeration() {
        // x < 4 gives at most 3*3 = 9, which fits in 4 bits
        let mut p = ExprPool::new();
        let q = square_wraps(&mut p, false, 4);
        let v = check(&mut p, &q, &SolverConfig::default());
        assert_eq!(v.status, SatStatus::Unsat);
        assert_eq!(v.stats.candidates_tried, 16);
    }

    #[test]
    fn false_goal_needs_no_search() {
        let mut p = ExprPool::new();
        let f = p.bool_const(false);
        let v = check(&mut p, &SatQuery::new(PathCondition::new(), f), &SolverConfig::default());
        assert_eq!(v.status, SatStatus::Unsat);
        assert_eq!(v.stats.candidates_tried, 0);
    }

    #[test]
    fn wide_domain_uses_hint_and_random_search() {
        let mut p = ExprPool::new();
        let a = p.var("a", 32).unwrap();
        let b = p.var("b", 32).unwrap();
        // independent of the goal; satisfied by the hint
        let big = p.constant(1000, 32);
        let pa = p.binary(BinOp::Ult, big, a).unwrap();
        let zero = p.constant(0, 32);
        let goal = p.binary(BinOp::Eq, b, zero).unwrap();
        let mut pc = PathCondition::new();
        pc.assert(&p, pa).unwrap();
        let q = SatQuery::new(pc, goal).with_hint(model(&[("a", 5000), ("b", 7)]));
        let v = check(&mut p, &q, &SolverConfig::default());
        assert_eq!(v.status, SatStatus::Sat);
        let m = v.model.unwrap();
        assert_eq!(m["a"], 5000);
        assert_eq!(m["b"], 0);
    }

    #[test]
    fn wide_unsatisfiable_is_unknown() {
        let mut p = ExprPool::new();
        let a = p.var("a", 32).unwrap();
        let magic = p.constant(0x1234_5679, 32);
        let goal = p.binary(BinOp::Eq, a, magic).unwrap();
        let cfg = SolverConfig {
            random_budget: 1000,
            ..SolverConfig::default()
        };
        let v = check(&mut p, &SatQuery::new(PathCondition::new(), goal), &cfg);
        assert_eq!(v.status, SatStatus::Unknown);
        assert!(v.model.is_none());
    }

    #[test]
    fn solver_counts_queries() {
        let mut p = ExprPool::new();
        let t = p.bool_const(true);
        let mut s = Solver::default();
        s.check(&mut p, &SatQuery::new(PathCondition::new(), t));
        s.check(&mut p, &SatQuery::new(PathCondition::new(), t));
        assert_eq!(s.stats.queries, 2);
        assert_eq!(s.stats.sat, 2);
    }
}
