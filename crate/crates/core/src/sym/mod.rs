//! Hash-consed bitvector expressions and path conditions.
//!
//! Every expression lives in an [`ExprPool`]; an [`ExprRef`] is an index into
//! it. Construction interns nodes, so two structurally equal expressions built
//! in the same pool always share one `ExprRef`.

mod fold;
mod path;

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::ir::Opcode;

pub use path::PathCondition;

pub const MAX_WIDTH: u32 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExprRef(u32);

impl ExprRef {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Not,
    /// Zero-extend to the given width.
    Zext(u32),
    /// Sign-extend to the given width.
    Sext(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    UDiv,
    URem,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    Eq,
    Ne,
    Ult,
    Slt,
}

impl BinOp {
    pub fn is_compare(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Ult | BinOp::Slt)
    }

    pub fn is_shift(self) -> bool {
        matches!(self, BinOp::Shl | BinOp::LShr)
    }

    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::UDiv => "udiv",
            BinOp::URem => "urem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::LShr => "lshr",
            BinOp::Eq => "eq",
            BinOp::Ne => "ne",
            BinOp::Ult => "ult",
            BinOp::Slt => "slt",
        }
    }
}

/// The expression operator mirroring an IR integer opcode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Binary(BinOp),
    Zext,
    Sext,
}

impl OpKind {
    pub fn for_opcode(op: Opcode) -> Option<OpKind> {
        use Opcode::*;
        Some(match op {
            IntAdd => OpKind::Binary(BinOp::Add),
            IntSub => OpKind::Binary(BinOp::Sub),
            IntMult => OpKind::Binary(BinOp::Mul),
            IntDiv => OpKind::Binary(BinOp::UDiv),
            IntRem => OpKind::Binary(BinOp::URem),
            IntEqual => OpKind::Binary(BinOp::Eq),
            IntNotequal => OpKind::Binary(BinOp::Ne),
            IntLess => OpKind::Binary(BinOp::Ult),
            IntSless => OpKind::Binary(BinOp::Slt),
            IntAnd => OpKind::Binary(BinOp::And),
            IntOr => OpKind::Binary(BinOp::Or),
            IntXor => OpKind::Binary(BinOp::Xor),
            IntLeft => OpKind::Binary(BinOp::Shl),
            IntRight => OpKind::Binary(BinOp::LShr),
            IntZext => OpKind::Zext,
            IntSext => OpKind::Sext,
            Copy | Load | Store | Branch | Cbranch | Call | Return => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Var { name: Arc<str>, width: u32 },
    Const { value: u128, width: u32 },
    Unary(UnOp, ExprRef),
    Binary(BinOp, ExprRef, ExprRef),
    Extract { hi: u32, lo: u32, arg: ExprRef },
    Concat(ExprRef, ExprRef),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("width error: {0}")]
pub struct WidthError(pub String);

#[derive(Clone, Debug)]
struct Entry {
    node: Node,
    width: u32,
    shash: u64,
}

#[derive(Clone, Debug, Default)]
pub struct ExprPool {
    entries: Vec<Entry>,
    index: HashMap<Node, ExprRef>,
    fold_memo: HashMap<ExprRef, ExprRef>,
}

pub fn mask(width: u32) -> u128 {
    if width >= 128 {
        u128::MAX
    } else {
        (1u128 << width) - 1
    }
}

fn mix(h: u64, v: u64) -> u64 {
    // splitmix64 finaliser over a running combination
    let mut z = h ^ v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn str_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl ExprPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn node(&self, e: ExprRef) -> &Node {
        &self.entries[e.index()].node
    }

    pub fn width(&self, e: ExprRef) -> u32 {
        self.entries[e.index()].width
    }

    /// Content hash, stable across pools and runs.
    pub fn structural_hash(&self, e: ExprRef) -> u64 {
        self.entries[e.index()].shash
    }

    pub fn as_const(&self, e: ExprRef) -> Option<u128> {
        match self.node(e) {
            Node::Const { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn is_const(&self, e: ExprRef) -> bool {
        self.as_const(e).is_some()
    }

    fn intern(&mut self, node: Node, width: u32) -> ExprRef {
        if let Some(&r) = self.index.get(&node) {
            return r;
        }
        let shash = match &node {
            Node::Var { name, width } => mix(mix(1, str_hash(name)), u64::from(*width)),
            Node::Const { value, width } => mix(
                mix(mix(2, *value as u64), (*value >> 64) as u64),
                u64::from(*width),
            ),
            Node::Unary(op, a) => {
                let tag = match op {
                    UnOp::Not => 0,
                    UnOp::Zext(w) => 0x100 | u64::from(*w),
                    UnOp::Sext(w) => 0x200 | u64::from(*w),
                };
                mix(mix(3, tag), self.structural_hash(*a))
            }
            Node::Binary(op, a, b) => mix(
                mix(mix(4, *op as u64), self.structural_hash(*a)),
                self.structural_hash(*b),
            ),
            Node::Extract { hi, lo, arg } => mix(
                mix(5, (u64::from(*hi) << 8) | u64::from(*lo)),
                self.structural_hash(*arg),
            ),
            Node::Concat(a, b) => {
                mix(mix(6, self.structural_hash(*a)), self.structural_hash(*b))
            }
        };
        let r = ExprRef(self.entries.len() as u32);
        self.entries.push(Entry {
            node: node.clone(),
            width,
            shash,
        });
        self.index.insert(node, r);
        r
    }

    fn check_width(width: u32) -> Result<(), WidthError> {
        if width == 0 || width > MAX_WIDTH {
            Err(WidthError(format!("width {width} outside 1..={MAX_WIDTH}")))
        } else {
            Ok(())
        }
    }

    pub fn var(&mut self, name: &str, width: u32) -> Result<ExprRef, WidthError> {
        Self::check_width(width)?;
        Ok(self.intern(
            Node::Var {
                name: Arc::from(name),
                width,
            },
            width,
        ))
    }

    /// Constant of `width` bits; `value` is truncated to the width.
    pub fn constant(&mut self, value: u128, width: u32) -> ExprRef {
        assert!(width > 0 && width <= MAX_WIDTH, "constant width {width}");
        let value = value & mask(width);
        self.intern(Node::Const { value, width }, width)
    }

    pub fn bool_const(&mut self, b: bool) -> ExprRef {
        self.constant(u128::from(b), 1)
    }

    pub fn unary(&mut self, op: UnOp, a: ExprRef) -> Result<ExprRef, WidthError> {
        let w = self.width(a);
        let width = match op {
            UnOp::Not => w,
            UnOp::Zext(to) | UnOp::Sext(to) => {
                Self::check_width(to)?;
                if to <= w {
                    return Err(WidthError(format!("extension from {w} to {to} bits")));
                }
                to
            }
        };
        Ok(self.intern(Node::Unary(op, a), width))
    }

    pub fn binary(&mut self, op: BinOp, a: ExprRef, b: ExprRef) -> Result<ExprRef, WidthError> {
        let (wa, wb) = (self.width(a), self.width(b));
        if !op.is_shift() && wa != wb {
            return Err(WidthError(format!(
                "{} operands of {wa} and {wb} bits",
                op.name()
            )));
        }
        let width = if op.is_compare() { 1 } else { wa };
        Ok(self.intern(Node::Binary(op, a, b), width))
    }

    pub fn extract(&mut self, hi: u32, lo: u32, arg: ExprRef) -> Result<ExprRef, WidthError> {
        let w = self.width(arg);
        if lo > hi || hi >= w {
            return Err(WidthError(format!("extract [{hi}:{lo}] of {w} bits")));
        }
        Ok(self.intern(Node::Extract { hi, lo, arg }, hi - lo + 1))
    }

    pub fn concat(&mut self, hi: ExprRef, lo: ExprRef) -> Result<ExprRef, WidthError> {
        let width = self.width(hi) + self.width(lo);
        Self::check_width(width)?;
        Ok(self.intern(Node::Concat(hi, lo), width))
    }

    /// Zero-extension to `to_bits`; identity when the width already matches.
    pub fn widen_unsigned(&mut self, e: ExprRef, to_bits: u32) -> Result<ExprRef, WidthError> {
        let w = self.width(e);
        match to_bits.cmp(&w) {
            std::cmp::Ordering::Less => Err(WidthError(format!("cannot widen {w} bits to {to_bits}"))),
            std::cmp::Ordering::Equal => Ok(e),
            std::cmp::Ordering::Greater => self.unary(UnOp::Zext(to_bits), e),
        }
    }

    /// Width-1 truth value of `e`: `e != 0`, folded.
    pub fn truthy(&mut self, e: ExprRef) -> ExprRef {
        let w = self.width(e);
        let zero = self.constant(0, w);
        let ne = self.binary(BinOp::Ne, e, zero).expect("same width");
        self.fold(ne)
    }

    pub fn not(&mut self, e: ExprRef) -> ExprRef {
        let n = self.unary(UnOp::Not, e).expect("not preserves width");
        self.fold(n)
    }

    /// The `Var` leaves of `e`.
    pub fn free_vars(&self, e: ExprRef) -> BTreeSet<ExprRef> {
        let mut out = BTreeSet::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![e];
        while let Some(x) = stack.pop() {
            if !seen.insert(x) {
                continue;
            }
            match self.node(x) {
                Node::Var { .. } => {
                    out.insert(x);
                }
                Node::Const { .. } => {}
                Node::Unary(_, a) | Node::Extract { arg: a, .. } => stack.push(*a),
                Node::Binary(_, a, b) | Node::Concat(a, b) => {
                    stack.push(*a);
                    stack.push(*b);
                }
            }
        }
        out
    }

    pub fn var_name(&self, e: ExprRef) -> Option<&str> {
        match self.node(e) {
            Node::Var { name, .. } => Some(name),
            _ => None,
        }
    }

    pub fn is_symbolic(&self, e: ExprRef) -> bool {
        !self.free_vars(e).is_empty()
    }

    /// Prefix rendering, e.g. `(mul (zext16 x) (zext16 y))`.
    pub fn render(&self, e: ExprRef) -> String {
        let mut s = String::new();
        self.render_into(e, &mut s);
        s
    }

    fn render_into(&self, e: ExprRef, s: &mut String) {
        match self.node(e) {
            Node::Var { name, .. } => s.push_str(name),
            Node::Const { value, width } => {
                let _ = write!(s, "{value:#x}:{width}");
            }
            Node::Unary(op, a) => {
                match op {
                    UnOp::Not => s.push_str("(not "),
                    UnOp::Zext(w) => {
                        let _ = write!(s, "(zext{w} ");
                    }
                    UnOp::Sext(w) => {
                        let _ = write!(s, "(sext{w} ");
                    }
                }
                self.render_into(*a, s);
                s.push(')');
            }
            Node::Binary(op, a, b) => {
                let _ = write!(s, "({} ", op.name());
                self.render_into(*a, s);
                s.push(' ');
                self.render_into(*b, s);
                s.push(')');
            }
            Node::Extract { hi, lo, arg } => {
                let _ = write!(s, "(extract {hi} {lo} ");
                self.render_into(*arg, s);
                s.push(')');
            }
            Node::Concat(a, b) => {
                s.push_str("(concat ");
                self.render_into(*a, s);
                s.push(' ');
                self.render_into(*b, s);
                s.push(')');
            }
        }
    }
}

impl fmt::Display for ExprRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

fn sign_extend(v: u128, from: u32, to: u32) -> u128 {
    if from >= 128 {
        return v;
    }
    let sign = (v >> (from - 1)) & 1 == 1;
    if sign {
        (v | !mask(from)) & mask(to)
    } else {
        v
    }
}

fn to_signed(v: u128, width: u32) -> i128 {
    if width >= 128 {
        v as i128
    } else {
        let shift = 128 - width;
        ((v << shift) as i128) >> shift
    }
}

/// Bit-exact binary operator semantics over values of `width` bits.
///
/// Division by zero follows SMT-LIB: `x / 0 = all ones`, `x % 0 = x`.
pub fn apply_binary(op: BinOp, a: u128, b: u128, width: u32) -> u128 {
    let m = mask(width);
    let r = match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::UDiv => a.checked_div(b).unwrap_or(m),
        BinOp::URem => a.checked_rem(b).unwrap_or(a),
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => {
            if b >= u128::from(width) {
                0
            } else {
                a << b
            }
        }
        BinOp::LShr => {
            if b >= u128::from(width) {
                0
            } else {
                a >> b
            }
        }
        BinOp::Eq => return u128::from(a == b),
        BinOp::Ne => return u128::from(a != b),
        BinOp::Ult => return u128::from(a < b),
        BinOp::Slt => return u128::from(to_signed(a, width) < to_signed(b, width)),
    };
    r & m
}

pub fn apply_unary(op: UnOp, a: u128, width: u32) -> u128 {
    match op {
        UnOp::Not => !a & mask(width),
        UnOp::Zext(_) => a,
        UnOp::Sext(to) => sign_extend(a, width, to),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_consing_shares_identity() {
        let mut p = ExprPool::new();
        let x = p.var("x", 8).unwrap();
        let a = p.constant(3, 8);
        let s1 = p.binary(BinOp::Add, x, a).unwrap();
        let s2 = p.binary(BinOp::Add, x, a).unwrap();
        assert_eq!(s1, s2);
        let s3 = p.binary(BinOp::Add, a, x).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn width_errors() {
        let mut p = ExprPool::new();
        let a = p.constant(2, 8);
        let b = p.constant(3, 16);
        assert!(p.binary(BinOp::Add, a, b).is_err());
        assert!(p.extract(8, 0, a).is_err());
        assert!(p.widen_unsigned(b, 8).is_err());
        // shifts may mix widths
        assert!(p.binary(BinOp::Shl, b, a).is_ok());
    }

    #[test]
    fn widen() {
        let mut p = ExprPool::new();
        let x = p.var("x", 8).unwrap();
        let w = p.widen_unsigned(x, 16).unwrap();
        assert_eq!(p.node(w), &Node::Unary(UnOp::Zext(16), x));
        assert_eq!(p.widen_unsigned(x, 8).unwrap(), x);
        let c = p.constant(0xff, 8);
        let wc = p.widen_unsigned(c, 16).unwrap();
        let f = p.fold(wc);
        assert_eq!(p.node(f), &Node::Const { value: 0x00ff, width: 16 });
    }

    #[test]
    fn free_vars_and_render() {
        let mut p = ExprPool::new();
        let x = p.var("x", 8).unwrap();
        let y = p.var("y", 8).unwrap();
        let yx = p.binary(BinOp::Mul, y, x).unwrap();
        let e = p.binary(BinOp::Add, x, yx).unwrap();
        assert_eq!(p.free_vars(e), [x, y].into_iter().collect());
        let c = p.constant(7, 8);
        assert!(p.free_vars(c).is_empty());

        let x16 = p.widen_unsigned(x, 16).unwrap();
        let y16 = p.widen_unsigned(y, 16).unwrap();
        let m = p.binary(BinOp::Mul, x16, y16).unwrap();
        assert_eq!(p.render(m), "(mul (zext16 x) (zext16 y))");
    }

    #[test]
    fn structural_hash_is_pool_independent() {
        let mut p1 = ExprPool::new();
        let mut p2 = ExprPool::new();
        let _ = p2.var("noise", 32).unwrap();
        let build = |p: &mut ExprPool| {
            let x = p.var("x", 8).unwrap();
            let c = p.constant(9, 8);
            p.binary(BinOp::Ult, c, x).unwrap()
        };
        let a = build(&mut p1);
        let b = build(&mut p2);
        assert_ne!(a, b);
        assert_eq!(p1.structural_hash(a), p2.structural_hash(b));
    }

    #[test]
    fn signed_less() {
        assert_eq!(apply_binary(BinOp::Slt, 0xff, 0x01, 8), 1);
        assert_eq!(apply_binary(BinOp::Ult, 0xff, 0x01, 8), 0);
        assert_eq!(apply_unary(UnOp::Sext(16), 0x80, 8), 0xff80);
    }
}
