//! Constant folding and local identities. Every rewrite re-enters the
//! simplifier on the node it builds, so results are fixpoints and `fold` is
//! idempotent.

use super::{apply_binary, apply_unary, mask, BinOp, ExprPool, ExprRef, Node, UnOp};

impl ExprPool {
    /// Semantics-preserving simplification.
    pub fn fold(&mut self, e: ExprRef) -> ExprRef {
        if let Some(&r) = self.fold_memo.get(&e) {
            return r;
        }
        let r = match self.node(e).clone() {
            Node::Var { .. } | Node::Const { .. } => e,
            Node::Unary(op, a) => {
                let a = self.fold(a);
                self.simplify_unary(op, a)
            }
            Node::Binary(op, a, b) => {
                let a = self.fold(a);
                let b = self.fold(b);
                self.simplify_binary(op, a, b)
            }
            Node::Extract { hi, lo, arg } => {
                let arg = self.fold(arg);
                self.simplify_extract(hi, lo, arg)
            }
            Node::Concat(h, l) => {
                let h = self.fold(h);
                let l = self.fold(l);
                self.simplify_concat(h, l)
            }
        };
        self.fold_memo.insert(e, r);
        self.fold_memo.insert(r, r);
        r
    }

    fn simplify_unary(&mut self, op: UnOp, a: ExprRef) -> ExprRef {
        let w = self.width(a);
        if let Some(v) = self.as_const(a) {
            let to = match op {
                UnOp::Not => w,
                UnOp::Zext(t) | UnOp::Sext(t) => t,
            };
            return self.constant(apply_unary(op, v, w), to);
        }
        match (op, self.node(a).clone()) {
            (UnOp::Not, Node::Unary(UnOp::Not, x)) => x,
            (UnOp::Not, Node::Binary(BinOp::Eq, x, y)) => self.simplify_binary(BinOp::Ne, x, y),
            (UnOp::Not, Node::Binary(BinOp::Ne, x, y)) => self.simplify_binary(BinOp::Eq, x, y),
            (UnOp::Zext(to), Node::Unary(UnOp::Zext(_), x)) => self.simplify_unary(UnOp::Zext(to), x),
            _ => self.unary(op, a).expect("operand already well-formed"),
        }
    }

    fn simplify_binary(&mut self, op: BinOp, a: ExprRef, b: ExprRef) -> ExprRef {
        let w = self.width(a);
        let ca = self.as_const(a);
        let cb = self.as_const(b);
        if let (Some(x), Some(y)) = (ca, cb) {
            let width = if op.is_compare() { 1 } else { w };
            return self.constant(apply_binary(op, x, y, w), width);
        }
        let ones = mask(w);
        let zero = || 0u128;
        match op {
            BinOp::Add | BinOp::Or | BinOp::Xor => {
                if cb == Some(0) {
                    return a;
                }
                if ca == Some(0) {
                    return b;
                }
                if a == b {
                    match op {
                        BinOp::Or => return a,
                        BinOp::Xor => return self.constant(0, w),
                        _ => {}
                    }
                }
                if op == BinOp::Or && (ca == Some(ones) || cb == Some(ones)) {
                    return self.constant(ones, w);
                }
            }
            BinOp::Sub => {
                if cb == Some(0) {
                    return a;
                }
                if a == b {
                    return self.constant(0, w);
                }
            }
            BinOp::Mul => {
                if ca == Some(0) || cb == Some(0) {
                    return self.constant(0, w);
                }
                if cb == Some(1) {
                    return a;
                }
                if ca == Some(1) {
                    return b;
                }
            }
            BinOp::And => {
                if ca == Some(0) || cb == Some(0) {
                    return self.constant(zero(), w);
                }
                if cb == Some(ones) || a == b {
                    return a;
                }
                if ca == Some(ones) {
                    return b;
                }
            }
            BinOp::Shl | BinOp::LShr => {
                if cb == Some(0) {
                    return a;
                }
            }
            BinOp::UDiv => {
                if cb == Some(1) {
                    return a;
                }
            }
            BinOp::URem => {
                if cb == Some(1) {
                    return self.constant(0, w);
                }
            }
            BinOp::Eq | BinOp::Ne => {
                if a == b {
                    return self.bool_const(op == BinOp::Eq);
                }
                // constant on the right
                if ca.is_some() {
                    return self.simplify_binary(op, b, a);
                }
                if let Some(c) = cb {
                    if w == 1 {
                        let keep = (op == BinOp::Ne) == (c == 0);
                        return if keep { a } else { self.simplify_unary(UnOp::Not, a) };
                    }
                    if let Node::Unary(UnOp::Zext(_), x) = self.node(a).clone() {
                        let wx = self.width(x);
                        if c > mask(wx) {
                            return self.bool_const(op == BinOp::Ne);
                        }
                        let cx = self.constant(c, wx);
                        return self.simplify_binary(op, x, cx);
                    }
                }
            }
            BinOp::Ult => {
                if cb == Some(0) || a == b {
                    return self.bool_const(false);
                }
            }
            BinOp::Slt => {
                if a == b {
                    return self.bool_const(false);
                }
            }
        }
        self.binary(op, a, b).expect("operands already well-formed")
    }

    fn simplify_extract(&mut self, hi: u32, lo: u32, a: ExprRef) -> ExprRef {
        let w = self.width(a);
        if lo == 0 && hi + 1 == w {
            return a;
        }
        if let Some(v) = self.as_const(a) {
            return self.constant(v >> lo, hi - lo + 1);
        }
        match self.node(a).clone() {
            Node::Extract { lo: l2, arg, .. } => self.simplify_extract(hi + l2, lo + l2, arg),
            Node::Concat(h, l) => {
                let wl = self.width(l);
                if hi < wl {
                    self.simplify_extract(hi, lo, l)
                } else if lo >= wl {
                    self.simplify_extract(hi - wl, lo - wl, h)
                } else {
                    self.extract(hi, lo, a).expect("in range")
                }
            }
            Node::Unary(UnOp::Zext(_), x) => {
                let wx = self.width(x);
                if hi < wx {
                    self.simplify_extract(hi, lo, x)
                } else if lo >= wx {
                    self.constant(0, hi - lo + 1)
                } else {
                    self.extract(hi, lo, a).expect("in range")
                }
            }
            _ => self.extract(hi, lo, a).expect("in range"),
        }
    }

    fn simplify_concat(&mut self, h: ExprRef, l: ExprRef) -> ExprRef {
        let wl = self.width(l);
        let wh = self.width(h);
        if let (Some(x), Some(y)) = (self.as_const(h), self.as_const(l)) {
            return self.constant((x << wl) | y, wh + wl);
        }
        if self.as_const(h) == Some(0) {
            return self.simplify_unary(UnOp::Zext(wh + wl), l);
        }
        if let (
            Node::Extract {
                hi: h1,
                lo: l1,
                arg: x1,
            },
            Node::Extract {
                hi: h2,
                lo: l2,
                arg: x2,
            },
        ) = (self.node(h).clone(), self.node(l).clone())
        {
            if x1 == x2 && l1 == h2 + 1 {
                return self.simplify_extract(h1, l2, x1);
            }
        }
        self.concat(h, l).expect("width checked by caller")
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn constant_subtrees() {
        let mut p = ExprPool::new();
        let a = p.constant(2, 8);
        let b = p.constant(3, 8);
        let s = p.binary(BinOp::Add, a, b).unwrap();
        let f = p.fold(s);
        assert_eq!(p.node(f), &Node::Const { value: 5, width: 8 });
    }

    #[test]
    fn identities() {
        let mut p = ExprPool::new();
        let x = p.var("x", 8).unwrap();
        let y = p.var("y", 8).unwrap();
        let zero = p.constant(0, 8);
        let one = p.constant(1, 8);
        let m0 = p.binary(BinOp::Mul, x, zero).unwrap();
        assert_eq!(p.fold(m0), zero);
        let m1 = p.binary(BinOp::Mul, x, one).unwrap();
        assert_eq!(p.fold(m1), x);
        let a0 = p.binary(BinOp::Add, x, zero).unwrap();
        assert_eq!(p.fold(a0), x);
        // (x*0)+y -> y, so x is no longer free
        let e = p.binary(BinOp::Add, m0, y).unwrap();
        let f = p.fold(e);
        assert_eq!(f, y);
        assert_eq!(p.free_vars(f), [y].into_iter().collect());
    }

    #[test]
    fn zext_of_const() {
        let mut p = ExprPool::new();
        let c = p.constant(255, 8);
        let z = p.unary(UnOp::Zext(16), c).unwrap();
        let f = p.fold(z);
        assert_eq!(p.node(f), &Node::Const { value: 255, width: 16 });
    }

    #[test]
    fn truthiness_of_boolean_byte() {
        let mut p = ExprPool::new();
        let x = p.var("x", 8).unwrap();
        let five = p.constant(5, 8);
        let lt = p.binary(BinOp::Ult, x, five).unwrap();
        let byte = p.unary(UnOp::Zext(8), lt).unwrap();
        assert_eq!(p.truthy(byte), lt);
        let neg = p.not(lt);
        assert_eq!(p.node(neg), &Node::Unary(UnOp::Not, lt));
        assert_eq!(p.not(neg), lt);
    }

    #[test]
    fn byte_slices_recombine() {
        let mut p = ExprPool::new();
        let x = p.var("x", 16).unwrap();
        let lo = p.extract(7, 0, x).unwrap();
        let hi = p.extract(15, 8, x).unwrap();
        let c = p.concat(hi, lo).unwrap();
        assert_eq!(p.fold(c), x);
        let zero = p.constant(0, 8);
        let z = p.concat(zero, lo).unwrap();
        let f = p.fold(z);
        assert_eq!(p.node(f), &Node::Unary(UnOp::Zext(16), lo));
    }
}
