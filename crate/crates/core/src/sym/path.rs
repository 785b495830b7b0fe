use super::{ExprPool, ExprRef, WidthError};

/// Ordered conjunction of width-1 expressions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PathCondition {
    conjuncts: Vec<ExprRef>,
}

impl PathCondition {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `e`, which must be boolean.
    pub fn assert(&mut self, pool: &ExprPool, e: ExprRef) -> Result<(), WidthError> {
        let w = pool.width(e);
        if w != 1 {
            return Err(WidthError(format!("path conjunct has {w} bits")));
        }
        self.conjuncts.push(e);
        Ok(())
    }

    /// Functional variant of [`PathCondition::assert`].
    pub fn with(&self, pool: &ExprPool, e: ExprRef) -> Result<PathCondition, WidthError> {
        let mut next = self.clone();
        next.assert(pool, e)?;
        Ok(next)
    }

    pub fn conjuncts(&self) -> &[ExprRef] {
        &self.conjuncts
    }

    pub fn len(&self) -> usize {
        self.conjuncts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conjuncts.is_empty()
    }

    pub fn snapshot(&self) -> PathCondition {
        self.clone()
    }

    pub fn restore(&mut self, snap: PathCondition) {
        *self = snap;
    }
}

#[cfg(test)]
mod tests {
    use super::super::BinOp;
    use super::*;

    #[test]
    fn append_order_and_restore() {
        let mut pool = ExprPool::new();
        let x = pool.var("x", 8).unwrap();
        let five = pool.constant(5, 8);
        let one = pool.constant(1, 8);
        let lt = pool.binary(BinOp::Ult, x, five).unwrap();
        let gt = pool.binary(BinOp::Ult, one, x).unwrap();

        let mut pc = PathCondition::new();
        pc.assert(&pool, lt).unwrap();
        assert_eq!(pc.conjuncts(), &[lt]);
        let snap = pc.snapshot();
        pc.assert(&pool, gt).unwrap();
        assert_eq!(pc.conjuncts(), &[lt, gt]);
        pc.restore(snap);
        assert_eq!(pc.conjuncts(), &[lt]);
        assert!(pc.assert(&pool, x).is_err());
    }
}
