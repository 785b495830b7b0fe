//! Concrete semantics of the integer opcodes.

use crate::ir::Opcode;

pub fn mask_bytes(size: u8) -> u128 {
    if size >= 16 {
        u128::MAX
    } else {
        (1u128 << (u32::from(size) * 8)) - 1
    }
}

fn signed(v: u128, size: u8) -> i128 {
    let bits = u32::from(size) * 8;
    if bits >= 128 {
        v as i128
    } else {
        ((v << (128 - bits)) as i128) >> (128 - bits)
    }
}

/// Result of an integer opcode on concrete operands `(value, size)`.
/// `None` when the divisor of INT_DIV / INT_REM is zero.
pub fn apply(op: Opcode, inputs: &[(u128, u8)], out_size: u8) -> Option<u128> {
    let out_mask = mask_bytes(out_size);
    let (a, sa) = inputs[0];
    let b = inputs.get(1).map(|x| x.0).unwrap_or(0);
    let bits = u128::from(sa) * 8;
    let v = match op {
        Opcode::Copy => a,
        Opcode::IntAdd => a.wrapping_add(b),
        Opcode::IntSub => a.wrapping_sub(b),
        Opcode::IntMult => a.wrapping_mul(b),
        Opcode::IntDiv => a.checked_div(b)?,
        Opcode::IntRem => a.checked_rem(b)?,
        Opcode::IntAnd => a & b,
        Opcode::IntOr => a | b,
        Opcode::IntXor => a ^ b,
        Opcode::IntLeft => {
            if b >= bits {
                0
            } else {
                a << b
            }
        }
        Opcode::IntRight => {
            if b >= bits {
                0
            } else {
                a >> b
            }
        }
        Opcode::IntEqual => u128::from(a == b),
        Opcode::IntNotequal => u128::from(a != b),
        Opcode::IntLess => u128::from(a < b),
        Opcode::IntSless => u128::from(signed(a, sa) < signed(b, sa)),
        Opcode::IntZext => a,
        Opcode::IntSext => signed(a, sa) as u128,
        other => panic!("{other} has no value semantics"),
    };
    Some(v & out_mask)
}

/// Whether `a * b` at `size` bytes loses bits.
pub fn mul_wraps(a: u128, b: u128, size: u8) -> bool {
    match a.checked_mul(b) {
        Some(p) => p > mask_bytes(size),
        None => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wraparound_and_extension() {
        assert_eq!(apply(Opcode::IntAdd, &[(0xff, 1), (1, 1)], 1), Some(0));
        assert_eq!(apply(Opcode::IntMult, &[(6, 8), (7, 8)], 8), Some(42));
        assert_eq!(apply(Opcode::IntSext, &[(0x80, 1)], 2), Some(0xff80));
        assert_eq!(apply(Opcode::IntZext, &[(0x80, 1)], 2), Some(0x80));
        assert_eq!(apply(Opcode::IntSless, &[(0xff, 1), (0, 1)], 1), Some(1));
        assert_eq!(apply(Opcode::IntDiv, &[(4, 1), (0, 1)], 1), None);
        assert_eq!(apply(Opcode::IntLeft, &[(1, 1), (9, 1)], 1), Some(0));
    }

    #[test]
    fn wrap_predicate() {
        assert!(mul_wraps(16, 16, 1));
        assert!(!mul_wraps(15, 16, 1));
        assert!(mul_wraps(u128::MAX, 2, 16));
    }
}
