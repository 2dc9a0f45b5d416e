//! Scalar types, operators, and their evaluation semantics.
//!
//! Every executable stage (AST interpreter, constant folder, VIR evaluator,
//! LIR interpreter) funnels scalar arithmetic through [`eval_binop`] and
//! [`eval_unop`], so the semantics are defined exactly once:
//!
//! - `i32` arithmetic wraps (two's complement),
//! - shift amounts are masked to 0..=31,
//! - `>>` is a logical (zero-filling) shift,
//! - integer division and remainder by zero trap,
//! - `f32` follows IEEE-754 binary32.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Scalar value types. `Bool` only arises from comparisons and logical
/// operators; it cannot be declared in source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scalar {
    I32,
    F32,
    Bool,
}

impl Scalar {
    pub fn bits(self) -> u32 {
        32
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::I32 => write!(f, "i32"),
            Scalar::F32 => write!(f, "f32"),
            Scalar::Bool => write!(f, "bool"),
        }
    }
}

/// Binary operators. Logical and/or evaluate both operands (no short
/// circuit), which keeps AST and lowered semantics identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Shl,
    Shr,
    BitAnd,
    BitOr,
    BitXor,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    LogAnd,
    LogOr,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne
        )
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::LogAnd | BinOp::LogOr)
    }

    /// Comparison with swapped operands: `a < b` == `b > a`.
    pub fn swapped(self) -> Option<BinOp> {
        Some(match self {
            BinOp::Lt => BinOp::Gt,
            BinOp::Le => BinOp::Ge,
            BinOp::Gt => BinOp::Lt,
            BinOp::Ge => BinOp::Le,
            BinOp::Eq => BinOp::Eq,
            BinOp::Ne => BinOp::Ne,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::BitAnd => "&",
            BinOp::BitOr => "|",
            BinOp::BitXor => "^",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::LogAnd => "&&",
            BinOp::LogOr => "||",
        }
    }
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnOp {
    /// Arithmetic negation (i32 wrapping, f32 sign flip).
    Neg,
    /// Logical not, bool only.
    Not,
    /// Bitwise complement, i32 only.
    BitNot,
}

impl UnOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Not => "!",
            UnOp::BitNot => "~",
        }
    }
}

/// A scalar constant. `F32` compares and hashes by bit pattern so constants
/// can key maps and differential checks stay exact.
#[derive(Debug, Clone, Copy)]
pub enum ConstVal {
    I32(i32),
    F32(f32),
    Bool(bool),
}

impl ConstVal {
    pub fn ty(self) -> Scalar {
        match self {
            ConstVal::I32(_) => Scalar::I32,
            ConstVal::F32(_) => Scalar::F32,
            ConstVal::Bool(_) => Scalar::Bool,
        }
    }

    pub fn as_i32(self) -> Option<i32> {
        match self {
            ConstVal::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            ConstVal::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn zero(ty: Scalar) -> ConstVal {
        match ty {
            Scalar::I32 => ConstVal::I32(0),
            Scalar::F32 => ConstVal::F32(0.0),
            Scalar::Bool => ConstVal::Bool(false),
        }
    }
}

impl PartialEq for ConstVal {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ConstVal::I32(a), ConstVal::I32(b)) => a == b,
            (ConstVal::F32(a), ConstVal::F32(b)) => a.to_bits() == b.to_bits(),
            (ConstVal::Bool(a), ConstVal::Bool(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for ConstVal {}

impl std::hash::Hash for ConstVal {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            ConstVal::I32(v) => {
                0u8.hash(state);
                v.hash(state);
            }
            ConstVal::F32(v) => {
                1u8.hash(state);
                v.to_bits().hash(state);
            }
            ConstVal::Bool(b) => {
                2u8.hash(state);
                b.hash(state);
            }
        }
    }
}

impl PartialOrd for ConstVal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ConstVal {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        fn key(v: &ConstVal) -> (u8, u64) {
            match v {
                ConstVal::I32(x) => (0, *x as u32 as u64),
                ConstVal::F32(x) => (1, x.to_bits() as u64),
                ConstVal::Bool(b) => (2, *b as u64),
            }
        }
        key(self).cmp(&key(other))
    }
}

impl fmt::Display for ConstVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstVal::I32(v) => write!(f, "{v}"),
            ConstVal::F32(v) => {
                if v.fract() == 0.0 && v.is_finite() {
                    write!(f, "{v:.1}")
                } else {
                    write!(f, "{v}")
                }
            }
            ConstVal::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// Why execution stopped.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrapKind {
    #[error("integer division by zero")]
    DivByZero,
    #[error("index {index} out of bounds for array `{array}` of length {len}")]
    OutOfBounds {
        array: String,
        index: i64,
        len: usize,
    },
    #[error("step limit exceeded")]
    StepLimit,
    #[error("internal evaluation error: {0}")]
    Internal(String),
}

fn type_err(op: &str, a: ConstVal, b: Option<ConstVal>) -> TrapKind {
    match b {
        Some(b) => TrapKind::Internal(format!("{op} on {} and {}", a.ty(), b.ty())),
        None => TrapKind::Internal(format!("{op} on {}", a.ty())),
    }
}

/// Evaluate a binary operator on two scalar constants.
pub fn eval_binop(op: BinOp, a: ConstVal, b: ConstVal) -> Result<ConstVal, TrapKind> {
    use ConstVal::*;
    Ok(match (op, a, b) {
        (BinOp::Add, I32(x), I32(y)) => I32(x.wrapping_add(y)),
        (BinOp::Sub, I32(x), I32(y)) => I32(x.wrapping_sub(y)),
        (BinOp::Mul, I32(x), I32(y)) => I32(x.wrapping_mul(y)),
        (BinOp::Div, I32(x), I32(y)) => {
            if y == 0 {
                return Err(TrapKind::DivByZero);
            }
            I32(x.wrapping_div(y))
        }
        (BinOp::Rem, I32(x), I32(y)) => {
            if y == 0 {
                return Err(TrapKind::DivByZero);
            }
            I32(x.wrapping_rem(y))
        }
        (BinOp::Shl, I32(x), I32(y)) => I32(x.wrapping_shl(y as u32 & 31)),
        // Logical shift: MiniC `>>` zero-fills.
        (BinOp::Shr, I32(x), I32(y)) => I32(((x as u32) >> (y as u32 & 31)) as i32),
        (BinOp::BitAnd, I32(x), I32(y)) => I32(x & y),
        (BinOp::BitOr, I32(x), I32(y)) => I32(x | y),
        (BinOp::BitXor, I32(x), I32(y)) => I32(x ^ y),
        (BinOp::Lt, I32(x), I32(y)) => Bool(x < y),
        (BinOp::Le, I32(x), I32(y)) => Bool(x <= y),
        (BinOp::Gt, I32(x), I32(y)) => Bool(x > y),
        (BinOp::Ge, I32(x), I32(y)) => Bool(x >= y),
        (BinOp::Eq, I32(x), I32(y)) => Bool(x == y),
        (BinOp::Ne, I32(x), I32(y)) => Bool(x != y),

        (BinOp::Add, F32(x), F32(y)) => F32(x + y),
        (BinOp::Sub, F32(x), F32(y)) => F32(x - y),
        (BinOp::Mul, F32(x), F32(y)) => F32(x * y),
        (BinOp::Div, F32(x), F32(y)) => F32(x / y),
        (BinOp::Lt, F32(x), F32(y)) => Bool(x < y),
        (BinOp::Le, F32(x), F32(y)) => Bool(x <= y),
        (BinOp::Gt, F32(x), F32(y)) => Bool(x > y),
        (BinOp::Ge, F32(x), F32(y)) => Bool(x >= y),
        (BinOp::Eq, F32(x), F32(y)) => Bool(x == y),
        (BinOp::Ne, F32(x), F32(y)) => Bool(x != y),

        (BinOp::LogAnd, Bool(x), Bool(y)) => Bool(x && y),
        (BinOp::LogOr, Bool(x), Bool(y)) => Bool(x || y),
        (BinOp::Eq, Bool(x), Bool(y)) => Bool(x == y),
        (BinOp::Ne, Bool(x), Bool(y)) => Bool(x != y),

        _ => return Err(type_err(op.symbol(), a, Some(b))),
    })
}

/// Evaluate a unary operator on a scalar constant.
pub fn eval_unop(op: UnOp, a: ConstVal) -> Result<ConstVal, TrapKind> {
    use ConstVal::*;
    Ok(match (op, a) {
        (UnOp::Neg, I32(x)) => I32(x.wrapping_neg()),
        (UnOp::Neg, F32(x)) => F32(-x),
        (UnOp::Not, Bool(b)) => Bool(!b),
        (UnOp::BitNot, I32(x)) => I32(!x),
        _ => return Err(type_err(op.symbol(), a, None)),
    })
}

/// Convert between scalar types (explicit casts only).
pub fn eval_cast(to: Scalar, a: ConstVal) -> Result<ConstVal, TrapKind> {
    use ConstVal::*;
    Ok(match (to, a) {
        (Scalar::I32, I32(x)) => I32(x),
        (Scalar::F32, F32(x)) => F32(x),
        (Scalar::F32, I32(x)) => F32(x as f32),
        // Saturating like Rust's `as`; deterministic for every input.
        (Scalar::I32, F32(x)) => I32(x as i32),
        _ => return Err(type_err("cast", a, None)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i32_wraps_and_shifts_mask() {
        assert_eq!(
            eval_binop(BinOp::Add, ConstVal::I32(i32::MAX), ConstVal::I32(1)).unwrap(),
            ConstVal::I32(i32::MIN)
        );
        assert_eq!(
            eval_binop(BinOp::Shl, ConstVal::I32(1), ConstVal::I32(33)).unwrap(),
            ConstVal::I32(2)
        );
        assert_eq!(
            eval_binop(BinOp::Div, ConstVal::I32(i32::MIN), ConstVal::I32(-1)).unwrap(),
            ConstVal::I32(i32::MIN)
        );
    }

    #[test]
    fn shr_is_logical() {
        assert_eq!(
            eval_binop(BinOp::Shr, ConstVal::I32(-1), ConstVal::I32(24)).unwrap(),
            ConstVal::I32(255)
        );
        let hex = 0x1122_3344;
        assert_eq!(
            eval_binop(BinOp::Shr, ConstVal::I32(hex), ConstVal::I32(24)).unwrap(),
            ConstVal::I32(0x11)
        );
    }

    #[test]
    fn div_by_zero_traps() {
        assert_eq!(
            eval_binop(BinOp::Div, ConstVal::I32(3), ConstVal::I32(0)),
            Err(TrapKind::DivByZero)
        );
        assert_eq!(
            eval_binop(BinOp::Rem, ConstVal::I32(3), ConstVal::I32(0)),
            Err(TrapKind::DivByZero)
        );
    }
}
