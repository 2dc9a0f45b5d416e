//! Instruction equivalence transformations.
//!
//! When lock-step pack growth hits a lane whose instruction does not match
//! the template opcode, the lane may still pack if an identity rewrite
//! makes it isomorphic: a bare value `x` can stand in as `x << 0`,
//! `x + 0`, `x * 1`, `x & -1`, and so on. The table is data driven
//! (opcode -> neutral element) so new identities slot in. The masked-and
//! reconstruction (`x` as `x & m`) additionally needs a conservative value
//! range proof that `x` already fits the mask.

use crate::types::{BinOp, ConstVal, Scalar};
use crate::vir::{VOperand, VirInstrKind, VirValue};

use crate::depgraph::{ValueDef, VirIndex};

/// How a lane was rewritten to match the pack template.
#[derive(Debug, Clone, PartialEq)]
pub enum Rewrite {
    /// `x` viewed as `op(x, neutral)`, e.g. `a[0]` as `a[0] << 0`.
    NeutralRhs { op: BinOp, neutral: ConstVal },
    /// `x` viewed as `x & mask`, proven by value range.
    MaskAnd { mask: i32 },
}

impl Rewrite {
    /// The constant that fills the rewritten lane's second operand.
    pub fn rhs_const(&self) -> ConstVal {
        match self {
            Rewrite::NeutralRhs { neutral, .. } => *neutral,
            Rewrite::MaskAnd { mask } => ConstVal::I32(*mask),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Rewrite::NeutralRhs { op, neutral } => format!("x -> x {} {}", op.symbol(), neutral),
            Rewrite::MaskAnd { mask } => format!("x -> x & {mask} (range proven)"),
        }
    }
}

/// Right-hand neutral element for an i32 operation, when one exists.
pub fn neutral_rhs(op: BinOp, elem: Scalar) -> Option<ConstVal> {
    if elem != Scalar::I32 {
        // f32 identities are not exact for all inputs (e.g. -0.0 + 0.0),
        // so only integer lanes rewrite.
        return None;
    }
    Some(match op {
        BinOp::Add => ConstVal::I32(0),
        BinOp::Sub => ConstVal::I32(0),
        BinOp::Mul => ConstVal::I32(1),
        BinOp::Shl => ConstVal::I32(0),
        BinOp::Shr => ConstVal::I32(0),
        BinOp::BitAnd => ConstVal::I32(-1),
        BinOp::BitOr => ConstVal::I32(0),
        BinOp::BitXor => ConstVal::I32(0),
        _ => return None,
    })
}

/// Try to view a bare value as `template_op(value, rhs)`.
///
/// The plain neutral identities always hold. For `&` the neutral `-1` works
/// unconditionally, and a non-neutral mask is allowed when the value's
/// range provably fits inside it (the missing-mask reconstruction).
pub fn rewrite_for(
    template_op: BinOp,
    template_rhs: Option<ConstVal>,
    value: VOperand,
    elem: Scalar,
    index: &VirIndex,
) -> Option<Rewrite> {
    let neutral = neutral_rhs(template_op, elem)?;
    // Prefer reconstructing the template's exact rhs when the range allows;
    // otherwise fall back to the neutral element (lanes may then still
    // pack as a lane-constant vector).
    if template_op == BinOp::BitAnd {
        if let Some(ConstVal::I32(mask)) = template_rhs {
            if mask > 0 && ((mask as i64) + 1).count_ones() == 1 {
                if let Some((lo, hi)) = value_range(value, index, 0) {
                    if lo >= 0 && hi <= mask as i64 {
                        return Some(Rewrite::MaskAnd { mask });
                    }
                }
            }
        }
    }
    Some(Rewrite::NeutralRhs {
        op: template_op,
        neutral,
    })
}

/// Conservative i32 value range. `None` means the full range.
pub fn value_range(op: VOperand, index: &VirIndex, depth: u32) -> Option<(i64, i64)> {
    if depth > 16 {
        return None;
    }
    match op {
        VOperand::Const(ConstVal::I32(c)) => Some((c as i64, c as i64)),
        VOperand::Const(_) | VOperand::Param(_) => None,
        VOperand::Value(v) => value_def_range(v, index, depth),
    }
}

fn value_def_range(v: VirValue, index: &VirIndex, _depth: u32) -> Option<(i64, i64)> {
    let def = index.defs.get(&v)?;
    let ValueDef::Instr { kind, .. } = def else {
        return None;
    };
    match kind {
        VirInstrKind::Bin {
            op: BinOp::Shr,
            rhs: VOperand::Const(ConstVal::I32(sh)),
            ..
        } => {
            let sh = (*sh as u32) & 31;
            // Logical shift right: result fits in 32 - sh bits.
            Some((0, (u32::MAX >> sh) as i64))
        }
        VirInstrKind::Bin {
            op: BinOp::BitAnd,
            lhs,
            rhs,
            ..
        } => {
            let mask_of = |o: &VOperand| match o {
                VOperand::Const(ConstVal::I32(m)) if *m >= 0 => Some(*m as i64),
                _ => None,
            };
            match (mask_of(lhs), mask_of(rhs)) {
                (Some(m), _) | (_, Some(m)) => Some((0, m)),
                _ => None,
            }
        }
        VirInstrKind::Bin {
            op: BinOp::Rem,
            rhs: VOperand::Const(ConstVal::I32(m)),
            ..
        } if *m > 0 => Some((-(*m as i64 - 1), *m as i64 - 1)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::eval_binop;

    #[test]
    fn neutral_identities_hold_for_random_inputs() {
        // Every table row is semantically the identity on 10^4 inputs.
        let mut state = 0x243f_6a88_85a3_08d3u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 16) as i32
        };
        let ops = [
            BinOp::Add,
            BinOp::Sub,
            BinOp::Mul,
            BinOp::Shl,
            BinOp::Shr,
            BinOp::BitAnd,
            BinOp::BitOr,
            BinOp::BitXor,
        ];
        for op in ops {
            let neutral = neutral_rhs(op, Scalar::I32).unwrap();
            for _ in 0..10_000 {
                let x = ConstVal::I32(next());
                assert_eq!(
                    eval_binop(op, x, neutral).unwrap(),
                    x,
                    "{op} with neutral {neutral}"
                );
            }
        }
    }

    #[test]
    fn no_neutral_for_comparisons_or_f32() {
        assert!(neutral_rhs(BinOp::Lt, Scalar::I32).is_none());
        assert!(neutral_rhs(BinOp::Div, Scalar::I32).is_none());
        assert!(neutral_rhs(BinOp::Add, Scalar::F32).is_none());
    }

    #[test]
    fn mask_reconstruction_requires_range_proof() {
        use crate::vir::{VirFunction, VirParam};
        // Build a tiny function: v0 = p0 >> 24, v1 = p0 + 1.
        let mut vf = VirFunction {
            name: "t".into(),
            params: vec![VirParam {
                name: "x".into(),
                kind: crate::sir::ParamKind::Scalar(Scalar::I32),
            }],
            values: Vec::new(),
            layer0: Vec::new(),
            ret: None,
            next_loop: 0,
        };
        let v0 = vf.new_value(Scalar::I32, 1, None);
        let v1 = vf.new_value(Scalar::I32, 1, None);
        for (v, kind) in [
            (
                v0,
                VirInstrKind::Bin {
                    op: BinOp::Shr,
                    ty: Scalar::I32,
                    lhs: VOperand::Param(0),
                    rhs: VOperand::Const(ConstVal::I32(24)),
                },
            ),
            (
                v1,
                VirInstrKind::Bin {
                    op: BinOp::Add,
                    ty: Scalar::I32,
                    lhs: VOperand::Param(0),
                    rhs: VOperand::Const(ConstVal::I32(1)),
                },
            ),
        ] {
            vf.layer0.push(crate::vir::Entry {
                pred: crate::predicate::Predicate::True,
                iter: None,
                item: crate::vir::Item::Instr(crate::vir::VirInstr {
                    result: Some(v),
                    kind,
                }),
            });
        }
        let index = VirIndex::build(&vf);
        // x >> 24 fits 0..=255, so `& 255` reconstructs.
        let r = rewrite_for(
            BinOp::BitAnd,
            Some(ConstVal::I32(255)),
            VOperand::Value(v0),
            Scalar::I32,
            &index,
        );
        assert_eq!(r, Some(Rewrite::MaskAnd { mask: 255 }));
        // x + 1 has unknown range: only the neutral -1 mask applies.
        let r = rewrite_for(
            BinOp::BitAnd,
            Some(ConstVal::I32(255)),
            VOperand::Value(v1),
            Scalar::I32,
            &index,
        );
        assert_eq!(
            r,
            Some(Rewrite::NeutralRhs {
                op: BinOp::BitAnd,
                neutral: ConstVal::I32(-1)
            })
        );
    }
}
