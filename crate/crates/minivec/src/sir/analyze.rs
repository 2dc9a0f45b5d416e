//! Loop analyses: regular iteration patterns and induction variables.
//!
//! A loop earns an [`IterationPattern`] when its sole exit-controlling
//! counter is affine — the counter initialises to an expression affine in
//! the function parameters, steps by a non-zero constant each trip, and
//! both the latch check and the pre-header entry check compare against the
//! same affine bound. Loops that fail any of this (irregular conditions,
//! source do-while, calls in the exit check) simply keep no pattern.

use std::collections::HashMap;

use crate::affine::AffineExpr;
use crate::types::{BinOp, ConstVal};

use super::{
    DefSite, InductionVar, IterationPattern, LoopWrapper, Operand, SirFunction, SirInstrKind,
    StructNode, ValueId,
};

/// Annotate every loop wrapper that has a regular iteration pattern.
pub fn analyze_iteration(func: &mut SirFunction) {
    let mut root = std::mem::take(&mut func.root);
    walk(&mut root, func);
    func.root = root;
}

/// Flag affine loop-carried variables `(base, step)` on every wrapper.
/// Runs as part of [`analyze_iteration`] but is callable alone.
pub fn detect_induction_vars(func: &mut SirFunction) {
    analyze_iteration(func);
}

fn walk(nodes: &mut Vec<StructNode>, func: &SirFunction) {
    for n in nodes {
        if let StructNode::Loop(w) = n {
            w.induction_vars = induction_vars(func, w);
            w.iter_pattern = iteration_pattern(func, w);
            walk(&mut w.children, func);
        }
    }
}

fn back_edge_arg(func: &SirFunction, w: &LoopWrapper, param_idx: usize) -> Option<Operand> {
    func.in_edges(w.header)
        .find(|(_, e)| e.src == w.latch)
        .map(|(_, e)| e.args[param_idx])
}

fn entry_edge_arg(func: &SirFunction, w: &LoopWrapper, param_idx: usize) -> Option<Operand> {
    func.in_edges(w.header)
        .find(|(_, e)| e.src == w.pre_header)
        .map(|(_, e)| e.args[param_idx])
}

fn induction_vars(func: &SirFunction, w: &LoopWrapper) -> Vec<InductionVar> {
    let defs = func.def_sites();
    let mut out = Vec::new();
    for (i, param) in func.block(w.header).params.iter().enumerate() {
        let Some(back) = back_edge_arg(func, w, i) else { continue };
        let Some(init) = entry_edge_arg(func, w, i) else { continue };
        let Some(step) = add_of(func, &defs, back, *param) else { continue };
        out.push(InductionVar {
            value: *param,
            init,
            step,
        });
    }
    out
}

/// If `op` is defined as `base + c` (or `base - c`), return `c`.
fn add_of(
    func: &SirFunction,
    defs: &std::collections::BTreeMap<ValueId, DefSite>,
    op: Operand,
    base: ValueId,
) -> Option<i64> {
    let v = op.as_value()?;
    let DefSite::Instr(b, i) = defs.get(&v)? else {
        return None;
    };
    match &func.block(*b).instrs[*i].kind {
        SirInstrKind::Bin { op: BinOp::Add, lhs, rhs } => match (lhs, rhs) {
            (Operand::Value(x), Operand::Const(ConstVal::I32(c))) if *x == base => {
                Some(*c as i64)
            }
            (Operand::Const(ConstVal::I32(c)), Operand::Value(x)) if *x == base => {
                Some(*c as i64)
            }
            _ => None,
        },
        SirInstrKind::Bin { op: BinOp::Sub, lhs, rhs } => match (lhs, rhs) {
            (Operand::Value(x), Operand::Const(ConstVal::I32(c))) if *x == base => {
                Some(-(*c as i64))
            }
            _ => None,
        },
        _ => None,
    }
}

fn iteration_pattern(func: &SirFunction, w: &LoopWrapper) -> Option<IterationPattern> {
    let defs = func.def_sites();

    // The latch check: cmp(next, bound) with the counter on one side.
    let latch_v = w.latch_cond.as_value()?;
    let DefSite::Instr(lb, li) = *defs.get(&latch_v)? else {
        return None;
    };
    let SirInstrKind::Bin { op: cmp, lhs, rhs } = &func.block(lb).instrs[li].kind else {
        return None;
    };
    if !cmp.is_comparison() || *cmp == BinOp::Eq {
        return None;
    }

    // Try both orientations: counter-next on the left or on the right.
    let orientations = [(*cmp, *lhs, *rhs), (cmp.swapped()?, *rhs, *lhs)];
    for (cmp, next_op, bound_op) in orientations {
        let Some(next_v) = next_op.as_value() else { continue };
        // `next` must be `counter + step` for a header param whose back
        // edge actually carries it.
        let mut found = None;
        for (i, param) in func.block(w.header).params.iter().enumerate() {
            if back_edge_arg(func, w, i) != Some(next_op) {
                continue;
            }
            if let Some(step) = add_of(func, &defs, next_op, *param) {
                found = Some((i, *param, step));
                break;
            }
        }
        let Some((param_idx, counter, step)) = found else { continue };
        if step == 0 {
            continue;
        }
        let Some(bound) = value_affine(func, bound_op) else { continue };
        let init_op = entry_edge_arg(func, w, param_idx)?;
        let Some(init) = value_affine(func, init_op) else { continue };

        // Direction sanity: the comparison must make progress terminate.
        let direction_ok = match cmp {
            BinOp::Lt | BinOp::Le => step > 0,
            BinOp::Gt | BinOp::Ge => step < 0,
            BinOp::Ne => true,
            _ => false,
        };
        if !direction_ok {
            continue;
        }

        // The entry check must be the same comparison with the initial
        // counter value substituted. A constant-folded entry is accepted
        // when the constant trip count provably exceeds zero (so pre-test
        // and post-test agree); a source do-while keeps no pattern.
        let entry_v = match w.entry_cond {
            Operand::Value(v) => v,
            Operand::Const(ConstVal::Bool(true)) => {
                let provable = match (init.as_const(), bound.as_const()) {
                    (Some(i), Some(b)) => {
                        trip_count(i, b, step, cmp).is_some_and(|t| t >= 1)
                    }
                    _ => false,
                };
                if provable {
                    return Some(IterationPattern {
                        counter,
                        init,
                        bound,
                        step,
                        cmp,
                        next: next_v,
                    });
                }
                continue;
            }
            Operand::Const(_) => continue,
        };
        let DefSite::Instr(eb, ei) = *defs.get(&entry_v)? else {
            continue;
        };
        let SirInstrKind::Bin {
            op: ecmp,
            lhs: el,
            rhs: er,
        } = &func.block(eb).instrs[ei].kind
        else {
            continue;
        };
        let entry_matches = |ecmp: BinOp, el: Operand, er: Operand| {
            ecmp == cmp
                && value_affine(func, el).as_ref() == Some(&init)
                && value_affine(func, er).as_ref() == Some(&bound)
        };
        let ok = entry_matches(*ecmp, *el, *er)
            || ecmp
                .swapped()
                .is_some_and(|sw| entry_matches(sw, *er, *el));
        if !ok {
            continue;
        }

        return Some(IterationPattern {
            counter,
            init,
            bound,
            step,
            cmp,
            next: next_v,
        });
    }
    None
}

/// Affine form of a value in terms of the function's scalar parameters.
/// Only parameter/constant chains through `+ - *const <<const` qualify, so
/// affine values are loop-invariant by construction.
pub fn value_affine(func: &SirFunction, op: Operand) -> Option<AffineExpr> {
    fn go(
        func: &SirFunction,
        defs: &std::collections::BTreeMap<ValueId, DefSite>,
        op: Operand,
        depth: u32,
        memo: &mut HashMap<ValueId, Option<AffineExpr>>,
    ) -> Option<AffineExpr> {
        if depth > 64 {
            return None;
        }
        match op {
            Operand::Const(ConstVal::I32(c)) => Some(AffineExpr::constant(c as i64)),
            Operand::Const(_) => None,
            Operand::Value(v) => {
                if let Some(m) = memo.get(&v) {
                    return m.clone();
                }
                let out = match defs.get(&v) {
                    Some(DefSite::Param(i)) => Some(AffineExpr::param(*i)),
                    Some(DefSite::Instr(b, idx)) => match &func.block(*b).instrs[*idx].kind {
                        SirInstrKind::Bin { op, lhs, rhs } => {
                            let l = go(func, defs, *lhs, depth + 1, memo);
                            let r = go(func, defs, *rhs, depth + 1, memo);
                            match (op, l, r) {
                                (BinOp::Add, Some(l), Some(r)) => Some(l.add(&r)),
                                (BinOp::Sub, Some(l), Some(r)) => Some(l.sub(&r)),
                                (BinOp::Mul, Some(l), Some(r)) => match (l.as_const(), r.as_const())
                                {
                                    (Some(c), _) => Some(r.mul_const(c)),
                                    (_, Some(c)) => Some(l.mul_const(c)),
                                    _ => None,
                                },
                                (BinOp::Shl, Some(l), Some(r)) => {
                                    let c = r.as_const()?;
                                    (0..=31).contains(&c).then(|| l.mul_const(1 << c))
                                }
                                _ => None,
                            }
                        }
                        SirInstrKind::Un { op: crate::types::UnOp::Neg, operand } => {
                            go(func, defs, *operand, depth + 1, memo).map(|a| a.neg())
                        }
                        _ => None,
                    },
                    _ => None,
                };
                memo.insert(v, out.clone());
                out
            }
        }
    }
    let defs = func.def_sites();
    go(func, &defs, op, 0, &mut HashMap::new())
}

/// Trip count of a pattern for concrete values. `None` means the loop does
/// not terminate by its pattern (e.g. `!=` with a non-divisible distance).
pub fn trip_count(init: i64, bound: i64, step: i64, cmp: BinOp) -> Option<u64> {
    debug_assert!(step != 0);
    let dist = |from: i64, to: i64| to.checked_sub(from);
    match cmp {
        BinOp::Lt => {
            if init >= bound || step < 0 {
                return if init < bound { None } else { Some(0) };
            }
            Some((dist(init, bound)? as u64).div_ceil(step as u64))
        }
        BinOp::Le => {
            if init > bound || step < 0 {
                return if init <= bound { None } else { Some(0) };
            }
            Some((dist(init, bound)? as u64) / step as u64 + 1)
        }
        BinOp::Gt => {
            if init <= bound || step > 0 {
                return if init > bound { None } else { Some(0) };
            }
            Some((dist(bound, init)? as u64).div_ceil(step.unsigned_abs()))
        }
        BinOp::Ge => {
            if init < bound || step > 0 {
                return if init >= bound { None } else { Some(0) };
            }
            Some((dist(bound, init)? as u64) / step.unsigned_abs() + 1)
        }
        BinOp::Ne => {
            let d = dist(init, bound)?;
            if d == 0 {
                return Some(0);
            }
            if (d < 0) != (step < 0) || d % step != 0 {
                return None;
            }
            Some((d / step) as u64)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trip_counts_match_simulation() {
        let cases = [
            (0i64, 8i64, 2i64, BinOp::Lt),
            (1, 8, 2, BinOp::Lt),
            (0, 0, 1, BinOp::Lt),
            (0, 7, 3, BinOp::Le),
            (10, 0, -2, BinOp::Gt),
            (10, 0, -2, BinOp::Ge),
            (0, 8, 2, BinOp::Ne),
            (5, 5, 1, BinOp::Ne),
        ];
        for (init, bound, step, cmp) in cases {
            let mut i = init;
            let mut n = 0u64;
            while n < 1000 {
                let cont = match cmp {
                    BinOp::Lt => i < bound,
                    BinOp::Le => i <= bound,
                    BinOp::Gt => i > bound,
                    BinOp::Ge => i >= bound,
                    BinOp::Ne => i != bound,
                    _ => unreachable!(),
                };
                if !cont {
                    break;
                }
                n += 1;
                i += step;
            }
            assert_eq!(
                trip_count(init, bound, step, cmp),
                Some(n),
                "init {init} bound {bound} step {step} cmp {cmp}"
            );
        }
        // Non-terminating `!=` distance.
        assert_eq!(trip_count(0, 7, 2, BinOp::Ne), None);
    }
}
