//! Constant propagation and dead code elimination on SSA-form SIR.

use std::collections::{HashMap, HashSet};

use crate::types::{eval_binop, eval_cast, eval_unop, ConstVal};

use super::{EdgeCond, Operand, SirFunction, SirInstrKind, ValueId};

/// Fold constants, propagate them, and drop dead pure instructions.
/// Observable semantics (stores, calls, traps, return) are preserved; in
/// particular a division by a constant zero is left in place to trap at
/// run time.
pub fn optimize_sir(func: &mut SirFunction) {
    loop {
        let folded = fold_constants(func);
        let pruned = prune_const_edges(func);
        if !folded && !pruned {
            break;
        }
    }
    dead_code_elim(func);
    clear_unreachable_blocks(func);
}

fn fold_constants(func: &mut SirFunction) -> bool {
    let mut subst: HashMap<ValueId, Operand> = HashMap::new();
    for block in &func.blocks {
        for instr in &block.instrs {
            let Some(result) = instr.result else { continue };
            let folded = match &instr.kind {
                SirInstrKind::Bin { op, lhs, rhs } => match (lhs.as_const(), rhs.as_const()) {
                    (Some(a), Some(b)) => eval_binop(*op, a, b).ok(),
                    _ => None,
                },
                SirInstrKind::Un { op, operand } => {
                    operand.as_const().and_then(|a| eval_unop(*op, a).ok())
                }
                SirInstrKind::Cast { to, operand } => {
                    operand.as_const().and_then(|a| eval_cast(*to, a).ok())
                }
                _ => None,
            };
            if let Some(c) = folded {
                subst.insert(result, Operand::Const(c));
            }
        }
    }
    if subst.is_empty() {
        return false;
    }
    // Drop the folded instructions and rewrite uses.
    for block in &mut func.blocks {
        block
            .instrs
            .retain(|i| !i.result.is_some_and(|r| subst.contains_key(&r)));
    }
    apply(func, &subst);
    true
}

fn apply(func: &mut SirFunction, subst: &HashMap<ValueId, Operand>) {
    let map = |op: Operand| match op {
        Operand::Value(v) => subst.get(&v).copied().unwrap_or(op),
        c => c,
    };
    for block in &mut func.blocks {
        for instr in &mut block.instrs {
            for op in instr.kind.operands_mut() {
                *op = map(*op);
            }
        }
    }
    for edge in &mut func.edges {
        edge.cond = match edge.cond {
            EdgeCond::Always => EdgeCond::Always,
            EdgeCond::True(op) => EdgeCond::True(map(op)),
            EdgeCond::False(op) => EdgeCond::False(map(op)),
        };
        for arg in &mut edge.args {
            *arg = map(*arg);
        }
    }
    if let Some(r) = func.ret_val {
        func.ret_val = Some(map(r));
    }
    fn walk(nodes: &mut Vec<super::StructNode>, map: &dyn Fn(Operand) -> Operand) {
        for n in nodes {
            if let super::StructNode::Loop(w) = n {
                w.entry_cond = map(w.entry_cond);
                w.latch_cond = map(w.latch_cond);
                walk(&mut w.children, map);
            }
        }
    }
    let mut root = std::mem::take(&mut func.root);
    walk(&mut root, &map);
    func.root = root;
}

/// Rewrite edges whose condition folded to a constant: the taken edge
/// becomes unconditional, the untaken one is deleted.
fn prune_const_edges(func: &mut SirFunction) -> bool {
    let mut changed = false;
    let mut keep = Vec::with_capacity(func.edges.len());
    for e in func.edges.drain(..) {
        let decided = match e.cond {
            EdgeCond::True(Operand::Const(ConstVal::Bool(b))) => Some(b),
            EdgeCond::False(Operand::Const(ConstVal::Bool(b))) => Some(!b),
            _ => None,
        };
        match decided {
            Some(true) => {
                changed = true;
                keep.push(super::Edge {
                    cond: EdgeCond::Always,
                    ..e
                });
            }
            Some(false) => {
                changed = true;
            }
            None => keep.push(e),
        }
    }
    func.edges = keep;
    changed
}

fn dead_code_elim(func: &mut SirFunction) {
    // Seed liveness with observable effects.
    let mut live: HashSet<ValueId> = HashSet::new();
    let mut work: Vec<ValueId> = Vec::new();
    let touch = |op: Operand, live: &mut HashSet<ValueId>, work: &mut Vec<ValueId>| {
        if let Operand::Value(v) = op {
            if live.insert(v) {
                work.push(v);
            }
        }
    };

    for block in &func.blocks {
        for instr in &block.instrs {
            if !instr.kind.is_pure() {
                for op in instr.kind.operands() {
                    touch(op, &mut live, &mut work);
                }
            }
        }
    }
    for edge in &func.edges {
        match edge.cond {
            EdgeCond::True(op) | EdgeCond::False(op) => touch(op, &mut live, &mut work),
            EdgeCond::Always => {}
        }
    }
    if let Some(r) = func.ret_val {
        touch(r, &mut live, &mut work);
    }

    let defs = func.def_sites();
    while let Some(v) = work.pop() {
        match defs.get(&v) {
            Some(super::DefSite::Instr(b, i)) => {
                for op in func.block(*b).instrs[*i].kind.operands() {
                    touch(op, &mut live, &mut work);
                }
            }
            Some(super::DefSite::BlockParam(b, i)) => {
                let args: Vec<Operand> = func
                    .in_edges(*b)
                    .map(|(_, e)| e.args[*i])
                    .collect();
                for arg in args {
                    touch(arg, &mut live, &mut work);
                }
            }
            _ => {}
        }
    }

    // Sweep dead pure instructions.
    for block in &mut func.blocks {
        block.instrs.retain(|instr| {
            !instr.kind.is_pure() || instr.result.is_none_or(|r| live.contains(&r))
        });
    }

    // Sweep dead block params (and their edge argument slots).
    let block_ids: Vec<super::BlockId> = func.blocks.iter().map(|b| b.id).collect();
    for b in block_ids {
        let dead: Vec<usize> = func
            .block(b)
            .params
            .iter()
            .enumerate()
            .filter(|(_, p)| !live.contains(p))
            .map(|(i, _)| i)
            .rev()
            .collect();
        if dead.is_empty() {
            continue;
        }
        for i in dead {
            func.block_mut(b).params.remove(i);
            let edges: Vec<usize> = func.in_edges(b).map(|(idx, _)| idx).collect();
            for e in edges {
                if i < func.edges[e].args.len() {
                    func.edges[e].args.remove(i);
                }
            }
        }
    }
}

/// Unreachable blocks keep their place in the tree and graph but lose
/// their contents; they can never execute.
fn clear_unreachable_blocks(func: &mut SirFunction) {
    let reachable = func.reachable();
    let unreachable: Vec<super::BlockId> = func
        .blocks
        .iter()
        .filter(|b| !reachable[b.id.0 as usize])
        .map(|b| b.id)
        .collect();
    for b in &unreachable {
        func.block_mut(*b).instrs.clear();
        func.block_mut(*b).params.clear();
    }
    // Out-edges of unreachable blocks would reference cleared params.
    if !unreachable.is_empty() {
        let dead_args: HashSet<super::BlockId> = unreachable.iter().copied().collect();
        for e in &mut func.edges {
            if dead_args.contains(&e.src) {
                // Keep the edge for graph shape; its args must match the
                // destination's params, which may still exist. Feed the
                // destination params with their own values is not possible
                // here, so feed zeros of the right type.
                let dst_params = func.blocks[e.dst.0 as usize].params.clone();
                e.args = dst_params
                    .iter()
                    .map(|p| Operand::Const(ConstVal::zero(func.values[p.0 as usize].ty)))
                    .collect();
            }
        }
    }
}
