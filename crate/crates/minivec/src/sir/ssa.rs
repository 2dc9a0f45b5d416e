//! SSA construction over the complete CFG.
//!
//! `readvar`/`writevar` pseudo instructions are replaced by direct value
//! flow; where paths merge, blocks gain parameters (phi-equivalents) and
//! in-edges gain matching arguments. Trivial parameters (all incoming
//! values identical) are removed afterwards, so loop-invariant variables
//! collapse back to plain values.

use std::collections::HashMap;

use crate::types::Scalar;

use super::{BlockId, DefSite, Operand, SirFunction, SirInstrKind, ValueId};

/// Promote a canonical SIR function to SSA form.
pub fn to_ssa(func: &mut SirFunction) {
    let var_tys = collect_var_tys(func);
    let mut cx = SsaCx {
        func,
        var_tys,
        subst: HashMap::new(),
        incoming_memo: HashMap::new(),
    };

    // Resolve every readvar to the reaching definition.
    for b in 0..cx.func.blocks.len() {
        let block = BlockId(b as u32);
        let mut local: HashMap<String, Operand> = HashMap::new();
        for i in 0..cx.func.blocks[b].instrs.len() {
            match cx.func.blocks[b].instrs[i].kind.clone() {
                SirInstrKind::WriteVar { var, value } => {
                    local.insert(var, value);
                }
                SirInstrKind::ReadVar { var } => {
                    let result = cx.func.blocks[b].instrs[i].result.unwrap();
                    let op = match local.get(&var) {
                        Some(op) => *op,
                        None => cx.incoming(&var, block),
                    };
                    cx.subst.insert(result, op);
                }
                _ => {}
            }
        }
    }

    let subst = std::mem::take(&mut cx.subst);
    drop(cx);

    // Drop the pseudo instructions and apply the substitution everywhere.
    for block in &mut func.blocks {
        block.instrs.retain(|i| {
            !matches!(
                i.kind,
                SirInstrKind::ReadVar { .. } | SirInstrKind::WriteVar { .. }
            )
        });
    }
    apply_subst(func, &|op| resolve(&subst, op));

    remove_trivial_params(func);

    debug_assert!(check_dominance(func).is_ok());
}

fn collect_var_tys(func: &SirFunction) -> HashMap<String, Scalar> {
    let mut tys = HashMap::new();
    for block in &func.blocks {
        for instr in &block.instrs {
            if let SirInstrKind::WriteVar { var, value } = &instr.kind {
                let ty = match value {
                    Operand::Value(v) => func.value_ty(*v),
                    Operand::Const(c) => c.ty(),
                };
                tys.insert(var.clone(), ty);
            }
        }
    }
    tys
}

fn resolve(subst: &HashMap<ValueId, Operand>, mut op: Operand) -> Operand {
    while let Operand::Value(v) = op {
        match subst.get(&v) {
            Some(next) => op = *next,
            None => break,
        }
    }
    op
}

fn apply_subst(func: &mut SirFunction, map: &dyn Fn(Operand) -> Operand) {
    for block in &mut func.blocks {
        for instr in &mut block.instrs {
            for op in instr.kind.operands_mut() {
                *op = map(*op);
            }
        }
    }
    for edge in &mut func.edges {
        edge.cond = match edge.cond {
            super::EdgeCond::Always => super::EdgeCond::Always,
            super::EdgeCond::True(op) => super::EdgeCond::True(map(op)),
            super::EdgeCond::False(op) => super::EdgeCond::False(map(op)),
        };
        for arg in &mut edge.args {
            *arg = map(*arg);
        }
    }
    if let Some(r) = func.ret_val {
        func.ret_val = Some(map(r));
    }
    let remap_pattern = |nodes: &mut Vec<super::StructNode>| {
        fn walk(nodes: &mut Vec<super::StructNode>, map: &dyn Fn(Operand) -> Operand) {
            for n in nodes {
                if let super::StructNode::Loop(w) = n {
                    w.entry_cond = map(w.entry_cond);
                    w.latch_cond = map(w.latch_cond);
                    walk(&mut w.children, map);
                }
            }
        }
        walk(nodes, map);
    };
    let mut root = std::mem::take(&mut func.root);
    remap_pattern(&mut root);
    func.root = root;
}

struct SsaCx<'a> {
    func: &'a mut SirFunction,
    var_tys: HashMap<String, Scalar>,
    subst: HashMap<ValueId, Operand>,
    /// Variable reaching the *start* of a block, once computed.
    incoming_memo: HashMap<(String, BlockId), Operand>,
}

impl SsaCx<'_> {
    /// The definition of `var` reaching the start of `block`.
    fn incoming(&mut self, var: &str, block: BlockId) -> Operand {
        let key = (var.to_string(), block);
        if let Some(op) = self.incoming_memo.get(&key) {
            return *op;
        }
        let preds: Vec<usize> = self
            .func
            .in_edges(block)
            .map(|(i, _)| i)
            .collect();
        match preds.len() {
            0 => panic!("read of `{var}` before any write reached {block}"),
            1 => {
                let src = self.func.edges[preds[0]].src;
                let op = self.end_def(var, src);
                self.incoming_memo.insert(key, op);
                op
            }
            _ => {
                // Junction: introduce a block parameter. Memoise it first so
                // recursion through the back edge terminates.
                let ty = self.var_tys[var];
                let param = self.func.new_value(ty, Some(var.split('#').next().unwrap_or(var).to_string()));
                self.func.block_mut(block).params.push(param);
                let param_idx = self.func.block(block).params.len() - 1;
                self.incoming_memo.insert(key, Operand::Value(param));
                for e in preds {
                    let src = self.func.edges[e].src;
                    let arg = self.end_def(var, src);
                    let args = &mut self.func.edges[e].args;
                    debug_assert_eq!(args.len(), param_idx);
                    args.push(arg);
                }
                Operand::Value(param)
            }
        }
    }

    /// The definition of `var` leaving the end of `block`.
    fn end_def(&mut self, var: &str, block: BlockId) -> Operand {
        for instr in self.func.block(block).instrs.iter().rev() {
            if let SirInstrKind::WriteVar { var: w, value } = &instr.kind {
                if w == var {
                    return *value;
                }
            }
        }
        self.incoming(var, block)
    }
}

/// Remove block parameters whose incoming arguments are all the same value
/// (or the parameter itself), to a fixpoint.
fn remove_trivial_params(func: &mut SirFunction) {
    loop {
        let mut victim: Option<(BlockId, usize, Operand)> = None;
        'outer: for block in &func.blocks {
            for (i, param) in block.params.iter().enumerate() {
                let mut unique: Option<Operand> = None;
                let mut ok = true;
                for (_, e) in func.in_edges(block.id) {
                    let arg = e.args[i];
                    if arg == Operand::Value(*param) {
                        continue;
                    }
                    match unique {
                        None => unique = Some(arg),
                        Some(u) if u == arg => {}
                        Some(_) => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    if let Some(u) = unique {
                        victim = Some((block.id, i, u));
                        break 'outer;
                    }
                }
            }
        }
        let Some((block, idx, replacement)) = victim else {
            break;
        };
        let param = func.block(block).params[idx];
        func.block_mut(block).params.remove(idx);
        let in_edge_ids: Vec<usize> = func.in_edges(block).map(|(i, _)| i).collect();
        for e in in_edge_ids {
            func.edges[e].args.remove(idx);
        }
        apply_subst(func, &|op| {
            if op == Operand::Value(param) {
                replacement
            } else {
                op
            }
        });
    }
}

/// Dominance oracle: every use is dominated by its definition. Edge
/// arguments and conditions count as uses at the end of the source block.
pub fn check_dominance(func: &SirFunction) -> Result<(), String> {
    let n = func.blocks.len();
    let idx = |b: BlockId| b.0 as usize;

    // Iterative dominator sets over the reachable subgraph.
    let reachable = func.reachable();
    let mut dom: Vec<Vec<bool>> = vec![vec![true; n]; n];
    dom[idx(func.entry)] = vec![false; n];
    dom[idx(func.entry)][idx(func.entry)] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for b in 0..n {
            if b == idx(func.entry) || !reachable[b] {
                continue;
            }
            let mut new = vec![true; n];
            let mut any_pred = false;
            for (_, e) in func.in_edges(BlockId(b as u32)) {
                if !reachable[idx(e.src)] {
                    continue;
                }
                any_pred = true;
                for i in 0..n {
                    new[i] = new[i] && dom[idx(e.src)][i];
                }
            }
            if !any_pred {
                new = vec![false; n];
            }
            new[b] = true;
            if new != dom[b] {
                dom[b] = new;
                changed = true;
            }
        }
    }

    let defs = func.def_sites();
    let check_use = |op: Operand, block: BlockId, pos: usize| -> Result<(), String> {
        let Operand::Value(v) = op else {
            return Ok(());
        };
        if !reachable[idx(block)] {
            return Ok(());
        }
        match defs.get(&v) {
            None => Err(format!("{v} used but never defined")),
            Some(DefSite::Param(_)) => Ok(()),
            Some(DefSite::BlockParam(db, _)) => {
                if *db == block || dom[idx(block)][idx(*db)] {
                    Ok(())
                } else {
                    Err(format!("{v} (param of {db}) does not dominate use in {block}"))
                }
            }
            Some(DefSite::Instr(db, di)) => {
                if *db == block {
                    if *di < pos {
                        Ok(())
                    } else {
                        Err(format!("{v} used at {block}:{pos} before its definition"))
                    }
                } else if dom[idx(block)][idx(*db)] {
                    Ok(())
                } else {
                    Err(format!("{v} (defined in {db}) does not dominate use in {block}"))
                }
            }
        }
    };

    for block in &func.blocks {
        for (i, instr) in block.instrs.iter().enumerate() {
            for op in instr.kind.operands() {
                check_use(op, block.id, i)?;
            }
        }
        let end = block.instrs.len();
        for (_, e) in func.out_edges(block.id) {
            match e.cond {
                super::EdgeCond::True(op) | super::EdgeCond::False(op) => {
                    check_use(op, block.id, end)?
                }
                super::EdgeCond::Always => {}
            }
            for arg in &e.args {
                check_use(*arg, block.id, end)?;
            }
        }
    }
    if let Some(r) = func.ret_val {
        // The return value must be defined on every path reaching the exit;
        // require it to be defined in a block dominating every exit block.
        if let Operand::Value(v) = r {
            if !defs.contains_key(&v) {
                return Err(format!("return value {v} is never defined"));
            }
        }
    }
    Ok(())
}
