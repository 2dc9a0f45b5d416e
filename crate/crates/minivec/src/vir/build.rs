//! VIR construction: depth-first traversal of the SIR structure tree with
//! a symbolic control-predicate calculator.
//!
//! Blocks emit instruction entries under the block's predicate; each loop
//! wrapper emits one loop entry whose predicate is the header's, with the
//! body built under a base predicate reset to `true`. The calculator
//! computes a block's predicate as the simplification of
//! `OR_i (c_i AND cp_i)` over its predecessors, sharing one canonical
//! predicate among all entries of a block. Crossing a loop boundary
//! contributes the loop entry's predicate: once a loop runs, it exits.
//!
//! SSA merge parameters become `select` instructions; loop-carried merge
//! inputs surface through loop result aliases.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::predicate::{simplify_predicate, Literal, PredAtom, PredExpr, Predicate};
use crate::sir::{
    BlockId, EdgeCond, LoopWrapper, Operand, SirFunction, SirInstrKind, StructNode,
};
use crate::types::{ConstVal, Scalar};

use super::{
    CodeList, Entry, Item, LoopItem, VLoopId, VOperand, VirFunction, VirInstr, VirInstrKind,
    VirIterator, VirParam, WithDef,
};

/// Per-block predicate instrumentation, kept for dump and verification.
#[derive(Debug, Clone, Default)]
pub struct BlockPredicates {
    /// Canonical predicate each block's entries share.
    pub simplified: BTreeMap<BlockId, Predicate>,
    /// The unsimplified `OR(c_i AND cp_i)` merge formula per block.
    pub raw: BTreeMap<BlockId, PredExpr>,
}

/// Lower an SSA-form, analyzed SIR function to VIR.
pub fn build_vir(sir: &SirFunction) -> (VirFunction, BlockPredicates) {
    let vf = VirFunction {
        name: sir.name.clone(),
        params: sir
            .params
            .iter()
            .map(|p| VirParam {
                name: p.name.clone(),
                kind: p.kind.clone(),
            })
            .collect(),
        values: Vec::new(),
        layer0: Vec::new(),
        ret: None,
        next_loop: 0,
    };

    // Pre-seed scalar parameter values.
    let mut value_map: HashMap<crate::sir::ValueId, VOperand> = HashMap::new();
    for (i, p) in sir.params.iter().enumerate() {
        if let Some(v) = p.value {
            value_map.insert(v, VOperand::Param(i));
        }
    }

    let mut headers = HashSet::new();
    let mut back_edges = HashSet::new();
    let mut loop_ancestry: HashMap<BlockId, Vec<crate::sir::LoopId>> = HashMap::new();
    fn collect_loops(
        nodes: &[StructNode],
        chain: &mut Vec<crate::sir::LoopId>,
        headers: &mut HashSet<BlockId>,
        back_edges: &mut HashSet<(BlockId, BlockId)>,
        ancestry: &mut HashMap<BlockId, Vec<crate::sir::LoopId>>,
    ) {
        for n in nodes {
            match n {
                StructNode::Block(b) => {
                    ancestry.insert(*b, chain.clone());
                }
                StructNode::Loop(w) => {
                    headers.insert(w.header);
                    back_edges.insert((w.latch, w.header));
                    // Pre-header and forwarding sit at the parent level.
                    ancestry.insert(w.pre_header, chain.clone());
                    ancestry.insert(w.forwarding, chain.clone());
                    chain.push(w.id);
                    collect_loops(&w.children[2..], chain, headers, back_edges, ancestry);
                    chain.pop();
                }
            }
        }
    }
    collect_loops(
        &sir.root,
        &mut Vec::new(),
        &mut headers,
        &mut back_edges,
        &mut loop_ancestry,
    );

    let mut b = VirBuilder {
        sir,
        vf,
        value_map,
        value_loop: HashMap::new(),
        list_stack: vec![Vec::new()],
        loop_stack: Vec::new(),
        memo: HashMap::new(),
        preds: BlockPredicates::default(),
        loop_entry_pred: HashMap::new(),
        loop_positions: HashMap::new(),
        alias_map: HashMap::new(),
        headers,
        back_edges,
        loop_ancestry,
    };

    b.visit_nodes(&sir.root);

    b.vf.ret = sir.ret_val.map(|r| b.map_op(r));
    b.vf.layer0 = b.list_stack.pop().expect("layer 0");
    debug_assert!(b.list_stack.is_empty());
    let preds = b.preds;
    let vf = b.vf;
    debug_assert_eq!(vf.validate(), Ok(()));
    (vf, preds)
}

struct VirBuilder<'a> {
    sir: &'a SirFunction,
    vf: VirFunction,
    value_map: HashMap<crate::sir::ValueId, VOperand>,
    /// Innermost SIR loop a VIR value is defined in.
    value_loop: HashMap<super::VirValue, Option<crate::sir::LoopId>>,
    list_stack: Vec<CodeList>,
    /// (sir loop id, vir loop id) nesting.
    loop_stack: Vec<(crate::sir::LoopId, VLoopId)>,
    /// Working predicate per block; headers reset to the base `true` here
    /// while `preds` records their observable entry predicate.
    memo: HashMap<BlockId, Predicate>,
    preds: BlockPredicates,
    loop_entry_pred: HashMap<crate::sir::LoopId, Predicate>,
    /// sir loop id -> (list_stack depth, index) of its emitted loop entry.
    loop_positions: HashMap<crate::sir::LoopId, (usize, usize)>,
    alias_map: HashMap<(crate::sir::LoopId, super::VirValue), super::VirValue>,
    headers: HashSet<BlockId>,
    back_edges: HashSet<(BlockId, BlockId)>,
    loop_ancestry: HashMap<BlockId, Vec<crate::sir::LoopId>>,
}

impl<'a> VirBuilder<'a> {
    fn current_iter(&self) -> Option<VLoopId> {
        self.loop_stack.last().map(|(_, v)| *v)
    }

    fn current_sir_loop(&self) -> Option<crate::sir::LoopId> {
        self.loop_stack.last().map(|(s, _)| *s)
    }

    fn map_def(&mut self, v: crate::sir::ValueId) -> super::VirValue {
        if let Some(op) = self.value_map.get(&v) {
            match op {
                VOperand::Value(vv) => return *vv,
                _ => panic!("{v:?} is a parameter, not a definable value"),
            }
        }
        let info = &self.sir.values[v.0 as usize];
        let vv = self.vf.new_value(info.ty, 1, info.name.clone());
        self.value_map.insert(v, VOperand::Value(vv));
        self.value_loop.insert(vv, self.current_sir_loop());
        vv
    }

    fn map_op(&mut self, op: Operand) -> VOperand {
        match op {
            Operand::Const(c) => VOperand::Const(c),
            Operand::Value(v) => *self
                .value_map
                .get(&v)
                .unwrap_or_else(|| panic!("use of untranslated value {v}")),
        }
    }

    fn emit(&mut self, pred: Predicate, item: Item) {
        let iter = self.current_iter();
        self.list_stack
            .last_mut()
            .unwrap()
            .push(Entry { pred, iter, item });
    }

    fn visit_nodes(&mut self, nodes: &[StructNode]) {
        for n in nodes {
            match n {
                StructNode::Block(b) => self.visit_block(*b),
                StructNode::Loop(w) => self.visit_loop(w),
            }
        }
    }

    fn visit_block(&mut self, b: BlockId) {
        let pred = self.block_pred(b);
        if !self.headers.contains(&b) {
            // Merge parameters become selects (headers are handled by the
            // loop's with list instead).
            let params = self.sir.block(b).params.clone();
            for (i, p) in params.iter().enumerate() {
                self.translate_merge_param(b, i, *p, &pred);
            }
        }
        let instrs = self.sir.block(b).instrs.clone();
        for instr in instrs {
            self.translate_instr(&instr, pred.clone());
        }
    }

    fn visit_loop(&mut self, w: &LoopWrapper) {
        // Pre-header instructions execute at the parent layer; forwarding
        // is empty but its predicate participates in post-loop merges.
        self.visit_block(w.pre_header);
        let _ = self.block_pred(w.forwarding);

        let entry_formula = self.merge_formula(w.header);
        let loop_pred = simplify_predicate(&entry_formula);
        self.preds.raw.insert(w.header, entry_formula);
        self.preds
            .simplified
            .insert(w.header, loop_pred.clone());
        self.loop_entry_pred.insert(w.id, loop_pred.clone());

        let vloop = self.vf.new_loop_id();

        // Build the with list from header parameters.
        let header_params = self.sir.block(w.header).params.clone();
        let entry_args: Vec<Operand> = self
            .sir
            .in_edges(w.header)
            .find(|(_, e)| e.src == w.pre_header)
            .map(|(_, e)| e.args.clone())
            .unwrap_or_default();
        let back_args: Vec<Operand> = self
            .sir
            .in_edges(w.header)
            .find(|(_, e)| e.src == w.latch)
            .map(|(_, e)| e.args.clone())
            .unwrap_or_default();

        let mut with_defs = Vec::new();
        for (i, p) in header_params.iter().enumerate() {
            let init = self.map_op(entry_args[i]);
            let result = self.map_def(*p);
            self.value_loop.insert(result, Some(w.id));
            let induction = w.induction_vars.iter().find(|iv| iv.value == *p);
            match induction {
                Some(iv) => {
                    let recur_v = back_args[i].as_value().expect("induction recurrence");
                    let recur = self.map_def(recur_v);
                    self.value_loop.insert(recur, Some(w.id));
                    with_defs.push(WithDef::Iota {
                        result,
                        init,
                        recur,
                        step: iv.step,
                    });
                }
                None => {
                    let next = match back_args[i] {
                        Operand::Value(v) => {
                            let vv = self.map_def(v);
                            self.value_loop.insert(vv, Some(w.id));
                            VOperand::Value(vv)
                        }
                        Operand::Const(c) => VOperand::Const(c),
                    };
                    with_defs.push(WithDef::Mu { result, init, next });
                }
            }
        }

        let iterator = w.iter_pattern.as_ref().map(|p| VirIterator {
            init: p.init.clone(),
            bound: p.bound.clone(),
            step: p.step,
            cmp: p.cmp,
            entry_atom: w
                .entry_cond
                .as_value()
                .and_then(|v| self.map_op(Operand::Value(v)).as_value()),
            counter: match self.value_map[&p.counter] {
                VOperand::Value(vv) => vv,
                _ => unreachable!("counter is a header param"),
            },
        });

        // Body entries start from a base predicate of true.
        self.memo.insert(w.header, Predicate::True);
        self.loop_stack.push((w.id, vloop));
        self.list_stack.push(Vec::new());
        self.visit_nodes(&w.children[2..]);
        let body = self.list_stack.pop().unwrap();
        self.loop_stack.pop();

        let latch = match w.latch_cond {
            Operand::Const(ConstVal::Bool(bv)) => Predicate::constant(bv),
            Operand::Const(_) => unreachable!("latch condition is boolean"),
            Operand::Value(v) => match self.map_op(Operand::Value(v)) {
                VOperand::Value(vv) => Predicate::atom(PredAtom(vv.0)),
                VOperand::Const(ConstVal::Bool(bv)) => Predicate::constant(bv),
                _ => unreachable!("latch condition is boolean"),
            },
        };

        let item = LoopItem {
            id: vloop,
            with_defs,
            body,
            latch,
            iterator,
            results: Vec::new(),
            no_unroll: false,
            fuse_degree: 1,
        };
        self.emit(loop_pred, Item::Loop(item));
        let depth = self.list_stack.len() - 1;
        let idx = self.list_stack[depth].len() - 1;
        self.loop_positions.insert(w.id, (depth, idx));
    }

    /// The loop that contains `src` but not `dst`, if any (outermost such).
    fn exit_crossing(&self, src: BlockId, dst: BlockId) -> Option<crate::sir::LoopId> {
        let src_chain = self.loop_ancestry.get(&src)?;
        let empty = Vec::new();
        let dst_chain = self.loop_ancestry.get(&dst).unwrap_or(&empty);
        src_chain.iter().find(|l| !dst_chain.contains(l)).copied()
    }

    fn cond_to_expr(&mut self, cond: EdgeCond) -> PredExpr {
        let op_expr = |b: &mut Self, op: Operand| match op {
            Operand::Const(ConstVal::Bool(v)) => PredExpr::Const(v),
            Operand::Const(_) => unreachable!("edge condition is boolean"),
            Operand::Value(v) => match b.map_op(Operand::Value(v)) {
                VOperand::Value(vv) => PredExpr::Atom(PredAtom(vv.0)),
                VOperand::Const(ConstVal::Bool(cv)) => PredExpr::Const(cv),
                _ => unreachable!("edge condition is boolean"),
            },
        };
        match cond {
            EdgeCond::Always => PredExpr::Const(true),
            EdgeCond::True(op) => op_expr(self, op),
            EdgeCond::False(op) => PredExpr::Not(Box::new(op_expr(self, op))),
        }
    }

    /// The raw `OR(c_i AND cp_i)` formula over non-back-edge predecessors.
    fn merge_formula(&mut self, b: BlockId) -> PredExpr {
        let in_edges: Vec<(BlockId, EdgeCond)> = self
            .sir
            .in_edges(b)
            .filter(|(_, e)| !self.back_edges.contains(&(e.src, e.dst)))
            .map(|(_, e)| (e.src, e.cond))
            .collect();
        let mut acc: Option<PredExpr> = None;
        for (src, cond) in in_edges {
            let term = match self.exit_crossing(src, b) {
                Some(l) => {
                    // Loop exit: once entered, the loop certainly exits, so
                    // the contribution is the loop entry's own predicate.
                    let p = self.loop_entry_pred[&l].clone();
                    pred_to_expr(&p)
                }
                None => {
                    let cp = self.block_pred(src);
                    PredExpr::And(
                        Box::new(self.cond_to_expr(cond)),
                        Box::new(pred_to_expr(&cp)),
                    )
                }
            };
            acc = Some(match acc {
                None => term,
                Some(prev) => PredExpr::Or(Box::new(prev), Box::new(term)),
            });
        }
        acc.unwrap_or(PredExpr::Const(false))
    }

    fn block_pred(&mut self, b: BlockId) -> Predicate {
        if let Some(p) = self.memo.get(&b) {
            return p.clone();
        }
        let pred = if b == self.sir.entry {
            Predicate::True
        } else {
            let formula = self.merge_formula(b);
            let p = simplify_predicate(&formula);
            self.preds.raw.insert(b, formula);
            p
        };
        self.memo.insert(b, pred.clone());
        self.preds.simplified.insert(b, pred.clone());
        pred
    }

    /// One predecessor contribution to a merge: its predicate and the
    /// translated incoming value.
    fn merge_contribution(
        &mut self,
        src: BlockId,
        dst: BlockId,
        cond: EdgeCond,
        arg: Operand,
        ty: Scalar,
    ) -> (Predicate, VOperand) {
        match self.exit_crossing(src, dst) {
            Some(l) => {
                let pred = self.loop_entry_pred[&l].clone();
                let value = match arg {
                    Operand::Const(c) => VOperand::Const(c),
                    Operand::Value(v) => {
                        let inner = self.map_op(Operand::Value(v));
                        match inner {
                            VOperand::Value(vv)
                                if self.value_loop.get(&vv) == Some(&Some(l)) =>
                            {
                                VOperand::Value(self.loop_alias(l, vv, ty))
                            }
                            other => other,
                        }
                    }
                };
                (pred, value)
            }
            None => {
                let cp = self.block_pred(src);
                let c = self.cond_to_expr(cond);
                let pred = simplify_predicate(&c).and(&cp);
                (pred, self.map_op(arg))
            }
        }
    }

    /// Alias for a loop-carried value used after the loop.
    fn loop_alias(
        &mut self,
        l: crate::sir::LoopId,
        inner: super::VirValue,
        ty: Scalar,
    ) -> super::VirValue {
        if let Some(a) = self.alias_map.get(&(l, inner)) {
            return *a;
        }
        let outer = self.vf.new_value(ty, 1, None);
        let (depth, idx) = self.loop_positions[&l];
        match &mut self.list_stack[depth][idx].item {
            Item::Loop(item) => item.results.push((outer, VOperand::Value(inner))),
            _ => unreachable!("loop position tracks a loop entry"),
        }
        self.alias_map.insert((l, inner), outer);
        // The alias is defined at the loop's own layer.
        let parent_loop = if depth == 0 {
            None
        } else {
            Some(self.loop_stack[depth - 1].0)
        };
        self.value_loop.insert(outer, parent_loop);
        outer
    }

    fn translate_merge_param(
        &mut self,
        b: BlockId,
        idx: usize,
        param: crate::sir::ValueId,
        block_pred: &Predicate,
    ) {
        let ty = self.sir.value_ty(param);
        if block_pred.is_false() {
            // Unreachable merge; bind a placeholder so dead entries stay
            // well formed.
            self.value_map
                .insert(param, VOperand::Const(ConstVal::zero(ty)));
            return;
        }
        let edges: Vec<(BlockId, EdgeCond, Operand)> = self
            .sir
            .in_edges(b)
            .filter(|(_, e)| !self.back_edges.contains(&(e.src, e.dst)))
            .map(|(_, e)| (e.src, e.cond, e.args[idx]))
            .collect();
        let mut contributions: Vec<(Predicate, VOperand)> = Vec::new();
        for (src, cond, arg) in edges {
            let (pred, value) = self.merge_contribution(src, b, cond, arg, ty);
            if !pred.is_false() {
                contributions.push((pred, value));
            }
        }
        match contributions.len() {
            0 => {
                self.value_map
                    .insert(param, VOperand::Const(ConstVal::zero(ty)));
            }
            1 => {
                let (_, value) = contributions.pop().unwrap();
                self.value_map.insert(param, value);
            }
            2 => {
                let (p1, v1) = contributions[0].clone();
                let (p2, v2) = contributions[1].clone();
                let (sel, if_true, if_false) = split_selector(&p1, &p2, v1, v2)
                    .unwrap_or_else(|| {
                        panic!(
                            "unstructured merge at {b}: {p1} vs {p2} (internal)",
                        )
                    });
                let result = self.map_def(param);
                let item = Item::Instr(VirInstr {
                    result: Some(result),
                    kind: VirInstrKind::Select {
                        ty,
                        cond: VOperand::Value(super::VirValue(sel.0)),
                        if_true,
                        if_false,
                    },
                });
                self.emit(block_pred.clone(), item);
            }
            n => panic!("merge at {b} has {n} live predecessors (internal)"),
        }
    }

    fn translate_instr(&mut self, instr: &crate::sir::SirInstr, pred: Predicate) {
        let kind = match &instr.kind {
            SirInstrKind::Bin { op, lhs, rhs } => VirInstrKind::Bin {
                op: *op,
                // The operand element type (comparisons produce bool but
                // compare at their operand type).
                ty: match lhs {
                    Operand::Value(v) => self.sir.value_ty(*v),
                    Operand::Const(c) => c.ty(),
                },
                lhs: self.map_op(*lhs),
                rhs: self.map_op(*rhs),
            },
            SirInstrKind::Un { op, operand } => VirInstrKind::Un {
                op: *op,
                ty: instr
                    .result
                    .map(|r| self.sir.value_ty(r))
                    .unwrap_or(Scalar::I32),
                operand: self.map_op(*operand),
            },
            SirInstrKind::Cast { to, operand } => VirInstrKind::Cast {
                to: *to,
                operand: self.map_op(*operand),
            },
            SirInstrKind::Load { array, index } => VirInstrKind::Load {
                array: *array,
                elem: instr.result.map(|r| self.sir.value_ty(r)).unwrap(),
                index: self.map_op(*index),
            },
            SirInstrKind::Store {
                array,
                index,
                value,
            } => {
                let elem = match value {
                    Operand::Value(v) => self.sir.value_ty(*v),
                    Operand::Const(c) => c.ty(),
                };
                VirInstrKind::Store {
                    array: *array,
                    elem,
                    index: self.map_op(*index),
                    value: self.map_op(*value),
                }
            }
            SirInstrKind::Call { callee, args } => VirInstrKind::Call {
                callee: callee.clone(),
                args: args.iter().map(|a| self.map_op(*a)).collect(),
                ret: instr.result.map(|r| self.sir.value_ty(r)),
            },
            SirInstrKind::ReadVar { .. } | SirInstrKind::WriteVar { .. } => {
                unreachable!("pseudo instructions eliminated by SSA")
            }
        };
        let result = instr.result.map(|r| self.map_def(r));
        self.emit(
            pred,
            Item::Instr(VirInstr {
                result,
                kind,
            }),
        );
    }
}

/// Expand a canonical predicate back into a formula tree.
pub fn pred_to_expr(p: &Predicate) -> PredExpr {
    match p {
        Predicate::True => PredExpr::Const(true),
        Predicate::False => PredExpr::Const(false),
        Predicate::Dnf(terms) => {
            let mut acc: Option<PredExpr> = None;
            for t in terms {
                let mut term_acc: Option<PredExpr> = None;
                for l in t.literals() {
                    let lit = if l.positive {
                        PredExpr::Atom(l.atom)
                    } else {
                        PredExpr::Not(Box::new(PredExpr::Atom(l.atom)))
                    };
                    term_acc = Some(match term_acc {
                        None => lit,
                        Some(prev) => PredExpr::And(Box::new(prev), Box::new(lit)),
                    });
                }
                let term = term_acc.unwrap_or(PredExpr::Const(true));
                acc = Some(match acc {
                    None => term,
                    Some(prev) => PredExpr::Or(Box::new(prev), Box::new(term)),
                });
            }
            acc.unwrap_or(PredExpr::Const(false))
        }
    }
}

/// For two complementary single-term predicates differing in exactly one
/// literal, return (selector atom, value-if-true, value-if-false).
fn split_selector(
    p1: &Predicate,
    p2: &Predicate,
    v1: VOperand,
    v2: VOperand,
) -> Option<(PredAtom, VOperand, VOperand)> {
    let lits = |p: &Predicate| -> Option<Vec<Literal>> {
        match p {
            Predicate::Dnf(ts) if ts.len() == 1 => Some(ts[0].literals().to_vec()),
            Predicate::True => Some(vec![]),
            _ => None,
        }
    };
    let l1 = lits(p1)?;
    let l2 = lits(p2)?;
    // Find the literal of p1 whose complement is in p2, with the rest equal.
    for lit in &l1 {
        if l2.contains(&lit.complement()) {
            let rest1: Vec<&Literal> = l1.iter().filter(|l| *l != lit).collect();
            let rest2: Vec<&Literal> =
                l2.iter().filter(|l| **l != lit.complement()).collect();
            if rest1 == rest2 {
                return if lit.positive {
                    Some((lit.atom, v1, v2))
                } else {
                    Some((lit.atom, v2, v1))
                };
            }
        }
    }
    None
}
