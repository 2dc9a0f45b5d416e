//! Control-flow-graph reconstruction: VIR to LIR.
//!
//! Per layer, straight-line regions partition by control predicate: a run
//! of entries under one non-trivial predicate becomes a guarded block
//! (predicates consumed as masks were already folded into masked vector
//! instructions upstream and lower inline). A loop entry acts as a
//! placeholder that splits its block: the first half jumps to the loop
//! header, and the latch branches back to the header or onward to the
//! second half. Loop-carried values live in registers updated in the
//! latch, so no phis are needed.

use std::collections::HashMap;

use crate::lir::{LOperand, LirBlock, LirFunction, LirInst, Reg, Terminator};
use crate::predicate::Predicate;
use crate::types::{BinOp, ConstVal, Scalar, UnOp};
use crate::vir::{
    CodeList, Item, LoopItem, VOperand, VirFunction, VirInstr, VirInstrKind, VirValue, WithDef,
};

/// Lower a (scalar or vectorized) VIR function to LIR.
pub fn lower(vf: &VirFunction) -> LirFunction {
    let mut func = LirFunction {
        name: vf.name.clone(),
        params: vf.params.clone(),
        param_regs: Vec::new(),
        blocks: Vec::new(),
        next_reg: 0,
    };
    // Scalar parameters get registers bound at entry.
    for p in &vf.params {
        match p.kind {
            crate::sir::ParamKind::Scalar(_) => {
                let r = func.new_reg();
                func.param_regs.push(Some(r));
            }
            _ => func.param_regs.push(None),
        }
    }

    let mut lw = Lowerer {
        func,
        regs: HashMap::new(),
        cur: 0,
    };
    lw.func.blocks.push(LirBlock {
        instrs: Vec::new(),
        term: Terminator::Ret(None),
    });
    lw.lower_list(&vf.layer0);
    let ret = vf.ret.map(|r| lw.operand(r));
    lw.func.blocks[lw.cur].term = Terminator::Ret(ret);
    let mut out = lw.func;
    debug_assert!(out.validate().is_ok());
    let _ = &mut out;
    out
}

struct Lowerer {
    func: LirFunction,
    regs: HashMap<VirValue, Reg>,
    cur: usize,
}

impl Lowerer {
    fn new_block(&mut self) -> usize {
        self.func.blocks.push(LirBlock {
            instrs: Vec::new(),
            term: Terminator::Ret(None),
        });
        self.func.blocks.len() - 1
    }

    fn emit(&mut self, inst: LirInst) {
        self.func.blocks[self.cur].instrs.push(inst);
    }

    fn reg_of(&mut self, v: VirValue) -> Reg {
        if let Some(r) = self.regs.get(&v) {
            return *r;
        }
        let r = self.func.new_reg();
        self.regs.insert(v, r);
        r
    }

    fn operand(&mut self, op: VOperand) -> LOperand {
        match op {
            VOperand::Const(c) => LOperand::Imm(c),
            VOperand::Value(v) => LOperand::Reg(self.reg_of(v)),
            VOperand::Param(i) => LOperand::Reg(self.func.param_regs[i].expect("scalar param")),
        }
    }

    /// Materialise a predicate as a boolean operand.
    fn pred_operand(&mut self, p: &Predicate) -> LOperand {
        match p {
            Predicate::True => LOperand::Imm(ConstVal::Bool(true)),
            Predicate::False => LOperand::Imm(ConstVal::Bool(false)),
            Predicate::Dnf(terms) => {
                let mut term_ops: Vec<LOperand> = Vec::new();
                for t in terms {
                    let mut lit_ops: Vec<LOperand> = Vec::new();
                    for lit in t.literals() {
                        let base = LOperand::Reg(self.reg_of(VirValue(lit.atom.0)));
                        if lit.positive {
                            lit_ops.push(base);
                        } else {
                            let dst = self.func.new_reg();
                            self.emit(LirInst::Un {
                                dst,
                                op: UnOp::Not,
                                ty: Scalar::Bool,
                                operand: base,
                            });
                            lit_ops.push(LOperand::Reg(dst));
                        }
                    }
                    let combined = self.fold_bool(lit_ops, BinOp::LogAnd);
                    term_ops.push(combined);
                }
                self.fold_bool(term_ops, BinOp::LogOr)
            }
        }
    }

    fn fold_bool(&mut self, ops: Vec<LOperand>, op: BinOp) -> LOperand {
        let mut it = ops.into_iter();
        let mut acc = it.next().expect("at least one operand");
        for next in it {
            let dst = self.func.new_reg();
            self.emit(LirInst::Bin {
                dst,
                op,
                ty: Scalar::Bool,
                lhs: acc,
                rhs: next,
            });
            acc = LOperand::Reg(dst);
        }
        acc
    }

    /// Lower one code list into the current block chain.
    fn lower_list(&mut self, list: &CodeList) {
        let mut i = 0;
        while i < list.len() {
            let entry = &list[i];
            match &entry.item {
                Item::Loop(l) => {
                    self.lower_guarded(&entry.pred, |lw| lw.lower_loop(l));
                    i += 1;
                }
                Item::Instr(_) => {
                    // Maximal run of instruction entries under one predicate.
                    let pred = entry.pred.clone();
                    let mut j = i;
                    while j < list.len()
                        && list[j].pred == pred
                        && matches!(list[j].item, Item::Instr(_))
                    {
                        j += 1;
                    }
                    let run = &list[i..j];
                    self.lower_guarded(&pred, |lw| {
                        for e in run {
                            if let Item::Instr(instr) = &e.item {
                                lw.lower_instr(instr);
                            }
                        }
                    });
                    i = j;
                }
            }
        }
    }

    /// Run `body` under a predicate: inline when `true`, skipped when
    /// `false`, and wrapped in a conditional branch otherwise.
    fn lower_guarded(&mut self, pred: &Predicate, body: impl FnOnce(&mut Self)) {
        match pred {
            Predicate::True => body(self),
            Predicate::False => {}
            _ => {
                let cond = self.pred_operand(pred);
                let then_b = self.new_block();
                let merge = self.new_block();
                self.func.blocks[self.cur].term = Terminator::Br {
                    cond,
                    then_to: then_b,
                    else_to: merge,
                };
                self.cur = then_b;
                body(self);
                self.func.blocks[self.cur].term = Terminator::Jump(merge);
                self.cur = merge;
            }
        }
    }

    /// Fig. 8 split: the current block jumps to the loop header; the latch
    /// branches back to the header or to the continuation block.
    fn lower_loop(&mut self, l: &LoopItem) {
        // Pre: initialise carried registers.
        for wd in &l.with_defs {
            let init = self.operand(wd.init());
            let dst = self.reg_of(wd.result());
            self.emit(LirInst::Mov { dst, src: init });
        }
        let header = self.new_block();
        let pre = self.cur;
        self.func.blocks[pre].term = Terminator::Jump(header);
        self.cur = header;
        self.lower_list(&l.body);

        // Latch: advance carried values, bind results, and branch.
        for wd in &l.with_defs {
            match wd {
                WithDef::Iota { result, recur, .. } => {
                    let src = LOperand::Reg(self.reg_of(*recur));
                    let dst = self.reg_of(*result);
                    self.emit(LirInst::Mov { dst, src });
                }
                WithDef::Mu { result, next, .. } => {
                    let src = self.operand(*next);
                    let dst = self.reg_of(*result);
                    self.emit(LirInst::Mov { dst, src });
                }
            }
        }
        for (outer, inner) in &l.results {
            let src = self.operand(*inner);
            let dst = self.reg_of(*outer);
            self.emit(LirInst::Mov { dst, src });
        }
        let cond = self.pred_operand(&l.latch);
        let after = self.new_block();
        self.func.blocks[self.cur].term = Terminator::Br {
            cond,
            then_to: header,
            else_to: after,
        };
        self.cur = after;
    }

    fn lower_instr(&mut self, instr: &VirInstr) {
        let dst = instr.result.map(|r| self.reg_of(r));
        let inst = match &instr.kind {
            VirInstrKind::Bin { op, ty, lhs, rhs } => LirInst::Bin {
                dst: dst.unwrap(),
                op: *op,
                ty: *ty,
                lhs: self.operand(*lhs),
                rhs: self.operand(*rhs),
            },
            VirInstrKind::Un { op, ty, operand } => LirInst::Un {
                dst: dst.unwrap(),
                op: *op,
                ty: *ty,
                operand: self.operand(*operand),
            },
            VirInstrKind::Cast { to, operand } => LirInst::Cast {
                dst: dst.unwrap(),
                to: *to,
                operand: self.operand(*operand),
            },
            VirInstrKind::Select {
                ty,
                cond,
                if_true,
                if_false,
            } => LirInst::Select {
                dst: dst.unwrap(),
                ty: *ty,
                cond: self.operand(*cond),
                if_true: self.operand(*if_true),
                if_false: self.operand(*if_false),
            },
            VirInstrKind::Load { array, elem, index } => LirInst::Load {
                dst: dst.unwrap(),
                array: *array,
                elem: *elem,
                index: self.operand(*index),
            },
            VirInstrKind::Store {
                array,
                elem,
                index,
                value,
            } => LirInst::Store {
                array: *array,
                elem: *elem,
                index: self.operand(*index),
                value: self.operand(*value),
            },
            VirInstrKind::Call { callee, args, ret } => LirInst::Call {
                dst,
                callee: callee.clone(),
                args: args.iter().map(|a| self.operand(*a)).collect(),
                ret: *ret,
            },
            VirInstrKind::VConst { elem, lanes } => LirInst::VConst {
                dst: dst.unwrap(),
                elem: *elem,
                lanes: lanes.clone(),
            },
            VirInstrKind::VBroadcast { elem, lanes, scalar } => LirInst::VBroadcast {
                dst: dst.unwrap(),
                elem: *elem,
                lanes: *lanes,
                scalar: self.operand(*scalar),
            },
            VirInstrKind::VBin {
                op,
                elem,
                lanes,
                lhs,
                rhs,
            } => LirInst::VBin {
                dst: dst.unwrap(),
                op: *op,
                elem: *elem,
                lanes: *lanes,
                lhs: self.operand(*lhs),
                rhs: self.operand(*rhs),
            },
            VirInstrKind::VUn {
                op,
                elem,
                lanes,
                operand,
            } => LirInst::VUn {
                dst: dst.unwrap(),
                op: *op,
                elem: *elem,
                lanes: *lanes,
                operand: self.operand(*operand),
            },
            VirInstrKind::VCast { to, lanes, operand } => LirInst::VCast {
                dst: dst.unwrap(),
                to: *to,
                lanes: *lanes,
                operand: self.operand(*operand),
            },
            VirInstrKind::VSelect {
                elem,
                lanes,
                mask,
                if_true,
                if_false,
            } => LirInst::VSelect {
                dst: dst.unwrap(),
                elem: *elem,
                lanes: *lanes,
                mask: self.operand(*mask),
                if_true: self.operand(*if_true),
                if_false: self.operand(*if_false),
            },
            VirInstrKind::VLoad {
                array,
                elem,
                lanes,
                index,
            } => LirInst::VLoad {
                dst: dst.unwrap(),
                array: *array,
                elem: *elem,
                lanes: *lanes,
                index: self.operand(*index),
            },
            VirInstrKind::VStore {
                array,
                elem,
                lanes,
                index,
                value,
                mask,
            } => LirInst::VStore {
                array: *array,
                elem: *elem,
                lanes: *lanes,
                index: self.operand(*index),
                value: self.operand(*value),
                mask: mask.map(|m| self.operand(m)),
            },
            VirInstrKind::VInsert {
                elem,
                lanes,
                vec,
                lane,
                scalar,
            } => LirInst::VInsert {
                dst: dst.unwrap(),
                elem: *elem,
                lanes: *lanes,
                vec: self.operand(*vec),
                lane: *lane,
                scalar: self.operand(*scalar),
            },
            VirInstrKind::VExtract {
                elem,
                lanes,
                vec,
                lane,
            } => LirInst::VExtract {
                dst: dst.unwrap(),
                elem: *elem,
                lanes: *lanes,
                vec: self.operand(*vec),
                lane: *lane,
            },
        };
        self.emit(inst);
    }
}
