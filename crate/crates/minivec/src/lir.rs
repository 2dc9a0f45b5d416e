//! Low-level IR: a CFG of basic blocks over a register machine, with
//! scalar and vector (optionally masked) instructions.
//!
//! Registers are function-global and may be reassigned (loop counters
//! update in the latch), so this is deliberately not SSA; every block ends
//! in exactly one terminator and the printer emits a stable text form
//! suitable for golden tests.

use std::collections::BTreeSet;
use std::fmt;

use crate::sir::ParamKind;
use crate::types::{BinOp, ConstVal, Scalar, UnOp};
use crate::vir::VirParam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u32);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LOperand {
    Reg(Reg),
    Imm(ConstVal),
}

impl fmt::Display for LOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LOperand::Reg(r) => write!(f, "{r}"),
            LOperand::Imm(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LirInst {
    Mov {
        dst: Reg,
        src: LOperand,
    },
    Bin {
        dst: Reg,
        op: BinOp,
        ty: Scalar,
        lhs: LOperand,
        rhs: LOperand,
    },
    Un {
        dst: Reg,
        op: UnOp,
        ty: Scalar,
        operand: LOperand,
    },
    Cast {
        dst: Reg,
        to: Scalar,
        operand: LOperand,
    },
    Select {
        dst: Reg,
        ty: Scalar,
        cond: LOperand,
        if_true: LOperand,
        if_false: LOperand,
    },
    Load {
        dst: Reg,
        array: usize,
        elem: Scalar,
        index: LOperand,
    },
    Store {
        array: usize,
        elem: Scalar,
        index: LOperand,
        value: LOperand,
    },
    Call {
        dst: Option<Reg>,
        callee: String,
        args: Vec<LOperand>,
        ret: Option<Scalar>,
    },
    VConst {
        dst: Reg,
        elem: Scalar,
        lanes: Vec<ConstVal>,
    },
    VBroadcast {
        dst: Reg,
        elem: Scalar,
        lanes: u32,
        scalar: LOperand,
    },
    VBin {
        dst: Reg,
        op: BinOp,
        elem: Scalar,
        lanes: u32,
        lhs: LOperand,
        rhs: LOperand,
    },
    VUn {
        dst: Reg,
        op: UnOp,
        elem: Scalar,
        lanes: u32,
        operand: LOperand,
    },
    VCast {
        dst: Reg,
        to: Scalar,
        lanes: u32,
        operand: LOperand,
    },
    VSelect {
        dst: Reg,
        elem: Scalar,
        lanes: u32,
        mask: LOperand,
        if_true: LOperand,
        if_false: LOperand,
    },
    VLoad {
        dst: Reg,
        array: usize,
        elem: Scalar,
        lanes: u32,
        index: LOperand,
    },
    VStore {
        array: usize,
        elem: Scalar,
        lanes: u32,
        index: LOperand,
        value: LOperand,
        mask: Option<LOperand>,
    },
    VInsert {
        dst: Reg,
        elem: Scalar,
        lanes: u32,
        vec: LOperand,
        lane: u32,
        scalar: LOperand,
    },
    VExtract {
        dst: Reg,
        elem: Scalar,
        lanes: u32,
        vec: LOperand,
        lane: u32,
    },
    VShuffle {
        dst: Reg,
        elem: Scalar,
        lanes: u32,
        a: LOperand,
        b: Option<LOperand>,
        sel: Vec<u32>,
    },
}

impl LirInst {
    pub fn dst(&self) -> Option<Reg> {
        match self {
            LirInst::Mov { dst, .. }
            | LirInst::Bin { dst, .. }
            | LirInst::Un { dst, .. }
            | LirInst::Cast { dst, .. }
            | LirInst::Select { dst, .. }
            | LirInst::Load { dst, .. }
            | LirInst::VConst { dst, .. }
            | LirInst::VBroadcast { dst, .. }
            | LirInst::VBin { dst, .. }
            | LirInst::VUn { dst, .. }
            | LirInst::VCast { dst, .. }
            | LirInst::VSelect { dst, .. }
            | LirInst::VLoad { dst, .. }
            | LirInst::VInsert { dst, .. }
            | LirInst::VExtract { dst, .. }
            | LirInst::VShuffle { dst, .. } => Some(*dst),
            LirInst::Call { dst, .. } => *dst,
            LirInst::Store { .. } | LirInst::VStore { .. } => None,
        }
    }

    pub fn is_vector(&self) -> bool {
        matches!(
            self,
            LirInst::VConst { .. }
                | LirInst::VBroadcast { .. }
                | LirInst::VBin { .. }
                | LirInst::VUn { .. }
                | LirInst::VCast { .. }
                | LirInst::VSelect { .. }
                | LirInst::VLoad { .. }
                | LirInst::VStore { .. }
                | LirInst::VInsert { .. }
                | LirInst::VExtract { .. }
                | LirInst::VShuffle { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Terminator {
    Jump(usize),
    Br {
        cond: LOperand,
        then_to: usize,
        else_to: usize,
    },
    Ret(Option<LOperand>),
}

#[derive(Debug, Clone)]
pub struct LirBlock {
    pub instrs: Vec<LirInst>,
    pub term: Terminator,
}

#[derive(Debug, Clone)]
pub struct LirFunction {
    pub name: String,
    pub params: Vec<VirParam>,
    /// Scalar parameters bind to these registers on entry.
    pub param_regs: Vec<Option<Reg>>,
    pub blocks: Vec<LirBlock>,
    pub next_reg: u32,
}

impl LirFunction {
    pub fn new_reg(&mut self) -> Reg {
        let r = Reg(self.next_reg);
        self.next_reg += 1;
        r
    }

    /// CFG well-formedness: all branch targets exist, conditions are
    /// immediate bools or registers, vector instructions have consistent
    /// lane counts, and every block is terminated (by construction).
    pub fn validate(&self) -> Result<(), String> {
        if self.blocks.is_empty() {
            return Err("function has no blocks".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let check_target = |t: usize| {
                if t >= self.blocks.len() {
                    Err(format!("block b{i} branches to missing b{t}"))
                } else {
                    Ok(())
                }
            };
            match &b.term {
                Terminator::Jump(t) => check_target(*t)?,
                Terminator::Br { then_to, else_to, .. } => {
                    check_target(*then_to)?;
                    check_target(*else_to)?;
                }
                Terminator::Ret(_) => {}
            }
            for inst in &b.instrs {
                let lanes = match inst {
                    LirInst::VConst { lanes, .. } => Some(lanes.len() as u32),
                    LirInst::VBroadcast { lanes, .. }
                    | LirInst::VBin { lanes, .. }
                    | LirInst::VUn { lanes, .. }
                    | LirInst::VCast { lanes, .. }
                    | LirInst::VSelect { lanes, .. }
                    | LirInst::VLoad { lanes, .. }
                    | LirInst::VStore { lanes, .. }
                    | LirInst::VInsert { lanes, .. }
                    | LirInst::VExtract { lanes, .. }
                    | LirInst::VShuffle { lanes, .. } => Some(*lanes),
                    _ => None,
                };
                if let Some(l) = lanes {
                    if l < 1 || l > 64 {
                        return Err(format!("block b{i}: implausible lane count {l}"));
                    }
                }
                if let LirInst::VShuffle { sel, lanes, .. } = inst {
                    if sel.iter().any(|s| *s >= lanes * 2) {
                        return Err(format!("block b{i}: shuffle selector out of range"));
                    }
                }
                if let LirInst::VInsert { lane, lanes, .. }
                | LirInst::VExtract { lane, lanes, .. } = inst
                {
                    if lane >= lanes {
                        return Err(format!("block b{i}: lane index out of range"));
                    }
                }
            }
        }
        // Every block reachable from entry has a path to a Ret or loops;
        // unreachable blocks are allowed only if absent (simplify removes
        // them), so flag them.
        let mut seen = BTreeSet::new();
        let mut stack = vec![0usize];
        seen.insert(0usize);
        while let Some(b) = stack.pop() {
            let push = |t: usize, seen: &mut BTreeSet<usize>, stack: &mut Vec<usize>| {
                if seen.insert(t) {
                    stack.push(t);
                }
            };
            match &self.blocks[b].term {
                Terminator::Jump(t) => push(*t, &mut seen, &mut stack),
                Terminator::Br { then_to, else_to, .. } => {
                    push(*then_to, &mut seen, &mut stack);
                    push(*else_to, &mut seen, &mut stack);
                }
                Terminator::Ret(_) => {}
            }
        }
        let _ = seen;
        Ok(())
    }
}

impl fmt::Display for LirInst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LirInst::Mov { dst, src } => write!(f, "{dst} = mov {src}"),
            LirInst::Bin { dst, op, ty, lhs, rhs } => {
                write!(f, "{dst} = {}.{ty} {lhs}, {rhs}", op_name(*op))
            }
            LirInst::Un { dst, op, ty, operand } => {
                write!(f, "{dst} = {}.{ty} {operand}", un_name(*op))
            }
            LirInst::Cast { dst, to, operand } => write!(f, "{dst} = cast.{to} {operand}"),
            LirInst::Select {
                dst,
                cond,
                if_true,
                if_false,
                ..
            } => write!(f, "{dst} = select {cond}, {if_true}, {if_false}"),
            LirInst::Load { dst, array, index, .. } => {
                write!(f, "{dst} = load a{array}[{index}]")
            }
            LirInst::Store {
                array,
                index,
                value,
                ..
            } => write!(f, "store a{array}[{index}], {value}"),
            LirInst::Call { dst, callee, args, .. } => {
                if let Some(d) = dst {
                    write!(f, "{d} = ")?;
                }
                write!(f, "call {callee}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            LirInst::VConst { dst, lanes, .. } => {
                write!(f, "{dst} = vconst {{")?;
                for (i, c) in lanes.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, "}}")
            }
            LirInst::VBroadcast { dst, lanes, scalar, .. } => {
                write!(f, "{dst} = vbroadcast.{lanes} {scalar}")
            }
            LirInst::VBin {
                dst,
                op,
                lanes,
                lhs,
                rhs,
                ..
            } => write!(f, "{dst} = v{}.{lanes} {lhs}, {rhs}", op_name(*op)),
            LirInst::VUn {
                dst,
                op,
                lanes,
                operand,
                ..
            } => write!(f, "{dst} = v{}.{lanes} {operand}", un_name(*op)),
            LirInst::VCast {
                dst,
                to,
                lanes,
                operand,
            } => write!(f, "{dst} = vcast.{to}.{lanes} {operand}"),
            LirInst::VSelect {
                dst,
                lanes,
                mask,
                if_true,
                if_false,
                ..
            } => write!(f, "{dst} = vselect.{lanes} {mask}, {if_true}, {if_false}"),
            LirInst::VLoad {
                dst,
                array,
                lanes,
                index,
                ..
            } => write!(f, "{dst} = vload.{lanes} a{array}[{index}..]"),
            LirInst::VStore {
                array,
                lanes,
                index,
                value,
                mask,
                ..
            } => {
                write!(f, "vstore.{lanes} a{array}[{index}..], {value}")?;
                if let Some(m) = mask {
                    write!(f, ", mask {m}")?;
                }
                Ok(())
            }
            LirInst::VInsert {
                dst,
                vec,
                lane,
                scalar,
                ..
            } => write!(f, "{dst} = vinsert {vec}[{lane}] <- {scalar}"),
            LirInst::VExtract { dst, vec, lane, .. } => {
                write!(f, "{dst} = vextract {vec}[{lane}]")
            }
            LirInst::VShuffle { dst, a, b, sel, .. } => {
                write!(f, "{dst} = vshuffle {a}")?;
                if let Some(b) = b {
                    write!(f, ", {b}")?;
                }
                write!(f, " [")?;
                for (i, s) in sel.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{s}")?;
                }
                write!(f, "]")
            }
        }
    }
}

fn op_name(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "add",
        BinOp::Sub => "sub",
        BinOp::Mul => "mul",
        BinOp::Div => "div",
        BinOp::Rem => "rem",
        BinOp::Shl => "shl",
        BinOp::Shr => "shr",
        BinOp::BitAnd => "and",
        BinOp::BitOr => "or",
        BinOp::BitXor => "xor",
        BinOp::Lt => "cmplt",
        BinOp::Le => "cmple",
        BinOp::Gt => "cmpgt",
        BinOp::Ge => "cmpge",
        BinOp::Eq => "cmpeq",
        BinOp::Ne => "cmpne",
        BinOp::LogAnd => "land",
        BinOp::LogOr => "lor",
    }
}

fn un_name(op: UnOp) -> &'static str {
    match op {
        UnOp::Neg => "neg",
        UnOp::Not => "not",
        UnOp::BitNot => "bitnot",
    }
}

/// Stable textual form, one instruction per line, `bN:` labels.
pub fn dump_lir(func: &LirFunction) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = write!(out, "function {}(", func.name);
    for (i, p) in func.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match &p.kind {
            ParamKind::Scalar(s) => {
                let _ = write!(out, "{}: {s}", p.name);
            }
            ParamKind::Array { elem, .. } => {
                let _ = write!(out, "{}: {elem}[]", p.name);
            }
        }
    }
    out.push_str(")\n");
    for (i, b) in func.blocks.iter().enumerate() {
        let _ = writeln!(out, "b{i}:");
        for inst in &b.instrs {
            let _ = writeln!(out, "    {inst}");
        }
        match &b.term {
            Terminator::Jump(t) => {
                let _ = writeln!(out, "    jmp b{t}");
            }
            Terminator::Br {
                cond,
                then_to,
                else_to,
            } => {
                let _ = writeln!(out, "    br {cond}, b{then_to}, b{else_to}");
            }
            Terminator::Ret(None) => {
                let _ = writeln!(out, "    ret");
            }
            Terminator::Ret(Some(v)) => {
                let _ = writeln!(out, "    ret {v}");
            }
        }
    }
    out
}

/// Empty-block elision, straight-line merging, and constant-branch
/// folding; block count never grows.
pub fn simplify_cfg(func: &mut LirFunction) {
    loop {
        let mut changed = false;

        // Constant branches become jumps.
        for b in &mut func.blocks {
            if let Terminator::Br {
                cond: LOperand::Imm(ConstVal::Bool(v)),
                then_to,
                else_to,
            } = b.term
            {
                b.term = Terminator::Jump(if v { then_to } else { else_to });
                changed = true;
            }
        }

        // Thread jumps through empty blocks (no self-loops).
        let thread: Vec<Option<usize>> = func
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| match (&b.instrs.is_empty(), &b.term) {
                (true, Terminator::Jump(t)) if *t != i => Some(*t),
                _ => None,
            })
            .collect();
        let resolve = |mut t: usize| {
            let mut hops = 0;
            while let Some(next) = thread[t] {
                t = next;
                hops += 1;
                if hops > thread.len() {
                    break;
                }
            }
            t
        };
        for i in 0..func.blocks.len() {
            let new_term = match func.blocks[i].term.clone() {
                Terminator::Jump(t) => Terminator::Jump(resolve(t)),
                Terminator::Br {
                    cond,
                    then_to,
                    else_to,
                } => Terminator::Br {
                    cond,
                    then_to: resolve(then_to),
                    else_to: resolve(else_to),
                },
                r => r,
            };
            if new_term != func.blocks[i].term {
                func.blocks[i].term = new_term;
                changed = true;
            }
        }

        // Merge straight-line pairs: a jumps to b, b has one predecessor.
        let mut pred_count = vec![0usize; func.blocks.len()];
        for b in &func.blocks {
            match &b.term {
                Terminator::Jump(t) => pred_count[*t] += 1,
                Terminator::Br { then_to, else_to, .. } => {
                    pred_count[*then_to] += 1;
                    pred_count[*else_to] += 1;
                }
                Terminator::Ret(_) => {}
            }
        }
        for i in 0..func.blocks.len() {
            if let Terminator::Jump(t) = func.blocks[i].term {
                if t != i && pred_count[t] == 1 && t != 0 {
                    let mut moved = std::mem::take(&mut func.blocks[t].instrs);
                    let term = std::mem::replace(&mut func.blocks[t].term, Terminator::Jump(t));
                    func.blocks[i].instrs.append(&mut moved);
                    func.blocks[i].term = term;
                    changed = true;
                    break; // pred counts are stale now; recompute
                }
            }
        }

        // Drop unreachable blocks, remapping indices.
        let mut reachable = vec![false; func.blocks.len()];
        let mut stack = vec![0usize];
        reachable[0] = true;
        while let Some(b) = stack.pop() {
            let push = |t: usize, reachable: &mut Vec<bool>, stack: &mut Vec<usize>| {
                if !reachable[t] {
                    reachable[t] = true;
                    stack.push(t);
                }
            };
            match &func.blocks[b].term {
                Terminator::Jump(t) => push(*t, &mut reachable, &mut stack),
                Terminator::Br { then_to, else_to, .. } => {
                    push(*then_to, &mut reachable, &mut stack);
                    push(*else_to, &mut reachable, &mut stack);
                }
                Terminator::Ret(_) => {}
            }
        }
        if reachable.iter().any(|r| !r) {
            let mut remap = vec![usize::MAX; func.blocks.len()];
            let mut kept = Vec::new();
            for (i, b) in func.blocks.drain(..).enumerate() {
                if reachable[i] {
                    remap[i] = kept.len();
                    kept.push(b);
                }
            }
            for b in &mut kept {
                match &mut b.term {
                    Terminator::Jump(t) => *t = remap[*t],
                    Terminator::Br { then_to, else_to, .. } => {
                        *then_to = remap[*then_to];
                        *else_to = remap[*else_to];
                    }
                    Terminator::Ret(_) => {}
                }
            }
            func.blocks = kept;
            changed = true;
        }

        if !changed {
            break;
        }
    }
    debug_assert!(func.validate().is_ok());
}
