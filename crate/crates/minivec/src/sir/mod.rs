//! Structural IR: a structure tree over blocks plus a condition-annotated
//! control-flow digraph.
//!
//! Blocks hold straight-line instructions and no terminators; all control
//! flow lives on graph edges, each carrying the condition under which the
//! branch is taken. Loops appear as [`LoopWrapper`] subtrees in canonical
//! do-while form: a pre-header computes the entry check, an empty
//! forwarding block catches the zero-trip path, and the unique latch is
//! the source of the back edge to the unique header.

mod analyze;
mod build;
mod opt;
mod ssa;

pub use analyze::{analyze_iteration, detect_induction_vars, trip_count, value_affine};
pub use build::build_sir;
pub use opt::optimize_sir;
pub use ssa::{check_dominance, to_ssa};

use std::collections::BTreeMap;
use std::fmt;

use crate::affine::AffineExpr;
use crate::diag::Span;
use crate::types::{BinOp, ConstVal, Scalar, UnOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LoopId(pub u32);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

impl fmt::Display for LoopId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Value(ValueId),
    Const(ConstVal),
}

impl Operand {
    pub fn as_value(self) -> Option<ValueId> {
        match self {
            Operand::Value(v) => Some(v),
            Operand::Const(_) => None,
        }
    }

    pub fn as_const(self) -> Option<ConstVal> {
        match self {
            Operand::Const(c) => Some(c),
            Operand::Value(_) => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Value(v) => write!(f, "{v}"),
            Operand::Const(c) => write!(f, "{c}"),
        }
    }
}

/// Where a value is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefSite {
    /// Function scalar parameter.
    Param(usize),
    /// Result of `instrs[idx]` in a block.
    Instr(BlockId, usize),
    /// Block parameter `idx` of a block (phi-equivalent).
    BlockParam(BlockId, usize),
}

#[derive(Debug, Clone)]
pub struct ValueInfo {
    pub ty: Scalar,
    /// Originating variable name, for dumps.
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Scalar(Scalar),
    Array { elem: Scalar, len: ArrayLenRef },
}

/// Array lengths resolve to a constant or a scalar parameter index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayLenRef {
    Const(i64),
    Param(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirParam {
    pub name: String,
    pub kind: ParamKind,
    /// For scalar params: the SSA value representing the incoming argument.
    pub value: Option<ValueId>,
}

#[derive(Debug, Clone)]
pub struct SirInstr {
    pub result: Option<ValueId>,
    pub kind: SirInstrKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SirInstrKind {
    Bin {
        op: BinOp,
        lhs: Operand,
        rhs: Operand,
    },
    Un {
        op: UnOp,
        operand: Operand,
    },
    Cast {
        to: Scalar,
        operand: Operand,
    },
    Load {
        array: usize,
        index: Operand,
    },
    Store {
        array: usize,
        index: Operand,
        value: Operand,
    },
    Call {
        callee: String,
        args: Vec<Operand>,
    },
    /// Pre-SSA variable read; eliminated by [`to_ssa`].
    ReadVar { var: String },
    /// Pre-SSA variable write; eliminated by [`to_ssa`].
    WriteVar { var: String, value: Operand },
}

impl SirInstrKind {
    pub fn is_store(&self) -> bool {
        matches!(self, SirInstrKind::Store { .. })
    }

    pub fn is_call(&self) -> bool {
        matches!(self, SirInstrKind::Call { .. })
    }

    pub fn operands(&self) -> Vec<Operand> {
        match self {
            SirInstrKind::Bin { lhs, rhs, .. } => vec![*lhs, *rhs],
            SirInstrKind::Un { operand, .. } | SirInstrKind::Cast { operand, .. } => {
                vec![*operand]
            }
            SirInstrKind::Load { index, .. } => vec![*index],
            SirInstrKind::Store { index, value, .. } => vec![*index, *value],
            SirInstrKind::Call { args, .. } => args.clone(),
            SirInstrKind::ReadVar { .. } => vec![],
            SirInstrKind::WriteVar { value, .. } => vec![*value],
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match self {
            SirInstrKind::Bin { lhs, rhs, .. } => vec![lhs, rhs],
            SirInstrKind::Un { operand, .. } | SirInstrKind::Cast { operand, .. } => {
                vec![operand]
            }
            SirInstrKind::Load { index, .. } => vec![index],
            SirInstrKind::Store { index, value, .. } => vec![index, value],
            SirInstrKind::Call { args, .. } => args.iter_mut().collect(),
            SirInstrKind::ReadVar { .. } => vec![],
            SirInstrKind::WriteVar { value, .. } => vec![value],
        }
    }

    /// Pure instructions may be removed when their result is dead.
    pub fn is_pure(&self) -> bool {
        !matches!(
            self,
            SirInstrKind::Store { .. } | SirInstrKind::Call { .. } | SirInstrKind::WriteVar { .. }
        )
    }
}

#[derive(Debug, Clone)]
pub struct SirBlock {
    pub id: BlockId,
    /// SSA block parameters (phi-equivalents); empty before [`to_ssa`].
    pub params: Vec<ValueId>,
    pub instrs: Vec<SirInstr>,
}

/// Condition attached to a control-flow edge. Outgoing conditions of a
/// block are mutually exclusive and exhaustive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeCond {
    Always,
    True(Operand),
    False(Operand),
}

impl fmt::Display for EdgeCond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeCond::Always => write!(f, "always"),
            EdgeCond::True(v) => write!(f, "{v}"),
            EdgeCond::False(v) => write!(f, "!{v}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub src: BlockId,
    pub dst: BlockId,
    pub cond: EdgeCond,
    /// Values flowing into `dst`'s block parameters, parallel to them.
    pub args: Vec<Operand>,
}

#[derive(Debug, Clone)]
pub enum StructNode {
    Block(BlockId),
    Loop(LoopWrapper),
}

/// A loop in canonical do-while form.
#[derive(Debug, Clone)]
pub struct LoopWrapper {
    pub id: LoopId,
    pub pre_header: BlockId,
    /// Empty block taken when the entry check fails.
    pub forwarding: BlockId,
    pub header: BlockId,
    pub latch: BlockId,
    /// All leaves in traversal order: pre-header, forwarding, then the
    /// header-to-latch body (which may contain nested wrappers).
    pub children: Vec<StructNode>,
    pub iter_pattern: Option<IterationPattern>,
    pub induction_vars: Vec<InductionVar>,
    /// Entry-check value computed in the pre-header.
    pub entry_cond: Operand,
    /// Back-edge condition value computed in the latch.
    pub latch_cond: Operand,
}

/// A regular iteration pattern: the loop counter walks
/// `init, init + step, ...` while `cmp(counter, bound)` holds.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationPattern {
    /// Header block parameter holding the counter.
    pub counter: ValueId,
    pub init: AffineExpr,
    pub bound: AffineExpr,
    pub step: i64,
    pub cmp: BinOp,
    /// The value carrying `counter + step` in the latch.
    pub next: ValueId,
}

impl IterationPattern {
    /// Same closed form => provably equal trip counts.
    pub fn same_closed_form(&self, other: &IterationPattern) -> bool {
        self.init == other.init
            && self.bound == other.bound
            && self.step == other.step
            && self.cmp == other.cmp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InductionVar {
    /// Header block parameter.
    pub value: ValueId,
    pub init: Operand,
    pub step: i64,
}

#[derive(Debug, Clone)]
pub struct SirFunction {
    pub name: String,
    pub params: Vec<SirParam>,
    pub ret_ty: Option<Scalar>,
    pub ret_val: Option<Operand>,
    pub root: Vec<StructNode>,
    pub blocks: Vec<SirBlock>,
    pub edges: Vec<Edge>,
    pub values: Vec<ValueInfo>,
    pub entry: BlockId,
}

impl SirFunction {
    pub fn block(&self, id: BlockId) -> &SirBlock {
        &self.blocks[id.0 as usize]
    }

    pub fn block_mut(&mut self, id: BlockId) -> &mut SirBlock {
        &mut self.blocks[id.0 as usize]
    }

    pub fn value_ty(&self, v: ValueId) -> Scalar {
        self.values[v.0 as usize].ty
    }

    pub fn new_value(&mut self, ty: Scalar, name: Option<String>) -> ValueId {
        let id = ValueId(self.values.len() as u32);
        self.values.push(ValueInfo { ty, name });
        id
    }

    pub fn in_edges(&self, b: BlockId) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.dst == b)
    }

    pub fn out_edges(&self, b: BlockId) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.src == b)
    }

    pub fn array_name(&self, idx: usize) -> &str {
        &self.params[idx].name
    }

    pub fn scalar_param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// def-site map for every value.
    pub fn def_sites(&self) -> BTreeMap<ValueId, DefSite> {
        let mut map = BTreeMap::new();
        for (i, p) in self.params.iter().enumerate() {
            if let Some(v) = p.value {
                map.insert(v, DefSite::Param(i));
            }
        }
        for block in &self.blocks {
            for (i, p) in block.params.iter().enumerate() {
                map.insert(*p, DefSite::BlockParam(block.id, i));
            }
            for (i, instr) in block.instrs.iter().enumerate() {
                if let Some(r) = instr.result {
                    map.insert(r, DefSite::Instr(block.id, i));
                }
            }
        }
        map
    }

    /// Blocks reachable from the entry.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.blocks.len()];
        let mut stack = vec![self.entry];
        seen[self.entry.0 as usize] = true;
        while let Some(b) = stack.pop() {
            for (_, e) in self.out_edges(b) {
                if !seen[e.dst.0 as usize] {
                    seen[e.dst.0 as usize] = true;
                    stack.push(e.dst);
                }
            }
        }
        seen
    }

    /// Every loop wrapper in the structure tree, outermost first.
    pub fn loops(&self) -> Vec<&LoopWrapper> {
        fn walk<'a>(nodes: &'a [StructNode], out: &mut Vec<&'a LoopWrapper>) {
            for n in nodes {
                if let StructNode::Loop(w) = n {
                    out.push(w);
                    walk(&w.children, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Check the tree/graph consistency invariant: the leaf set of the
    /// structure tree equals the node set of the cfg.
    pub fn check_tree_cfg_consistency(&self) -> Result<(), String> {
        let mut leaves = Vec::new();
        fn collect(nodes: &[StructNode], out: &mut Vec<BlockId>) {
            for n in nodes {
                match n {
                    StructNode::Block(b) => out.push(*b),
                    StructNode::Loop(w) => collect(&w.children, out),
                }
            }
        }
        collect(&self.root, &mut leaves);
        let mut sorted = leaves.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != leaves.len() {
            return Err("a block appears more than once as a tree leaf".into());
        }
        if leaves.len() != self.blocks.len() {
            return Err(format!(
                "{} tree leaves but {} cfg nodes",
                leaves.len(),
                self.blocks.len()
            ));
        }
        Ok(())
    }

    /// Check that outgoing edge conditions of every block are mutually
    /// exclusive and exhaustive.
    pub fn check_edge_conditions(&self) -> Result<(), String> {
        for block in &self.blocks {
            let outs: Vec<&Edge> = self.out_edges(block.id).map(|(_, e)| e).collect();
            let ok = match outs.as_slice() {
                [] => true, // exit block
                [e] => matches!(e.cond, EdgeCond::Always),
                [a, b] => match (&a.cond, &b.cond) {
                    (EdgeCond::True(x), EdgeCond::False(y))
                    | (EdgeCond::False(x), EdgeCond::True(y)) => x == y,
                    _ => false,
                },
                _ => false,
            };
            if !ok {
                return Err(format!(
                    "block {} has non-exclusive or non-exhaustive out edges",
                    block.id
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for SirInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = self.result {
            write!(f, "{r} = ")?;
        }
        match &self.kind {
            SirInstrKind::Bin { op, lhs, rhs } => write!(f, "{op} {lhs}, {rhs}"),
            SirInstrKind::Un { op, operand } => write!(f, "{} {operand}", op.symbol()),
            SirInstrKind::Cast { to, operand } => write!(f, "cast.{to} {operand}"),
            SirInstrKind::Load { array, index } => write!(f, "load a{array}[{index}]"),
            SirInstrKind::Store {
                array,
                index,
                value,
            } => write!(f, "store a{array}[{index}], {value}"),
            SirInstrKind::Call { callee, args } => {
                write!(f, "call {callee}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            SirInstrKind::ReadVar { var } => write!(f, "readvar {var}"),
            SirInstrKind::WriteVar { var, value } => write!(f, "writevar {var}, {value}"),
        }
    }
}

/// Dump the three views: structure tree, block contents, and edge table.
pub fn dump_sir(func: &SirFunction) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "function {}", func.name);

    let _ = writeln!(out, "structure:");
    fn tree(out: &mut String, nodes: &[StructNode], depth: usize, func: &SirFunction) {
        for n in nodes {
            match n {
                StructNode::Block(b) => {
                    let _ = writeln!(out, "{}block {b}", "  ".repeat(depth));
                }
                StructNode::Loop(w) => {
                    let _ = writeln!(
                        out,
                        "{}loop {} [pre {} fwd {} hdr {} latch {}]{}",
                        "  ".repeat(depth),
                        w.id,
                        w.pre_header,
                        w.forwarding,
                        w.header,
                        w.latch,
                        match &w.iter_pattern {
                            Some(p) => format!(
                                " iter {{{} from {} while {} {}, step {}}}",
                                p.counter,
                                p.init.display(&func.scalar_param_names()),
                                p.cmp,
                                p.bound.display(&func.scalar_param_names()),
                                p.step
                            ),
                            None => String::new(),
                        }
                    );
                    tree(out, &w.children, depth + 1, func);
                }
            }
        }
    }
    tree(&mut out, &func.root, 1, func);

    let _ = writeln!(out, "blocks:");
    for block in &func.blocks {
        let _ = write!(out, "  {}", block.id);
        if !block.params.is_empty() {
            let params: Vec<String> = block.params.iter().map(|p| p.to_string()).collect();
            let _ = write!(out, "({})", params.join(", "));
        }
        let _ = writeln!(out, ":");
        for instr in &block.instrs {
            let _ = writeln!(out, "    {instr}");
        }
    }

    let _ = writeln!(out, "edges:");
    for e in &func.edges {
        let _ = write!(out, "  {} -> {} [{}]", e.src, e.dst, e.cond);
        if !e.args.is_empty() {
            let args: Vec<String> = e.args.iter().map(|a| a.to_string()).collect();
            let _ = write!(out, " args({})", args.join(", "));
        }
        let _ = writeln!(out);
    }
    if let Some(r) = &func.ret_val {
        let _ = writeln!(out, "return {r}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::typeck::typecheck;
    use crate::types::BinOp;

    fn lower(src: &str) -> SirFunction {
        let prog = typecheck(&parse(src).unwrap()).unwrap();
        build_sir(&prog).unwrap().remove(0)
    }

    fn lower_full(src: &str) -> SirFunction {
        let mut f = lower(src);
        to_ssa(&mut f);
        optimize_sir(&mut f);
        analyze_iteration(&mut f);
        f
    }

    const EVEN: &str = "
void f(i32 a[LENGTH], i32 b[LENGTH], i32 LENGTH) {
    for (i32 i = 0; i < LENGTH; i += 2) { a[i] = a[i] + b[i]; }
}";

    #[test]
    fn for_loop_canonical_shape() {
        let f = lower(EVEN);
        let loops = f.loops();
        assert_eq!(loops.len(), 1);
        let w = loops[0];
        // Forwarding is empty; the entry check lives in the pre-header.
        assert!(f.block(w.forwarding).instrs.is_empty());
        assert!(matches!(w.entry_cond, Operand::Value(_)));
        // The back edge has the latch as its unique source and the header
        // as its unique target.
        let back: Vec<&Edge> = f
            .edges
            .iter()
            .filter(|e| e.dst == w.header && e.src == w.latch)
            .collect();
        assert_eq!(back.len(), 1);
        // Pre-header branches to header or forwarding on the entry check.
        let pre_outs: Vec<&Edge> = f.out_edges(w.pre_header).map(|(_, e)| e).collect();
        assert_eq!(pre_outs.len(), 2);
        f.check_tree_cfg_consistency().unwrap();
        f.check_edge_conditions().unwrap();
    }

    #[test]
    fn straight_line_is_one_block_no_edges() {
        let f = lower("void f(i32 a[4]) { a[0] = 1; a[1] = 2; }");
        assert_eq!(f.blocks.len(), 1);
        assert_eq!(f.edges.len(), 0);
    }

    #[test]
    fn do_while_keeps_forwarding_and_folds_entry() {
        let src = "
void f(i32 a[8], i32 n) {
    i32 i = 0;
    do { a[i] = i; i = i + 1; } while (i < n);
}";
        let mut f = lower(src);
        let w = f.loops()[0];
        assert_eq!(w.entry_cond, Operand::Const(crate::types::ConstVal::Bool(true)));
        let fwd = w.forwarding;
        to_ssa(&mut f);
        optimize_sir(&mut f);
        // After folding, the entry edge is unconditional and forwarding is
        // unreachable (but still present in tree and graph).
        let w = f.loops()[0];
        let pre_outs: Vec<&Edge> = f.out_edges(w.pre_header).map(|(_, e)| e).collect();
        assert_eq!(pre_outs.len(), 1);
        assert!(matches!(pre_outs[0].cond, EdgeCond::Always));
        assert!(!f.reachable()[fwd.0 as usize]);
        f.check_tree_cfg_consistency().unwrap();
        f.check_edge_conditions().unwrap();
    }

    #[test]
    fn ssa_header_param_for_counter() {
        let mut f = lower(EVEN);
        to_ssa(&mut f);
        let w = f.loops()[0];
        let header = f.block(w.header);
        // The counter is loop-carried: exactly one header param, with
        // incoming (pre-header: 0, latch: i+2).
        assert_eq!(header.params.len(), 1);
        let (_, entry_edge) = f
            .in_edges(w.header)
            .find(|(_, e)| e.src == w.pre_header)
            .unwrap();
        assert_eq!(entry_edge.args[0], Operand::Const(crate::types::ConstVal::I32(0)));
        check_dominance(&f).unwrap();
    }

    #[test]
    fn iteration_pattern_for_stepped_loop() {
        let f = lower_full(EVEN);
        let w = f.loops()[0];
        let p = w.iter_pattern.as_ref().expect("pattern detected");
        assert_eq!(p.init, crate::affine::AffineExpr::constant(0));
        assert_eq!(p.bound, crate::affine::AffineExpr::param(2));
        assert_eq!(p.step, 2);
        assert_eq!(p.cmp, BinOp::Lt);
        assert_eq!(w.induction_vars.len(), 1);
        assert_eq!(w.induction_vars[0].step, 2);
        assert_eq!(
            w.induction_vars[0].init,
            Operand::Const(crate::types::ConstVal::I32(0))
        );
    }

    #[test]
    fn irregular_loop_has_no_pattern() {
        let src = "
extern i32 getFlag();
void f(i32 a[4]) {
    i32 i = 0;
    while (getFlag() > 0) { a[0] = i; }
}";
        let f = lower_full(src);
        assert!(f.loops()[0].iter_pattern.is_none());
    }

    #[test]
    fn constant_fold_and_dce() {
        let src = "
void f(i32 b[4]) {
    i32 x = 2 * 3;
    i32 unused = x + 40;
    b[0] = x;
}";
        let f = lower_full(src);
        // Everything folds into a single store of 6.
        let instrs: Vec<&SirInstr> = f
            .blocks
            .iter()
            .flat_map(|b| b.instrs.iter())
            .collect();
        assert_eq!(instrs.len(), 1, "{}", dump_sir(&f));
        assert_eq!(
            instrs[0].kind,
            SirInstrKind::Store {
                array: 0,
                index: Operand::Const(crate::types::ConstVal::I32(0)),
                value: Operand::Const(crate::types::ConstVal::I32(6)),
            }
        );
    }

    #[test]
    fn if_else_merge_gets_block_param() {
        let src = "
void f(i32 a[4], i32 n) {
    i32 x = 0;
    if (n > 0) { x = 1; } else { x = 2; }
    a[0] = x;
}";
        let mut f = lower(src);
        to_ssa(&mut f);
        check_dominance(&f).unwrap();
        let with_params: Vec<&SirBlock> =
            f.blocks.iter().filter(|b| !b.params.is_empty()).collect();
        assert_eq!(with_params.len(), 1);
        assert_eq!(with_params[0].params.len(), 1);
    }

    #[test]
    fn dominance_holds_across_corpus_shapes() {
        for src in [
            EVEN,
            "void f(i32 a[8], i32 n) { for (i32 i = 0; i < n; i++) { if (a[i] > 0) { a[i] = 0; } } }",
            "i32 f(i32 a[8], i32 n) { i32 s = 0; for (i32 i = 0; i < n; i++) { s += a[i]; } return s; }",
            "void f(i32 a[8], i32 n) { i32 i = 0; while (i < n) { i32 j = 0; while (j < i) { a[j] = i; j++; } i++; } }",
        ] {
            let mut f = lower(src);
            to_ssa(&mut f);
            check_dominance(&f).unwrap();
            optimize_sir(&mut f);
            check_dominance(&f).unwrap();
            f.check_tree_cfg_consistency().unwrap();
            f.check_edge_conditions().unwrap();
        }
    }

    #[test]
    fn break_is_rejected_with_diagnostic() {
        let prog = typecheck(
            &parse("void f(i32 n) { for (i32 i = 0; i < n; i++) { break; } }").unwrap(),
        )
        .unwrap();
        let err = build_sir(&prog).unwrap_err();
        assert!(err.0[0].message.contains("break"));
    }
}
