//! AST to SIR lowering with loop canonicalization.
//!
//! Every `for`/`while` loop is rewritten to the canonical do-while shape by
//! inserting an entry check in the pre-header: the check's true edge jumps
//! to the header, the false edge to the empty forwarding block. A source
//! do-while needs no structural rewrite; its entry check is the constant
//! `true`. Variables stay named here (`readvar`/`writevar` pseudo
//! instructions); [`super::to_ssa`] promotes them to SSA values.

use std::collections::HashMap;

use crate::ast::*;
use crate::diag::{Diagnostic, Diagnostics, Span};
use crate::types::{ConstVal, Scalar, UnOp};

use super::{
    ArrayLenRef, BlockId, Edge, EdgeCond, LoopId, LoopWrapper, Operand, ParamKind, SirBlock,
    SirFunction, SirInstr, SirInstrKind, SirParam, StructNode, ValueId,
};

/// Lower every kernel (non-extern function) of a typed program.
pub fn build_sir(program: &Program) -> Result<Vec<SirFunction>, Diagnostics> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for func in program.kernels() {
        match build_function(program, func) {
            Ok(f) => out.push(f),
            Err(mut e) => errors.append(&mut e.0),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Diagnostics(errors))
    }
}

fn build_function(program: &Program, func: &FunctionDecl) -> Result<SirFunction, Diagnostics> {
    let mut params = Vec::new();
    let param_index: HashMap<&str, usize> = func
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.as_str(), i))
        .collect();
    for p in &func.params {
        let kind = match &p.ty {
            ParamType::Scalar(s) => ParamKind::Scalar(*s),
            ParamType::Array { elem, len } => ParamKind::Array {
                elem: *elem,
                len: match len {
                    ArrayLen::Const(n) => ArrayLenRef::Const(*n),
                    ArrayLen::Param(name) => ArrayLenRef::Param(param_index[name.as_str()]),
                },
            },
        };
        params.push(SirParam {
            name: p.name.clone(),
            kind,
            value: None,
        });
    }

    let mut b = Builder {
        program,
        func: SirFunction {
            name: func.name.clone(),
            params,
            ret_ty: match func.ret {
                RetType::Void => None,
                RetType::Scalar(s) => Some(s),
            },
            ret_val: None,
            root: Vec::new(),
            blocks: Vec::new(),
            edges: Vec::new(),
            values: Vec::new(),
            entry: BlockId(0),
        },
        current: BlockId(0),
        children_stack: Vec::new(),
        scopes: vec![HashMap::new()],
        var_tys: HashMap::new(),
        next_var: 0,
        next_loop: 0,
        errors: Vec::new(),
    };

    let entry = b.new_block();
    b.func.entry = entry;
    b.current = entry;
    b.children_stack.push(Vec::new());
    b.children_stack.last_mut().unwrap().push(StructNode::Block(entry));

    // Scalar parameters become values written to their variable names.
    for (i, p) in func.params.iter().enumerate() {
        if let ParamType::Scalar(s) = &p.ty {
            let v = b.func.new_value(*s, Some(p.name.clone()));
            b.func.params[i].value = Some(v);
            let var = b.declare_var(&p.name, *s);
            b.emit(None, SirInstrKind::WriteVar { var, value: Operand::Value(v) }, p.span);
        }
    }

    let body = func.body.as_ref().expect("kernel has a body");
    b.lower_body(body);

    b.func.root = b.children_stack.pop().expect("balanced children stack");
    if b.errors.is_empty() {
        debug_assert!(b.func.check_tree_cfg_consistency().is_ok());
        debug_assert!(b.func.check_edge_conditions().is_ok());
        Ok(b.func)
    } else {
        Err(Diagnostics(b.errors))
    }
}

struct Builder<'a> {
    program: &'a Program,
    func: SirFunction,
    current: BlockId,
    /// Stack of children lists: function level, then one per open wrapper.
    children_stack: Vec<Vec<StructNode>>,
    /// Source name -> unique variable key, per lexical scope.
    scopes: Vec<HashMap<String, String>>,
    var_tys: HashMap<String, Scalar>,
    next_var: u32,
    next_loop: u32,
    errors: Vec<Diagnostic>,
}

impl<'a> Builder<'a> {
    fn new_block(&mut self) -> BlockId {
        let id = BlockId(self.func.blocks.len() as u32);
        self.func.blocks.push(SirBlock {
            id,
            params: Vec::new(),
            instrs: Vec::new(),
        });
        id
    }

    /// Switch to `b` and record it as the next leaf at the current level.
    fn enter_block(&mut self, b: BlockId) {
        self.current = b;
        self.children_stack
            .last_mut()
            .unwrap()
            .push(StructNode::Block(b));
    }

    fn emit(&mut self, result: Option<ValueId>, kind: SirInstrKind, span: Span) {
        let cur = self.current;
        self.func.block_mut(cur).instrs.push(SirInstr { result, kind, span });
    }

    fn emit_value(&mut self, ty: Scalar, kind: SirInstrKind, span: Span) -> Operand {
        let v = self.func.new_value(ty, None);
        self.emit(Some(v), kind, span);
        Operand::Value(v)
    }

    fn edge(&mut self, src: BlockId, dst: BlockId, cond: EdgeCond) {
        self.func.edges.push(Edge {
            src,
            dst,
            cond,
            args: Vec::new(),
        });
    }

    fn declare_var(&mut self, name: &str, ty: Scalar) -> String {
        let unique = format!("{name}#{}", self.next_var);
        self.next_var += 1;
        self.scopes
            .last_mut()
            .unwrap()
            .insert(name.to_string(), unique.clone());
        self.var_tys.insert(unique.clone(), ty);
        unique
    }

    fn resolve_var(&self, name: &str) -> String {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name))
            .cloned()
            .unwrap_or_else(|| panic!("variable `{name}` survived typeck unresolved"))
    }

    fn array_index(&self, name: &str) -> usize {
        self.func
            .params
            .iter()
            .position(|p| p.name == name && matches!(p.kind, ParamKind::Array { .. }))
            .expect("array parameter")
    }

    fn error(&mut self, span: Span, msg: impl Into<String>) {
        self.errors.push(Diagnostic::unsupported(span, msg));
    }

    fn lower_body(&mut self, body: &Block) {
        let n = body.len();
        for (i, stmt) in body.iter().enumerate() {
            if let StmtKind::Return(value) = &stmt.kind {
                if i + 1 != n {
                    self.error(stmt.span, "return must be the last statement");
                    continue;
                }
                let val = value.as_ref().map(|e| self.lower_expr(e));
                self.func.ret_val = val;
                continue;
            }
            self.lower_stmt(stmt);
        }
    }

    fn lower_stmt(&mut self, stmt: &Stmt) {
        let span = stmt.span;
        match &stmt.kind {
            StmtKind::Decl { name, ty, init } => {
                let value = self.lower_expr(init);
                let var = self.declare_var(name, *ty);
                self.emit(None, SirInstrKind::WriteVar { var, value }, span);
            }
            StmtKind::Assign { target, op, value } => match target {
                LValue::Var(name) => {
                    let var = self.resolve_var(name);
                    let rhs = self.lower_expr(value);
                    let value = match op {
                        None => rhs,
                        Some(op) => {
                            let ty = self.var_tys[&var];
                            let cur = self.emit_value(ty, SirInstrKind::ReadVar { var: var.clone() }, span);
                            self.emit_value(ty, SirInstrKind::Bin { op: *op, lhs: cur, rhs }, span)
                        }
                    };
                    self.emit(None, SirInstrKind::WriteVar { var, value }, span);
                }
                LValue::Index { base, index } => {
                    let array = self.array_index(base);
                    let elem = match self.func.params[array].kind {
                        ParamKind::Array { elem, .. } => elem,
                        _ => unreachable!(),
                    };
                    let index = self.lower_expr(index);
                    let rhs = self.lower_expr(value);
                    let value = match op {
                        None => rhs,
                        Some(op) => {
                            let cur = self.emit_value(elem, SirInstrKind::Load { array, index }, span);
                            self.emit_value(elem, SirInstrKind::Bin { op: *op, lhs: cur, rhs }, span)
                        }
                    };
                    self.emit(None, SirInstrKind::Store { array, index, value }, span);
                }
            },
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let c = self.lower_expr(cond);
                let from = self.current;
                let then_b = self.new_block();
                let merge = self.new_block();
                let else_b = else_body.as_ref().map(|_| self.new_block());

                self.edge(from, then_b, EdgeCond::True(c));
                self.edge(from, else_b.unwrap_or(merge), EdgeCond::False(c));

                self.enter_block(then_b);
                self.lower_scoped_block(then_body);
                let then_end = self.current;
                self.edge(then_end, merge, EdgeCond::Always);

                if let (Some(else_b), Some(else_body)) = (else_b, else_body) {
                    self.enter_block(else_b);
                    self.lower_scoped_block(else_body);
                    let else_end = self.current;
                    self.edge(else_end, merge, EdgeCond::Always);
                }
                self.enter_block(merge);
            }
            StmtKind::For {
                init,
                cond,
                step,
                body,
            } => {
                self.scopes.push(HashMap::new());
                self.lower_stmt(init);
                self.lower_loop(cond, body, Some(step), LoopStyle::PreTest, span);
                self.scopes.pop();
            }
            StmtKind::While { cond, body } => {
                self.lower_loop(cond, body, None, LoopStyle::PreTest, span);
            }
            StmtKind::DoWhile { body, cond } => {
                self.lower_loop(cond, body, None, LoopStyle::PostTest, span);
            }
            StmtKind::Return(_) => {
                self.error(span, "return must be the last statement");
            }
            StmtKind::ExprStmt(e) => {
                self.lower_expr(e);
            }
            StmtKind::Break => self.error(span, "break is not supported"),
            StmtKind::Continue => self.error(span, "continue is not supported"),
        }
    }

    fn lower_scoped_block(&mut self, body: &Block) {
        self.scopes.push(HashMap::new());
        for stmt in body {
            if matches!(stmt.kind, StmtKind::Return(_)) {
                self.error(stmt.span, "return must be the last statement");
                continue;
            }
            self.lower_stmt(stmt);
        }
        self.scopes.pop();
    }

    fn lower_loop(
        &mut self,
        cond: &Expr,
        body: &Block,
        step: Option<&Stmt>,
        style: LoopStyle,
        _span: Span,
    ) {
        // The pre-header is a fresh block so the wrapper owns it as a leaf.
        let from = self.current;
        let pre_header = self.new_block();
        self.edge(from, pre_header, EdgeCond::Always);

        let loop_id = LoopId(self.next_loop);
        self.next_loop += 1;

        // Children of this wrapper collect into a fresh list.
        self.children_stack.push(Vec::new());

        self.enter_block(pre_header);
        let entry_cond = match style {
            LoopStyle::PreTest => self.lower_expr(cond),
            LoopStyle::PostTest => Operand::Const(ConstVal::Bool(true)),
        };

        let forwarding = self.new_block();
        let header = self.new_block();
        let exit = self.new_block();

        self.edge(pre_header, header, EdgeCond::True(entry_cond));
        self.edge(pre_header, forwarding, EdgeCond::False(entry_cond));
        self.edge(forwarding, exit, EdgeCond::Always);
        // Forwarding holds no instructions; record it as a leaf directly.
        self.children_stack
            .last_mut()
            .unwrap()
            .push(StructNode::Block(forwarding));

        self.enter_block(header);
        self.lower_scoped_block(body);

        // A dedicated latch block: the unique source of the back edge,
        // holding the step and the repeat check.
        let body_end = self.current;
        let latch = self.new_block();
        self.edge(body_end, latch, EdgeCond::Always);
        self.enter_block(latch);
        if let Some(step) = step {
            self.lower_stmt(step);
        }
        let latch_cond = self.lower_expr(cond);
        self.edge(latch, header, EdgeCond::True(latch_cond));
        self.edge(latch, exit, EdgeCond::False(latch_cond));

        let children = self.children_stack.pop().expect("wrapper children");
        self.children_stack.last_mut().unwrap().push(StructNode::Loop(LoopWrapper {
            id: loop_id,
            pre_header,
            forwarding,
            header,
            latch,
            children,
            iter_pattern: None,
            induction_vars: Vec::new(),
            entry_cond,
            latch_cond,
        }));

        self.enter_block(exit);
    }

    fn lower_expr(&mut self, e: &Expr) -> Operand {
        let span = e.span;
        let ty = e.ty();
        match &e.kind {
            ExprKind::IntLit(v) => Operand::Const(ConstVal::I32(*v as i32)),
            ExprKind::FloatLit(v) => Operand::Const(ConstVal::F32(*v as f32)),
            ExprKind::Var(name) => {
                let var = self.resolve_var(name);
                self.emit_value(ty, SirInstrKind::ReadVar { var }, span)
            }
            ExprKind::Index { base, index } => {
                let array = self.array_index(base);
                let index = self.lower_expr(index);
                self.emit_value(ty, SirInstrKind::Load { array, index }, span)
            }
            ExprKind::Unary { op, expr } => {
                let operand = self.lower_expr(expr);
                // Fold negated literals so `-5` is a plain constant.
                if let (UnOp::Neg, Operand::Const(c)) = (op, operand) {
                    if let Ok(v) = crate::types::eval_unop(UnOp::Neg, c) {
                        return Operand::Const(v);
                    }
                }
                self.emit_value(ty, SirInstrKind::Un { op: *op, operand }, span)
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let lhs = self.lower_expr(lhs);
                let rhs = self.lower_expr(rhs);
                self.emit_value(ty, SirInstrKind::Bin { op: *op, lhs, rhs }, span)
            }
            ExprKind::Call { callee, args } => {
                let args: Vec<Operand> = args.iter().map(|a| self.lower_expr(a)).collect();
                let ret = self
                    .program
                    .function(callee)
                    .map(|f| f.ret)
                    .unwrap_or(RetType::Void);
                let kind = SirInstrKind::Call {
                    callee: callee.clone(),
                    args,
                };
                match ret {
                    RetType::Void => {
                        self.emit(None, kind, span);
                        Operand::Const(ConstVal::I32(0))
                    }
                    RetType::Scalar(s) => self.emit_value(s, kind, span),
                }
            }
            ExprKind::Cast { to, expr } => {
                let operand = self.lower_expr(expr);
                self.emit_value(*to, SirInstrKind::Cast { to: *to, operand }, span)
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum LoopStyle {
    PreTest,
    PostTest,
}
