//! Type checker for MiniC.
//!
//! Annotates every expression with a resolved type. There are no implicit
//! conversions: mixing `i32` and `f32` requires an explicit cast. Conditions
//! must be `bool` (the result of a comparison or logical operator), shift
//! amounts and array indices must be `i32`, and calls may only target
//! declared `extern` functions with scalar parameters.

use std::collections::HashMap;

use crate::ast::*;
use crate::diag::{Diagnostic, Diagnostics, Span};
use crate::types::{BinOp, Scalar, UnOp};

/// Type-check a parsed program, returning a typed copy.
pub fn typecheck(program: &Program) -> Result<Program, Diagnostics> {
    let mut ck = Checker {
        errors: Vec::new(),
        functions: HashMap::new(),
    };
    for f in &program.functions {
        if ck.functions.insert(f.name.clone(), f.clone()).is_some() {
            ck.err(f.span, format!("duplicate function `{}`", f.name));
        }
    }
    let mut typed = program.clone();
    for f in &mut typed.functions {
        ck.check_function(f);
    }
    if ck.errors.is_empty() {
        Ok(typed)
    } else {
        Err(Diagnostics(ck.errors))
    }
}

#[derive(Clone)]
enum VarKind {
    Scalar(Scalar),
    Array(Scalar),
}

struct Checker {
    errors: Vec<Diagnostic>,
    functions: HashMap<String, FunctionDecl>,
}

struct Scope {
    // One map per lexical block; inner blocks may shadow.
    stack: Vec<HashMap<String, VarKind>>,
}

impl Scope {
    fn lookup(&self, name: &str) -> Option<&VarKind> {
        self.stack.iter().rev().find_map(|m| m.get(name))
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> bool {
        self.stack
            .last_mut()
            .unwrap()
            .insert(name.to_string(), kind)
            .is_none()
    }
}

impl Checker {
    fn err(&mut self, span: Span, message: impl Into<String>) {
        self.errors.push(Diagnostic::type_error(span, message));
    }

    fn check_function(&mut self, f: &mut FunctionDecl) {
        let mut scope = Scope {
            stack: vec![HashMap::new()],
        };
        // Array lengths must name an i32 scalar parameter of this function.
        let param_tys: HashMap<String, ParamType> = f
            .params
            .iter()
            .map(|p| (p.name.clone(), p.ty.clone()))
            .collect();
        for p in &f.params {
            if let ParamType::Array {
                len: ArrayLen::Param(len_name),
                ..
            } = &p.ty
            {
                match param_tys.get(len_name) {
                    Some(ParamType::Scalar(Scalar::I32)) => {}
                    _ => self.err(
                        p.span,
                        format!("array length `{len_name}` is not an i32 parameter"),
                    ),
                }
            }
            let kind = match &p.ty {
                ParamType::Scalar(s) => VarKind::Scalar(*s),
                ParamType::Array { elem, .. } => VarKind::Array(*elem),
            };
            if !scope.declare(&p.name, kind) {
                self.err(p.span, format!("duplicate parameter `{}`", p.name));
            }
        }
        let ret = f.ret;
        if let Some(body) = &mut f.body {
            self.check_block(body, &mut scope, ret);
            if let RetType::Scalar(_) = ret {
                let ends_in_return = matches!(
                    body.last().map(|s| &s.kind),
                    Some(StmtKind::Return(Some(_)))
                );
                if !ends_in_return {
                    self.err(f.span, "non-void function must end with `return <expr>;`");
                }
            }
        }
    }

    fn check_block(&mut self, block: &mut Block, scope: &mut Scope, ret: RetType) {
        scope.stack.push(HashMap::new());
        for stmt in block.iter_mut() {
            self.check_stmt(stmt, scope, ret);
        }
        scope.stack.pop();
    }

    fn check_stmt(&mut self, stmt: &mut Stmt, scope: &mut Scope, ret: RetType) {
        let span = stmt.span;
        match &mut stmt.kind {
            StmtKind::Decl { name, ty, init } => {
                let init_ty = self.check_expr(init, scope);
                if let Some(it) = init_ty {
                    if it != *ty {
                        self.err(
                            span,
                            format!("initializer of `{name}` has type {it}, expected {ty}"),
                        );
                    }
                }
                if !scope.declare(name, VarKind::Scalar(*ty)) {
                    self.err(span, format!("`{name}` already declared in this scope"));
                }
            }
            StmtKind::Assign { target, op, value } => {
                let target_ty = match target {
                    LValue::Var(name) => match scope.lookup(name) {
                        Some(VarKind::Scalar(s)) => Some(*s),
                        Some(VarKind::Array(_)) => {
                            self.err(span, format!("cannot assign to array `{name}` directly"));
                            None
                        }
                        None => {
                            self.err(span, format!("unknown identifier `{name}`"));
                            None
                        }
                    },
                    LValue::Index { base, index } => {
                        let idx_ty = self.check_expr(index, scope);
                        if idx_ty.is_some_and(|t| t != Scalar::I32) {
                            self.err(index.span, "array index must be i32");
                        }
                        match scope.lookup(base) {
                            Some(VarKind::Array(elem)) => Some(*elem),
                            Some(VarKind::Scalar(_)) => {
                                self.err(span, format!("`{base}` is not an array"));
                                None
                            }
                            None => {
                                self.err(span, format!("unknown identifier `{base}`"));
                                None
                            }
                        }
                    }
                };
                let value_ty = self.check_expr(value, scope);
                if let (Some(t), Some(v)) = (target_ty, value_ty) {
                    match op {
                        None => {
                            if t != v {
                                self.err(span, format!("cannot assign {v} to {t} location"));
                            }
                        }
                        Some(op) => {
                            if binary_result(*op, t, v) != Some(t) {
                                self.err(
                                    span,
                                    format!("invalid compound assignment `{}=` on {t} and {v}", op),
                                );
                            }
                        }
                    }
                }
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                self.check_cond(cond, scope);
                self.check_block(then_body, scope, ret);
                if let Some(e) = else_body {
                    self.check_block(e, scope, ret);
                }
            }
            StmtKind::For {
                init,
                cond,
                step,
                body,
            } => {
                // The init declaration scopes over cond, step, and body.
                scope.stack.push(HashMap::new());
                self.check_stmt(init, scope, ret);
                self.check_cond(cond, scope);
                self.check_stmt(step, scope, ret);
                self.check_block(body, scope, ret);
                scope.stack.pop();
            }
            StmtKind::While { cond, body } => {
                self.check_cond(cond, scope);
                self.check_block(body, scope, ret);
            }
            StmtKind::DoWhile { body, cond } => {
                // The condition may use variables declared in the body only
                // in C with braces-scoping caveats; MiniC keeps them separate.
                self.check_block(body, scope, ret);
                self.check_cond(cond, scope);
            }
            StmtKind::Return(value) => match (ret, value) {
                (RetType::Void, None) => {}
                (RetType::Void, Some(_)) => self.err(span, "void function cannot return a value"),
                (RetType::Scalar(want), Some(e)) => {
                    if let Some(got) = self.check_expr(e, scope) {
                        if got != want {
                            self.err(span, format!("return type {got}, expected {want}"));
                        }
                    }
                }
                (RetType::Scalar(_), None) => {
                    self.err(span, "non-void function must return a value")
                }
            },
            StmtKind::ExprStmt(e) => {
                if !matches!(e.kind, ExprKind::Call { .. }) {
                    self.err(span, "expression statement must be a call");
                }
                self.check_expr(e, scope);
            }
            // break/continue survive to SIR construction, which rejects them
            // with a dedicated diagnostic.
            StmtKind::Break | StmtKind::Continue => {}
        }
    }

    fn check_cond(&mut self, cond: &mut Expr, scope: &mut Scope) {
        if let Some(t) = self.check_expr(cond, scope) {
            if t != Scalar::Bool {
                self.err(
                    cond.span,
                    format!("condition has type {t}, expected a comparison"),
                );
            }
        }
    }

    fn check_expr(&mut self, e: &mut Expr, scope: &mut Scope) -> Option<Scalar> {
        let span = e.span;
        let ty = match &mut e.kind {
            ExprKind::IntLit(v) => {
                // 2^31 is allowed so `-2147483648` works; it wraps to i32::MIN.
                if *v < i32::MIN as i64 || *v > 1 << 31 {
                    self.err(span, format!("integer literal {v} does not fit in i32"));
                }
                Some(Scalar::I32)
            }
            ExprKind::FloatLit(_) => Some(Scalar::F32),
            ExprKind::Var(name) => match scope.lookup(name) {
                Some(VarKind::Scalar(s)) => Some(*s),
                Some(VarKind::Array(_)) => {
                    self.err(span, format!("array `{name}` used without an index"));
                    None
                }
                None => {
                    self.err(span, format!("unknown identifier `{name}`"));
                    None
                }
            },
            ExprKind::Index { base, index } => {
                let idx_ty = self.check_expr(index, scope);
                if idx_ty.is_some_and(|t| t != Scalar::I32) {
                    self.err(index.span, "array index must be i32");
                }
                match scope.lookup(base) {
                    Some(VarKind::Array(elem)) => Some(*elem),
                    Some(VarKind::Scalar(_)) => {
                        self.err(span, format!("`{base}` is not an array"));
                        None
                    }
                    None => {
                        self.err(span, format!("unknown identifier `{base}`"));
                        None
                    }
                }
            }
            ExprKind::Unary { op, expr } => {
                let op = *op;
                let t = self.check_expr(expr, scope)?;
                let out = match (op, t) {
                    (UnOp::Neg, Scalar::I32) => Some(Scalar::I32),
                    (UnOp::Neg, Scalar::F32) => Some(Scalar::F32),
                    (UnOp::Not, Scalar::Bool) => Some(Scalar::Bool),
                    (UnOp::BitNot, Scalar::I32) => Some(Scalar::I32),
                    _ => None,
                };
                if out.is_none() {
                    self.err(span, format!("`{}` is not defined on {t}", op.symbol()));
                }
                out
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let lt = self.check_expr(lhs, scope);
                let rt = self.check_expr(rhs, scope);
                let (lt, rt) = (lt?, rt?);
                let out = binary_result(*op, lt, rt);
                if out.is_none() {
                    self.err(
                        span,
                        format!("`{}` is not defined on {lt} and {rt}", op.symbol()),
                    );
                }
                out
            }
            ExprKind::Call { callee, args } => {
                let decl = match self.functions.get(callee).cloned() {
                    Some(d) => d,
                    None => {
                        self.err(span, format!("unknown function `{callee}`"));
                        for a in args.iter_mut() {
                            self.check_expr(a, scope);
                        }
                        return None;
                    }
                };
                if decl.body.is_some() {
                    self.err(
                        span,
                        format!("`{callee}` is not extern; only extern functions may be called"),
                    );
                }
                if args.len() != decl.params.len() {
                    self.err(
                        span,
                        format!(
                            "`{callee}` takes {} arguments, got {}",
                            decl.params.len(),
                            args.len()
                        ),
                    );
                }
                for (a, p) in args.iter_mut().zip(&decl.params) {
                    let at = self.check_expr(a, scope);
                    match (&p.ty, at) {
                        (ParamType::Scalar(want), Some(got)) if got == *want => {}
                        (ParamType::Scalar(want), Some(got)) => {
                            self.err(a.span, format!("argument has type {got}, expected {want}"));
                        }
                        (ParamType::Array { .. }, _) => {
                            self.err(a.span, "extern functions take scalar arguments only");
                        }
                        (_, None) => {}
                    }
                }
                match decl.ret {
                    RetType::Void => None,
                    RetType::Scalar(s) => Some(s),
                }
            }
            ExprKind::Cast { to, expr } => {
                let t = self.check_expr(expr, scope)?;
                match (t, *to) {
                    (Scalar::I32, Scalar::F32)
                    | (Scalar::F32, Scalar::I32)
                    | (Scalar::I32, Scalar::I32)
                    | (Scalar::F32, Scalar::F32) => Some(*to),
                    _ => {
                        self.err(span, format!("cannot cast {t} to {to}"));
                        None
                    }
                }
            }
        };
        e.ty = ty;
        ty
    }
}

/// Result type of `op` on operand types `(l, r)`; `None` when illegal.
pub fn binary_result(op: BinOp, l: Scalar, r: Scalar) -> Option<Scalar> {
    use BinOp::*;
    use Scalar::*;
    match op {
        Add | Sub | Mul | Div => match (l, r) {
            (I32, I32) => Some(I32),
            (F32, F32) => Some(F32),
            _ => None,
        },
        Rem | Shl | Shr | BitAnd | BitOr | BitXor => match (l, r) {
            (I32, I32) => Some(I32),
            _ => None,
        },
        Lt | Le | Gt | Ge => match (l, r) {
            (I32, I32) | (F32, F32) => Some(Bool),
            _ => None,
        },
        Eq | Ne => match (l, r) {
            (I32, I32) | (F32, F32) | (Bool, Bool) => Some(Bool),
            _ => None,
        },
        LogAnd | LogOr => match (l, r) {
            (Bool, Bool) => Some(Bool),
            _ => None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn check(src: &str) -> Result<Program, Diagnostics> {
        typecheck(&parse(src).unwrap())
    }

    #[test]
    fn shift_of_f32_rejected() {
        let err = check("void f(f32 x) { f32 y = x << 2; }").unwrap_err();
        assert!(err.0[0].message.contains("<<"), "{err}");
    }

    #[test]
    fn index_and_shift_are_typed_i32() {
        let prog = check("void f(i32 a[n], i32 b[n], i32 n, i32 i) { b[i] = a[i] << i; }")
            .expect("kernel type-checks");
        let body = prog.functions[0].body.as_ref().unwrap();
        let StmtKind::Assign { value, .. } = &body[0].kind else {
            panic!()
        };
        assert_eq!(value.ty, Some(Scalar::I32));
    }

    #[test]
    fn bare_return_in_void_accepted() {
        check("void f() { return; }").unwrap();
    }

    #[test]
    fn illegal_operator_type_cells_all_reject() {
        // Enumerate the operator/type table; every cell that binary_result
        // marks illegal must be rejected by the checker too.
        let ops = [
            ("+", BinOp::Add),
            ("-", BinOp::Sub),
            ("*", BinOp::Mul),
            ("/", BinOp::Div),
            ("%", BinOp::Rem),
            ("<<", BinOp::Shl),
            (">>", BinOp::Shr),
            ("&", BinOp::BitAnd),
            ("|", BinOp::BitOr),
            ("^", BinOp::BitXor),
            ("<", BinOp::Lt),
            ("<=", BinOp::Le),
            (">", BinOp::Gt),
            (">=", BinOp::Ge),
            ("==", BinOp::Eq),
            ("!=", BinOp::Ne),
            ("&&", BinOp::LogAnd),
            ("||", BinOp::LogOr),
        ];
        let operand = |t: Scalar| match t {
            Scalar::I32 => "ix",
            Scalar::F32 => "fx",
            Scalar::Bool => "(ix == 0)",
        };
        for (sym, op) in ops {
            for l in [Scalar::I32, Scalar::F32, Scalar::Bool] {
                for r in [Scalar::I32, Scalar::F32, Scalar::Bool] {
                    let expr = format!("{} {} {}", operand(l), sym, operand(r));
                    // Pick a sink statement matching the result type; any
                    // sink works for illegal cells since the operator itself
                    // is diagnosed.
                    let stmt = match binary_result(op, l, r) {
                        Some(Scalar::I32) => format!("i32 z = {expr};"),
                        Some(Scalar::F32) => format!("f32 z = {expr};"),
                        Some(Scalar::Bool) | None => format!("if ({expr}) {{ }}"),
                    };
                    let src = format!("void f(i32 ix, f32 fx) {{ {stmt} }}");
                    let result = check(&src);
                    if binary_result(op, l, r).is_some() {
                        assert!(result.is_ok(), "expected `{l} {sym} {r}` to typecheck");
                    } else {
                        assert!(result.is_err(), "expected `{l} {sym} {r}` to be rejected");
                    }
                }
            }
        }
    }

    #[test]
    fn implicit_conversion_rejected_explicit_cast_ok() {
        assert!(check("void f(f32 x, i32 y, f32 o[2]) { o[0] = x + y; }").is_err());
        check("void f(f32 x, i32 y, f32 o[2]) { o[0] = x + (f32) y; }").unwrap();
    }

    #[test]
    fn calls_only_to_extern() {
        let src = "
i32 g(i32 x) { return x; }
void f(i32 o[2]) { o[0] = g(1); }";
        assert!(check(src).is_err());
        let src = "
extern i32 g(i32 x);
void f(i32 o[2]) { o[0] = g(1); }";
        check(src).unwrap();
    }
}
