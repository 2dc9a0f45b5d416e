//! Abstract syntax tree for MiniC.
//!
//! MiniC is a small C-like kernel language: `i32`/`f32` scalars, 1-D array
//! parameters with a constant or parameter-given length, the usual statement
//! forms (`if`, `for`, `while`, `do`-`while`, assignment, `return`), and
//! calls to declared `extern` functions. There is no address-of, recursion,
//! or `goto`. Expressions carry a resolved type after [`crate::typeck`].

use crate::diag::Span;
use crate::types::{BinOp, Scalar, UnOp};

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub functions: Vec<FunctionDecl>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Functions with a body, in declaration order.
    pub fn kernels(&self) -> impl Iterator<Item = &FunctionDecl> {
        self.functions.iter().filter(|f| f.body.is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: RetType,
    /// `None` for `extern` declarations.
    pub body: Option<Block>,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetType {
    Void,
    Scalar(Scalar),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: ParamType,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamType {
    Scalar(Scalar),
    Array { elem: Scalar, len: ArrayLen },
}

/// Array parameter lengths are either literal constants or the name of a
/// scalar `i32` parameter of the same function.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayLen {
    Const(i64),
    Param(String),
}

pub type Block = Vec<Stmt>;

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    /// `i32 x = e;` — declarations always carry an initializer.
    Decl {
        name: String,
        ty: Scalar,
        init: Expr,
    },
    /// `lv = e;` or a compound form like `lv += e;`.
    Assign {
        target: LValue,
        op: Option<BinOp>,
        value: Expr,
    },
    If {
        cond: Expr,
        then_body: Block,
        else_body: Option<Block>,
    },
    For {
        init: Box<Stmt>,
        cond: Expr,
        step: Box<Stmt>,
        body: Block,
    },
    While {
        cond: Expr,
        body: Block,
    },
    DoWhile {
        body: Block,
        cond: Expr,
    },
    Return(Option<Expr>),
    /// Call in statement position.
    ExprStmt(Expr),
    Break,
    Continue,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LValue {
    Var(String),
    Index { base: String, index: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    /// Filled in by the type checker.
    pub ty: Option<Scalar>,
    pub span: Span,
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Expr {
        Expr {
            kind,
            ty: None,
            span,
        }
    }

    pub fn ty(&self) -> Scalar {
        self.ty.expect("expression not type-checked")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    IntLit(i64),
    FloatLit(f64),
    Var(String),
    Index {
        base: String,
        index: Box<Expr>,
    },
    Unary {
        op: UnOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        callee: String,
        args: Vec<Expr>,
    },
    Cast {
        to: Scalar,
        expr: Box<Expr>,
    },
}
