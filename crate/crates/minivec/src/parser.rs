//! Recursive-descent parser for MiniC.
//!
//! The parser keeps going after an error when it can (synchronizing on `;`
//! and `}`), so a single run reports every syntax error with its location
//! and the token set that would have been accepted.

use crate::ast::*;
use crate::diag::{Diagnostic, Diagnostics, Span};
use crate::lexer::{lex, Tok, Token};
use crate::types::{BinOp, Scalar, UnOp};

/// Parse MiniC source into an untyped [`Program`].
pub fn parse(source: &str) -> Result<Program, Diagnostics> {
    let tokens = lex(source).map_err(|d| Diagnostics(vec![d]))?;
    let mut p = Parser {
        tokens,
        pos: 0,
        errors: Vec::new(),
    };
    let program = p.program();
    if p.errors.is_empty() {
        Ok(program)
    } else {
        Err(Diagnostics(p.errors))
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    errors: Vec<Diagnostic>,
}

struct ParseAbort;

type PResult<T> = Result<T, ParseAbort>;

impl Parser {
    fn peek(&self) -> Tok {
        self.tokens[self.pos].tok
    }

    fn peek2(&self) -> Tok {
        self.tokens
            .get(self.pos + 1)
            .map(|t| t.tok)
            .unwrap_or(Tok::Eof)
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<Token> {
        if self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.error_here(&[tok]))
        }
    }

    fn error_here(&mut self, expected: &[Tok]) -> ParseAbort {
        let span = self.span();
        let found = self.peek().describe();
        self.errors.push(Diagnostic::syntax(
            span,
            format!("unexpected {found}"),
            expected.iter().map(|t| t.describe().to_string()).collect(),
        ));
        ParseAbort
    }

    /// Skip to a likely statement boundary after an error.
    fn synchronize(&mut self) {
        loop {
            match self.peek() {
                Tok::Semi => {
                    self.bump();
                    return;
                }
                Tok::RBrace | Tok::Eof => return,
                _ => {
                    self.bump();
                }
            }
        }
    }

    fn program(&mut self) -> Program {
        let mut functions = Vec::new();
        while self.peek() != Tok::Eof {
            match self.function() {
                Ok(f) => functions.push(f),
                Err(ParseAbort) => {
                    // Skip to the next plausible function start.
                    while !matches!(
                        self.peek(),
                        Tok::KwVoid | Tok::KwI32 | Tok::KwF32 | Tok::KwExtern | Tok::Eof
                    ) {
                        self.bump();
                    }
                }
            }
        }
        Program { functions }
    }

    fn ret_type(&mut self) -> PResult<RetType> {
        match self.peek() {
            Tok::KwVoid => {
                self.bump();
                Ok(RetType::Void)
            }
            Tok::KwI32 => {
                self.bump();
                Ok(RetType::Scalar(Scalar::I32))
            }
            Tok::KwF32 => {
                self.bump();
                Ok(RetType::Scalar(Scalar::F32))
            }
            _ => Err(self.error_here(&[Tok::KwVoid, Tok::KwI32, Tok::KwF32])),
        }
    }

    fn function(&mut self) -> PResult<FunctionDecl> {
        let is_extern = self.eat(Tok::KwExtern);
        let span = self.span();
        let ret = self.ret_type()?;
        let name = self.expect(Tok::Ident)?.text;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if self.peek() != Tok::RParen {
            loop {
                params.push(self.param()?);
                if !self.eat(Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        let body = if is_extern {
            self.expect(Tok::Semi)?;
            None
        } else {
            Some(self.block()?)
        };
        Ok(FunctionDecl {
            name,
            params,
            ret,
            body,
            span,
        })
    }

    fn scalar_type(&mut self) -> PResult<Scalar> {
        match self.peek() {
            Tok::KwI32 => {
                self.bump();
                Ok(Scalar::I32)
            }
            Tok::KwF32 => {
                self.bump();
                Ok(Scalar::F32)
            }
            _ => Err(self.error_here(&[Tok::KwI32, Tok::KwF32])),
        }
    }

    fn param(&mut self) -> PResult<Param> {
        let span = self.span();
        let elem = self.scalar_type()?;
        let name = self.expect(Tok::Ident)?.text;
        let ty = if self.eat(Tok::LBracket) {
            let len = match self.peek() {
                Tok::IntLit => {
                    let t = self.bump();
                    ArrayLen::Const(parse_int_text(&t.text))
                }
                Tok::Ident => ArrayLen::Param(self.bump().text),
                _ => return Err(self.error_here(&[Tok::IntLit, Tok::Ident])),
            };
            self.expect(Tok::RBracket)?;
            ParamType::Array { elem, len }
        } else {
            ParamType::Scalar(elem)
        };
        Ok(Param { name, ty, span })
    }

    fn block(&mut self) -> PResult<Block> {
        self.expect(Tok::LBrace)?;
        let mut stmts = Vec::new();
        while self.peek() != Tok::RBrace && self.peek() != Tok::Eof {
            match self.statement() {
                Ok(s) => stmts.push(s),
                Err(ParseAbort) => self.synchronize(),
            }
        }
        self.expect(Tok::RBrace)?;
        Ok(stmts)
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let kind = match self.peek() {
            Tok::KwI32 | Tok::KwF32 => {
                let s = self.decl_stmt()?;
                self.expect(Tok::Semi)?;
                s
            }
            Tok::KwIf => {
                self.bump();
                self.expect(Tok::LParen)?;
                let cond = self.expr()?;
                self.expect(Tok::RParen)?;
                let then_body = self.block_or_single()?;
                let else_body = if self.eat(Tok::KwElse) {
                    Some(self.block_or_single()?)
                } else {
                    None
                };
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                }
            }
            Tok::KwFor => {
                self.bump();
                self.expect(Tok::LParen)?;
                let init = Box::new(Stmt {
                    span: self.span(),
                    kind: if matches!(self.peek(), Tok::KwI32 | Tok::KwF32) {
                        self.decl_stmt()?
                    } else {
                        self.assign_stmt()?
                    },
                });
                self.expect(Tok::Semi)?;
                let cond = self.expr()?;
                self.expect(Tok::Semi)?;
                let step = Box::new(Stmt {
                    span: self.span(),
                    kind: self.assign_stmt()?,
                });
                self.expect(Tok::RParen)?;
                let body = self.block_or_single()?;
                StmtKind::For {
                    init,
                    cond,
                    step,
                    body,
                }
            }
            Tok::KwWhile => {
                self.bump();
                self.expect(Tok::LParen)?;
                let cond = self.expr()?;
                self.expect(Tok::RParen)?;
                let body = self.block_or_single()?;
                StmtKind::While { cond, body }
            }
            Tok::KwDo => {
                self.bump();
                let body = self.block_or_single()?;
                self.expect(Tok::KwWhile)?;
                self.expect(Tok::LParen)?;
                let cond = self.expr()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Semi)?;
                StmtKind::DoWhile { body, cond }
            }
            Tok::KwReturn => {
                self.bump();
                let value = if self.peek() == Tok::Semi {
                    None
                } else {
                    Some(self.expr()?)
                };
                self.expect(Tok::Semi)?;
                StmtKind::Return(value)
            }
            Tok::KwBreak => {
                self.bump();
                self.expect(Tok::Semi)?;
                StmtKind::Break
            }
            Tok::KwContinue => {
                self.bump();
                self.expect(Tok::Semi)?;
                StmtKind::Continue
            }
            Tok::Ident if self.peek2() == Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::Semi)?;
                StmtKind::ExprStmt(e)
            }
            _ => {
                let s = self.assign_stmt()?;
                self.expect(Tok::Semi)?;
                s
            }
        };
        Ok(Stmt { kind, span })
    }

    /// A single statement or a braced block, used for loop and branch bodies.
    fn block_or_single(&mut self) -> PResult<Block> {
        if self.peek() == Tok::LBrace {
            self.block()
        } else {
            Ok(vec![self.statement()?])
        }
    }

    fn decl_stmt(&mut self) -> PResult<StmtKind> {
        let ty = self.scalar_type()?;
        let name = self.expect(Tok::Ident)?.text;
        self.expect(Tok::Assign)?;
        let init = self.expr()?;
        Ok(StmtKind::Decl { name, ty, init })
    }

    /// Assignments, compound assignments, and `++`/`--` sugar.
    fn assign_stmt(&mut self) -> PResult<StmtKind> {
        // Prefix increment/decrement.
        if matches!(self.peek(), Tok::PlusPlus | Tok::MinusMinus) {
            let op = if self.bump().tok == Tok::PlusPlus {
                BinOp::Add
            } else {
                BinOp::Sub
            };
            let span = self.span();
            let name = self.expect(Tok::Ident)?.text;
            return Ok(StmtKind::Assign {
                target: LValue::Var(name),
                op: Some(op),
                value: Expr::new(ExprKind::IntLit(1), span),
            });
        }
        let span = self.span();
        let name = self.expect(Tok::Ident)?.text;
        let target = if self.eat(Tok::LBracket) {
            let index = self.expr()?;
            self.expect(Tok::RBracket)?;
            LValue::Index { base: name, index }
        } else {
            LValue::Var(name)
        };
        let op = match self.peek() {
            Tok::Assign => None,
            Tok::PlusAssign => Some(BinOp::Add),
            Tok::MinusAssign => Some(BinOp::Sub),
            Tok::StarAssign => Some(BinOp::Mul),
            Tok::SlashAssign => Some(BinOp::Div),
            Tok::PercentAssign => Some(BinOp::Rem),
            Tok::ShlAssign => Some(BinOp::Shl),
            Tok::ShrAssign => Some(BinOp::Shr),
            Tok::AmpAssign => Some(BinOp::BitAnd),
            Tok::PipeAssign => Some(BinOp::BitOr),
            Tok::CaretAssign => Some(BinOp::BitXor),
            Tok::PlusPlus | Tok::MinusMinus => {
                let op = if self.bump().tok == Tok::PlusPlus {
                    BinOp::Add
                } else {
                    BinOp::Sub
                };
                return Ok(StmtKind::Assign {
                    target,
                    op: Some(op),
                    value: Expr::new(ExprKind::IntLit(1), span),
                });
            }
            _ => {
                return Err(self.error_here(&[
                    Tok::Assign,
                    Tok::PlusAssign,
                    Tok::MinusAssign,
                    Tok::PlusPlus,
                ]))
            }
        };
        self.bump();
        let value = self.expr()?;
        Ok(StmtKind::Assign { target, op, value })
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary_expr(0)
    }

    fn binary_expr(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary_expr()?;
        loop {
            let Some((op, prec)) = binop_for(self.peek()) else {
                break;
            };
            if prec < min_prec {
                break;
            }
            let span = self.span();
            self.bump();
            let rhs = self.binary_expr(prec + 1)?;
            lhs = Expr::new(
                ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
            );
        }
        Ok(lhs)
    }

    fn unary_expr(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek() {
            Tok::Minus => {
                self.bump();
                let e = self.unary_expr()?;
                Ok(Expr::new(
                    ExprKind::Unary {
                        op: UnOp::Neg,
                        expr: Box::new(e),
                    },
                    span,
                ))
            }
            Tok::Bang => {
                self.bump();
                let e = self.unary_expr()?;
                Ok(Expr::new(
                    ExprKind::Unary {
                        op: UnOp::Not,
                        expr: Box::new(e),
                    },
                    span,
                ))
            }
            Tok::Tilde => {
                self.bump();
                let e = self.unary_expr()?;
                Ok(Expr::new(
                    ExprKind::Unary {
                        op: UnOp::BitNot,
                        expr: Box::new(e),
                    },
                    span,
                ))
            }
            // Cast: `(i32) e` / `(f32) e`.
            Tok::LParen if matches!(self.peek2(), Tok::KwI32 | Tok::KwF32) => {
                self.bump();
                let to = self.scalar_type()?;
                self.expect(Tok::RParen)?;
                let e = self.unary_expr()?;
                Ok(Expr::new(
                    ExprKind::Cast {
                        to,
                        expr: Box::new(e),
                    },
                    span,
                ))
            }
            _ => self.postfix_expr(),
        }
    }

    fn postfix_expr(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek() {
            Tok::IntLit => {
                let t = self.bump();
                Ok(Expr::new(ExprKind::IntLit(parse_int_text(&t.text)), span))
            }
            Tok::FloatLit => {
                let t = self.bump();
                Ok(Expr::new(
                    ExprKind::FloatLit(t.text.parse().unwrap_or(0.0)),
                    span,
                ))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident => {
                let name = self.bump().text;
                match self.peek() {
                    Tok::LBracket => {
                        self.bump();
                        let index = self.expr()?;
                        self.expect(Tok::RBracket)?;
                        Ok(Expr::new(
                            ExprKind::Index {
                                base: name,
                                index: Box::new(index),
                            },
                            span,
                        ))
                    }
                    Tok::LParen => {
                        self.bump();
                        let mut args = Vec::new();
                        if self.peek() != Tok::RParen {
                            loop {
                                args.push(self.expr()?);
                                if !self.eat(Tok::Comma) {
                                    break;
                                }
                            }
                        }
                        self.expect(Tok::RParen)?;
                        Ok(Expr::new(ExprKind::Call { callee: name, args }, span))
                    }
                    _ => Ok(Expr::new(ExprKind::Var(name), span)),
                }
            }
            _ => Err(self.error_here(&[Tok::IntLit, Tok::Ident, Tok::LParen])),
        }
    }
}

fn parse_int_text(text: &str) -> i64 {
    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        // Hex literals cover the full 32-bit pattern space; 0xFFFFFFFF is -1.
        let raw = u64::from_str_radix(hex, 16).unwrap_or(0);
        if raw <= u32::MAX as u64 {
            raw as u32 as i32 as i64
        } else {
            raw as i64
        }
    } else {
        text.parse().unwrap_or(0)
    }
}

/// Binary operator for a token plus its precedence (higher binds tighter).
fn binop_for(tok: Tok) -> Option<(BinOp, u8)> {
    Some(match tok {
        Tok::Star => (BinOp::Mul, 10),
        Tok::Slash => (BinOp::Div, 10),
        Tok::Percent => (BinOp::Rem, 10),
        Tok::Plus => (BinOp::Add, 9),
        Tok::Minus => (BinOp::Sub, 9),
        Tok::Shl => (BinOp::Shl, 8),
        Tok::Shr => (BinOp::Shr, 8),
        Tok::Lt => (BinOp::Lt, 7),
        Tok::Le => (BinOp::Le, 7),
        Tok::Gt => (BinOp::Gt, 7),
        Tok::Ge => (BinOp::Ge, 7),
        Tok::EqEq => (BinOp::Eq, 6),
        Tok::Ne => (BinOp::Ne, 6),
        Tok::Amp => (BinOp::BitAnd, 5),
        Tok::Caret => (BinOp::BitXor, 4),
        Tok::Pipe => (BinOp::BitOr, 3),
        Tok::AmpAmp => (BinOp::LogAnd, 2),
        Tok::PipePipe => (BinOp::LogOr, 1),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_even_odd_loops() {
        let src = "
void f(i32 a[256], i32 b[256]) {
    for (i32 i = 0; i < 256; i += 2) { a[i] = a[i] + b[i]; }
    for (i32 j = 1; j < 256; j += 2) { a[j] = a[j] + b[j]; }
}";
        let prog = parse(src).unwrap();
        let body = prog.functions[0].body.as_ref().unwrap();
        assert_eq!(body.len(), 2);
        for stmt in body {
            let StmtKind::For { step, .. } = &stmt.kind else {
                panic!("expected for loop, got {:?}", stmt.kind);
            };
            let StmtKind::Assign { op, value, .. } = &step.kind else {
                panic!("expected step assignment");
            };
            assert_eq!(*op, Some(BinOp::Add));
            assert_eq!(value.kind, ExprKind::IntLit(2));
        }
    }

    #[test]
    fn parses_empty_function() {
        let prog = parse("void f() {}").unwrap();
        assert_eq!(prog.functions.len(), 1);
        assert_eq!(prog.functions[0].body.as_ref().unwrap().len(), 0);
    }

    #[test]
    fn loop_forms_are_distinguished() {
        let src = "
void f(i32 n) {
    i32 x = 0;
    while (x < n) { x = x + 1; }
    do { x = x - 1; } while (x > 0);
}";
        let prog = parse(src).unwrap();
        let body = prog.functions[0].body.as_ref().unwrap();
        assert!(matches!(body[1].kind, StmtKind::While { .. }));
        assert!(matches!(body[2].kind, StmtKind::DoWhile { .. }));
    }

    #[test]
    fn reports_error_location_and_expected_set() {
        let err = parse("void f( { }").unwrap_err();
        assert!(!err.0.is_empty());
        assert_eq!(err.0[0].span.line, 1);
        assert!(!err.0[0].expected.is_empty());
    }

    #[test]
    fn collects_multiple_errors() {
        let err = parse("void f() { x = ; y = 1 + ; }").unwrap_err();
        assert!(err.0.len() >= 2, "got {:?}", err.0);
    }
}
