//! Tree-walking interpreter for typed MiniC ASTs — the semantic oracle.

use std::collections::HashMap;

use crate::ast::*;
use crate::diag::Span;
use crate::interp::{extern_result, ArrayVal, ConstValJson, RunEnv, RunOutput, Trap};
use crate::types::{eval_binop, eval_cast, eval_unop, ConstVal, TrapKind};

/// Execute `fn_name` from a typed program against `env`.
pub fn run_ast(program: &Program, fn_name: &str, env: &RunEnv) -> Result<RunOutput, Trap> {
    let func = program
        .function(fn_name)
        .ok_or_else(|| Trap::internal(format!("no function `{fn_name}`")))?;
    let body = func
        .body
        .as_ref()
        .ok_or_else(|| Trap::internal(format!("`{fn_name}` is extern")))?;

    let mut st = Interp {
        program,
        env,
        arrays: env.arrays.clone(),
        scopes: vec![HashMap::new()],
        steps: 0,
    };
    for p in &func.params {
        match &p.ty {
            ParamType::Scalar(s) => {
                let v = env
                    .scalar(&p.name)
                    .ok_or_else(|| Trap::internal(format!("missing argument `{}`", p.name)))?;
                if v.ty() != *s {
                    return Err(Trap::internal(format!("argument `{}` has wrong type", p.name)));
                }
                st.scopes[0].insert(p.name.clone(), v);
            }
            ParamType::Array { elem, len } => {
                let arr = st
                    .arrays
                    .get(&p.name)
                    .ok_or_else(|| Trap::internal(format!("missing array `{}`", p.name)))?;
                if arr.elem_ty() != *elem {
                    return Err(Trap::internal(format!("array `{}` has wrong type", p.name)));
                }
                let want = match len {
                    ArrayLen::Const(n) => Some(*n),
                    ArrayLen::Param(l) => env.scalar(l).and_then(|v| v.as_i32()).map(i64::from),
                };
                if let Some(want) = want {
                    if want < 0 || arr.len() as i64 != want {
                        return Err(Trap::internal(format!(
                            "array `{}` has length {}, declared {}",
                            p.name,
                            arr.len(),
                            want
                        )));
                    }
                }
            }
        }
    }

    let flow = st.run_block(body)?;
    let ret = match flow {
        Flow::Returned(v) => v,
        Flow::Normal => None,
    };
    Ok(RunOutput {
        ret: ret.map(ConstValJson),
        arrays: st.arrays,
    })
}

enum Flow {
    Normal,
    Returned(Option<ConstVal>),
}

struct Interp<'a> {
    program: &'a Program,
    env: &'a RunEnv,
    arrays: std::collections::BTreeMap<String, ArrayVal>,
    scopes: Vec<HashMap<String, ConstVal>>,
    steps: u64,
}

impl<'a> Interp<'a> {
    fn tick(&mut self, span: Span) -> Result<(), Trap> {
        self.steps += 1;
        if self.steps > self.env.max_steps {
            Err(Trap::new(TrapKind::StepLimit, span))
        } else {
            Ok(())
        }
    }

    fn lookup(&self, name: &str) -> Option<ConstVal> {
        self.scopes.iter().rev().find_map(|m| m.get(name)).copied()
    }

    fn assign_var(&mut self, name: &str, v: ConstVal) {
        for scope in self.scopes.iter_mut().rev() {
            if let Some(slot) = scope.get_mut(name) {
                *slot = v;
                return;
            }
        }
        unreachable!("assignment to undeclared `{name}` survived typeck");
    }

    fn index_of(&mut self, base: &str, index: &Expr) -> Result<usize, Trap> {
        let idx = self.eval(index)?;
        let i = idx.as_i32().expect("index typed i32") as i64;
        let len = self.arrays[base].len();
        if i < 0 || i as usize >= len {
            return Err(Trap::new(
                TrapKind::OutOfBounds {
                    array: base.to_string(),
                    index: i,
                    len,
                },
                index.span,
            ));
        }
        Ok(i as usize)
    }

    fn run_block(&mut self, block: &Block) -> Result<Flow, Trap> {
        self.scopes.push(HashMap::new());
        let out = self.run_stmts(block);
        self.scopes.pop();
        out
    }

    fn run_stmts(&mut self, block: &Block) -> Result<Flow, Trap> {
        for stmt in block {
            match self.run_stmt(stmt)? {
                Flow::Normal => {}
                flow => return Ok(flow),
            }
        }
        Ok(Flow::Normal)
    }

    fn run_stmt(&mut self, stmt: &Stmt) -> Result<Flow, Trap> {
        self.tick(stmt.span)?;
        match &stmt.kind {
            StmtKind::Decl { name, init, .. } => {
                let v = self.eval(init)?;
                self.scopes.last_mut().unwrap().insert(name.clone(), v);
            }
            StmtKind::Assign { target, op, value } => match target {
                LValue::Var(name) => {
                    let rhs = self.eval(value)?;
                    let v = match op {
                        None => rhs,
                        Some(op) => {
                            let cur = self.lookup(name).expect("declared variable");
                            eval_binop(*op, cur, rhs).map_err(|k| Trap::new(k, stmt.span))?
                        }
                    };
                    self.assign_var(name, v);
                }
                LValue::Index { base, index } => {
                    let i = self.index_of(base, index)?;
                    let rhs = self.eval(value)?;
                    let v = match op {
                        None => rhs,
                        Some(op) => {
                            let cur = self.arrays[base].get(i).unwrap();
                            eval_binop(*op, cur, rhs).map_err(|k| Trap::new(k, stmt.span))?
                        }
                    };
                    let ok = self.arrays.get_mut(base).unwrap().set(i, v);
                    debug_assert!(ok);
                }
            },
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let c = self.eval_bool(cond)?;
                if c {
                    return self.run_block(then_body);
                } else if let Some(e) = else_body {
                    return self.run_block(e);
                }
            }
            StmtKind::For {
                init,
                cond,
                step,
                body,
            } => {
                self.scopes.push(HashMap::new());
                let out = (|| {
                    self.run_stmt(init)?;
                    loop {
                        if !self.eval_bool(cond)? {
                            break Ok(Flow::Normal);
                        }
                        match self.run_block(body)? {
                            Flow::Normal => {}
                            flow => break Ok(flow),
                        }
                        self.run_stmt(step)?;
                    }
                })();
                self.scopes.pop();
                return out;
            }
            StmtKind::While { cond, body } => loop {
                self.tick(stmt.span)?;
                if !self.eval_bool(cond)? {
                    break;
                }
                match self.run_block(body)? {
                    Flow::Normal => {}
                    flow => return Ok(flow),
                }
            },
            StmtKind::DoWhile { body, cond } => loop {
                self.tick(stmt.span)?;
                match self.run_block(body)? {
                    Flow::Normal => {}
                    flow => return Ok(flow),
                }
                if !self.eval_bool(cond)? {
                    break;
                }
            },
            StmtKind::Return(v) => {
                let val = v.as_ref().map(|e| self.eval(e)).transpose()?;
                return Ok(Flow::Returned(val));
            }
            StmtKind::ExprStmt(e) => {
                self.eval(e)?;
            }
            StmtKind::Break | StmtKind::Continue => {
                return Err(Trap::internal("break/continue are rejected before execution"));
            }
        }
        Ok(Flow::Normal)
    }

    fn eval_bool(&mut self, e: &Expr) -> Result<bool, Trap> {
        Ok(self.eval(e)?.as_bool().expect("condition typed bool"))
    }

    fn eval(&mut self, e: &Expr) -> Result<ConstVal, Trap> {
        self.tick(e.span)?;
        match &e.kind {
            ExprKind::IntLit(v) => Ok(ConstVal::I32(*v as i32)),
            ExprKind::FloatLit(v) => Ok(ConstVal::F32(*v as f32)),
            ExprKind::Var(name) => Ok(self.lookup(name).expect("declared variable")),
            ExprKind::Index { base, index } => {
                let i = self.index_of(base, index)?;
                Ok(self.arrays[base].get(i).unwrap())
            }
            ExprKind::Unary { op, expr } => {
                let v = self.eval(expr)?;
                eval_unop(*op, v).map_err(|k| Trap::new(k, e.span))
            }
            ExprKind::Binary { op, lhs, rhs } => {
                // Logical operators evaluate both sides (no short circuit).
                let l = self.eval(lhs)?;
                let r = self.eval(rhs)?;
                eval_binop(*op, l, r).map_err(|k| Trap::new(k, e.span))
            }
            ExprKind::Call { callee, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                let decl = self.program.function(callee).expect("checked call");
                let ret = match decl.ret {
                    RetType::Void => None,
                    RetType::Scalar(s) => Some(s),
                };
                Ok(
                    extern_result(callee, &vals, self.env.extern_seed, ret)
                        .unwrap_or(ConstVal::I32(0)),
                )
            }
            ExprKind::Cast { to, expr } => {
                let v = self.eval(expr)?;
                eval_cast(*to, v).map_err(|k| Trap::new(k, e.span))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::typeck::typecheck;

    fn typed(src: &str) -> Program {
        typecheck(&parse(src).unwrap()).unwrap()
    }

    fn env_i32(arrays: &[(&str, Vec<i32>)], scalars: &[(&str, i32)]) -> RunEnv {
        let mut env = RunEnv::default();
        for (name, vals) in arrays {
            env.arrays.insert(name.to_string(), ArrayVal::I32(vals.clone()));
        }
        for (name, v) in scalars {
            env.set_scalar(name, ConstVal::I32(*v));
        }
        env
    }

    const EVEN_ODD: &str = "
void f(i32 a[LENGTH], i32 b[LENGTH], i32 LENGTH) {
    for (i32 i = 0; i < LENGTH; i += 2) { a[i] = a[i] + b[i]; }
    for (i32 j = 1; j < LENGTH; j += 2) { a[j] = a[j] + b[j]; }
}";

    #[test]
    fn even_odd_loops_cover_all_indices() {
        let prog = typed(EVEN_ODD);
        let a: Vec<i32> = (0..8).collect();
        let b: Vec<i32> = (10..18).collect();
        let env = env_i32(&[("a", a.clone()), ("b", b.clone())], &[("LENGTH", 8)]);
        let out = run_ast(&prog, "f", &env).unwrap();
        let ArrayVal::I32(got) = &out.arrays["a"] else { panic!() };
        let want: Vec<i32> = (0..8).map(|i| a[i as usize] + b[i as usize]).collect();
        assert_eq!(*got, want);
    }

    #[test]
    fn zero_length_leaves_arrays_unchanged() {
        let prog = typed(EVEN_ODD);
        let env = env_i32(&[("a", vec![]), ("b", vec![])], &[("LENGTH", 0)]);
        let out = run_ast(&prog, "f", &env).unwrap();
        assert_eq!(out.arrays["a"], ArrayVal::I32(vec![]));
    }

    #[test]
    fn hex_unpack_extracts_bytes() {
        let src = "
void unpack(i32 color[4], i32 hexValue) {
    color[0] = hexValue >> 24;
    color[1] = (hexValue >> 16) & 255;
    color[2] = (hexValue >> 8) & 255;
    color[3] = hexValue & 255;
}";
        let prog = typed(src);
        let env = env_i32(&[("color", vec![0; 4])], &[("hexValue", 0x11223344)]);
        let out = run_ast(&prog, "unpack", &env).unwrap();
        assert_eq!(out.arrays["color"], ArrayVal::I32(vec![0x11, 0x22, 0x33, 0x44]));
    }

    #[test]
    fn out_of_bounds_traps() {
        let prog = typed("void f(i32 a[4]) { a[4] = 1; }");
        let env = env_i32(&[("a", vec![0; 4])], &[]);
        let trap = run_ast(&prog, "f", &env).unwrap_err();
        assert!(matches!(trap.kind, TrapKind::OutOfBounds { .. }));
    }

    #[test]
    fn extern_calls_are_deterministic() {
        let src = "
extern i32 g(i32 x);
void f(i32 o[2], i32 x) { o[0] = g(x); o[1] = g(x); }";
        let prog = typed(src);
        let env = env_i32(&[("o", vec![0; 2])], &[("x", 7)]);
        let out1 = run_ast(&prog, "f", &env).unwrap();
        let out2 = run_ast(&prog, "f", &env).unwrap();
        assert_eq!(out1, out2);
        let ArrayVal::I32(o) = &out1.arrays["o"] else { panic!() };
        assert_eq!(o[0], o[1]);
    }
}
