//! LIR executor with dynamic instruction counting.
//!
//! Counts classify every executed instruction: scalar/vector arithmetic,
//! scalar/vector memory, data movement (broadcast/insert/extract/shuffle),
//! and branches (every executed terminator). Taken backward edges are
//! additionally metered as loop iterations. Masked operations count once
//! regardless of the mask.

use std::collections::BTreeMap;

use crate::interp::{extern_result, ArrayVal, ConstValJson, DynCounts, MachineVal, RunEnv, RunOutput, Trap};
use crate::lir::{LOperand, LirFunction, LirInst, Reg, Terminator};
use crate::sir::ParamKind;
use crate::types::{eval_binop, eval_cast, eval_unop, ConstVal, Scalar, TrapKind};

/// Execute an LIR function against an environment.
pub fn run_lir(func: &LirFunction, env: &RunEnv) -> Result<(RunOutput, DynCounts), Trap> {
    let mut st = Exec {
        func,
        env,
        regs: vec![None; func.next_reg as usize],
        arrays: env.arrays.clone(),
        counts: DynCounts::default(),
        steps: 0,
    };
    for (i, p) in func.params.iter().enumerate() {
        match &p.kind {
            ParamKind::Scalar(_) => {
                let v = env
                    .scalar(&p.name)
                    .ok_or_else(|| Trap::internal(format!("missing argument `{}`", p.name)))?;
                let r = func.param_regs[i].unwrap();
                st.regs[r.0 as usize] = Some(MachineVal::Scalar(v));
            }
            ParamKind::Array { .. } => {
                if !st.arrays.contains_key(&p.name) {
                    return Err(Trap::internal(format!("missing array `{}`", p.name)));
                }
            }
        }
    }

    let mut block = 0usize;
    let ret = loop {
        for inst in &func.blocks[block].instrs {
            st.exec(inst)?;
        }
        st.counts.branches += 1;
        st.tick()?;
        match &func.blocks[block].term {
            Terminator::Jump(t) => {
                if *t <= block {
                    st.counts.loop_iters += 1;
                }
                block = *t;
            }
            Terminator::Br {
                cond,
                then_to,
                else_to,
            } => {
                let c = st
                    .operand(*cond)?
                    .as_scalar()
                    .and_then(|v| v.as_bool())
                    .ok_or_else(|| Trap::internal("branch condition must be bool"))?;
                let t = if c { *then_to } else { *else_to };
                if t <= block {
                    st.counts.loop_iters += 1;
                }
                block = t;
            }
            Terminator::Ret(v) => {
                break match v {
                    Some(op) => Some(
                        st.operand(*op)?
                            .as_scalar()
                            .ok_or_else(|| Trap::internal("scalar return"))?,
                    ),
                    None => None,
                };
            }
        }
    };

    Ok((
        RunOutput {
            ret: ret.map(ConstValJson),
            arrays: st.arrays,
        },
        st.counts,
    ))
}

struct Exec<'a> {
    func: &'a LirFunction,
    env: &'a RunEnv,
    regs: Vec<Option<MachineVal>>,
    arrays: BTreeMap<String, ArrayVal>,
    counts: DynCounts,
    steps: u64,
}

impl<'a> Exec<'a> {
    fn tick(&mut self) -> Result<(), Trap> {
        self.steps += 1;
        if self.steps > self.env.max_steps {
            Err(Trap::internal_kind(TrapKind::StepLimit))
        } else {
            Ok(())
        }
    }

    fn operand(&self, op: LOperand) -> Result<MachineVal, Trap> {
        match op {
            LOperand::Imm(c) => Ok(MachineVal::Scalar(c)),
            LOperand::Reg(r) => self.regs[r.0 as usize]
                .clone()
                .ok_or_else(|| Trap::internal(format!("read of unwritten {r}"))),
        }
    }

    fn scalar(&self, op: LOperand) -> Result<ConstVal, Trap> {
        self.operand(op)?
            .as_scalar()
            .ok_or_else(|| Trap::internal("expected scalar"))
    }

    fn vector(&self, op: LOperand) -> Result<Vec<ConstVal>, Trap> {
        Ok(self
            .operand(op)?
            .as_vector()
            .ok_or_else(|| Trap::internal("expected vector"))?
            .to_vec())
    }

    fn mask(&self, op: LOperand) -> Result<Vec<bool>, Trap> {
        Ok(self
            .operand(op)?
            .as_mask()
            .ok_or_else(|| Trap::internal("expected mask"))?
            .to_vec())
    }

    fn set(&mut self, r: Reg, v: MachineVal) {
        self.regs[r.0 as usize] = Some(v);
    }

    fn array_name(&self, idx: usize) -> &str {
        &self.func.params[idx].name
    }

    fn bounds(&self, array: usize, index: i64, width: u32) -> Result<usize, Trap> {
        let len = self.arrays[self.array_name(array)].len();
        if index < 0 || index as usize + width as usize > len {
            return Err(Trap::internal_kind(TrapKind::OutOfBounds {
                array: self.array_name(array).to_string(),
                index,
                len,
            }));
        }
        Ok(index as usize)
    }

    fn exec(&mut self, inst: &LirInst) -> Result<(), Trap> {
        self.tick()?;
        match inst {
            LirInst::Mov { dst, src } => {
                self.counts.scalar_arith += 1;
                let v = self.operand(*src)?;
                self.set(*dst, v);
            }
            LirInst::Bin { dst, op, lhs, rhs, .. } => {
                self.counts.scalar_arith += 1;
                let l = self.scalar(*lhs)?;
                let r = self.scalar(*rhs)?;
                let v = eval_binop(*op, l, r).map_err(Trap::internal_kind)?;
                self.set(*dst, MachineVal::Scalar(v));
            }
            LirInst::Un { dst, op, operand, .. } => {
                self.counts.scalar_arith += 1;
                let v = self.scalar(*operand)?;
                self.set(
                    *dst,
                    MachineVal::Scalar(eval_unop(*op, v).map_err(Trap::internal_kind)?),
                );
            }
            LirInst::Cast { dst, to, operand } => {
                self.counts.scalar_arith += 1;
                let v = self.scalar(*operand)?;
                self.set(
                    *dst,
                    MachineVal::Scalar(eval_cast(*to, v).map_err(Trap::internal_kind)?),
                );
            }
            LirInst::Select {
                dst,
                cond,
                if_true,
                if_false,
                ..
            } => {
                self.counts.scalar_arith += 1;
                let c = self
                    .scalar(*cond)?
                    .as_bool()
                    .ok_or_else(|| Trap::internal("select condition"))?;
                let v = self.operand(if c { *if_true } else { *if_false })?;
                self.set(*dst, v);
            }
            LirInst::Load { dst, array, index, .. } => {
                self.counts.scalar_mem += 1;
                let i = self.scalar(*index)?.as_i32().unwrap_or(0) as i64;
                let at = self.bounds(*array, i, 1)?;
                let v = self.arrays[self.array_name(*array)].get(at).unwrap();
                self.set(*dst, MachineVal::Scalar(v));
            }
            LirInst::Store {
                array,
                index,
                value,
                ..
            } => {
                self.counts.scalar_mem += 1;
                let i = self.scalar(*index)?.as_i32().unwrap_or(0) as i64;
                let at = self.bounds(*array, i, 1)?;
                let v = self.scalar(*value)?;
                let name = self.array_name(*array).to_string();
                self.arrays.get_mut(&name).unwrap().set(at, v);
            }
            LirInst::Call {
                dst,
                callee,
                args,
                ret,
            } => {
                self.counts.scalar_arith += 1;
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.scalar(*a)?);
                }
                let out = extern_result(callee, &vals, self.env.extern_seed, *ret);
                if let (Some(d), Some(v)) = (dst, out) {
                    self.set(*d, MachineVal::Scalar(v));
                }
            }
            LirInst::VConst { dst, elem, lanes } => {
                self.counts.vector_arith += 1;
                let v = if *elem == Scalar::Bool {
                    MachineVal::Mask(lanes.iter().map(|c| c.as_bool().unwrap_or(false)).collect())
                } else {
                    MachineVal::Vector(lanes.clone())
                };
                self.set(*dst, v);
            }
            LirInst::VBroadcast {
                dst,
                elem,
                lanes,
                scalar,
            } => {
                self.counts.movement += 1;
                let v = self.scalar(*scalar)?;
                let out = if *elem == Scalar::Bool {
                    MachineVal::Mask(vec![v.as_bool().unwrap_or(false); *lanes as usize])
                } else {
                    MachineVal::Vector(vec![v; *lanes as usize])
                };
                self.set(*dst, out);
            }
            LirInst::VBin { dst, op, lhs, rhs, .. } => {
                self.counts.vector_arith += 1;
                let l = self.vector(*lhs)?;
                let r = self.vector(*rhs)?;
                if l.len() != r.len() {
                    return Err(Trap::internal("lane mismatch"));
                }
                if op.is_comparison() {
                    let mut m = Vec::with_capacity(l.len());
                    for (a, b) in l.iter().zip(&r) {
                        m.push(
                            eval_binop(*op, *a, *b)
                                .map_err(Trap::internal_kind)?
                                .as_bool()
                                .unwrap(),
                        );
                    }
                    self.set(*dst, MachineVal::Mask(m));
                } else {
                    let mut out = Vec::with_capacity(l.len());
                    for (a, b) in l.iter().zip(&r) {
                        out.push(eval_binop(*op, *a, *b).map_err(Trap::internal_kind)?);
                    }
                    self.set(*dst, MachineVal::Vector(out));
                }
            }
            LirInst::VUn { dst, op, operand, .. } => {
                self.counts.vector_arith += 1;
                let v = self.vector(*operand)?;
                let mut out = Vec::with_capacity(v.len());
                for a in v {
                    out.push(eval_unop(*op, a).map_err(Trap::internal_kind)?);
                }
                self.set(*dst, MachineVal::Vector(out));
            }
            LirInst::VCast { dst, to, operand, .. } => {
                self.counts.vector_arith += 1;
                let v = self.vector(*operand)?;
                let mut out = Vec::with_capacity(v.len());
                for a in v {
                    out.push(eval_cast(*to, a).map_err(Trap::internal_kind)?);
                }
                self.set(*dst, MachineVal::Vector(out));
            }
            LirInst::VSelect {
                dst,
                mask,
                if_true,
                if_false,
                ..
            } => {
                self.counts.vector_arith += 1;
                let m = self.mask(*mask)?;
                let t = self.vector(*if_true)?;
                let f = self.vector(*if_false)?;
                let out: Vec<ConstVal> = m
                    .iter()
                    .enumerate()
                    .map(|(i, b)| if *b { t[i] } else { f[i] })
                    .collect();
                self.set(*dst, MachineVal::Vector(out));
            }
            LirInst::VLoad {
                dst,
                array,
                lanes,
                index,
                ..
            } => {
                self.counts.vector_mem += 1;
                let i = self.scalar(*index)?.as_i32().unwrap_or(0) as i64;
                let at = self.bounds(*array, i, *lanes)?;
                let arr = &self.arrays[self.array_name(*array)];
                let out: Vec<ConstVal> =
                    (0..*lanes as usize).map(|k| arr.get(at + k).unwrap()).collect();
                self.set(*dst, MachineVal::Vector(out));
            }
            LirInst::VStore {
                array,
                lanes,
                index,
                value,
                mask,
                ..
            } => {
                self.counts.vector_mem += 1;
                let i = self.scalar(*index)?.as_i32().unwrap_or(0) as i64;
                let v = self.vector(*value)?;
                let m = match mask {
                    Some(mop) => Some(self.mask(*mop)?),
                    None => None,
                };
                let name = self.array_name(*array).to_string();
                for k in 0..*lanes as usize {
                    if m.as_ref().is_some_and(|m| !m[k]) {
                        continue;
                    }
                    let at = self.bounds(*array, i + k as i64, 1)?;
                    self.arrays.get_mut(&name).unwrap().set(at, v[k]);
                }
            }
            LirInst::VInsert {
                dst,
                elem,
                vec,
                lane,
                scalar,
                ..
            } => {
                self.counts.movement += 1;
                let s = self.scalar(*scalar)?;
                let out = if *elem == Scalar::Bool {
                    let mut m = self.mask(*vec)?;
                    m[*lane as usize] = s.as_bool().unwrap_or(false);
                    MachineVal::Mask(m)
                } else {
                    let mut v = self.vector(*vec)?;
                    v[*lane as usize] = s;
                    MachineVal::Vector(v)
                };
                self.set(*dst, out);
            }
            LirInst::VExtract { dst, vec, lane, .. } => {
                self.counts.movement += 1;
                let v = match self.operand(*vec)? {
                    MachineVal::Mask(m) => ConstVal::Bool(m[*lane as usize]),
                    MachineVal::Vector(v) => v[*lane as usize],
                    MachineVal::Scalar(_) => {
                        return Err(Trap::internal("vextract from a scalar"))
                    }
                };
                self.set(*dst, MachineVal::Scalar(v));
            }
            LirInst::VShuffle {
                dst, a, b, sel, ..
            } => {
                self.counts.movement += 1;
                let av = self.vector(*a)?;
                let bv = match b {
                    Some(op) => self.vector(*op)?,
                    None => Vec::new(),
                };
                let mut out = Vec::with_capacity(sel.len());
                for s in sel {
                    let s = *s as usize;
                    out.push(if s < av.len() {
                        av[s]
                    } else {
                        bv[s - av.len()]
                    });
                }
                self.set(*dst, MachineVal::Vector(out));
            }
        }
        Ok(())
    }
}
