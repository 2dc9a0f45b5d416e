//! Reference evaluator for VIR functions (scalar and vector entries).
//!
//! Entries run in list order; an entry executes exactly when its predicate
//! holds under the current values. A predicate literal whose atom is not
//! yet defined evaluates false: the atom's defining entry was itself
//! skipped, so any term requiring it cannot hold.

use std::collections::{BTreeMap, HashMap};

use crate::interp::{extern_result, ArrayVal, ConstValJson, MachineVal, RunEnv, RunOutput, Trap};
use crate::predicate::{PredAtom, Predicate};
use crate::sir::ParamKind;
use crate::types::{eval_binop, eval_cast, eval_unop, ConstVal, TrapKind};

use super::{CodeList, Item, LoopItem, VOperand, VirFunction, VirInstr, VirInstrKind, VirValue, WithDef};

/// Execute a VIR function against an environment.
pub fn run_vir(vf: &VirFunction, env: &RunEnv) -> Result<RunOutput, Trap> {
    let mut st = Eval {
        vf,
        env,
        vals: HashMap::new(),
        arrays: env.arrays.clone(),
        params: Vec::new(),
        steps: 0,
    };
    for p in &vf.params {
        match &p.kind {
            ParamKind::Scalar(_) => {
                let v = env
                    .scalar(&p.name)
                    .ok_or_else(|| Trap::internal(format!("missing argument `{}`", p.name)))?;
                st.params.push(Some(v));
            }
            ParamKind::Array { .. } => {
                if !st.arrays.contains_key(&p.name) {
                    return Err(Trap::internal(format!("missing array `{}`", p.name)));
                }
                st.params.push(None);
            }
        }
    }
    st.exec_list(&vf.layer0)?;
    let ret = match vf.ret {
        Some(op) => Some(ConstValJson(st.operand(op)?.as_scalar().ok_or_else(|| {
            Trap::internal("vector return value")
        })?)),
        None => None,
    };
    Ok(RunOutput {
        ret,
        arrays: st.arrays,
    })
}

struct Eval<'a> {
    vf: &'a VirFunction,
    env: &'a RunEnv,
    vals: HashMap<VirValue, MachineVal>,
    arrays: BTreeMap<String, ArrayVal>,
    params: Vec<Option<ConstVal>>,
    steps: u64,
}

impl<'a> Eval<'a> {
    fn tick(&mut self) -> Result<(), Trap> {
        self.steps += 1;
        if self.steps > self.env.max_steps {
            Err(Trap::internal_kind(TrapKind::StepLimit))
        } else {
            Ok(())
        }
    }

    fn operand(&self, op: VOperand) -> Result<MachineVal, Trap> {
        match op {
            VOperand::Const(c) => Ok(MachineVal::Scalar(c)),
            VOperand::Param(i) => self.params[i]
                .map(MachineVal::Scalar)
                .ok_or_else(|| Trap::internal("array parameter used as scalar")),
            VOperand::Value(v) => self
                .vals
                .get(&v)
                .cloned()
                .ok_or_else(|| Trap::internal(format!("read of unexecuted value {v}"))),
        }
    }

    fn scalar(&self, op: VOperand) -> Result<ConstVal, Trap> {
        self.operand(op)?
            .as_scalar()
            .ok_or_else(|| Trap::internal("expected scalar"))
    }

    fn pred_holds(&self, p: &Predicate) -> bool {
        let assign = |a: PredAtom| -> Option<bool> {
            self.vals
                .get(&VirValue(a.0))
                .and_then(|v| v.as_scalar())
                .and_then(|c| c.as_bool())
        };
        match p {
            Predicate::True => true,
            Predicate::False => false,
            Predicate::Dnf(terms) => terms.iter().any(|t| {
                t.literals()
                    .iter()
                    .all(|l| assign(l.atom) == Some(l.positive))
            }),
        }
    }

    fn array(&self, idx: usize) -> &ArrayVal {
        &self.arrays[&self.vf.params[idx].name]
    }

    fn bounds_check(&self, array: usize, index: i64, lanes: u32) -> Result<usize, Trap> {
        let arr = self.array(array);
        let len = arr.len();
        if index < 0 || (index as usize) + lanes as usize > len {
            return Err(Trap::internal_kind(TrapKind::OutOfBounds {
                array: self.vf.params[array].name.clone(),
                index,
                len,
            }));
        }
        Ok(index as usize)
    }

    fn exec_list(&mut self, list: &CodeList) -> Result<(), Trap> {
        for entry in list {
            self.tick()?;
            if !self.pred_holds(&entry.pred) {
                continue;
            }
            match &entry.item {
                Item::Instr(instr) => self.exec_instr(instr)?,
                Item::Loop(l) => self.exec_loop(l)?,
            }
        }
        Ok(())
    }

    fn exec_loop(&mut self, l: &LoopItem) -> Result<(), Trap> {
        // Initialize the with list.
        for wd in &l.with_defs {
            let init = self.operand(wd.init())?;
            self.vals.insert(wd.result(), init);
        }
        loop {
            self.tick()?;
            self.exec_list(&l.body)?;
            if !self.pred_holds(&l.latch) {
                break;
            }
            // Advance carried values for the next iteration.
            let mut updates = Vec::with_capacity(l.with_defs.len());
            for wd in &l.with_defs {
                match wd {
                    WithDef::Iota { result, step, .. } => {
                        let cur = self.vals[result]
                            .as_scalar()
                            .and_then(|c| c.as_i32())
                            .ok_or_else(|| Trap::internal("iota holds a scalar i32"))?;
                        updates.push((
                            *result,
                            MachineVal::Scalar(ConstVal::I32(cur.wrapping_add(*step as i32))),
                        ));
                    }
                    WithDef::Mu { result, next, .. } => {
                        updates.push((*result, self.operand(*next)?));
                    }
                }
            }
            for (v, val) in updates {
                self.vals.insert(v, val);
            }
        }
        for (outer, inner) in &l.results {
            let v = self.operand(*inner)?;
            self.vals.insert(*outer, v);
        }
        Ok(())
    }

    fn exec_instr(&mut self, instr: &VirInstr) -> Result<(), Trap> {
        let value: Option<MachineVal> = match &instr.kind {
            VirInstrKind::Bin { op, lhs, rhs, .. } => {
                let l = self.scalar(*lhs)?;
                let r = self.scalar(*rhs)?;
                Some(MachineVal::Scalar(
                    eval_binop(*op, l, r).map_err(Trap::internal_kind)?,
                ))
            }
            VirInstrKind::Un { op, operand, .. } => {
                let v = self.scalar(*operand)?;
                Some(MachineVal::Scalar(
                    eval_unop(*op, v).map_err(Trap::internal_kind)?,
                ))
            }
            VirInstrKind::Cast { to, operand } => {
                let v = self.scalar(*operand)?;
                Some(MachineVal::Scalar(
                    eval_cast(*to, v).map_err(Trap::internal_kind)?,
                ))
            }
            VirInstrKind::Select {
                cond,
                if_true,
                if_false,
                ..
            } => {
                let c = self
                    .scalar(*cond)?
                    .as_bool()
                    .ok_or_else(|| Trap::internal("select condition must be bool"))?;
                // Only the chosen arm is read.
                let chosen = if c { *if_true } else { *if_false };
                Some(self.operand(chosen)?)
            }
            VirInstrKind::Load { array, index, .. } => {
                let i = self
                    .scalar(*index)?
                    .as_i32()
                    .ok_or_else(|| Trap::internal("index must be i32"))? as i64;
                let at = self.bounds_check(*array, i, 1)?;
                Some(MachineVal::Scalar(self.array(*array).get(at).unwrap()))
            }
            VirInstrKind::Store {
                array,
                index,
                value,
                ..
            } => {
                let i = self
                    .scalar(*index)?
                    .as_i32()
                    .ok_or_else(|| Trap::internal("index must be i32"))? as i64;
                let at = self.bounds_check(*array, i, 1)?;
                let v = self.scalar(*value)?;
                let name = self.vf.params[*array].name.clone();
                self.arrays.get_mut(&name).unwrap().set(at, v);
                None
            }
            VirInstrKind::Call { callee, args, ret } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.scalar(*a)?);
                }
                extern_result(callee, &vals, self.env.extern_seed, *ret)
                    .map(MachineVal::Scalar)
            }
            VirInstrKind::VConst { lanes, .. } => Some(MachineVal::Vector(lanes.clone())),
            VirInstrKind::VBroadcast { elem, lanes, scalar } => {
                let v = self.scalar(*scalar)?;
                Some(if *elem == crate::types::Scalar::Bool {
                    MachineVal::Mask(vec![v.as_bool().unwrap_or(false); *lanes as usize])
                } else {
                    MachineVal::Vector(vec![v; *lanes as usize])
                })
            }
            VirInstrKind::VBin { op, lhs, rhs, .. } => {
                let l = self.vector(*lhs)?;
                let r = self.vector(*rhs)?;
                if l.len() != r.len() {
                    return Err(Trap::internal("vector lane mismatch"));
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
                    Some(MachineVal::Mask(m))
                } else {
                    let mut out = Vec::with_capacity(l.len());
                    for (a, b) in l.iter().zip(&r) {
                        out.push(eval_binop(*op, *a, *b).map_err(Trap::internal_kind)?);
                    }
                    Some(MachineVal::Vector(out))
                }
            }
            VirInstrKind::VUn { op, operand, .. } => {
                let v = self.vector(*operand)?;
                let mut out = Vec::with_capacity(v.len());
                for a in v {
                    out.push(eval_unop(*op, a).map_err(Trap::internal_kind)?);
                }
                Some(MachineVal::Vector(out))
            }
            VirInstrKind::VCast { to, operand, .. } => {
                let v = self.vector(*operand)?;
                let mut out = Vec::with_capacity(v.len());
                for a in v {
                    out.push(eval_cast(*to, a).map_err(Trap::internal_kind)?);
                }
                Some(MachineVal::Vector(out))
            }
            VirInstrKind::VSelect {
                mask,
                if_true,
                if_false,
                ..
            } => {
                let m = self
                    .operand(*mask)?
                    .as_mask()
                    .ok_or_else(|| Trap::internal("vselect mask"))?
                    .to_vec();
                let t = self.vector(*if_true)?;
                let f = self.vector(*if_false)?;
                let mut out = Vec::with_capacity(m.len());
                for (i, b) in m.iter().enumerate() {
                    out.push(if *b { t[i] } else { f[i] });
                }
                Some(MachineVal::Vector(out))
            }
            VirInstrKind::VLoad {
                array,
                lanes,
                index,
                ..
            } => {
                let i = self
                    .scalar(*index)?
                    .as_i32()
                    .ok_or_else(|| Trap::internal("index must be i32"))? as i64;
                let at = self.bounds_check(*array, i, *lanes)?;
                let arr = self.array(*array);
                Some(MachineVal::Vector(
                    (0..*lanes as usize).map(|k| arr.get(at + k).unwrap()).collect(),
                ))
            }
            VirInstrKind::VStore {
                array,
                lanes,
                index,
                value,
                mask,
                ..
            } => {
                let i = self
                    .scalar(*index)?
                    .as_i32()
                    .ok_or_else(|| Trap::internal("index must be i32"))? as i64;
                let v = self.vector(*value)?;
                let m: Option<Vec<bool>> = match mask {
                    Some(mv) => Some(
                        self.operand(*mv)?
                            .as_mask()
                            .ok_or_else(|| Trap::internal("vstore mask"))?
                            .to_vec(),
                    ),
                    None => None,
                };
                let name = self.vf.params[*array].name.clone();
                for k in 0..*lanes as usize {
                    if m.as_ref().is_some_and(|m| !m[k]) {
                        continue;
                    }
                    // Disabled lanes never touch memory; enabled lanes
                    // bounds-check individually.
                    let at = self.bounds_check(*array, i + k as i64, 1)?;
                    self.arrays.get_mut(&name).unwrap().set(at, v[k]);
                }
                None
            }
            VirInstrKind::VInsert {
                vec, lane, scalar, ..
            } => {
                let s = self.scalar(*scalar)?;
                Some(match self.operand(*vec)? {
                    MachineVal::Mask(mut m) => {
                        m[*lane as usize] = s.as_bool().unwrap_or(false);
                        MachineVal::Mask(m)
                    }
                    MachineVal::Vector(mut v) => {
                        v[*lane as usize] = s;
                        MachineVal::Vector(v)
                    }
                    MachineVal::Scalar(_) => {
                        return Err(Trap::internal("vinsert into a scalar"))
                    }
                })
            }
            VirInstrKind::VExtract { vec, lane, .. } => {
                Some(match self.operand(*vec)? {
                    MachineVal::Mask(m) => {
                        MachineVal::Scalar(ConstVal::Bool(m[*lane as usize]))
                    }
                    MachineVal::Vector(v) => MachineVal::Scalar(v[*lane as usize]),
                    MachineVal::Scalar(_) => {
                        return Err(Trap::internal("vextract from a scalar"))
                    }
                })
            }
        };
        if let Some(r) = instr.result {
            if let Some(v) = value {
                self.vals.insert(r, v);
            }
        }
        Ok(())
    }

    fn vector(&self, op: VOperand) -> Result<Vec<ConstVal>, Trap> {
        Ok(self
            .operand(op)?
            .as_vector()
            .ok_or_else(|| Trap::internal("expected vector"))?
            .to_vec())
    }
}
