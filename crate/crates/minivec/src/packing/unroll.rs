//! Loop fusion and unroll materialization on VIR.
//!
//! Fusion merges sibling loops with provably equal trip counts into one
//! loop entry (with lists, bodies, and results concatenated), so inter-loop
//! packs become ordinary in-body packs. Unrolling clones the body with the
//! iota substituted per clone (`i, i+s, ...`), retargets the loop to step
//! `factor*s` behind a strengthened bound, and appends a scalar epilogue
//! loop for trip counts the factor does not divide. Carried values flow
//! across the pieces through loop results and selects, mirroring how loop
//! exits merge in the first place. All replacement code splices in at the
//! removed entry's exact position, so program order (and with it memory
//! order) is untouched.

use std::collections::HashMap;

use crate::predicate::{Literal, PredAtom, Predicate};
use crate::types::{BinOp, ConstVal, Scalar};
use crate::vir::{
    CodeList, Entry, Item, LoopItem, VLoopId, VOperand, VirFunction, VirInstr, VirInstrKind,
    VirIterator, VirValue, WithDef,
};

/// Run `f` with the code list owning `loop_id` detached from the function,
/// so the closure can mint values while editing the list in place.
fn with_parent_list<R>(
    vf: &mut VirFunction,
    loop_id: VLoopId,
    f: impl FnOnce(&mut VirFunction, &mut CodeList, usize) -> R,
) -> Option<R> {
    fn locate(list: &CodeList, loop_id: VLoopId) -> Option<Vec<usize>> {
        for (i, e) in list.iter().enumerate() {
            if let Item::Loop(l) = &e.item {
                if l.id == loop_id {
                    return Some(vec![i]);
                }
                if let Some(mut path) = locate(&l.body, loop_id) {
                    path.insert(0, i);
                    return Some(path);
                }
            }
        }
        None
    }
    let mut layer0 = std::mem::take(&mut vf.layer0);
    let path = match locate(&layer0, loop_id) {
        Some(p) => p,
        None => {
            vf.layer0 = layer0;
            return None;
        }
    };
    fn descend<'a>(list: &'a mut CodeList, path: &[usize]) -> (&'a mut CodeList, usize) {
        if path.len() == 1 {
            return (list, path[0]);
        }
        match &mut list[path[0]].item {
            Item::Loop(l) => descend(&mut l.body, &path[1..]),
            _ => unreachable!("path points at loops"),
        }
    }
    let result = {
        let (list, idx) = descend(&mut layer0, &path);
        f(vf, list, idx)
    };
    vf.layer0 = layer0;
    Some(result)
}

/// Substitution used while cloning: values map to operands, predicate atoms
/// through values.
#[derive(Default)]
pub struct CloneCx {
    pub values: HashMap<VirValue, VOperand>,
}

impl CloneCx {
    pub fn op(&self, o: VOperand) -> VOperand {
        match o {
            VOperand::Value(v) => self.values.get(&v).copied().unwrap_or(o),
            other => other,
        }
    }

    pub fn pred(&self, p: &Predicate) -> Predicate {
        p.map_atoms(&|a| match self.values.get(&VirValue(a.0)) {
            Some(VOperand::Value(v)) => PredAtom(v.0),
            _ => a,
        })
    }
}

/// Deep-clone a code list with fresh result values and loop ids.
pub fn clone_list(vf: &mut VirFunction, list: &CodeList, cx: &mut CloneCx) -> CodeList {
    let mut out = Vec::with_capacity(list.len());
    for e in list {
        match &e.item {
            Item::Instr(instr) => {
                let mut kind = instr.kind.clone();
                for op in kind.operands_mut() {
                    *op = cx.op(*op);
                }
                let result = instr.result.map(|r| {
                    let info = vf.values[r.0 as usize].clone();
                    let fresh = vf.new_value(info.ty, info.lanes, info.name);
                    cx.values.insert(r, VOperand::Value(fresh));
                    fresh
                });
                out.push(Entry {
                    pred: cx.pred(&e.pred),
                    iter: e.iter,
                    item: Item::Instr(VirInstr { result, kind }),
                });
            }
            Item::Loop(l) => {
                let fresh_id = vf.new_loop_id();
                // Fresh with-def results first so the body sees them.
                let mut raw_with = Vec::with_capacity(l.with_defs.len());
                for wd in &l.with_defs {
                    let r = wd.result();
                    let info = vf.values[r.0 as usize].clone();
                    let fresh = vf.new_value(info.ty, info.lanes, info.name);
                    cx.values.insert(r, VOperand::Value(fresh));
                    raw_with.push(fresh);
                }
                let body: CodeList = clone_list(vf, &l.body, cx)
                    .into_iter()
                    .map(|mut e2| {
                        if e2.iter == Some(l.id) {
                            e2.iter = Some(fresh_id);
                        }
                        e2
                    })
                    .collect();
                let with_defs = l
                    .with_defs
                    .iter()
                    .zip(raw_with)
                    .map(|(wd, fresh)| match wd {
                        WithDef::Iota {
                            init, recur, step, ..
                        } => WithDef::Iota {
                            result: fresh,
                            init: cx.op(*init),
                            recur: cx
                                .op(VOperand::Value(*recur))
                                .as_value()
                                .expect("recurrence is cloned in the body"),
                            step: *step,
                        },
                        WithDef::Mu { init, next, .. } => WithDef::Mu {
                            result: fresh,
                            init: cx.op(*init),
                            next: cx.op(*next),
                        },
                    })
                    .collect();
                let results = l
                    .results
                    .iter()
                    .map(|(outer, inner)| {
                        let info = vf.values[outer.0 as usize].clone();
                        let fresh = vf.new_value(info.ty, info.lanes, info.name);
                        cx.values.insert(*outer, VOperand::Value(fresh));
                        (fresh, cx.op(*inner))
                    })
                    .collect();
                let iterator = l.iterator.clone().map(|mut it| {
                    it.entry_atom = it
                        .entry_atom
                        .and_then(|a| cx.op(VOperand::Value(a)).as_value());
                    it.counter = cx
                        .op(VOperand::Value(it.counter))
                        .as_value()
                        .unwrap_or(it.counter);
                    it
                });
                out.push(Entry {
                    pred: cx.pred(&e.pred),
                    iter: e.iter,
                    item: Item::Loop(LoopItem {
                        id: fresh_id,
                        with_defs,
                        body,
                        latch: cx.pred(&l.latch),
                        iterator,
                        results,
                        no_unroll: l.no_unroll,
                        fuse_degree: l.fuse_degree,
                    }),
                });
            }
        }
    }
    out
}

/// The base predicate of a loop entry with its entry-check literal factored
/// out (the predicate under which the original pre-header ran).
fn base_pred(entry_pred: &Predicate, entry_atom: Option<VirValue>) -> Predicate {
    match entry_atom {
        Some(a) => entry_pred.without_literal(Literal::pos(PredAtom(a.0))),
        None => entry_pred.clone(),
    }
}

/// Fuse sibling loops (in program order) into one loop at the last
/// member's position. The caller verified legality: same code list, equal
/// trip closed forms, equal entry predicates, and no dependence between
/// the members or through the entries separating them.
pub fn fuse_loops(vf: &mut VirFunction, members: &[VLoopId]) -> Option<VLoopId> {
    assert!(members.len() >= 2);
    let fused_id = vf.new_loop_id();
    let last = *members.last().unwrap();
    with_parent_list(vf, last, |_vf, list, last_idx| {
        // Gather member positions in this list.
        let mut positions: Vec<usize> = Vec::new();
        for (i, e) in list.iter().enumerate() {
            if let Item::Loop(l) = &e.item {
                if members.contains(&l.id) {
                    positions.push(i);
                }
            }
        }
        if positions.len() != members.len() {
            return None;
        }
        debug_assert_eq!(*positions.last().unwrap(), last_idx);

        // Remove back to front, keep program order of parts.
        let mut parts: Vec<(Predicate, Option<VLoopId>, LoopItem)> = Vec::new();
        for i in positions.iter().rev() {
            let e = list.remove(*i);
            match e.item {
                Item::Loop(l) => parts.push((e.pred, e.iter, l)),
                _ => unreachable!(),
            }
        }
        parts.reverse();
        let insert_at = last_idx - (positions.len() - 1);

        let entry_pred = parts[0].0.clone();
        let entry_iter = parts[0].1;
        debug_assert!(parts.iter().all(|(p, _, _)| *p == entry_pred));

        let mut with_defs = Vec::new();
        let mut body = Vec::new();
        let mut results = Vec::new();
        let mut degree = 0;
        for (_, _, l) in &parts {
            with_defs.extend(l.with_defs.iter().cloned());
            body.extend(l.body.iter().cloned().map(|mut e| {
                if e.iter == Some(l.id) {
                    e.iter = Some(fused_id);
                }
                e
            }));
            results.extend(l.results.iter().cloned());
            degree += l.fuse_degree;
        }
        let first = &parts[0].2;
        list.insert(
            insert_at,
            Entry {
                pred: entry_pred,
                iter: entry_iter,
                item: Item::Loop(LoopItem {
                    id: fused_id,
                    with_defs,
                    body,
                    latch: first.latch.clone(),
                    iterator: first.iterator.clone(),
                    results,
                    no_unroll: false,
                    fuse_degree: degree,
                }),
            },
        );
        Some(fused_id)
    })
    .flatten()
    .inspect(|_| debug_assert_eq!(vf.validate(), Ok(())))
}

/// Materially unroll `loop_id` by `factor`. Requires a resolvable
/// iterator; factor 1 is a no-op.
pub fn unroll_loop(vf: &mut VirFunction, loop_id: VLoopId, factor: u32) -> Option<()> {
    if factor < 2 {
        return Some(());
    }
    let done = with_parent_list(vf, loop_id, |vf, list, idx| {
        let e = list.remove(idx);
        let (entry_pred, entry_iter, l) = match e.item {
            Item::Loop(l) => (e.pred, e.iter, l),
            _ => unreachable!(),
        };
        let Some(it) = l.iterator.clone() else {
            // Not unrollable; put it back untouched.
            list.insert(
                idx,
                Entry {
                    pred: entry_pred,
                    iter: entry_iter,
                    item: Item::Loop(l),
                },
            );
            return false;
        };
        let Some((cmp_op, bound_op)) = latch_comparison(&l, &it) else {
            list.insert(
                idx,
                Entry {
                    pred: entry_pred,
                    iter: entry_iter,
                    item: Item::Loop(l),
                },
            );
            return false;
        };
        let new_entries = build_unrolled(vf, entry_pred, entry_iter, l, it, cmp_op, bound_op, factor);
        for (i, ne) in new_entries.into_iter().enumerate() {
            list.insert(idx + i, ne);
        }
        true
    })?;
    if done {
        debug_assert_eq!(vf.validate(), Ok(()));
        Some(())
    } else {
        None
    }
}

#[allow(clippy::too_many_arguments)]
fn build_unrolled(
    vf: &mut VirFunction,
    entry_pred: Predicate,
    entry_iter: Option<VLoopId>,
    l: LoopItem,
    it: VirIterator,
    cmp_op: BinOp,
    bound_op: VOperand,
    factor: u32,
) -> Vec<Entry> {
    let f = factor as i64;
    let step = it.step;
    let pbase = base_pred(&entry_pred, it.entry_atom);
    let mut out: Vec<Entry> = Vec::new();

    let emit_at =
        |vf: &mut VirFunction, out: &mut Vec<Entry>, ty: Scalar, kind: VirInstrKind, pred: Predicate| {
            let r = vf.new_value(ty, 1, None);
            out.push(Entry {
                pred,
                iter: entry_iter,
                item: Item::Instr(VirInstr {
                    result: Some(r),
                    kind,
                }),
            });
            r
        };

    // Entry guard: all `factor` clones of the first iteration must be in
    // range: cmp(init + (f-1)*step, bound).
    let counter_init = l
        .with_defs
        .iter()
        .find_map(|w| match w {
            WithDef::Iota { result, init, .. } if *result == it.counter => Some(*init),
            _ => None,
        })
        .expect("iterator counter is an iota");
    let guard_probe = emit_at(
        vf,
        &mut out,
        Scalar::I32,
        VirInstrKind::Bin {
            op: BinOp::Add,
            ty: Scalar::I32,
            lhs: counter_init,
            rhs: VOperand::Const(ConstVal::I32(((f - 1) * step) as i32)),
        },
        pbase.clone(),
    );
    let c_main = emit_at(
        vf,
        &mut out,
        Scalar::Bool,
        VirInstrKind::Bin {
            op: cmp_op,
            ty: Scalar::I32,
            lhs: VOperand::Value(guard_probe),
            rhs: bound_op,
        },
        pbase.clone(),
    );
    let main_pred = pbase.and(&Predicate::atom(PredAtom(c_main.0)));

    // Main loop skeleton: fresh carried values.
    let main_id = vf.new_loop_id();
    let mut iota_info: Vec<(VirValue, VirValue, i64)> = Vec::new();
    let mut mu_info: Vec<(VirValue, VirValue, VOperand)> = Vec::new();
    for wd in &l.with_defs {
        let old = wd.result();
        let info = vf.values[old.0 as usize].clone();
        let fresh = vf.new_value(info.ty, info.lanes, info.name);
        match wd {
            WithDef::Iota { step, .. } => iota_info.push((old, fresh, *step)),
            WithDef::Mu { next, .. } => mu_info.push((old, fresh, *next)),
        }
    }

    let mut main_body: Vec<Entry> = Vec::new();
    let mut clone_maps: Vec<CloneCx> = Vec::new();
    for k in 0..factor {
        let mut cx = CloneCx::default();
        for (old, new, s) in &iota_info {
            if k == 0 {
                cx.values.insert(*old, VOperand::Value(*new));
            } else {
                let add = vf.new_value(Scalar::I32, 1, None);
                main_body.push(Entry {
                    pred: Predicate::True,
                    iter: Some(main_id),
                    item: Item::Instr(VirInstr {
                        result: Some(add),
                        kind: VirInstrKind::Bin {
                            op: BinOp::Add,
                            ty: Scalar::I32,
                            lhs: VOperand::Value(*new),
                            rhs: VOperand::Const(ConstVal::I32((k as i64 * s) as i32)),
                        },
                    }),
                });
                cx.values.insert(*old, VOperand::Value(add));
            }
        }
        for (old, new, next) in &mu_info {
            if k == 0 {
                cx.values.insert(*old, VOperand::Value(*new));
            } else {
                let prev = clone_maps[(k - 1) as usize].op(*next);
                cx.values.insert(*old, prev);
            }
        }
        let cloned = clone_list(vf, &l.body, &mut cx);
        for mut ce in cloned {
            if ce.iter == Some(l.id) {
                ce.iter = Some(main_id);
            }
            main_body.push(ce);
        }
        clone_maps.push(cx);
    }

    // Recurrences, exported next-start values, and the strengthened latch.
    let mut main_with: Vec<WithDef> = Vec::new();
    let mut main_results: Vec<(VirValue, VOperand)> = Vec::new();
    let mut main_out: HashMap<VirValue, VirValue> = HashMap::new();
    let mut counter_new = it.counter;
    let mut counter_rec = it.counter;
    for (old, new, s) in &iota_info {
        let rec = vf.new_value(Scalar::I32, 1, None);
        main_body.push(Entry {
            pred: Predicate::True,
            iter: Some(main_id),
            item: Item::Instr(VirInstr {
                result: Some(rec),
                kind: VirInstrKind::Bin {
                    op: BinOp::Add,
                    ty: Scalar::I32,
                    lhs: VOperand::Value(*new),
                    rhs: VOperand::Const(ConstVal::I32((f * s) as i32)),
                },
            }),
        });
        main_with.push(WithDef::Iota {
            result: *new,
            init: counter_init_of(&l, *old).unwrap(),
            recur: rec,
            step: f * s,
        });
        let alias = vf.new_value(Scalar::I32, 1, None);
        main_results.push((alias, VOperand::Value(rec)));
        main_out.insert(*old, alias);
        if *old == it.counter {
            counter_new = *new;
            counter_rec = rec;
        }
    }
    for (old, new, next) in &mu_info {
        let final_next = clone_maps.last().unwrap().op(*next);
        main_with.push(WithDef::Mu {
            result: *new,
            init: counter_init_of(&l, *old).unwrap(),
            next: final_next,
        });
        let info = vf.values[old.0 as usize].clone();
        let alias = vf.new_value(info.ty, info.lanes, None);
        main_results.push((alias, final_next));
        main_out.insert(*old, alias);
    }
    let probe = vf.new_value(Scalar::I32, 1, None);
    main_body.push(Entry {
        pred: Predicate::True,
        iter: Some(main_id),
        item: Item::Instr(VirInstr {
            result: Some(probe),
            kind: VirInstrKind::Bin {
                op: BinOp::Add,
                ty: Scalar::I32,
                lhs: VOperand::Value(counter_rec),
                rhs: VOperand::Const(ConstVal::I32(((f - 1) * step) as i32)),
            },
        }),
    });
    let main_latch = vf.new_value(Scalar::Bool, 1, None);
    main_body.push(Entry {
        pred: Predicate::True,
        iter: Some(main_id),
        item: Item::Instr(VirInstr {
            result: Some(main_latch),
            kind: VirInstrKind::Bin {
                op: cmp_op,
                ty: Scalar::I32,
                lhs: VOperand::Value(probe),
                rhs: bound_op,
            },
        }),
    });

    // Original loop results exported from the last clone.
    let mut main_result_alias: HashMap<VirValue, VirValue> = HashMap::new();
    for (outer, inner) in &l.results {
        let lastv = clone_maps.last().unwrap().op(*inner);
        let info = vf.values[outer.0 as usize].clone();
        let alias = vf.new_value(info.ty, info.lanes, None);
        main_results.push((alias, lastv));
        main_result_alias.insert(*outer, alias);
    }

    out.push(Entry {
        pred: main_pred,
        iter: entry_iter,
        item: Item::Loop(LoopItem {
            id: main_id,
            with_defs: main_with,
            body: main_body,
            latch: Predicate::atom(PredAtom(main_latch.0)),
            iterator: Some(VirIterator {
                init: it.init.clone(),
                bound: it.bound.offset(-((f - 1) * step)),
                step: f * step,
                cmp: it.cmp,
                entry_atom: Some(c_main),
                counter: counter_new,
            }),
            results: main_results,
            no_unroll: true,
            fuse_degree: l.fuse_degree,
        }),
    });

    // Epilogue start values: main ran => its exported nexts, else inits.
    let mut epi_inits: HashMap<VirValue, VOperand> = HashMap::new();
    for wd in &l.with_defs {
        let old = wd.result();
        let info = vf.values[old.0 as usize].clone();
        let start = emit_at(
            vf,
            &mut out,
            info.ty,
            VirInstrKind::Select {
                ty: info.ty,
                cond: VOperand::Value(c_main),
                if_true: VOperand::Value(main_out[&old]),
                if_false: wd.init(),
            },
            pbase.clone(),
        );
        epi_inits.insert(old, VOperand::Value(start));
    }

    let c_epi = emit_at(
        vf,
        &mut out,
        Scalar::Bool,
        VirInstrKind::Bin {
            op: cmp_op,
            ty: Scalar::I32,
            lhs: epi_inits[&it.counter],
            rhs: bound_op,
        },
        pbase.clone(),
    );
    let epi_pred = pbase.and(&Predicate::atom(PredAtom(c_epi.0)));

    // Epilogue loop: a clone of the original starting at the carried values.
    let epi_id = vf.new_loop_id();
    let mut epi_cx = CloneCx::default();
    let mut epi_fresh: Vec<VirValue> = Vec::new();
    for wd in &l.with_defs {
        let old = wd.result();
        let info = vf.values[old.0 as usize].clone();
        let fresh = vf.new_value(info.ty, info.lanes, info.name);
        epi_cx.values.insert(old, VOperand::Value(fresh));
        epi_fresh.push(fresh);
    }
    let epi_body: CodeList = clone_list(vf, &l.body, &mut epi_cx)
        .into_iter()
        .map(|mut ce| {
            if ce.iter == Some(l.id) {
                ce.iter = Some(epi_id);
            }
            ce
        })
        .collect();
    let epi_with: Vec<WithDef> = l
        .with_defs
        .iter()
        .zip(&epi_fresh)
        .map(|(wd, fresh)| match wd {
            WithDef::Iota { recur, step, .. } => WithDef::Iota {
                result: *fresh,
                init: epi_inits[&wd.result()],
                recur: epi_cx
                    .op(VOperand::Value(*recur))
                    .as_value()
                    .expect("recurrence cloned"),
                step: *step,
            },
            WithDef::Mu { next, .. } => WithDef::Mu {
                result: *fresh,
                init: epi_inits[&wd.result()],
                next: epi_cx.op(*next),
            },
        })
        .collect();
    let epi_results: Vec<(VirValue, VOperand)> = l
        .results
        .iter()
        .map(|(outer, inner)| {
            let info = vf.values[outer.0 as usize].clone();
            let alias = vf.new_value(info.ty, info.lanes, None);
            (alias, epi_cx.op(*inner))
        })
        .collect();
    let epi_alias: HashMap<VirValue, VirValue> = l
        .results
        .iter()
        .zip(&epi_results)
        .map(|((outer, _), (alias, _))| (*outer, *alias))
        .collect();

    out.push(Entry {
        pred: epi_pred,
        iter: entry_iter,
        item: Item::Loop(LoopItem {
            id: epi_id,
            with_defs: epi_with,
            body: epi_body,
            latch: epi_cx.pred(&l.latch),
            iterator: None,
            results: epi_results,
            no_unroll: true,
            fuse_degree: 1,
        }),
    });

    // Rebind the original result aliases for downstream consumers. Those
    // consumers are guarded by the original entry predicate, so when
    // neither piece ran the chosen fallback is never observed.
    for (outer, _) in &l.results {
        let info = vf.values[outer.0 as usize].clone();
        out.push(Entry {
            pred: pbase.clone(),
            iter: entry_iter,
            item: Item::Instr(VirInstr {
                result: Some(*outer),
                kind: VirInstrKind::Select {
                    ty: info.ty,
                    cond: VOperand::Value(c_epi),
                    if_true: VOperand::Value(epi_alias[outer]),
                    if_false: VOperand::Value(main_result_alias[outer]),
                },
            }),
        });
    }
    out
}

fn counter_init_of(l: &LoopItem, result: VirValue) -> Option<VOperand> {
    l.with_defs
        .iter()
        .find(|w| w.result() == result)
        .map(|w| w.init())
}

/// The bound operand and comparison of the latch check, normalised so the
/// counter recurrence sits on the left.
pub fn latch_comparison(l: &LoopItem, it: &VirIterator) -> Option<(BinOp, VOperand)> {
    let latch_atom = l.latch.single_literal()?;
    if !latch_atom.positive {
        return None;
    }
    let recur = l.with_defs.iter().find_map(|w| match w {
        WithDef::Iota { result, recur, .. } if *result == it.counter => Some(*recur),
        _ => None,
    })?;
    for e in &l.body {
        if let Item::Instr(instr) = &e.item {
            if instr.result == Some(VirValue(latch_atom.atom.0)) {
                if let VirInstrKind::Bin { op, lhs, rhs, .. } = &instr.kind {
                    if *lhs == VOperand::Value(recur) {
                        return Some((*op, *rhs));
                    }
                    if *rhs == VOperand::Value(recur) {
                        return Some((op.swapped()?, *lhs));
                    }
                }
            }
        }
    }
    None
}
