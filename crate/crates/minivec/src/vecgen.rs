//! Vector function generation: root-driven recursive transformation.
//!
//! Walks each code list and transforms must-execute roots (stores, calls),
//! loop conditions, recurrences, and the return definition; everything
//! else is pulled in on demand while resolving dependencies — creating a
//! node's instruction on first touch, linking on later ones — so dead
//! entries never emit. A node owned by a selected pack emits once as a
//! single vector instruction; scalar consumers of packed lanes get
//! memoised extracts. The order manager keeps a stack of dependency
//! frames: each transformation pushes a placeholder, dependency
//! resolutions update the frame with the latest insertion point of the
//! target layer, and the pop yields the ready point the new instruction
//! must follow.

use std::collections::{BTreeMap, HashMap};

use crate::costmodel::CostModel;
use crate::depgraph::{DepGraph, DepNodeId, LayerKey, ValueDef, VirIndex};
use crate::packing::{LaneOperand, OperandPack, PackId, PackSet, PackShape, PredLanes};
use crate::predicate::{PredAtom, Predicate};
use crate::types::{ConstVal, Scalar, UnOp};
use crate::vir::{
    CodeList, Entry, Item, LoopItem, VLoopId, VOperand, VirFunction, VirInstr, VirInstrKind,
    VirIterator, VirValue, WithDef,
};

/// The transformed function plus the per-layer loop info map.
pub struct VecFunction {
    pub func: VirFunction,
    /// Layer -> recorded loop condition; `None` is the layer-0 placeholder.
    pub layer_map: BTreeMap<LayerKey, Option<Predicate>>,
    /// (pushes, pops) of the order manager, for the balance audit.
    pub order_audit: (u64, u64),
    /// Where each input node landed in the output lists (packs: the pack's
    /// position, shared by all lanes).
    pub emitted_positions: BTreeMap<(LayerKey, DepNodeId), usize>,
}

/// Ready-point bookkeeping per in-flight transformation.
pub struct OrderManager {
    stack: Vec<Frame>,
    pub pushes: u64,
    pub pops: u64,
}

struct Frame {
    layer: LayerKey,
    ready: Option<usize>,
}

impl OrderManager {
    pub fn new() -> OrderManager {
        OrderManager {
            stack: Vec::new(),
            pushes: 0,
            pops: 0,
        }
    }

    /// A null placeholder pushed before resolving dependencies.
    pub fn push_placeholder(&mut self, layer: LayerKey) {
        self.pushes += 1;
        self.stack.push(Frame {
            layer,
            ready: None,
        });
    }

    /// Record a resolved dependency's insertion point.
    pub fn update(&mut self, layer: LayerKey, pos: usize) {
        if let Some(top) = self.stack.last_mut() {
            if top.layer == layer {
                top.ready = Some(top.ready.map_or(pos, |r| r.max(pos)));
            }
        }
    }

    /// Pop the frame: the latest point the new instruction must follow.
    pub fn pop(&mut self) -> Option<usize> {
        self.pops += 1;
        self.stack.pop().and_then(|f| f.ready)
    }
}

impl Default for OrderManager {
    fn default() -> Self {
        Self::new()
    }
}

/// Transform a planned function into its vector form.
pub fn transform_function(
    vf: &VirFunction,
    g: &DepGraph,
    packs: &PackSet,
    cm: &CostModel,
) -> Result<VecFunction, String> {
    let index = VirIndex::build(vf);
    let mut gen = VecGen {
        vf,
        g,
        packs,
        index,
        cm,
        out: VirFunction {
            name: vf.name.clone(),
            params: vf.params.clone(),
            values: Vec::new(),
            layer0: Vec::new(),
            ret: None,
            next_loop: vf.next_loop,
        },
        buffers: BTreeMap::new(),
        layer_map: BTreeMap::new(),
        value_map: HashMap::new(),
        emitted: HashMap::new(),
        pack_emitted: HashMap::new(),
        extracts: HashMap::new(),
        order: OrderManager::new(),
    };

    // Insert placeholder for the layer-0 code list.
    gen.layer_map.insert(LayerKey::Root, None);
    gen.buffers.insert(LayerKey::Root, Vec::new());

    gen.transform_list(LayerKey::Root, &vf.layer0)?;

    // Transform the return value's defining instruction, if present.
    if let Some(ret) = vf.ret {
        gen.order.push_placeholder(LayerKey::Root);
        let mapped = gen.scalar_value(LayerKey::Root, ret)?;
        gen.order.pop();
        gen.out.ret = Some(mapped);
    }

    gen.out.layer0 = gen.buffers.remove(&LayerKey::Root).unwrap();
    debug_assert!(gen.buffers.is_empty(), "all loop buffers assembled");
    let audit = (gen.order.pushes, gen.order.pops);
    if audit.0 != audit.1 {
        return Err(format!(
            "order manager imbalance: {} pushes vs {} pops",
            audit.0, audit.1
        ));
    }
    let mut positions: BTreeMap<(LayerKey, DepNodeId), usize> = BTreeMap::new();
    for ((key, node), (_, pos)) in &gen.emitted {
        positions.insert((*key, *node), *pos);
    }
    for (pid, (_, key, pos)) in &gen.pack_emitted {
        for lane in &packs.pack(*pid).lanes {
            if let Some(n) = lane.node {
                positions.insert((*key, n), *pos);
            }
        }
    }
    let out = gen.out;
    let layer_map = gen.layer_map;
    out.validate()
        .map_err(|e| format!("generated function invalid: {e}"))?;
    Ok(VecFunction {
        func: out,
        layer_map,
        order_audit: audit,
        emitted_positions: positions,
    })
}

struct VecGen<'a> {
    vf: &'a VirFunction,
    g: &'a DepGraph,
    packs: &'a PackSet,
    index: VirIndex,
    #[allow(dead_code)]
    cm: &'a CostModel,
    out: VirFunction,
    /// Code lists under construction, per layer.
    buffers: BTreeMap<LayerKey, CodeList>,
    layer_map: BTreeMap<LayerKey, Option<Predicate>>,
    /// Old value -> new operand (params, consts, with-defs, results).
    value_map: HashMap<VirValue, VOperand>,
    /// Scalar emissions: (layer, node) -> (new value operand, position).
    emitted: HashMap<(LayerKey, DepNodeId), (VOperand, usize)>,
    /// Pack emissions: pack -> (vector value, layer, position).
    pack_emitted: HashMap<PackId, (Option<VOperand>, LayerKey, usize)>,
    /// Memoised lane extracts.
    extracts: HashMap<(PackId, usize), VOperand>,
    order: OrderManager,
}

impl<'a> VecGen<'a> {
    fn push_entry(&mut self, layer: LayerKey, pred: Predicate, item: Item) -> usize {
        let iter = match layer {
            LayerKey::Root => None,
            LayerKey::Loop(id) => Some(id),
        };
        let buf = self.buffers.get_mut(&layer).expect("open layer buffer");
        buf.push(Entry { pred, iter, item });
        buf.len() - 1
    }

    fn transform_list(&mut self, key: LayerKey, list: &CodeList) -> Result<(), String> {
        let layer = self.g.layer(key);
        for (i, entry) in list.iter().enumerate() {
            if layer.dead.contains(&i) {
                continue;
            }
            match &entry.item {
                Item::Instr(instr) => {
                    if instr.kind.is_root() {
                        let node = layer.entry_nodes[i]
                            .ok_or_else(|| format!("root entry {i} has no node"))?;
                        self.order.push_placeholder(key);
                        self.transform_root(key, node)?;
                        self.order.pop();
                    }
                }
                Item::Loop(l) => {
                    self.transform_loop(key, entry, l)?;
                }
            }
        }
        Ok(())
    }

    fn transform_loop(
        &mut self,
        parent: LayerKey,
        entry: &Entry,
        l: &LoopItem,
    ) -> Result<(), String> {
        let lk = LayerKey::Loop(l.id);
        // Locate-or-construct the loop's layer.
        self.layer_map.insert(lk, None);
        self.buffers.insert(lk, Vec::new());

        // With list: initial values resolve at the parent layer.
        let mut new_with: Vec<(WithDef, VirValue)> = Vec::new();
        for wd in &l.with_defs {
            self.order.push_placeholder(parent);
            let init = self.scalar_value(parent, wd.init())?;
            self.order.pop();
            let old = wd.result();
            let info = &self.vf.values[old.0 as usize];
            let fresh = self
                .out
                .new_value(info.ty, info.lanes, info.name.clone());
            self.value_map.insert(old, VOperand::Value(fresh));
            new_with.push((
                match wd {
                    WithDef::Iota { step, .. } => WithDef::Iota {
                        result: fresh,
                        init,
                        recur: fresh, // patched below
                        step: *step,
                    },
                    WithDef::Mu { .. } => WithDef::Mu {
                        result: fresh,
                        init,
                        next: VOperand::Value(fresh), // patched below
                    },
                },
                old,
            ));
        }

        // Transform the body's roots (and nested loops).
        self.transform_list(lk, &l.body)?;

        // Transform the loop condition.
        let latch = self.translate_pred(lk, &l.latch)?;

        // Recurrences must exist for the loop to advance.
        let mut patched_with = Vec::with_capacity(new_with.len());
        for (wd, old) in new_with {
            let orig = l
                .with_defs
                .iter()
                .find(|w| w.result() == old)
                .expect("with def");
            patched_with.push(match (wd, orig) {
                (WithDef::Iota { result, init, step, .. }, WithDef::Iota { recur, .. }) => {
                    self.order.push_placeholder(lk);
                    let new_recur = self.scalar_value(lk, VOperand::Value(*recur))?;
                    self.order.pop();
                    WithDef::Iota {
                        result,
                        init,
                        recur: new_recur
                            .as_value()
                            .ok_or("iota recurrence must be a value")?,
                        step,
                    }
                }
                (WithDef::Mu { result, init, .. }, WithDef::Mu { next, .. }) => {
                    self.order.push_placeholder(lk);
                    let new_next = self.scalar_value(lk, *next)?;
                    self.order.pop();
                    WithDef::Mu {
                        result,
                        init,
                        next: new_next,
                    }
                }
                _ => unreachable!("with shapes preserved"),
            });
        }

        // Loop results visible after the loop.
        let mut new_results = Vec::with_capacity(l.results.len());
        for (outer, inner) in &l.results {
            self.order.push_placeholder(lk);
            let mapped = self.scalar_value(lk, *inner)?;
            self.order.pop();
            let info = &self.vf.values[outer.0 as usize];
            let fresh = self
                .out
                .new_value(info.ty, info.lanes, info.name.clone());
            self.value_map.insert(*outer, VOperand::Value(fresh));
            new_results.push((fresh, mapped));
        }

        // Record the condition in the layer map.
        self.layer_map.insert(lk, Some(latch.clone()));

        let body = self.buffers.remove(&lk).expect("loop buffer");
        let pred = self.translate_pred(parent, &entry.pred)?;
        let iterator = match &l.iterator {
            Some(it) => Some(VirIterator {
                init: it.init.clone(),
                bound: it.bound.clone(),
                step: it.step,
                cmp: it.cmp,
                entry_atom: match it.entry_atom {
                    Some(a) => self
                        .scalar_value(parent, VOperand::Value(a))
                        .ok()
                        .and_then(|v| v.as_value()),
                    None => None,
                },
                counter: self
                    .value_map
                    .get(&it.counter)
                    .and_then(|v| v.as_value())
                    .ok_or("iterator counter mapped")?,
            }),
            None => None,
        };
        let pos = self.push_entry(
            parent,
            pred,
            Item::Loop(LoopItem {
                id: l.id,
                with_defs: patched_with,
                body,
                latch,
                iterator,
                results: new_results,
                no_unroll: l.no_unroll,
                fuse_degree: l.fuse_degree,
            }),
        );
        self.order.update(parent, pos);
        Ok(())
    }

    /// Transform a root instruction (store or call).
    fn transform_root(&mut self, key: LayerKey, node: DepNodeId) -> Result<(), String> {
        if self.emitted.contains_key(&(key, node)) {
            return Ok(());
        }
        if let Some(pid) = self.packs.node_pack.get(&(key, node)) {
            if self.packs.pack(*pid).selected {
                self.emit_pack(*pid)?;
                return Ok(());
            }
        }
        self.emit_scalar_node(key, node)?;
        Ok(())
    }

    /// Resolve an old operand to a new scalar operand, creating or linking
    /// its definition as needed.
    fn scalar_value(&mut self, ctx: LayerKey, op: VOperand) -> Result<VOperand, String> {
        match op {
            VOperand::Const(c) => Ok(VOperand::Const(c)),
            VOperand::Param(p) => Ok(VOperand::Param(p)),
            VOperand::Value(v) => {
                if let Some(mapped) = self.value_map.get(&v) {
                    return Ok(*mapped);
                }
                match self.index.defs.get(&v).cloned() {
                    Some(ValueDef::Instr { layer, entry, .. }) => {
                        let node = self.g.layer(layer).entry_nodes[entry]
                            .ok_or("instruction entry has a node")?;
                        // Packed lane: emit the pack and extract the lane.
                        if let Some(pid) = self.packs.node_pack.get(&(layer, node)).copied() {
                            if self.packs.pack(pid).selected {
                                return self.extract_lane(pid, node);
                            }
                        }
                        let (val, pos) = self.emit_scalar_node(layer, node)?;
                        self.order.update(ctx, pos);
                        let _ = ctx;
                        Ok(val)
                    }
                    Some(
                        ValueDef::Iota { .. } | ValueDef::Mu { .. } | ValueDef::LoopResult { .. },
                    ) => Err(format!("{v} should be bound by its loop before use")),
                    None => Err(format!("use of unknown value {v}")),
                }
            }
        }
    }

    fn translate_pred(&mut self, ctx: LayerKey, p: &Predicate) -> Result<Predicate, String> {
        match p {
            Predicate::True => Ok(Predicate::True),
            Predicate::False => Ok(Predicate::False),
            Predicate::Dnf(_) => {
                let mut map: HashMap<PredAtom, PredAtom> = HashMap::new();
                for a in p.atoms() {
                    let mapped = self.scalar_value(ctx, VOperand::Value(VirValue(a.0)))?;
                    let nv = mapped
                        .as_value()
                        .ok_or("predicate atom mapped to a value")?;
                    map.insert(a, PredAtom(nv.0));
                }
                Ok(p.map_atoms(&|a| *map.get(&a).unwrap_or(&a)))
            }
        }
    }

    /// Emit one scalar instruction for a node (idempotent).
    fn emit_scalar_node(
        &mut self,
        key: LayerKey,
        node: DepNodeId,
    ) -> Result<(VOperand, usize), String> {
        if let Some((v, pos)) = self.emitted.get(&(key, node)).copied() {
            self.order.update(key, pos);
            return Ok((v, pos));
        }
        let layer = self.g.layer(key);
        let entry_idx = layer
            .node(node)
            .entry_index()
            .ok_or("scalar emission needs an instruction node")?;
        let list = layer_list(self.vf, key);
        let Item::Instr(instr) = &list[entry_idx].item else {
            return Err("entry is an instruction".into());
        };

        self.order.push_placeholder(key);
        // Memory order: follow earlier conflicting references.
        let mem_succs = layer.node(node).mem_successors.clone();
        for m in mem_succs {
            if let Some((_, pos)) = self.emitted.get(&(key, m)).copied() {
                self.order.update(key, pos);
            } else if let Some(pid) = self.packs.node_pack.get(&(key, m)).copied() {
                if let Some((_, l, pos)) = self.pack_emitted.get(&pid).copied() {
                    if l == key {
                        self.order.update(key, pos);
                    }
                }
            }
        }
        let pred = self.translate_pred(key, &list[entry_idx].pred)?;
        let mut kind = instr.kind.clone();
        let mut mapped_ops = Vec::new();
        for op in kind.operands() {
            mapped_ops.push(self.scalar_value(key, op)?);
        }
        for (slot, new_op) in kind.operands_mut().into_iter().zip(mapped_ops) {
            *slot = new_op;
        }
        let result = match instr.result {
            Some(r) => {
                let info = &self.vf.values[r.0 as usize];
                let fresh = self
                    .out
                    .new_value(info.ty, info.lanes, info.name.clone());
                self.value_map.insert(r, VOperand::Value(fresh));
                Some(fresh)
            }
            None => None,
        };
        let ready = self.order.pop();
        let pos = self.push_entry(key, pred, Item::Instr(VirInstr { result, kind }));
        debug_assert!(ready.is_none_or(|r| pos > r), "insertion beyond ready point");
        let out_op = result
            .map(VOperand::Value)
            .unwrap_or(VOperand::Const(ConstVal::I32(0)));
        self.emitted.insert((key, node), (out_op, pos));
        self.order.update(key, pos);
        Ok((out_op, pos))
    }

    /// Emit a pack once; later calls link to the recorded emission.
    fn emit_pack(&mut self, pid: PackId) -> Result<(Option<VOperand>, usize), String> {
        if let Some((v, l, pos)) = self.pack_emitted.get(&pid).copied() {
            self.order.update(l, pos);
            return Ok((v, pos));
        }
        let pack = self.packs.pack(pid).clone();
        let key = pack.layer;
        let lanes = pack.lane_count();
        let elem = pack.shape.elem();
        self.order.push_placeholder(key);

        // Memory order for store/load packs: every lane's predecessors.
        for lane in &pack.lanes {
            let Some(n) = lane.node else { continue };
            for m in self.g.layer(key).node(n).mem_successors.clone() {
                if let Some((_, pos)) = self.emitted.get(&(key, m)).copied() {
                    self.order.update(key, pos);
                } else if let Some(mp) = self.packs.node_pack.get(&(key, m)).copied() {
                    if mp != pid {
                        if let Some((_, l, pos)) = self.pack_emitted.get(&mp).copied() {
                            if l == key {
                                self.order.update(key, pos);
                            }
                        }
                    }
                }
            }
        }

        // Predicate: a shared scalar predicate, or a mask operand.
        let (entry_pred, mask) = match &pack.pred {
            PredLanes::Uniform(p) => (self.translate_pred(key, p)?, None),
            PredLanes::Mask { source, .. } => {
                let m = self.resolve_operand_pack(key, source, lanes, Scalar::Bool)?;
                (Predicate::True, Some(m))
            }
        };

        // Operand positions.
        let mut resolved: Vec<VOperand> = Vec::new();
        let mut wide: Option<(usize, VOperand)> = None;
        for opnd in &pack.operands {
            match opnd {
                OperandPack::WideAddr { array, lane0_index } => {
                    let idx = self.scalar_value(key, *lane0_index)?;
                    wide = Some((*array, idx));
                }
                other => {
                    let operand_elem = match (&pack.shape, resolved.len()) {
                        (PackShape::Select { .. }, 0) => Scalar::Bool,
                        _ => elem,
                    };
                    let v = self.resolve_operand_pack(key, other, lanes, operand_elem)?;
                    resolved.push(v);
                }
            }
        }

        // The vector instruction itself.
        let (result, kind): (Option<VirValue>, VirInstrKind) = match pack.shape {
            PackShape::Store { array, elem } => {
                let (warray, index) = wide.ok_or("store pack has a wide address")?;
                debug_assert_eq!(warray, array);
                (
                    None,
                    VirInstrKind::VStore {
                        array,
                        elem,
                        lanes,
                        index,
                        value: resolved[0],
                        mask,
                    },
                )
            }
            PackShape::Load { array, elem } => {
                let (warray, index) = wide.ok_or("load pack has a wide address")?;
                debug_assert_eq!(warray, array);
                let r = self.out.new_value(elem, lanes, None);
                (
                    Some(r),
                    VirInstrKind::VLoad {
                        array,
                        elem,
                        lanes,
                        index,
                    },
                )
            }
            PackShape::Bin { op, ty } => {
                let out_ty = if op.is_comparison() { Scalar::Bool } else { ty };
                let r = self.out.new_value(out_ty, lanes, None);
                (
                    Some(r),
                    VirInstrKind::VBin {
                        op,
                        elem: ty,
                        lanes,
                        lhs: resolved[0],
                        rhs: resolved[1],
                    },
                )
            }
            PackShape::Un { op, ty } => {
                let r = self.out.new_value(ty, lanes, None);
                (
                    Some(r),
                    VirInstrKind::VUn {
                        op,
                        elem: ty,
                        lanes,
                        operand: resolved[0],
                    },
                )
            }
            PackShape::Cast { to } => {
                let r = self.out.new_value(to, lanes, None);
                (
                    Some(r),
                    VirInstrKind::VCast {
                        to,
                        lanes,
                        operand: resolved[0],
                    },
                )
            }
            PackShape::Select { ty } => {
                let r = self.out.new_value(ty, lanes, None);
                (
                    Some(r),
                    VirInstrKind::VSelect {
                        elem: ty,
                        lanes,
                        mask: resolved[0],
                        if_true: resolved[1],
                        if_false: resolved[2],
                    },
                )
            }
        };
        let ready = self.order.pop();
        let pos = self.push_entry(key, entry_pred, Item::Instr(VirInstr { result, kind }));
        debug_assert!(ready.is_none_or(|r| pos > r));
        let out_op = result.map(VOperand::Value);
        self.pack_emitted.insert(pid, (out_op, key, pos));
        self.order.update(key, pos);
        Ok((out_op, pos))
    }

    fn resolve_operand_pack(
        &mut self,
        key: LayerKey,
        op: &OperandPack,
        lanes: u32,
        elem: Scalar,
    ) -> Result<VOperand, String> {
        match op {
            OperandPack::Packed(c) => {
                let child = self.packs.pack(*c);
                if child.selected {
                    let (v, _) = self.emit_pack(*c)?;
                    v.ok_or_else(|| "value pack has a result".into())
                } else {
                    // Deselected child: gather its lanes' scalar values.
                    let ops: Vec<LaneOperand> = child
                        .lanes
                        .iter()
                        .map(|l| match (l.node, &l.bare) {
                            (Some(n), _) => LaneOperand::Node(n),
                            (None, Some(b)) => *b,
                            _ => unreachable!(),
                        })
                        .collect();
                    self.emit_gather(key, &ops, lanes, elem)
                }
            }
            OperandPack::LaneConsts(cs) => {
                let r = self.out.new_value(elem, lanes, None);
                let pos = self.push_entry(
                    key,
                    Predicate::True,
                    Item::Instr(VirInstr {
                        result: Some(r),
                        kind: VirInstrKind::VConst {
                            elem,
                            lanes: cs.clone(),
                        },
                    }),
                );
                self.order.update(key, pos);
                Ok(VOperand::Value(r))
            }
            OperandPack::Broadcast(src) => {
                let scalar = self.lane_scalar(key, *src)?;
                let r = self.out.new_value(elem, lanes, None);
                let pos = self.push_entry(
                    key,
                    Predicate::True,
                    Item::Instr(VirInstr {
                        result: Some(r),
                        kind: VirInstrKind::VBroadcast {
                            elem,
                            lanes,
                            scalar,
                        },
                    }),
                );
                self.order.update(key, pos);
                Ok(VOperand::Value(r))
            }
            OperandPack::Gather(ops) => self.emit_gather(key, ops, lanes, elem),
            OperandPack::MaskBools(bools) => {
                let mut scalars = Vec::with_capacity(bools.len());
                for (v, positive) in bools {
                    let mut mapped = self.scalar_value(key, *v)?;
                    if !positive {
                        let r = self.out.new_value(Scalar::Bool, 1, None);
                        let pos = self.push_entry(
                            key,
                            Predicate::True,
                            Item::Instr(VirInstr {
                                result: Some(r),
                                kind: VirInstrKind::Un {
                                    op: UnOp::Not,
                                    ty: Scalar::Bool,
                                    operand: mapped,
                                },
                            }),
                        );
                        self.order.update(key, pos);
                        mapped = VOperand::Value(r);
                    }
                    scalars.push(mapped);
                }
                self.build_vector(key, &scalars, Scalar::Bool)
            }
            OperandPack::WideAddr { .. } => Err("wide address outside a memory pack".into()),
        }
    }

    fn lane_scalar(&mut self, key: LayerKey, op: LaneOperand) -> Result<VOperand, String> {
        match op {
            LaneOperand::Entity(v) => self.scalar_value(key, v),
            LaneOperand::Node(n) => {
                if let Some(pid) = self.packs.node_pack.get(&(key, n)).copied() {
                    if self.packs.pack(pid).selected {
                        return self.extract_lane(pid, n);
                    }
                }
                let (v, _) = self.emit_scalar_node(key, n)?;
                Ok(v)
            }
        }
    }

    fn emit_gather(
        &mut self,
        key: LayerKey,
        ops: &[LaneOperand],
        lanes: u32,
        elem: Scalar,
    ) -> Result<VOperand, String> {
        let mut scalars = Vec::with_capacity(ops.len());
        for op in ops {
            scalars.push(self.lane_scalar(key, *op)?);
        }
        debug_assert_eq!(scalars.len() as u32, lanes);
        self.build_vector(key, &scalars, elem)
    }

    /// Broadcast the first lane then insert the rest.
    fn build_vector(
        &mut self,
        key: LayerKey,
        scalars: &[VOperand],
        elem: Scalar,
    ) -> Result<VOperand, String> {
        let lanes = scalars.len() as u32;
        let r0 = self.out.new_value(elem, lanes, None);
        let pos = self.push_entry(
            key,
            Predicate::True,
            Item::Instr(VirInstr {
                result: Some(r0),
                kind: VirInstrKind::VBroadcast {
                    elem,
                    lanes,
                    scalar: scalars[0],
                },
            }),
        );
        self.order.update(key, pos);
        let mut cur = r0;
        for (i, s) in scalars.iter().enumerate().skip(1) {
            let r = self.out.new_value(elem, lanes, None);
            let pos = self.push_entry(
                key,
                Predicate::True,
                Item::Instr(VirInstr {
                    result: Some(r),
                    kind: VirInstrKind::VInsert {
                        elem,
                        lanes,
                        vec: VOperand::Value(cur),
                        lane: i as u32,
                        scalar: *s,
                    },
                }),
            );
            self.order.update(key, pos);
            cur = r;
        }
        Ok(VOperand::Value(cur))
    }

    /// Scalar view of a packed lane (memoised extract).
    fn extract_lane(&mut self, pid: PackId, node: DepNodeId) -> Result<VOperand, String> {
        let pack = self.packs.pack(pid);
        let lane = pack
            .lanes
            .iter()
            .position(|l| l.node == Some(node))
            .ok_or("node is a real lane of its pack")?;
        if let Some(v) = self.extracts.get(&(pid, lane)) {
            return Ok(*v);
        }
        let key = pack.layer;
        let elem = pack.shape.elem();
        let lanes = pack.lane_count();
        let (vecv, _) = self.emit_pack(pid)?;
        let vecv = vecv.ok_or("extract from a value pack")?;
        let r = self.out.new_value(elem, 1, None);
        let pos = self.push_entry(
            key,
            Predicate::True,
            Item::Instr(VirInstr {
                result: Some(r),
                kind: VirInstrKind::VExtract {
                    elem,
                    lanes,
                    vec: vecv,
                    lane: lane as u32,
                },
            }),
        );
        self.order.update(key, pos);
        self.extracts.insert((pid, lane), VOperand::Value(r));
        Ok(VOperand::Value(r))
    }
}

fn layer_list<'a>(vf: &'a VirFunction, key: LayerKey) -> &'a CodeList {
    fn find<'a>(list: &'a CodeList, id: VLoopId) -> Option<&'a CodeList> {
        for e in list {
            if let Item::Loop(l) = &e.item {
                if l.id == id {
                    return Some(&l.body);
                }
                if let Some(found) = find(&l.body, id) {
                    return Some(found);
                }
            }
        }
        None
    }
    match key {
        LayerKey::Root => &vf.layer0,
        LayerKey::Loop(id) => find(&vf.layer0, id).expect("layer exists"),
    }
}

/// Check that the emitted code respects every input dependence-graph
/// memory edge: conflicting references keep their relative order.
pub fn check_memory_order(input_graph: &DepGraph, gen: &VecFunction) -> Result<(), String> {
    for (key, layer) in &input_graph.layers {
        for n in &layer.nodes {
            let Some(np) = gen.emitted_positions.get(&(*key, n.id)) else {
                continue;
            };
            for m in &n.mem_successors {
                if let Some(mp) = gen.emitted_positions.get(&(*key, *m)) {
                    // Equal positions mean one pack covers both lanes.
                    if mp > np {
                        return Err(format!(
                            "memory order violated in {key}: {} before {m}",
                            n.id
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::AliasPolicy;
    use crate::interp::{random_env, run_ast};
    use crate::packing::vectorize_function;
    use crate::parser::parse;
    use crate::typeck::typecheck;
    use crate::vir::run_vir;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn to_vir(src: &str) -> VirFunction {
        let prog = typecheck(&parse(src).unwrap()).unwrap();
        let mut sir = crate::sir::build_sir(&prog).unwrap().remove(0);
        crate::sir::to_ssa(&mut sir);
        crate::sir::optimize_sir(&mut sir);
        crate::sir::analyze_iteration(&mut sir);
        crate::vir::build_vir(&sir).0
    }

    fn vecgen(src: &str, width: u32) -> (VirFunction, VecFunction, crate::depgraph::DepGraph) {
        let vf = to_vir(src);
        let cm = CostModel::with_width(width);
        let outcome = vectorize_function(&vf, &cm, AliasPolicy::ArraysDisjoint);
        let gen = transform_function(&outcome.vf, &outcome.graph, &outcome.packs, &cm)
            .expect("vecgen succeeds");
        check_memory_order(&outcome.graph, &gen).unwrap();
        (outcome.vf, gen, outcome.graph)
    }

    fn count_kinds(list: &CodeList, f: &dyn Fn(&VirInstrKind) -> bool) -> usize {
        let mut n = 0;
        for e in list {
            match &e.item {
                Item::Instr(i) => {
                    if f(&i.kind) {
                        n += 1;
                    }
                }
                Item::Loop(l) => n += count_kinds(&l.body, f),
            }
        }
        n
    }

    const FIG6: &str = "
void f(i32 a[4], i32 b[4]) {
    b[0] = a[0];
    b[1] = a[1] << 1;
    b[2] = a[2] << 2;
    b[3] = a[3] << 3;
}";

    #[test]
    fn fig6_emits_one_vstore_one_vshl_one_vload_one_vconst() {
        let (_, gen, _) = vecgen(FIG6, 128);
        let f = &gen.func;
        assert_eq!(count_kinds(&f.layer0, &|k| matches!(k, VirInstrKind::VStore { .. })), 1);
        assert_eq!(
            count_kinds(&f.layer0, &|k| matches!(
                k,
                VirInstrKind::VBin {
                    op: crate::types::BinOp::Shl,
                    ..
                }
            )),
            1
        );
        assert_eq!(count_kinds(&f.layer0, &|k| matches!(k, VirInstrKind::VLoad { .. })), 1);
        // Lane constants {0,1,2,3} materialise as one vconst.
        assert_eq!(
            count_kinds(&f.layer0, &|k| matches!(
                k,
                VirInstrKind::VConst { lanes, .. }
                    if lanes == &vec![ConstVal::I32(0), ConstVal::I32(1), ConstVal::I32(2), ConstVal::I32(3)]
            )),
            1
        );
        // No scalar stores or loads remain, and no movement glue at all.
        assert_eq!(count_kinds(&f.layer0, &|k| matches!(k, VirInstrKind::Store { .. })), 0);
        assert_eq!(count_kinds(&f.layer0, &|k| matches!(k, VirInstrKind::Load { .. })), 0);
        assert_eq!(
            count_kinds(&f.layer0, &|k| matches!(
                k,
                VirInstrKind::VInsert { .. } | VirInstrKind::VExtract { .. }
            )),
            0
        );
        assert_eq!(gen.order_audit.0, gen.order_audit.1);
    }

    #[test]
    fn return_only_function_transforms_return_path() {
        let (_, gen, _) = vecgen("i32 f() { return 7; }", 128);
        assert_eq!(gen.func.ret, Some(VOperand::Const(ConstVal::I32(7))));
    }

    #[test]
    fn masked_conditional_add_uses_mask_not_branches() {
        let src = "
void f(i32 a[LENGTH], i32 b[LENGTH], i32 c[LENGTH], i32 LENGTH) {
    for (i32 i = 0; i < LENGTH; i = i + 1) {
        if (c[i] > 0) { a[i] = a[i] + b[i]; }
    }
}";
        let (_, gen, _) = vecgen(src, 128);
        let f = &gen.func;
        // One masked vector store driven by a packed compare.
        let masked = count_kinds(&f.layer0, &|k| {
            matches!(k, VirInstrKind::VStore { mask: Some(_), .. })
        });
        assert_eq!(masked, 1, "{}", crate::vir::dump_vir(f));
        let vcmp = count_kinds(&f.layer0, &|k| {
            matches!(k, VirInstrKind::VBin { op, .. } if op.is_comparison())
        });
        assert_eq!(vcmp, 1);
        // The vectorized main loop body carries no predicated scalar
        // stores (the epilogue loop is scalar by design).
        assert_eq!(gen.order_audit.0, gen.order_audit.1);
    }

    #[test]
    fn generated_functions_match_oracle() {
        let kernels = [
            FIG6,
            "void f(i32 a[256], i32 b[256]) {
                for (i32 i = 0; i < 256; i += 2) { a[i] = a[i] + b[i]; }
                for (i32 j = 1; j < 256; j += 2) { a[j] = a[j] + b[j]; }
            }",
            "void f(i32 color[4], i32 hexValue) {
                color[0] = hexValue >> 24;
                color[1] = (hexValue >> 16) & 255;
                color[2] = (hexValue >> 8) & 255;
                color[3] = hexValue & 255;
            }",
            "void f(i32 a[LENGTH], i32 b[LENGTH], i32 c[LENGTH], i32 LENGTH) {
                for (i32 i = 0; i < LENGTH; i = i + 1) {
                    if (c[i] > 0) { a[i] = a[i] + b[i]; }
                }
            }",
            "i32 f(i32 a[LENGTH], i32 LENGTH) {
                i32 s = 0;
                for (i32 i = 0; i < LENGTH; i += 1) { s += a[i]; }
                return s;
            }",
            "void f(f32 a[LENGTH], f32 b[LENGTH], i32 LENGTH, f32 s) {
                for (i32 i = 0; i < LENGTH; i += 1) { a[i] = a[i] * b[i] + s; }
            }",
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for src in kernels {
            let prog = typecheck(&parse(src).unwrap()).unwrap();
            let name = prog.functions[0].name.clone();
            let decl = prog.function(&name).unwrap().clone();
            for width in [128, 256] {
                let (_, gen, _) = vecgen(src, width);
                for _ in 0..50 {
                    let mut env = random_env(&decl, &mut rng);
                    env.max_steps = 4_000_000;
                    let want = run_ast(&prog, &name, &env);
                    let got = run_vir(&gen.func, &env);
                    match (want, got) {
                        (Ok(w), Ok(g)) => assert!(
                            w.bits_eq(&g),
                            "divergence on {src} at width {width}\n{}",
                            crate::vir::dump_vir(&gen.func)
                        ),
                        (Err(we), Err(ge)) => assert_eq!(we.kind, ge.kind),
                        (w, g) => panic!("one side trapped: {w:?} vs {g:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn order_manager_chain_ready_points() {
        // Transforming a root whose chain is a -> b -> c emits c, then b,
        // then a; a's ready point is b's position.
        let mut om = OrderManager::new();
        om.push_placeholder(LayerKey::Root); // frame for a
        om.push_placeholder(LayerKey::Root); // frame for b
        om.push_placeholder(LayerKey::Root); // frame for c
        assert_eq!(om.pop(), None); // c has no deps; lands at 0
        om.update(LayerKey::Root, 0);
        assert_eq!(om.pop(), Some(0)); // b follows c; lands at 1
        om.update(LayerKey::Root, 1);
        assert_eq!(om.pop(), Some(1)); // a follows b
        assert_eq!(om.pushes, om.pops);
    }

    #[test]
    fn update_ignores_other_layers() {
        let mut om = OrderManager::new();
        om.push_placeholder(LayerKey::Root);
        om.update(LayerKey::Loop(crate::vir::VLoopId(0)), 5);
        assert_eq!(om.pop(), None);
    }
}
