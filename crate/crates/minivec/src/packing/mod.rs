//! SLP/LLP vector packing.
//!
//! Roots seed the search: SLP roots are tuples of stores hitting
//! contiguous addresses within one layer; LLP roots are stores whose
//! addresses are contiguous across iterations (within one loop, or
//! interleaved across sibling loops, which drives fusion). From each root
//! the grower walks the dependence trees of all lanes in lock step,
//! packing positions that match — directly, or after an equivalence
//! rewrite — and recording gather/broadcast glue where they do not. A
//! fixpoint selection pass then keeps exactly the packs whose cost is
//! negative, charging deselected children as gathers and scalar consumers
//! as extracts.

pub mod equiv;
pub mod unroll;

pub use equiv::Rewrite;
pub use unroll::{fuse_loops, unroll_loop};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::costmodel::{pack_cost, CostModel, Movement, OpKind, PackCostInfo};
use crate::depgraph::{
    build_dep_graph, AliasPolicy, DepGraph, DepNodeId, DepNodeKind, Entity, LayerGraph, LayerKey,
    VirIndex,
};
use crate::predicate::Predicate;
use crate::types::{BinOp, ConstVal, Scalar, UnOp};
use crate::vir::{
    CodeList, Item, LoopItem, VLoopId, VOperand, VirFunction, VirInstrKind, VirValue,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PackId(pub u32);

impl std::fmt::Display for PackId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// The shared shape of every lane in an instruction pack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackShape {
    Bin { op: BinOp, ty: Scalar },
    Un { op: UnOp, ty: Scalar },
    Cast { to: Scalar },
    Select { ty: Scalar },
    Load { array: usize, elem: Scalar },
    Store { array: usize, elem: Scalar },
}

impl PackShape {
    pub fn op_kind(&self) -> OpKind {
        match self {
            PackShape::Bin { op, .. } => OpKind::Bin(*op),
            PackShape::Un { op, .. } => OpKind::Un(*op),
            PackShape::Cast { .. } => OpKind::Cast,
            PackShape::Select { .. } => OpKind::Select,
            PackShape::Load { .. } => OpKind::Load,
            PackShape::Store { .. } => OpKind::Store,
        }
    }

    pub fn elem(&self) -> Scalar {
        match self {
            PackShape::Bin { ty, .. }
            | PackShape::Un { ty, .. }
            | PackShape::Select { ty } => *ty,
            PackShape::Cast { to } => *to,
            PackShape::Load { elem, .. } | PackShape::Store { elem, .. } => *elem,
        }
    }
}

/// A lane's source at an operand position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneOperand {
    /// An instruction node of the layer.
    Node(DepNodeId),
    /// A constant, parameter, or value defined outside the layer.
    Entity(VOperand),
}

/// One lane of an instruction pack.
#[derive(Debug, Clone)]
pub struct Lane {
    /// The instruction this lane replaces; `None` for lanes created by an
    /// equivalence rewrite of a bare value.
    pub node: Option<DepNodeId>,
    pub rewrite: Option<Rewrite>,
    /// Value source for rewritten lanes (becomes operand position 0).
    pub bare: Option<LaneOperand>,
}

/// How one operand position of a pack is provided.
#[derive(Debug, Clone)]
pub enum OperandPack {
    /// Another pack's vector result.
    Packed(PackId),
    /// Per-lane constants, materialised as one vector constant.
    LaneConsts(Vec<ConstVal>),
    /// One scalar (or outer value) broadcast to all lanes.
    Broadcast(LaneOperand),
    /// Contiguous memory starting at lane 0's index.
    WideAddr { array: usize, lane0_index: VOperand },
    /// Scalar lanes inserted one by one.
    Gather(Vec<LaneOperand>),
    /// Mask built from scalar booleans `(value, polarity)`.
    MaskBools(Vec<(VOperand, bool)>),
}

/// The lanes' control predicates: one shared predicate, or a per-lane mask.
#[derive(Debug, Clone)]
pub enum PredLanes {
    Uniform(Predicate),
    Mask {
        lanes: Vec<Predicate>,
        source: Box<OperandPack>,
    },
}

#[derive(Debug, Clone)]
pub struct Pack {
    pub id: PackId,
    pub layer: LayerKey,
    pub shape: PackShape,
    pub lanes: Vec<Lane>,
    pub pred: PredLanes,
    /// Operand positions (predicate excluded).
    pub operands: Vec<OperandPack>,
    pub selected: bool,
    /// Final cost info from the selection pass.
    pub cost: Option<PackCostInfo>,
    pub cost_value: Option<i64>,
}

impl Pack {
    pub fn lane_count(&self) -> u32 {
        self.lanes.len() as u32
    }

    pub fn rewrite_count(&self) -> usize {
        self.lanes.iter().filter(|l| l.rewrite.is_some()).count()
    }
}

#[derive(Debug, Clone, Default)]
pub struct PackSet {
    pub packs: Vec<Pack>,
    /// Real lanes: node -> owning pack.
    pub node_pack: BTreeMap<(LayerKey, DepNodeId), PackId>,
    /// Chosen unroll factor per original loop.
    pub unroll_factors: BTreeMap<VLoopId, u32>,
}

impl PackSet {
    pub fn pack(&self, id: PackId) -> &Pack {
        &self.packs[id.0 as usize]
    }

    pub fn pack_of(&self, layer: LayerKey, node: DepNodeId) -> Option<&Pack> {
        self.node_pack
            .get(&(layer, node))
            .map(|id| self.pack(*id))
    }

    pub fn selected(&self) -> impl Iterator<Item = &Pack> {
        self.packs.iter().filter(|p| p.selected)
    }
}

/// Root kinds per the packing strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootKind {
    Slp,
    LlpIntra,
    LlpInter,
}

#[derive(Debug, Clone)]
pub struct Root {
    pub kind: RootKind,
    pub layer: LayerKey,
    /// Store nodes, address-ascending. For inter-loop roots the nodes live
    /// in the member loops' own layers.
    pub members: Vec<(LayerKey, DepNodeId)>,
    /// Participating loops (LLP roots).
    pub loops: Vec<VLoopId>,
    /// Display form of each member's address (offset + stride*cnt for LLP).
    pub addrs: Vec<String>,
}

/// Maximal ascending runs of contiguous stores within each layer, chunked
/// to the machine lane count, formed by iterative pairwise merging.
pub fn find_slp_roots(g: &DepGraph, vf: &VirFunction, cm: &CostModel) -> Vec<Root> {
    let mut roots = Vec::new();
    for (key, layer) in &g.layers {
        // Group stores by (array, non-constant address part).
        #[derive(PartialEq, Eq, PartialOrd, Ord)]
        struct GroupKey {
            array: usize,
            cnts: Vec<(VLoopId, i64)>,
            sym: Vec<(usize, i64)>,
        }
        let index = VirIndex::build(vf);
        let mut groups: BTreeMap<GroupKey, Vec<(i64, DepNodeId)>> = BTreeMap::new();
        let list = layer_list(vf, *key);
        for root in &layer.roots {
            let node = layer.node(*root);
            let Some(entry) = node.entry_index() else { continue };
            let Item::Instr(instr) = &list[entry].item else { continue };
            let VirInstrKind::Store { array, .. } = instr.kind else { continue };
            // The address entity is the third successor.
            let DepNodeKind::Entity(Entity::Address(addr)) =
                &layer.node(node.successors[2]).kind
            else {
                continue;
            };
            let Some(form) = &addr.form else { continue };
            // Group on the normalised iteration axes so interleaved
            // counters of a fused loop land in one group.
            let Some((offset, cnts)) = crate::depgraph::normalize_form(form, &index) else {
                continue;
            };
            let gk = GroupKey {
                array,
                cnts: cnts.into_iter().collect(),
                sym: offset.coeffs.iter().map(|(k, v)| (*k, *v)).collect(),
            };
            groups.entry(gk).or_default().push((offset.constant, *root));
        }
        for (gk, mut members) in groups {
            members.sort();
            members.dedup_by_key(|(c, _)| *c);
            let elem = match &vf.params[gk.array].kind {
                crate::sir::ParamKind::Array { elem, .. } => *elem,
                _ => Scalar::I32,
            };
            let cap = cm.lanes_for(elem) as usize;
            // Split into maximal ascending +1 runs, then chunk to the cap.
            let mut run: Vec<(i64, DepNodeId)> = Vec::new();
            let flush = |run: &mut Vec<(i64, DepNodeId)>, roots: &mut Vec<Root>| {
                for chunk in run.chunks(cap) {
                    if chunk.len() >= 2 {
                        roots.push(Root {
                            kind: RootKind::Slp,
                            layer: *key,
                            members: chunk.iter().map(|(_, n)| (*key, *n)).collect(),
                            loops: vec![],
                            addrs: chunk
                                .iter()
                                .map(|(c, _)| format!("{}[.. {c}]", vf.params[gk.array].name))
                                .collect(),
                        });
                    }
                }
                run.clear();
            };
            for (c, n) in members {
                match run.last() {
                    Some((prev, _)) if c == prev + 1 => run.push((c, n)),
                    Some(_) => {
                        flush(&mut run, &mut roots);
                        run.push((c, n));
                    }
                    None => run.push((c, n)),
                }
            }
            flush(&mut run, &mut roots);
        }
    }
    roots
}

/// LLP roots: stores contiguous across iterations. Intra-loop roots are
/// unit-stride stores (unroll candidates); inter-loop roots are store
/// groups from sibling loops whose per-iteration addresses interleave to a
/// contiguous tile, with no dependence between the loops.
pub fn find_llp_roots(g: &DepGraph, vf: &VirFunction) -> Vec<Root> {
    let index = VirIndex::build(vf);
    let mut roots = Vec::new();
    let registry = vf.loop_registry();

    // Intra-loop: stride == 1 element.
    for (key, layer) in &g.layers {
        let LayerKey::Loop(loop_id) = key else { continue };
        let l = &registry[loop_id];
        if l.iterator.is_none() || l.no_unroll {
            continue;
        }
        let list = layer_list(vf, *key);
        for root in &layer.roots {
            let node = layer.node(*root);
            let Some(entry) = node.entry_index() else { continue };
            let Item::Instr(instr) = &list[entry].item else { continue };
            let VirInstrKind::Store { array, index: iop, .. } = instr.kind else {
                continue;
            };
            let Some(form) = crate::depgraph::operand_form(iop, &index, 0) else {
                continue;
            };
            let Some((offset, stride)) = crate::depgraph::cnt_form(&form, l, &index) else {
                continue;
            };
            if stride == 1 {
                let names: Vec<String> = vf.params.iter().map(|p| p.name.clone()).collect();
                roots.push(Root {
                    kind: RootKind::LlpIntra,
                    layer: *key,
                    members: vec![(*key, *root)],
                    loops: vec![*loop_id],
                    addrs: vec![format!(
                        "{}[{} + 1*cnt]",
                        vf.params[array].name,
                        offset.display(&names)
                    )],
                });
            }
        }
    }

    roots.extend(find_inter_loop_roots(g, vf));
    roots
}

/// Inter-loop tiling groups, legality-checked for fusion.
pub fn find_inter_loop_roots(g: &DepGraph, vf: &VirFunction) -> Vec<Root> {
    let index = VirIndex::build(vf);
    let registry = vf.loop_registry();
    let mut out = Vec::new();
    for (key, layer) in &g.layers {
        let list = layer_list(vf, *key);
        // Sibling loops in program order with resolvable iterators.
        let mut sibs: Vec<(usize, VLoopId)> = Vec::new();
        for (i, e) in list.iter().enumerate() {
            if let Item::Loop(l) = &e.item {
                if l.iterator.is_some() && !l.no_unroll {
                    sibs.push((i, l.id));
                }
            }
        }
        if sibs.len() < 2 {
            continue;
        }
        // Candidate stores per sibling: (loop, entry idx, array, offset, stride).
        struct Cand {
            pos: usize,
            loop_id: VLoopId,
            node: DepNodeId,
            array: usize,
            offset: crate::affine::AffineExpr,
            stride: i64,
        }
        let mut cands: Vec<Cand> = Vec::new();
        for (pos, loop_id) in &sibs {
            let l = &registry[loop_id];
            let body_layer = g.layer(LayerKey::Loop(*loop_id));
            let body_list = layer_list(vf, LayerKey::Loop(*loop_id));
            for root in &body_layer.roots {
                let node = body_layer.node(*root);
                let Some(entry) = node.entry_index() else { continue };
                let Item::Instr(instr) = &body_list[entry].item else { continue };
                let VirInstrKind::Store { array, index: iop, .. } = instr.kind else {
                    continue;
                };
                let Some(form) = crate::depgraph::operand_form(iop, &index, 0) else {
                    continue;
                };
                let Some((offset, stride)) = crate::depgraph::cnt_form(&form, l, &index)
                else {
                    continue;
                };
                cands.push(Cand {
                    pos: *pos,
                    loop_id: *loop_id,
                    node: *root,
                    array,
                    offset,
                    stride,
                });
            }
        }
        // Group by (array, stride); members must come from distinct loops
        // with equal trip closed forms and consecutive constant offsets.
        let mut by_group: BTreeMap<(usize, i64), Vec<usize>> = BTreeMap::new();
        for (i, c) in cands.iter().enumerate() {
            if c.stride > 1 {
                by_group.entry((c.array, c.stride)).or_default().push(i);
            }
        }
        for ((array, stride), idxs) in by_group {
            if idxs.len() < 2 {
                continue;
            }
            // Offsets must differ by constants; sort by the constant part
            // relative to the first.
            let base = &cands[idxs[0]].offset;
            let mut rel: Vec<(i64, usize)> = Vec::new();
            let mut ok = true;
            for i in &idxs {
                match cands[*i].offset.sub(base).as_const() {
                    Some(d) => rel.push((d, *i)),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            rel.sort();
            // A tile needs exactly `stride` consecutive offsets, all from
            // distinct, fusable loops.
            if rel.len() as i64 != stride {
                continue;
            }
            let consecutive = rel.windows(2).all(|w| w[1].0 == w[0].0 + 1);
            if !consecutive {
                continue;
            }
            let member_loops: Vec<VLoopId> =
                rel.iter().map(|(_, i)| cands[*i].loop_id).collect();
            let mut uniq = member_loops.clone();
            uniq.sort();
            uniq.dedup();
            if uniq.len() != member_loops.len() {
                continue;
            }
            if !fusion_legal(vf, layer, list, &registry, &member_loops) {
                continue;
            }
            let names: Vec<String> = vf.params.iter().map(|p| p.name.clone()).collect();
            out.push(Root {
                kind: RootKind::LlpInter,
                layer: *key,
                members: rel
                    .iter()
                    .map(|(_, i)| (LayerKey::Loop(cands[*i].loop_id), cands[*i].node))
                    .collect(),
                loops: {
                    // Program order for fusion.
                    let mut ls: Vec<(usize, VLoopId)> = rel
                        .iter()
                        .map(|(_, i)| (cands[*i].pos, cands[*i].loop_id))
                        .collect();
                    ls.sort();
                    ls.into_iter().map(|(_, l)| l).collect()
                },
                addrs: rel
                    .iter()
                    .map(|(_, i)| {
                        format!(
                            "{}[{} + {}*cnt]",
                            vf.params[array].name,
                            cands[*i].offset.display(&names),
                            stride
                        )
                    })
                    .collect(),
            });
        }
    }
    out
}

/// Loops may fuse when their trip closed forms and entry predicates agree,
/// and the dependence map shows no path between any member or from an
/// intermediate entry back into a member.
fn fusion_legal(
    vf: &VirFunction,
    layer: &LayerGraph,
    list: &CodeList,
    registry: &BTreeMap<VLoopId, &LoopItem>,
    members: &[VLoopId],
) -> bool {
    let _ = vf;
    let mut positions = Vec::new();
    let mut preds = Vec::new();
    for (i, e) in list.iter().enumerate() {
        if let Item::Loop(l) = &e.item {
            if members.contains(&l.id) {
                positions.push(i);
                preds.push(e.pred.clone());
            }
        }
    }
    if positions.len() != members.len() {
        return false;
    }
    if !preds.windows(2).all(|w| w[0] == w[1]) {
        return false;
    }
    let first_it = registry[&members[0]].iterator.as_ref().unwrap();
    for m in &members[1..] {
        let it = registry[m].iterator.as_ref().unwrap();
        let same_trips = it.same_closed_form(first_it)
            || matches!(
                (it.const_trips(), first_it.const_trips()),
                (Some(a), Some(b)) if a == b
            );
        if !same_trips {
            return false;
        }
    }
    // No member depends on another; no intermediate depends on a member.
    for (ai, a) in positions.iter().enumerate() {
        for b in positions.iter().skip(ai + 1) {
            if layer.entry_reaches(*b, *a) {
                return false;
            }
        }
    }
    let lo = *positions.first().unwrap();
    let hi = *positions.last().unwrap();
    for mid in (lo + 1)..hi {
        if positions.contains(&mid) {
            continue;
        }
        if positions.iter().any(|p| layer.entry_reaches(mid, *p)) {
            return false;
        }
    }
    true
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

/// Grow packs for every SLP root of a layer, sharing the node-to-pack
/// index so overlapping trees deduplicate.
pub struct Grower<'a> {
    pub vf: &'a VirFunction,
    pub index: &'a VirIndex,
    pub layer: &'a LayerGraph,
    pub key: LayerKey,
    pub cm: &'a CostModel,
    pub packs: Vec<Pack>,
    pub node_pack: BTreeMap<DepNodeId, PackId>,
}

impl<'a> Grower<'a> {
    pub fn new(
        vf: &'a VirFunction,
        index: &'a VirIndex,
        layer: &'a LayerGraph,
        key: LayerKey,
        cm: &'a CostModel,
    ) -> Self {
        Grower {
            vf,
            index,
            layer,
            key,
            cm,
            packs: Vec::new(),
            node_pack: BTreeMap::new(),
        }
    }

    fn list(&self) -> &'a CodeList {
        layer_list(self.vf, self.key)
    }

    fn node_instr(&self, n: DepNodeId) -> Option<&'a crate::vir::VirInstr> {
        let entry = self.layer.node(n).entry_index()?;
        match &self.list()[entry].item {
            Item::Instr(i) => Some(i),
            _ => None,
        }
    }

    fn node_value(&self, n: DepNodeId) -> Option<VirValue> {
        self.node_instr(n).and_then(|i| i.result)
    }

    fn node_pred(&self, n: DepNodeId) -> Option<&'a Predicate> {
        let entry = self.layer.node(n).entry_index()?;
        Some(&self.list()[entry].pred)
    }

    fn shape_of(&self, n: DepNodeId) -> Option<PackShape> {
        let instr = self.node_instr(n)?;
        Some(match &instr.kind {
            VirInstrKind::Bin { op, ty, .. } => {
                // Division can trap; packing would speculate it.
                if matches!(op, BinOp::Div | BinOp::Rem) {
                    return None;
                }
                PackShape::Bin { op: *op, ty: *ty }
            }
            VirInstrKind::Un { op, ty, .. } => {
                if *op == UnOp::Not {
                    return None;
                }
                PackShape::Un { op: *op, ty: *ty }
            }
            VirInstrKind::Cast { to, .. } => PackShape::Cast { to: *to },
            VirInstrKind::Select { ty, .. } => PackShape::Select { ty: *ty },
            VirInstrKind::Load { array, elem, .. } => PackShape::Load {
                array: *array,
                elem: *elem,
            },
            VirInstrKind::Store { array, elem, .. } => PackShape::Store {
                array: *array,
                elem: *elem,
            },
            _ => return None,
        })
    }

    /// Grow a pack from store nodes (a root). Returns the store pack when
    /// the lanes are independent and every position resolves.
    pub fn grow_root(&mut self, members: &[DepNodeId]) -> Option<PackId> {
        self.try_pack_lanes(&members.iter().map(|n| LaneOperand::Node(*n)).collect::<Vec<_>>())
    }

    fn try_pack_lanes(&mut self, lanes: &[LaneOperand]) -> Option<PackId> {
        if lanes.len() < 2 {
            return None;
        }
        // Dedup: all node lanes already in the same pack, same order.
        let node_lanes: Vec<Option<DepNodeId>> = lanes
            .iter()
            .map(|l| match l {
                LaneOperand::Node(n) => Some(*n),
                _ => None,
            })
            .collect();
        if let Some(Some(first)) = node_lanes.first() {
            if let Some(pid) = self.node_pack.get(first).copied() {
                let pack = &self.packs[pid.0 as usize];
                let same = pack.lanes.len() == lanes.len()
                    && pack
                        .lanes
                        .iter()
                        .zip(&node_lanes)
                        .all(|(pl, nl)| pl.node == *nl && nl.is_some());
                if same {
                    return Some(pid);
                }
                return None;
            }
        }
        // Any lane owned by a different pack blocks this grouping.
        for n in node_lanes.iter().flatten() {
            if self.node_pack.contains_key(n) {
                return None;
            }
        }
        // Lanes must be distinct nodes.
        {
            let mut seen = BTreeSet::new();
            for n in node_lanes.iter().flatten() {
                if !seen.insert(*n) {
                    return None;
                }
            }
        }
        // Pairwise independence over data, predicate, and memory edges.
        let real: Vec<DepNodeId> = node_lanes.iter().flatten().copied().collect();
        for (i, a) in real.iter().enumerate() {
            for b in &real[i + 1..] {
                if self.layer.reaches(*a, *b) || self.layer.reaches(*b, *a) {
                    return None;
                }
            }
        }

        // Template: the most common packable shape.
        let shapes: Vec<Option<PackShape>> = lanes
            .iter()
            .map(|l| match l {
                LaneOperand::Node(n) => self.shape_of(*n),
                LaneOperand::Entity(_) => None,
            })
            .collect();
        let mut tally: Vec<(PackShape, usize)> = Vec::new();
        for s in shapes.iter().flatten() {
            match tally.iter_mut().find(|(t, _)| t == s) {
                Some((_, c)) => *c += 1,
                None => tally.push((*s, 1)),
            }
        }
        let (template, _) = tally.iter().max_by_key(|(_, c)| *c)?.to_owned();
        let elem = template.elem();
        if lanes.len() as u32 > self.cm.lanes_for(elem) {
            return None;
        }

        // Rewrites restore isomorphism for mismatching lanes.
        let template_rhs = self.uniform_rhs_const(&template, lanes, &shapes);
        let mut built_lanes: Vec<Lane> = Vec::with_capacity(lanes.len());
        for (lane, shape) in lanes.iter().zip(&shapes) {
            if shape.as_ref() == Some(&template) {
                let LaneOperand::Node(n) = lane else { unreachable!() };
                built_lanes.push(Lane {
                    node: Some(*n),
                    rewrite: None,
                    bare: None,
                });
                continue;
            }
            // Mismatch: only binary templates admit identity rewrites.
            let PackShape::Bin { op, ty } = template else {
                return None;
            };
            let (value, bare_value) = match lane {
                LaneOperand::Node(n) => (
                    VOperand::Value(self.node_value(*n)?),
                    matches!(self.shape_of(*n), Some(PackShape::Load { .. })),
                ),
                LaneOperand::Entity(v) => (*v, true),
            };
            let rewrite = equiv::rewrite_for(op, template_rhs, value, ty, self.index)?;
            // Free neutral identities lift bare values only (entities or
            // loads); rewriting one arithmetic opcode into another needs
            // the range-proven mask reconstruction.
            if !bare_value && !matches!(rewrite, Rewrite::MaskAnd { .. }) {
                return None;
            }
            built_lanes.push(Lane {
                node: None,
                rewrite: Some(rewrite),
                bare: Some(*lane),
            });
        }

        // Control predicates: collapse identical lanes, else form a mask.
        let preds: Vec<Predicate> = lanes
            .iter()
            .map(|l| match l {
                LaneOperand::Node(n) => self.node_pred(*n).cloned().unwrap_or(Predicate::True),
                LaneOperand::Entity(_) => Predicate::True,
            })
            .collect();
        let uniform = preds.windows(2).all(|w| w[0] == w[1]);
        // Reserve this pack's id before growing children.
        let pid = PackId(self.packs.len() as u32);
        self.packs.push(Pack {
            id: pid,
            layer: self.key,
            shape: template,
            lanes: built_lanes,
            pred: PredLanes::Uniform(Predicate::True),
            operands: Vec::new(),
            selected: false,
            cost: None,
            cost_value: None,
        });
        for n in &real {
            // Register only matching lanes; rewritten bare nodes stay
            // available for their own packs.
            let owned = self.packs[pid.0 as usize]
                .lanes
                .iter()
                .any(|l| l.node == Some(*n));
            if owned {
                self.node_pack.insert(*n, pid);
            }
        }

        let pred = if uniform {
            PredLanes::Uniform(preds[0].clone())
        } else {
            match self.grow_mask(&preds) {
                Some(source) => PredLanes::Mask {
                    lanes: preds.clone(),
                    source: Box::new(source),
                },
                None => {
                    self.unregister(pid);
                    return None;
                }
            }
        };

        let operands = match self.grow_operands(pid, &template) {
            Some(ops) => ops,
            None => {
                self.unregister(pid);
                return None;
            }
        };
        let pack = &mut self.packs[pid.0 as usize];
        pack.pred = pred;
        pack.operands = operands;
        Some(pid)
    }

    /// Roll back a failed pack reservation.
    fn unregister(&mut self, pid: PackId) {
        self.node_pack.retain(|_, v| *v != pid);
        // Keep the slot (ids are stable) but mark it inert.
        self.packs[pid.0 as usize].lanes.clear();
        self.packs[pid.0 as usize].selected = false;
    }

    /// When every matching lane's rhs is one constant, rewrites may target
    /// it (mask reconstruction).
    fn uniform_rhs_const(
        &self,
        template: &PackShape,
        lanes: &[LaneOperand],
        shapes: &[Option<PackShape>],
    ) -> Option<ConstVal> {
        let PackShape::Bin { .. } = template else { return None };
        let mut rhs: Option<ConstVal> = None;
        for (lane, shape) in lanes.iter().zip(shapes) {
            if shape.as_ref() != Some(template) {
                continue;
            }
            let LaneOperand::Node(n) = lane else { continue };
            let instr = self.node_instr(*n)?;
            let VirInstrKind::Bin { rhs: r, .. } = &instr.kind else { return None };
            match (rhs, r.as_const()) {
                (None, Some(c)) => rhs = Some(c),
                (Some(prev), Some(c)) if prev == c => {}
                _ => return None,
            }
        }
        rhs
    }

    /// Mask source for distinct lane predicates: pack the atom-defining
    /// compares when possible, else build the mask from scalar booleans
    /// (padding `true`/`false` lanes as constants).
    fn grow_mask(&mut self, preds: &[Predicate]) -> Option<OperandPack> {
        let mut bools: Vec<(VOperand, bool)> = Vec::with_capacity(preds.len());
        let mut atom_nodes: Vec<Option<DepNodeId>> = Vec::with_capacity(preds.len());
        let mut all_pos_atoms = true;
        for p in preds {
            match p {
                Predicate::True => {
                    bools.push((VOperand::Const(ConstVal::Bool(true)), true));
                    atom_nodes.push(None);
                    all_pos_atoms = false;
                }
                Predicate::False => {
                    bools.push((VOperand::Const(ConstVal::Bool(false)), true));
                    atom_nodes.push(None);
                    all_pos_atoms = false;
                }
                _ => {
                    let lit = p.single_literal()?;
                    let v = VirValue(lit.atom.0);
                    bools.push((VOperand::Value(v), lit.positive));
                    if !lit.positive {
                        all_pos_atoms = false;
                    }
                    // In-layer defining node, if any.
                    let node = self.layer.nodes.iter().find(|n| {
                        n.entry_index().is_some_and(|e| {
                            matches!(&self.list()[e].item, Item::Instr(i) if i.result == Some(v))
                        })
                    });
                    atom_nodes.push(node.map(|n| n.id));
                }
            }
        }
        if all_pos_atoms && atom_nodes.iter().all(|n| n.is_some()) {
            let lanes: Vec<LaneOperand> = atom_nodes
                .iter()
                .map(|n| LaneOperand::Node(n.unwrap()))
                .collect();
            if let Some(pid) = self.try_pack_lanes(&lanes) {
                return Some(OperandPack::Packed(pid));
            }
        }
        Some(OperandPack::MaskBools(bools))
    }

    fn grow_operands(&mut self, pid: PackId, template: &PackShape) -> Option<Vec<OperandPack>> {
        let lanes = self.packs[pid.0 as usize].lanes.clone();
        match template {
            PackShape::Load { array, .. } => {
                Some(vec![self.wide_addr(*array, &lanes, 1)?])
            }
            PackShape::Store { array, .. } => {
                let value = self.store_value_position(&lanes)?;
                let addr = self.wide_addr(*array, &lanes, 2)?;
                Some(vec![value, addr])
            }
            PackShape::Bin { .. } => {
                let lhs = self.operand_position(&lanes, 1)?;
                let rhs = self.operand_position(&lanes, 2)?;
                Some(vec![lhs, rhs])
            }
            PackShape::Un { .. } | PackShape::Cast { .. } => {
                Some(vec![self.operand_position(&lanes, 1)?])
            }
            PackShape::Select { .. } => {
                let cond = self.operand_position(&lanes, 1)?;
                // The condition must be a vector mask.
                let cond = match cond {
                    OperandPack::Packed(p) => OperandPack::Packed(p),
                    OperandPack::Gather(ls) => OperandPack::MaskBools(
                        ls.iter()
                            .map(|l| match l {
                                LaneOperand::Entity(v) => (*v, true),
                                LaneOperand::Node(n) => (
                                    VOperand::Value(self.node_value(*n).unwrap()),
                                    true,
                                ),
                            })
                            .collect(),
                    ),
                    other => other,
                };
                let t = self.operand_position(&lanes, 2)?;
                let f = self.operand_position(&lanes, 3)?;
                Some(vec![cond, t, f])
            }
        }
    }

    /// Stored values per lane (stores are never rewritten).
    fn store_value_position(&mut self, lanes: &[Lane]) -> Option<OperandPack> {
        let mut ops = Vec::with_capacity(lanes.len());
        for lane in lanes {
            let n = lane.node?;
            let instr = self.node_instr(n)?;
            let VirInstrKind::Store { value, .. } = instr.kind else {
                return None;
            };
            ops.push(self.operand_to_lane(value));
        }
        Some(self.grow_operand(&ops))
    }

    /// The lane operands at successor position `succ_idx` (0 is the
    /// predicate). Rewritten lanes contribute their bare value at position
    /// 1 and the rewrite constant at position 2.
    fn operand_position(&mut self, lanes: &[Lane], succ_idx: usize) -> Option<OperandPack> {
        let mut ops: Vec<LaneOperand> = Vec::with_capacity(lanes.len());
        for lane in lanes {
            match (lane.node, &lane.rewrite) {
                (Some(n), None) => {
                    let instr = self.node_instr(n)?;
                    let operands = instr.kind.operands();
                    let op = operands.get(succ_idx - 1)?;
                    ops.push(self.operand_to_lane(*op));
                }
                (None, Some(rw)) => {
                    if succ_idx == 1 {
                        ops.push(lane.bare.unwrap());
                    } else {
                        ops.push(LaneOperand::Entity(VOperand::Const(rw.rhs_const())));
                    }
                }
                _ => unreachable!("lane is real or rewritten"),
            }
        }
        Some(self.grow_operand(&ops))
    }

    fn operand_to_lane(&self, op: VOperand) -> LaneOperand {
        if let VOperand::Value(v) = op {
            // In-layer instruction results become nodes.
            if let Some(node) = self.layer.nodes.iter().find(|n| {
                n.entry_index().is_some_and(|e| {
                    matches!(&self.list()[e].item, Item::Instr(i) if i.result == Some(v))
                })
            }) {
                return LaneOperand::Node(node.id);
            }
        }
        LaneOperand::Entity(op)
    }

    fn grow_operand(&mut self, ops: &[LaneOperand]) -> OperandPack {
        // All-equal lanes broadcast.
        if ops.windows(2).all(|w| w[0] == w[1]) {
            return OperandPack::Broadcast(ops[0]);
        }
        // All constants form a lane-constant vector.
        let consts: Option<Vec<ConstVal>> = ops
            .iter()
            .map(|l| match l {
                LaneOperand::Entity(VOperand::Const(c)) => Some(*c),
                _ => None,
            })
            .collect();
        if let Some(cs) = consts {
            return OperandPack::LaneConsts(cs);
        }
        // Try a child pack (rewrites may absorb entity lanes).
        if let Some(pid) = self.try_pack_lanes(ops) {
            return OperandPack::Packed(pid);
        }
        OperandPack::Gather(ops.to_vec())
    }

    /// Contiguity of the lanes' addresses, ascending by +1 in lane order.
    fn wide_addr(&mut self, array: usize, lanes: &[Lane], succ_idx: usize) -> Option<OperandPack> {
        let mut forms = Vec::with_capacity(lanes.len());
        let mut lane0_index = None;
        for (i, lane) in lanes.iter().enumerate() {
            let n = lane.node?;
            let node = self.layer.node(n);
            let addr_node = node.successors.get(succ_idx)?;
            let DepNodeKind::Entity(Entity::Address(a)) = &self.layer.node(*addr_node).kind
            else {
                return None;
            };
            if a.array != array {
                return None;
            }
            let form = a.form.clone()?;
            if i == 0 {
                lane0_index = Some(a.index);
            }
            forms.push(form);
        }
        for w in forms.windows(2) {
            let direct = w[1].add(&w[0].neg()).is_const() == Some(1);
            let normalized = match (
                crate::depgraph::normalize_form(&w[1], self.index),
                crate::depgraph::normalize_form(&w[0], self.index),
            ) {
                (Some((ob, cb)), Some((oa, ca))) => {
                    ca == cb && ob.sub(&oa).as_const() == Some(1)
                }
                _ => false,
            };
            if !direct && !normalized {
                return None;
            }
        }
        Some(OperandPack::WideAddr {
            array,
            lane0_index: lane0_index?,
        })
    }
}

/// Per-layer pack selection: keep packs with negative cost, charging
/// deselected children as gathers and scalar consumers as extracts, to a
/// fixpoint (deselection only adds cost elsewhere, so this terminates).
pub fn select_packs(
    vf: &VirFunction,
    layer: &LayerGraph,
    key: LayerKey,
    packs: &mut [Pack],
    node_pack: &BTreeMap<DepNodeId, PackId>,
    cm: &CostModel,
) {
    let list = layer_list(vf, key);
    // Consumers of each node within the layer.
    let mut uses: BTreeMap<DepNodeId, Vec<DepNodeId>> = BTreeMap::new();
    for n in &layer.nodes {
        for s in &n.successors {
            uses.entry(*s).or_default().push(n.id);
        }
    }
    // Values the layer must expose as scalars (latch, recurrences, loop
    // results, function return) force extracts on packs covering them.
    let keep_values = layer_keep_values(vf, key);

    for p in packs.iter_mut() {
        p.selected = !p.lanes.is_empty();
    }
    loop {
        let mut changed = false;
        for i in 0..packs.len() {
            if !packs[i].selected {
                continue;
            }
            let info = cost_of(vf, list, layer, &uses, &keep_values, packs, node_pack, i, cm);
            let c = pack_cost(&info, cm);
            packs[i].cost = Some(info);
            packs[i].cost_value = Some(c);
            if c >= 0 {
                packs[i].selected = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // Refresh cost info for survivors (final glue state).
    for i in 0..packs.len() {
        if packs[i].selected {
            let info = cost_of(vf, list, layer, &uses, &keep_values, packs, node_pack, i, cm);
            packs[i].cost_value = Some(pack_cost(&info, cm));
            packs[i].cost = Some(info);
        }
    }
}

fn layer_keep_values(vf: &VirFunction, key: LayerKey) -> BTreeSet<VirValue> {
    let mut keep = BTreeSet::new();
    match key {
        LayerKey::Root => {
            if let Some(VOperand::Value(v)) = vf.ret {
                keep.insert(v);
            }
        }
        LayerKey::Loop(id) => {
            let registry = vf.loop_registry();
            let l = &registry[&id];
            keep.extend(l.latch.atoms().iter().map(|a| VirValue(a.0)));
            for wd in &l.with_defs {
                match wd {
                    crate::vir::WithDef::Iota { recur, .. } => {
                        keep.insert(*recur);
                    }
                    crate::vir::WithDef::Mu { next, .. } => {
                        if let VOperand::Value(v) = next {
                            keep.insert(*v);
                        }
                    }
                }
            }
            for (_, inner) in &l.results {
                if let VOperand::Value(v) = inner {
                    keep.insert(*v);
                }
            }
        }
    }
    keep
}

#[allow(clippy::too_many_arguments)]
fn cost_of(
    _vf: &VirFunction,
    list: &CodeList,
    layer: &LayerGraph,
    uses: &BTreeMap<DepNodeId, Vec<DepNodeId>>,
    keep_values: &BTreeSet<VirValue>,
    packs: &[Pack],
    node_pack: &BTreeMap<DepNodeId, PackId>,
    idx: usize,
    _cm: &CostModel,
) -> PackCostInfo {
    let p = &packs[idx];
    let lanes = p.lane_count();
    let mut movement = Movement::default();
    let child_selected = |op: &OperandPack| match op {
        OperandPack::Packed(c) => packs[c.0 as usize].selected,
        _ => true,
    };
    for op in &p.operands {
        match op {
            OperandPack::Packed(_) => {
                if !child_selected(op) {
                    movement.inserts += lanes;
                }
            }
            OperandPack::LaneConsts(_) | OperandPack::WideAddr { .. } => {}
            OperandPack::Broadcast(_) => movement.broadcasts += 1,
            OperandPack::Gather(_) => movement.inserts += lanes,
            OperandPack::MaskBools(_) => movement.mask_elements += lanes,
        }
    }
    if let PredLanes::Mask { source, .. } = &p.pred {
        match source.as_ref() {
            OperandPack::Packed(c) => {
                if !packs[c.0 as usize].selected {
                    movement.mask_elements += lanes;
                }
            }
            OperandPack::MaskBools(_) => movement.mask_elements += lanes,
            _ => {}
        }
    }
    // Extracts: lanes whose value escapes to scalar consumers.
    for lane in &p.lanes {
        let Some(n) = lane.node else { continue };
        let Some(v) = node_value_of(list, layer, n) else { continue };
        let mut escapes = keep_values.contains(&v);
        if !escapes {
            for consumer in uses.get(&n).into_iter().flatten() {
                // A control-predicate consumer forces an extract only when
                // some entry guarded by an atom of this lane actually
                // emits scalarly (packed consumers read the mask instead).
                if matches!(
                    layer.node(*consumer).kind,
                    DepNodeKind::ControlPredicate(_)
                ) {
                    let atom = crate::predicate::PredAtom(v.0);
                    let scalar_guard_use = list.iter().enumerate().any(|(ei, e)| {
                        e.pred.atoms().contains(&atom)
                            && match layer.entry_nodes.get(ei).copied().flatten() {
                                Some(en) => !node_pack
                                    .get(&en)
                                    .is_some_and(|pp| packs[pp.0 as usize].selected),
                                None => true,
                            }
                    });
                    if scalar_guard_use {
                        escapes = true;
                        break;
                    }
                    continue;
                }
                if layer.node(*consumer).entry_index().is_none() {
                    continue;
                }
                let covered = node_pack.get(consumer).is_some_and(|cp| {
                    let cpack = &packs[cp.0 as usize];
                    if !cpack.selected {
                        return false;
                    }
                    let Some(k) = cpack.lanes.iter().position(|l| l.node == Some(*consumer))
                    else {
                        return false;
                    };
                    // Some selected operand pack must source this lane's
                    // value at lane k, directly or through a rewrite.
                    let mask_src = match &cpack.pred {
                        PredLanes::Mask { source, .. } => Some(source.as_ref()),
                        _ => None,
                    };
                    cpack.operands.iter().chain(mask_src).any(|o| {
                        let OperandPack::Packed(c) = o else { return false };
                        let x = &packs[c.0 as usize];
                        x.selected
                            && x.lanes.get(k).is_some_and(|l| {
                                l.node == Some(n)
                                    || l.bare == Some(LaneOperand::Node(n))
                            })
                    })
                });
                if !covered {
                    escapes = true;
                    break;
                }
            }
        }
        if escapes {
            movement.extracts += 1;
        }
    }
    PackCostInfo {
        op: p.shape.op_kind(),
        lanes,
        scalar_ops: p
            .lanes
            .iter()
            .filter(|l| l.node.is_some())
            .map(|_| p.shape.op_kind())
            .collect(),
        movement,
    }
}

fn node_value_of(list: &CodeList, layer: &LayerGraph, n: DepNodeId) -> Option<VirValue> {
    let entry = layer.node(n).entry_index()?;
    match &list[entry].item {
        Item::Instr(i) => i.result,
        _ => None,
    }
}

/// Candidate unroll factors for a loop: lane count for the narrowest
/// element type divided by the interleave (fusion) degree, halving down
/// to 2, capped by a known constant trip count.
pub fn unroll_candidates(l: &LoopItem, cm: &CostModel) -> Vec<u32> {
    let Some(it) = &l.iterator else { return vec![] };
    if l.no_unroll {
        return vec![];
    }
    let narrowest = Scalar::I32; // every MiniC element type is 32-bit
    let lanes = cm.lanes_for(narrowest);
    let top = lanes / l.fuse_degree.max(1);
    let mut out = Vec::new();
    let mut f = top;
    while f >= 2 {
        let fits = match it.const_trips() {
            Some(t) => (f as u64) <= t.max(1),
            None => true,
        };
        if fits {
            out.push(f);
        }
        f /= 2;
    }
    out
}

/// Evaluate one candidate factor: materialise the unroll on a clone, pack,
/// and return the total cost of everything that would vectorize.
pub fn candidate_cost(
    vf: &VirFunction,
    loop_id: VLoopId,
    factor: u32,
    cm: &CostModel,
    alias: AliasPolicy,
) -> i64 {
    let mut clone = vf.clone();
    if factor >= 2 && unroll_loop(&mut clone, loop_id, factor).is_none() {
        return 0;
    }
    let g = build_dep_graph(&clone, alias);
    let ps = pack_function(&clone, &g, cm);
    crate::costmodel::total_cost(
        ps.packs
            .iter()
            .filter(|p| p.selected)
            .filter_map(|p| p.cost.as_ref()),
        cm,
    )
}

/// Choose the unroll factor by exhaustive evaluation of the candidates;
/// 1 when none is profitable. Ties prefer the larger factor.
pub fn plan_unroll(
    vf: &VirFunction,
    loop_id: VLoopId,
    cm: &CostModel,
    alias: AliasPolicy,
) -> (u32, Vec<(u32, i64)>) {
    let registry = vf.loop_registry();
    let Some(l) = registry.get(&loop_id) else {
        return (1, vec![]);
    };
    let candidates = unroll_candidates(l, cm);
    let mut evaluated = Vec::new();
    let mut best: Option<(i64, u32)> = None;
    for f in candidates {
        let cost = candidate_cost(vf, loop_id, f, cm, alias);
        evaluated.push((f, cost));
        if cost < 0 {
            let better = match best {
                None => true,
                Some((bc, bf)) => cost < bc || (cost == bc && f > bf),
            };
            if better {
                best = Some((cost, f));
            }
        }
    }
    (best.map(|(_, f)| f).unwrap_or(1), evaluated)
}

/// Grow and select packs for every layer of a function.
pub fn pack_function(vf: &VirFunction, g: &DepGraph, cm: &CostModel) -> PackSet {
    let index = VirIndex::build(vf);
    let roots = find_slp_roots(g, vf, cm);
    let mut set = PackSet::default();
    let mut by_layer: BTreeMap<LayerKey, Vec<&Root>> = BTreeMap::new();
    for r in &roots {
        by_layer.entry(r.layer).or_default().push(r);
    }
    for (key, layer_roots) in by_layer {
        let layer = g.layer(key);
        let mut grower = Grower::new(vf, &index, layer, key, cm);
        for root in layer_roots {
            let members: Vec<DepNodeId> = root.members.iter().map(|(_, n)| *n).collect();
            let _ = grower.grow_root(&members);
        }
        let Grower {
            mut packs,
            node_pack,
            ..
        } = grower;
        select_packs(vf, layer, key, &mut packs, &node_pack, cm);
        let base = set.packs.len() as u32;
        for mut p in packs {
            // Re-id into the global set.
            let old = p.id;
            p.id = PackId(old.0 + base);
            for op in p.operands.iter_mut() {
                if let OperandPack::Packed(c) = op {
                    *c = PackId(c.0 + base);
                }
            }
            if let PredLanes::Mask { source, .. } = &mut p.pred {
                if let OperandPack::Packed(c) = source.as_mut() {
                    *c = PackId(c.0 + base);
                }
            }
            set.packs.push(p);
        }
        for (n, pid) in node_pack {
            set.node_pack.insert((key, n), PackId(pid.0 + base));
        }
    }
    set
}

/// The complete planning pipeline: fuse profitable inter-loop groups,
/// choose and materialise unroll factors, then pack the final function.
pub struct VectorizeOutcome {
    pub vf: VirFunction,
    pub graph: DepGraph,
    pub packs: PackSet,
    pub report: PlanReport,
}

#[derive(Debug, Clone, Default)]
pub struct PlanReport {
    pub llp_roots: Vec<Root>,
    pub fusions: Vec<(Vec<VLoopId>, VLoopId)>,
    pub unroll: Vec<(VLoopId, u32, Vec<(u32, i64)>)>,
}

pub fn vectorize_function(
    vf0: &VirFunction,
    cm: &CostModel,
    alias: AliasPolicy,
) -> VectorizeOutcome {
    let mut vf = vf0.clone();
    let mut report = PlanReport::default();

    // Fusion: repeat while inter-loop tiles exist.
    loop {
        let g = build_dep_graph(&vf, alias);
        let fresh: Vec<Root> = find_llp_roots(&g, &vf)
            .into_iter()
            .filter(|r| {
                // Record each root once.
                !report
                    .llp_roots
                    .iter()
                    .any(|seen| seen.addrs == r.addrs && seen.kind == r.kind)
            })
            .collect();
        report.llp_roots.extend(fresh);
        let inter = find_inter_loop_roots(&g, &vf);
        let Some(root) = inter.first() else { break };
        let members = root.loops.clone();
        match fuse_loops(&mut vf, &members) {
            Some(fused) => report.fusions.push((members, fused)),
            None => break,
        }
    }

    // Unroll planning per remaining loop, outermost-first program order.
    let loop_ids: Vec<VLoopId> = vf.loop_registry().keys().copied().collect();
    for id in loop_ids {
        let registry = vf.loop_registry();
        let Some(l) = registry.get(&id) else { continue };
        if l.iterator.is_none() || l.no_unroll {
            continue;
        }
        let (factor, evaluated) = plan_unroll(&vf, id, cm, alias);
        report.unroll.push((id, factor, evaluated));
        if factor >= 2 {
            let _ = unroll_loop(&mut vf, id, factor);
        }
    }

    let graph = build_dep_graph(&vf, alias);
    let mut packs = pack_function(&vf, &graph, cm);
    for (id, factor, _) in &report.unroll {
        packs.unroll_factors.insert(*id, *factor);
    }
    VectorizeOutcome {
        vf,
        graph,
        packs,
        report,
    }
}

/// Textual dump of roots, packs, lanes, rewrites, and unroll decisions.
pub fn dump_packs(outcome: &VectorizeOutcome, vf_before: &VirFunction) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "llp roots:");
    for r in &outcome.report.llp_roots {
        let kind = match r.kind {
            RootKind::Slp => "slp",
            RootKind::LlpIntra => "llp-intra",
            RootKind::LlpInter => "llp-inter",
        };
        let _ = writeln!(out, "  {kind} {} members [{}]", r.layer, r.addrs.join(", "));
    }
    for (members, fused) in &outcome.report.fusions {
        let names: Vec<String> = members.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(out, "fused {} -> {}", names.join(" + "), fused);
    }
    for (l, factor, cands) in &outcome.report.unroll {
        let cands: Vec<String> = cands
            .iter()
            .map(|(f, c)| format!("{f} => {c}"))
            .collect();
        let _ = writeln!(
            out,
            "unroll {l}: factor {factor} (candidates {})",
            if cands.is_empty() {
                "none".to_string()
            } else {
                cands.join(", ")
            }
        );
    }
    let _ = writeln!(out, "packs:");
    let final_list_names: Vec<String> = outcome
        .vf
        .params
        .iter()
        .map(|p| p.name.clone())
        .collect();
    let _ = final_list_names;
    for p in &outcome.packs.packs {
        if p.lanes.is_empty() {
            continue;
        }
        let sel = if p.selected { "vectorize" } else { "scalar" };
        let cost = p.cost_value.unwrap_or(0);
        let _ = writeln!(
            out,
            "  {} {:?} lanes {} @{} [{sel}, cost {cost}]",
            p.id,
            p.shape.op_kind().table_key(),
            p.lane_count(),
            p.layer,
        );
        for (i, lane) in p.lanes.iter().enumerate() {
            if let Some(rw) = &lane.rewrite {
                let _ = writeln!(out, "    lane {i}: rewrite {}", rw.describe());
            }
        }
    }
    let _ = vf_before;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{random_env, run_ast};
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

    const FIG6: &str = "
void f(i32 a[4], i32 b[4]) {
    b[0] = a[0];
    b[1] = a[1] << 1;
    b[2] = a[2] << 2;
    b[3] = a[3] << 3;
}";

    const FIG3: &str = "
void f(i32 a[256], i32 b[256]) {
    for (i32 i = 0; i < 256; i += 2) { a[i] = a[i] + b[i]; }
    for (i32 j = 1; j < 256; j += 2) { a[j] = a[j] + b[j]; }
}";

    #[test]
    fn fig6_slp_root_and_full_pack() {
        let vf = to_vir(FIG6);
        let cm = CostModel::with_width(128);
        let g = build_dep_graph(&vf, AliasPolicy::ArraysDisjoint);
        let roots = find_slp_roots(&g, &vf, &cm);
        assert_eq!(roots.len(), 1);
        assert_eq!(roots[0].members.len(), 4);

        let ps = pack_function(&vf, &g, &cm);
        let store_pack = ps
            .selected()
            .find(|p| matches!(p.shape, PackShape::Store { .. }))
            .expect("store pack selected");
        assert_eq!(store_pack.lane_count(), 4);
        assert_eq!(store_pack.rewrite_count(), 0);
        // Exactly one equivalence rewrite across the whole set: a[0] << 0.
        let rewrites: Vec<&Rewrite> = ps
            .packs
            .iter()
            .flat_map(|p| p.lanes.iter().filter_map(|l| l.rewrite.as_ref()))
            .collect();
        assert_eq!(rewrites.len(), 1);
        assert_eq!(
            rewrites[0],
            &Rewrite::NeutralRhs {
                op: BinOp::Shl,
                neutral: ConstVal::I32(0)
            }
        );
        // Fully packed: no gather or broadcast glue anywhere selected.
        for p in ps.selected() {
            let m = p.cost.as_ref().unwrap().movement;
            assert_eq!(m.elements(), 0, "pack {} has movement {m:?}", p.id);
        }
        // The store pack's cost is 1 - 4 + 0.
        assert_eq!(store_pack.cost_value, Some(-3));
        // Shift amounts pack as the lane-constant vector {0,1,2,3}.
        let shl_pack = ps
            .selected()
            .find(|p| matches!(p.shape, PackShape::Bin { op: BinOp::Shl, .. }))
            .expect("shift pack");
        assert!(matches!(
            &shl_pack.operands[1],
            OperandPack::LaneConsts(cs) if cs == &vec![
                ConstVal::I32(0), ConstVal::I32(1), ConstVal::I32(2), ConstVal::I32(3)
            ]
        ));
    }

    #[test]
    fn single_store_yields_no_root() {
        let vf = to_vir("void f(i32 a[4]) { a[0] = 1; }");
        let cm = CostModel::with_width(128);
        let g = build_dep_graph(&vf, AliasPolicy::ArraysDisjoint);
        assert!(find_slp_roots(&g, &vf, &cm).is_empty());
    }

    #[test]
    fn slp_roots_match_sort_and_scan_oracle() {
        // Random straight-line store sets at constant addresses; the roots
        // must be exactly the maximal ascending runs chunked to the cap.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        use rand::Rng;
        for _ in 0..50 {
            let mut offsets: Vec<i64> = (0..rng.gen_range(1..10))
                .map(|_| rng.gen_range(0..16))
                .collect();
            offsets.sort();
            offsets.dedup();
            // Shuffle program order.
            for i in (1..offsets.len()).rev() {
                let j = rng.gen_range(0..=i);
                offsets.swap(i, j);
            }
            let body: String = offsets
                .iter()
                .enumerate()
                .map(|(i, o)| format!("a[{o}] = {i};\n"))
                .collect();
            let src = format!("void f(i32 a[16]) {{ {body} }}");
            let vf = to_vir(&src);
            let cm = CostModel::with_width(128);
            let g = build_dep_graph(&vf, AliasPolicy::ArraysDisjoint);
            let roots = find_slp_roots(&g, &vf, &cm);

            // Oracle: sort addresses, scan runs, chunk by 4.
            let mut sorted = offsets.clone();
            sorted.sort();
            let mut runs: Vec<Vec<i64>> = Vec::new();
            for o in sorted {
                match runs.last_mut() {
                    Some(run) if *run.last().unwrap() + 1 == o => run.push(o),
                    _ => runs.push(vec![o]),
                }
            }
            let expected: Vec<usize> = runs
                .iter()
                .flat_map(|r| r.chunks(4))
                .filter(|c| c.len() >= 2)
                .map(|c| c.len())
                .collect();
            let mut got: Vec<usize> = roots.iter().map(|r| r.members.len()).collect();
            got.sort();
            let mut want = expected.clone();
            want.sort();
            assert_eq!(got, want, "offsets {offsets:?}");
        }
    }

    #[test]
    fn fig3_inter_loop_root_fusion_and_factor_two() {
        let vf = to_vir(FIG3);
        let cm = CostModel::with_width(128);
        let g = build_dep_graph(&vf, AliasPolicy::ArraysDisjoint);
        let inter = find_inter_loop_roots(&g, &vf);
        assert_eq!(inter.len(), 1, "one inter-loop tile expected");
        assert_eq!(inter[0].members.len(), 2);
        // Address forms are offset 0 + 2*cnt and 1 + 2*cnt.
        assert!(inter[0].addrs[0].contains("0 + 2*cnt"), "{:?}", inter[0].addrs);
        assert!(inter[0].addrs[1].contains("1 + 2*cnt"), "{:?}", inter[0].addrs);

        let outcome = vectorize_function(&vf, &cm, AliasPolicy::ArraysDisjoint);
        assert_eq!(outcome.report.fusions.len(), 1);
        let fused = outcome.report.fusions[0].1;
        let chosen = outcome
            .report
            .unroll
            .iter()
            .find(|(l, _, _)| *l == fused)
            .expect("fused loop planned");
        assert_eq!(chosen.1, 2, "unroll factor 2 expected: {:?}", outcome.report.unroll);
        // Fully packed body: a 4-lane store pack exists and selected packs
        // carry no movement glue.
        let store = outcome
            .packs
            .selected()
            .find(|p| matches!(p.shape, PackShape::Store { .. }))
            .expect("store pack");
        assert_eq!(store.lane_count(), 4);
        for p in outcome.packs.selected() {
            assert_eq!(p.cost.as_ref().unwrap().movement.elements(), 0);
        }
    }

    #[test]
    fn serial_recurrence_gets_factor_one() {
        let src = "
void f(i32 a[LENGTH], i32 LENGTH) {
    for (i32 i = 1; i < LENGTH; i += 1) { a[i] = a[i - 1] + 1; }
}";
        let vf = to_vir(src);
        let cm = CostModel::with_width(128);
        let outcome = vectorize_function(&vf, &cm, AliasPolicy::ArraysDisjoint);
        for (_, factor, _) in &outcome.report.unroll {
            assert_eq!(*factor, 1, "{:?}", outcome.report.unroll);
        }
        assert_eq!(outcome.packs.selected().count(), 0);
    }

    #[test]
    fn opcode_mismatch_packs_stores_but_not_values() {
        // Lanes computing + and - cannot form one arithmetic pack; the
        // stores still pack with gathered values.
        let src = "
void f(i32 a[4], i32 b[4], i32 c[4]) {
    c[0] = a[0] + b[0];
    c[1] = a[1] - b[1];
}";
        let vf = to_vir(src);
        let cm = CostModel::with_width(128);
        let g = build_dep_graph(&vf, AliasPolicy::ArraysDisjoint);
        let index = VirIndex::build(&vf);
        let layer = g.layer(LayerKey::Root);
        let mut grower = Grower::new(&vf, &index, layer, LayerKey::Root, &cm);
        let members: Vec<DepNodeId> = layer.roots.clone();
        let pid = grower.grow_root(&members).expect("store pack grows");
        let pack = &grower.packs[pid.0 as usize];
        // Value position fell back to gather glue.
        assert!(matches!(pack.operands[0], OperandPack::Gather(_)));
    }

    #[test]
    fn grown_packs_pass_brute_force_independence_and_isomorphism() {
        for src in [FIG6, FIG3, "
void f(i32 color[4], i32 hexValue) {
    color[0] = hexValue >> 24;
    color[1] = (hexValue >> 16) & 255;
    color[2] = (hexValue >> 8) & 255;
    color[3] = hexValue & 255;
}"] {
            let vf = to_vir(src);
            let cm = CostModel::with_width(128);
            let outcome = vectorize_function(&vf, &cm, AliasPolicy::ArraysDisjoint);
            let g = &outcome.graph;
            for p in outcome.packs.selected() {
                let layer = g.layer(p.layer);
                let nodes: Vec<DepNodeId> =
                    p.lanes.iter().filter_map(|l| l.node).collect();
                for (i, a) in nodes.iter().enumerate() {
                    for b in &nodes[i + 1..] {
                        assert!(
                            !layer.reaches(*a, *b) && !layer.reaches(*b, *a),
                            "pack {} members depend on each other",
                            p.id
                        );
                    }
                }
                // Isomorphism: every real lane's shape equals the pack's.
                let list = layer_list(&outcome.vf, p.layer);
                for n in &nodes {
                    let entry = layer.node(*n).entry_index().unwrap();
                    let Item::Instr(instr) = &list[entry].item else { panic!() };
                    let shape_ok = match (&p.shape, &instr.kind) {
                        (PackShape::Bin { op, .. }, VirInstrKind::Bin { op: o, .. }) => op == o,
                        (PackShape::Store { array, .. }, VirInstrKind::Store { array: a, .. }) => array == a,
                        (PackShape::Load { array, .. }, VirInstrKind::Load { array: a, .. }) => array == a,
                        (PackShape::Un { op, .. }, VirInstrKind::Un { op: o, .. }) => op == o,
                        (PackShape::Cast { to }, VirInstrKind::Cast { to: t, .. }) => to == t,
                        (PackShape::Select { .. }, VirInstrKind::Select { .. }) => true,
                        _ => false,
                    };
                    assert!(shape_ok, "lane shape mismatch in pack {}", p.id);
                }
            }
        }
    }

    #[test]
    fn fused_function_still_matches_oracle() {
        // Fusion + unroll materialization preserves semantics (VIR eval).
        let prog = typecheck(&parse(FIG3).unwrap()).unwrap();
        let decl = prog.kernels().next().unwrap().clone();
        let vf = to_vir(FIG3);
        let cm = CostModel::with_width(128);
        let outcome = vectorize_function(&vf, &cm, AliasPolicy::ArraysDisjoint);
        outcome.vf.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let env = random_env(&decl, &mut rng);
            let want = run_ast(&prog, "f", &env).unwrap();
            let got = run_vir(&outcome.vf, &env).unwrap();
            assert!(want.bits_eq(&got), "fused/unrolled VIR diverged");
        }
    }

    #[test]
    fn plan_matches_exhaustive_candidate_argmin() {
        for src in [
            FIG3,
            "void f(i32 a[LENGTH], i32 b[LENGTH], i32 LENGTH) {
                for (i32 i = 0; i < LENGTH; i++) { a[i] = a[i] * b[i]; }
            }",
        ] {
            let vf = to_vir(src);
            let cm = CostModel::with_width(128);
            let outcome = vectorize_function(&vf, &cm, AliasPolicy::ArraysDisjoint);
            for (l, factor, cands) in &outcome.report.unroll {
                // Independent argmin over the recorded candidates.
                let best = cands
                    .iter()
                    .filter(|(_, c)| *c < 0)
                    .min_by_key(|(f, c)| (*c, std::cmp::Reverse(*f)))
                    .map(|(f, _)| *f)
                    .unwrap_or(1);
                assert_eq!(*factor, best, "loop {l}");
            }
        }
    }
}
