//! Pack profitability: `Cost(p) = C_vector(p) - C_scalar(p) + penalty(p)`.
//!
//! The default table is deliberately flat — every scalar op costs 1, every
//! vector op costs 1 at any legal lane count, and data movement between
//! scalar and vector registers (insert, extract, broadcast, mask element)
//! costs 1 per element moved. That keeps pack costs auditable by hand and
//! lines up with the dynamic-instruction-count proxy the differential
//! harness reports. Tables can be overridden from a TOML or JSON file.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::types::{BinOp, Scalar, UnOp};

/// Operation classes the tables are keyed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Bin(BinOp),
    Un(UnOp),
    Cast,
    Select,
    Load,
    Store,
    Call,
}

impl OpKind {
    pub fn table_key(self) -> &'static str {
        match self {
            OpKind::Bin(op) => match op {
                BinOp::Add => "add",
                BinOp::Sub => "sub",
                BinOp::Mul => "mul",
                BinOp::Div => "div",
                BinOp::Rem => "rem",
                BinOp::Shl => "shl",
                BinOp::Shr => "shr",
                BinOp::BitAnd => "and",
                BinOp::BitOr => "or",
                BinOp::BitXor => "xor",
                BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => "cmp",
                BinOp::LogAnd => "and",
                BinOp::LogOr => "or",
            },
            OpKind::Un(op) => match op {
                UnOp::Neg => "neg",
                UnOp::Not => "not",
                UnOp::BitNot => "bitnot",
            },
            OpKind::Cast => "cast",
            OpKind::Select => "select",
            OpKind::Load => "load",
            OpKind::Store => "store",
            OpKind::Call => "call",
        }
    }
}

/// Movement glue a pack needs, counted in elements moved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Movement {
    /// Scalars broadcast into all lanes (one element moved each).
    pub broadcasts: u32,
    /// Scalars inserted into individual lanes.
    pub inserts: u32,
    /// Lanes extracted back for scalar consumers.
    pub extracts: u32,
    /// Mask elements built from scalar booleans.
    pub mask_elements: u32,
    /// Lanes rearranged by shuffles.
    pub shuffle_lanes: u32,
}

impl Movement {
    pub fn elements(&self) -> u32 {
        self.broadcasts + self.inserts + self.extracts + self.mask_elements + self.shuffle_lanes
    }

    pub fn add(&mut self, other: Movement) {
        self.broadcasts += other.broadcasts;
        self.inserts += other.inserts;
        self.extracts += other.extracts;
        self.mask_elements += other.mask_elements;
        self.shuffle_lanes += other.shuffle_lanes;
    }
}

/// What the cost formula needs to know about one pack.
#[derive(Debug, Clone)]
pub struct PackCostInfo {
    pub op: OpKind,
    pub lanes: u32,
    /// Original scalar instructions replaced, one per lane that existed
    /// before packing (equivalence-rewritten lanes contribute none).
    pub scalar_ops: Vec<OpKind>,
    pub movement: Movement,
}

#[derive(Debug, Clone)]
pub struct CostModel {
    pub register_bits: u32,
    scalar_default: i64,
    vector_default: i64,
    scalar_over: BTreeMap<String, i64>,
    vector_over: BTreeMap<String, i64>,
    movement_per_element: i64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            register_bits: 256,
            scalar_default: 1,
            vector_default: 1,
            scalar_over: BTreeMap::new(),
            vector_over: BTreeMap::new(),
            movement_per_element: 1,
        }
    }
}

impl CostModel {
    pub fn with_width(register_bits: u32) -> CostModel {
        CostModel {
            register_bits,
            ..Default::default()
        }
    }

    /// Lanes available for an element type.
    pub fn lanes_for(&self, elem: Scalar) -> u32 {
        (self.register_bits / elem.bits()).max(1)
    }

    pub fn scalar_cost(&self, op: OpKind) -> i64 {
        *self
            .scalar_over
            .get(op.table_key())
            .unwrap_or(&self.scalar_default)
    }

    pub fn vector_cost(&self, op: OpKind, _lanes: u32) -> i64 {
        *self
            .vector_over
            .get(op.table_key())
            .unwrap_or(&self.vector_default)
    }

    pub fn movement_cost(&self, m: Movement) -> i64 {
        m.elements() as i64 * self.movement_per_element
    }

    /// Load a table from TOML or JSON text.
    pub fn from_table_text(text: &str) -> Result<CostModel, String> {
        let table: CostTable = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        } else {
            toml::from_str(text).map_err(|e| e.to_string())?
        };
        let mut cm = CostModel::default();
        if let Some(bits) = table.register_bits {
            if ![128, 256, 512].contains(&bits) {
                return Err(format!("register_bits must be 128, 256, or 512, got {bits}"));
            }
            cm.register_bits = bits;
        }
        if let Some(s) = table.scalar {
            cm.scalar_default = s.default.unwrap_or(cm.scalar_default);
            cm.scalar_over = s.ops;
        }
        if let Some(v) = table.vector {
            cm.vector_default = v.default.unwrap_or(cm.vector_default);
            cm.vector_over = v.ops;
        }
        if let Some(m) = table.movement_per_element {
            cm.movement_per_element = m;
        }
        Ok(cm)
    }
}

#[derive(Debug, Deserialize)]
struct CostTable {
    register_bits: Option<u32>,
    scalar: Option<OpTable>,
    vector: Option<OpTable>,
    movement_per_element: Option<i64>,
}

#[derive(Debug, Deserialize)]
struct OpTable {
    default: Option<i64>,
    #[serde(flatten)]
    ops: BTreeMap<String, i64>,
}

/// `C_vector(p) - C_scalar(p) + penalty(p)`.
pub fn pack_cost(p: &PackCostInfo, cm: &CostModel) -> i64 {
    let vector = cm.vector_cost(p.op, p.lanes);
    let scalar: i64 = p.scalar_ops.iter().map(|op| cm.scalar_cost(*op)).sum();
    let penalty = cm.movement_cost(p.movement);
    vector - scalar + penalty
}

/// Transform only when the cost is strictly negative.
pub fn should_vectorize(p: &PackCostInfo, cm: &CostModel) -> bool {
    pack_cost(p, cm) < 0
}

/// `TotalCost = sum over selected packs of Cost(p)`.
pub fn total_cost<'a>(packs: impl IntoIterator<Item = &'a PackCostInfo>, cm: &CostModel) -> i64 {
    packs.into_iter().map(|p| pack_cost(p, cm)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn add_pack(lanes: u32, real_lanes: usize, movement: Movement) -> PackCostInfo {
        PackCostInfo {
            op: OpKind::Bin(BinOp::Add),
            lanes,
            scalar_ops: vec![OpKind::Bin(BinOp::Add); real_lanes],
            movement,
        }
    }

    #[test]
    fn four_lane_add_pack_costs_minus_three() {
        let cm = CostModel::default();
        let p = add_pack(4, 4, Movement::default());
        assert_eq!(pack_cost(&p, &cm), 1 - 4);
        assert!(should_vectorize(&p, &cm));
    }

    #[test]
    fn one_lane_pack_is_never_profitable() {
        let cm = CostModel::default();
        let p = add_pack(1, 1, Movement::default());
        assert_eq!(pack_cost(&p, &cm), 0);
        assert!(!should_vectorize(&p, &cm));
    }

    #[test]
    fn cost_zero_is_not_vectorized() {
        // Strictly less than zero per the selection rule.
        let cm = CostModel::default();
        let mut p = add_pack(4, 4, Movement::default());
        p.movement.inserts = 3;
        assert_eq!(pack_cost(&p, &cm), 0);
        assert!(!should_vectorize(&p, &cm));
    }

    #[test]
    fn glue_heavy_pack_rejected() {
        let cm = CostModel::default();
        let mut p = add_pack(4, 4, Movement::default());
        p.movement.inserts = 4;
        p.movement.extracts = 1;
        assert_eq!(pack_cost(&p, &cm), 2);
        assert!(!should_vectorize(&p, &cm));
    }

    #[test]
    fn totals_are_additive_and_empty_is_zero() {
        let cm = CostModel::default();
        assert_eq!(total_cost([], &cm), 0);
        let a = add_pack(4, 4, Movement::default());
        let b = add_pack(8, 8, Movement::default());
        assert_eq!(
            total_cost([&a, &b], &cm),
            pack_cost(&a, &cm) + pack_cost(&b, &cm)
        );
    }

    #[test]
    fn monotone_in_penalty() {
        let cm = CostModel::default();
        let mut prev = i64::MIN;
        for inserts in 0..10 {
            let mut p = add_pack(4, 4, Movement::default());
            p.movement.inserts = inserts;
            let c = pack_cost(&p, &cm);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn formula_matches_for_randomized_tables() {
        // The implementation must instantiate the formula exactly, whatever
        // the table says.
        let mut state = 0x1234_5678_9abc_def0u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) % 7) as i64
        };
        for _ in 0..200 {
            let mut cm = CostModel::default();
            cm.scalar_default = next();
            cm.vector_default = next();
            cm.movement_per_element = next();
            let lanes = 2 + (next() % 3) as u32 * 2;
            let real = (next() as usize) % (lanes as usize + 1);
            let movement = Movement {
                broadcasts: next() as u32,
                inserts: next() as u32,
                extracts: next() as u32,
                mask_elements: next() as u32,
                shuffle_lanes: next() as u32,
            };
            let p = add_pack(lanes, real, movement);
            let expect = cm.vector_cost(p.op, lanes)
                - (real as i64) * cm.scalar_default
                + (movement.elements() as i64) * cm.movement_per_element;
            assert_eq!(pack_cost(&p, &cm), expect);
        }
    }

    #[test]
    fn tables_load_from_toml_and_json() {
        let cm = CostModel::from_table_text(
            "register_bits = 128\nmovement_per_element = 2\n[scalar]\ndefault = 1\nmul = 3\n[vector]\ndefault = 1\n",
        )
        .unwrap();
        assert_eq!(cm.register_bits, 128);
        assert_eq!(cm.lanes_for(Scalar::I32), 4);
        assert_eq!(cm.scalar_cost(OpKind::Bin(BinOp::Mul)), 3);
        assert_eq!(cm.scalar_cost(OpKind::Bin(BinOp::Add)), 1);
        assert_eq!(
            cm.movement_cost(Movement {
                inserts: 3,
                ..Default::default()
            }),
            6
        );

        let cm = CostModel::from_table_text(r#"{ "register_bits": 512 }"#).unwrap();
        assert_eq!(cm.lanes_for(Scalar::I32), 16);
        assert!(CostModel::from_table_text("register_bits = 100").is_err());
    }
}
