//! Reference executors and the differential-testing harness.
//!
//! [`run_ast`] executes the typed AST directly and is the semantic oracle.
//! [`run_lir`] executes compiled LIR (scalar or vectorized) and additionally
//! reports [`DynCounts`], the dynamic instruction counts used as the
//! performance proxy. [`diff_run`] drives both over seeded random
//! environments and reports the first divergence or the count ratios.

mod ast_run;
mod diff;
mod envgen;
mod lir_run;

pub use ast_run::run_ast;
pub use diff::{diff_run, mutate_one_opcode, DiffReport, TrialOutcome};
pub use envgen::{env_from_json, random_env, EnvFile, Expectation};
pub use lir_run::run_lir;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diag::Span;
use crate::types::{ConstVal, Scalar, TrapKind};

/// Argument buffers for one execution: named scalars and arrays, plus the
/// deterministic policies (extern seed, step limit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEnv {
    pub scalars: BTreeMap<String, ConstValJson>,
    pub arrays: BTreeMap<String, ArrayVal>,
    /// Seed for deterministic extern-call results.
    pub extern_seed: u64,
    /// Execution traps with [`TrapKind::StepLimit`] beyond this many steps.
    pub max_steps: u64,
}

impl Default for RunEnv {
    fn default() -> Self {
        RunEnv {
            scalars: BTreeMap::new(),
            arrays: BTreeMap::new(),
            extern_seed: 0,
            max_steps: 200_000_000,
        }
    }
}

impl RunEnv {
    pub fn scalar(&self, name: &str) -> Option<ConstVal> {
        self.scalars.get(name).map(|c| c.0)
    }

    pub fn set_scalar(&mut self, name: &str, v: ConstVal) {
        self.scalars.insert(name.to_string(), ConstValJson(v));
    }
}

/// `ConstVal` with a plain JSON representation (a bare number).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstValJson(pub ConstVal);

impl Serialize for ConstValJson {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            ConstVal::I32(v) => s.serialize_i32(v),
            ConstVal::F32(v) => s.serialize_f32(v),
            ConstVal::Bool(b) => s.serialize_bool(b),
        }
    }
}

impl<'de> Deserialize<'de> for ConstValJson {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::Bool(b) => Ok(ConstValJson(ConstVal::Bool(*b))),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(ConstValJson(ConstVal::I32(i as i32)))
                } else {
                    Ok(ConstValJson(ConstVal::F32(n.as_f64().unwrap_or(0.0) as f32)))
                }
            }
            _ => Err(serde::de::Error::custom("expected a number or bool")),
        }
    }
}

/// An array argument buffer. Lengths are fixed for a run; out-of-bounds
/// access traps rather than wrapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArrayVal {
    I32(Vec<i32>),
    F32(Vec<f32>),
}

impl ArrayVal {
    pub fn len(&self) -> usize {
        match self {
            ArrayVal::I32(v) => v.len(),
            ArrayVal::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem_ty(&self) -> Scalar {
        match self {
            ArrayVal::I32(_) => Scalar::I32,
            ArrayVal::F32(_) => Scalar::F32,
        }
    }

    pub fn get(&self, i: usize) -> Option<ConstVal> {
        match self {
            ArrayVal::I32(v) => v.get(i).map(|x| ConstVal::I32(*x)),
            ArrayVal::F32(v) => v.get(i).map(|x| ConstVal::F32(*x)),
        }
    }

    pub fn set(&mut self, i: usize, val: ConstVal) -> bool {
        match (self, val) {
            (ArrayVal::I32(v), ConstVal::I32(x)) if i < v.len() => {
                v[i] = x;
                true
            }
            (ArrayVal::F32(v), ConstVal::F32(x)) if i < v.len() => {
                v[i] = x;
                true
            }
            _ => false,
        }
    }

    /// Bit-exact equality (f32 compared by bit pattern).
    pub fn bits_eq(&self, other: &ArrayVal) -> bool {
        match (self, other) {
            (ArrayVal::I32(a), ArrayVal::I32(b)) => a == b,
            (ArrayVal::F32(a), ArrayVal::F32(b)) => {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// Observable result of one execution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub ret: Option<ConstValJson>,
    pub arrays: BTreeMap<String, ArrayVal>,
}

impl RunOutput {
    pub fn bits_eq(&self, other: &RunOutput) -> bool {
        let ret_eq = match (&self.ret, &other.ret) {
            (None, None) => true,
            (Some(a), Some(b)) => match (a.0, b.0) {
                (ConstVal::F32(x), ConstVal::F32(y)) => x.to_bits() == y.to_bits(),
                (x, y) => x == y,
            },
            _ => false,
        };
        ret_eq
            && self.arrays.len() == other.arrays.len()
            && self
                .arrays
                .iter()
                .zip(&other.arrays)
                .all(|((an, av), (bn, bv))| an == bn && av.bits_eq(bv))
    }
}

/// A runtime trap: deterministic, carries the kind and a source location
/// when one is known.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("trap at {span}: {kind}")]
pub struct Trap {
    pub kind: TrapKind,
    pub span: Span,
}

impl Trap {
    pub fn new(kind: TrapKind, span: Span) -> Trap {
        Trap { kind, span }
    }

    pub fn internal(msg: impl Into<String>) -> Trap {
        Trap {
            kind: TrapKind::Internal(msg.into()),
            span: Span::default(),
        }
    }

    /// A trap kind without a source location.
    pub fn internal_kind(kind: TrapKind) -> Trap {
        Trap {
            kind,
            span: Span::default(),
        }
    }
}

/// Dynamic instruction counts by class. `total` covers every executed
/// instruction; `loop_iters` meters taken back edges and is tracked
/// separately (those branches are already in `branches`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynCounts {
    pub scalar_arith: u64,
    pub scalar_mem: u64,
    pub vector_arith: u64,
    pub vector_mem: u64,
    pub movement: u64,
    pub branches: u64,
    pub loop_iters: u64,
}

impl DynCounts {
    pub fn total(&self) -> u64 {
        self.scalar_arith
            + self.scalar_mem
            + self.vector_arith
            + self.vector_mem
            + self.movement
            + self.branches
    }

    /// Instructions that do the kernel's work, excluding control flow.
    /// This is the count criterion comparisons use for loop bodies.
    pub fn work(&self) -> u64 {
        self.scalar_arith + self.scalar_mem + self.vector_arith + self.vector_mem + self.movement
    }
}

/// A runtime value in the executors: a scalar, a vector of lane values, or
/// a boolean mask.
#[derive(Debug, Clone, PartialEq)]
pub enum MachineVal {
    Scalar(ConstVal),
    Vector(Vec<ConstVal>),
    Mask(Vec<bool>),
}

impl MachineVal {
    pub fn as_scalar(&self) -> Option<ConstVal> {
        match self {
            MachineVal::Scalar(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[ConstVal]> {
        match self {
            MachineVal::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_mask(&self) -> Option<&[bool]> {
        match self {
            MachineVal::Mask(m) => Some(m),
            _ => None,
        }
    }
}

/// Deterministic result for a call to an extern function: a pure hash of
/// the callee name, the argument bits, and the environment seed. Every
/// executor shares this definition, so semantics-preserving transformations
/// keep call results stable.
pub fn extern_result(
    name: &str,
    args: &[ConstVal],
    seed: u64,
    ret: Option<Scalar>,
) -> Option<ConstVal> {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x1000_0001_b3);
    let mut mix = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    };
    for b in name.bytes() {
        mix(b);
    }
    for a in args {
        let bits: u32 = match a {
            ConstVal::I32(v) => *v as u32,
            ConstVal::F32(v) => v.to_bits(),
            ConstVal::Bool(b) => *b as u32,
        };
        for b in bits.to_le_bytes() {
            mix(b);
        }
    }
    match ret {
        None => None,
        Some(Scalar::I32) => Some(ConstVal::I32(h as i32)),
        Some(Scalar::Bool) => Some(ConstVal::Bool(h & 1 == 1)),
        // A small exact value so f32 arithmetic downstream stays tame.
        Some(Scalar::F32) => Some(ConstVal::F32((h % 2001) as f32 - 1000.0)),
    }
}
