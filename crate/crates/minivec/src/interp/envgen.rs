//! Environment construction: seeded random inputs and JSON env files.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ast::{ArrayLen, FunctionDecl, ParamType};
use crate::interp::{ArrayVal, ConstValJson, RunEnv};
use crate::types::{ConstVal, Scalar};

/// Lengths sampled for symbolic array-length parameters; skewed toward
/// small and boundary-ish values, including zero-trip.
const LENGTH_POOL: &[i32] = &[0, 1, 2, 3, 4, 5, 7, 8, 9, 12, 15, 16, 17, 24, 31, 32, 33, 48, 64];

/// Build a random environment matching `func`'s signature.
///
/// Scalars draw from the full i32 range, except array-length parameters,
/// which take the sampled array length. f32 values stay in a modest finite
/// range so differential comparisons exercise arithmetic rather than
/// overflow plumbing.
pub fn random_env(func: &FunctionDecl, rng: &mut impl Rng) -> RunEnv {
    let mut env = RunEnv::default();
    env.extern_seed = rng.gen();

    // One sampled length per length parameter, shared by its arrays.
    let mut lengths: BTreeMap<String, i32> = BTreeMap::new();
    for p in &func.params {
        if let ParamType::Array {
            len: ArrayLen::Param(l),
            ..
        } = &p.ty
        {
            if !lengths.contains_key(l) {
                let len = LENGTH_POOL[rng.gen_range(0..LENGTH_POOL.len())];
                lengths.insert(l.clone(), len);
            }
        }
    }

    for p in &func.params {
        match &p.ty {
            ParamType::Scalar(Scalar::I32) => {
                let v = match lengths.get(&p.name) {
                    Some(len) => *len,
                    None => rng.gen(),
                };
                env.set_scalar(&p.name, ConstVal::I32(v));
            }
            ParamType::Scalar(Scalar::F32) => {
                env.set_scalar(&p.name, ConstVal::F32(rng.gen_range(-1024.0..1024.0)));
            }
            ParamType::Scalar(Scalar::Bool) => {
                env.set_scalar(&p.name, ConstVal::Bool(rng.gen()));
            }
            ParamType::Array { elem, len } => {
                let n = match len {
                    ArrayLen::Const(n) => *n as usize,
                    ArrayLen::Param(l) => lengths[l] as usize,
                };
                let arr = match elem {
                    Scalar::F32 => {
                        ArrayVal::F32((0..n).map(|_| rng.gen_range(-1024.0..1024.0)).collect())
                    }
                    _ => ArrayVal::I32((0..n).map(|_| rng.gen()).collect()),
                };
                env.arrays.insert(p.name.clone(), arr);
            }
        }
    }
    env
}

/// On-disk environment file: `{ "args": {...}, "expect": {...}? }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvFile {
    pub args: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectation>,
}

/// Expected observable outputs, checked by `minivec run`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Expectation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r#return: Option<ConstValJson>,
    #[serde(flatten)]
    pub arrays: BTreeMap<String, ArrayVal>,
}

/// Resolve an env file against a function signature.
pub fn env_from_json(func: &FunctionDecl, file: &EnvFile) -> Result<RunEnv, String> {
    let mut env = RunEnv::default();
    for p in &func.params {
        let value = file
            .args
            .get(&p.name)
            .ok_or_else(|| format!("missing argument `{}`", p.name))?;
        match &p.ty {
            ParamType::Scalar(s) => {
                let v = scalar_from_json(*s, value)
                    .ok_or_else(|| format!("argument `{}` must be a {s}", p.name))?;
                env.set_scalar(&p.name, v);
            }
            ParamType::Array { elem, .. } => {
                let arr = array_from_json(*elem, value)
                    .ok_or_else(|| format!("argument `{}` must be an array of {elem}", p.name))?;
                env.arrays.insert(p.name.clone(), arr);
            }
        }
    }
    Ok(env)
}

fn scalar_from_json(ty: Scalar, v: &serde_json::Value) -> Option<ConstVal> {
    match ty {
        Scalar::I32 => v.as_i64().map(|x| ConstVal::I32(x as i32)),
        Scalar::F32 => v.as_f64().map(|x| ConstVal::F32(x as f32)),
        Scalar::Bool => v.as_bool().map(ConstVal::Bool),
    }
}

fn array_from_json(elem: Scalar, v: &serde_json::Value) -> Option<ArrayVal> {
    let items = v.as_array()?;
    match elem {
        Scalar::I32 => {
            let mut out = Vec::with_capacity(items.len());
            for it in items {
                out.push(it.as_i64()? as i32);
            }
            Some(ArrayVal::I32(out))
        }
        Scalar::F32 => {
            let mut out = Vec::with_capacity(items.len());
            for it in items {
                out.push(it.as_f64()? as f32);
            }
            Some(ArrayVal::F32(out))
        }
        Scalar::Bool => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::typeck::typecheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_env_matches_signature() {
        let prog = typecheck(
            &parse("void f(i32 a[LENGTH], f32 x, i32 LENGTH, i32 s) { a[0] = s; }").unwrap(),
        )
        .unwrap();
        let f = prog.function("f").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let env = random_env(f, &mut rng);
        let len = env.scalar("LENGTH").unwrap().as_i32().unwrap();
        assert_eq!(env.arrays["a"].len() as i32, len);
        assert!(env.scalar("x").is_some());
    }

    #[test]
    fn env_file_round_trips() {
        let prog =
            typecheck(&parse("void f(i32 a[LENGTH], i32 LENGTH) { a[0] = 1; }").unwrap()).unwrap();
        let f = prog.function("f").unwrap();
        let file: EnvFile =
            serde_json::from_str(r#"{ "args": { "a": [5, 6, 7], "LENGTH": 3 } }"#).unwrap();
        let env = env_from_json(f, &file).unwrap();
        assert_eq!(env.arrays["a"], ArrayVal::I32(vec![5, 6, 7]));
        assert_eq!(env.scalar("LENGTH"), Some(ConstVal::I32(3)));
    }
}
