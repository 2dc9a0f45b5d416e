//! Differential execution: scalar-AST oracle vs scalar LIR vs vector LIR.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ast::Program;
use crate::interp::{random_env, run_ast, run_lir, DynCounts, RunEnv, Trap};
use crate::lir::{LirFunction, LirInst};
use crate::types::{BinOp, TrapKind};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub enum TrialOutcome {
    Equivalent,
    Diverged {
        trial: u32,
        stage: String,
        detail: String,
    },
}

/// One kernel's differential report.
#[derive(Debug, Clone, Serialize)]
pub struct DiffReport {
    pub function: String,
    pub trials: u32,
    pub seed: u64,
    pub outcome: TrialOutcome,
    /// Sum of dynamic counts over all trials.
    pub scalar_counts: DynCounts,
    pub vector_counts: DynCounts,
    /// vector total / scalar total, in instructions.
    pub total_ratio: f64,
    /// vector work / scalar work (control flow excluded).
    pub work_ratio: f64,
}

impl DiffReport {
    pub fn human(&self) -> String {
        let verdict = match &self.outcome {
            TrialOutcome::Equivalent => "equivalent".to_string(),
            TrialOutcome::Diverged { trial, stage, detail } => {
                format!("DIVERGED at trial {trial} ({stage}): {detail}")
            }
        };
        format!(
            "{}: {} over {} trials (seed {}); dynamic ops vec/scalar total {:.3}, work {:.3}",
            self.function, verdict, self.trials, self.seed, self.total_ratio, self.work_ratio
        )
    }
}

enum RunResult {
    Out(crate::interp::RunOutput, DynCounts),
    Trapped(TrapKind),
}

fn run_stage_lir(lir: &LirFunction, env: &RunEnv) -> Result<RunResult, Trap> {
    match run_lir(lir, env) {
        Ok((out, counts)) => Ok(RunResult::Out(out, counts)),
        Err(t) => Ok(RunResult::Trapped(t.kind)),
    }
}

/// Run `trials` seeded random environments over the three artifacts and
/// report the first divergence or the count ratios. Identical seeds give
/// byte-identical reports.
pub fn diff_run(
    prog: &Program,
    fn_name: &str,
    scalar_lir: &LirFunction,
    vec_lir: &LirFunction,
    trials: u32,
    seed: u64,
) -> DiffReport {
    let decl = prog
        .function(fn_name)
        .expect("function exists")
        .clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scalar_counts = DynCounts::default();
    let mut vector_counts = DynCounts::default();
    let mut outcome = TrialOutcome::Equivalent;

    'trials: for trial in 0..trials {
        let mut env = random_env(&decl, &mut rng);
        env.max_steps = 50_000_000;
        let ast = match run_ast(prog, fn_name, &env) {
            Ok(out) => RunResult::Out(out, DynCounts::default()),
            Err(t) => RunResult::Trapped(t.kind),
        };
        let sc = run_stage_lir(scalar_lir, &env).expect("scalar run");
        let vc = run_stage_lir(vec_lir, &env).expect("vector run");

        for (stage, got) in [("scalar-lir", &sc), ("vector-lir", &vc)] {
            let agreed = match (&ast, got) {
                (RunResult::Out(a, _), RunResult::Out(b, _)) => a.bits_eq(b),
                (RunResult::Trapped(a), RunResult::Trapped(b)) => a == b,
                _ => false,
            };
            if !agreed {
                let detail = match (&ast, got) {
                    (RunResult::Out(a, _), RunResult::Out(b, _)) => {
                        format!("outputs differ: oracle {a:?} vs {b:?} (env {env:?})")
                    }
                    (RunResult::Trapped(a), RunResult::Trapped(b)) => {
                        format!("different traps: {a} vs {b}")
                    }
                    (RunResult::Trapped(a), RunResult::Out(b, _)) => {
                        format!("oracle trapped ({a}) but {stage} returned {b:?}")
                    }
                    (RunResult::Out(a, _), RunResult::Trapped(b)) => {
                        format!("{stage} trapped ({b}) but oracle returned {a:?}")
                    }
                };
                outcome = TrialOutcome::Diverged {
                    trial,
                    stage: stage.to_string(),
                    detail,
                };
                break 'trials;
            }
        }
        if let RunResult::Out(_, c) = sc {
            add(&mut scalar_counts, c);
        }
        if let RunResult::Out(_, c) = vc {
            add(&mut vector_counts, c);
        }
    }

    let ratio = |a: u64, b: u64| {
        if b == 0 {
            1.0
        } else {
            a as f64 / b as f64
        }
    };
    DiffReport {
        function: fn_name.to_string(),
        trials,
        seed,
        outcome,
        scalar_counts,
        vector_counts,
        total_ratio: ratio(vector_counts.total(), scalar_counts.total()),
        work_ratio: ratio(vector_counts.work(), scalar_counts.work()),
    }
}

fn add(acc: &mut DynCounts, c: DynCounts) {
    acc.scalar_arith += c.scalar_arith;
    acc.scalar_mem += c.scalar_mem;
    acc.vector_arith += c.vector_arith;
    acc.vector_mem += c.vector_mem;
    acc.movement += c.movement;
    acc.branches += c.branches;
    acc.loop_iters += c.loop_iters;
}

/// Flip one arithmetic opcode somewhere in the function — a mutation the
/// differential harness must catch.
pub fn mutate_one_opcode(lir: &LirFunction, seed: u64) -> Option<LirFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mutated = lir.clone();
    let mut sites: Vec<(usize, usize)> = Vec::new();
    for (bi, b) in mutated.blocks.iter().enumerate() {
        for (ii, inst) in b.instrs.iter().enumerate() {
            match inst {
                LirInst::Bin { op, .. } | LirInst::VBin { op, .. }
                    if matches!(op, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::BitXor) =>
                {
                    sites.push((bi, ii));
                }
                _ => {}
            }
        }
    }
    if sites.is_empty() {
        return None;
    }
    let (bi, ii) = sites[rng.gen_range(0..sites.len())];
    let flip = |op: BinOp| match op {
        BinOp::Add => BinOp::Sub,
        BinOp::Sub => BinOp::Add,
        BinOp::Mul => BinOp::Add,
        BinOp::BitXor => BinOp::BitOr,
        other => other,
    };
    match &mut mutated.blocks[bi].instrs[ii] {
        LirInst::Bin { op, .. } | LirInst::VBin { op, .. } => *op = flip(*op),
        _ => unreachable!(),
    }
    Some(mutated)
}
