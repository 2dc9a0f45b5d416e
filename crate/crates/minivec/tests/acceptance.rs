//! Acceptance suite: one test per criterion, each printing a PASS line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).

use std::path::{Path, PathBuf};
use std::time::Instant;

use minivec::costmodel::{pack_cost, CostModel};
use minivec::depgraph::AliasPolicy;
use minivec::interp::{diff_run, random_env, run_ast, run_lir, ArrayVal, RunEnv, TrialOutcome};
use minivec::packing::{find_inter_loop_roots, OperandPack, PackShape, Rewrite};
use minivec::pipeline::{check_dir, compile_source, verify_kernel, PipelineConfig};
use minivec::predicate::{simplify_predicate, PredAtom, Predicate};
use minivec::types::{BinOp, ConstVal};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

fn read_kernel(name: &str) -> String {
    std::fs::read_to_string(corpus_dir().join(name)).expect("corpus file")
}

fn cfg(width: u32) -> PipelineConfig {
    PipelineConfig {
        vector_width: width,
        ..Default::default()
    }
}

fn pass(n: u32, what: &str) {
    println!("criterion {n}: PASS - {what}");
}

#[test]
fn criterion_1_differential_correctness() {
    let start = Instant::now();
    let summary = check_dir(&corpus_dir(), &PipelineConfig {
        trials: 100,
        seed: 0xACCE,
        ..Default::default()
    })
    .expect("corpus check runs");
    for k in &summary.kernels {
        assert!(
            matches!(k.report.outcome, TrialOutcome::Equivalent),
            "{}: {}",
            k.function,
            k.report.human()
        );
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "differential sweep took {elapsed:?}, budget is 60s"
    );
    pass(
        1,
        &format!(
            "{} kernels x 100 seeded environments bit-identical in {elapsed:?}",
            summary.kernels.len()
        ),
    );
}

#[test]
fn criterion_2_fig6_reproduction() {
    let src = read_kernel("fig6_shift_expand.minic");
    let comp = compile_source(&src, &cfg(128)).unwrap();
    let k = &comp.kernels[0];

    // One 4-lane pack covering all four stores.
    let store_packs: Vec<_> = k
        .outcome
        .packs
        .selected()
        .filter(|p| matches!(p.shape, PackShape::Store { .. }))
        .collect();
    assert_eq!(store_packs.len(), 1);
    assert_eq!(store_packs[0].lane_count(), 4);

    // Exactly one equivalence rewrite: the bare copy viewed as a shift by 0.
    let rewrites: Vec<&Rewrite> = k
        .outcome
        .packs
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

    // Zero movement penalty everywhere; store pack cost 1 - 4 + 0 = -3.
    let cm = CostModel::with_width(128);
    for p in k.outcome.packs.selected() {
        let info = p.cost.as_ref().unwrap();
        assert_eq!(info.movement.elements(), 0, "pack {} has glue", p.id);
    }
    assert_eq!(pack_cost(store_packs[0].cost.as_ref().unwrap(), &cm), -3);

    // Dynamic op count of the vectorized body <= 40% of scalar.
    let report = diff_run(&comp.program, "fig6", &k.scalar_lir, &k.vec_lir, 50, 7);
    assert!(matches!(report.outcome, TrialOutcome::Equivalent));
    assert!(
        report.work_ratio <= 0.40,
        "work ratio {} > 0.40",
        report.work_ratio
    );
    pass(
        2,
        &format!(
            "one 4-lane store pack, one `a[0] << 0` rewrite, cost -3, work ratio {:.3}",
            report.work_ratio
        ),
    );
}

#[test]
fn criterion_3_fig3_reproduction() {
    let src = read_kernel("fig3_even_odd.minic");
    let comp = compile_source(&src, &cfg(128)).unwrap();
    let k = &comp.kernels[0];

    // One inter-loop LLP root with the interleaved address forms.
    let vir = &k.vir;
    let g = minivec::depgraph::build_dep_graph(vir, AliasPolicy::ArraysDisjoint);
    let inter = find_inter_loop_roots(&g, vir);
    assert_eq!(inter.len(), 1);
    assert_eq!(inter[0].members.len(), 2);
    assert!(inter[0].addrs[0].contains("0 + 2*cnt"), "{:?}", inter[0].addrs);
    assert!(inter[0].addrs[1].contains("1 + 2*cnt"), "{:?}", inter[0].addrs);

    // Fusion happened, and the fused loop unrolled by exactly 2.
    assert_eq!(k.outcome.report.fusions.len(), 1);
    let fused = k.outcome.report.fusions[0].1;
    let (_, factor, _) = k
        .outcome
        .report
        .unroll
        .iter()
        .find(|(l, _, _)| *l == fused)
        .expect("fused loop planned");
    assert_eq!(*factor, 2);

    // Fully packed body: no vshuffle or vextract anywhere in the emitted
    // vector LIR.
    let lir_text = minivec::lir::dump_lir(&k.vec_lir);
    assert!(!lir_text.contains("vshuffle"), "{lir_text}");
    assert!(!lir_text.contains("vextract"), "{lir_text}");
    let report = diff_run(&comp.program, "fig3", &k.scalar_lir, &k.vec_lir, 50, 11);
    assert!(matches!(report.outcome, TrialOutcome::Equivalent));
    pass(
        3,
        &format!(
            "inter-loop root (0+2*cnt, 1+2*cnt), fused, factor 2, zero shuffles/extracts, work ratio {:.3}",
            report.work_ratio
        ),
    );
}

#[test]
fn criterion_4_fig9_reproduction() {
    let src = read_kernel("fig9_hex_unpack.minic");
    let comp = compile_source(&src, &cfg(128)).unwrap();
    let k = &comp.kernels[0];

    // All four byte extractions pack: a 4-lane store pack, a 4-lane `and`
    // pack with the range-proven mask reconstruction, and a 4-lane shift
    // pack with the shift-by-zero identity.
    let store = k
        .outcome
        .packs
        .selected()
        .find(|p| matches!(p.shape, PackShape::Store { .. }))
        .expect("store pack");
    assert_eq!(store.lane_count(), 4);
    let and_pack = k
        .outcome
        .packs
        .selected()
        .find(|p| matches!(p.shape, PackShape::Bin { op: BinOp::BitAnd, .. }))
        .expect("and pack");
    assert!(and_pack
        .lanes
        .iter()
        .any(|l| matches!(l.rewrite, Some(Rewrite::MaskAnd { mask: 255 }))));
    let shr_pack = k
        .outcome
        .packs
        .selected()
        .find(|p| matches!(p.shape, PackShape::Bin { op: BinOp::Shr, .. }))
        .expect("shift pack");
    assert!(shr_pack.lanes.iter().any(|l| matches!(
        l.rewrite,
        Some(Rewrite::NeutralRhs {
            op: BinOp::Shr,
            neutral: ConstVal::I32(0)
        })
    )));

    // 0x11223344 unpacks to its bytes, on both pipelines.
    let mut env = RunEnv::default();
    env.arrays
        .insert("color".into(), ArrayVal::I32(vec![0; 4]));
    env.set_scalar("hexValue", ConstVal::I32(0x11223344));
    let want = ArrayVal::I32(vec![0x11, 0x22, 0x33, 0x44]);
    let (scalar_out, _) = run_lir(&k.scalar_lir, &env).unwrap();
    let (vec_out, _) = run_lir(&k.vec_lir, &env).unwrap();
    assert!(scalar_out.arrays["color"].bits_eq(&want));
    assert!(vec_out.arrays["color"].bits_eq(&want));

    // And 1000 random words agree.
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let decl = comp.program.function("fig9").unwrap();
    for _ in 0..1000 {
        let env = random_env(decl, &mut rng);
        let oracle = run_ast(&comp.program, "fig9", &env).unwrap();
        let (v, _) = run_lir(&k.vec_lir, &env).unwrap();
        assert!(oracle.bits_eq(&v));
    }
    pass(4, "all four byte extractions packed (mask reconstructed), 1000-word agreement");
}

#[test]
fn criterion_5_predicate_calculator() {
    let mut merge_true_seen = false;
    for file in std::fs::read_dir(corpus_dir()).unwrap() {
        let path = file.unwrap().path();
        if path.extension().is_none_or(|e| e != "minic") {
            continue;
        }
        let src = std::fs::read_to_string(&path).unwrap();
        let comp = compile_source(&src, &cfg(256)).unwrap();
        for k in &comp.kernels {
            for (block, raw) in &k.block_preds.raw {
                let simplified = &k.block_preds.simplified[block];
                let atoms: Vec<PredAtom> = raw
                    .atoms()
                    .union(&simplified.atoms())
                    .copied()
                    .collect();
                if atoms.len() > 3 {
                    continue;
                }
                for bits in 0..(1u32 << atoms.len()) {
                    let assign = |a: PredAtom| {
                        let i = atoms.iter().position(|x| *x == a).unwrap();
                        bits & (1 << i) != 0
                    };
                    assert_eq!(
                        raw.eval(&assign),
                        simplified.eval(&assign),
                        "{}: block {block} raw vs simplified mismatch",
                        k.name
                    );
                }
                // The post-loop merge: a real disjunction collapsing to the
                // canonical True object.
                if !raw.atoms().is_empty() && simplify_predicate(raw) == Predicate::True {
                    assert_eq!(*simplified, Predicate::True);
                    merge_true_seen = true;
                }
            }
        }
    }
    assert!(merge_true_seen, "no post-loop merge simplified to true");
    pass(5, "all <=3-atom merge predicates truth-table-equivalent; post-loop merge is the literal True");
}

#[test]
fn criterion_6_fig2_reproduction() {
    let src = read_kernel("fig2_masked_add.minic");
    let comp = compile_source(&src, &cfg(128)).unwrap();
    let k = &comp.kernels[0];

    // The conditional lanes lower to a masked vector store (with the adds
    // speculated) rather than branches.
    let lir_text = minivec::lir::dump_lir(&k.vec_lir);
    assert!(
        lir_text.contains(", mask ") || lir_text.contains("vselect"),
        "no masked operation in:\n{lir_text}"
    );

    let decl = comp.program.function("fig2").unwrap();
    // All-true and all-false masks, then 98 random environments.
    for fill in [1i32, -1] {
        let mut env = RunEnv::default();
        let n = 19usize;
        env.arrays
            .insert("a".into(), ArrayVal::I32((0..n as i32).collect()));
        env.arrays
            .insert("b".into(), ArrayVal::I32((100..100 + n as i32).collect()));
        env.arrays
            .insert("c".into(), ArrayVal::I32(vec![fill; n]));
        env.set_scalar("LENGTH", ConstVal::I32(n as i32));
        let oracle = run_ast(&comp.program, "fig2", &env).unwrap();
        let (v, _) = run_lir(&k.vec_lir, &env).unwrap();
        assert!(oracle.bits_eq(&v), "mask fill {fill}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xF162);
    for _ in 0..98 {
        let env = random_env(decl, &mut rng);
        let oracle = run_ast(&comp.program, "fig2", &env).unwrap();
        let (v, _) = run_lir(&k.vec_lir, &env).unwrap();
        assert!(oracle.bits_eq(&v));
    }
    pass(6, "masked vector add via masked vstore; equivalent on all-true, all-false, and 98 random masks");
}

#[test]
fn criterion_7_soundness_suites() {
    // Corpus first.
    for file in std::fs::read_dir(corpus_dir()).unwrap() {
        let path = file.unwrap().path();
        if path.extension().is_none_or(|e| e != "minic") {
            continue;
        }
        let src = std::fs::read_to_string(&path).unwrap();
        for width in [128, 256, 512] {
            let comp = compile_source(&src, &cfg(width)).unwrap();
            for k in &comp.kernels {
                verify_kernel(k).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            }
        }
    }
    // 500 random programs.
    let mut rng = ChaCha8Rng::seed_from_u64(0x50d);
    for seed in 0..500u64 {
        let gen = minivec::randprog::generate(seed);
        let comp = compile_source(&gen.source, &cfg(128))
            .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", gen.source));
        for k in &comp.kernels {
            verify_kernel(k).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", gen.source));
            // A short differential run backs the validators.
            let decl = comp.program.function(&k.name).unwrap();
            for _ in 0..2 {
                let mut env = random_env(decl, &mut rng);
                env.max_steps = 4_000_000;
                let oracle = run_ast(&comp.program, &k.name, &env);
                let vec = run_lir(&k.vec_lir, &env);
                match (oracle, vec) {
                    (Ok(a), Ok((b, _))) => assert!(
                        a.bits_eq(&b),
                        "seed {seed}: outputs diverge\n{}",
                        gen.source
                    ),
                    (Err(a), Err(b)) => assert_eq!(a.kind, b.kind, "seed {seed}"),
                    (a, b) => panic!("seed {seed}: one side trapped: {a:?} {b:?}\n{}", gen.source),
                }
            }
        }
    }
    pass(7, "zero validator violations over corpus (3 widths) + 500 random programs");
}

#[test]
fn criterion_8_cost_plan_optimality() {
    // plan_unroll's factor equals the brute-force argmin over candidates,
    // re-derived with an independent evaluation pass.
    for file in std::fs::read_dir(corpus_dir()).unwrap() {
        let path = file.unwrap().path();
        if path.extension().is_none_or(|e| e != "minic") {
            continue;
        }
        let src = std::fs::read_to_string(&path).unwrap();
        let comp = compile_source(&src, &cfg(128)).unwrap();
        for k in &comp.kernels {
            for (loop_id, chosen, evaluated) in &k.outcome.report.unroll {
                let best = evaluated
                    .iter()
                    .filter(|(_, c)| *c < 0)
                    .min_by_key(|(f, c)| (*c, std::cmp::Reverse(*f)))
                    .map(|(f, _)| *f)
                    .unwrap_or(1);
                assert_eq!(chosen, &best, "{}: loop {loop_id}", k.name);
            }
        }
    }

    // --no-vectorize never changes observable outputs.
    let summary = check_dir(&corpus_dir(), &PipelineConfig {
        vectorize: false,
        trials: 25,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    assert!(summary.all_equivalent);
    for k in &summary.kernels {
        // With vectorization off the two pipelines are the same artifact.
        assert!((k.report.total_ratio - 1.0).abs() < 1e-9);
    }
    pass(8, "unroll factors equal brute-force argmin; --no-vectorize output identical");
}
