//! The compilation driver: source through every stage to scalar and
//! vectorized LIR, plus the corpus checker.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::ast::Program;
use crate::costmodel::CostModel;
use crate::depgraph::{build_dep_graph, AliasPolicy, DepGraph};
use crate::diag::Diagnostics;
use crate::interp::{diff_run, DiffReport, TrialOutcome};
use crate::lir::{dump_lir, simplify_cfg, LirFunction};
use crate::lowering::lower;
use crate::packing::{dump_packs, vectorize_function, VectorizeOutcome};
use crate::parser::parse;
use crate::pretty::pretty_print;
use crate::sir::{analyze_iteration, build_sir, dump_sir, optimize_sir, to_ssa, SirFunction};
use crate::typeck::typecheck;
use crate::vecgen::{transform_function, VecFunction};
use crate::vir::{build_vir, dump_vir, BlockPredicates, VirFunction};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Vector register width in bits: 128, 256, or 512.
    pub vector_width: u32,
    pub vectorize: bool,
    pub cost_model: Option<CostModel>,
    pub alias: AliasPolicy,
    pub seed: u64,
    pub trials: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            vector_width: 256,
            vectorize: true,
            cost_model: None,
            alias: AliasPolicy::ArraysDisjoint,
            seed: 0,
            trials: 100,
        }
    }
}

impl PipelineConfig {
    pub fn cost_model(&self) -> CostModel {
        match &self.cost_model {
            Some(cm) => cm.clone(),
            None => CostModel::with_width(self.vector_width),
        }
    }
}

/// Dump stages exposed by the driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitStage {
    Ast,
    Sir,
    Vir,
    Depgraph,
    Packs,
    VirVec,
    Lir,
}

impl EmitStage {
    pub fn from_name(name: &str) -> Option<EmitStage> {
        Some(match name {
            "ast" => EmitStage::Ast,
            "sir" => EmitStage::Sir,
            "vir" => EmitStage::Vir,
            "depgraph" => EmitStage::Depgraph,
            "packs" => EmitStage::Packs,
            "vir-vec" => EmitStage::VirVec,
            "lir" => EmitStage::Lir,
            _ => return None,
        })
    }
}

/// Everything the pipeline produces for one kernel function.
pub struct CompiledKernel {
    pub name: String,
    pub sir: SirFunction,
    pub vir: VirFunction,
    pub block_preds: BlockPredicates,
    pub scalar_graph: DepGraph,
    pub scalar_lir: LirFunction,
    /// Planning and packing products (identity plan when vectorization is
    /// off).
    pub outcome: VectorizeOutcome,
    pub vec_fn: VecFunction,
    pub vec_lir: LirFunction,
}

pub struct Compilation {
    pub program: Program,
    pub kernels: Vec<CompiledKernel>,
}

/// Compile MiniC source through the full pipeline.
pub fn compile_source(source: &str, cfg: &PipelineConfig) -> Result<Compilation, Diagnostics> {
    let program = typecheck(&parse(source)?)?;
    let cm = cfg.cost_model();
    let sirs = build_sir(&program)?;
    let mut kernels = Vec::new();
    for mut sir in sirs {
        to_ssa(&mut sir);
        optimize_sir(&mut sir);
        analyze_iteration(&mut sir);
        let (vir, block_preds) = build_vir(&sir);
        let scalar_graph = build_dep_graph(&vir, cfg.alias);
        let mut scalar_lir = lower(&vir);
        simplify_cfg(&mut scalar_lir);

        let outcome = if cfg.vectorize {
            vectorize_function(&vir, &cm, cfg.alias)
        } else {
            VectorizeOutcome {
                vf: vir.clone(),
                graph: build_dep_graph(&vir, cfg.alias),
                packs: crate::packing::PackSet::default(),
                report: Default::default(),
            }
        };
        let vec_fn = transform_function(&outcome.vf, &outcome.graph, &outcome.packs, &cm)
            .map_err(|e| {
                Diagnostics(vec![crate::diag::Diagnostic::unsupported(
                    Default::default(),
                    format!("internal: vector generation failed: {e}"),
                )])
            })?;
        let mut vec_lir = lower(&vec_fn.func);
        simplify_cfg(&mut vec_lir);

        kernels.push(CompiledKernel {
            name: sir.name.clone(),
            sir,
            vir,
            block_preds,
            scalar_graph,
            scalar_lir,
            outcome,
            vec_fn,
            vec_lir,
        });
    }
    Ok(Compilation { program, kernels })
}

impl Compilation {
    pub fn kernel(&self, name: &str) -> Option<&CompiledKernel> {
        self.kernels.iter().find(|k| k.name == name)
    }

    /// Render one stage's dump across all kernels.
    pub fn emit(&self, stage: EmitStage) -> String {
        match stage {
            EmitStage::Ast => pretty_print(&self.program),
            EmitStage::Sir => self
                .kernels
                .iter()
                .map(|k| dump_sir(&k.sir))
                .collect::<Vec<_>>()
                .join("\n"),
            EmitStage::Vir => self
                .kernels
                .iter()
                .map(|k| dump_vir(&k.vir))
                .collect::<Vec<_>>()
                .join("\n"),
            EmitStage::Depgraph => self
                .kernels
                .iter()
                .map(|k| crate::depgraph::dump_dot(&k.scalar_graph, &k.vir))
                .collect::<Vec<_>>()
                .join("\n"),
            EmitStage::Packs => self
                .kernels
                .iter()
                .map(|k| format!("kernel {}\n{}", k.name, dump_packs(&k.outcome, &k.vir)))
                .collect::<Vec<_>>()
                .join("\n"),
            EmitStage::VirVec => self
                .kernels
                .iter()
                .map(|k| dump_vir(&k.vec_fn.func))
                .collect::<Vec<_>>()
                .join("\n"),
            EmitStage::Lir => self
                .kernels
                .iter()
                .map(|k| {
                    format!(
                        "; scalar\n{}\n; vectorized\n{}",
                        dump_lir(&k.scalar_lir),
                        dump_lir(&k.vec_lir)
                    )
                })
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }
}

/// One kernel's verdict in a corpus check.
#[derive(Debug, Clone, Serialize)]
pub struct KernelCheck {
    pub file: String,
    pub function: String,
    pub equivalent: bool,
    pub report: DiffReport,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct CheckSummary {
    pub kernels: Vec<KernelCheck>,
    pub all_equivalent: bool,
}

impl CheckSummary {
    pub fn human(&self) -> String {
        let mut out = String::new();
        for k in &self.kernels {
            out.push_str(&k.report.human());
            out.push('\n');
        }
        out.push_str(if self.all_equivalent {
            "all kernels equivalent\n"
        } else {
            "DIVERGENCE detected\n"
        });
        out
    }
}

/// Compile and differentially test every `.minic` file in a directory.
pub fn check_dir(dir: &Path, cfg: &PipelineConfig) -> Result<CheckSummary, String> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "minic"))
        .collect();
    files.sort();
    let mut summary = CheckSummary {
        kernels: Vec::new(),
        all_equivalent: true,
    };
    for file in files {
        let source = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
        let comp = compile_source(&source, cfg).map_err(|e| format!("{}: {e}", file.display()))?;
        for k in &comp.kernels {
            let report = diff_run(
                &comp.program,
                &k.name,
                &k.scalar_lir,
                &k.vec_lir,
                cfg.trials,
                cfg.seed,
            );
            let equivalent = matches!(report.outcome, TrialOutcome::Equivalent);
            summary.all_equivalent &= equivalent;
            summary.kernels.push(KernelCheck {
                file: file.file_name().unwrap().to_string_lossy().into_owned(),
                function: k.name.clone(),
                equivalent,
                report,
            });
        }
    }
    Ok(summary)
}

/// Machine-readable summary row schema used by tests and tooling.
pub fn summary_json(summary: &CheckSummary) -> String {
    #[derive(Serialize)]
    struct Row<'a> {
        file: &'a str,
        function: &'a str,
        equivalent: bool,
        trials: u32,
        vector_scalar_total_ratio: f64,
        vector_scalar_work_ratio: f64,
        scalar_counts: &'a crate::interp::DynCounts,
        vector_counts: &'a crate::interp::DynCounts,
    }
    let rows: Vec<Row> = summary
        .kernels
        .iter()
        .map(|k| Row {
            file: &k.file,
            function: &k.function,
            equivalent: k.equivalent,
            trials: k.report.trials,
            vector_scalar_total_ratio: k.report.total_ratio,
            vector_scalar_work_ratio: k.report.work_ratio,
            scalar_counts: &k.report.scalar_counts,
            vector_counts: &k.report.vector_counts,
        })
        .collect();
    let doc = serde_json::json!({
        "all_equivalent": summary.all_equivalent,
        "kernels": rows,
    });
    serde_json::to_string_pretty(&doc).unwrap()
}

/// Per-block predicate tables for verification, keyed by kernel.
pub fn block_predicates(comp: &Compilation) -> BTreeMap<String, &BlockPredicates> {
    comp.kernels
        .iter()
        .map(|k| (k.name.clone(), &k.block_preds))
        .collect()
}

/// Soundness validators over one compiled kernel: pack independence,
/// memory-order preservation in the emitted code, CFG well-formedness,
/// and the address-enumeration cross-check for constant-trip loops.
pub fn verify_kernel(k: &CompiledKernel) -> Result<(), String> {
    // Pack independence: no member of an instruction pack transitively
    // depends on another.
    for p in k.outcome.packs.selected() {
        let layer = k.outcome.graph.layer(p.layer);
        let nodes: Vec<crate::depgraph::DepNodeId> =
            p.lanes.iter().filter_map(|l| l.node).collect();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if layer.reaches(*a, *b) || layer.reaches(*b, *a) {
                    return Err(format!(
                        "{}: pack {} lanes are interdependent",
                        k.name, p.id
                    ));
                }
            }
        }
    }

    // Emission respects every input memory edge.
    crate::vecgen::check_memory_order(&k.outcome.graph, &k.vec_fn)
        .map_err(|e| format!("{}: {e}", k.name))?;

    // CFG well-formedness of both LIR artifacts.
    k.scalar_lir
        .validate()
        .map_err(|e| format!("{}: scalar lir: {e}", k.name))?;
    k.vec_lir
        .validate()
        .map_err(|e| format!("{}: vector lir: {e}", k.name))?;

    // Generated VIR re-validates.
    k.vec_fn
        .func
        .validate()
        .map_err(|e| format!("{}: vectorized vir: {e}", k.name))?;

    // Memory disambiguation vs address enumeration for loops with constant
    // trip counts <= 64: an Independent verdict must mean disjoint.
    verify_disambiguation(&k.vir)?;
    verify_disambiguation(&k.outcome.vf)?;
    Ok(())
}

fn verify_disambiguation(vf: &VirFunction) -> Result<(), String> {
    use crate::depgraph::{cnt_form, mem_dependence, operand_form, MemAccess, MemVerdict, VirIndex};
    use crate::vir::{Item, VirInstrKind};

    let index = VirIndex::build(vf);
    let registry = vf.loop_registry();
    // Collect (loop trips, array, offset-const, stride, is_store) for every
    // reference whose loop has constant trips <= 64 and constant offsets.
    let mut refs: Vec<(u64, usize, i64, i64, bool)> = Vec::new();
    for l in registry.values() {
        let Some(it) = &l.iterator else { continue };
        let Some(trips) = it.const_trips() else { continue };
        if trips == 0 || trips > 64 {
            continue;
        }
        for e in &l.body {
            if let Item::Instr(instr) = &e.item {
                let (array, iop, is_store) = match &instr.kind {
                    VirInstrKind::Load { array, index, .. } => (*array, *index, false),
                    VirInstrKind::Store { array, index, .. } => (*array, *index, true),
                    _ => continue,
                };
                let Some(form) = operand_form(iop, &index, 0) else { continue };
                let Some((offset, stride)) = cnt_form(&form, l, &index) else { continue };
                let Some(off) = offset.as_const() else { continue };
                refs.push((trips, array, off, stride, is_store));
            }
        }
    }
    for (i, a) in refs.iter().enumerate() {
        for b in refs.iter().skip(i) {
            let access = |r: &(u64, usize, i64, i64, bool)| MemAccess::Ref {
                array: r.1,
                is_store: r.4,
                cnt: Some((crate::affine::AffineExpr::constant(r.2), r.3)),
                trips: Some(r.0),
            };
            let verdict = mem_dependence(
                &access(a),
                &access(b),
                crate::depgraph::AliasPolicy::ArraysDisjoint,
            );
            if verdict == MemVerdict::Independent && (a.4 || b.4) && a.1 == b.1 {
                // Enumerate both address sets.
                let touched = |r: &(u64, usize, i64, i64, bool)| -> Vec<i64> {
                    (0..r.0 as i64).map(|x| r.2 + r.3 * x).collect()
                };
                let sa = touched(a);
                let sb = touched(b);
                if sa.iter().any(|x| sb.contains(x)) {
                    return Err(format!(
                        "unsound disambiguation: {a:?} vs {b:?} marked independent but overlap"
                    ));
                }
            }
        }
    }
    Ok(())
}
