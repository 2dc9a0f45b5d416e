//! Command-line driver: compile, run, check, and dump MiniC kernels.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use minivec::costmodel::CostModel;
use minivec::depgraph::AliasPolicy;
use minivec::interp::{env_from_json, run_lir, EnvFile};
use minivec::pipeline::{
    check_dir, compile_source, summary_json, Compilation, EmitStage, PipelineConfig,
};

#[derive(Parser)]
#[command(
    name = "minivec",
    about = "Auto-vectorizing compiler for the MiniC kernel language",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Vector register width in bits.
    #[arg(long, default_value_t = 256, value_parser = parse_width)]
    vector_width: u32,
    /// Disable vectorization (scalar pipeline only).
    #[arg(long)]
    no_vectorize: bool,
    /// Cost table file (TOML or JSON).
    #[arg(long)]
    cost_model: Option<PathBuf>,
    /// Treat cross-array references as possibly aliasing.
    #[arg(long)]
    assume_may_alias: bool,
}

fn parse_width(s: &str) -> Result<u32, String> {
    let v: u32 = s.parse().map_err(|_| "expected a number".to_string())?;
    if [128, 256, 512].contains(&v) {
        Ok(v)
    } else {
        Err("vector width must be 128, 256, or 512".into())
    }
}

impl CommonOpts {
    fn config(&self) -> Result<PipelineConfig> {
        let cost_model = match &self.cost_model {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Some(CostModel::from_table_text(&text).map_err(|e| anyhow::anyhow!(e))?)
            }
            None => None,
        };
        Ok(PipelineConfig {
            vector_width: self.vector_width,
            vectorize: !self.no_vectorize,
            cost_model,
            alias: if self.assume_may_alias {
                AliasPolicy::MayAlias
            } else {
                AliasPolicy::ArraysDisjoint
            },
            ..Default::default()
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compile a kernel file; optionally write a stage dump.
    Compile {
        file: PathBuf,
        /// Stage to emit: ast|sir|vir|depgraph|packs|vir-vec|lir.
        #[arg(long)]
        emit: Option<String>,
        /// Output path (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Execute a kernel with an environment file.
    Run {
        file: PathBuf,
        /// JSON environment: { "args": {...}, "expect": {...}? }.
        #[arg(long)]
        env: PathBuf,
        /// Function to run (defaults to the only kernel).
        #[arg(long, name = "fn")]
        function: Option<String>,
        /// Emit the report as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Differentially test every kernel in a corpus directory.
    Check {
        dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit the summary as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Print a stage dump to stdout.
    Dump {
        file: PathBuf,
        /// Stage: ast|sir|vir|depgraph|packs|vir-vec|lir.
        #[arg(long)]
        emit: String,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn compile_file(file: &PathBuf, cfg: &PipelineConfig) -> Result<Compilation> {
    let source =
        std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    match compile_source(&source, cfg) {
        Ok(c) => Ok(c),
        Err(diags) => {
            for d in &diags.0 {
                eprintln!("{}: {d}", file.display());
            }
            bail!("compilation failed with {} diagnostic(s)", diags.0.len());
        }
    }
}

fn stage(name: &str) -> Result<EmitStage> {
    EmitStage::from_name(name)
        .ok_or_else(|| anyhow::anyhow!("unknown stage `{name}` (ast|sir|vir|depgraph|packs|vir-vec|lir)"))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Compile {
            file,
            emit,
            output,
            common,
        } => {
            let cfg = common.config()?;
            let comp = compile_file(&file, &cfg)?;
            let text = match emit {
                Some(name) => comp.emit(stage(&name)?),
                None => comp.emit(EmitStage::Lir),
            };
            match output {
                Some(path) => {
                    // Write atomically: temp file then rename.
                    let tmp = path.with_extension("tmp");
                    std::fs::write(&tmp, &text)?;
                    std::fs::rename(&tmp, &path)?;
                }
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Run {
            file,
            env,
            function,
            json,
            common,
        } => {
            let cfg = common.config()?;
            let comp = compile_file(&file, &cfg)?;
            let kernel = match &function {
                Some(name) => comp
                    .kernel(name)
                    .ok_or_else(|| anyhow::anyhow!("no kernel `{name}`"))?,
                None => {
                    if comp.kernels.len() != 1 {
                        bail!("file has {} kernels; pass --fn", comp.kernels.len());
                    }
                    &comp.kernels[0]
                }
            };
            let env_text = std::fs::read_to_string(&env)
                .with_context(|| format!("reading {}", env.display()))?;
            let env_file: EnvFile = serde_json::from_str(&env_text)?;
            let decl = comp.program.function(&kernel.name).unwrap();
            let run_env = env_from_json(decl, &env_file).map_err(|e| anyhow::anyhow!(e))?;
            let (out, counts) = run_lir(&kernel.vec_lir, &run_env)
                .map_err(|t| anyhow::anyhow!("trap: {t}"))?;

            let mut expect_ok = true;
            if let Some(expect) = &env_file.expect {
                if let Some(want_ret) = &expect.r#return {
                    expect_ok &= out.ret.as_ref() == Some(want_ret);
                }
                for (name, want) in &expect.arrays {
                    expect_ok &= out.arrays.get(name).is_some_and(|got| got.bits_eq(want));
                }
            }
            if json {
                let doc = serde_json::json!({
                    "function": kernel.name,
                    "output": out,
                    "counts": counts,
                    "expect_ok": env_file.expect.as_ref().map(|_| expect_ok),
                });
                println!("{}", serde_json::to_string_pretty(&doc)?);
            } else {
                if let Some(r) = &out.ret {
                    println!("return = {}", r.0);
                }
                for (name, arr) in &out.arrays {
                    println!("{name} = {}", serde_json::to_string(arr)?);
                }
                println!(
                    "counts: scalar-arith {} scalar-mem {} vector-arith {} vector-mem {} movement {} branches {} loop-iters {}",
                    counts.scalar_arith,
                    counts.scalar_mem,
                    counts.vector_arith,
                    counts.vector_mem,
                    counts.movement,
                    counts.branches,
                    counts.loop_iters
                );
                if env_file.expect.is_some() {
                    println!("expect: {}", if expect_ok { "ok" } else { "MISMATCH" });
                }
            }
            if !expect_ok {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::Check {
            dir,
            trials,
            seed,
            json,
            common,
        } => {
            let mut cfg = common.config()?;
            cfg.trials = trials;
            cfg.seed = seed;
            let summary = check_dir(&dir, &cfg).map_err(|e| anyhow::anyhow!(e))?;
            if json {
                println!("{}", summary_json(&summary));
            } else {
                print!("{}", summary.human());
            }
            if !summary.all_equivalent {
                std::process::exit(1);
            }
            Ok(())
        }
        Command::Dump { file, emit, common } => {
            let cfg = common.config()?;
            let comp = compile_file(&file, &cfg)?;
            print!("{}", comp.emit(stage(&emit)?));
            Ok(())
        }
    }
}
