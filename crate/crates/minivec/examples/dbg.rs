use minivec::pipeline::{compile_source, EmitStage, PipelineConfig};
use minivec::interp::{run_lir, RunEnv, ArrayVal};
use minivec::types::ConstVal;

fn main() {
    let gen = minivec::randprog::generate(136);
    println!("{}", gen.source);
    let cfg = PipelineConfig { vector_width: 128, ..Default::default() };
    let comp = compile_source(&gen.source, &cfg).unwrap();
    let k = &comp.kernels[0];
    let text = minivec::lir::dump_lir(&k.vec_lir);
    // find %r66 definition and uses
    for line in text.lines() {
        if line.contains("%r66") || line.contains("b0:") {
            println!("{line}");
        }
    }
    let mut env = RunEnv::default();
    env.arrays.insert("sa0".into(), ArrayVal::I32(vec![]));
    env.arrays.insert("ca0".into(), ArrayVal::I32((0..16).collect()));
    env.set_scalar("LENGTH", ConstVal::I32(0));
    env.set_scalar("s0", ConstVal::I32(1));
    env.set_scalar("s1", ConstVal::I32(2));
    match run_lir(&k.vec_lir, &env) {
        Ok(_) => println!("ok"),
        Err(t) => println!("trap: {t}"),
    }
    let _ = EmitStage::Lir;
}
