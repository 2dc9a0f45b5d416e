//! Seeded random MiniC kernel generator for soundness testing.
//!
//! Generated programs are in-bounds by construction: loop counters index
//! arrays declared with the loop's bound, straight-line stores use
//! constants under the declared length, and divisors are non-zero
//! constants. That keeps differential runs focused on transformation
//! correctness rather than trap plumbing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write;

pub struct GeneratedProgram {
    pub source: String,
    pub seed: u64,
}

/// Generate one random kernel.
pub fn generate(seed: u64) -> GeneratedProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Gen {
        rng: &mut rng,
        out: String::new(),
        var_counter: 0,
    };
    g.program();
    GeneratedProgram {
        source: g.out,
        seed,
    }
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    out: String,
    var_counter: u32,
}

const CONST_LEN: i64 = 16;

impl Gen<'_> {
    fn fresh(&mut self, base: &str) -> String {
        self.var_counter += 1;
        format!("{base}{}", self.var_counter)
    }

    fn program(&mut self) {
        // Parameters: a few i32 arrays (mixing symbolic and constant
        // lengths), a length, and one or two scalars.
        let n_sym = self.rng.gen_range(1..=3usize);
        let n_const = self.rng.gen_range(1..=2usize);
        let n_scalars = self.rng.gen_range(0..=2usize);
        let mut params: Vec<String> = Vec::new();
        let mut sym_arrays = Vec::new();
        let mut const_arrays = Vec::new();
        for i in 0..n_sym {
            let name = format!("sa{i}");
            params.push(format!("i32 {name}[LENGTH]"));
            sym_arrays.push(name);
        }
        for i in 0..n_const {
            let name = format!("ca{i}");
            params.push(format!("i32 {name}[{CONST_LEN}]"));
            const_arrays.push(name);
        }
        params.push("i32 LENGTH".to_string());
        let mut scalars = Vec::new();
        for i in 0..n_scalars {
            let name = format!("s{i}");
            params.push(format!("i32 {name}"));
            scalars.push(name);
        }

        let reduction = self.rng.gen_bool(0.25);
        let ret_ty = if reduction { "i32" } else { "void" };
        let _ = writeln!(self.out, "{} kernel({}) {{", ret_ty, params.join(", "));

        if reduction {
            let _ = writeln!(self.out, "    i32 acc = 0;");
        }

        let n_items = self.rng.gen_range(1..=3usize);
        for _ in 0..n_items {
            match self.rng.gen_range(0..6) {
                0 => self.straight_line_run(&const_arrays, &scalars),
                1 | 2 => self.simple_loop(&sym_arrays, &scalars, reduction),
                3 => self.const_loop(&const_arrays, &scalars),
                4 => self.guarded_loop(&sym_arrays, &scalars),
                _ => self.counter_while(&const_arrays, &scalars),
            }
        }

        if reduction {
            let arr = sym_arrays[0].clone();
            let _ = writeln!(
                self.out,
                "    for (i32 r = 0; r < LENGTH; r += 1) {{ acc += {arr}[r]; }}"
            );
            let _ = writeln!(self.out, "    return acc;");
        }
        let _ = writeln!(self.out, "}}");
    }

    /// A run of stores at constant addresses (SLP material).
    fn straight_line_run(&mut self, const_arrays: &[String], scalars: &[String]) {
        let dst = const_arrays[self.rng.gen_range(0..const_arrays.len())].clone();
        let src = const_arrays[self.rng.gen_range(0..const_arrays.len())].clone();
        let start = self.rng.gen_range(0..CONST_LEN - 6);
        let len = self.rng.gen_range(2..=5i64);
        for k in 0..len {
            let at = start + k;
            let e = self.expr(&format!("{src}[{at}]"), scalars, 2);
            let _ = writeln!(self.out, "    {dst}[{at}] = {e};");
        }
    }

    /// `for (i = 0; i < LENGTH; i += step)` over symbolic arrays.
    fn simple_loop(&mut self, sym_arrays: &[String], scalars: &[String], _red: bool) {
        let i = self.fresh("i");
        let step = *[1, 1, 1, 2].iter().nth(self.rng.gen_range(0..4)).unwrap();
        let dst = sym_arrays[self.rng.gen_range(0..sym_arrays.len())].clone();
        let src = sym_arrays[self.rng.gen_range(0..sym_arrays.len())].clone();
        let e = self.expr_with_index(&src, &i, scalars, 3);
        let _ = writeln!(
            self.out,
            "    for (i32 {i} = 0; {i} < LENGTH; {i} += {step}) {{ {dst}[{i}] = {e}; }}"
        );
    }

    /// Constant-bounded loop (trip count <= 16, enumeration-friendly).
    fn const_loop(&mut self, const_arrays: &[String], scalars: &[String]) {
        let i = self.fresh("k");
        let lo = self.rng.gen_range(0..4i64);
        let hi = self.rng.gen_range(lo + 1..=CONST_LEN);
        let step = if self.rng.gen_bool(0.3) && hi - lo >= 2 { 2 } else { 1 };
        let dst = const_arrays[self.rng.gen_range(0..const_arrays.len())].clone();
        let src = const_arrays[self.rng.gen_range(0..const_arrays.len())].clone();
        let e = self.expr_with_index(&src, &i, scalars, 2);
        let _ = writeln!(
            self.out,
            "    for (i32 {i} = {lo}; {i} < {hi}; {i} += {step}) {{ {dst}[{i}] = {e}; }}"
        );
    }

    /// Loop with a data-dependent guard (mask material).
    fn guarded_loop(&mut self, sym_arrays: &[String], scalars: &[String]) {
        let i = self.fresh("g");
        let dst = sym_arrays[self.rng.gen_range(0..sym_arrays.len())].clone();
        let cond_src = sym_arrays[self.rng.gen_range(0..sym_arrays.len())].clone();
        let src = sym_arrays[self.rng.gen_range(0..sym_arrays.len())].clone();
        let threshold = self.rng.gen_range(-4..=4);
        let e = self.expr_with_index(&src, &i, scalars, 2);
        let _ = writeln!(
            self.out,
            "    for (i32 {i} = 0; {i} < LENGTH; {i} += 1) {{ if ({cond_src}[{i}] > {threshold}) {{ {dst}[{i}] = {e}; }} }}"
        );
    }

    /// Bounded while loop over a constant-length array.
    fn counter_while(&mut self, const_arrays: &[String], scalars: &[String]) {
        let i = self.fresh("w");
        let dst = const_arrays[self.rng.gen_range(0..const_arrays.len())].clone();
        let bound = self.rng.gen_range(2..=CONST_LEN);
        let e = self.expr(&format!("{i} * 3"), scalars, 1);
        let _ = writeln!(
            self.out,
            "    i32 {i} = 0;\n    while ({i} < {bound}) {{ {dst}[{i}] = {e}; {i} += 1; }}"
        );
    }

    fn expr_with_index(&mut self, src: &str, i: &str, scalars: &[String], depth: u32) -> String {
        let base = format!("{src}[{i}]");
        let mut e = self.expr(&base, scalars, depth);
        if self.rng.gen_bool(0.3) {
            e = format!("{e} + {i}");
        }
        e
    }

    fn expr(&mut self, leaf: &str, scalars: &[String], depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return match self.rng.gen_range(0..4) {
                0 => leaf.to_string(),
                1 => format!("{}", self.rng.gen_range(-16..=16)),
                2 if !scalars.is_empty() => {
                    scalars[self.rng.gen_range(0..scalars.len())].clone()
                }
                _ => leaf.to_string(),
            };
        }
        let l = self.expr(leaf, scalars, depth - 1);
        let r = self.expr(leaf, scalars, depth - 1);
        match self.rng.gen_range(0..8) {
            0 => format!("({l} + {r})"),
            1 => format!("({l} - {r})"),
            2 => format!("({l} * {r})"),
            3 => format!("({l} & {r})"),
            4 => format!("({l} | {r})"),
            5 => format!("({l} ^ {r})"),
            6 => format!("({l} << {})", self.rng.gen_range(0..5)),
            _ => format!("({l} >> {})", self.rng.gen_range(0..5)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::typeck::typecheck;

    #[test]
    fn generated_programs_parse_and_typecheck() {
        for seed in 0..100 {
            let p = generate(seed);
            let parsed = parse(&p.source)
                .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", p.source));
            typecheck(&parsed)
                .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", p.source));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(7).source, generate(7).source);
    }
}
