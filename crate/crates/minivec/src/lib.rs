//! minivec: an auto-vectorizing compiler for the MiniC kernel language.
//!
//! The pipeline lowers MiniC source through two dedicated IRs and back to an
//! executable CFG form, vectorizing along the way:
//!
//! ```text
//! source --> AST --> SIR --> VIR --> packing/vecgen --> LIR
//!            (typed)  (structure    (flat, predicated,   (CFG, scalar +
//!                      tree + CFG)   layered code lists)  vector instrs)
//! ```
//!
//! - [`parser`] / [`typeck`] / [`pretty`]: the MiniC frontend.
//! - [`sir`]: structural IR — a structure tree over blocks plus a
//!   condition-annotated control-flow digraph, loops in canonical
//!   do-while form, SSA, and iteration-pattern analysis.
//! - [`vir`]: vectorization IR — flat code lists of (control predicate,
//!   iterator, item) entries with iota induction.
//! - [`depgraph`]: per-layer dependence graphs over VIR entries.
//! - [`packing`]: SLP/LLP root discovery, bottom-up pack growth,
//!   equivalence rewrites, loop fusion, and unroll planning.
//! - [`costmodel`]: pack profitability and unroll-factor costs.
//! - [`vecgen`]: root-driven transformation to a vector function.
//! - [`lowering`] / [`lir`]: control-flow-graph reconstruction.
//! - [`interp`]: reference executors for AST, VIR, and LIR with dynamic
//!   instruction counting and differential testing.
//! - [`pipeline`]: the driver tying the stages together.
//!
//! See the `examples/` directory for one runnable walkthrough per
//! capability, and the `minivec` binary for the `compile`/`run`/`check`/
//! `dump` command-line entry points.

pub mod affine;
pub mod ast;
pub mod costmodel;
pub mod depgraph;
pub mod diag;
pub mod interp;
pub mod lexer;
pub mod lir;
pub mod lowering;
pub mod packing;
pub mod parser;
pub mod pipeline;
pub mod predicate;
pub mod pretty;
pub mod randprog;
pub mod sir;
pub mod typeck;
pub mod vecgen;
pub mod types;
pub mod vir;

pub use diag::{Diagnostic, Diagnostics};
pub use parser::parse;
pub use pretty::pretty_print;
pub use typeck::typecheck;
