//! Synthetic buggy-program benchmark: a mini imperative language, an
//! interpreter that records execution paths, fault injection, mutation, and
//! emission of complete `fl-dataset/v1` datasets.

pub mod bench;
pub mod dfg;
pub mod gen;
pub mod lang;

pub use bench::{generate_benchmark, is_tie_heavy, BenchmarkConfig};
pub use dfg::build_dfg;
pub use gen::{generate_program, inject_fault, FaultKind, FaultSpec};
pub use lang::{interpret, Crash, Execution, MiniProgram};
