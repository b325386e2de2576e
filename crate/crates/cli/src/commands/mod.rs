mod benchmark;
mod eval;
mod gen;
mod register;
mod weights;

pub use benchmark::{run_benchmark, write_benchmark_csv, BenchmarkRow};
pub use eval::{evaluate, run_eval, EvalReport, GroundTruthEntry, PredictionEntry};
pub use gen::run_gen;
pub use register::{
    run_register, write_register, CheckResult, InputSource, PairReport, RegisterOptions, RunReport, Timing,
};
pub use weights::{init_weights, inspect_weights, load_model, Layout, TensorShape};

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("output directory {}: {e}", dir.display())))
}
