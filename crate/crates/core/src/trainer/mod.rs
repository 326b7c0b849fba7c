//! Training protocol, learning-rate schedule and resumable multi-seed sweeps.

mod benchmark;
mod config;
mod run;
mod schedule;

pub use benchmark::{
    checkpoint_path, collect_results, read_run_result, result_path, run_benchmark, variant_dir, write_json_atomic,
    BenchmarkOptions,
};
pub use config::{TrainConfig, FLIPS_ONLY};
pub use run::{frozen_checksum, train, Environment, EpochRecord, FrozenChecksums, RunResult, TrainOptions};
pub use schedule::lr_at;
