//! Experiment harness: flat-file config parsing, seeded multi-run
//! execution with CSV/JSON emission, and the canned experiment suites.

mod config;
mod drivers;
mod runner;
mod suites;

pub use config::{AgentSettings, ClipModeSetting, Experiment, RunConfig, UpdateRuleSetting};
pub use drivers::{run_seed, subseed, Budget, LogRow, SeedRun, SeedStats};
pub use runner::{run, run_with_parallelism, AggRow, RunRecord, AGGREGATE_CSV_HEADER, SEED_CSV_HEADER};
pub use suites::{suite_config, suite_names};
