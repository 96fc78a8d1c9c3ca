//! Configuration, orchestration, caching, result files and the validation
//! suite behind the `wavespec` command-line tool.

pub mod cache;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod suite;

pub use cache::{Cache, CacheKey, CacheStatus, CODE_VERSION};
pub use config::{load_config, save_config, RunConfig, CACHE_ENV};
pub use pipeline::{run_pipeline, Artifacts, Check, Session, ValidationReport};
pub use suite::{run_dno_check, run_validation, SuiteOutcome};
