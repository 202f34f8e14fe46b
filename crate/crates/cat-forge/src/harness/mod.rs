//! Run orchestration: the toy-world RL and SFT trainers, inference-time
//! synthesis and baseline evaluation, the G-sweep, run persistence, and the
//! pieces the CLI is built from.

pub mod config;
pub mod infer;
pub mod report;
pub mod trainer;

pub use config::{BackendConfig, BackendKind, Mode, RunConfig, SftConfig, ToyConfig};
pub use infer::{cat_infer, sweep_g, toy_infer, CatInferReport, SweepReport, ToyInferSummary};
pub use report::{sha256_hex, JsonlWriter, RunLogRecord};
pub use trainer::{train_cat_rl, train_cat_sft, SftReport, StepMetrics, TrainReport};
