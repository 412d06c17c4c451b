//! End-to-end orchestration: counting prompts, the remote counter, proposal
//! and embedding ingestion, matching and evaluation.

pub mod counter;
pub mod embed_http;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod mock;
pub mod prompt;
pub mod proposals;
pub mod run;
pub mod synthetic;

pub use counter::{
    count_objects, parse_count_response, AuditRecord, Counter, CounterClientConfig, CounterError, HttpCounter,
    ReplayCounter,
};
pub use error::{ErrorKind, PipelineError};
pub use eval::{evaluate_detections, EvalSettings, Evaluation};
pub use manifest::{ImageEntry, Manifest};
pub use prompt::{build_count_prompt, presets, PromptFormat, PromptSpec, Setting};
pub use proposals::ProposalConfig;
pub use run::{count_dataset, run_dataset, run_image, DatasetOutput, RunOptions, StageTiming};
