use hud_core::error::HudError;
use thiserror::Error;

use crate::metrics::MetricsRecord;

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] HudError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch (file corrupted or truncated)")]
    Checksum,
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64, record: Box<MetricsRecord> },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
