//! Experiment harness: run configs, the canonical experiments, and CSV
//! emission.
//!
//! Every run is a pure function of its config: the resolved config is
//! copied into the output directory next to the results, and repeated runs
//! with the same config and seed produce bit-identical CSVs.

pub mod csv;

mod charlm;
mod influence;
mod stats;
mod verify;

pub use charlm::{cmd_char_lm, CharLmConfig, CharLmSummary, CorpusConfig};
pub use influence::{cmd_influence_balancing, InfluenceBalancingConfig, InfluenceBalancingSummary};
pub use stats::{cmd_schedule_stats, ScheduleStatsConfig, ScheduleStatsSummary};
pub use verify::{
    cmd_verify_unbiasedness, LegReport, ProbeSummary, SystemSpec, VerificationReport, VerifyCase,
    VerifyConfig,
};

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

/// How a completed run ended; maps onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Success,
    /// A statistical verification failed its threshold.
    VerificationFailed,
    /// Training terminated early on a divergence; partial traces were
    /// flushed.
    DivergenceTerminated,
}

impl RunOutcome {
    pub fn exit_code(self) -> i32 {
        match self {
            RunOutcome::Success => 0,
            RunOutcome::VerificationFailed => 2,
            RunOutcome::DivergenceTerminated => 3,
        }
    }
}

/// Loads a config file, or falls back to the built-in default when no path
/// is given. Unknown keys are rejected.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, HarnessError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Copies the resolved config into the output directory, wrapped with the
/// experiment name so the file is self-describing.
pub fn write_config_copy<T: Serialize>(
    out_dir: &Path,
    experiment: &str,
    config: &T,
) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir)?;
    let doc = serde_json::json!({
        "experiment": experiment,
        "settings": config,
    });
    let text =
        serde_json::to_string_pretty(&doc).map_err(|e| HarnessError::Config(e.to_string()))?;
    fs::write(out_dir.join("config.json"), text + "\n")?;
    Ok(())
}
