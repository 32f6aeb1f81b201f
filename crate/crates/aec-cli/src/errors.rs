//! Error type and exit-code policy for the command-line tool.
//!
//! The process exit contract is: 0 success, 2 usage or configuration
//! problems (including missing upstream artifacts), 3 numerical failures
//! (non-finite gradients, degenerate fits, undefined calibrations). Anything
//! unexpected (I/O, serialization of our own artifacts) exits 1.

use aec_core::evalkit::EvalError;
use aec_core::grpo::GrpoError;
use aec_core::policy::PolicyError;
use aec_core::rewards::RewardError;
use aec_core::taskenv::TaskEnvError;
use aec_core::trainer::TrainerError;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_INTERNAL: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config file, missing upstream artifact. Exit 2.
    #[error("{0}")]
    Usage(String),
    /// The computation itself failed (non-finite values, degenerate data).
    /// Exit 3.
    #[error("{0}")]
    Numerical(String),
    /// Unexpected environment failure (I/O, serialization). Exit 1.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    /// A missing file another subcommand should have produced first.
    pub fn missing_artifact(path: &std::path::Path, hint: &str) -> Self {
        CliError::Usage(format!("missing artifact: {} ({hint})", path.display()))
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::Config(_)
            | TrainerError::InsufficientTasks { .. }
            | TrainerError::InsufficientValidationTasks { .. }
            | TrainerError::CheckpointFormat { .. } => CliError::Usage(e.to_string()),
            TrainerError::Grpo(g) => g.into(),
            TrainerError::Policy(p) => p.into(),
            TrainerError::Reward(r) => CliError::Usage(r.to_string()),
            TrainerError::Io(_) | TrainerError::Json(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<GrpoError> for CliError {
    fn from(e: GrpoError) -> Self {
        match e {
            GrpoError::NonFinite(_) => CliError::Numerical(e.to_string()),
            GrpoError::Policy(p) => p.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            // Bad axis definitions come from the config; index errors are bugs.
            PolicyError::Invalid(_) => CliError::Usage(e.to_string()),
            PolicyError::BinOutOfRange { .. } => CliError::Internal(e.to_string()),
        }
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TaskEnvError> for CliError {
    fn from(e: TaskEnvError) -> Self {
        match e {
            TaskEnvError::Io(_, _) | TaskEnvError::Serialize(_) => {
                CliError::Internal(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ZeroReferenceAccuracy
            | EvalError::ZeroReferenceTokens(_)
            | EvalError::TooFewPoints(_) => CliError::Numerical(e.to_string()),
            EvalError::Policy(p) => p.into(),
            EvalError::Io(io) => CliError::Internal(io.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(format!("artifact (de)serialization failed: {e}"))
    }
}
