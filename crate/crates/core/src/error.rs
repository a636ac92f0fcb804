use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AflError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AflError {
    #[error("nothing to aggregate")]
    EmptyAggregate,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid label {0}: expected -1 or +1")]
    InvalidLabel(f64),

    #[error("divergence at {}step {step}: {detail}", context_prefix(*round, *client))]
    Divergence {
        round: Option<usize>,
        client: Option<usize>,
        step: usize,
        detail: String,
    },

    #[error("partition infeasible: {0}")]
    PartitionInfeasible(String),

    #[error("partition redraw budget exhausted after {0} attempts")]
    RedrawBudgetExhausted(usize),

    #[error("no power rating for client {0}")]
    MissingPower(usize),

    #[error("step size exceeds 1/(6LJI): lambda={lambda}, limit={limit}")]
    StepSizeTooLarge { lambda: f64, limit: f64 },

    #[error("trace lacks local iterates; rerun with iterate recording enabled")]
    MissingIterates,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn context_prefix(round: Option<usize>, client: Option<usize>) -> String {
    let mut s = String::new();
    if let Some(r) = round {
        s.push_str(&format!("round {r}, "));
    }
    if let Some(c) = client {
        s.push_str(&format!("client {c}, "));
    }
    s
}

impl AflError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AflError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AflError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Attach round/client context to a divergence raised by a local run.
    pub fn in_round(self, round: usize, client: usize) -> Self {
        match self {
            AflError::Divergence { step, detail, .. } => AflError::Divergence {
                round: Some(round),
                client: Some(client),
                step,
                detail,
            },
            other => other,
        }
    }
}
