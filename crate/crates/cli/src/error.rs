use concept_coreset::bench::BenchError;
use concept_coreset::bottleneck::BottleneckError;
use concept_coreset::sampler::SelectError;
use concept_coreset::scorer::ScoreError;
use concept_coreset::tensor_io::FormatError;
use serde::Serialize;

/// Failures grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config, or inconsistent inputs (exit 1).
    #[error("{0}")]
    Config(String),
    /// Unreadable, unwritable, or malformed files (exit 2).
    #[error("{0}")]
    Io(String),
    /// The numerics failed (exit 3).
    #[error("{0}")]
    Numerical(String),
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorReport {
            error: self.kind(),
            code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("error report serializes")
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::OutOfRangeLabel { .. } | FormatError::Shape(_) => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<BottleneckError> for CliError {
    fn from(e: BottleneckError) -> Self {
        match e {
            BottleneckError::Format(f) => f.into(),
            BottleneckError::Json(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Format(f) => f.into(),
            ScoreError::NonFiniteLoss { .. } | ScoreError::EmptyTrajectory => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::Format(f) => f.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Format(f) => f.into(),
            BenchError::Bottleneck(b) => b.into(),
            BenchError::Score(s) => s.into(),
            BenchError::Select(s) => s.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
