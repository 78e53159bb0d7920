use promptforge::Error;

/// Failure of a command, carrying its exit code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A check ran and did not pass (exit 1).
    #[error("check failed: {0}")]
    Check(String),

    /// Bad flags, config values or missing inputs (exit 2).
    #[error("{0}")]
    Usage(String),

    /// The work itself failed (exit 3).
    #[error("{stage} failed: {source}")]
    Runtime {
        stage: &'static str,
        #[source]
        source: Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime { .. } => 3,
        }
    }
}

/// Attaches a stage name to library errors. Invalid settings are reported as
/// configuration errors regardless of where they surface.
pub fn at(stage: &'static str) -> impl FnOnce(Error) -> CliError {
    move |e| match e {
        Error::InvalidConfig(_)
        | Error::ScaleOutOfRange(_)
        | Error::BadClassCount(_)
        | Error::DegenerateSplit(_)
        | Error::EmptyKinds => CliError::Usage(format!("{stage}: {e}")),
        source => CliError::Runtime { stage, source },
    }
}
