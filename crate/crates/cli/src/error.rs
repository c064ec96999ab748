use thiserror::Error;

/// Failures raised by the CLI itself, on top of library errors.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("no eligible data: {0}")]
    Empty(String),
}

/// Exit-code contract: 0 ok, 2 config, 3 I/O, 4 empty result, 5 numeric.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => 2,
                CliError::Empty(_) => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<gapweight::Error>() {
            return library_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn library_code(e: &gapweight::Error) -> i32 {
    use gapweight::Error as E;
    match e {
        E::InvalidArgument(_) | E::UnknownName { .. } => 2,
        E::Io(_) | E::Csv(_) | E::Json(_) | E::Parse(_) | E::RejectedRecords { .. } | E::LengthMismatch { .. } => 3,
        E::InsufficientData(_) | E::SingleClass { .. } | E::ConflictingLabels(_) => 4,
        E::NonFinite(_) | E::UndefinedMetric(_) | E::BeatDetection(_) => 5,
        E::Fold { source, .. } => library_code(source),
    }
}
