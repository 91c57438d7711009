use std::fmt;

use emograph::corpus::CorpusError;
use emograph::emograph::GraphError;
use emograph::eval::EvalError;
use emograph::model::ModelError;

/// A configuration or usage problem detected before any work starts.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Maps an error chain to the process exit code: configuration and usage
/// problems are 1, numerical divergence is 3, everything touching input or
/// output data is 2.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            match e {
                ModelError::Divergence { .. } => return EXIT_DIVERGED,
                ModelError::Config(_) => return EXIT_CONFIG,
                _ => {}
            }
        }
        if let Some(GraphError::Mu(_) | GraphError::Weight(_)) = cause.downcast_ref::<GraphError>() {
            return EXIT_CONFIG;
        }
        if let Some(EvalError::Folds { .. }) = cause.downcast_ref::<EvalError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<CorpusError>() || cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_IO
}
