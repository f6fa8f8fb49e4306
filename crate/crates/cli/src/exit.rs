use std::fmt;

use flexenv_core::error::Error as CoreError;

pub const OK: u8 = 0;
pub const CONFIG: u8 = 2;
pub const SOLVER: u8 = 3;
pub const IO: u8 = 4;

/// Invalid or inconsistent configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Some runs of a batch failed; their results are missing from the outputs.
#[derive(Debug)]
pub struct PartialFailure {
    pub failed: usize,
    pub total: usize,
    pub code: u8,
}

impl fmt::Display for PartialFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} runs failed", self.failed, self.total)
    }
}

impl std::error::Error for PartialFailure {}

/// Exit status of a core error.
pub fn core_code(e: &CoreError) -> u8 {
    match e {
        _ if e.is_solver_failure() => SOLVER,
        CoreError::Io(_) => IO,
        CoreError::Training { source, .. } => core_code(source),
        CoreError::UnstableModel { .. } | CoreError::NoConvergence { .. } | CoreError::InfeasibleBaseline { .. } => {
            SOLVER
        }
        _ => CONFIG,
    }
}

/// Exit status for an error, taken from the first classifiable cause.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(p) = cause.downcast_ref::<PartialFailure>() {
            return p.code;
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return IO;
        }
    }
    CONFIG
}
