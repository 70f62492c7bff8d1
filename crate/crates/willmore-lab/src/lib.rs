//! Library half of the `willmore-lab` binary. The subcommand drivers live
//! here so integration tests can call them in-process; `main.rs` only parses
//! arguments and maps results to exit codes.

pub mod campaign;
pub mod driver;
pub mod inspect;
pub mod verify;

use willmore::io::IoError;

/// Process exit codes of the binary.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_SUITE_FAILURE: i32 = 3;

/// Failure of a subcommand, split by who is at fault: `Validation` means the
/// invocation or its inputs are wrong, `Runtime` means the work itself failed.
#[derive(Debug)]
pub enum LabError {
    Validation(String),
    Runtime(String),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Validation(_) => EXIT_VALIDATION,
            LabError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for LabError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabError::Validation(msg) => write!(f, "invalid input: {msg}"),
            LabError::Runtime(msg) => write!(f, "run failed: {msg}"),
        }
    }
}

impl std::error::Error for LabError {}

impl From<IoError> for LabError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Config(_)
            | IoError::BadParams(_)
            | IoError::NotFound(_)
            | IoError::SchemaMismatch(_) => LabError::Validation(e.to_string()),
            IoError::Io(_) | IoError::Mesh(_) | IoError::Ambient(_) => {
                LabError::Runtime(e.to_string())
            }
        }
    }
}

impl From<willmore::shape::ShapeError> for LabError {
    fn from(e: willmore::shape::ShapeError) -> Self {
        LabError::Runtime(e.to_string())
    }
}

impl From<willmore::ambient::AmbientError> for LabError {
    fn from(e: willmore::ambient::AmbientError) -> Self {
        LabError::Runtime(e.to_string())
    }
}

impl From<willmore::diagnostics::DiagnosticsError> for LabError {
    fn from(e: willmore::diagnostics::DiagnosticsError) -> Self {
        LabError::Runtime(e.to_string())
    }
}

/// Read and parse a config file, naming the path on any failure.
pub fn load_config(path: &std::path::Path) -> Result<willmore::io::RunConfig, LabError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        LabError::Validation(format!("cannot read config file '{}': {e}", path.display()))
    })?;
    willmore::io::parse_config(&text).map_err(LabError::from)
}
