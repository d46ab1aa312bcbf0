use std::fmt;
use std::path::Path;

use serde_json::json;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_EMPTY_GROUND_TRUTH: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad flags, unreadable files or malformed content.
    Input(String),
    /// An embedded check failed; carries the report that failed.
    Assertion {
        message: String,
        report: serde_json::Value,
    },
    /// No ground truth at the requested difficulty.
    EmptyGroundTruth(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Assertion { .. } => EXIT_ASSERTION,
            CliError::EmptyGroundTruth(_) => EXIT_EMPTY_GROUND_TRUTH,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Assertion { .. } => "assertion",
            CliError::EmptyGroundTruth(_) => "empty_ground_truth",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::EmptyGroundTruth(m) => m,
            CliError::Assertion { message, .. } => message,
        }
    }

    /// Machine-readable failure record, one line, sorted keys.
    pub fn to_json(&self) -> String {
        let mut v = json!({
            "error": {
                "code": self.exit_code(),
                "kind": self.kind(),
                "message": self.message(),
            }
        });
        if let CliError::Assertion { report, .. } = self {
            v["error"]["report"] = report.clone();
        }
        v.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Input error located in a file, `path:line: message` when the line is known.
pub fn in_file(path: &Path, line: Option<usize>, err: impl fmt::Display) -> CliError {
    match line {
        Some(l) => CliError::Input(format!("{}:{}: {}", path.display(), l, err)),
        None => CliError::Input(format!("{}: {}", path.display(), err)),
    }
}

pub fn core_in_file(path: &Path, err: mono3d::Error) -> CliError {
    let msg = err.to_string();
    match err.line() {
        Some(l) => {
            let rest = msg.strip_prefix(&format!("line {l}: ")).unwrap_or(&msg);
            in_file(path, Some(l), rest)
        }
        None => in_file(path, None, msg),
    }
}

pub fn io_error(path: &Path, err: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {}", path.display(), err))
}
