use countseg_core::Error as CoreError;
use countseg_pipeline::{ErrorKind, PipelineError};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_REMOTE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(m: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: m.into(),
        }
    }

    pub fn input(m: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: m.into(),
        }
    }

    pub fn remote(m: impl Into<String>) -> Self {
        Failure {
            code: EXIT_REMOTE,
            message: m.into(),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::input(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.kind() {
            ErrorKind::Input => EXIT_INPUT,
            ErrorKind::Remote => EXIT_REMOTE,
            ErrorKind::Invariant => EXIT_INVARIANT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}
