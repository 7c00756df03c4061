//! Command failures and their exit codes.

use std::fmt;

use hudcalib::Error;
use serde::Serialize;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// A failed command. Rendered on stderr as one JSON object per line:
/// `{"error":"vocabulary not found","detail":"...","exit":2}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliError {
    pub error: String,
    pub detail: String,
    pub exit: u8,
}

impl CliError {
    pub fn usage(error: impl Into<String>, detail: impl fmt::Display) -> Self {
        Self {
            error: error.into(),
            detail: detail.to_string(),
            exit: EXIT_USAGE,
        }
    }

    pub fn internal(error: impl Into<String>, detail: impl fmt::Display) -> Self {
        Self {
            error: error.into(),
            detail: detail.to_string(),
            exit: EXIT_INTERNAL,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self)
            .unwrap_or_else(|_| format!("{{\"error\":\"{}\",\"exit\":{}}}", self.error, self.exit))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.error, self.detail)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Ingest(e) => CliError::usage("invalid input", e),
            Error::Hud(e) => CliError::usage("invalid input", e),
            Error::Metrics(e) => CliError::usage("evaluation failed", e),
            Error::Calibrate(e) => CliError::usage("calibration failed", e),
            Error::Synth(e) => CliError::usage("invalid synth spec", e),
            Error::Report(e) => CliError::internal("report failed", e),
            Error::Io(e) => CliError::internal("io error", e),
        }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        }
    )*};
}

via_core!(
    hudcalib::ingest::IngestError,
    hudcalib::hud::HudError,
    hudcalib::metrics::MetricsError,
    hudcalib::calibrate::CalibrateError,
    hudcalib::synth::SynthError,
    hudcalib::report::ReportError,
    std::io::Error
);
