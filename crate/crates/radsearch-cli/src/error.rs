//! CLI error kinds with stable exit codes and machine-parsable reporting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 no path / mission abort,
//! 4 file format or I/O error. Errors print one JSON object to stderr.

use radsearch_core::geo::GeoError;
use radsearch_core::planner::PlanError;
use radsearch_core::radiation::RadiationError;
use radsearch_core::segmentation::SegError;
use radsearch_core::survey::SurveyError;
use radsearch_core::ugvsim::SimError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    NoPath(String),
    #[error("{0}")]
    Format(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NoPath(_) => 3,
            CliError::Format(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::NoPath(_) => "no_path",
            CliError::Format(_) => "format",
        }
    }

    /// Print the error as a single JSON line on stderr.
    pub fn emit(&self) {
        #[derive(Serialize)]
        struct Body<'a> {
            code: i32,
            kind: &'a str,
            message: String,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        let w = Wrapper {
            error: Body {
                code: self.exit_code(),
                kind: self.kind(),
                message: self.to_string(),
            },
        };
        eprintln!("{}", serde_json::to_string(&w).expect("serializable"));
    }
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        match e {
            GeoError::Parse { .. } | GeoError::Io { .. } => CliError::Format(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<RadiationError> for CliError {
    fn from(e: RadiationError) -> Self {
        match e {
            RadiationError::Parse { .. } | RadiationError::Io { .. } => {
                CliError::Format(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SurveyError> for CliError {
    fn from(e: SurveyError) -> Self {
        match e {
            SurveyError::Radiation(r) => r.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SegError> for CliError {
    fn from(e: SegError) -> Self {
        match e {
            SegError::Geo(g) => g.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::NoPath { .. } => CliError::NoPath(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Plan(p) => p.into(),
            SimError::Radiation(r) => r.into(),
            SimError::Io { .. } => CliError::Format(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Format(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Format(e.to_string())
    }
}
