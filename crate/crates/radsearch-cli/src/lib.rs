//! Library surface of the `radsearch` binary: configuration, scene
//! synthesis, command implementations and report rendering. The binary is a
//! thin argument-parsing shell over these modules so the integration tests
//! can drive them directly.

pub mod commands;
pub mod config;
pub mod error;
pub mod scene;
pub mod svg;

/// Version line covering the binary and the file schemas it emits.
pub const VERSION_LINE: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (schemas: scene/1 measurements-csv/1 captures-csv/1 analysis/1 refine/1 plan/1 mission-log/1 sim/1)"
);
