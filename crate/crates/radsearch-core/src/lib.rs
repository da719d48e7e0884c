//! Simulation and planning library for autonomous radiation-search missions.
//!
//! The library covers the full pipeline on synthetic scenes: boustrophedon
//! aerial survey with a simulated gamma detector ([`survey`], [`radiation`]),
//! stereo back-projection of disparity images ([`stereo`]), DEM-refined
//! semantic label rasters ([`segmentation`]), segmentation-weighted A* path
//! planning over distance fields ([`planner`]), and a UGV mission executor
//! with LiDAR obstacle detection, global-map updates, replanning, dwell
//! measurements and retrace return ([`ugvsim`]).
//!
//! All randomness flows through an explicit, owned RNG stream so that a
//! fixed seed reproduces every measurement and mission log byte for byte.

// validations written as `!(x > 0.0)` are deliberate: NaN must fail them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geo;
pub mod planner;
pub mod radiation;
pub mod segmentation;
pub mod stereo;
pub mod survey;
pub mod ugvsim;

mod stats;

use rand::SeedableRng;

/// RNG used for every stochastic component. ChaCha12 is seedable, portable
/// and stream-stable across platforms, which the determinism contract needs.
pub type MissionRng = rand_chacha::ChaCha12Rng;

/// Build the mission RNG for a seed. All library entry points take an
/// explicit RNG; this is the one canonical way to construct it.
pub fn mission_rng(seed: u64) -> MissionRng {
    MissionRng::seed_from_u64(seed)
}
