//! Control and replay logic for a sensor-driven salt spreader.
//!
//! The crate is organized around the path a reading takes through the
//! system:
//!
//! - [`telemetry`] — trace ingestion, causal moving-average filtering, and
//!   road-geometry conversions (grade ↔ incline angle, yaw rate → curvature).
//! - [`controller`] — the discharge-rate law: a base rate scaled by speed,
//!   pavement-temperature delta, grade, and yaw rate, with clamping, the
//!   blast override, and roadside-zone overrides.
//! - [`rfid`] — the 16-byte roadside tag frame (CRC-16 protected) and the
//!   reader state machine that turns tag reads plus distance traveled into
//!   the zone summary the controller consumes.
//! - [`simulation`] — deterministic route replay at fixed chainage steps,
//!   salt accounting, policy comparison, and synthetic route generation.
//! - [`analysis`] — accident binning along the route, rate-vs-accident
//!   correlation, and grid-search tuning of the geometry constants.
//!
//! Everything here is pure computation over in-memory values: no IO, no
//! clocks, no global state. The companion `spreader-cli` crate supplies file
//! formats on disk and the command-line front end. The crate builds without
//! the standard library (`default-features = false`; `alloc` is required),
//! which keeps it usable from an on-vehicle controller image.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_docs)]

extern crate alloc;

pub mod analysis;
pub mod controller;
mod math;
pub mod rfid;
pub mod simulation;
pub mod telemetry;

/// Feet per mile.
pub const FEET_PER_MILE: f64 = 5280.0;

/// Multiply by this to convert miles/hour to feet/second.
pub const MPH_TO_FPS: f64 = FEET_PER_MILE / 3600.0;
