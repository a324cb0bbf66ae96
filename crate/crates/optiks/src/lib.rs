//! Gradient waveform design for MRI by direct optimization of the k-space
//! traversal speed profile.
//!
//! Given a geometric k-space trajectory (a curve, without timing), this crate
//! reparameterizes it by arc length, attaches a differentiable speed profile
//! `v(s)`, and descends on time-domain objectives: traversal duration, slew
//! and peripheral nerve stimulation barriers, mechanical resonance band
//! power, and acoustic transfer function weighted power. Hardware amplitude
//! and slew limits are enforced throughout. The result is a raster-time
//! gradient waveform that traverses the prescribed trajectory.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod generators;
pub mod geometry;
pub mod interp;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod pns;
pub mod solver;
pub mod spectral;
mod util;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Relative tolerance applied when checking a value against a hardware or
/// physiological limit: `value <= limit * (1 + LIMIT_TOLERANCE)` passes.
/// Shared by the solver's feasibility bookkeeping and [`analysis::verify_limits`]
/// so the two can never disagree.
pub const LIMIT_TOLERANCE: f64 = 1e-3;
