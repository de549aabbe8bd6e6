//! Trajectory and phase-shift optimization for a UAV downlink assisted by an
//! intelligent omni-surface (IOS).
//!
//! The pipeline alternates closed-form phase alignment ([`phase`]) with
//! successive convex approximation of the trajectory ([`sca`]), whose convex
//! subproblems are solved by the in-crate barrier method in [`solver`].
//! [`schemes`] wraps this into the four evaluated schemes and [`harness`]
//! runs parameter sweeps and writes result files.

pub mod channel;
pub mod config;
pub mod error;
mod par;
pub mod harness;
pub mod oracle;
pub mod phase;
pub mod sca;
pub mod schemes;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
