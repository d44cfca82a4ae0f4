//! 2-D weakly compressible SPH for granular intrusion.
//!
//! Simulates a rigid robot leg sweeping through a bed of granular material
//! (μ(I) rheology, δ-SPH density diffusion, dynamic boundary particles) and
//! records the horizontal/vertical force per unit depth on the leg as a
//! function of leg angle. The engine is fully deterministic for a fixed
//! configuration: one seeded RNG stream is used only for the initial lattice
//! jitter, and all reductions run in fixed index order.

pub mod config;
pub mod dynamics;
pub mod engine;
pub mod geometry;
pub mod kernel;
pub mod neighbors;
pub mod particles;

pub use config::{
    DomainConfig, HipReference, KinematicSchedule, LegGeometry, MaterialParams, Morphology,
    ScenarioConfig, SphConfig,
};
pub use engine::{run_leg_rotation, RawSample, RunDiagnostics, RunOutput, Simulation};
pub use particles::{ParticleKind, Particles};

use crate::trace::TraceError;

/// Simulation failures.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    /// A particle state stopped being finite (NaN/Inf) — the step size or
    /// configuration is numerically unstable.
    #[error("non-finite {quantity} for particle {particle} at step {step}")]
    NumericalBlowup {
        step: u64,
        particle: usize,
        quantity: &'static str,
    },
    /// Particle speeds exceeded the blow-up guard (far beyond any speed the
    /// kinematics can impart), indicating the terrain exploded.
    #[error("terrain blow-up at step {step}: max |v| = {max_abs_velocity:.3} exceeds {limit:.3}")]
    TerrainBlowup {
        step: u64,
        max_abs_velocity: f64,
        limit: f64,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
}
