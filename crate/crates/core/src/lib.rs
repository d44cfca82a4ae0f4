//! Prediction of granular drag and lift on rotating leg-like intruders.
//!
//! The crate combines four ingredients into one pipeline:
//!
//! 1. [`sim`] — a 2-D weakly-compressible SPH solver with a μ(I)
//!    granular rheology. A rigid leg profile is driven kinematically
//!    through a settled bed and the net reaction force on the leg is
//!    recorded as a function of the rotation angle.
//! 2. [`tensor`] — Tucker (higher-order SVD) compression of the
//!    resulting data cube `conditions × behaviors × angles` into a small
//!    core and per-mode orthonormal factors.
//! 3. [`gpr`] — Gaussian-process regression of the reduced coefficients
//!    over the condition parameters (e.g. rotation speed), giving smooth
//!    interpolation with calibrated uncertainty.
//! 4. [`ropf`] — a bootstrap particle filter operating directly on the
//!    reduced coefficients, so sparse force measurements from an actual
//!    run can correct the surrogate on the fly.
//!
//! [`pipeline`] wires these together (ingest → train → predict /
//! cross-validate / assimilate / scaling analysis) and defines the
//! on-disk formats used by the `granterra` CLI.
//!
//! Determinism: every stochastic routine takes an explicit seed and uses
//! a counter-based generator, and all floating-point reductions run in a
//! fixed order, so repeated runs are bit-identical on the same target.

pub mod gpr;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod ropf;
pub mod sim;
pub mod tensor;
pub mod trace;

/// Schema tag written into every JSON artifact produced by this crate.
/// Readers reject files whose major version does not match.
pub const SCHEMA_VERSION: &str = "1.0";

/// Check a `schema_version` field read from disk against [`SCHEMA_VERSION`].
pub(crate) fn schema_compatible(found: &str) -> bool {
    let major = |s: &str| s.split('.').next().unwrap_or("").to_string();
    major(found) == major(SCHEMA_VERSION)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_version_major_match() {
        assert!(schema_compatible("1.0"));
        assert!(schema_compatible("1.7"));
        assert!(!schema_compatible("2.0"));
        assert!(!schema_compatible(""));
    }
}
