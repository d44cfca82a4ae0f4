//! Force-trace containers and CSV/JSON I/O shared by the simulator, the
//! surrogate pipeline, and the assimilation filter.
//!
//! A [`ForceTrace`] holds the horizontal (drag/thrust) and vertical (lift)
//! reaction forces on the leg as functions of the leg angle θ. Forces are
//! reported per unit leg width (N/m) because the simulator is a 2-D
//! plane-strain model. The canonical on-disk format is a CSV with header
//! `theta_rad,fx_N_per_m,fz_N_per_m` plus an optional JSON metadata sidecar.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Behavior names in canonical order: index 0 = horizontal force,
/// index 1 = vertical force.
pub const BEHAVIOR_NAMES: [&str; 2] = ["fx", "fz"];

/// Canonical CSV header for trace files.
pub const TRACE_CSV_HEADER: &str = "theta_rad,fx_N_per_m,fz_N_per_m";

/// Lower end of the canonical leg-angle range (radians).
pub const THETA_MIN: f64 = -3.0 * PI / 4.0;
/// Upper end of the canonical leg-angle range (radians).
pub const THETA_MAX: f64 = 3.0 * PI / 4.0;

/// Errors produced by trace construction, interpolation, and I/O.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid trace: {0}")]
    Invalid(String),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("theta {theta} outside trace range [{lo}, {hi}]")]
    OutOfRange { theta: f64, lo: f64, hi: f64 },
}

/// A force trace sampled on a strictly increasing θ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTrace {
    /// Leg angles in radians, strictly increasing.
    pub theta_rad: Vec<f64>,
    /// Horizontal force per unit width at each angle (N/m).
    pub fx_n_per_m: Vec<f64>,
    /// Vertical force per unit width at each angle (N/m).
    pub fz_n_per_m: Vec<f64>,
}

impl ForceTrace {
    /// Builds a trace, validating lengths, monotonicity, and finiteness.
    pub fn new(
        theta_rad: Vec<f64>,
        fx_n_per_m: Vec<f64>,
        fz_n_per_m: Vec<f64>,
    ) -> Result<Self, TraceError> {
        if theta_rad.len() != fx_n_per_m.len() || theta_rad.len() != fz_n_per_m.len() {
            return Err(TraceError::Invalid(format!(
                "column lengths differ: theta {}, fx {}, fz {}",
                theta_rad.len(),
                fx_n_per_m.len(),
                fz_n_per_m.len()
            )));
        }
        for w in theta_rad.windows(2) {
            if !(w[1] > w[0]) {
                return Err(TraceError::Invalid(format!(
                    "theta grid not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        for (name, col) in [
            ("theta_rad", &theta_rad),
            ("fx_N_per_m", &fx_n_per_m),
            ("fz_N_per_m", &fz_n_per_m),
        ] {
            if let Some(idx) = col.iter().position(|v| !v.is_finite()) {
                return Err(TraceError::Invalid(format!(
                    "non-finite value in column {name} at row {idx}"
                )));
            }
        }
        Ok(Self { theta_rad, fx_n_per_m, fz_n_per_m })
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.theta_rad.len()
    }

    /// True when the trace has no samples.
    pub fn is_empty(&self) -> bool {
        self.theta_rad.is_empty()
    }

    /// Force column for a behavior index (0 = fx, 1 = fz).
    pub fn behavior(&self, b: usize) -> &[f64] {
        match b {
            0 => &self.fx_n_per_m,
            1 => &self.fz_n_per_m,
            _ => panic!("behavior index {b} out of range (0..2)"),
        }
    }

    /// Linear interpolation of one behavior at an arbitrary angle.
    ///
    /// Angles within a small tolerance outside the grid (1e-9 of the span)
    /// are clamped to the nearest end; anything further out is rejected.
    pub fn value_at(&self, behavior: usize, theta: f64) -> Result<f64, TraceError> {
        let t = &self.theta_rad;
        if t.is_empty() {
            return Err(TraceError::Invalid("empty trace".into()));
        }
        let vals = self.behavior(behavior);
        if t.len() == 1 {
            return if (theta - t[0]).abs() <= 1e-12 {
                Ok(vals[0])
            } else {
                Err(TraceError::OutOfRange { theta, lo: t[0], hi: t[0] })
            };
        }
        let lo = t[0];
        let hi = *t.last().unwrap();
        let slack = 1e-9 * (hi - lo).max(1e-12);
        if theta < lo - slack || theta > hi + slack {
            return Err(TraceError::OutOfRange { theta, lo, hi });
        }
        let x = theta.clamp(lo, hi);
        // Index of the segment [t[k], t[k+1]] containing x.
        let k = match t.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(t.len() - 2),
            Err(i) => i.saturating_sub(1).min(t.len() - 2),
        };
        let w = (x - t[k]) / (t[k + 1] - t[k]);
        Ok(vals[k] * (1.0 - w) + vals[k + 1] * w)
    }

    /// Resamples both behaviors onto a new strictly increasing grid by
    /// linear interpolation. All grid points must lie within the trace range.
    pub fn resample(&self, grid: &[f64]) -> Result<ForceTrace, TraceError> {
        let mut fx = Vec::with_capacity(grid.len());
        let mut fz = Vec::with_capacity(grid.len());
        for &th in grid {
            fx.push(self.value_at(0, th)?);
            fz.push(self.value_at(1, th)?);
        }
        ForceTrace::new(grid.to_vec(), fx, fz)
    }

    /// Root-mean-square error per behavior against another trace on the
    /// same grid (grids must agree within 1e-9).
    pub fn rmse(&self, other: &ForceTrace) -> Result<[f64; 2], TraceError> {
        if self.len() != other.len() {
            return Err(TraceError::Invalid(format!(
                "grid lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self
            .theta_rad
            .iter()
            .zip(&other.theta_rad)
            .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(TraceError::Invalid("theta grids differ".into()));
        }
        let mut out = [0.0; 2];
        for (b, slot) in out.iter_mut().enumerate() {
            let (a, c) = (self.behavior(b), other.behavior(b));
            let ss: f64 = a.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum();
            *slot = (ss / self.len() as f64).sqrt();
        }
        Ok(out)
    }

    /// Serializes to the canonical CSV format. Float formatting uses the
    /// shortest representation that parses back to the identical bits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.len() + 1));
        out.push_str(TRACE_CSV_HEADER);
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.theta_rad[i], self.fx_n_per_m[i], self.fz_n_per_m[i]
            ));
        }
        out
    }

    /// Parses the canonical CSV format, reporting the offending line on error.
    pub fn from_csv(text: &str) -> Result<Self, TraceError> {
        let mut theta = Vec::new();
        let mut fx = Vec::new();
        let mut fz = Vec::new();
        let mut saw_header = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if !saw_header {
                if line != TRACE_CSV_HEADER {
                    return Err(TraceError::Csv {
                        line: lineno + 1,
                        message: format!(
                            "expected header `{TRACE_CSV_HEADER}`, found `{line}`"
                        ),
                    });
                }
                saw_header = true;
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| -> Result<f64, TraceError> {
                let f = fields.next().ok_or_else(|| TraceError::Csv {
                    line: lineno + 1,
                    message: format!("missing field {name}"),
                })?;
                f.trim().parse::<f64>().map_err(|e| TraceError::Csv {
                    line: lineno + 1,
                    message: format!("bad {name}: {e}"),
                })
            };
            theta.push(next("theta_rad")?);
            fx.push(next("fx_N_per_m")?);
            fz.push(next("fz_N_per_m")?);
            if fields.next().is_some() {
                return Err(TraceError::Csv {
                    line: lineno + 1,
                    message: "too many fields".into(),
                });
            }
        }
        if !saw_header {
            return Err(TraceError::Csv { line: 1, message: "empty file (no header)".into() });
        }
        ForceTrace::new(theta, fx, fz).map_err(|e| match e {
            TraceError::Invalid(m) => TraceError::Csv { line: 0, message: m },
            other => other,
        })
    }
}

/// Uniform θ grid of `n` points spanning the canonical range
/// `[-3π/4, 3π/4]` inclusive. Requires `n >= 2`.
pub fn uniform_theta_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2, "grid needs at least 2 points");
    let step = (THETA_MAX - THETA_MIN) / (n as f64 - 1.0);
    (0..n).map(|i| THETA_MIN + step * i as f64).collect()
}

/// Metadata sidecar describing a trace's provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub schema_version: String,
    /// Leg morphology name (`flat`, `c_leg`, `reversed_c`, `l_leg`, `reversed_l`).
    pub morphology: String,
    /// Foot-length fraction for the L-family (0 for others).
    pub fl: f64,
    /// Angular speed of the leg sweep (rad/s).
    pub omega_rad_per_s: f64,
    /// SHA-256 digest of the scenario configuration that produced the trace.
    pub config_digest: String,
    /// `simulation` or `experiment`.
    pub source: String,
}

impl TraceMetadata {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, TraceError> {
        let meta: TraceMetadata = serde_json::from_str(text)
            .map_err(|e| TraceError::Invalid(format!("metadata JSON: {e}")))?;
        if !crate::schema_compatible(&meta.schema_version) {
            return Err(TraceError::Invalid(format!(
                "unsupported metadata schema version {}",
                meta.schema_version
            )));
        }
        Ok(meta)
    }
}
