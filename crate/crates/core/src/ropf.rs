//! Reduced-order particle filter: sequential Monte Carlo posterior inference
//! performed on the reduced (Tucker) coefficients of a force trace rather
//! than on the full trace.
//!
//! The filter state is the flattened coefficient vector α ∈ R^p with
//! p = r₂·r₃ (behavior rank × temporal rank) and flat index `j·r₃ + k`.
//! A sparse observation of behavior b at angle θ is linear in α:
//!
//! ```text
//! value ≈ h(θ, b)·α,   h[(j,k)] = V[b,j] · W̃_θ[k] · scale_b
//! ```
//!
//! where `W̃_θ` is the temporal factor matrix linearly interpolated at θ and
//! `scale_b` undoes the per-behavior normalization applied before the tensor
//! decomposition. Because the measurement operator is linear and all noise
//! is Gaussian, the exact posterior is available from a Kalman filter; the
//! test suite freezes Kalman oracles and requires the particle filter to
//! match them within Monte-Carlo error.
//!
//! Everything is driven by a single seeded ChaCha8 stream in a documented
//! draw order (particle-major, state-dimension-minor), so runs are
//! bit-identical for a fixed seed.

use crate::linalg::Matrix;
use crate::trace::ForceTrace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of particles.
pub const DEFAULT_N_PARTICLES: usize = 1000;
/// Default ESS fraction below which systematic resampling triggers.
pub const DEFAULT_ESS_THRESHOLD_FRACTION: f64 = 0.5;
/// Default process-noise scale as a fraction of the prior std per dimension.
pub const DEFAULT_PROCESS_NOISE_FRACTION: f64 = 0.05;

/// Errors from filter construction and execution.
#[derive(Debug, Error)]
pub enum RopfError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate ensemble: {0}")]
    Degenerate(String),
    #[error("observation csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("trace error: {0}")]
    Trace(#[from] crate::trace::TraceError),
}

/// A weighted particle ensemble over the reduced coefficients.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    /// N×p matrix; row i is particle i's coefficient vector.
    particles: Matrix,
    /// Normalized importance weights (sum 1 within 1e-12).
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// Number of particles.
    pub fn len(&self) -> usize {
        self.particles.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// State dimension p.
    pub fn state_dim(&self) -> usize {
        self.particles.cols()
    }

    /// Particle matrix (N×p).
    pub fn particles(&self) -> &Matrix {
        &self.particles
    }

    /// Importance weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted ensemble mean per dimension.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let p = self.state_dim();
        let mut mean = vec![0.0; p];
        for i in 0..self.len() {
            let w = self.weights[i];
            for (d, m) in mean.iter_mut().enumerate() {
                *m += w * self.particles.at(i, d);
            }
        }
        mean
    }

    /// Weighted ensemble variance per dimension (biased, i.e. normalized by
    /// the weight sum, matching the Kalman posterior covariance diagonal in
    /// the large-N limit).
    pub fn weighted_cov_diag(&self) -> Vec<f64> {
        let mean = self.weighted_mean();
        let p = self.state_dim();
        let mut var = vec![0.0; p];
        for i in 0..self.len() {
            let w = self.weights[i];
            for (d, v) in var.iter_mut().enumerate() {
                let r = self.particles.at(i, d) - mean[d];
                *v += w * r * r;
            }
        }
        var
    }

    /// Checks the weight-normalization invariant.
    pub fn weights_normalized(&self) -> bool {
        let s: f64 = self.weights.iter().sum();
        (s - 1.0).abs() <= 1e-12 && self.weights.iter().all(|w| *w >= 0.0)
    }
}

/// A sparse force observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Leg angle of the measurement (radians).
    pub theta_rad: f64,
    /// Behavior index: 0 = fx, 1 = fz (indexes the measurement model rows).
    pub behavior: usize,
    /// Measured force per unit width (N/m).
    pub value: f64,
}

/// Linear-Gaussian measurement model mapping reduced coefficients to force
/// values through the behavior factor V and the temporal factor W̃.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    /// Behavior factor matrix (J×r₂).
    v: Matrix,
    /// Temporal factor matrix (T×r₃) on `theta_grid`.
    w: Matrix,
    /// Strictly increasing θ grid of length T.
    theta_grid: Vec<f64>,
    /// Per-behavior scale restoring physical units (length J).
    behavior_scale: Vec<f64>,
    /// Per-behavior measurement noise std, all > 0 (length J).
    measurement_noise_std: Vec<f64>,
    /// Per-dimension random-walk process noise std, all ≥ 0 (length r₂·r₃).
    process_noise_std: Vec<f64>,
}

impl MeasurementModel {
    pub fn new(
        v: Matrix,
        w: Matrix,
        theta_grid: Vec<f64>,
        behavior_scale: Vec<f64>,
        measurement_noise_std: Vec<f64>,
        process_noise_std: Vec<f64>,
    ) -> Result<Self, RopfError> {
        if w.rows() != theta_grid.len() {
            return Err(RopfError::InvalidInput(format!(
                "temporal factor has {} rows but theta grid has {} points",
                w.rows(),
                theta_grid.len()
            )));
        }
        if theta_grid.len() < 2 {
            return Err(RopfError::InvalidInput("theta grid needs at least 2 points".into()));
        }
        if theta_grid.windows(2).any(|p| p[1] <= p[0]) {
            return Err(RopfError::InvalidInput("theta grid not strictly increasing".into()));
        }
        if behavior_scale.len() != v.rows() || measurement_noise_std.len() != v.rows() {
            return Err(RopfError::InvalidInput(format!(
                "behavior-indexed vectors must have length {} (got scale {}, noise {})",
                v.rows(),
                behavior_scale.len(),
                measurement_noise_std.len()
            )));
        }
        if measurement_noise_std.iter().any(|s| !(*s > 0.0)) {
            return Err(RopfError::InvalidInput(
                "measurement noise std must be > 0 for every behavior".into(),
            ));
        }
        let p = v.cols() * w.cols();
        if process_noise_std.len() != p {
            return Err(RopfError::InvalidInput(format!(
                "process noise std must have length r2*r3 = {} (got {})",
                p,
                process_noise_std.len()
            )));
        }
        if process_noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(RopfError::InvalidInput("process noise std must be >= 0".into()));
        }
        Ok(Self { v, w, theta_grid, behavior_scale, measurement_noise_std, process_noise_std })
    }

    /// State dimension p = r₂·r₃.
    pub fn state_dim(&self) -> usize {
        self.v.cols() * self.w.cols()
    }

    /// Number of behaviors J.
    pub fn n_behaviors(&self) -> usize {
        self.v.rows()
    }

    /// θ grid the temporal factor lives on.
    pub fn theta_grid(&self) -> &[f64] {
        &self.theta_grid
    }

    pub fn measurement_noise_std(&self) -> &[f64] {
        &self.measurement_noise_std
    }

    pub fn process_noise_std(&self) -> &[f64] {
        &self.process_noise_std
    }

    /// Temporal factor row linearly interpolated at θ.
    fn w_at(&self, theta: f64) -> Result<Vec<f64>, RopfError> {
        let t = &self.theta_grid;
        let lo = t[0];
        let hi = *t.last().unwrap();
        let slack = 1e-9 * (hi - lo).max(1e-12);
        if theta < lo - slack || theta > hi + slack {
            return Err(RopfError::InvalidInput(format!(
                "observation angle {theta} outside model grid [{lo}, {hi}]"
            )));
        }
        let x = theta.clamp(lo, hi);
        let k = match t.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(t.len() - 2),
            Err(i) => i.saturating_sub(1).min(t.len() - 2),
        };
        let u = (x - t[k]) / (t[k + 1] - t[k]);
        Ok((0..self.w.cols())
            .map(|c| self.w.at(k, c) * (1.0 - u) + self.w.at(k + 1, c) * u)
            .collect())
    }

    /// Measurement row h(θ, b) with h[(j,k)] = V[b,j]·W̃_θ[k]·scale_b, so that
    /// the predicted measurement is the dot product h·α.
    pub fn basis_row(&self, theta: f64, behavior: usize) -> Result<Vec<f64>, RopfError> {
        if behavior >= self.n_behaviors() {
            return Err(RopfError::InvalidInput(format!(
                "behavior index {behavior} out of range (model has {})",
                self.n_behaviors()
            )));
        }
        let wt = self.w_at(theta)?;
        let s = self.behavior_scale[behavior];
        let r3 = self.w.cols();
        let mut h = Vec::with_capacity(self.state_dim());
        for j in 0..self.v.cols() {
            let vj = self.v.at(behavior, j) * s;
            for wk in wt.iter().take(r3) {
                h.push(vj * wk);
            }
        }
        Ok(h)
    }

    /// Predicted measurement h(θ, b)·α for a coefficient vector.
    pub fn predict_value(&self, alpha: &[f64], theta: f64, behavior: usize) -> Result<f64, RopfError> {
        let h = self.basis_row(theta, behavior)?;
        Ok(h.iter().zip(alpha).map(|(a, b)| a * b).sum())
    }

    /// Reconstructs one behavior's series on the full θ grid from α.
    pub fn reconstruct_series(&self, alpha: &[f64], behavior: usize) -> Vec<f64> {
        let r2 = self.v.cols();
        let r3 = self.w.cols();
        let s = self.behavior_scale[behavior];
        (0..self.w.rows())
            .map(|t| {
                let mut acc = 0.0;
                for j in 0..r2 {
                    let vj = self.v.at(behavior, j);
                    for k in 0..r3 {
                        acc += alpha[j * r3 + k] * vj * self.w.at(t, k);
                    }
                }
                acc * s
            })
            .collect()
    }

    /// Reconstructs a full trace from α on the model grid. Behaviors beyond
    /// the model's J (e.g. fz for a single-behavior model) are filled with
    /// zeros; the caller owns merging per-behavior models.
    pub fn reconstruct_trace(&self, alpha: &[f64]) -> Result<ForceTrace, RopfError> {
        let zeros = vec![0.0; self.theta_grid.len()];
        let fx = if self.n_behaviors() > 0 { self.reconstruct_series(alpha, 0) } else { zeros.clone() };
        let fz = if self.n_behaviors() > 1 { self.reconstruct_series(alpha, 1) } else { zeros };
        Ok(ForceTrace::new(self.theta_grid.clone(), fx, fz)?)
    }
}

/// Draws an initial ensemble from the diagonal Gaussian
/// N(prior_mean, diag(prior_std²)) with uniform weights 1/N.
///
/// Draw order: particle-major, dimension-minor on a ChaCha8 stream seeded
/// with `seed`, making the ensemble bit-reproducible.
pub fn initialize(
    prior_mean: &[f64],
    prior_std: &[f64],
    n_particles: usize,
    seed: u64,
) -> Result<ParticleEnsemble, RopfError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    initialize_with_rng(prior_mean, prior_std, n_particles, &mut rng)
}

fn initialize_with_rng(
    prior_mean: &[f64],
    prior_std: &[f64],
    n_particles: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParticleEnsemble, RopfError> {
    if prior_mean.len() != prior_std.len() {
        return Err(RopfError::InvalidInput(format!(
            "prior mean has {} dims but prior std has {}",
            prior_mean.len(),
            prior_std.len()
        )));
    }
    if prior_mean.is_empty() {
        return Err(RopfError::InvalidInput("state dimension is zero".into()));
    }
    if n_particles < 2 {
        return Err(RopfError::InvalidInput("need at least 2 particles".into()));
    }
    if prior_std.iter().any(|s| !(*s >= 0.0)) {
        return Err(RopfError::InvalidInput("prior std must be >= 0".into()));
    }
    let p = prior_mean.len();
    let mut data = Vec::with_capacity(n_particles * p);
    for _ in 0..n_particles {
        for d in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            data.push(prior_mean[d] + prior_std[d] * z);
        }
    }
    Ok(ParticleEnsemble {
        particles: Matrix::from_vec(n_particles, p, data),
        weights: vec![1.0 / n_particles as f64; n_particles],
    })
}

/// Bayes reweighting for one observation, computed in log-space with
/// max-subtraction: `log w_i ← log w_i − (value − h·α_i)²/(2σ²)`, then
/// exponentiated and renormalized. Errors if every weight underflows to
/// zero or any log-weight is NaN.
pub fn update_weights(
    ensemble: &mut ParticleEnsemble,
    obs: &Observation,
    model: &MeasurementModel,
) -> Result<(), RopfError> {
    if !obs.value.is_finite() || !obs.theta_rad.is_finite() {
        return Err(RopfError::InvalidInput(format!(
            "non-finite observation (theta {}, value {})",
            obs.theta_rad, obs.value
        )));
    }
    if ensemble.state_dim() != model.state_dim() {
        return Err(RopfError::InvalidInput(format!(
            "ensemble state dim {} != model state dim {}",
            ensemble.state_dim(),
            model.state_dim()
        )));
    }
    let h = model.basis_row(obs.theta_rad, obs.behavior)?;
    let sigma = model.measurement_noise_std[obs.behavior];
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);

    let n = ensemble.len();
    let mut logw = Vec::with_capacity(n);
    let mut max_lw = f64::NEG_INFINITY;
    for i in 0..n {
        let row = ensemble.particles.row(i);
        let pred: f64 = h.iter().zip(row).map(|(a, b)| a * b).sum();
        let r = obs.value - pred;
        let lw = ensemble.weights[i].ln() - r * r * inv_two_var;
        if lw.is_nan() {
            return Err(RopfError::Degenerate(format!(
                "NaN log-weight for particle {i} (prediction {pred})"
            )));
        }
        if lw > max_lw {
            max_lw = lw;
        }
        logw.push(lw);
    }
    if !max_lw.is_finite() {
        return Err(RopfError::Degenerate(
            "all log-weights are -inf; likelihood underflowed for every particle".into(),
        ));
    }
    let mut sum = 0.0;
    for (w, lw) in ensemble.weights.iter_mut().zip(&logw) {
        *w = (lw - max_lw).exp();
        sum += *w;
    }
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(RopfError::Degenerate(format!("weight sum degenerate ({sum})")));
    }
    for w in &mut ensemble.weights {
        *w /= sum;
    }
    Ok(())
}

/// Effective sample size 1/Σw², in [1, N] for normalized weights.
pub fn effective_sample_size(ensemble: &ParticleEnsemble) -> f64 {
    let s: f64 = ensemble.weights.iter().map(|w| w * w).sum();
    1.0 / s
}

/// Systematic resampling: a single uniform offset u ∈ [0,1) defines N
/// stratified positions (i + u)/N walked against the weight CDF. Offspring
/// retain ancestor order; output weights are uniform 1/N.
pub fn resample_systematic(ensemble: &mut ParticleEnsemble, rng: &mut ChaCha8Rng) {
    let n = ensemble.len();
    let p = ensemble.state_dim();
    let u: f64 = rng.gen::<f64>();
    let mut data = Vec::with_capacity(n * p);
    let mut cdf = ensemble.weights[0];
    let mut j = 0usize;
    for i in 0..n {
        let pos = (i as f64 + u) / n as f64;
        while pos > cdf && j + 1 < n {
            j += 1;
            cdf += ensemble.weights[j];
        }
        data.extend_from_slice(ensemble.particles.row(j));
    }
    ensemble.particles = Matrix::from_vec(n, p, data);
    ensemble.weights = vec![1.0 / n as f64; n];
}

/// Tunable knobs for [`assimilate`].
#[derive(Debug, Clone)]
pub struct AssimilationOptions {
    pub n_particles: usize,
    /// Resample when ESS < fraction·N. Must lie in (0, 1].
    pub ess_threshold_fraction: f64,
    pub seed: u64,
}

impl Default for AssimilationOptions {
    fn default() -> Self {
        Self {
            n_particles: DEFAULT_N_PARTICLES,
            ess_threshold_fraction: DEFAULT_ESS_THRESHOLD_FRACTION,
            seed: 0,
        }
    }
}

/// Posterior summary returned by [`assimilate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssimilationResult {
    pub schema_version: String,
    /// Weighted posterior mean of the reduced coefficients.
    pub posterior_mean: Vec<f64>,
    /// Weighted posterior variance per coefficient.
    pub posterior_cov_diag: Vec<f64>,
    /// ESS recorded after each observation's weight update (before any
    /// resampling triggered by that observation).
    pub ess_history: Vec<f64>,
    /// Number of resampling events.
    pub n_resamples: usize,
    /// Reconstruction of the posterior-mean coefficients on the model grid.
    /// With zero observations this equals the prior (GPR-only) trace.
    pub updated_trace: ForceTrace,
}

impl AssimilationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, RopfError> {
        let r: AssimilationResult = serde_json::from_str(text)
            .map_err(|e| RopfError::InvalidInput(format!("result JSON: {e}")))?;
        if !crate::schema_compatible(&r.schema_version) {
            return Err(RopfError::InvalidInput(format!(
                "unsupported result schema version {}",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// Runs the full bootstrap filter: initialize from the prior, then for each
/// observation in θ order propagate a Gaussian random walk (per-dimension
/// std from the model), reweight, and systematically resample whenever
/// ESS < `ess_threshold_fraction`·N.
///
/// With zero observations the result is exactly the prior: mean/variance
/// are returned unchanged and the updated trace is the reconstruction of
/// `prior_mean` (the GPR-only prediction); no random draws are consumed.
pub fn assimilate(
    model: &MeasurementModel,
    prior_mean: &[f64],
    prior_std: &[f64],
    observations: &[Observation],
    options: &AssimilationOptions,
) -> Result<AssimilationResult, RopfError> {
    if prior_mean.len() != model.state_dim() {
        return Err(RopfError::InvalidInput(format!(
            "prior dimension {} != model state dimension {}",
            prior_mean.len(),
            model.state_dim()
        )));
    }
    if !(options.ess_threshold_fraction > 0.0 && options.ess_threshold_fraction <= 1.0) {
        return Err(RopfError::InvalidInput(
            "ess_threshold_fraction must lie in (0, 1]".into(),
        ));
    }
    if observations.windows(2).any(|p| p[1].theta_rad < p[0].theta_rad) {
        return Err(RopfError::InvalidInput(
            "observations must be sorted by non-decreasing theta".into(),
        ));
    }

    if observations.is_empty() {
        let updated_trace = model.reconstruct_trace(prior_mean)?;
        return Ok(AssimilationResult {
            schema_version: crate::SCHEMA_VERSION.to_string(),
            posterior_mean: prior_mean.to_vec(),
            posterior_cov_diag: prior_std.iter().map(|s| s * s).collect(),
            ess_history: Vec::new(),
            n_resamples: 0,
            updated_trace,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut ensemble =
        initialize_with_rng(prior_mean, prior_std, options.n_particles, &mut rng)?;
    let n = ensemble.len() as f64;
    let p = ensemble.state_dim();
    let q = model.process_noise_std();

    let mut ess_history = Vec::with_capacity(observations.len());
    let mut n_resamples = 0usize;
    for obs in observations {
        // Random-walk propagation (draws are consumed even for zero std so
        // the stream layout does not depend on the noise magnitudes).
        for i in 0..ensemble.particles.rows() {
            for d in 0..p {
                let z: f64 = rng.sample(StandardNormal);
                let v = ensemble.particles.at(i, d) + q[d] * z;
                ensemble.particles.set(i, d, v);
            }
        }
        update_weights(&mut ensemble, obs, model)?;
        let ess = effective_sample_size(&ensemble);
        ess_history.push(ess);
        if ess < options.ess_threshold_fraction * n {
            resample_systematic(&mut ensemble, &mut rng);
            n_resamples += 1;
        }
    }

    let posterior_mean = ensemble.weighted_mean();
    let posterior_cov_diag = ensemble.weighted_cov_diag();
    let updated_trace = model.reconstruct_trace(&posterior_mean)?;
    Ok(AssimilationResult {
        schema_version: crate::SCHEMA_VERSION.to_string(),
        posterior_mean,
        posterior_cov_diag,
        ess_history,
        n_resamples,
        updated_trace,
    })
}

/// Fallback measurement-noise estimate from a series of observed values of
/// one behavior ordered by θ: the population std of first differences
/// divided by √2 (a difference of two iid noisy samples has variance 2σ²).
/// Returns `None` when fewer than 3 values are available.
pub fn fallback_noise_std(values: &[f64]) -> Option<f64> {
    if values.len() < 3 {
        return None;
    }
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
    Some((var / 2.0).sqrt())
}

/// Canonical observation CSV header.
pub const OBS_CSV_HEADER: &str = "theta_rad,behavior,value";

/// Parses observations from CSV (`theta_rad,behavior,value`; behavior is
/// `fx` or `fz`). Rows need not be sorted; callers sort before assimilating.
pub fn read_observations_csv(text: &str) -> Result<Vec<Observation>, RopfError> {
    let mut out = Vec::new();
    let mut saw_header = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if !saw_header {
            if line != OBS_CSV_HEADER {
                return Err(RopfError::Csv {
                    line: lineno + 1,
                    message: format!("expected header `{OBS_CSV_HEADER}`, found `{line}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(RopfError::Csv {
                line: lineno + 1,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let theta: f64 = fields[0].parse().map_err(|e| RopfError::Csv {
            line: lineno + 1,
            message: format!("bad theta_rad: {e}"),
        })?;
        let behavior = crate::trace::BEHAVIOR_NAMES
            .iter()
            .position(|n| *n == fields[1])
            .ok_or_else(|| RopfError::Csv {
                line: lineno + 1,
                message: format!("behavior must be one of fx/fz, found `{}`", fields[1]),
            })?;
        let value: f64 = fields[2].parse().map_err(|e| RopfError::Csv {
            line: lineno + 1,
            message: format!("bad value: {e}"),
        })?;
        out.push(Observation { theta_rad: theta, behavior, value });
    }
    if !saw_header {
        return Err(RopfError::Csv { line: 1, message: "empty file (no header)".into() });
    }
    Ok(out)
}

/// Serializes observations to the canonical CSV format.
pub fn write_observations_csv(observations: &[Observation]) -> String {
    let mut out = String::from(OBS_CSV_HEADER);
    out.push('\n');
    for o in observations {
        out.push_str(&format!(
            "{},{},{}\n",
            o.theta_rad,
            crate::trace::BEHAVIOR_NAMES[o.behavior],
            o.value
        ));
    }
    out
}
