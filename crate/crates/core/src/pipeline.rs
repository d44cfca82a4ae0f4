//! End-to-end orchestration: dataset ingestion and manifesting, tensor
//! assembly, surrogate training and prediction, leave-one-out
//! cross-validation, assimilation, and the cross-design scaling analysis.
//!
//! The surrogate chain is: assemble the (condition × behavior × θ) force
//! tensor for one leg design, decompose it with the sequentially truncated
//! HOSVD, and fit one noiseless Gaussian process per retained
//! (operation-mode, temporal-mode) coefficient pair with the rotation speed
//! ω as the input. Prediction evaluates the coefficient GPs at a query ω
//! and reconstructs the trace through the retained factor matrices; GP
//! variances propagate linearly to per-θ bands.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gpr::{self, GPModel, GprError};
use crate::linalg::Matrix;
use crate::ropf::{self, AssimilationOptions, AssimilationResult, Observation, RopfError};
use crate::sim::{self, LegGeometry, Morphology, SimError};
use crate::tensor::{self, Tensor3, TensorError, DEFAULT_THRESHOLDS};
use crate::trace::{self, ForceTrace, TraceError, TraceMetadata};

/// 97.5% standard-normal quantile used for the 95% bands (matches the GP
/// module's interval convention).
const Z95: f64 = 1.959964;

/// Friction angle (degrees) whose tangent scales the shear-dominated
/// (reversed) morphologies in the scaling analysis.
const SHEAR_FRICTION_DEG: f64 = 33.0;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Gpr(#[from] GprError),
    #[error(transparent)]
    Ropf(#[from] RopfError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl PipelineError {
    /// Process exit code: 2 for validation/input problems, 3 for numerical
    /// failures inside an otherwise valid computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Invalid(_) | PipelineError::Io { .. } | PipelineError::Trace(_) => 2,
            PipelineError::Tensor(_) => 2,
            PipelineError::Gpr(e) => match e {
                GprError::NotPositiveDefinite { .. } => 3,
                _ => 2,
            },
            PipelineError::Ropf(e) => match e {
                RopfError::Degenerate(_) => 3,
                _ => 2,
            },
            PipelineError::Sim(e) => match e {
                SimError::InvalidConfig(_) => 2,
                _ => 3,
            },
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `text` to `path` atomically: the content lands in a sibling
/// temporary file first and is renamed into place, so readers never see a
/// torn write.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), PipelineError> {
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = path
        .file_name()
        .ok_or_else(|| PipelineError::Invalid(format!("{}: not a file path", path.display())))?
        .to_os_string();
    name.push(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

/// One ingested scenario: a leg design (morphology + foot fraction), an
/// operating condition (rotation speed), and its force trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub morphology: String,
    pub fl: f64,
    pub omega_rad_per_s: f64,
    /// `"simulation"` (dense, resampled onto the manifest grid) or
    /// `"experiment"` (kept sparse on its original θ samples).
    pub source: String,
    pub trace: ForceTrace,
}

impl ScenarioRecord {
    fn key(&self) -> (String, u64, u64, String) {
        (
            self.morphology.clone(),
            self.fl.to_bits(),
            self.omega_rad_per_s.to_bits(),
            self.source.clone(),
        )
    }
}

/// An indexed dataset whose simulation records share one uniform θ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub theta_grid: Vec<f64>,
    pub behaviors: [String; 2],
    pub scenarios: Vec<ScenarioRecord>,
}

impl DatasetManifest {
    pub fn new(theta_grid: Vec<f64>, scenarios: Vec<ScenarioRecord>) -> Result<Self, PipelineError> {
        let m = DatasetManifest {
            schema_version: crate::SCHEMA_VERSION.to_string(),
            theta_grid,
            behaviors: [
                trace::BEHAVIOR_NAMES[0].to_string(),
                trace::BEHAVIOR_NAMES[1].to_string(),
            ],
            scenarios,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !crate::schema_compatible(&self.schema_version) {
            return Err(PipelineError::Invalid(format!(
                "unsupported manifest schema version {}",
                self.schema_version
            )));
        }
        if self.theta_grid.len() < 2 || self.theta_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PipelineError::Invalid(
                "manifest θ grid must be strictly increasing with ≥ 2 points".into(),
            ));
        }
        let mut seen = HashSet::new();
        for r in &self.scenarios {
            r.morphology.parse::<Morphology>().map_err(|e| {
                PipelineError::Invalid(format!("scenario morphology: {e}"))
            })?;
            if !(r.fl.is_finite() && r.fl >= 0.0) || !r.omega_rad_per_s.is_finite() {
                return Err(PipelineError::Invalid(format!(
                    "scenario ({}, fl={}, ω={}): non-finite design/condition values",
                    r.morphology, r.fl, r.omega_rad_per_s
                )));
            }
            if r.source != "simulation" && r.source != "experiment" {
                return Err(PipelineError::Invalid(format!(
                    "scenario source must be 'simulation' or 'experiment', got '{}'",
                    r.source
                )));
            }
            // Re-run trace validation: manifests may come from hand-edited
            // JSON, and deserialization alone checks no invariants.
            ForceTrace::new(
                r.trace.theta_rad.clone(),
                r.trace.fx_n_per_m.clone(),
                r.trace.fz_n_per_m.clone(),
            )?;
            if r.source == "simulation" && !on_grid(&r.trace.theta_rad, &self.theta_grid) {
                return Err(PipelineError::Invalid(format!(
                    "simulation scenario ({}, ω={}) is not on the manifest θ grid",
                    r.morphology, r.omega_rad_per_s
                )));
            }
            if !seen.insert(r.key()) {
                return Err(PipelineError::Invalid(format!(
                    "duplicate scenario: design ({}, fl={}) at ω={} from {}",
                    r.morphology, r.fl, r.omega_rad_per_s, r.source
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let m: DatasetManifest = serde_json::from_str(text)
            .map_err(|e| PipelineError::Invalid(format!("manifest JSON: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// Simulation records for one design, sorted by ω ascending.
    pub fn design_records(&self, morphology: &str, fl: Option<f64>) -> Result<(f64, Vec<&ScenarioRecord>), PipelineError> {
        let of_morph: Vec<&ScenarioRecord> = self
            .scenarios
            .iter()
            .filter(|r| r.morphology == morphology && r.source == "simulation")
            .collect();
        if of_morph.is_empty() {
            return Err(PipelineError::Invalid(format!(
                "no simulation scenarios for design '{morphology}'"
            )));
        }
        let fl = match fl {
            Some(v) => v,
            None => {
                let first = of_morph[0].fl;
                if of_morph.iter().any(|r| r.fl != first) {
                    return Err(PipelineError::Invalid(format!(
                        "design '{morphology}' has multiple foot fractions; pass fl explicitly"
                    )));
                }
                first
            }
        };
        let mut records: Vec<&ScenarioRecord> =
            of_morph.into_iter().filter(|r| r.fl == fl).collect();
        if records.is_empty() {
            return Err(PipelineError::Invalid(format!(
                "no simulation scenarios for design '{morphology}' with fl={fl}"
            )));
        }
        records.sort_by(|a, b| a.omega_rad_per_s.partial_cmp(&b.omega_rad_per_s).unwrap());
        for w in records.windows(2) {
            if w[0].omega_rad_per_s == w[1].omega_rad_per_s {
                return Err(PipelineError::Invalid(format!(
                    "design '{morphology}' has two simulation records at ω={}",
                    w[0].omega_rad_per_s
                )));
            }
        }
        Ok((fl, records))
    }
}

fn on_grid(theta: &[f64], grid: &[f64]) -> bool {
    theta.len() == grid.len()
        && theta
            .iter()
            .zip(grid)
            .all(|(a, b)| (a - b).abs() <= 1e-12)
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Reads every `*.csv` force trace (with its `*.json` metadata sidecar)
/// under `dir` into a manifest. Simulation traces are linearly resampled
/// onto a uniform θ grid of `trace_points` samples — the canonical
/// [−3π/4, 3π/4] range when every simulation trace covers it, otherwise
/// the widest range they share. Experiment traces keep their original
/// (possibly sparse) θ samples.
pub fn ingest(dir: &Path, trace_points: usize) -> Result<DatasetManifest, PipelineError> {
    if trace_points < 2 {
        return Err(PipelineError::Invalid(format!(
            "trace_points must be ≥ 2, got {trace_points}"
        )));
    }
    let mut csv_paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |x| x == "csv"))
        .collect();
    csv_paths.sort();

    let mut raw: Vec<(PathBuf, TraceMetadata, ForceTrace)> = Vec::new();
    for csv_path in csv_paths {
        let sidecar = csv_path.with_extension("json");
        let meta_text = fs::read_to_string(&sidecar).map_err(|e| {
            PipelineError::Invalid(format!(
                "{}: missing or unreadable metadata sidecar {} ({e})",
                csv_path.display(),
                sidecar.display()
            ))
        })?;
        let meta = TraceMetadata::from_json(&meta_text)
            .map_err(|e| PipelineError::Invalid(format!("{}: {e}", sidecar.display())))?;
        let csv_text = fs::read_to_string(&csv_path).map_err(|e| io_err(&csv_path, e))?;
        let tr = ForceTrace::from_csv(&csv_text)
            .map_err(|e| PipelineError::Invalid(format!("{}: {e}", csv_path.display())))?;
        raw.push((csv_path, meta, tr));
    }

    if raw.is_empty() {
        log::warn!("ingest: no trace files found in {}", dir.display());
        return DatasetManifest::new(trace::uniform_theta_grid(trace_points), Vec::new());
    }

    // Choose the shared grid from the simulation traces' common θ range.
    let mut lo = trace::THETA_MIN;
    let mut hi = trace::THETA_MAX;
    let mut any_sim = false;
    for (_, meta, tr) in &raw {
        if meta.source == "simulation" {
            any_sim = true;
            lo = lo.max(tr.theta_rad[0]);
            hi = hi.min(*tr.theta_rad.last().unwrap());
        }
    }
    let grid = if !any_sim || (lo <= trace::THETA_MIN + 1e-12 && hi >= trace::THETA_MAX - 1e-12) {
        trace::uniform_theta_grid(trace_points)
    } else if lo < hi {
        log::warn!(
            "ingest: simulation traces only share θ ∈ [{lo:.4}, {hi:.4}]; using that range instead of the canonical grid"
        );
        let mut g: Vec<f64> = (0..trace_points)
            .map(|k| lo + (hi - lo) * k as f64 / (trace_points - 1) as f64)
            .collect();
        *g.last_mut().unwrap() = hi;
        g
    } else {
        return Err(PipelineError::Invalid(
            "simulation traces share no common θ range".into(),
        ));
    };

    let mut scenarios = Vec::with_capacity(raw.len());
    for (csv_path, meta, tr) in raw {
        let resampled = if meta.source == "simulation" {
            tr.resample(&grid).map_err(|e| {
                PipelineError::Invalid(format!("{}: {e}", csv_path.display()))
            })?
        } else {
            tr
        };
        scenarios.push(ScenarioRecord {
            morphology: meta.morphology,
            fl: meta.fl,
            omega_rad_per_s: meta.omega_rad_per_s,
            source: meta.source,
            trace: resampled,
        });
    }
    scenarios.sort_by(|a, b| {
        (a.morphology.as_str(), a.fl, a.omega_rad_per_s, a.source.as_str())
            .partial_cmp(&(b.morphology.as_str(), b.fl, b.omega_rad_per_s, b.source.as_str()))
            .unwrap()
    });
    DatasetManifest::new(grid, scenarios)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Whether the two behaviors share one decomposition or get separate ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// One tensor over (condition, behavior, θ); behaviors couple through
    /// the shared operation modes.
    Joint,
    /// One independent decomposition per behavior.
    PerBehavior,
}

impl std::str::FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "per-behavior" | "per_behavior" => Ok(TrainMode::PerBehavior),
            other => Err(format!("unknown train mode '{other}' (joint | per-behavior)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub thresholds: [f64; 3],
    pub mode: TrainMode,
    /// Nelder–Mead restarts per coefficient GP.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS,
            mode: TrainMode::Joint,
            restarts: 8,
            seed: 7,
        }
    }
}

/// One decomposition's worth of trained surrogate: the retained behavior
/// and temporal factors plus one GP per retained coefficient pair.
#[derive(Debug, Clone)]
struct ModelBlock {
    /// Global behavior indices this block reconstructs (0 = fx, 1 = fz).
    behaviors: Vec<usize>,
    /// Per-behavior normalization scale (same order as `behaviors`).
    scale: Vec<f64>,
    /// Behavior factor V (J_b × r₂).
    v: Matrix,
    /// Temporal factor W̃ (T × r₃).
    w: Matrix,
    /// Coefficient GPs, index j·r₃ + k.
    models: Vec<GPModel>,
}

impl ModelBlock {
    fn r2(&self) -> usize {
        self.v.cols()
    }

    fn r3(&self) -> usize {
        self.w.cols()
    }
}

/// A trained per-design surrogate. Prediction is case-by-case: one model
/// per (morphology, fl) design; cross-design structure is exposed only
/// through the scaling analysis.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub schema_version: String,
    pub morphology: String,
    pub fl: f64,
    pub mode: TrainMode,
    pub theta_grid: Vec<f64>,
    /// Training conditions, ascending.
    pub train_omegas: Vec<f64>,
    blocks: Vec<ModelBlock>,
}

/// Mean trace with pointwise 95% bands at one query condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub omega_rad_per_s: f64,
    pub mean: ForceTrace,
    pub lower95: ForceTrace,
    pub upper95: ForceTrace,
    /// Per-behavior predictive variance on the θ grid.
    pub variance: [Vec<f64>; 2],
    /// Set when ω falls outside twice the training span (the training
    /// interval widened by half its length on each side).
    pub extrapolation: bool,
}

/// Worst training-point reproduction error, relative to the target peak.
fn interpolation_defect(model: &GPModel, omegas: &[f64], targets: &[f64]) -> Result<f64, GprError> {
    let scale = targets
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
        .max(1e-300);
    let mut worst = 0.0_f64;
    for (i, &w) in omegas.iter().enumerate() {
        let p = model.predict(&[w])?;
        worst = worst.max((p.mean - targets[i]).abs() / scale);
    }
    Ok(worst)
}

/// Fits a noiseless coefficient GP that actually interpolates its training
/// points. Evidence maximization alone can pick a length scale whose kernel
/// matrix is so ill-conditioned that the regularized solve no longer
/// reproduces the targets; since exact reproduction at training conditions
/// is a hard surrogate property here, a descending ladder of length scales
/// (in standardized-input units) is tried and the largest one whose worst
/// training-point error falls under 1e-9 relative wins — the smoothest
/// model that still interpolates. The noiseless posterior mean is scale
/// invariant in the signal variance, so the evidence-fitted signal is kept
/// for the predictive bands.
fn fit_interpolating(
    inputs: &Matrix,
    omegas: &[f64],
    targets: &[f64],
    restarts: usize,
    seed: u64,
) -> Result<GPModel, PipelineError> {
    const DEFECT_TOL: f64 = 1e-9;
    const LADDER: [f64; 17] = [
        4.0, 3.0, 2.4, 1.9, 1.5, 1.2, 1.0, 0.8, 0.65, 0.5, 0.4, 0.3, 0.22, 0.16, 0.12, 0.08,
        0.05,
    ];
    let fitted = gpr::fit_fixed_noise(inputs, targets, 0.0, restarts, seed)?;
    let fitted_defect = interpolation_defect(&fitted, omegas, targets)?;
    if fitted_defect <= DEFECT_TOL {
        return Ok(fitted);
    }
    let signal = fitted.params().signal_variance;
    let dim = inputs.cols();
    let mut best = (fitted_defect, fitted);
    for ls in LADDER {
        let params = gpr::KernelParams {
            signal_variance: signal,
            length_scales: vec![ls; dim],
            noise_variance: 0.0,
        };
        let candidate = match GPModel::with_params(inputs, targets, params) {
            Ok(m) => m,
            // Too-long scales can defeat the jittered factorization
            // entirely; those rungs are simply infeasible.
            Err(GprError::NotPositiveDefinite { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let defect = interpolation_defect(&candidate, omegas, targets)?;
        if defect <= DEFECT_TOL {
            return Ok(candidate);
        }
        if defect < best.0 {
            best = (defect, candidate);
        }
    }
    Ok(best.1)
}

fn fit_block(
    records: &[&ScenarioRecord],
    behaviors: &[usize],
    omegas: &[f64],
    thresholds: [f64; 3],
    restarts: usize,
    seed: u64,
) -> Result<ModelBlock, PipelineError> {
    let n_cond = records.len();
    let n_beh = behaviors.len();
    let n_theta = records[0].trace.len();

    // Per-behavior normalization so fx and fz enter the decomposition at
    // comparable magnitude; the scale multiplies back at reconstruction.
    let mut scale = vec![0.0_f64; n_beh];
    for (bi, &b) in behaviors.iter().enumerate() {
        for r in records {
            for &v in r.trace.behavior(b) {
                scale[bi] = scale[bi].max(v.abs());
            }
        }
        if scale[bi] == 0.0 {
            scale[bi] = 1.0;
        }
    }

    let tensor = Tensor3::from_fn([n_cond, n_beh, n_theta], |i, j, t| {
        records[i].trace.behavior(behaviors[j])[t] / scale[j]
    });
    let decomp = tensor::st_hosvd(&tensor, thresholds, tensor::DEFAULT_MODE_ORDER)?;
    // Condition-wise coefficients B = ξ ×₁ U, shape (I × r₂ × r₃): the GP
    // targets. Each (j, k) coefficient is a scalar function of ω.
    let b = tensor::mode_product(&decomp.core, decomp.u().matrix(), 1)?;
    let [_, r2, r3] = b.dims();

    let inputs = Matrix::from_vec(n_cond, 1, omegas.to_vec());
    let mut models = Vec::with_capacity(r2 * r3);
    for j in 0..r2 {
        for k in 0..r3 {
            let targets: Vec<f64> = (0..n_cond).map(|i| b.at(i, j, k)).collect();
            let model = fit_interpolating(
                &inputs,
                omegas,
                &targets,
                restarts,
                seed.wrapping_add((j * r3 + k) as u64),
            )?;
            models.push(model);
        }
    }

    Ok(ModelBlock {
        behaviors: behaviors.to_vec(),
        scale,
        v: decomp.v().matrix().clone(),
        w: decomp.w().matrix().clone(),
        models,
    })
}

/// Trains the per-design surrogate on the manifest's simulation records:
/// tensor assembly → ST-HOSVD → one noiseless GP per retained coefficient
/// pair, with ω as the 1-D input.
pub fn train(
    manifest: &DatasetManifest,
    morphology: &str,
    fl: Option<f64>,
    opts: &TrainOptions,
) -> Result<TrainedModel, PipelineError> {
    manifest.validate()?;
    let (fl, records) = manifest.design_records(morphology, fl)?;
    if records.len() < 3 {
        return Err(PipelineError::Invalid(format!(
            "design '{morphology}' has {} conditions; training needs ≥ 3 (GP fit underdetermined)",
            records.len()
        )));
    }
    let omegas: Vec<f64> = records.iter().map(|r| r.omega_rad_per_s).collect();

    let blocks = match opts.mode {
        TrainMode::Joint => vec![fit_block(
            &records,
            &[0, 1],
            &omegas,
            opts.thresholds,
            opts.restarts,
            opts.seed,
        )?],
        TrainMode::PerBehavior => {
            let mut bs = Vec::with_capacity(2);
            for b in 0..2 {
                bs.push(fit_block(
                    &records,
                    &[b],
                    &omegas,
                    opts.thresholds,
                    opts.restarts,
                    opts.seed.wrapping_add(1000 * b as u64),
                )?);
            }
            bs
        }
    };

    Ok(TrainedModel {
        schema_version: crate::SCHEMA_VERSION.to_string(),
        morphology: morphology.to_string(),
        fl,
        mode: opts.mode,
        theta_grid: manifest.theta_grid.clone(),
        train_omegas: omegas,
        blocks,
    })
}

impl TrainedModel {
    /// Total retained coefficient GPs across blocks.
    pub fn n_coefficients(&self) -> usize {
        self.blocks.iter().map(|b| b.models.len()).sum()
    }

    /// Predicts the force trace at rotation speed `omega` with pointwise
    /// 95% bands from the coefficient GPs' predictive variances.
    pub fn predict(&self, omega: f64) -> Result<Prediction, PipelineError> {
        if !omega.is_finite() {
            return Err(PipelineError::Invalid(format!("query ω = {omega}")));
        }
        let t_len = self.theta_grid.len();
        let mut mean = [vec![0.0; t_len], vec![0.0; t_len]];
        let mut var = [vec![0.0; t_len], vec![0.0; t_len]];

        for block in &self.blocks {
            let (r2, r3) = (block.r2(), block.r3());
            let preds: Vec<gpr::PredictiveDistribution> = block
                .models
                .iter()
                .map(|m| m.predict(&[omega]))
                .collect::<Result<_, _>>()?;
            for (bi, &g) in block.behaviors.iter().enumerate() {
                let s = block.scale[bi];
                for t in 0..t_len {
                    let mut m_acc = 0.0;
                    let mut v_acc = 0.0;
                    for j in 0..r2 {
                        let vb = block.v.at(bi, j);
                        for k in 0..r3 {
                            let basis = vb * block.w.at(t, k);
                            let p = &preds[j * r3 + k];
                            m_acc += p.mean * basis;
                            v_acc += p.variance * basis * basis;
                        }
                    }
                    mean[g][t] = s * m_acc;
                    var[g][t] = s * s * v_acc;
                }
            }
        }

        let lo: Vec<f64> = (0..t_len)
            .map(|t| mean[0][t] - Z95 * var[0][t].sqrt())
            .collect();
        let hi: Vec<f64> = (0..t_len)
            .map(|t| mean[0][t] + Z95 * var[0][t].sqrt())
            .collect();
        let lo_z: Vec<f64> = (0..t_len)
            .map(|t| mean[1][t] - Z95 * var[1][t].sqrt())
            .collect();
        let hi_z: Vec<f64> = (0..t_len)
            .map(|t| mean[1][t] + Z95 * var[1][t].sqrt())
            .collect();

        let (w_min, w_max) = (
            *self
                .train_omegas
                .first()
                .ok_or_else(|| PipelineError::Invalid("model has no training conditions".into()))?,
            *self.train_omegas.last().unwrap(),
        );
        let span = w_max - w_min;
        let extrapolation = omega < w_min - 0.5 * span || omega > w_max + 0.5 * span;
        if extrapolation {
            log::warn!(
                "predict: ω = {omega} lies outside twice the training range [{w_min}, {w_max}]"
            );
        }

        Ok(Prediction {
            omega_rad_per_s: omega,
            mean: ForceTrace::new(self.theta_grid.clone(), mean[0].clone(), mean[1].clone())?,
            lower95: ForceTrace::new(self.theta_grid.clone(), lo, lo_z)?,
            upper95: ForceTrace::new(self.theta_grid.clone(), hi, hi_z)?,
            variance: var,
            extrapolation,
        })
    }

    pub fn to_json(&self) -> String {
        let repr = ModelRepr {
            schema_version: self.schema_version.clone(),
            morphology: self.morphology.clone(),
            fl: self.fl,
            mode: self.mode,
            theta_grid: self.theta_grid.clone(),
            train_omegas: self.train_omegas.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockRepr {
                    behaviors: b.behaviors.clone(),
                    scale: b.scale.clone(),
                    v: MatrixRepr::from(&b.v),
                    w: MatrixRepr::from(&b.w),
                    models: b
                        .models
                        .iter()
                        .map(|m| {
                            serde_json::from_str(&m.to_json())
                                .expect("GP JSON is valid by construction")
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&repr).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let repr: ModelRepr = serde_json::from_str(text)
            .map_err(|e| PipelineError::Invalid(format!("model JSON: {e}")))?;
        if !crate::schema_compatible(&repr.schema_version) {
            return Err(PipelineError::Invalid(format!(
                "unsupported model schema version {}",
                repr.schema_version
            )));
        }
        let mut blocks = Vec::with_capacity(repr.blocks.len());
        for b in repr.blocks {
            let v = b.v.into_matrix()?;
            let w = b.w.into_matrix()?;
            if b.behaviors.len() != v.rows() || b.scale.len() != v.rows() {
                return Err(PipelineError::Invalid(
                    "model block behaviors/scale must match the V factor's rows".into(),
                ));
            }
            if b.models.len() != v.cols() * w.cols() {
                return Err(PipelineError::Invalid(format!(
                    "model block has {} GPs but r₂·r₃ = {}",
                    b.models.len(),
                    v.cols() * w.cols()
                )));
            }
            let models = b
                .models
                .iter()
                .map(|m| {
                    GPModel::from_json(
                        &serde_json::to_string(m)
                            .expect("value serialization cannot fail"),
                    )
                    .map_err(PipelineError::from)
                })
                .collect::<Result<Vec<_>, _>>()?;
            blocks.push(ModelBlock {
                behaviors: b.behaviors,
                scale: b.scale,
                v,
                w,
                models,
            });
        }
        let model = TrainedModel {
            schema_version: repr.schema_version,
            morphology: repr.morphology,
            fl: repr.fl,
            mode: repr.mode,
            theta_grid: repr.theta_grid,
            train_omegas: repr.train_omegas,
            blocks,
        };
        if model.theta_grid.len() < 2 || model.theta_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PipelineError::Invalid(
                "model θ grid must be strictly increasing".into(),
            ));
        }
        for b in &model.blocks {
            if b.w.rows() != model.theta_grid.len() {
                return Err(PipelineError::Invalid(
                    "model temporal factor does not match the θ grid".into(),
                ));
            }
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixRepr {
    fn from(m: &Matrix) -> Self {
        MatrixRepr {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        }
    }

    fn into_matrix(self) -> Result<Matrix, PipelineError> {
        if self.data.len() != self.rows * self.cols || self.rows == 0 || self.cols == 0 {
            return Err(PipelineError::Invalid(format!(
                "matrix repr {}×{} with {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::Invalid("matrix repr has non-finite entries".into()));
        }
        Ok(Matrix::from_vec(self.rows, self.cols, self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct BlockRepr {
    behaviors: Vec<usize>,
    scale: Vec<f64>,
    v: MatrixRepr,
    w: MatrixRepr,
    models: Vec<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    schema_version: String,
    morphology: String,
    fl: f64,
    mode: TrainMode,
    theta_grid: Vec<f64>,
    train_omegas: Vec<f64>,
    blocks: Vec<BlockRepr>,
}

// ---------------------------------------------------------------------------
// Error metric and cross-validation
// ---------------------------------------------------------------------------

/// Mean over θ of |pred − ref|, normalized by the peak |ref|, per behavior.
/// (The reference's peak normalization is documented; the underlying error
/// bars in the source figures name the metric without a formula.)
pub fn relative_absolute_error(
    pred: &ForceTrace,
    reference: &ForceTrace,
) -> Result<[f64; 2], PipelineError> {
    if !on_grid(&pred.theta_rad, &reference.theta_rad) {
        return Err(PipelineError::Invalid(
            "relative_absolute_error requires a common θ grid".into(),
        ));
    }
    let mut out = [0.0; 2];
    for b in 0..2 {
        let p = pred.behavior(b);
        let r = reference.behavior(b);
        let peak = r.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if peak == 0.0 {
            return Err(PipelineError::Invalid(format!(
                "relative_absolute_error: reference behavior '{}' is identically zero",
                trace::BEHAVIOR_NAMES[b]
            )));
        }
        let mean_abs =
            p.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
        out[b] = mean_abs / peak;
    }
    Ok(out)
}

/// One leave-one-out fold's held-out error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub omega_rad_per_s: f64,
    /// True for the smallest and largest training conditions.
    pub edge: bool,
    /// Peak-normalized mean absolute error per behavior [fx, fz].
    pub error: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub schema_version: String,
    pub morphology: String,
    pub fl: f64,
    pub folds: Vec<FoldReport>,
    pub mean_error: [f64; 2],
    pub edge_mean_error: [f64; 2],
    pub interior_mean_error: [f64; 2],
}

impl CrossvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let r: CrossvalReport = serde_json::from_str(text)
            .map_err(|e| PipelineError::Invalid(format!("crossval JSON: {e}")))?;
        if !crate::schema_compatible(&r.schema_version) {
            return Err(PipelineError::Invalid(format!(
                "unsupported crossval schema version {}",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

/// Leave-one-out cross-validation over a design's conditions: each fold
/// trains on the remaining n−1 and scores the held-out trace. Folds run
/// concurrently; the report order follows ascending ω.
pub fn crossval_loo(
    manifest: &DatasetManifest,
    morphology: &str,
    fl: Option<f64>,
    opts: &TrainOptions,
) -> Result<CrossvalReport, PipelineError> {
    manifest.validate()?;
    let (fl, records) = manifest.design_records(morphology, fl)?;
    let n = records.len();
    if n < 4 {
        return Err(PipelineError::Invalid(format!(
            "cross-validation needs ≥ 4 conditions (got {n}: each fold must leave ≥ 3 to train)"
        )));
    }
    let w_min = records[0].omega_rad_per_s;
    let w_max = records[n - 1].omega_rad_per_s;

    let folds: Vec<FoldReport> = (0..n)
        .into_par_iter()
        .map(|held| -> Result<FoldReport, PipelineError> {
            let rest: Vec<ScenarioRecord> = records
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held)
                .map(|(_, r)| (*r).clone())
                .collect();
            let sub = DatasetManifest::new(manifest.theta_grid.clone(), rest)?;
            let model = train(&sub, morphology, Some(fl), opts)?;
            let held_rec = records[held];
            let pred = model.predict(held_rec.omega_rad_per_s)?;
            let error = relative_absolute_error(&pred.mean, &held_rec.trace)?;
            Ok(FoldReport {
                omega_rad_per_s: held_rec.omega_rad_per_s,
                edge: held_rec.omega_rad_per_s == w_min || held_rec.omega_rad_per_s == w_max,
                error,
            })
        })
        .collect::<Result<_, _>>()?;

    let mean_of = |sel: &dyn Fn(&FoldReport) -> bool| -> [f64; 2] {
        let chosen: Vec<&FoldReport> = folds.iter().filter(|f| sel(f)).collect();
        if chosen.is_empty() {
            return [f64::NAN, f64::NAN];
        }
        let mut m = [0.0; 2];
        for f in &chosen {
            m[0] += f.error[0];
            m[1] += f.error[1];
        }
        [m[0] / chosen.len() as f64, m[1] / chosen.len() as f64]
    };

    Ok(CrossvalReport {
        schema_version: crate::SCHEMA_VERSION.to_string(),
        morphology: morphology.to_string(),
        fl,
        mean_error: mean_of(&|_| true),
        edge_mean_error: mean_of(&|f| f.edge),
        interior_mean_error: mean_of(&|f| !f.edge),
        folds,
    })
}

// ---------------------------------------------------------------------------
// Assimilation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AssimilateScenarioOptions {
    /// Per-behavior measurement noise std [fx, fz]. When absent, it is
    /// estimated from the observations' first differences, falling back to
    /// 5% of the prior trace's peak for behaviors with too few samples.
    pub measurement_noise_std: Option<[f64; 2]>,
    pub ropf: AssimilationOptions,
}

impl Default for AssimilateScenarioOptions {
    fn default() -> Self {
        Self {
            measurement_noise_std: None,
            ropf: AssimilationOptions::default(),
        }
    }
}

/// GPR-prior + particle-filter posterior for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssimilationOutput {
    pub schema_version: String,
    pub omega_rad_per_s: f64,
    /// GPR-only prediction (the filter's prior mean reconstruction).
    pub prior_trace: ForceTrace,
    /// Posterior-mean reconstruction after assimilating the observations.
    pub updated_trace: ForceTrace,
    /// One filter result per model block (joint mode: exactly one).
    pub block_results: Vec<AssimilationResult>,
}

impl AssimilationOutput {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("output serialization cannot fail")
    }
}

/// Assimilates sparse observations into the surrogate's prediction at
/// `omega`: the coefficient ensemble is initialized from the GP predictive
/// distribution, the measurement model reuses the trained factors, and the
/// bootstrap filter sharpens the reduced coefficients toward the data.
/// With zero observations the posterior equals the GPR-only prediction.
pub fn assimilate_scenario(
    model: &TrainedModel,
    omega: f64,
    observations: &[Observation],
    opts: &AssimilateScenarioOptions,
) -> Result<AssimilationOutput, PipelineError> {
    let prior = model.predict(omega)?;
    let mut fx = prior.mean.fx_n_per_m.clone();
    let mut fz = prior.mean.fz_n_per_m.clone();
    let mut block_results = Vec::with_capacity(model.blocks.len());

    for (bi, block) in model.blocks.iter().enumerate() {
        let preds: Vec<gpr::PredictiveDistribution> = block
            .models
            .iter()
            .map(|m| m.predict(&[omega]))
            .collect::<Result<_, _>>()?;
        let prior_mean: Vec<f64> = preds.iter().map(|p| p.mean).collect();
        // Floor the prior spread so an exactly-interpolated query (zero GP
        // variance) still yields a live ensemble.
        let floor = 1e-6
            * prior_mean
                .iter()
                .fold(1e-12_f64, |acc, m| acc.max(m.abs()));
        let prior_std: Vec<f64> = preds
            .iter()
            .map(|p| p.variance.sqrt().max(floor))
            .collect();
        let process_noise: Vec<f64> = prior_std.iter().map(|s| 0.05 * s).collect();

        // Observations belonging to this block, remapped to local behavior
        // indices and sorted by θ as the filter requires.
        let mut block_obs: Vec<Observation> = Vec::new();
        for o in observations {
            if let Some(local) = block.behaviors.iter().position(|&g| g == o.behavior) {
                block_obs.push(Observation {
                    theta_rad: o.theta_rad,
                    behavior: local,
                    value: o.value,
                });
            }
        }
        block_obs.sort_by(|a, b| a.theta_rad.partial_cmp(&b.theta_rad).unwrap());

        let mut noise = Vec::with_capacity(block.behaviors.len());
        for (local, &g) in block.behaviors.iter().enumerate() {
            let explicit = opts.measurement_noise_std.map(|v| v[g]);
            let values: Vec<f64> = block_obs
                .iter()
                .filter(|o| o.behavior == local)
                .map(|o| o.value)
                .collect();
            let peak = prior.mean.behavior(g).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let sigma = explicit
                .or_else(|| ropf::fallback_noise_std(&values))
                .unwrap_or(0.05 * peak);
            noise.push(if sigma > 0.0 { sigma } else { (0.05 * peak).max(1e-9) });
        }

        let measurement = ropf::MeasurementModel::new(
            block.v.clone(),
            block.w.clone(),
            model.theta_grid.clone(),
            block.scale.clone(),
            noise,
            process_noise,
        )?;
        let ropf_opts = AssimilationOptions {
            seed: opts.ropf.seed.wrapping_add(bi as u64),
            ..opts.ropf.clone()
        };
        let result = ropf::assimilate(&measurement, &prior_mean, &prior_std, &block_obs, &ropf_opts)?;

        for (local, &g) in block.behaviors.iter().enumerate() {
            let series = result.updated_trace.behavior(local).to_vec();
            if g == 0 {
                fx = series;
            } else {
                fz = series;
            }
        }
        block_results.push(result);
    }

    Ok(AssimilationOutput {
        schema_version: crate::SCHEMA_VERSION.to_string(),
        omega_rad_per_s: omega,
        prior_trace: prior.mean,
        updated_trace: ForceTrace::new(model.theta_grid.clone(), fx, fz)?,
        block_results,
    })
}

// ---------------------------------------------------------------------------
// Scaling analysis
// ---------------------------------------------------------------------------

/// Area of the "shadow" region between the leg profile — posed with its
/// reference line at 45° to the horizontal — and the horizontal through the
/// profile's lowest point, by shoelace quadrature on the sampled profile.
/// For a flat leg of length L this is the right triangle L²/4.
pub fn compute_lift_area(leg: &LegGeometry) -> Result<f64, PipelineError> {
    if !(leg.length > 0.0 && leg.length.is_finite()) {
        return Err(PipelineError::Invalid(format!(
            "lift area needs a positive leg length, got {}",
            leg.length
        )));
    }
    let spacing = leg.length / 256.0;
    let profile = sim::geometry::leg_profile(leg, spacing);
    if profile.len() < 3 {
        return Err(PipelineError::Invalid(
            "degenerate leg profile (fewer than 3 boundary points)".into(),
        ));
    }
    let theta = std::f64::consts::FRAC_PI_4;
    let pts: Vec<[f64; 2]> = profile
        .iter()
        .map(|&p| sim::geometry::place_point(p, [0.0, 0.0], theta))
        .collect();
    let z_min = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);

    // Close the polygon: profile polyline, vertical drop from its last
    // point to the baseline, baseline back under the first point, up.
    let mut poly = pts;
    let last = *poly.last().unwrap();
    let first = poly[0];
    poly.push([last[0], z_min]);
    poly.push([first[0], z_min]);

    let mut twice_area = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice_area += a[0] * b[1] - b[0] * a[1];
    }
    Ok(0.5 * twice_area.abs())
}

/// Force-scale factor μ for a morphology: 1 for the pressure-dominated
/// designs (flat and forward-curved), tan 33° for the shear-dominated
/// reversed designs.
pub fn friction_scale(morphology: Morphology) -> f64 {
    match morphology {
        Morphology::Flat | Morphology::CLeg | Morphology::LLeg => 1.0,
        Morphology::ReversedC | Morphology::ReversedL => {
            (SHEAR_FRICTION_DEG * std::f64::consts::PI / 180.0).tan()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorphologyScaling {
    pub morphology: String,
    pub fl: f64,
    /// Friction scale μ (1 or tan 33°).
    pub mu: f64,
    /// Lifted-area proxy S at unit leg length.
    pub lift_area: f64,
    /// Area ratio α = S / S_flat.
    pub alpha: f64,
    /// Raw maxima per speed (ascending ω order).
    pub max_drag: Vec<f64>,
    pub max_lift: Vec<f64>,
    /// Maxima normalized by μ·α.
    pub scaled_drag: Vec<f64>,
    pub scaled_lift: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub schema_version: String,
    /// Speeds shared by every morphology, ascending.
    pub omegas: Vec<f64>,
    pub morphologies: Vec<MorphologyScaling>,
    /// Cross-morphology coefficient of variation per speed, before and
    /// after scaling.
    pub cov_drag_raw: Vec<f64>,
    pub cov_drag_scaled: Vec<f64>,
    pub cov_lift_raw: Vec<f64>,
    pub cov_lift_scaled: Vec<f64>,
}

impl ScalingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let r: ScalingReport = serde_json::from_str(text)
            .map_err(|e| PipelineError::Invalid(format!("scaling JSON: {e}")))?;
        if !crate::schema_compatible(&r.schema_version) {
            return Err(PipelineError::Invalid(format!(
                "unsupported scaling schema version {}",
                r.schema_version
            )));
        }
        Ok(r)
    }
}

fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

/// Cross-design scaling analysis: per (morphology, ω) the maxima of |fx|
/// and |fz| are extracted from the manifest's simulation records and
/// normalized by μ·α (friction scale × lifted-area ratio against the flat
/// leg). The report carries the cross-morphology dispersion before and
/// after scaling at every shared speed; collapse shows up as a drop in the
/// coefficient of variation.
pub fn scaling_analysis(manifest: &DatasetManifest) -> Result<ScalingReport, PipelineError> {
    manifest.validate()?;
    let mut morphs: Vec<(Morphology, f64)> = Vec::new();
    for r in &manifest.scenarios {
        if r.source != "simulation" {
            continue;
        }
        let m: Morphology = r.morphology.parse().map_err(PipelineError::Invalid)?;
        match morphs.iter().find(|(mm, _)| *mm == m) {
            None => morphs.push((m, r.fl)),
            Some((_, fl)) if *fl != r.fl => {
                return Err(PipelineError::Invalid(format!(
                    "morphology '{}' appears with multiple foot fractions; scaling needs one design per morphology",
                    r.morphology
                )))
            }
            _ => {}
        }
    }
    if morphs.len() < 2 {
        return Err(PipelineError::Invalid(
            "scaling analysis needs ≥ 2 morphologies".into(),
        ));
    }
    if !morphs.iter().any(|(m, _)| *m == Morphology::Flat) {
        return Err(PipelineError::Invalid(
            "scaling analysis needs the flat design as the α reference".into(),
        ));
    }
    morphs.sort_by_key(|(m, _)| Morphology::ALL.iter().position(|a| a == m).unwrap());

    // Speeds common to all morphologies (exact match: simulator sweeps
    // share their ω grid by construction).
    let speeds_of = |m: Morphology| -> Vec<f64> {
        let mut v: Vec<f64> = manifest
            .scenarios
            .iter()
            .filter(|r| r.source == "simulation" && r.morphology == m.name())
            .map(|r| r.omega_rad_per_s)
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    let mut common: Vec<f64> = speeds_of(morphs[0].0);
    for (m, _) in &morphs[1..] {
        let s = speeds_of(*m);
        common.retain(|w| s.contains(w));
    }
    for (m, _) in &morphs {
        if speeds_of(*m).len() < 3 {
            return Err(PipelineError::Invalid(format!(
                "morphology '{}' has fewer than 3 speeds",
                m.name()
            )));
        }
    }
    if common.is_empty() {
        return Err(PipelineError::Invalid(
            "morphologies share no common rotation speed".into(),
        ));
    }

    let flat_area = compute_lift_area(&LegGeometry {
        morphology: Morphology::Flat,
        length: 1.0,
        fl: morphs
            .iter()
            .find(|(m, _)| *m == Morphology::Flat)
            .map(|(_, fl)| *fl)
            .unwrap(),
    })?;

    let mut entries = Vec::with_capacity(morphs.len());
    for &(m, fl) in &morphs {
        let area = compute_lift_area(&LegGeometry {
            morphology: m,
            length: 1.0,
            fl,
        })?;
        let mu = friction_scale(m);
        let alpha = area / flat_area;
        let mut max_drag = Vec::with_capacity(common.len());
        let mut max_lift = Vec::with_capacity(common.len());
        for &w in &common {
            let rec = manifest
                .scenarios
                .iter()
                .find(|r| {
                    r.source == "simulation"
                        && r.morphology == m.name()
                        && r.omega_rad_per_s == w
                })
                .expect("speed came from this morphology's record set");
            let d = rec.trace.fx_n_per_m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let l = rec.trace.fz_n_per_m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if d == 0.0 || l == 0.0 {
                return Err(PipelineError::Invalid(format!(
                    "morphology '{}' at ω={w} has a flat (all-zero) force trace",
                    m.name()
                )));
            }
            max_drag.push(d);
            max_lift.push(l);
        }
        let factor = mu * alpha;
        entries.push(MorphologyScaling {
            morphology: m.name().to_string(),
            fl,
            mu,
            lift_area: area,
            alpha,
            scaled_drag: max_drag.iter().map(|v| v / factor).collect(),
            scaled_lift: max_lift.iter().map(|v| v / factor).collect(),
            max_drag,
            max_lift,
        });
    }

    let cov_over = |get: &dyn Fn(&MorphologyScaling) -> &Vec<f64>| -> Vec<f64> {
        (0..common.len())
            .map(|wi| {
                let vals: Vec<f64> = entries.iter().map(|e| get(e)[wi]).collect();
                coefficient_of_variation(&vals)
            })
            .collect()
    };

    let cov_drag_raw = cov_over(&|e| &e.max_drag);
    let cov_drag_scaled = cov_over(&|e| &e.scaled_drag);
    let cov_lift_raw = cov_over(&|e| &e.max_lift);
    let cov_lift_scaled = cov_over(&|e| &e.scaled_lift);
    Ok(ScalingReport {
        schema_version: crate::SCHEMA_VERSION.to_string(),
        omegas: common,
        cov_drag_raw,
        cov_drag_scaled,
        cov_lift_raw,
        cov_lift_scaled,
        morphologies: entries,
    })
}
