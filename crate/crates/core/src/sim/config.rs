//! Scenario configuration types for the granular SPH simulator, with
//! validation and a canonical SHA-256 digest used to tag output traces.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use super::SimError;

/// Leg profile families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Morphology {
    /// Straight segment from hip to toe.
    Flat,
    /// Semicircular arc (radius = length/2) bulging toward the direction of
    /// travel.
    CLeg,
    /// Semicircular arc bulging away from the direction of travel.
    ReversedC,
    /// Straight shank with a perpendicular foot at the toe, foot toward the
    /// direction of travel.
    LLeg,
    /// Straight shank with the foot away from the direction of travel.
    ReversedL,
}

impl Morphology {
    pub const ALL: [Morphology; 5] = [
        Morphology::Flat,
        Morphology::CLeg,
        Morphology::ReversedC,
        Morphology::LLeg,
        Morphology::ReversedL,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Morphology::Flat => "flat",
            Morphology::CLeg => "c_leg",
            Morphology::ReversedC => "reversed_c",
            Morphology::LLeg => "l_leg",
            Morphology::ReversedL => "reversed_l",
        }
    }

    /// True for the L-family morphologies that use the foot-length fraction.
    pub fn has_foot(&self) -> bool {
        matches!(self, Morphology::LLeg | Morphology::ReversedL)
    }
}

impl fmt::Display for Morphology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Morphology {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Morphology::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown morphology `{s}` (expected one of flat, c_leg, reversed_c, l_leg, reversed_l)"))
    }
}

/// Granular material parameters for the μ(I) rheology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialParams {
    /// Solid grain density ρ_s (kg/m³).
    pub grain_density: f64,
    /// Bulk (packed bed) density ρ₀ (kg/m³).
    pub bulk_density: f64,
    /// Representative grain diameter d (m).
    pub grain_diameter: f64,
    /// Quasi-static friction coefficient μ₁.
    pub mu1: f64,
    /// Dynamic-limit friction coefficient μ₂.
    pub mu2: f64,
    /// Reference inertial number I₀.
    pub i0: f64,
    /// Cohesion c (Pa); 0 for dry grains.
    pub cohesion: f64,
    /// Inertial-number threshold switching the deviatoric direction from the
    /// accumulated strain to the strain rate.
    pub inertial_switch: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            grain_density: 2600.0,
            // Packed glass beads at ~0.58 solid fraction.
            bulk_density: 1500.0,
            grain_diameter: 0.003,
            // Angle of repose 23 degrees; dynamic limit 33 degrees.
            mu1: (23.0_f64).to_radians().tan(),
            mu2: (33.0_f64).to_radians().tan(),
            // Literature value for glass beads (not a measured input).
            i0: 0.279,
            cohesion: 0.0,
            inertial_switch: 1e-3,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.mu1 > 0.0 && self.mu2 > self.mu1) {
            return Err(SimError::InvalidConfig(format!(
                "need 0 < mu1 < mu2 (got mu1 = {}, mu2 = {})",
                self.mu1, self.mu2
            )));
        }
        if !(self.i0 > 0.0) {
            return Err(SimError::InvalidConfig(format!("i0 must be > 0 (got {})", self.i0)));
        }
        if !(self.grain_diameter > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "grain diameter must be > 0 (got {})",
                self.grain_diameter
            )));
        }
        if !(self.cohesion >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "cohesion must be >= 0 (got {})",
                self.cohesion
            )));
        }
        if !(self.grain_density > 0.0 && self.bulk_density > 0.0) {
            return Err(SimError::InvalidConfig("densities must be > 0".into()));
        }
        if !(self.inertial_switch > 0.0) {
            return Err(SimError::InvalidConfig("inertial_switch must be > 0".into()));
        }
        Ok(())
    }
}

/// SPH discretization controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SphConfig {
    /// Initial particle spacing Δx (m).
    pub particle_spacing: f64,
    /// Smoothing length as a multiple of Δx (h = ratio·Δx, support 2h).
    pub smoothing_ratio: f64,
    /// Fixed time step; `None` selects dt = cfl·h/(1.2·c₀) automatically.
    pub dt: Option<f64>,
    /// Speed of sound; `None` selects c₀ = 10·max(√(g·H_fill), |ω|·L).
    pub sound_speed: Option<f64>,
    /// δ-SPH density-diffusion coefficient.
    pub delta_sph: f64,
    /// Monaghan artificial-viscosity coefficients (α, β).
    pub alpha_visc: f64,
    pub beta_visc: f64,
    /// Apply the Shepard density filter every this many steps; 0 disables
    /// it. Off by default: the renormalized density diffusion already
    /// controls acoustic noise, and periodic reinitialization biases the
    /// density upward where the filter's order-0 average meets a gradient
    /// against a boundary.
    pub shepard_interval: usize,
    /// Body force vector (m/s²).
    pub gravity: [f64; 2],
    /// CFL number for automatic dt selection.
    pub cfl: f64,
}

impl Default for SphConfig {
    fn default() -> Self {
        Self {
            particle_spacing: 0.005,
            smoothing_ratio: 1.3,
            dt: None,
            sound_speed: None,
            delta_sph: 0.1,
            alpha_visc: 1.0,
            beta_visc: 2.0,
            shepard_interval: 0,
            gravity: [0.0, -9.81],
            cfl: 0.25,
        }
    }
}

impl SphConfig {
    pub fn smoothing_length(&self) -> f64 {
        self.smoothing_ratio * self.particle_spacing
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.particle_spacing > 0.0) {
            return Err(SimError::InvalidConfig("particle spacing must be > 0".into()));
        }
        if !(self.smoothing_ratio >= 1.0 && self.smoothing_ratio <= 2.0) {
            return Err(SimError::InvalidConfig(format!(
                "smoothing ratio must lie in [1, 2] (got {})",
                self.smoothing_ratio
            )));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(SimError::InvalidConfig("dt must be > 0".into()));
            }
        }
        if let Some(c0) = self.sound_speed {
            if !(c0 > 0.0) {
                return Err(SimError::InvalidConfig("sound speed must be > 0".into()));
            }
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(SimError::InvalidConfig(format!(
                "cfl must lie in (0, 0.5] (got {})",
                self.cfl
            )));
        }
        if !(self.delta_sph >= 0.0 && self.alpha_visc >= 0.0 && self.beta_visc >= 0.0) {
            return Err(SimError::InvalidConfig(
                "delta_sph, alpha_visc, beta_visc must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Rigid leg profile description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LegGeometry {
    pub morphology: Morphology,
    /// Characteristic length L (m): hip-to-toe chord for all morphologies;
    /// the C-family arc radius is L/2.
    pub length: f64,
    /// Foot-length fraction for the L-family (foot length = fl·L).
    pub fl: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self { morphology: Morphology::Flat, length: 0.06, fl: 1.0 / 3.0 }
    }
}

impl LegGeometry {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.length > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "leg length must be > 0 (got {})",
                self.length
            )));
        }
        if self.morphology.has_foot() && !(self.fl > 0.0 && self.fl <= 1.5) {
            return Err(SimError::InvalidConfig(format!(
                "foot-length fraction must lie in (0, 1.5] for L-family legs (got {})",
                self.fl
            )));
        }
        Ok(())
    }

    /// Foot fraction actually used (0 for footless morphologies).
    pub fn effective_fl(&self) -> f64 {
        if self.morphology.has_foot() {
            self.fl
        } else {
            0.0
        }
    }
}

/// Reference for the hip height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HipReference {
    /// Height above the undisturbed fill surface (the assumed convention).
    Surface,
    /// Height above the container floor.
    Floor,
}

/// Prescribed leg motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicSchedule {
    /// Settling pause before rotation starts (s).
    pub pause_duration: f64,
    /// Hip height above the chosen reference (m).
    pub hip_height: f64,
    pub hip_reference: HipReference,
    /// Angular speed (rad/s). Positive sweeps θ from `theta_start` up to
    /// `theta_end`; negative sweeps down; zero holds at `theta_start` for
    /// `hold_duration`.
    pub omega: f64,
    /// Leg angle from vertical at the start of motion (rad).
    pub theta_start: f64,
    /// Leg angle at the end of motion (rad).
    pub theta_end: f64,
    /// Hold time for the static (ω = 0) protocol (s).
    pub hold_duration: f64,
}

impl Default for KinematicSchedule {
    fn default() -> Self {
        Self {
            pause_duration: 2.0,
            hip_height: 0.02,
            hip_reference: HipReference::Surface,
            omega: 1.0,
            theta_start: -3.0 * PI / 4.0,
            theta_end: 3.0 * PI / 4.0,
            hold_duration: 1.0,
        }
    }
}

impl KinematicSchedule {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.pause_duration >= 0.0) {
            return Err(SimError::InvalidConfig("pause duration must be >= 0".into()));
        }
        if !self.omega.is_finite() {
            return Err(SimError::InvalidConfig("omega must be finite".into()));
        }
        if self.omega > 0.0 && !(self.theta_end > self.theta_start) {
            return Err(SimError::InvalidConfig(
                "positive omega requires theta_end > theta_start".into(),
            ));
        }
        if self.omega < 0.0 && !(self.theta_end < self.theta_start) {
            return Err(SimError::InvalidConfig(
                "negative omega requires theta_end < theta_start".into(),
            ));
        }
        if self.omega == 0.0 && !(self.hold_duration > 0.0) {
            return Err(SimError::InvalidConfig(
                "static protocol (omega = 0) requires hold_duration > 0".into(),
            ));
        }
        Ok(())
    }

    /// Duration of the motion phase (s).
    pub fn motion_duration(&self) -> f64 {
        if self.omega == 0.0 {
            self.hold_duration
        } else {
            (self.theta_end - self.theta_start) / self.omega
        }
    }

    /// Leg angle at absolute time t (motion starts after the pause).
    pub fn theta_at(&self, t: f64) -> f64 {
        if t <= self.pause_duration || self.omega == 0.0 {
            return self.theta_start;
        }
        let th = self.theta_start + self.omega * (t - self.pause_duration);
        if self.omega > 0.0 {
            th.min(self.theta_end)
        } else {
            th.max(self.theta_end)
        }
    }

    /// Angular rate at absolute time t (zero during the pause and after the
    /// sweep completes).
    pub fn omega_at(&self, t: f64) -> f64 {
        if t <= self.pause_duration || self.omega == 0.0 {
            return 0.0;
        }
        let done = (self.theta_end - self.theta_start) / self.omega;
        if t - self.pause_duration >= done {
            0.0
        } else {
            self.omega
        }
    }
}

/// Container and fill description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainConfig {
    /// Interior container width (m), centered on x = 0.
    pub width: f64,
    /// Undisturbed grain fill height above the floor (m).
    pub fill_height: f64,
    /// Number of dummy boundary layers for floor and walls.
    pub wall_layers: usize,
    /// Random lattice perturbation amplitude as a fraction of Δx.
    pub jitter_frac: f64,
    /// Initialize the density field hydrostatically (ρ = ρ₀(1 + g·depth/c₀²)).
    pub hydrostatic_init: bool,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            width: 0.30,
            fill_height: 0.10,
            wall_layers: 3,
            jitter_frac: 0.05,
            hydrostatic_init: true,
        }
    }
}

impl DomainConfig {
    pub fn validate(&self, dx: f64) -> Result<(), SimError> {
        if !(self.width > 4.0 * dx && self.fill_height > 4.0 * dx) {
            return Err(SimError::InvalidConfig(format!(
                "domain ({} x {}) must be at least 4 particle spacings ({dx})",
                self.width, self.fill_height
            )));
        }
        if self.wall_layers < 2 {
            return Err(SimError::InvalidConfig("need at least 2 wall layers".into()));
        }
        if !(self.jitter_frac >= 0.0 && self.jitter_frac < 0.5) {
            return Err(SimError::InvalidConfig(format!(
                "jitter fraction must lie in [0, 0.5) (got {})",
                self.jitter_frac
            )));
        }
        Ok(())
    }
}

/// Full scenario: everything needed to reproduce one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub schema_version: String,
    pub material: MaterialParams,
    pub sph: SphConfig,
    pub domain: DomainConfig,
    pub leg: LegGeometry,
    pub schedule: KinematicSchedule,
    /// Seed for the lattice jitter.
    pub seed: u64,
    /// Record one force sample every this many steps (window-averaged).
    pub sample_stride: usize,
    /// Number of points in the resampled output trace.
    pub trace_points: usize,
    /// Output CSV path (optional; the CLI may override).
    pub output: Option<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: crate::SCHEMA_VERSION.to_string(),
            material: MaterialParams::default(),
            sph: SphConfig::default(),
            domain: DomainConfig::default(),
            leg: LegGeometry::default(),
            schedule: KinematicSchedule::default(),
            seed: 7,
            sample_stride: 20,
            trace_points: 128,
            output: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !crate::schema_compatible(&self.schema_version) {
            return Err(SimError::InvalidConfig(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        self.material.validate()?;
        self.sph.validate()?;
        self.domain.validate(self.sph.particle_spacing)?;
        self.leg.validate()?;
        self.schedule.validate()?;
        if self.sample_stride == 0 {
            return Err(SimError::InvalidConfig("sample stride must be >= 1".into()));
        }
        if self.trace_points < 2 {
            return Err(SimError::InvalidConfig("trace needs at least 2 points".into()));
        }
        // The leg must fit inside the container with room to spare.
        let reach = self.leg.length * (1.0 + self.leg.effective_fl());
        if reach >= self.domain.width / 2.0 {
            return Err(SimError::InvalidConfig(format!(
                "leg reach {} m does not fit in half-width {} m",
                reach,
                self.domain.width / 2.0
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| SimError::InvalidConfig(format!("config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 digest of the canonical JSON serialization; stable across
    /// runs and platforms because field order and float formatting are fixed.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialization cannot fail");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}
