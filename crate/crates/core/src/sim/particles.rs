//! Particle state storage (structure-of-arrays) and scene assembly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{HipReference, ScenarioConfig};
use super::geometry::{self, ProfilePoint};
use super::kernel;

/// Particle role. Bulk particles integrate the momentum equation; boundary
/// particles have prescribed motion but carry density/pressure (dynamic
/// boundary particles), repelling approaching grains through the pressure
/// interaction itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleKind {
    Bulk,
    ContainerBoundary,
    LegBoundary,
}

/// Structure-of-arrays particle storage. Symmetric 2×2 tensors are packed as
/// `[xx, xz, zz]`.
#[derive(Debug, Clone)]
pub struct Particles {
    pub pos: Vec<[f64; 2]>,
    pub vel: Vec<[f64; 2]>,
    pub rho: Vec<f64>,
    pub pressure: Vec<f64>,
    /// Accumulated strain tensor E (integrated Δt·D).
    pub strain: Vec<[f64; 3]>,
    pub mass: Vec<f64>,
    pub kind: Vec<ParticleKind>,
    /// Index ranges: bulk = 0..n_bulk, container = n_bulk..n_bulk+n_container,
    /// leg = the rest. Kinds are stored per particle as well for clarity.
    pub n_bulk: usize,
    pub n_container: usize,
    pub n_leg: usize,
}

impl Particles {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn bulk_range(&self) -> std::ops::Range<usize> {
        0..self.n_bulk
    }

    pub fn leg_range(&self) -> std::ops::Range<usize> {
        (self.n_bulk + self.n_container)..self.len()
    }

    /// Total mass (must stay exactly constant over a run).
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// The assembled scene: particle state plus the leg's local profile and hip
/// position needed to drive the kinematics.
#[derive(Debug, Clone)]
pub struct Scene {
    pub particles: Particles,
    /// Leg profile points in the leg frame, one per leg boundary particle.
    pub leg_local: Vec<ProfilePoint>,
    /// Hip position in the world frame.
    pub hip: [f64; 2],
    /// Undisturbed fill surface height.
    pub surface_z: f64,
    /// Top of the container side walls.
    pub wall_top: f64,
}

/// Builds the scene from a validated configuration: container dummy layers,
/// jittered bulk lattice, and leg boundary particles posed at θ_start.
/// Bulk lattice sites overlapping the initial leg pose are carved out after
/// the jitter draws, so the jitter stream (two draws per lattice site in
/// row-major order) is independent of the leg and bit-reproducible for a
/// fixed seed.
pub fn build_scene(cfg: &ScenarioConfig, c0: f64) -> Scene {
    let dx = cfg.sph.particle_spacing;
    let rho0 = cfg.material.bulk_density;
    let m = rho0 * dx * dx;
    let surface_z = (cfg.domain.fill_height / dx).floor() * dx;

    let hip_z = match cfg.schedule.hip_reference {
        HipReference::Surface => surface_z + cfg.schedule.hip_height,
        HipReference::Floor => cfg.schedule.hip_height,
    };
    let hip = [0.0, hip_z];

    // Walls must contain both the fill and the leg sweep.
    let reach = cfg.leg.length * (1.0 + cfg.leg.effective_fl());
    let wall_top = (surface_z + reach).max(hip_z + reach) + 4.0 * dx;

    // Leg boundary particles at θ_start, spaced Δx/2 along the profile.
    let leg_local = geometry::leg_profile(&cfg.leg, dx / 2.0);
    let leg_pos: Vec<[f64; 2]> = leg_local
        .iter()
        .map(|&p| geometry::place_point(p, hip, cfg.schedule.theta_start))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = cfg.domain.jitter_frac * dx;
    let mut pos: Vec<[f64; 2]> = Vec::new();
    let mut kind: Vec<ParticleKind> = Vec::new();

    // Bulk first (jittered lattice), carving out grains that would overlap a
    // leg that starts submerged.
    let clearance2 = (0.7 * dx) * (0.7 * dx);
    for p in geometry::bulk_lattice(cfg.domain.width, cfg.domain.fill_height, dx) {
        let jx: f64 = rng.gen_range(-1.0..1.0) * jitter;
        let jz: f64 = rng.gen_range(-1.0..1.0) * jitter;
        let q = [p[0] + jx, p[1] + jz];
        let overlaps_leg = leg_pos.iter().any(|l| {
            let dx0 = q[0] - l[0];
            let dz0 = q[1] - l[1];
            dx0 * dx0 + dz0 * dz0 < clearance2
        });
        if overlaps_leg {
            continue;
        }
        pos.push(q);
        kind.push(ParticleKind::Bulk);
    }
    let n_bulk = pos.len();

    // Container dummy particles.
    for p in geometry::container_particles(cfg.domain.width, wall_top, cfg.domain.wall_layers, dx)
    {
        pos.push(p);
        kind.push(ParticleKind::ContainerBoundary);
    }
    let n_container = pos.len() - n_bulk;

    for &p in &leg_pos {
        pos.push(p);
        kind.push(ParticleKind::LegBoundary);
    }
    let n_leg = leg_local.len();

    let n = pos.len();
    let g_mag = (cfg.sph.gravity[0].powi(2) + cfg.sph.gravity[1].powi(2)).sqrt();
    let mut rho = vec![rho0; n];
    if cfg.domain.hydrostatic_init {
        // Stratify everything below the fill surface (submerged leg
        // particles included) so the initial pressure field already balances
        // gravity and the settling transient is minimal:
        // ρ = ρ₀(1 + g·depth/c₀²).
        for i in 0..n {
            let depth = (surface_z - pos[i][1]).max(0.0);
            rho[i] = rho0 * (1.0 + g_mag * depth / (c0 * c0));
        }
    }
    let pressure: Vec<f64> = rho.iter().map(|r| c0 * c0 * (r - rho0)).collect();

    Scene {
        particles: Particles {
            pos,
            vel: vec![[0.0, 0.0]; n],
            rho,
            pressure,
            strain: vec![[0.0, 0.0, 0.0]; n],
            mass: vec![m; n],
            kind,
            n_bulk,
            n_container,
            n_leg,
        },
        leg_local,
        hip,
        surface_z,
        wall_top,
    }
}

/// Summation density ρ_i = Σ_j m_j W_ij (including the self term), used at
/// initialization and by the Shepard filter's numerator. Returns the number
/// of effectively isolated particles (only the self contribution), which
/// callers surface as a diagnostic.
pub fn summation_density(
    pos: &[[f64; 2]],
    mass: &[f64],
    h: f64,
    neighbors: &super::neighbors::NeighborLists,
    out: &mut Vec<f64>,
) -> usize {
    let w0 = kernel::kernel(0.0, h);
    out.clear();
    out.resize(pos.len(), 0.0);
    let mut isolated = 0usize;
    for i in 0..pos.len() {
        let mut sum = mass[i] * w0;
        let mut any = false;
        for &j in neighbors.of(i) {
            let dx = pos[i][0] - pos[j][0];
            let dz = pos[i][1] - pos[j][1];
            let r = (dx * dx + dz * dz).sqrt();
            let w = kernel::kernel(r, h);
            if w > 0.0 {
                any = true;
            }
            sum += mass[j] * w;
        }
        if !any {
            isolated += 1;
        }
        out[i] = sum;
    }
    isolated
}
