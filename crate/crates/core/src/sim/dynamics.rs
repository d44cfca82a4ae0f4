//! Rate evaluation for the weakly compressible granular SPH scheme:
//! continuity with density diffusion, μ(I) rheology, momentum with
//! artificial viscosity, and the periodic Shepard density filter.
//!
//! Conventions:
//! - symmetric 2×2 tensors are packed `[xx, xz, zz]`;
//! - the tensor norm is the second-invariant norm |T| = √(½ T:T);
//! - accelerations exclude gravity (the integrator adds it), which lets the
//!   momentum-balance diagnostic compare the interaction forces alone;
//! - all pair loops run in a fixed order (ascending i, then ascending j),
//!   so results are bit-reproducible.

use super::config::MaterialParams;
use super::kernel;
use super::neighbors::NeighborLists;
use super::particles::{ParticleKind, Particles};

/// Derived per-run physical parameters shared by every rate evaluation.
#[derive(Debug, Clone)]
pub struct SimParams {
    /// Smoothing length.
    pub h: f64,
    /// Numerical sound speed of the linear equation of state.
    pub c0: f64,
    /// Reference (packed bed) density.
    pub rho0: f64,
    /// δ-SPH density-diffusion coefficient.
    pub delta_sph: f64,
    /// Artificial-viscosity linear coefficient α.
    pub alpha_visc: f64,
    /// Artificial-viscosity quadratic coefficient β.
    pub beta_visc: f64,
    /// Body force (m/s²); the density diffusion subtracts the hydrostatic
    /// gradient this force sustains at equilibrium.
    pub gravity: [f64; 2],
    pub material: MaterialParams,
}

/// Neumaier compensated accumulator (Kahan–Babuška variant) for sums whose
/// terms largely cancel, as in the force bookkeeping behind the
/// momentum-balance diagnostic.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Linear equation of state P = c₀²(ρ − ρ₀). May return negative values;
/// stress assembly clamps to zero because loose grains carry no tension.
#[inline]
pub fn eos_pressure(rho: f64, rho0: f64, c0: f64) -> f64 {
    c0 * c0 * (rho - rho0)
}

/// Rate-dependent friction coefficient μ(I) = μ₁ + (μ₂ − μ₁)/(1 + I₀/I).
/// At I = 0 the IEEE division gives I₀/0 = ∞ and the expression collapses to
/// μ₁, the quasi-static limit, without a special case.
#[inline]
pub fn mu_of_inertial(i: f64, mat: &MaterialParams) -> f64 {
    mat.mu1 + (mat.mu2 - mat.mu1) / (1.0 + mat.i0 / i)
}

/// Inertial number I = |D| d / √(P/ρ_s), with the pressure floored at 1 Pa
/// so free-surface grains (P → 0) stay finite.
#[inline]
pub fn inertial_number(shear_norm: f64, pressure: f64, mat: &MaterialParams) -> f64 {
    shear_norm * mat.grain_diameter / (pressure.max(1.0) / mat.grain_density).sqrt()
}

/// Second-invariant norm |T| = √(½ T:T) of a packed symmetric tensor.
#[inline]
pub fn tensor_norm(t: &[f64; 3]) -> f64 {
    (0.5 * (t[0] * t[0] + 2.0 * t[1] * t[1] + t[2] * t[2])).sqrt()
}

/// Deviatoric (trace-free) part of a packed symmetric tensor.
#[inline]
pub fn deviatoric(t: &[f64; 3]) -> [f64; 3] {
    let half_tr = 0.5 * (t[0] + t[2]);
    [t[0] - half_tr, t[1], t[2] - half_tr]
}

/// Assembles the granular stress σ = −P̄·I + (μ(I)·P̄ + c)·T̂ with
/// P̄ = max(P, 0). The deviatoric direction T̂ comes from the strain rate D
/// in the inertial regime (I above the switch threshold) and from the
/// accumulated strain E in the quasi-static regime; if the driver tensor is
/// numerically zero the material is unsheared and the stress is isotropic.
pub fn granular_stress(
    pressure: f64,
    rate: &[f64; 3],
    strain: &[f64; 3],
    mat: &MaterialParams,
) -> [f64; 3] {
    let p = pressure.max(0.0);
    let dev_rate = deviatoric(rate);
    let shear = tensor_norm(&dev_rate);
    let inertial = inertial_number(shear, pressure, mat);
    let driver = if inertial > mat.inertial_switch {
        dev_rate
    } else {
        deviatoric(strain)
    };
    let dn = tensor_norm(&driver);
    if dn < 1e-10 {
        return [-p, 0.0, -p];
    }
    let strength = (mu_of_inertial(inertial, mat) * p + mat.cohesion) / dn;
    [
        -p + strength * driver[0],
        strength * driver[1],
        -p + strength * driver[2],
    ]
}

/// Monaghan artificial viscosity Π_ij for one pair: zero unless the pair is
/// approaching (v_ij·r_ij < 0), otherwise (−α c̄ μ_ij + β μ_ij²)/ρ̄ with
/// μ_ij = h v_ij·r_ij / (r² + 0.01h²).
#[inline]
pub fn artificial_viscosity(
    v_dot_r: f64,
    r2: f64,
    rho_i: f64,
    rho_j: f64,
    h: f64,
    c0: f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    if v_dot_r >= 0.0 {
        return 0.0;
    }
    let mu = h * v_dot_r / (r2 + 0.01 * h * h);
    (-alpha * c0 * mu + beta * mu * mu) / (0.5 * (rho_i + rho_j))
}

/// Scratch and output buffers for rate evaluation, reused across steps to
/// avoid per-step allocation.
#[derive(Debug, Default)]
pub struct RateBuffers {
    // Cached half-pairs (i < j, at least one bulk, within the support).
    pair_i: Vec<u32>,
    pair_j: Vec<u32>,
    pair_grad: Vec<[f64; 2]>,
    /// dρ/dt for every particle (boundary densities evolve too).
    pub drho: Vec<f64>,
    /// Acceleration from interactions, excluding gravity. Bulk entries only;
    /// boundary entries stay zero.
    pub acc: Vec<[f64; 2]>,
    /// Strain rate D (symmetrized velocity gradient) for bulk particles.
    pub rate_of_strain: Vec<[f64; 3]>,
    /// Clamped pressure max(P, 0) per particle.
    pub pressure: Vec<f64>,
    stress_over_rho2: Vec<[f64; 3]>,
    /// Net force per unit depth exerted by the grains on the leg.
    pub leg_force: [f64; 2],
    /// Net force exerted by all boundary particles (container + leg) on the
    /// bulk.
    pub boundary_force_on_bulk: [f64; 2],
    /// Net interaction force on the bulk, Σᵢ mᵢaᵢ over bulk particles. Up to
    /// rounding this must equal `boundary_force_on_bulk`: the bulk–bulk
    /// contributions cancel pairwise by Newton's third law.
    pub interaction_force_on_bulk: [f64; 2],
}

impl RateBuffers {
    pub fn new() -> Self {
        Self::default()
    }

    /// Relative momentum-balance residual of the last evaluation:
    /// |Σmᵢaᵢ − F_boundary| scaled by the gross force level
    /// (|F_boundary| + M_bulk·|g|). Exactly zero sums yield zero.
    pub fn momentum_residual(&self, bulk_mass: f64, gravity: [f64; 2]) -> f64 {
        let ax = self.interaction_force_on_bulk[0] - self.boundary_force_on_bulk[0];
        let az = self.interaction_force_on_bulk[1] - self.boundary_force_on_bulk[1];
        let diff = (ax * ax + az * az).sqrt();
        let fb = (self.boundary_force_on_bulk[0].powi(2)
            + self.boundary_force_on_bulk[1].powi(2))
        .sqrt();
        let g = (gravity[0] * gravity[0] + gravity[1] * gravity[1]).sqrt();
        let scale = fb + bulk_mass * g;
        if diff == 0.0 {
            0.0
        } else {
            diff / scale.max(f64::MIN_POSITIVE)
        }
    }
}

/// Cubic-spline value and radial derivative with a precomputed normalization
/// constant; must stay formula-identical to [`kernel::kernel`] and
/// [`kernel::kernel_deriv`].
#[inline]
fn kernel_w_dw(r: f64, h: f64, sig: f64) -> (f64, f64) {
    let q = r / h;
    if q <= 1.0 {
        (
            sig * (1.0 - 1.5 * q * q + 0.75 * q * q * q),
            sig * (-3.0 * q + 2.25 * q * q) / h,
        )
    } else if q < 2.0 {
        let t = 2.0 - q;
        (sig * 0.25 * t * t * t, -0.75 * sig * t * t / h)
    } else {
        (0.0, 0.0)
    }
}

/// Evaluates all rates at the state currently stored in `p` (positions,
/// velocities, densities, accumulated strain). Boundary-boundary pairs are
/// skipped: within each rigid group the relative velocities describe a
/// divergence-free motion whose continuity contribution vanishes, and the
/// groups never overlap.
pub fn evaluate_rates(
    p: &Particles,
    params: &SimParams,
    lists: &NeighborLists,
    buf: &mut RateBuffers,
) {
    let n = p.len();
    let h = params.h;
    let sig = kernel::sigma(h);
    let support2 = 4.0 * h * h;
    let dcoef = params.delta_sph * h * params.c0;

    buf.drho.clear();
    buf.drho.resize(n, 0.0);
    buf.acc.clear();
    buf.acc.resize(n, [0.0, 0.0]);
    buf.rate_of_strain.clear();
    buf.rate_of_strain.resize(n, [0.0, 0.0, 0.0]);
    buf.pressure.clear();
    buf.pressure.resize(n, 0.0);
    buf.stress_over_rho2.clear();
    buf.stress_over_rho2.resize(n, [0.0, 0.0, 0.0]);
    buf.pair_i.clear();
    buf.pair_j.clear();
    buf.pair_grad.clear();

    let pos = &p.pos;
    let vel = &p.vel;
    let rho = &p.rho;
    let mass = &p.mass;
    let kind = &p.kind;

    // Hydrostatic density slope sustained by the body force at equilibrium:
    // with P = c₀²(ρ − ρ₀), momentum balance needs ∇ρ = ρ₀ g⃗/c₀² (to first
    // order in g·H/c₀²). The δ-diffusion pair term below subtracts this
    // difference so the equilibrium stratification carries no diffusive
    // flux; the plain (ρⱼ−ρᵢ) form slowly flattens it wherever the kernel
    // support is one-sided (free surface, walls), pumping the shallow
    // pressure up and draining the deep bed over long runs.
    let hyd = [
        params.gravity[0] * params.rho0 / (params.c0 * params.c0),
        params.gravity[1] * params.rho0 / (params.c0 * params.c0),
    ];

    // Pass 1: pair cache, continuity (+ δ-diffusion), velocity gradients.
    for i in 0..n {
        let bulk_i = kind[i] == ParticleKind::Bulk;
        let (xi, zi) = (pos[i][0], pos[i][1]);
        let (vxi, vzi) = (vel[i][0], vel[i][1]);
        for &j in lists.of(i) {
            if j <= i {
                continue;
            }
            let bulk_j = kind[j] == ParticleKind::Bulk;
            if !bulk_i && !bulk_j {
                continue;
            }
            let rx = xi - pos[j][0];
            let rz = zi - pos[j][1];
            let r2 = rx * rx + rz * rz;
            if r2 >= support2 || r2 == 0.0 {
                continue;
            }
            let r = r2.sqrt();
            let (_w, dw) = kernel_w_dw(r, h, sig);
            let gs = dw / r;
            let gx = gs * rx;
            let gz = gs * rz;

            let dvx = vxi - vel[j][0];
            let dvz = vzi - vel[j][1];
            let vdotg = dvx * gx + dvz * gz;
            // Continuity: the i→j and j→i scalars coincide exactly.
            buf.drho[i] += mass[j] * vdotg;
            buf.drho[j] += mass[i] * vdotg;

            if bulk_i && bulk_j && dcoef != 0.0 {
                // δ-SPH diffusion, bulk-bulk only (a wall would otherwise
                // leak density through the interface). Subtracting the
                // hydrostatic difference diffuses only the deviation from
                // equilibrium stratification.
                let rdotg = rx * gx + rz * gz;
                let d_rho = rho[j] - rho[i] + hyd[0] * rx + hyd[1] * rz;
                let s = 2.0 * d_rho * (-rdotg) / r2;
                buf.drho[i] += dcoef * (mass[j] / rho[j]) * s;
                buf.drho[j] += dcoef * (mass[i] / rho[i]) * (-s);
            }

            // Velocity gradient accumulation: O = (v_j − v_i) ⊗ ∇W is the
            // same tensor for both orientations of the pair.
            let oxx = -dvx * gx;
            let ozz = -dvz * gz;
            let oxz = 0.5 * (-dvx * gz + -dvz * gx);
            if bulk_i {
                let c = mass[j] / rho[j];
                let d = &mut buf.rate_of_strain[i];
                d[0] += c * oxx;
                d[1] += c * oxz;
                d[2] += c * ozz;
            }
            if bulk_j {
                let c = mass[i] / rho[i];
                let d = &mut buf.rate_of_strain[j];
                d[0] += c * oxx;
                d[1] += c * oxz;
                d[2] += c * ozz;
            }

            buf.pair_i.push(i as u32);
            buf.pair_j.push(j as u32);
            buf.pair_grad.push([gx, gz]);
        }
    }

    // Per-particle stress. Boundary particles carry pressure only; the
    // tangential traction a wall feels comes through the grain-side stress.
    for i in 0..n {
        let praw = eos_pressure(rho[i], params.rho0, params.c0);
        let pcl = praw.max(0.0);
        buf.pressure[i] = pcl;
        let sigma = if kind[i] == ParticleKind::Bulk {
            granular_stress(praw, &buf.rate_of_strain[i], &p.strain[i], &params.material)
        } else {
            [-pcl, 0.0, -pcl]
        };
        let inv_rho2 = 1.0 / (rho[i] * rho[i]);
        buf.stress_over_rho2[i] = [sigma[0] * inv_rho2, sigma[1] * inv_rho2, sigma[2] * inv_rho2];
    }

    // Pass 2: momentum and force bookkeeping over the cached pairs.
    let mut leg = [Neumaier::default(); 2];
    let mut fb = [Neumaier::default(); 2];
    for k in 0..buf.pair_i.len() {
        let i = buf.pair_i[k] as usize;
        let j = buf.pair_j[k] as usize;
        let [gx, gz] = buf.pair_grad[k];

        let si = &buf.stress_over_rho2[i];
        let sj = &buf.stress_over_rho2[j];
        let sxx = si[0] + sj[0];
        let sxz = si[1] + sj[1];
        let szz = si[2] + sj[2];

        let rx = pos[i][0] - pos[j][0];
        let rz = pos[i][1] - pos[j][1];
        let r2 = rx * rx + rz * rz;
        let dvx = vel[i][0] - vel[j][0];
        let dvz = vel[i][1] - vel[j][1];
        let vdotr = dvx * rx + dvz * rz;
        let visc = artificial_viscosity(
            vdotr,
            r2,
            rho[i],
            rho[j],
            h,
            params.c0,
            params.alpha_visc,
            params.beta_visc,
        );

        let tx = (sxx - visc) * gx + sxz * gz;
        let tz = sxz * gx + (szz - visc) * gz;

        let (ki, kj) = (kind[i], kind[j]);
        if ki == ParticleKind::Bulk {
            buf.acc[i][0] += mass[j] * tx;
            buf.acc[i][1] += mass[j] * tz;
        }
        if kj == ParticleKind::Bulk {
            buf.acc[j][0] -= mass[i] * tx;
            buf.acc[j][1] -= mass[i] * tz;
        }
        if ki == ParticleKind::Bulk && kj != ParticleKind::Bulk {
            // Force on bulk i from boundary j; reaction goes to the boundary.
            let f = mass[i] * mass[j];
            fb[0].add(f * tx);
            fb[1].add(f * tz);
            if kj == ParticleKind::LegBoundary {
                leg[0].add(-(f * tx));
                leg[1].add(-(f * tz));
            }
        } else if kj == ParticleKind::Bulk && ki != ParticleKind::Bulk {
            let f = mass[i] * mass[j];
            fb[0].add(-(f * tx));
            fb[1].add(-(f * tz));
            if ki == ParticleKind::LegBoundary {
                leg[0].add(f * tx);
                leg[1].add(f * tz);
            }
        }
    }

    let mut a = [Neumaier::default(), Neumaier::default()];
    for i in 0..n {
        if kind[i] == ParticleKind::Bulk {
            a[0].add(mass[i] * buf.acc[i][0]);
            a[1].add(mass[i] * buf.acc[i][1]);
        }
    }
    buf.leg_force = [leg[0].total(), leg[1].total()];
    buf.boundary_force_on_bulk = [fb[0].total(), fb[1].total()];
    buf.interaction_force_on_bulk = [a[0].total(), a[1].total()];
}

/// Minimum Shepard normalization Σⱼ (mⱼ/ρⱼ)Wᵢⱼ for the filter to apply.
/// The sum is the kernel partition of unity: ≈ 1 in the interior, well
/// below 1 where the support sticks out of the material. Filtering a
/// truncated-support particle would replace its density with the kernel
/// average of its one-sided (deeper, denser) neighborhood and pump the
/// free-surface density upward on every application.
const SHEPARD_FULL_SUPPORT: f64 = 0.96;

/// Shepard density filter for bulk particles: ρᵢ ← Σⱼ mⱼWᵢⱼ / Σⱼ (mⱼ/ρⱼ)Wᵢⱼ
/// with the sums including the particle itself and all neighbor kinds.
/// Particles whose kernel support is materially truncated (free surface)
/// keep their continuity-evolved density. The new densities are computed
/// from the pre-filter field before any are written back.
pub fn shepard_filter(p: &mut Particles, h: f64, lists: &NeighborLists, scratch: &mut Vec<f64>) {
    let w0 = kernel::kernel(0.0, h);
    let n_bulk = p.n_bulk;
    scratch.clear();
    scratch.reserve(n_bulk);
    for i in 0..n_bulk {
        let mut num = p.mass[i] * w0;
        let mut den = p.mass[i] / p.rho[i] * w0;
        for &j in lists.of(i) {
            let dx = p.pos[i][0] - p.pos[j][0];
            let dz = p.pos[i][1] - p.pos[j][1];
            let r = (dx * dx + dz * dz).sqrt();
            let w = kernel::kernel(r, h);
            num += p.mass[j] * w;
            den += p.mass[j] / p.rho[j] * w;
        }
        scratch.push(if den >= SHEPARD_FULL_SUPPORT {
            num / den
        } else {
            p.rho[i]
        });
    }
    p.rho[..n_bulk].copy_from_slice(scratch);
}
