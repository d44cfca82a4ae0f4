//! Particle layouts: leg profiles in the leg frame, rigid-body placement of
//! the leg in the world frame, and container/bulk lattice generation.
//!
//! Conventions: the world frame is x horizontal, z vertical (up), gravity
//! along −z. The leg hangs from the hip; its axis direction at angle θ from
//! the downward vertical is û(θ) = (sin θ, −cos θ), and the transverse
//! direction is n̂(θ) = (cos θ, sin θ). θ increases in the direction of a
//! positive-ω sweep, so at θ = 0 the leg points straight down and the
//! transverse (+n) side faces the direction of travel.

use super::config::{LegGeometry, Morphology};

/// A point of the leg profile in the leg frame: `s` along the hip→toe axis,
/// `n` transverse (positive toward the direction of travel at θ = 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub s: f64,
    pub n: f64,
}

/// Samples the leg profile as a polyline with point spacing at most
/// `spacing` (boundary particles use Δx/2 to prevent leakage). The first
/// point is always the hip (s = 0, n = 0).
pub fn leg_profile(leg: &LegGeometry, spacing: f64) -> Vec<ProfilePoint> {
    assert!(spacing > 0.0);
    let l = leg.length;
    match leg.morphology {
        Morphology::Flat => segment([0.0, 0.0], [l, 0.0], spacing),
        Morphology::CLeg => arc(l, spacing, 1.0),
        Morphology::ReversedC => arc(l, spacing, -1.0),
        Morphology::LLeg => l_shape(l, leg.fl * l, spacing, 1.0),
        Morphology::ReversedL => l_shape(l, leg.fl * l, spacing, -1.0),
    }
}

/// Straight polyline from `a` to `b` in (s, n) coordinates.
fn segment(a: [f64; 2], b: [f64; 2], spacing: f64) -> Vec<ProfilePoint> {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let n = (len / spacing).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            ProfilePoint { s: a[0] + t * (b[0] - a[0]), n: a[1] + t * (b[1] - a[1]) }
        })
        .collect()
}

/// Semicircular arc from hip (0,0) to toe (L,0) with radius L/2, bulging to
/// `side`·n. Parameterized by τ ∈ [0, π] about the chord midpoint (L/2, 0).
fn arc(l: f64, spacing: f64, side: f64) -> Vec<ProfilePoint> {
    let r = l / 2.0;
    let arc_len = std::f64::consts::PI * r;
    let n = (arc_len / spacing).ceil().max(2.0) as usize;
    (0..=n)
        .map(|i| {
            let tau = std::f64::consts::PI * i as f64 / n as f64;
            ProfilePoint { s: r - r * tau.cos(), n: side * r * tau.sin() }
        })
        .collect()
}

/// Shank from hip to toe plus a perpendicular foot of length `foot` at the
/// toe, toward `side`·n.
fn l_shape(l: f64, foot: f64, spacing: f64, side: f64) -> Vec<ProfilePoint> {
    let mut pts = segment([0.0, 0.0], [l, 0.0], spacing);
    let mut foot_pts = segment([l, 0.0], [l, side * foot], spacing);
    foot_pts.remove(0); // the toe is already present
    pts.extend(foot_pts);
    pts
}

/// Leg axis direction û(θ) = (sin θ, −cos θ).
#[inline]
pub fn axis_dir(theta: f64) -> [f64; 2] {
    [theta.sin(), -theta.cos()]
}

/// Transverse direction n̂(θ) = (cos θ, sin θ) (û rotated +90°).
#[inline]
pub fn transverse_dir(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

/// World position of a profile point for hip position and leg angle.
#[inline]
pub fn place_point(p: ProfilePoint, hip: [f64; 2], theta: f64) -> [f64; 2] {
    let u = axis_dir(theta);
    let n = transverse_dir(theta);
    [hip[0] + p.s * u[0] + p.n * n[0], hip[1] + p.s * u[1] + p.n * n[1]]
}

/// Rigid-rotation velocity of a world point about the hip at rate ω:
/// v = ω · R₉₀ · (x − hip) where R₉₀ is the +90° rotation.
#[inline]
pub fn rigid_velocity(point: [f64; 2], hip: [f64; 2], omega: f64) -> [f64; 2] {
    let rx = point[0] - hip[0];
    let rz = point[1] - hip[1];
    [-omega * rz, omega * rx]
}

/// Container boundary lattice: `layers` rows of dummy particles under the
/// floor (z < 0) and `layers` columns outside each wall (|x| > width/2),
/// with walls extending from the floor up to `wall_top`.
pub fn container_particles(
    width: f64,
    wall_top: f64,
    layers: usize,
    dx: f64,
) -> Vec<[f64; 2]> {
    let half = width / 2.0;
    let mut pts = Vec::new();
    // Floor rows, spanning under the walls too.
    let x_lo = -half - layers as f64 * dx;
    let nx = ((2.0 * half + 2.0 * layers as f64 * dx) / dx).round() as usize;
    for layer in 0..layers {
        let z = -(layer as f64 + 0.5) * dx;
        for i in 0..nx {
            pts.push([x_lo + (i as f64 + 0.5) * dx, z]);
        }
    }
    // Side walls from the floor to wall_top.
    let nz = (wall_top / dx).ceil() as usize;
    for layer in 0..layers {
        let off = half + (layer as f64 + 0.5) * dx;
        for k in 0..nz {
            let z = (k as f64 + 0.5) * dx;
            pts.push([-off, z]);
            pts.push([off, z]);
        }
    }
    pts
}

/// Bulk grain lattice filling the interior up to `fill_height`; positions
/// are row-major (z outer, x inner) for a deterministic jitter draw order.
pub fn bulk_lattice(width: f64, fill_height: f64, dx: f64) -> Vec<[f64; 2]> {
    let half = width / 2.0;
    let nx = (width / dx).floor() as usize;
    let nz = (fill_height / dx).floor() as usize;
    let mut pts = Vec::with_capacity(nx * nz);
    for k in 0..nz {
        let z = (k as f64 + 0.5) * dx;
        for i in 0..nx {
            pts.push([-half + (i as f64 + 0.5) * dx, z]);
        }
    }
    pts
}
