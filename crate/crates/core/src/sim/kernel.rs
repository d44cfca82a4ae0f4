//! 2-D cubic-spline smoothing kernel with support radius 2h.
//!
//! W(q) = σ·(1 − 1.5q² + 0.75q³)   for 0 ≤ q ≤ 1
//!      = σ·0.25·(2 − q)³          for 1 < q ≤ 2
//!      = 0                        beyond
//!
//! with q = r/h and the 2-D normalization σ = 10/(7πh²), so that the kernel
//! integrates to one over the plane (verified by an independent quadrature
//! oracle).

use std::f64::consts::PI;

/// 2-D normalization constant σ = 10/(7πh²).
#[inline]
pub fn sigma(h: f64) -> f64 {
    10.0 / (7.0 * PI * h * h)
}

/// Kernel value W(r, h).
#[inline]
pub fn kernel(r: f64, h: f64) -> f64 {
    debug_assert!(h > 0.0);
    let q = r / h;
    let s = sigma(h);
    if q <= 1.0 {
        s * (1.0 - 1.5 * q * q + 0.75 * q * q * q)
    } else if q < 2.0 {
        let t = 2.0 - q;
        s * 0.25 * t * t * t
    } else {
        0.0
    }
}

/// Radial derivative dW/dr (negative inside the support).
#[inline]
pub fn kernel_deriv(r: f64, h: f64) -> f64 {
    debug_assert!(h > 0.0);
    let q = r / h;
    let s = sigma(h);
    if q <= 1.0 {
        s * (-3.0 * q + 2.25 * q * q) / h
    } else if q < 2.0 {
        let t = 2.0 - q;
        -0.75 * s * t * t / h
    } else {
        0.0
    }
}

/// Kernel gradient ∇_a W(r_a − r_b), given the separation vector and its
/// norm. Antisymmetric: ∇W(x) = −∇W(−x). Zero at r = 0 (the cubic spline's
/// radial derivative vanishes there).
#[inline]
pub fn kernel_grad(r_vec: [f64; 2], r: f64, h: f64) -> [f64; 2] {
    if r <= 0.0 || r >= 2.0 * h {
        return [0.0, 0.0];
    }
    let d = kernel_deriv(r, h) / r;
    [d * r_vec[0], d * r_vec[1]]
}
