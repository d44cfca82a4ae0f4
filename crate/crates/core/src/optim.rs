//! Derivative-free minimization with the Nelder–Mead simplex method.
//!
//! Used for Gaussian-process hyperparameter fitting, where the objective
//! (negative log marginal likelihood over log-parameters) is smooth but
//! its gradient is not worth deriving for 2–4 dimensional problems.
//! Standard coefficients (reflect 1, expand 2, contract ½, shrink ½),
//! deterministic tie-breaking, and objective values of `NaN` treated as
//! `+∞` so the simplex walks out of invalid regions.

/// Nelder–Mead configuration.
#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Hard iteration cap (one reflection cycle per iteration).
    pub max_iter: usize,
    /// Converged when `f_worst − f_best ≤ tol·(1 + |f_best|)`.
    pub tol: f64,
    /// Initial simplex displacement along each coordinate.
    pub init_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { max_iter: 500, tol: 1e-9, init_step: 0.25 }
    }
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimize `f` starting from `x0`.
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64]) -> NmResult {
        let n = x0.len();
        assert!(n > 0, "cannot optimize a zero-dimensional function");
        let mut eval = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        // Initial simplex: x0 plus one displaced vertex per coordinate.
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = eval(x0);
        simplex.push((x0.to_vec(), f0));
        for i in 0..n {
            let mut xi = x0.to_vec();
            xi[i] += self.init_step;
            let fi = eval(&xi);
            simplex.push((xi, fi));
        }
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iter {
            iterations += 1;
            // Stable sort: equal objective values keep insertion order,
            // making the whole trajectory deterministic.
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let f_best = simplex[0].1;
            let f_worst = simplex[n].1;
            if f_worst - f_best <= self.tol * (1.0 + f_best.abs()) {
                converged = true;
                break;
            }
            // Centroid of all but the worst vertex.
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi;
                }
            }
            for c in &mut centroid {
                *c /= n as f64;
            }
            let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
                a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
            };
            // Reflection: x_r = c + (c − x_worst).
            let xr = lerp(&centroid, &simplex[n].0, -1.0);
            let fr = eval(&xr);
            if fr < simplex[0].1 {
                // Expansion: x_e = c + 2(x_r − c).
                let xe = lerp(&centroid, &xr, 2.0);
                let fe = eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    // Outside contraction toward the reflected point.
                    let xc = lerp(&centroid, &xr, 0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    // Inside contraction toward the worst vertex.
                    let xc = lerp(&centroid, &simplex[n].0, 0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    // Shrink everything toward the best vertex.
                    let best = simplex[0].0.clone();
                    for v in simplex.iter_mut().skip(1) {
                        v.0 = lerp(&best, &v.0, 0.5);
                        v.1 = eval(&v.0);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let (x, fx) = simplex.swap_remove(0);
        NmResult { x, fx, iterations, converged }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum_found() {
        let nm = NelderMead::default();
        let r = nm.minimize(
            |x| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2),
            &[0.0, 0.0],
        );
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-4, "x0 = {}", r.x[0]);
        assert!((r.x[1] + 1.0).abs() < 1e-4, "x1 = {}", r.x[1]);
        assert!(r.fx < 1e-8);
    }

    #[test]
    fn rosenbrock_minimum_found() {
        let nm = NelderMead { max_iter: 2000, ..Default::default() };
        let r = nm.minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
        );
        assert!((r.x[0] - 1.0).abs() < 1e-4, "x0 = {}", r.x[0]);
        assert!((r.x[1] - 1.0).abs() < 1e-4, "x1 = {}", r.x[1]);
    }

    #[test]
    fn nan_regions_are_avoided() {
        let nm = NelderMead::default();
        let r = nm.minimize(
            |x| {
                if x[0] < 0.0 {
                    f64::NAN
                } else {
                    (x[0] - 2.0).powi(2)
                }
            },
            &[1.0],
        );
        assert!((r.x[0] - 2.0).abs() < 1e-4);
        assert!(r.fx.is_finite());
    }

    #[test]
    fn runs_are_deterministic() {
        let nm = NelderMead::default();
        let f = |x: &[f64]| x[0].powi(4) + (x[1] - 0.5).powi(2) + x[0] * x[1];
        let a = nm.minimize(f, &[0.3, -0.7]);
        let b = nm.minimize(f, &[0.3, -0.7]);
        assert_eq!(a.x, b.x);
        assert_eq!(a.fx, b.fx);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn iteration_cap_is_respected() {
        let nm = NelderMead { max_iter: 3, ..Default::default() };
        let r = nm.minimize(|x| x[0].powi(2), &[100.0]);
        assert_eq!(r.iterations, 3);
        assert!(!r.converged);
    }
}
