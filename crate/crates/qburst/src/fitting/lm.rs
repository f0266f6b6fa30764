//! Bounded Levenberg-Marquardt least squares.
//!
//! Minimizes `0.5 ||r(p)||^2` over box-constrained parameters with the
//! Marquardt-scaled normal equations and a gain-ratio damping update; steps
//! are projected onto the box. Jacobians are central finite differences.
//! Callers fold weights into the residuals (`r_i = (model_i - y_i) / sigma_i`),
//! so the covariance is `(J^T J)^{-1}` without a reduced-chi-square factor.

use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost decrease falls below this.
    pub ftol: f64,
    /// Stop when the scaled step norm falls below this.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            ftol: 1e-12,
            xtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult<S: Scalar = f64> {
    pub params: Vec<S>,
    /// Standard deviations from the diagonal of `(J^T J)^{-1}`.
    pub std_devs: Vec<S>,
    /// Full covariance, row-major n x n.
    pub covariance: Vec<S>,
    /// `||r||` at the solution.
    pub residual_norm: S,
    pub n_points: usize,
    pub n_iter: usize,
    pub converged: bool,
    /// Parameters that ended on a box bound (std devs unreliable there).
    pub at_bound: Vec<bool>,
}

fn clamp<S: Scalar>(p: &mut [S], lower: &[S], upper: &[S]) {
    for i in 0..p.len() {
        p[i] = p[i].max(lower[i]).min(upper[i]);
    }
}

/// Central finite-difference Jacobian, one-sided at box bounds.
/// Row-major m x n.
pub fn numerical_jacobian<S, F>(
    f: &F,
    p: &[S],
    lower: &[S],
    upper: &[S],
    m: usize,
) -> Result<Vec<S>>
where
    S: Scalar,
    F: Fn(&[S], &mut [S]) -> Result<()>,
{
    let n = p.len();
    let mut jac = vec![S::zero(); m * n];
    let mut r_plus = vec![S::zero(); m];
    let mut r_minus = vec![S::zero(); m];
    let mut pw = p.to_vec();
    let base_h = S::c(1e-6);
    let min_h = S::epsilon().sqrt();
    for j in 0..n {
        let h = (base_h * p[j].abs()).max(min_h);
        let hi = (p[j] + h).min(upper[j]);
        let lo = (p[j] - h).max(lower[j]);
        let span = hi - lo;
        if span <= S::zero() {
            // parameter pinned by a degenerate box; column is zero
            continue;
        }
        pw[j] = hi;
        f(&pw, &mut r_plus)?;
        pw[j] = lo;
        f(&pw, &mut r_minus)?;
        pw[j] = p[j];
        for i in 0..m {
            jac[i * n + j] = (r_plus[i] - r_minus[i]) / span;
        }
    }
    Ok(jac)
}

/// Cholesky factorization of a symmetric positive-definite matrix (row-major
/// n x n, lower triangle returned). Fails on non-positive pivots.
fn cholesky<S: Scalar>(a: &[S], n: usize) -> Option<Vec<S>> {
    let mut l = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= S::zero() {
                    return None;
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve<S: Scalar>(l: &[S], b: &[S], n: usize) -> Vec<S> {
    let mut y = vec![S::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Invert an SPD matrix via Cholesky; jitters the diagonal if needed.
fn spd_inverse<S: Scalar>(a: &[S], n: usize) -> Option<Vec<S>> {
    let mut work = a.to_vec();
    let mut jitter = S::zero();
    let scale = (0..n).map(|i| a[i * n + i]).fold(S::zero(), |m, d| m.max(d));
    for _ in 0..8 {
        if let Some(l) = cholesky(&work, n) {
            let mut inv = vec![S::zero(); n * n];
            for j in 0..n {
                let mut e = vec![S::zero(); n];
                e[j] = S::one();
                let col = cholesky_solve(&l, &e, n);
                for i in 0..n {
                    inv[i * n + j] = col[i];
                }
            }
            return Some(inv);
        }
        jitter = if jitter == S::zero() {
            scale * S::c(1e-12) + S::c(1e-300)
        } else {
            jitter * S::c(100.0)
        };
        for i in 0..n {
            work[i * n + i] = a[i * n + i] + jitter;
        }
    }
    None
}

/// Minimize `0.5 ||r(p)||^2` subject to `lower <= p <= upper`.
pub fn fit_least_squares<S, F>(
    f: &F,
    m: usize,
    p0: &[S],
    lower: &[S],
    upper: &[S],
    opts: &LmOptions,
) -> Result<LmResult<S>>
where
    S: Scalar,
    F: Fn(&[S], &mut [S]) -> Result<()>,
{
    let n = p0.len();
    if n == 0 || m < n {
        return Err(Error::fit(format!(
            "need at least as many residuals ({m}) as parameters ({n})"
        )));
    }
    if lower.len() != n || upper.len() != n {
        return Err(Error::fit("bound lengths must match parameter count"));
    }
    for j in 0..n {
        if lower[j] > upper[j] {
            return Err(Error::fit(format!("bound {j} inverted")));
        }
    }
    let mut p = p0.to_vec();
    clamp(&mut p, lower, upper);

    let mut r = vec![S::zero(); m];
    f(&p, &mut r)?;
    let mut cost = r.iter().fold(S::zero(), |a, &x| a + x * x);
    let mut lambda = S::c(1e-3);
    let mut converged = false;
    let mut iters = 0;

    for iter in 0..opts.max_iter {
        iters = iter + 1;
        let jac = numerical_jacobian(f, &p, lower, upper, m)?;
        // normal equations
        let mut jtj = vec![S::zero(); n * n];
        let mut jtr = vec![S::zero(); n];
        for i in 0..m {
            for a in 0..n {
                let ja = jac[i * n + a];
                jtr[a] += ja * r[i];
                for b in a..n {
                    jtj[a * n + b] += ja * jac[i * n + b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                jtj[a * n + b] = jtj[b * n + a];
            }
        }

        let mut improved = false;
        for _ in 0..12 {
            // Marquardt scaling: damp by lambda * diag(JtJ)
            let mut a = jtj.clone();
            for d in 0..n {
                let diag = jtj[d * n + d];
                let floor = S::c(1e-30);
                a[d * n + d] = diag + lambda * diag.max(floor);
            }
            let Some(l) = cholesky(&a, n) else {
                lambda = lambda * S::c(10.0);
                continue;
            };
            let neg_g: Vec<S> = jtr.iter().map(|&g| -g).collect();
            let step = cholesky_solve(&l, &neg_g, n);
            let mut p_new = p.clone();
            for j in 0..n {
                p_new[j] += step[j];
            }
            clamp(&mut p_new, lower, upper);
            let mut r_new = vec![S::zero(); m];
            f(&p_new, &mut r_new)?;
            let cost_new = r_new.iter().fold(S::zero(), |acc, &x| acc + x * x);
            if cost_new < cost {
                let step_norm = p_new
                    .iter()
                    .zip(&p)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .fold(S::zero(), |acc, x| acc + x)
                    .sqrt();
                let p_norm = p
                    .iter()
                    .map(|&x| x * x)
                    .fold(S::zero(), |acc, x| acc + x)
                    .sqrt();
                let rel_drop = (cost - cost_new) / cost.max(S::c(1e-300));
                p = p_new;
                r = r_new;
                cost = cost_new;
                lambda = (lambda * S::c(0.3)).max(S::c(1e-12));
                improved = true;
                if rel_drop < S::c(opts.ftol)
                    || step_norm < S::c(opts.xtol) * (p_norm + S::c(opts.xtol))
                {
                    converged = true;
                }
                break;
            }
            lambda = lambda * S::c(10.0);
            if lambda > S::c(1e12) {
                break;
            }
        }
        if converged || !improved {
            // no downhill step found: accept current point as (local) optimum
            converged = converged || !improved;
            break;
        }
    }

    let jac = numerical_jacobian(f, &p, lower, upper, m)?;
    let mut jtj = vec![S::zero(); n * n];
    for i in 0..m {
        for a in 0..n {
            for b in a..n {
                jtj[a * n + b] += jac[i * n + a] * jac[i * n + b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            jtj[a * n + b] = jtj[b * n + a];
        }
    }
    let covariance = spd_inverse(&jtj, n)
        .ok_or_else(|| Error::fit("singular normal equations at the solution"))?;
    let std_devs = (0..n)
        .map(|i| covariance[i * n + i].max(S::zero()).sqrt())
        .collect();
    let tol = S::c(1e-12);
    let at_bound = (0..n)
        .map(|j| {
            (p[j] - lower[j]).abs() <= tol * (S::one() + lower[j].abs())
                || (upper[j] - p[j]).abs() <= tol * (S::one() + upper[j].abs())
        })
        .collect();

    Ok(LmResult {
        params: p,
        std_devs,
        covariance,
        residual_norm: cost.sqrt(),
        n_points: m,
        n_iter: iters,
        converged,
        at_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp_residuals<'a>(
        ts: &'a [f64],
        ys: &'a [f64],
    ) -> impl Fn(&[f64], &mut [f64]) -> Result<()> + 'a {
        move |p: &[f64], r: &mut [f64]| {
            for (i, (&t, &y)) in ts.iter().zip(ys).enumerate() {
                r[i] = p[0] * (-t / p[1]).exp() + p[2] - y;
            }
            Ok(())
        }
    }

    #[test]
    fn recovers_noiseless_exponential() {
        let ts: Vec<f64> = (0..40).map(|i| i as f64 * 5.0).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| 3.0 * (-t / 50.0).exp() + 0.1).collect();
        let f = exp_residuals(&ts, &ys);
        let fit = fit_least_squares(
            &f,
            ts.len(),
            &[1.0, 20.0, 0.0],
            &[0.0, 1.0, -1.0],
            &[100.0, 1e5, 1.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.params[0], 3.0, max_relative = 1e-6);
        assert_relative_eq!(fit.params[1], 50.0, max_relative = 1e-6);
        assert_relative_eq!(fit.params[2], 0.1, max_relative = 1e-5);
    }

    #[test]
    fn respects_bounds_and_flags_them() {
        // optimum amplitude is negative; lower bound 0 must pin it
        let ts: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| -2.0 * (-t / 10.0).exp()).collect();
        let f = exp_residuals(&ts, &ys);
        let fit = fit_least_squares(
            &f,
            ts.len(),
            &[1.0, 10.0, 0.0],
            &[0.0, 1.0, -10.0],
            &[100.0, 1e5, 10.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert_eq!(fit.params[0], 0.0);
        assert!(fit.at_bound[0]);
    }

    #[test]
    fn jacobian_matches_analytic() {
        let ts: Vec<f64> = (1..15).map(|i| i as f64 * 3.0).collect();
        let zeros = vec![0.0; ts.len()];
        let f = exp_residuals(&ts, &zeros);
        let p = [2.5, 30.0, 0.2];
        let lower = [0.0, 1.0, -1.0];
        let upper = [100.0, 1e5, 1.0];
        let jac = numerical_jacobian(&f, &p, &lower, &upper, ts.len()).unwrap();
        for (i, &t) in ts.iter().enumerate() {
            let e = (-t / p[1]).exp();
            let da = e;
            let dtau = p[0] * e * t / (p[1] * p[1]);
            let dc = 1.0;
            assert_relative_eq!(jac[i * 3], da, max_relative = 1e-5);
            assert_relative_eq!(jac[i * 3 + 1], dtau, max_relative = 1e-5);
            assert_relative_eq!(jac[i * 3 + 2], dc, max_relative = 1e-5);
        }
    }

    #[test]
    fn covariance_tracks_noise_scale() {
        // weighted residuals (sigma = 0.1): sd of the mean of n points is
        // sigma / sqrt(n)
        let n = 100usize;
        let ys = vec![5.0; n];
        let sigma = 0.1;
        let f = |p: &[f64], r: &mut [f64]| {
            for i in 0..n {
                r[i] = (p[0] - ys[i]) / sigma;
            }
            Ok(())
        };
        let fit = fit_least_squares(&f, n, &[0.0], &[-1e9], &[1e9], &LmOptions::default()).unwrap();
        assert_relative_eq!(fit.params[0], 5.0, max_relative = 1e-9);
        assert_relative_eq!(fit.std_devs[0], sigma / (n as f64).sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn underdetermined_rejected() {
        let f = |_p: &[f64], _r: &mut [f64]| Ok(());
        assert!(fit_least_squares(&f, 1, &[1.0, 2.0], &[0.0, 0.0], &[9.0, 9.0], &LmOptions::default()).is_err());
    }
}
