//! Ordinary least squares: free line and through-origin variants.

use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit<S: Scalar = f64> {
    pub slope: S,
    pub intercept: S,
    pub slope_sd: S,
    pub intercept_sd: S,
}

/// Unweighted OLS line fit. Standard deviations come from the residual
/// variance; with exactly two points they are zero (exact interpolation).
pub fn fit_linear<S: Scalar>(xs: &[S], ys: &[S]) -> Result<LinearFit<S>> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::fit("x and y lengths differ"));
    }
    if n < 2 {
        return Err(Error::fit("linear fit needs at least 2 points"));
    }
    let nf = S::c(n as f64);
    let mean_x = xs.iter().fold(S::zero(), |a, &x| a + x) / nf;
    let mean_y = ys.iter().fold(S::zero(), |a, &y| a + y) / nf;
    let mut sxx = S::zero();
    let mut sxy = S::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx <= S::zero() {
        return Err(Error::fit("all x values identical"));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let mut ss_res = S::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
    }
    let sigma2 = if n > 2 {
        ss_res / S::c((n - 2) as f64)
    } else {
        S::zero()
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_sd: (sigma2 / sxx).sqrt(),
        intercept_sd: (sigma2 * (S::one() / nf + mean_x * mean_x / sxx)).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OriginFit<S: Scalar = f64> {
    pub slope: S,
    /// NaN when only one point was provided (undefined, flagged).
    pub slope_sd: S,
}

/// Least-squares slope with the intercept constrained to zero.
pub fn fit_through_origin<S: Scalar>(xs: &[S], ys: &[S]) -> Result<OriginFit<S>> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::fit("x and y lengths differ"));
    }
    if n == 0 {
        return Err(Error::fit("through-origin fit needs at least 1 point"));
    }
    let mut sxx = S::zero();
    let mut sxy = S::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += x * x;
        sxy += x * y;
    }
    if sxx <= S::zero() {
        return Err(Error::fit("all x values are zero"));
    }
    let slope = sxy / sxx;
    let slope_sd = if n >= 2 {
        let mut ss_res = S::zero();
        for (&x, &y) in xs.iter().zip(ys) {
            let r = y - slope * x;
            ss_res += r * r;
        }
        (ss_res / S::c((n - 1) as f64) / sxx).sqrt()
    } else {
        S::nan()
    };
    Ok(OriginFit { slope, slope_sd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_points_interpolate_exactly() {
        let f = fit_linear(&[0.0, 2.0], &[1.0, 5.0]).unwrap();
        assert_relative_eq!(f.slope, 2.0);
        assert_relative_eq!(f.intercept, 1.0);
        assert_eq!(f.slope_sd, 0.0);
    }

    #[test]
    fn constant_series_has_zero_slope() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [0.5; 4];
        let f = fit_linear(&xs, &ys).unwrap();
        assert_relative_eq!(f.slope, 0.0);
        assert_relative_eq!(f.intercept, 0.5);
    }

    #[test]
    fn identical_xs_rejected() {
        assert!(fit_linear(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn slope_0177_recovered() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.177 * x).collect();
        let f = fit_linear(&xs, &ys).unwrap();
        assert_relative_eq!(f.slope, 0.177, max_relative = 1e-12);
        let o = fit_through_origin(&xs, &ys).unwrap();
        assert_relative_eq!(o.slope, 0.177, max_relative = 1e-12);
    }

    #[test]
    fn single_point_origin_fit_flags_undefined_sd() {
        let o = fit_through_origin(&[1.0f64], &[0.19]).unwrap();
        assert_relative_eq!(o.slope, 0.19);
        assert!(o.slope_sd.is_nan());
    }

    #[test]
    fn noisy_origin_fit_sd_scale() {
        // symmetric +-d residuals around slope s give sd = d / sqrt(sxx) * sqrt(n/(n-1))
        let xs = [1.0, 1.0, 1.0, 1.0];
        let ys = [0.9, 1.1, 0.9, 1.1];
        let o = fit_through_origin(&xs, &ys).unwrap();
        assert_relative_eq!(o.slope, 1.0);
        assert_relative_eq!(o.slope_sd, (0.04 / 3.0f64 / 4.0).sqrt(), max_relative = 1e-12);
    }
}
