//! Exponential fits `A e^{-t/tau} + c` and the transient-recovery
//! extraction built on them.

use crate::error::{Error, Result};
use crate::fitting::lm::{fit_least_squares, LmOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub a: f64,
    pub tau: f64,
    pub c: f64,
    pub a_sd: f64,
    pub tau_sd: f64,
    pub c_sd: f64,
    pub residual_norm: f64,
}

fn check_series(ts: &[f64], ys: &[f64]) -> Result<()> {
    if ts.len() != ys.len() {
        return Err(Error::fit("t and y lengths differ"));
    }
    if ts.len() < 4 {
        return Err(Error::fit("exponential fit needs at least 4 points"));
    }
    let (min, max) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
            (lo.min(y), hi.max(y))
        });
    let scale = min.abs().max(max.abs()).max(1e-300);
    if (max - min) / scale < 1e-12 {
        return Err(Error::fit("series is constant; tau is degenerate"));
    }
    Ok(())
}

/// Initial guess from the tail baseline and a log-linear regression on the
/// de-baselined magnitude.
fn initial_guess(ts: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = ts.len();
    let tail = (n / 5).max(1);
    let c0: f64 = ys[n - tail..].iter().sum::<f64>() / tail as f64;
    let a0 = ys[0] - c0;
    // log-linear: ln|y - c0| = ln|a| - t/tau over points clearly off baseline
    let floor = (ys.iter().map(|y| (y - c0).abs()).fold(0.0, f64::max)) * 1e-3;
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(ys)
        .filter(|(_, &y)| (y - c0).abs() > floor)
        .map(|(&t, &y)| (t, (y - c0).abs().ln()))
        .collect();
    let tau0 = if pts.len() >= 2 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ls: Vec<f64> = pts.iter().map(|p| p.1).collect();
        match crate::fitting::linear::fit_linear(&xs, &ls) {
            Ok(f) if f.slope < -1e-300 => -1.0 / f.slope,
            _ => (ts[n - 1] - ts[0]).max(1e-9),
        }
    } else {
        (ts[n - 1] - ts[0]).max(1e-9)
    };
    (a0, tau0, c0)
}

/// Unweighted least squares on `A e^{-t/tau} + c`.
pub fn fit_exponential(ts: &[f64], ys: &[f64]) -> Result<ExpFit> {
    let sigmas = vec![1.0; ts.len()];
    fit_exponential_weighted(ts, ys, &sigmas)
}

/// Weighted least squares on `A e^{-t/tau} + c`; residuals are divided by
/// `sigmas`, so reported standard deviations are statistical when the sigmas
/// are per-point standard errors.
pub fn fit_exponential_weighted(ts: &[f64], ys: &[f64], sigmas: &[f64]) -> Result<ExpFit> {
    check_series(ts, ys)?;
    if sigmas.len() != ts.len() || sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::fit("sigmas must be positive and match the series"));
    }
    let (a0, tau0, c0) = initial_guess(ts, ys);
    let span = (ts[ts.len() - 1] - ts[0]).max(1e-9);
    let y_scale = ys.iter().fold(0.0f64, |m, &y| m.max(y.abs())).max(1e-9);
    let residuals = |p: &[f64], r: &mut [f64]| {
        for (i, ((&t, &y), &s)) in ts.iter().zip(ys).zip(sigmas).enumerate() {
            r[i] = (p[0] * (-t / p[1]).exp() + p[2] - y) / s;
        }
        Ok(())
    };
    let lower = [-1e6 * y_scale, span * 1e-6, -1e6 * y_scale];
    let upper = [1e6 * y_scale, span * 1e6, 1e6 * y_scale];
    let mut best: Option<crate::fitting::lm::LmResult> = None;
    // the log-linear guess can land in the wrong basin when the baseline
    // estimate is off; a few tau restarts are cheap insurance
    for tau_scale in [1.0, 0.25, 4.0] {
        let p0 = [a0, (tau0 * tau_scale).clamp(lower[1], upper[1]), c0];
        let fit = fit_least_squares(&residuals, ts.len(), &p0, &lower, &upper, &LmOptions::default())?;
        if best.as_ref().map_or(true, |b| fit.residual_norm < b.residual_norm) {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one start");
    if fit.at_bound[1] {
        return Err(Error::fit(format!(
            "tau ran to a bound ({:.3e}); series does not determine a decay time",
            fit.params[1]
        )));
    }
    Ok(ExpFit {
        a: fit.params[0],
        tau: fit.params[1],
        c: fit.params[2],
        a_sd: fit.std_devs[0],
        tau_sd: fit.std_devs[1],
        c_sd: fit.std_devs[2],
        residual_norm: fit.residual_norm,
    })
}

/// Exponential recovery of a per-slice transient estimate, excluding the
/// early window where the model is not expected to hold.
pub fn extract_transient_recovery(
    series: &[(f64, f64, f64)],
    exclude_early_us: f64,
) -> Result<ExpFit> {
    let kept: Vec<&(f64, f64, f64)> = series
        .iter()
        .filter(|(t, _, _)| *t >= exclude_early_us)
        .collect();
    let ts: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1).collect();
    let ss: Vec<f64> = kept.iter().map(|p| p.2).collect();
    if ys.len() >= 4 {
        let (min, max) = ys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                (lo.min(y), hi.max(y))
            });
        // all-zero (or flat) series: transient amplitude is zero, not an error
        let noise = ss.iter().sum::<f64>() / ss.len() as f64;
        if max - min <= 2.0 * noise && min.abs().max(max.abs()) <= 3.0 * noise {
            return Ok(ExpFit {
                a: 0.0,
                tau: f64::NAN,
                c: (min + max) / 2.0,
                a_sd: noise,
                tau_sd: f64::NAN,
                c_sd: noise / (ys.len() as f64).sqrt(),
                residual_norm: 0.0,
            });
        }
    }
    fit_exponential_weighted(&ts, &ys, &ss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn noiseless_exponential_recovered() {
        let ts: Vec<f64> = (0..50).map(|i| i as f64 * 4.0).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| 3.0 * (-t / 50.0).exp() + 0.1).collect();
        let f = fit_exponential(&ts, &ys).unwrap();
        assert_relative_eq!(f.a, 3.0, max_relative = 1e-6);
        assert_relative_eq!(f.tau, 50.0, max_relative = 1e-6);
        assert_relative_eq!(f.c, 0.1, max_relative = 1e-6);
    }

    #[test]
    fn negative_amplitude_recovered() {
        let ts: Vec<f64> = (0..40).map(|i| i as f64 * 2.0).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| -0.4 * (-t / 12.0).exp() + 0.8).collect();
        let f = fit_exponential(&ts, &ys).unwrap();
        assert_relative_eq!(f.a, -0.4, max_relative = 1e-6);
        assert_relative_eq!(f.tau, 12.0, max_relative = 1e-5);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let ts: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys = vec![0.7; 10];
        assert!(fit_exponential(&ts, &ys).is_err());
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(fit_exponential(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.2]).is_err());
    }

    #[test]
    fn weighted_sd_scales_with_sigma() {
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 3.0).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| 2.0 * (-t / 20.0).exp() + 0.3).collect();
        let tight = fit_exponential_weighted(&ts, &ys, &vec![0.01; 30]).unwrap();
        let loose = fit_exponential_weighted(&ts, &ys, &vec![0.1; 30]).unwrap();
        assert_relative_eq!(loose.tau_sd / tight.tau_sd, 10.0, max_relative = 1e-3);
    }

    #[test]
    fn recovery_excludes_early_window() {
        // early points poisoned; fit only sees t >= 100
        let mut series: Vec<(f64, f64, f64)> = vec![(10.0, 99.0, 1.0), (50.0, 99.0, 1.0)];
        for i in 0..30 {
            let t = 100.0 + i as f64 * 100.0;
            series.push((t, 30.0 * (-t / 2000.0f64).exp(), 0.5));
        }
        let f = extract_transient_recovery(&series, 100.0).unwrap();
        assert_relative_eq!(f.a, 30.0, max_relative = 1e-4);
        assert_relative_eq!(f.tau, 2000.0, max_relative = 1e-4);
    }

    #[test]
    fn recovery_all_zero_series_gives_zero_amplitude() {
        let series: Vec<(f64, f64, f64)> = (0..20)
            .map(|i| (i as f64 * 100.0, 0.0, 0.5))
            .collect();
        let f = extract_transient_recovery(&series, 0.0).unwrap();
        assert_eq!(f.a, 0.0);
    }
}
