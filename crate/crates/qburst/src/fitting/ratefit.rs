//! The global rate-model fit (both preps x all delays jointly), SPAM
//! estimation from pre-trigger baselines, and the weighted-mean T1.

use rayon::prelude::*;

use crate::config::JunctionOrientation;
use crate::error::{Error, Result};
use crate::fitting::exponential::fit_exponential;
use crate::fitting::linear::fit_linear;
use crate::fitting::lm::{fit_least_squares, LmOptions};
use crate::ratemodel::{shot_error_probability, RateParams, SpamParams};
use crate::shotfile::Prep;

/// One averaged error trace entering the global fit. `points` holds
/// (shot-start offset since impact in us, mean error rate, standard error).
#[derive(Debug, Clone, PartialEq)]
pub struct RateTrace {
    pub prep: Prep,
    pub delay_us: f64,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFitResult {
    pub params: RateParams,
    /// Standard deviations in the same layout; `gamma_t1` entry is 0 (the
    /// parameter is fixed, not fitted).
    pub sds: RateParams,
    pub residual_norm: f64,
    pub n_points: usize,
    /// Free parameters that ended on a box bound, fit packing order
    /// (a_rel, tau_rel, a_exc1, tau_exc1[, a_exc2, tau_exc2]).
    pub at_bound: Vec<bool>,
    pub converged: bool,
}

/// Per-averaged-point standard error floor: saturated bins (0 or 1 errors
/// everywhere) would otherwise get infinite weight.
pub const SIGMA_FLOOR: f64 = 1e-4;

const AMP_BOUNDS_KHZ: (f64, f64) = (0.0, 5e4);
const TAU_BOUNDS_US: (f64, f64) = (1.0, 1e5);

/// Merge a trace onto <= `max_points` log-spaced time bins
/// (inverse-variance weighted within each bin).
fn log_bin(points: &[(f64, f64, f64)], max_points: usize) -> Vec<(f64, f64, f64)> {
    if points.len() <= max_points {
        return points.to_vec();
    }
    let t_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let t_max = points.iter().map(|p| p.0).fold(0.0f64, f64::max);
    let lo = (t_min.max(0.0) + 1.0).ln();
    let hi = (t_max + 1.0).ln();
    let mut acc = vec![(0.0f64, 0.0f64, 0.0f64); max_points]; // (w, wt, wy)
    for &(t, y, s) in points {
        let f = ((t + 1.0).ln() - lo) / (hi - lo);
        let bin = ((f * max_points as f64) as usize).min(max_points - 1);
        let w = 1.0 / (s * s);
        acc[bin].0 += w;
        acc[bin].1 += w * t;
        acc[bin].2 += w * y;
    }
    acc.into_iter()
        .filter(|&(w, _, _)| w > 0.0)
        .map(|(w, wt, wy)| (wt / w, wy / w, (1.0 / w).sqrt().max(SIGMA_FLOOR)))
        .collect()
}

/// Rough tau_rel scale from a single-exponential fit to the longest-delay
/// prep-|1> trace; sets the prep-|1> fit window (5x this value).
fn tau_rel_initial(traces: &[RateTrace]) -> f64 {
    let best = traces
        .iter()
        .filter(|t| t.prep == Prep::One && t.points.len() >= 8)
        .max_by(|a, b| a.delay_us.total_cmp(&b.delay_us));
    let fallback = 2000.0;
    let Some(tr) = best else { return fallback };
    let ts: Vec<f64> = tr.points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = tr.points.iter().map(|p| p.1).collect();
    match fit_exponential(&ts, &ys) {
        Ok(f) if f.tau.is_finite() && f.tau > 0.0 => f.tau.clamp(40.0, 2e4),
        _ => fallback,
    }
}

fn unpack(p: &[f64], high_gap: bool, gamma_t1: f64) -> RateParams {
    RateParams {
        a_rel: p[0],
        tau_rel: p[1],
        a_exc1: p[2],
        tau_exc1: p[3],
        a_exc2: high_gap.then(|| p[4]),
        tau_exc2: high_gap.then(|| p[5]),
        gamma_t1,
    }
}

/// Joint weighted fit of all traces (both preps, all delays) for one qubit.
/// `gamma_t1` is fixed from the independent T1 measurement; HighGapIsland
/// frees 6 parameters, LowGapIsland 4. Trace times are shot-start offsets
/// from the impact; points before the impact or outside the per-prep fit
/// window are ignored.
pub fn fit_rate_model(
    traces: &[RateTrace],
    spam: &SpamParams,
    gamma_t1: f64,
    orientation: JunctionOrientation,
    readout_us: f64,
) -> Result<RateFitResult> {
    if !traces.iter().any(|t| t.prep == Prep::One)
        || !traces.iter().any(|t| t.prep == Prep::Zero)
    {
        return Err(Error::fit("rate fit needs traces for both preps"));
    }
    let high_gap = orientation == JunctionOrientation::HighGapIsland;
    let n_free = if high_gap { 6 } else { 4 };

    // different fit lengths per prep: |1> carries relaxation information
    // only while the relaxation transient lives; |0> keeps the full window
    let window_one = (5.0 * tau_rel_initial(traces)).min(30_000.0);
    let window_zero = 5000.0;

    let mut data: Vec<(Prep, f64, f64, f64, f64)> = Vec::new(); // prep, delay, t, y, sigma
    for tr in traces {
        let window = match tr.prep {
            Prep::One => window_one,
            _ => window_zero,
        };
        let kept: Vec<(f64, f64, f64)> = tr
            .points
            .iter()
            .filter(|(t, _, _)| *t >= 0.0 && *t <= window)
            .map(|&(t, y, s)| (t, y, s.max(SIGMA_FLOOR)))
            .collect();
        for (t, y, s) in log_bin(&kept, 250) {
            data.push((tr.prep, tr.delay_us, t, y, s));
        }
    }
    if data.len() < 4 * n_free {
        return Err(Error::fit(format!(
            "only {} usable points for {} free parameters",
            data.len(),
            n_free
        )));
    }

    let residuals = |p: &[f64], r: &mut [f64]| -> Result<()> {
        let params = unpack(p, high_gap, gamma_t1);
        let out: Result<Vec<f64>> = data
            .par_iter()
            .map(|&(prep, delay, t, y, s)| {
                let model = shot_error_probability(prep, delay, t, &params, spam, readout_us)?;
                Ok((model - y) / s)
            })
            .collect();
        r.copy_from_slice(&out?);
        Ok(())
    };

    let (lower, upper): (Vec<f64>, Vec<f64>) = (0..n_free)
        .map(|i| {
            if i % 2 == 0 {
                AMP_BOUNDS_KHZ
            } else {
                TAU_BOUNDS_US
            }
        })
        .unzip();
    let opts = LmOptions {
        max_iter: 60,
        ftol: 1e-10,
        xtol: 1e-8,
        ..Default::default()
    };

    // 8 multi-starts log-spaced in the relaxation/excitation decay times:
    // the two-exponential excitation model has local minima
    let tau_rel_starts = [100.0, 400.0, 1600.0, 6400.0];
    let tau_exc_starts = [30.0, 1000.0];
    let mut best: Option<crate::fitting::lm::LmResult> = None;
    let mut any_converged = false;
    'starts: for &tr0 in &tau_rel_starts {
        for &te0 in &tau_exc_starts {
            let p0: Vec<f64> = if high_gap {
                vec![300.0, tr0, 100.0, te0, 300.0, 16.0]
            } else {
                vec![300.0, tr0, 100.0, te0]
            };
            let fit = fit_least_squares(&residuals, data.len(), &p0, &lower, &upper, &opts)?;
            any_converged |= fit.converged;
            let better = best
                .as_ref()
                .map_or(true, |b| fit.residual_norm < b.residual_norm);
            if better {
                best = Some(fit);
            }
        }
        // good reduced chi-square after trying every excitation-timescale
        // start: no need to burn the remaining relaxation starts. Breaking
        // mid-inner-loop can lock in a local minimum that merges the two
        // excitation exponentials while still passing the chi-square gate.
        let b = best.as_ref().unwrap();
        let reduced_chi2 = b.residual_norm.powi(2) / (data.len() - n_free) as f64;
        if b.converged && reduced_chi2 < 2.0 {
            break 'starts;
        }
    }
    let mut fit = best.expect("at least one start ran");
    if !any_converged {
        return Err(Error::fit(format!(
            "rate fit did not converge in any start; best residual {:.4e}",
            fit.residual_norm
        )));
    }
    // the two excitation terms are exchangeable in the model; canonicalize
    // to the reporting convention tau_exc1 >= tau_exc2 (slow term first)
    if high_gap && fit.params[5] > fit.params[3] {
        fit.params.swap(2, 4);
        fit.params.swap(3, 5);
        fit.std_devs.swap(2, 4);
        fit.std_devs.swap(3, 5);
        fit.at_bound.swap(2, 4);
        fit.at_bound.swap(3, 5);
    }
    Ok(RateFitResult {
        params: unpack(&fit.params, high_gap, gamma_t1),
        sds: unpack(&fit.std_devs, high_gap, 0.0),
        residual_norm: fit.residual_norm,
        n_points: fit.n_points,
        at_bound: fit.at_bound,
        converged: fit.converged,
    })
}

/// Pre-trigger baseline error rates for one delay; `per_qubit[q]` is the
/// mean error over all pre-trigger windows.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSeries {
    pub delay_us: f64,
    pub per_qubit: Vec<f64>,
}

/// SPAM from pre-trigger baselines: eps0 is the prep-|0> baseline (flat in
/// delay); eps1 is the prep-|1> baseline extrapolated to zero detection time
/// (detection time = delay + readout/2, so T1 decay drops out of the
/// intercept). A single prep-|1> delay falls back to that baseline.
pub fn estimate_spam(
    zero: &[BaselineSeries],
    one: &[BaselineSeries],
    readout_us: f64,
) -> Result<Vec<SpamParams>> {
    let nq = zero
        .first()
        .or(one.first())
        .ok_or_else(|| Error::fit("no baselines given"))?
        .per_qubit
        .len();
    if zero.is_empty() || one.is_empty() {
        return Err(Error::fit("need baselines for both preps"));
    }
    if zero
        .iter()
        .chain(one)
        .any(|b| b.per_qubit.len() != nq)
    {
        return Err(Error::fit("inconsistent qubit counts across baselines"));
    }
    (0..nq)
        .map(|q| {
            let eps0 =
                zero.iter().map(|b| b.per_qubit[q]).sum::<f64>() / zero.len() as f64;
            let eps1 = if one.len() >= 2 {
                let xs: Vec<f64> = one.iter().map(|b| b.delay_us + readout_us / 2.0).collect();
                let ys: Vec<f64> = one.iter().map(|b| b.per_qubit[q]).collect();
                fit_linear(&xs, &ys)?.intercept
            } else {
                one[0].per_qubit[q]
            };
            let spam = SpamParams {
                eps0: eps0.clamp(0.0, 0.999),
                eps1: eps1.clamp(0.0, 0.999),
            };
            spam.validate()?;
            Ok(spam)
        })
        .collect()
}

/// Inverse-variance weighted mean with propagated uncertainty.
pub fn weighted_mean_t1(fits: &[(f64, f64)]) -> Result<(f64, f64)> {
    if fits.is_empty() {
        return Err(Error::fit("weighted mean of an empty list"));
    }
    if fits.iter().any(|&(_, s)| !(s > 0.0)) {
        return Err(Error::fit("all sigmas must be > 0"));
    }
    let wsum: f64 = fits.iter().map(|&(_, s)| 1.0 / (s * s)).sum();
    let mean = fits.iter().map(|&(v, s)| v / (s * s)).sum::<f64>() / wsum;
    Ok((mean, 1.0 / wsum.sqrt()))
}
