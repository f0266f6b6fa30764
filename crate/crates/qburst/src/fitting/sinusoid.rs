//! Decaying-sinusoid fits `A e^{-t/T_phi} sin(omega t + phi0) + c`.

use crate::error::{Error, Result};
use crate::fitting::lm::{fit_least_squares, LmOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidFit {
    pub amplitude: f64,
    pub t_phi: f64,
    /// rad per time unit.
    pub omega: f64,
    pub phi0: f64,
    pub offset: f64,
    pub amplitude_sd: f64,
    pub t_phi_sd: f64,
    pub omega_sd: f64,
    pub phi0_sd: f64,
    pub offset_sd: f64,
    pub residual_norm: f64,
}

/// Discrete-spectrum power at angular frequency `w` (works for nonuniform
/// sampling).
fn power_at(ts: &[f64], ys: &[f64], mean: f64, w: f64) -> f64 {
    let mut cs = 0.0;
    let mut sn = 0.0;
    for (&t, &y) in ts.iter().zip(ys) {
        let d = y - mean;
        cs += d * (w * t).cos();
        sn += d * (w * t).sin();
    }
    cs * cs + sn * sn
}

fn min_spacing(ts: &[f64]) -> f64 {
    ts.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Fit with the frequency initialized from the dominant spectral bin.
pub fn fit_decaying_sinusoid(ts: &[f64], ys: &[f64]) -> Result<SinusoidFit> {
    let (w0, peak, median) = dominant_frequency(ts, ys)?;
    // white noise gives peak/median ~ 6-9 over this grid; a real tone is
    // orders of magnitude above its sidelobe floor
    if peak < 12.0 * median {
        return Err(Error::fit(
            "no oscillation power above the noise floor; refusing sinusoid fit",
        ));
    }
    fit_decaying_sinusoid_with_init(ts, ys, w0)
}

/// Scan a frequency grid up to 95% of Nyquist; returns (best omega, peak
/// power, median power).
fn dominant_frequency(ts: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    precheck(ts, ys)?;
    let span = ts[ts.len() - 1] - ts[0];
    let dt = min_spacing(ts);
    let w_nyq = std::f64::consts::PI / dt;
    let w_min = 2.0 * std::f64::consts::PI / (4.0 * span);
    let n_grid = 512;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut best = (w_min, 0.0);
    let mut powers = Vec::with_capacity(n_grid);
    for i in 0..n_grid {
        let w = w_min + (0.95 * w_nyq - w_min) * i as f64 / (n_grid - 1) as f64;
        let p = power_at(ts, ys, mean, w);
        powers.push(p);
        if p > best.1 {
            best = (w, p);
        }
    }
    powers.sort_by(|a, b| a.total_cmp(b));
    let median = powers[powers.len() / 2];
    Ok((best.0, best.1, median))
}

fn precheck(ts: &[f64], ys: &[f64]) -> Result<()> {
    if ts.len() != ys.len() {
        return Err(Error::fit("t and y lengths differ"));
    }
    if ts.len() < 8 {
        return Err(Error::fit("sinusoid fit needs at least 8 points"));
    }
    if !ts.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::fit("time points must be strictly increasing"));
    }
    Ok(())
}

/// Fit with a caller-provided frequency initialization (rad per time unit),
/// e.g. a known intentional detuning.
pub fn fit_decaying_sinusoid_with_init(ts: &[f64], ys: &[f64], omega0: f64) -> Result<SinusoidFit> {
    precheck(ts, ys)?;
    let span = ts[ts.len() - 1] - ts[0];
    let dt = min_spacing(ts);
    let w_nyq = std::f64::consts::PI / dt;
    if omega0 <= 0.0 {
        return Err(Error::fit("initial omega must be > 0"));
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let (min, max) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
            (lo.min(y), hi.max(y))
        });
    let amp0 = ((max - min) / 2.0).max(1e-12);
    let residuals = |p: &[f64], r: &mut [f64]| {
        for (i, (&t, &y)) in ts.iter().zip(ys).enumerate() {
            r[i] = p[0] * (-t / p[1]).exp() * (p[2] * t + p[3]).sin() + p[4] - y;
        }
        Ok(())
    };
    let lower = [0.0, span * 1e-3, omega0 * 0.2, -8.0, min - (max - min)];
    let upper = [
        4.0 * amp0,
        span * 1e4,
        (omega0 * 5.0).min(w_nyq * 1.05),
        8.0,
        max + (max - min),
    ];
    // multi-start over phase (the sine phase is the usual local-minimum trap)
    let mut best: Option<crate::fitting::lm::LmResult> = None;
    for k in 0..4 {
        let phi0 = k as f64 * std::f64::consts::FRAC_PI_2;
        let p0 = [amp0, span.max(1e-9), omega0, phi0, mean];
        let fit = fit_least_squares(&residuals, ts.len(), &p0, &lower, &upper, &LmOptions::default())?;
        if best.as_ref().map_or(true, |b| fit.residual_norm < b.residual_norm) {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one start");
    let omega = fit.params[2];
    if omega > 0.97 * w_nyq {
        return Err(Error::fit(format!(
            "fitted frequency {omega:.4} rad/us sits at the sampling Nyquist \
             ({w_nyq:.4}); result is aliasing-ambiguous"
        )));
    }
    // canonicalize: amplitude >= 0 enforced by bounds; wrap phase to (-pi, pi]
    let mut phi0 = fit.params[3] % (2.0 * std::f64::consts::PI);
    if phi0 > std::f64::consts::PI {
        phi0 -= 2.0 * std::f64::consts::PI;
    }
    if phi0 <= -std::f64::consts::PI {
        phi0 += 2.0 * std::f64::consts::PI;
    }
    Ok(SinusoidFit {
        amplitude: fit.params[0],
        t_phi: fit.params[1],
        omega,
        phi0,
        offset: fit.params[4],
        amplitude_sd: fit.std_devs[0],
        t_phi_sd: fit.std_devs[1],
        omega_sd: fit.std_devs[2],
        phi0_sd: fit.std_devs[3],
        offset_sd: fit.std_devs[4],
        residual_norm: fit.residual_norm,
    })
}

/// Phase-locked variant for Ramsey fringes: `A e^{-t/T_phi} cos(omega t) + c`.
/// The sequence guarantees the fringe peaks at zero delay, so fixing the
/// phase removes the omega-phase trade-off that biases the free fit when
/// the envelope decays within the sampled window. Returned `phi0` is pi/2
/// (the fixed value in sine convention) with zero uncertainty.
pub fn fit_decaying_cosine(ts: &[f64], ys: &[f64], omega0: f64) -> Result<SinusoidFit> {
    precheck(ts, ys)?;
    let span = ts[ts.len() - 1] - ts[0];
    let dt = min_spacing(ts);
    let w_nyq = std::f64::consts::PI / dt;
    if omega0 <= 0.0 {
        return Err(Error::fit("initial omega must be > 0"));
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let (min, max) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
            (lo.min(y), hi.max(y))
        });
    let amp0 = ((max - min) / 2.0).max(1e-12);
    let residuals = |p: &[f64], r: &mut [f64]| {
        for (i, (&t, &y)) in ts.iter().zip(ys).enumerate() {
            r[i] = p[0] * (-t / p[1]).exp() * (p[2] * t).cos() + p[3] - y;
        }
        Ok(())
    };
    let lower = [0.0, span * 1e-3, omega0 * 0.2, min - (max - min)];
    let upper = [
        4.0 * amp0,
        span * 1e4,
        (omega0 * 5.0).min(w_nyq * 1.05),
        max + (max - min),
    ];
    let p0 = [amp0, span.max(1e-9), omega0, mean];
    let fit = fit_least_squares(&residuals, ts.len(), &p0, &lower, &upper, &LmOptions::default())?;
    let omega = fit.params[2];
    if omega > 0.97 * w_nyq {
        return Err(Error::fit(format!(
            "fitted frequency {omega:.4} rad/us sits at the sampling Nyquist \
             ({w_nyq:.4}); result is aliasing-ambiguous"
        )));
    }
    Ok(SinusoidFit {
        amplitude: fit.params[0],
        t_phi: fit.params[1],
        omega,
        phi0: std::f64::consts::FRAC_PI_2,
        offset: fit.params[3],
        amplitude_sd: fit.std_devs[0],
        t_phi_sd: fit.std_devs[1],
        omega_sd: fit.std_devs[2],
        phi0_sd: 0.0,
        offset_sd: fit.std_devs[3],
        residual_norm: fit.residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn series(f: impl Fn(f64) -> f64, t_max: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let ts: Vec<f64> = (0..n).map(|i| i as f64 * t_max / (n - 1) as f64).collect();
        let ys = ts.iter().map(|&t| f(t)).collect();
        (ts, ys)
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let w = 2.0 * std::f64::consts::PI * 0.1;
        let (ts, ys) = series(|t| 0.4 * (-t / 5.0f64).exp() * (w * t).sin() + 0.5, 9.0, 46);
        let f = fit_decaying_sinusoid(&ts, &ys).unwrap();
        assert_relative_eq!(f.amplitude, 0.4, max_relative = 1e-6);
        assert_relative_eq!(f.t_phi, 5.0, max_relative = 1e-5);
        assert_relative_eq!(f.omega, w, max_relative = 1e-6);
        assert_relative_eq!(f.phi0, 0.0, epsilon = 1e-5);
        assert_relative_eq!(f.offset, 0.5, max_relative = 1e-6);
    }

    #[test]
    fn phase_and_sign_canonicalized() {
        // negative amplitude = phase shift by pi
        let w = 1.0;
        let (ts, ys) = series(|t| -0.3 * (-t / 30.0f64).exp() * (w * t + 0.4).sin() + 0.1, 25.0, 60);
        let f = fit_decaying_sinusoid(&ts, &ys).unwrap();
        assert!(f.amplitude >= 0.0);
        assert_relative_eq!(f.amplitude, 0.3, max_relative = 1e-5);
        let wrapped = (f.phi0 - (0.4 - std::f64::consts::PI)).abs();
        assert!(wrapped < 1e-4 || (wrapped - 2.0 * std::f64::consts::PI).abs() < 1e-4);
    }

    #[test]
    fn nyquist_frequency_flagged() {
        // alternating signal: frequency exactly at Nyquist of unit sampling
        let ts: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let err = fit_decaying_sinusoid(&ts, &ys).unwrap_err();
        assert!(err.to_string().contains("Nyquist"), "{err}");
    }

    #[test]
    fn pure_noise_rejected() {
        let mut rng = crate::rng::CounterRng::new(3, crate::rng::stream::DRIFT, 9);
        let ts: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..64).map(|_| rng.uniform() - 0.5).collect();
        assert!(fit_decaying_sinusoid(&ts, &ys).is_err());
    }

    #[test]
    fn ten_slot_fringe_with_known_init() {
        // the Ramsey schedule: 10 points over 9 us, fringe at 100 kHz
        let w = 2.0 * std::f64::consts::PI * 0.1;
        let ts = [0.032, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let ys: Vec<f64> = ts
            .iter()
            .map(|&t| 0.45 * (-t / 18.0f64).exp() * (w * t + std::f64::consts::FRAC_PI_2).sin() + 0.5)
            .collect();
        let f = fit_decaying_sinusoid_with_init(&ts, &ys, w * 1.2).unwrap();
        assert_relative_eq!(f.omega, w, max_relative = 1e-4);
        assert_relative_eq!(f.t_phi, 18.0, max_relative = 1e-2);
    }

    #[test]
    fn phase_locked_fit_recovers_fast_decaying_fringe() {
        // steep envelope decay within the window: the free-phase fit's
        // danger zone; the phase-locked variant stays unbiased
        let w = 2.0 * std::f64::consts::PI * 0.08;
        let ts = [0.032, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let ys: Vec<f64> = ts
            .iter()
            .map(|&t| 0.3 * (-t / 6.0f64).exp() * (w * t).cos() + 0.5)
            .collect();
        let f = fit_decaying_cosine(&ts, &ys, 2.0 * std::f64::consts::PI * 0.1).unwrap();
        assert_relative_eq!(f.omega, w, max_relative = 1e-5);
        assert_relative_eq!(f.t_phi, 6.0, max_relative = 1e-4);
        assert_relative_eq!(f.amplitude, 0.3, max_relative = 1e-5);
    }

    #[test]
    fn too_few_points_rejected() {
        let ts: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let ys = vec![0.0, 1.0, 0.0, -1.0, 0.0];
        assert!(fit_decaying_sinusoid(&ts, &ys).is_err());
    }
}
