//! Two-level forward model: transient relaxation/excitation rates anchored
//! at the trigger, numerical state evolution over a shot, SPAM correction,
//! and shot-level error probabilities.
//!
//! The state obeys
//!
//! ```text
//! dP/dt = [ -G_exc           G_rel + G_T1 ] P
//!         [  G_exc         -(G_rel + G_T1)]
//! ```
//!
//! with `G_rel = A_rel exp(-t/tau_rel)` and
//! `G_exc = A_exc1 exp(-t/tau_exc1) + A_exc2 exp(-t/tau_exc2)` (second term
//! only for high-gap-island qubits), both zero before the trigger. Rates are
//! in kHz and times in us throughout.

use serde::{Deserialize, Serialize};

use crate::config::JunctionOrientation;
use crate::error::{Error, Result};
use crate::num::{khz_to_per_us, Scalar};
use crate::ode;
use crate::shotfile::Prep;

/// Per-qubit transient rate parameters. Amplitudes in kHz, decays in us;
/// `gamma_t1 = 1/T1` in kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams<S: Scalar = f64> {
    pub a_rel: S,
    pub tau_rel: S,
    pub a_exc1: S,
    pub tau_exc1: S,
    pub a_exc2: Option<S>,
    pub tau_exc2: Option<S>,
    pub gamma_t1: S,
}

impl<S: Scalar> RateParams<S> {
    pub fn validate(&self, orientation: JunctionOrientation) -> Result<()> {
        let amps_ok = self.a_rel >= S::zero()
            && self.a_exc1 >= S::zero()
            && self.a_exc2.map_or(true, |a| a >= S::zero());
        let taus_ok = self.tau_rel > S::zero()
            && self.tau_exc1 > S::zero()
            && self.tau_exc2.map_or(true, |t| t > S::zero());
        if !amps_ok || !taus_ok {
            return Err(Error::config(
                "rate amplitudes must be >= 0 and decay times > 0",
            ));
        }
        if self.a_exc2.is_some() != self.tau_exc2.is_some() {
            return Err(Error::config(
                "a_exc2 and tau_exc2 must be present together",
            ));
        }
        let has_second = self.a_exc2.is_some();
        match orientation {
            JunctionOrientation::HighGapIsland if !has_second => Err(Error::config(
                "high-gap-island params require the second excitation term",
            )),
            JunctionOrientation::LowGapIsland if has_second => Err(Error::config(
                "low-gap-island params must not carry a second excitation term",
            )),
            _ => Ok(()),
        }
    }

    /// Transient amplitudes scaled by an event magnitude factor; the static
    /// T1 rate is untouched.
    pub fn scaled(&self, magnitude: S) -> Self {
        RateParams {
            a_rel: self.a_rel * magnitude,
            a_exc1: self.a_exc1 * magnitude,
            a_exc2: self.a_exc2.map(|a| a * magnitude),
            ..*self
        }
    }

    /// Transient rates at time `t` (us) since the trigger; zero for `t < 0`.
    pub fn rates_at(&self, t: S) -> (S, S) {
        if t < S::zero() {
            return (S::zero(), S::zero());
        }
        let g_rel = self.a_rel * (-t / self.tau_rel).exp();
        let mut g_exc = self.a_exc1 * (-t / self.tau_exc1).exp();
        if let (Some(a2), Some(tau2)) = (self.a_exc2, self.tau_exc2) {
            g_exc = g_exc + a2 * (-t / tau2).exp();
        }
        (g_rel, g_exc)
    }

    /// Slowest transient decay constant.
    pub fn max_tau(&self) -> S {
        let mut m = self.tau_rel.max(self.tau_exc1);
        if let Some(t2) = self.tau_exc2 {
            m = m.max(t2);
        }
        m
    }
}

/// Two-level occupation probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector<S: Scalar = f64> {
    pub p0: S,
    pub p1: S,
}

impl<S: Scalar> StateVector<S> {
    pub fn new(p0: S, p1: S) -> Result<Self> {
        let one = S::one();
        let ok = p0 >= S::zero() && p0 <= one && p1 >= S::zero() && p1 <= one;
        if !ok || (p0 + p1 - one).abs() > S::c(1e-9) {
            return Err(Error::numeric(format!(
                "state vector ({p0}, {p1}) is not a normalized probability pair"
            )));
        }
        Ok(StateVector { p0, p1 })
    }

    pub fn basis(prep: Prep) -> Self {
        match prep {
            Prep::Zero => StateVector {
                p0: S::one(),
                p1: S::zero(),
            },
            Prep::One => StateVector {
                p0: S::zero(),
                p1: S::one(),
            },
            Prep::Ramsey => StateVector {
                p0: S::c(0.5),
                p1: S::c(0.5),
            },
        }
    }
}

/// SPAM infidelities entering the correction matrix
///
/// ```text
/// M = [ 1 - eps0/2      eps1/2   ]
///     [     eps0/2   1 - eps1/2  ]
/// ```
///
/// applied at both preparation and measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpamParams<S: Scalar = f64> {
    pub eps0: S,
    pub eps1: S,
}

impl<S: Scalar> SpamParams<S> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps0 >= S::zero()
            && self.eps0 < S::one()
            && self.eps1 >= S::zero()
            && self.eps1 < S::one();
        if ok {
            Ok(())
        } else {
            Err(Error::config("SPAM infidelities must lie in [0, 1)"))
        }
    }

    pub fn zero() -> Self {
        SpamParams {
            eps0: S::zero(),
            eps1: S::zero(),
        }
    }
}

/// Multiply by the SPAM correction matrix. Column sums are 1, so
/// normalization is preserved exactly.
pub fn apply_spam<S: Scalar>(p: StateVector<S>, spam: &SpamParams<S>) -> StateVector<S> {
    let half = S::c(0.5);
    let e0 = half * spam.eps0;
    let e1 = half * spam.eps1;
    StateVector {
        p0: (S::one() - e0) * p.p0 + e1 * p.p1,
        p1: e0 * p.p0 + (S::one() - e1) * p.p1,
    }
}

/// Integrator tolerances for the shot evolution.
pub const EVOLVE_RTOL: f64 = 1e-8;
pub const EVOLVE_ATOL: f64 = 1e-12;

/// Evolve the state from `t_start` (us relative to the trigger) for
/// `duration` us under the time-dependent rates.
///
/// Internally integrates the scalar equation
/// `p1' = G_exc (1 - p1) - (G_rel + G_T1) p1`, which preserves `p0 + p1 = 1`
/// exactly; the rate matrix of the full system is trace-preserving so the
/// reduction is lossless.
pub fn evolve_state<S: Scalar>(
    p: StateVector<S>,
    params: &RateParams<S>,
    t_start: S,
    duration: S,
) -> Result<StateVector<S>> {
    if duration < S::zero() {
        return Err(Error::numeric("evolve duration must be >= 0"));
    }
    if duration == S::zero() {
        return Ok(p);
    }
    let deriv = |t: S, p1: S| {
        let (g_rel, g_exc) = params.rates_at(t);
        let up = khz_to_per_us(g_exc);
        let down = khz_to_per_us(g_rel + params.gamma_t1);
        up * (S::one() - p1) - down * p1
    };
    let t_end = t_start + duration;
    // floor at a few ulps so the f32 instantiation stays solvable
    let rtol = S::c(EVOLVE_RTOL).max(S::epsilon() * S::c(100.0));
    let atol = S::c(EVOLVE_ATOL).max(S::epsilon());
    // Transient rates switch on at t = 0; split there so the integrator
    // never steps across the derivative discontinuity.
    let mut p1 = p.p1;
    if t_start < S::zero() && t_end > S::zero() {
        p1 = ode::integrate(&deriv, t_start, S::zero(), p1, rtol, atol)
            .map_err(|e| Error::numeric(format!("evolve_state: {e}")))?;
        p1 = ode::integrate(&deriv, S::zero(), t_end, p1, rtol, atol)
            .map_err(|e| Error::numeric(format!("evolve_state: {e}")))?;
    } else {
        p1 = ode::integrate(&deriv, t_start, t_end, p1, rtol, atol)
            .map_err(|e| Error::numeric(format!("evolve_state: {e}")))?;
    }
    let p1 = p1.max(S::zero()).min(S::one());
    Ok(StateVector {
        p0: S::one() - p1,
        p1,
    })
}

/// Probability of measuring the wrong state for a shot that starts
/// `trigger_offset` us after the trigger (negative = pre-trigger), with the
/// given detection delay.
///
/// The prepared state is `M_corr * basis(prep)`, evolved over
/// `delay + readout/2`, then `M_corr` is applied again; the result is
/// `1 - fidelity` to the prepared basis state.
pub fn shot_error_probability<S: Scalar>(
    prep: Prep,
    delay_us: S,
    trigger_offset_us: S,
    params: &RateParams<S>,
    spam: &SpamParams<S>,
    readout_duration_us: S,
) -> Result<S> {
    let duration = delay_us + readout_duration_us * S::c(0.5);
    let prepared = apply_spam(StateVector::basis(prep), spam);
    let evolved = evolve_state(prepared, params, trigger_offset_us, duration)?;
    let measured = apply_spam(evolved, spam);
    let fidelity = match prep {
        Prep::Zero => measured.p0,
        Prep::One => measured.p1,
        Prep::Ramsey => {
            return Err(Error::numeric(
                "shot_error_probability is defined for basis preps only",
            ))
        }
    };
    Ok((S::one() - fidelity).max(S::zero()).min(S::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q22() -> RateParams {
        RateParams {
            a_rel: 272.0,
            tau_rel: 6240.0,
            a_exc1: 162.0,
            tau_exc1: 42.0,
            a_exc2: None,
            tau_exc2: None,
            gamma_t1: 1000.0 / 61.0,
        }
    }

    fn q23() -> RateParams {
        RateParams {
            a_rel: 611.0,
            tau_rel: 370.0,
            a_exc1: 46.0,
            tau_exc1: 960.0,
            a_exc2: Some(760.0),
            tau_exc2: Some(17.0),
            gamma_t1: 1000.0 / 73.0,
        }
    }

    #[test]
    fn rates_at_trigger_match_table_values() {
        let (g_rel, g_exc) = q22().rates_at(0.0);
        assert_relative_eq!(g_rel, 272.0);
        assert_relative_eq!(g_exc, 162.0);
    }

    #[test]
    fn rates_vanish_at_long_times() {
        let (g_rel, g_exc) = q23().rates_at(1e9);
        assert_eq!(g_rel, 0.0);
        assert_eq!(g_exc, 0.0);
    }

    #[test]
    fn rates_clamp_before_trigger() {
        assert_eq!(q23().rates_at(-5.0), (0.0, 0.0));
    }

    #[test]
    fn q23_first_excitation_term_at_one_decay_time() {
        // a_exc1 e^{-960/960} = 46/e; subtract the (tiny) second-term tail
        let p = q23();
        let (_, g_exc) = p.rates_at(960.0);
        let second = 760.0 * (-960.0_f64 / 17.0).exp();
        assert_relative_eq!(g_exc - second, 46.0 / std::f64::consts::E, max_relative = 1e-12);
        assert_relative_eq!(g_exc - second, 16.92, max_relative = 1e-3);
    }

    #[test]
    fn orientation_gate() {
        assert!(q22().validate(JunctionOrientation::LowGapIsland).is_ok());
        assert!(q22().validate(JunctionOrientation::HighGapIsland).is_err());
        assert!(q23().validate(JunctionOrientation::HighGapIsland).is_ok());
        assert!(q23().validate(JunctionOrientation::LowGapIsland).is_err());
    }

    #[test]
    fn null_dynamics_leaves_state_unchanged() {
        let params = RateParams {
            a_rel: 0.0,
            tau_rel: 1.0,
            a_exc1: 0.0,
            tau_exc1: 1.0,
            a_exc2: None,
            tau_exc2: None,
            gamma_t1: 0.0,
        };
        let p = StateVector::new(0.3, 0.7).unwrap();
        let q = evolve_state(p, &params, 5.0, 123.0).unwrap();
        assert_relative_eq!(q.p1, 0.7, max_relative = 1e-9);
    }

    #[test]
    fn constant_relaxation_matches_exponential() {
        // tau_rel enormous so G_rel is effectively constant
        let gamma: f64 = 50.0; // kHz
        let gamma_t1: f64 = 12.0;
        let params = RateParams {
            a_rel: gamma,
            tau_rel: 1e12,
            a_exc1: 0.0,
            tau_exc1: 1.0,
            a_exc2: None,
            tau_exc2: None,
            gamma_t1,
        };
        let d = 8.0;
        let p = evolve_state(StateVector::basis(Prep::One), &params, 0.0, d).unwrap();
        let expected = (-(gamma + gamma_t1) * 1e-3 * d).exp();
        assert_relative_eq!(p.p1, expected, max_relative = 1e-6);
    }

    #[test]
    fn transient_relaxation_matches_separable_closed_form() {
        // p1' = -A e^{-t/tau} p1 integrates to
        // exp(-A tau (e^{-t0/tau} - e^{-t1/tau}))
        let a: f64 = 300.0;
        let tau: f64 = 55.0;
        let params = RateParams {
            a_rel: a,
            tau_rel: tau,
            a_exc1: 0.0,
            tau_exc1: 1.0,
            a_exc2: None,
            tau_exc2: None,
            gamma_t1: 0.0,
        };
        for &(t0, d) in &[(0.0, 10.0), (3.0, 40.0), (100.0, 500.0)] {
            let p = evolve_state(StateVector::basis(Prep::One), &params, t0, d).unwrap();
            let expected =
                (-a * 1e-3 * tau * ((-t0 / tau).exp() - (-(t0 + d) / tau).exp())).exp();
            assert_relative_eq!(p.p1, expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn evolution_splits_cleanly_across_the_trigger() {
        // start pre-trigger; only gamma_t1 acts before t=0
        let params = q23();
        let p = evolve_state(StateVector::basis(Prep::One), &params, -4.0, 8.0).unwrap();
        let mid = evolve_state(StateVector::basis(Prep::One), &params, -4.0, 4.0).unwrap();
        let q = evolve_state(mid, &params, 0.0, 4.0).unwrap();
        assert_relative_eq!(p.p1, q.p1, max_relative = 1e-7);
    }

    #[test]
    fn spam_identity_and_direct_multiply() {
        let p = StateVector::new(1.0, 0.0).unwrap();
        let id = apply_spam(p, &SpamParams::zero());
        assert_eq!(id, p);
        let m = apply_spam(p, &SpamParams { eps0: 0.1, eps1: 0.0 });
        assert_relative_eq!(m.p0, 0.95);
        assert_relative_eq!(m.p1, 0.05);
    }

    #[test]
    fn spam_preserves_normalization_for_any_eps() {
        for &(e0, e1) in &[(0.0, 0.0), (0.3, 0.1), (0.9, 0.9)] {
            let p = StateVector::new(0.25, 0.75).unwrap();
            let q = apply_spam(p, &SpamParams { eps0: e0, eps1: e1 });
            assert_relative_eq!(q.p0 + q.p1, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn far_future_shot_is_baseline_only() {
        let params = q22();
        let spam = SpamParams { eps0: 0.02, eps1: 0.04 };
        let err = shot_error_probability(Prep::One, 1.0, 1e9, &params, &spam, 4.0).unwrap();
        // closed-form baseline: spam'd |1> decaying under gamma_t1 for 3 us
        let prepared = apply_spam(StateVector::basis(Prep::One), &spam);
        let p1 = prepared.p1 * (-params.gamma_t1 * 1e-3 * 3.0).exp();
        let expected = 1.0 - apply_spam(StateVector::new(1.0 - p1, p1).unwrap(), &spam).p1;
        assert_relative_eq!(err, expected, max_relative = 1e-6);
    }

    #[test]
    fn error_at_trigger_approaches_rate_equilibrium_for_q22() {
        // At the trigger both rates are at full amplitude, so the prep-One
        // error is capped by 1 - G_exc/(G_exc + G_rel + G_T1) ~ 0.64; the
        // 3 us evolution gets roughly halfway there.
        let spam = SpamParams { eps0: 0.02, eps1: 0.04 };
        let err = shot_error_probability(Prep::One, 1.0, 0.0, &q22(), &spam, 4.0).unwrap();
        assert!((0.4..=0.65).contains(&err), "err = {err}");
    }

    #[test]
    fn relaxation_error_saturates_at_long_detection_times() {
        // A few hundred us in, excitation has decayed (tau_exc1 = 42 us) but
        // relaxation persists (tau_rel = 6240 us): the 12 us delay drives the
        // prep-One error to near-total saturation.
        let spam = SpamParams { eps0: 0.02, eps1: 0.04 };
        let err = shot_error_probability(Prep::One, 12.0, 300.0, &q22(), &spam, 4.0).unwrap();
        assert!((0.8..=1.0).contains(&err), "err = {err}");
    }

    #[test]
    fn spam_only_limit_for_prep_zero() {
        let params = RateParams {
            a_rel: 0.0,
            tau_rel: 1.0,
            a_exc1: 0.0,
            tau_exc1: 1.0,
            a_exc2: None,
            tau_exc2: None,
            gamma_t1: 0.0,
        };
        let spam = SpamParams { eps0: 0.02, eps1: 0.0 };
        let err = shot_error_probability(Prep::Zero, 1.0, 0.0, &params, &spam, 4.0).unwrap();
        // M applied twice: err = 1 - (1 - eps0/2)^2 = eps0 - eps0^2/4
        assert_relative_eq!(err, 0.02 - 0.0001, max_relative = 1e-9);
        assert_relative_eq!(err, 0.02, max_relative = 1e-2);
    }

    #[test]
    fn baseline_error_monotone_in_delay() {
        let params = RateParams {
            a_rel: 0.0,
            tau_rel: 1.0,
            a_exc1: 0.0,
            tau_exc1: 1.0,
            a_exc2: None,
            tau_exc2: None,
            gamma_t1: 20.0,
        };
        let spam = SpamParams { eps0: 0.01, eps1: 0.03 };
        let mut last = 0.0;
        for delay in [0.2, 0.6, 1.0, 2.0, 4.0, 8.0, 12.0] {
            let e = shot_error_probability(Prep::One, delay, 1e9, &params, &spam, 4.0).unwrap();
            assert!(e >= last, "error not monotone at delay {delay}");
            last = e;
        }
    }

    #[test]
    fn semigroup_property() {
        let params = q23();
        let p0 = StateVector::basis(Prep::One);
        let a = evolve_state(p0, &params, 2.0, 37.0).unwrap();
        let b1 = evolve_state(p0, &params, 2.0, 11.0).unwrap();
        let b = evolve_state(b1, &params, 13.0, 26.0).unwrap();
        assert_relative_eq!(a.p1, b.p1, max_relative = 1e-7);
    }

    #[test]
    fn generic_f32_instantiation_compiles_and_runs() {
        let params: RateParams<f32> = RateParams {
            a_rel: 100.0,
            tau_rel: 50.0,
            a_exc1: 0.0,
            tau_exc1: 1.0,
            a_exc2: None,
            tau_exc2: None,
            gamma_t1: 0.0,
        };
        let p = evolve_state(StateVector::<f32>::basis(Prep::One), &params, 0.0, 10.0).unwrap();
        assert!(p.p1 > 0.0 && p.p1 < 1.0);
    }
}
