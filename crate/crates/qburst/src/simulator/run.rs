//! Shot-stream generation for basis-state preparation runs.
//!
//! Each shot draws a Bernoulli outcome from the rate-model error
//! probability, with the nearest preceding impact defining t = 0 and its
//! magnitude scaling the transient amplitudes. Error probabilities are
//! cached on a graded time grid per (qubit, quantized magnitude) and
//! interpolated per shot, which turns ~10^7 ODE solves per run into a few
//! hundred per cached curve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, QubitSpec, RamseyConfig};
use crate::error::{Error, Result};
use crate::ratemodel::{shot_error_probability, RateParams, SpamParams};
use crate::rng::{stream, CounterRng};
use crate::shotfile::{Prep, Run, RunHeader, ShotRecord};
use crate::simulator::impacts::{magnitude_bucket, sample_trigger_stream, TriggerTruth};

/// Injected parameters and per-trigger impact labels, written as a sidecar
/// next to the shot file. Consumed only by test harnesses, never by the
/// detection/fitting pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub prep: String,
    /// Detection delay for basis-prep runs; absent for Ramsey runs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delay_us: Option<f64>,
    pub seed: u64,
    pub lambda_per_pulse: f64,
    pub qubits: Vec<QubitSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ramsey: Option<RamseyConfig>,
    pub triggers: Vec<TriggerTruth>,
}

impl GroundTruth {
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("ground truth serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(format!("ground truth parse: {e}")))
    }

    pub fn impact_triggers(&self) -> impl Iterator<Item = &TriggerTruth> {
        self.triggers.iter().filter(|t| t.impact)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MagnetState {
    Energized,
    DeEnergized,
}

/// Error probabilities vs shot-start offset from the impact, for both basis
/// preparations (the opposite prep is needed when a failed reset inverts the
/// prepared state).
struct ResponseCurve {
    t0: Vec<f64>,
    p_zero: Vec<f64>,
    p_one: Vec<f64>,
    horizon_us: f64,
}

impl ResponseCurve {
    fn interp_at(&self, idx: usize, frac: f64, prep: Prep) -> f64 {
        let v = match prep {
            Prep::Zero => &self.p_zero,
            _ => &self.p_one,
        };
        v[idx] + frac * (v[idx + 1] - v[idx])
    }
}

/// Offset where a scaled transient's per-shot effect drops below 1e-6.
fn response_horizon(params: &RateParams, magnitude: f64, shot_period_us: f64) -> f64 {
    let mut h: f64 = 50.0;
    let exposure = shot_period_us * 1e-3; // kHz * us -> dimensionless
    let mut term = |a: f64, tau: f64| {
        let strength = a * magnitude * exposure;
        if strength > 1e-6 {
            h = h.max(tau * (strength / 1e-6).ln());
        }
    };
    term(params.a_rel, params.tau_rel);
    term(params.a_exc1, params.tau_exc1);
    if let (Some(a2), Some(t2)) = (params.a_exc2, params.tau_exc2) {
        term(a2, t2);
    }
    h
}

fn build_curve(
    params: &RateParams,
    spam: &SpamParams,
    magnitude: f64,
    delay_us: f64,
    readout_us: f64,
    shot_period_us: f64,
    max_horizon_us: f64,
) -> Result<ResponseCurve> {
    let scaled = params.scaled(magnitude);
    let horizon = response_horizon(params, magnitude, shot_period_us).min(max_horizon_us);
    // dense 1 us grid through the fast transients, then geometric
    let mut t0 = Vec::with_capacity(300);
    let mut t = -shot_period_us.ceil();
    while t < 100.0 {
        t0.push(t);
        t += 1.0;
    }
    while t < horizon {
        t0.push(t);
        t *= 1.05;
    }
    t0.push(horizon);
    let mut p_zero = Vec::with_capacity(t0.len());
    let mut p_one = Vec::with_capacity(t0.len());
    for &off in &t0 {
        p_zero.push(shot_error_probability(
            Prep::Zero, delay_us, off, &scaled, spam, readout_us,
        )?);
        p_one.push(shot_error_probability(
            Prep::One, delay_us, off, &scaled, spam, readout_us,
        )?);
    }
    Ok(ResponseCurve {
        t0,
        p_zero,
        p_one,
        horizon_us: horizon,
    })
}

fn zero_amplitude(params: &RateParams) -> RateParams {
    RateParams {
        a_rel: 0.0,
        a_exc1: 0.0,
        a_exc2: params.a_exc2.map(|_| 0.0),
        ..*params
    }
}

fn flip(prep: Prep) -> Prep {
    match prep {
        Prep::Zero => Prep::One,
        Prep::One => Prep::Zero,
        Prep::Ramsey => Prep::Ramsey,
    }
}

/// Measured-state bits for one qubit across the whole run.
#[allow(clippy::too_many_arguments)]
fn simulate_qubit(
    q: &QubitSpec,
    qubit_index: usize,
    prep: Prep,
    delay_slot: u8,
    delay_us: f64,
    readout_us: f64,
    shot_period_us: f64,
    n_shots: u64,
    reset_success: f64,
    events: &[(f64, f64)], // (impact time us, magnitude)
    seed: u64,
    run_duration_us: f64,
) -> Result<Vec<u8>> {
    let params = q.rate_params();
    let spam = q.spam();
    let baseline = zero_amplitude(&params);
    let base_zero = shot_error_probability(Prep::Zero, delay_us, 0.0, &baseline, &spam, readout_us)?;
    let base_one = shot_error_probability(Prep::One, delay_us, 0.0, &baseline, &spam, readout_us)?;
    let base = |p: Prep| match p {
        Prep::Zero => base_zero,
        _ => base_one,
    };

    let mut cache: std::collections::HashMap<i64, ResponseCurve> = std::collections::HashMap::new();
    // distinct stream per (qubit, prep, delay slot): runs sharing a seed see
    // the same impact stream but independent shot noise
    let stream_id = CounterRng::substream(
        stream::SHOT,
        qubit_index as u64,
        prep.tag() as u64 * 16 + delay_slot as u64,
    );
    let intended_bit: u8 = match prep {
        Prep::One => 1,
        _ => 0,
    };

    let mut bits = vec![0u8; n_shots as usize];
    let mut prev_measured = intended_bit; // steady state before the run
    let mut ev_idx = 0usize; // next event not yet reached
    let mut grid_idx = 0usize;

    for s in 0..n_shots {
        let t_start = s as f64 * shot_period_us;
        let t_end = t_start + shot_period_us;
        // latest impact that begins before this shot ends
        while ev_idx < events.len() && events[ev_idx].0 < t_end {
            ev_idx += 1;
            grid_idx = 0;
        }
        let mut rng = CounterRng::new(seed, stream_id, s);
        let reset_draw = rng.uniform();
        let inverted = prev_measured == 1 && reset_draw >= reset_success;
        let eff_prep = if inverted { flip(prep) } else { prep };

        let p_err_eff = if ev_idx > 0 {
            let (ev_time, mag) = events[ev_idx - 1];
            let t0 = t_start - ev_time;
            let bucket = magnitude_bucket(mag);
            let curve = match cache.entry(bucket) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(v) => v.insert(build_curve(
                    &params,
                    &spam,
                    mag,
                    delay_us,
                    readout_us,
                    shot_period_us,
                    run_duration_us,
                )?),
            };
            if t0 >= curve.horizon_us {
                base(eff_prep)
            } else {
                grid_idx = grid_idx.min(curve.t0.len() - 2);
                while grid_idx + 2 < curve.t0.len() && curve.t0[grid_idx + 1] <= t0 {
                    grid_idx += 1;
                }
                while grid_idx > 0 && curve.t0[grid_idx] > t0 {
                    grid_idx -= 1;
                }
                let span = curve.t0[grid_idx + 1] - curve.t0[grid_idx];
                let frac = ((t0 - curve.t0[grid_idx]) / span).clamp(0.0, 1.0);
                curve.interp_at(grid_idx, frac, eff_prep)
            }
        } else {
            base(eff_prep)
        };

        // p_err_eff is the chance of measuring the state opposite eff_prep
        let p_error_vs_intended = if inverted { 1.0 - p_err_eff } else { p_err_eff };
        let error = rng.uniform() < p_error_vs_intended;
        let measured = intended_bit ^ (error as u8);
        bits[s as usize] = measured;
        prev_measured = measured;
    }
    Ok(bits)
}

pub(crate) fn assemble_records(
    per_qubit_bits: &[Vec<u8>],
    n_shots: u64,
    delay_slot_of: impl Fn(u64) -> u8,
    shot_start: impl Fn(u64) -> f64,
    shot_end: impl Fn(u64) -> f64,
    trigger_times: &[f64],
) -> Vec<ShotRecord> {
    let mut records = Vec::with_capacity(n_shots as usize);
    let mut trig_idx = 0usize;
    for s in 0..n_shots {
        let mut state_bits = 0u16;
        for (q, bits) in per_qubit_bits.iter().enumerate() {
            state_bits |= (bits[s as usize] as u16) << q;
        }
        while trig_idx < trigger_times.len() && trigger_times[trig_idx] < shot_start(s) {
            trig_idx += 1;
        }
        let trigger =
            trig_idx < trigger_times.len() && trigger_times[trig_idx] < shot_end(s);
        records.push(ShotRecord {
            shot_index: s,
            state_bits,
            trigger,
            delay_slot: delay_slot_of(s),
        });
    }
    records
}

fn run_ground_truth(
    prep: Prep,
    delay_us: Option<f64>,
    seed: u64,
    lambda: f64,
    config: &ExperimentConfig,
    truth_stream: Vec<TriggerTruth>,
    ramsey: Option<RamseyConfig>,
) -> GroundTruth {
    GroundTruth {
        prep: prep.as_str().to_string(),
        delay_us,
        seed,
        lambda_per_pulse: lambda,
        qubits: config.qubits.clone(),
        ramsey,
        triggers: truth_stream,
    }
}

pub fn simulate_run(
    config: &ExperimentConfig,
    prep: Prep,
    delay_slot: u8,
    seed: u64,
) -> Result<(Run, GroundTruth)> {
    simulate_run_with_lambda(config, prep, delay_slot, config.impact.lambda_per_pulse, seed)
}

/// De-energized bending magnet: only the residual Bremsstrahlung rate
/// survives. Uses |1> preparation at the delay slot closest to 1 us.
pub fn simulate_control_test(
    config: &ExperimentConfig,
    magnet: MagnetState,
    seed: u64,
) -> Result<(Run, GroundTruth)> {
    let lambda = match magnet {
        MagnetState::Energized => config.impact.lambda_per_pulse,
        MagnetState::DeEnergized => config.impact.deenergized_lambda,
    };
    let slot = config
        .timing
        .detect_delays_us
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (*a - 1.0).abs().total_cmp(&(*b - 1.0).abs()))
        .map(|(i, _)| i as u8)
        .unwrap_or(0);
    simulate_run_with_lambda(config, Prep::One, slot, lambda, seed)
}

pub fn simulate_run_with_lambda(
    config: &ExperimentConfig,
    prep: Prep,
    delay_slot: u8,
    lambda: f64,
    seed: u64,
) -> Result<(Run, GroundTruth)> {
    if prep == Prep::Ramsey {
        return Err(Error::config("use simulate_ramsey_run for Ramsey preps"));
    }
    config.validate()?;
    let timing = &config.timing;
    let delay_us = *timing
        .detect_delays_us
        .get(delay_slot as usize)
        .ok_or_else(|| Error::config(format!("delay slot {delay_slot} out of range")))?;
    let shot_period = timing.shot_period_us(delay_us);
    let n_shots = timing.shots_per_run;
    let duration = n_shots as f64 * shot_period;
    let n_triggers = (duration / timing.trigger_period_us).floor() as u64;

    let truth_stream = sample_trigger_stream(
        n_triggers,
        timing.trigger_period_us,
        timing.gun_pulse_width_us,
        &config.impact,
        lambda,
        seed,
    );
    let events: Vec<(f64, f64)> = truth_stream
        .iter()
        .filter(|t| t.impact)
        .map(|t| (t.time_us, t.magnitude))
        .collect();

    let per_qubit_bits: Vec<Vec<u8>> = config
        .qubits
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            simulate_qubit(
                q,
                qi,
                prep,
                delay_slot,
                delay_us,
                timing.readout_duration_us,
                shot_period,
                n_shots,
                config.reset_success,
                &events,
                seed,
                duration,
            )
        })
        .collect::<Result<_>>()?;

    let trigger_times: Vec<f64> = (0..n_triggers)
        .map(|k| (k as f64 + 1.0) * timing.trigger_period_us)
        .collect();
    let records = assemble_records(
        &per_qubit_bits,
        n_shots,
        |_| delay_slot,
        |s| s as f64 * shot_period,
        |s| (s + 1) as f64 * shot_period,
        &trigger_times,
    );

    let header = RunHeader {
        n_qubits: config.n_qubits() as u16,
        n_shots,
        prep,
        timing: timing.clone(),
        qubits: config.qubits.iter().map(|q| q.qubit_config()).collect(),
        rng_seed: seed,
    };
    let truth = run_ground_truth(prep, Some(delay_us), seed, lambda, config, truth_stream, None);
    Ok((Run { header, shots: records }, truth))
}
