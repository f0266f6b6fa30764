//! Ramsey shot-stream generation.
//!
//! Shots cycle through the 10-slot delay schedule, so the shot period varies
//! within each cycle. The |1> probability at the second pi/2 pulse is the
//! fringe formula with the detuning and dephasing transients anchored at the
//! nearest preceding impact, plus a slow random-walk drift of the baseline
//! detuning, then measurement SPAM.

use rayon::prelude::*;

use crate::config::{ExperimentConfig, QubitSpec, RamseyConfig};
use crate::error::Result;
use crate::rng::{stream, CounterRng};
use crate::shotfile::{Prep, Run, RunHeader};
use crate::simulator::impacts::sample_trigger_stream;
use crate::simulator::run::{assemble_records, GroundTruth};

/// Per-cycle shot timing: period of each slot and its start offset within
/// the cycle.
struct Cycle {
    periods: Vec<f64>,
    starts: Vec<f64>,
    total: f64,
}

fn cycle(config: &ExperimentConfig) -> Cycle {
    let t = &config.timing;
    let mut periods = Vec::with_capacity(10);
    let mut starts = Vec::with_capacity(10);
    let mut acc = 0.0;
    for &d in &config.ramsey.delay_schedule_us {
        starts.push(acc);
        let p = t.prep_duration_us + d + t.readout_duration_us;
        periods.push(p);
        acc += p;
    }
    Cycle {
        periods,
        starts,
        total: acc,
    }
}

fn shot_start(c: &Cycle, s: u64) -> f64 {
    (s / 10) as f64 * c.total + c.starts[(s % 10) as usize]
}

/// Probability of measuring |1> at delay `t_d` given the effective detuning
/// and extra dephasing, before measurement SPAM.
fn fringe_p1(
    ramsey: &RamseyConfig,
    t_d: f64,
    detuning_khz: f64,
    extra_dephasing_khz: f64,
    relax_env: f64,
) -> f64 {
    let envelope = (-t_d * (1.0 / ramsey.t2_static_us + extra_dephasing_khz * 1e-3)).exp();
    let phase = 2.0 * std::f64::consts::PI * detuning_khz * 1e-3 * t_d + std::f64::consts::FRAC_PI_2;
    0.5 + 0.5 * ramsey.visibility * relax_env * envelope * phase.sin()
}

#[allow(clippy::too_many_arguments)]
fn simulate_ramsey_qubit(
    q: &QubitSpec,
    qubit_index: usize,
    config: &ExperimentConfig,
    c: &Cycle,
    n_shots: u64,
    events: &[(f64, f64)],
    drift_khz: &[f64],
    trigger_period_us: f64,
    seed: u64,
) -> Result<Vec<u8>> {
    let ramsey = &config.ramsey;
    let readout = config.timing.readout_duration_us;
    let spam = q.spam();
    let stream_id =
        CounterRng::substream(stream::SHOT, qubit_index as u64, Prep::Ramsey.tag() as u64 * 16);
    let mut bits = vec![0u8; n_shots as usize];
    let mut ev_idx = 0usize;
    for s in 0..n_shots {
        let slot = (s % 10) as usize;
        let t_d = ramsey.delay_schedule_us[slot];
        let t_start = shot_start(c, s);
        let t_end = t_start + c.periods[slot];
        while ev_idx < events.len() && events[ev_idx].0 < t_end {
            ev_idx += 1;
        }
        let (det_tr, deph_tr, relax_env) = if ev_idx > 0 {
            let (ev_time, mag) = events[ev_idx - 1];
            let t0 = t_start - ev_time;
            let relax = ramsey
                .relaxation_transient
                .map(|tr| (-mag * tr.at(t0) * (t_d + readout / 2.0) * 1e-3).exp())
                .unwrap_or(1.0);
            (
                -mag * ramsey.detuning_transient.at(t0),
                mag * ramsey.dephasing_transient.at(t0),
                relax,
            )
        } else {
            (0.0, 0.0, 1.0)
        };
        // drift is piecewise constant between triggers
        let seg = (t_start / trigger_period_us) as usize;
        let drift = drift_khz.get(seg).copied().unwrap_or(0.0);
        let detuning = ramsey.intentional_detuning_khz + det_tr + drift;
        let p1 = fringe_p1(ramsey, t_d, detuning, deph_tr, relax_env);
        // measurement SPAM
        let p1_meas = p1 * (1.0 - spam.eps1 / 2.0) + (1.0 - p1) * spam.eps0 / 2.0;
        let mut rng = CounterRng::new(seed, stream_id, s);
        bits[s as usize] = (rng.uniform() < p1_meas) as u8;
    }
    Ok(bits)
}

/// Cumulative detuning random walk, one value per trigger segment. Segment 0
/// (before the first trigger) sits at 0.
fn drift_walk(n_triggers: u64, trigger_period_us: f64, sigma_khz_per_sqrt_min: f64, seed: u64) -> Vec<f64> {
    let step_sigma = sigma_khz_per_sqrt_min * (trigger_period_us / 6.0e7).sqrt();
    let mut walk = Vec::with_capacity(n_triggers as usize + 1);
    let mut acc = 0.0;
    walk.push(acc);
    for k in 0..n_triggers {
        let mut rng = CounterRng::new(seed, stream::DRIFT, k);
        let u1 = (1.0 - rng.uniform()).max(f64::MIN_POSITIVE);
        let u2 = rng.uniform();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        acc += step_sigma * z;
        walk.push(acc);
    }
    walk
}

pub fn simulate_ramsey_run(config: &ExperimentConfig, seed: u64) -> Result<(Run, GroundTruth)> {
    config.validate()?;
    let timing = &config.timing;
    let c = cycle(config);
    let n_shots = timing.shots_per_run;
    // end of the last shot == start of the (never-taken) next one
    let duration = shot_start(&c, n_shots);
    let n_triggers = (duration / timing.trigger_period_us).floor() as u64;

    let truth_stream = sample_trigger_stream(
        n_triggers,
        timing.trigger_period_us,
        timing.gun_pulse_width_us,
        &config.impact,
        config.impact.lambda_per_pulse,
        seed,
    );
    let events: Vec<(f64, f64)> = truth_stream
        .iter()
        .filter(|t| t.impact)
        .map(|t| (t.time_us, t.magnitude))
        .collect();
    let drift = drift_walk(
        n_triggers,
        timing.trigger_period_us,
        config.ramsey.drift_khz_per_sqrt_min,
        seed,
    );

    let per_qubit_bits: Vec<Vec<u8>> = config
        .qubits
        .par_iter()
        .enumerate()
        .map(|(qi, q)| {
            simulate_ramsey_qubit(
                q,
                qi,
                config,
                &c,
                n_shots,
                &events,
                &drift,
                timing.trigger_period_us,
                seed,
            )
        })
        .collect::<Result<_>>()?;

    let trigger_times: Vec<f64> = (0..n_triggers)
        .map(|k| (k as f64 + 1.0) * timing.trigger_period_us)
        .collect();
    let records = assemble_records(
        &per_qubit_bits,
        n_shots,
        |s| (s % 10) as u8,
        |s| shot_start(&c, s),
        |s| shot_start(&c, s) + c.periods[(s % 10) as usize],
        &trigger_times,
    );

    let header = RunHeader {
        n_qubits: config.n_qubits() as u16,
        n_shots,
        prep: Prep::Ramsey,
        timing: crate::config::TimingConfig {
            detect_delays_us: config.ramsey.delay_schedule_us.clone(),
            ..timing.clone()
        },
        qubits: config.qubits.iter().map(|q| q.qubit_config()).collect(),
        rng_seed: seed,
    };
    let truth = GroundTruth {
        prep: Prep::Ramsey.as_str().to_string(),
        delay_us: None,
        seed,
        lambda_per_pulse: config.impact.lambda_per_pulse,
        qubits: config.qubits.clone(),
        ramsey: Some(config.ramsey.clone()),
        triggers: truth_stream,
    };
    Ok((Run { header, shots: records }, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config_with_overrides;

    fn cfg(extra: &[&str]) -> ExperimentConfig {
        let mut ovs: Vec<String> = vec![
            "timing.shots_per_run=200000".into(),
            "timing.trigger_period_us=20000".into(),
        ];
        ovs.extend(extra.iter().map(|s| s.to_string()));
        load_config_with_overrides("", &ovs).unwrap()
    }

    #[test]
    fn baseline_fringe_matches_formula_per_slot() {
        let cfg = cfg(&["impact.lambda_per_pulse=0", "ramsey.drift_khz_per_sqrt_min=0"]);
        let (run, _) = simulate_ramsey_run(&cfg, 1).unwrap();
        let q = &cfg.qubits[0];
        let spam = q.spam();
        for slot in 0..10usize {
            let t_d = cfg.ramsey.delay_schedule_us[slot];
            let p1 = fringe_p1(&cfg.ramsey, t_d, 100.0, 0.0, 1.0);
            let expect = p1 * (1.0 - spam.eps1 / 2.0) + (1.0 - p1) * spam.eps0 / 2.0;
            let shots: Vec<_> = run
                .shots
                .iter()
                .filter(|s| s.delay_slot == slot as u8)
                .collect();
            let ones = shots.iter().filter(|s| s.state_bits & 1 == 1).count();
            let n = shots.len() as f64;
            let rate = ones as f64 / n;
            let sigma = (expect * (1.0 - expect) / n).sqrt();
            assert!(
                (rate - expect).abs() < 4.5 * sigma,
                "slot {slot}: {rate} vs {expect}"
            );
        }
    }

    #[test]
    fn impacts_depress_long_delay_slots() {
        // dephasing transient kills fringe contrast at the 9 us slot right
        // after an impact; with detuning +100 kHz the fringe there sits near
        // its maximum, so depression pulls the rate toward 0.5
        let cfg = cfg(&["impact.lambda_per_pulse=0.9", "impact.magnitude_dispersion=0"]);
        let (run, truth) = simulate_ramsey_run(&cfg, 3).unwrap();
        let c = cycle(&cfg);
        let mut post_ones = 0usize;
        let mut post_n = 0usize;
        for t in truth.impact_triggers() {
            for (i, s) in run.shots.iter().enumerate() {
                let start = shot_start(&c, i as u64);
                if s.delay_slot == 9 && start > t.time_us && start < t.time_us + 1000.0 {
                    post_ones += (s.state_bits & 1) as usize;
                    post_n += 1;
                }
            }
        }
        assert!(post_n > 50);
        let post_rate = post_ones as f64 / post_n as f64;
        let baseline = {
            let q = &cfg.qubits[0];
            let spam = q.spam();
            let p1 = fringe_p1(&cfg.ramsey, 9.0, 100.0, 0.0, 1.0);
            p1 * (1.0 - spam.eps1 / 2.0) + (1.0 - p1) * spam.eps0 / 2.0
        };
        assert!(
            post_rate < baseline - 0.05,
            "post {post_rate} vs baseline {baseline}"
        );
    }

    #[test]
    fn cycle_timing_and_slots_consistent() {
        let cfg = cfg(&[]);
        let (run, _) = simulate_ramsey_run(&cfg, 5).unwrap();
        for (i, s) in run.shots.iter().take(30).enumerate() {
            assert_eq!(s.delay_slot, (i % 10) as u8);
        }
        let c = cycle(&cfg);
        // default schedule: 10 * (0.8 + 4.0) + (0.032 + 1 + ... + 9)
        let expect = 10.0 * 4.8 + 45.032;
        assert!((c.total - expect).abs() < 1e-9, "{}", c.total);
    }

    #[test]
    fn drift_walk_scales_with_time() {
        // variance after N segments = N * sigma^2 * (period / min)
        let n = 2000u64;
        let walk = drift_walk(n, 60_000_000.0 / 100.0, 5.0, 7);
        // each segment is 0.01 min -> step sigma = 0.5 kHz
        let steps: Vec<f64> = walk.windows(2).map(|w| w[1] - w[0]).collect();
        let var = steps.iter().map(|s| s * s).sum::<f64>() / steps.len() as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.03, "step sd {}", var.sqrt());
    }

    #[test]
    fn deterministic() {
        let cfg = cfg(&["timing.shots_per_run=20000"]);
        let (a, _) = simulate_ramsey_run(&cfg, 9).unwrap();
        let (b, _) = simulate_ramsey_run(&cfg, 9).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }
}
