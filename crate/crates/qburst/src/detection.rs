//! Event classification and trace construction: relaxation/excitation
//! thresholds, Ramsey variance + matched-filter scan, baseline
//! down-selection, alignment and averaging.
//!
//! All functions are pure over a shared read-only run buffer; scoring and
//! averaging parallelize over triggers/events.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::fit_decaying_sinusoid;
use crate::shotfile::{Prep, Run};

/// Scoring windows around each trigger, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub post_window_ms: f64,
    /// (start, end) strictly before the trigger, e.g. (-6, -1).
    pub pre_window_ms: (f64, f64),
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            post_window_ms: 5.0,
            pre_window_ms: (-6.0, -1.0),
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.pre_window_ms;
        if !(self.post_window_ms > 0.0) {
            return Err(Error::detection("post window must be > 0"));
        }
        if !(a < b && b <= 0.0) {
            return Err(Error::detection("pre window must be an interval before the trigger"));
        }
        Ok(())
    }

    /// Window edges in whole shots relative to the trigger shot, rounded
    /// toward smaller windows so pre and post can never overlap.
    pub(crate) fn shot_bounds(&self, shot_period_us: f64) -> (i64, i64, i64) {
        let post = ((self.post_window_ms * 1000.0) / shot_period_us).floor() as i64;
        let pre_lo = ((self.pre_window_ms.0 * 1000.0) / shot_period_us).ceil() as i64;
        let pre_hi = ((self.pre_window_ms.1 * 1000.0) / shot_period_us).floor() as i64;
        (post.max(1), pre_lo, pre_hi)
    }
}

/// One detected event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub trigger_index: u64,
    /// Window statistic that crossed the threshold.
    pub score: f64,
    /// Percentile among detected events; the largest score has rank 1/n, so
    /// "largest 20%" is `rank_fraction <= 0.2`.
    pub rank_fraction: f64,
    /// Shot index the trigger landed in; alignment origin.
    pub aligned_shot_index: u64,
}

/// Per-trigger window statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerScore {
    pub trigger_index: u64,
    pub shot_index: u64,
    pub post_mean: f64,
    pub pre_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub k_sigma: u32,
    /// Pre-trigger fraction above the threshold (false-positive estimate).
    pub false_positive_rate: f64,
}

fn run_shot_period(run: &Run) -> Result<f64> {
    let slot = run
        .shots
        .first()
        .ok_or_else(|| Error::detection("empty run"))?
        .delay_slot as usize;
    let delay = *run
        .header
        .timing
        .detect_delays_us
        .get(slot)
        .ok_or_else(|| Error::detection("delay slot out of schedule range"))?;
    Ok(run.header.timing.shot_period_us(delay))
}

fn trigger_shots(run: &Run) -> Vec<u64> {
    run.shots
        .iter()
        .filter(|s| s.trigger)
        .map(|s| s.shot_index)
        .collect()
}

/// Error count of one record against a basis preparation.
fn error_count(state_bits: u16, n_qubits: u16, prep: Prep) -> u32 {
    let ones = (state_bits & ((1u16 << n_qubits) - 1).max(state_bits)).count_ones();
    match prep {
        Prep::Zero => ones,
        _ => n_qubits as u32 - ones,
    }
}

/// Per-trigger (post, pre) means of the summed error trace for a prep-|1>
/// run. Triggers whose windows fall outside the run are skipped. The trigger
/// shot itself (index 0, which straddles the impact) belongs to neither
/// window.
pub fn score_relaxation_triggers(run: &Run, windows: &WindowSpec) -> Result<Vec<TriggerScore>> {
    windows.validate()?;
    if run.header.prep != Prep::One {
        return Err(Error::detection("relaxation scoring needs a prep-|1> run"));
    }
    let period = run_shot_period(run)?;
    let (post, pre_lo, pre_hi) = windows.shot_bounds(period);
    let n = run.shots.len() as i64;
    if n < post + (pre_hi - pre_lo + 1) {
        return Err(Error::detection(format!(
            "run of {n} shots is shorter than the scoring windows"
        )));
    }
    let nq = run.header.n_qubits;
    // prefix sums of the per-shot system error count
    let mut prefix = Vec::with_capacity(run.shots.len() + 1);
    prefix.push(0u64);
    let mut acc = 0u64;
    for s in &run.shots {
        acc += error_count(s.state_bits, nq, Prep::One) as u64;
        prefix.push(acc);
    }
    let window_sum = |lo: i64, hi: i64| -> f64 {
        // inclusive bounds, caller guarantees 0 <= lo <= hi < n
        (prefix[(hi + 1) as usize] - prefix[lo as usize]) as f64 / (hi - lo + 1) as f64
    };
    let scores = trigger_shots(run)
        .into_iter()
        .enumerate()
        .filter_map(|(k, shot)| {
            let t = shot as i64;
            let (a, b) = (t + pre_lo, t + pre_hi);
            let (c, d) = (t + 1, t + post);
            if a < 0 || d >= n {
                return None;
            }
            Some(TriggerScore {
                trigger_index: k as u64,
                shot_index: shot,
                post_mean: window_sum(c, d),
                pre_mean: window_sum(a, b),
            })
        })
        .collect();
    Ok(scores)
}

/// Mean error of the high-gap-island qubits over the first
/// `window_ms` after each trigger, for a prep-|0> run (excitation events).
pub fn score_excitation_triggers(
    run: &Run,
    high_gap_qubits: &[usize],
    window_ms: f64,
    windows: &WindowSpec,
) -> Result<Vec<TriggerScore>> {
    if run.header.prep != Prep::Zero {
        return Err(Error::detection("excitation scoring needs a prep-|0> run"));
    }
    if high_gap_qubits.is_empty() {
        return Err(Error::detection("no high-gap-island qubits given"));
    }
    let period = run_shot_period(run)?;
    let post = ((window_ms * 1000.0) / period).floor().max(1.0) as i64;
    let (_, pre_lo, pre_hi) = windows.shot_bounds(period);
    let n = run.shots.len() as i64;
    let mask: u16 = high_gap_qubits.iter().map(|&q| 1u16 << q).sum();
    let mut prefix = Vec::with_capacity(run.shots.len() + 1);
    prefix.push(0u64);
    let mut acc = 0u64;
    for s in &run.shots {
        acc += (s.state_bits & mask).count_ones() as u64;
        prefix.push(acc);
    }
    let per_shot = high_gap_qubits.len() as f64;
    let window_mean = |lo: i64, hi: i64| -> f64 {
        (prefix[(hi + 1) as usize] - prefix[lo as usize]) as f64
            / ((hi - lo + 1) as f64 * per_shot)
    };
    Ok(trigger_shots(run)
        .into_iter()
        .enumerate()
        .filter_map(|(k, shot)| {
            let t = shot as i64;
            if t + pre_lo < 0 || t + post >= n {
                return None;
            }
            Some(TriggerScore {
                trigger_index: k as u64,
                shot_index: shot,
                post_mean: window_mean(t + 1, t + post),
                pre_mean: window_mean(t + pre_lo, t + pre_hi),
            })
        })
        .collect())
}

/// Threshold = mu_pre + k sigma_pre, k the smallest integer >= 5 with a
/// pre-trigger false-positive fraction < 1e-3.
pub fn derive_threshold(pre_means: &[f64], _post_means: &[f64]) -> Result<ThresholdResult> {
    if pre_means.len() < 1000 {
        return Err(Error::detection(format!(
            "threshold derivation needs >= 1000 triggers (got {})",
            pre_means.len()
        )));
    }
    let n = pre_means.len() as f64;
    let mu = pre_means.iter().sum::<f64>() / n;
    let var = pre_means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return Ok(ThresholdResult {
            threshold: mu + 0.5,
            k_sigma: 0,
            false_positive_rate: 0.0,
        });
    }
    let mut k = 5u32;
    loop {
        let thr = mu + k as f64 * sigma;
        let fpr = pre_means.iter().filter(|&&x| x > thr).count() as f64 / n;
        if fpr < 1e-3 {
            return Ok(ThresholdResult {
                threshold: thr,
                k_sigma: k,
                false_positive_rate: fpr,
            });
        }
        k += 1;
    }
}

/// Eventful triggers: score > threshold, ranked by score (largest first).
pub fn classify_events(scores: &[TriggerScore], threshold: f64) -> Vec<EventRecord> {
    let mut detected: Vec<&TriggerScore> =
        scores.iter().filter(|s| s.post_mean > threshold).collect();
    detected.sort_by(|a, b| b.post_mean.total_cmp(&a.post_mean));
    let n = detected.len() as f64;
    let mut events: Vec<EventRecord> = detected
        .iter()
        .enumerate()
        .map(|(rank, s)| EventRecord {
            trigger_index: s.trigger_index,
            score: s.post_mean,
            rank_fraction: (rank + 1) as f64 / n,
            aligned_shot_index: s.shot_index,
        })
        .collect();
    events.sort_by_key(|e| e.trigger_index);
    events
}

/// Quantile threshold matching a target event rate (e.g. the relaxation
/// mean rate applied to excitation scores). With distinct scores, exactly
/// `round(target_rate * n)` of them exceed the returned threshold.
pub fn derive_excitation_threshold(scores: &[f64], target_rate: f64) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::detection(format!(
            "target rate must be in (0, 1), got {target_rate}"
        )));
    }
    if scores.is_empty() {
        return Err(Error::detection("no scores to threshold"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((target_rate * n as f64).round() as usize).clamp(1, n);
    if k == n {
        return Ok(sorted[0] - 1.0);
    }
    // midpoint between the k-th largest and the next one down
    Ok((sorted[n - k] + sorted[n - k - 1]) / 2.0)
}

/// Averaged error traces aligned to detected events.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTraces {
    /// Shot offset from the trigger shot.
    pub rel_shots: Vec<i64>,
    /// Expected time since impact for each relative shot, us (the impact
    /// lands uniformly inside the trigger shot; measurement happens
    /// readout/2 before each shot's end).
    pub time_us: Vec<f64>,
    /// Mean error rate per qubit, indexed [qubit][rel].
    pub per_qubit: Vec<Vec<f64>>,
    /// Mean summed error over all qubits.
    pub system: Vec<f64>,
    /// Raw per-event system traces (for top-fraction selections).
    pub raw_system: Vec<Vec<f64>>,
    pub n_used: usize,
    pub n_excluded: usize,
}

pub fn align_average(
    run: &Run,
    events: &[EventRecord],
    span_before: u64,
    span_after: u64,
    prep: Prep,
) -> Result<AlignedTraces> {
    if events.is_empty() {
        return Err(Error::detection("no events to align"));
    }
    let period = run_shot_period(run)?;
    let readout = run.header.timing.readout_duration_us;
    let nq = run.header.n_qubits as usize;
    let n = run.shots.len() as i64;
    let len = (span_before + span_after + 1) as usize;
    let usable: Vec<&EventRecord> = events
        .iter()
        .filter(|e| {
            let c = e.aligned_shot_index as i64;
            c - span_before as i64 >= 0 && c + (span_after as i64) < n
        })
        .collect();
    let n_excluded = events.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::detection("all events fall too close to the run edges"));
    }
    let per_event: Vec<(Vec<u64>, Vec<f64>)> = usable
        .par_iter()
        .map(|e| {
            let c = e.aligned_shot_index as i64;
            let mut qs = vec![0u64; nq * len];
            let mut sys = vec![0.0f64; len];
            for (i, rel) in (-(span_before as i64)..=span_after as i64).enumerate() {
                let bits = run.shots[(c + rel) as usize].state_bits;
                let mut total = 0u32;
                for q in 0..nq {
                    let bit = (bits >> q) & 1;
                    let err = match prep {
                        Prep::Zero => bit as u32,
                        _ => 1 - bit as u32,
                    };
                    qs[q * len + i] += err as u64;
                    total += err;
                }
                sys[i] = total as f64;
            }
            (qs, sys)
        })
        .collect();
    let mut flat = vec![0u64; nq * len];
    let mut raw_system = Vec::with_capacity(per_event.len());
    for (qs, sys) in per_event {
        for (a, b) in flat.iter_mut().zip(&qs) {
            *a += b;
        }
        raw_system.push(sys);
    }
    let m = usable.len() as f64;
    let per_qubit: Vec<Vec<f64>> = (0..nq)
        .map(|q| (0..len).map(|i| flat[q * len + i] as f64 / m).collect())
        .collect();
    let system: Vec<f64> = (0..len)
        .map(|i| (0..nq).map(|q| per_qubit[q][i]).sum())
        .collect();
    let rel_shots: Vec<i64> = (-(span_before as i64)..=span_after as i64).collect();
    let time_us = rel_shots
        .iter()
        .map(|&r| r as f64 * period + period / 2.0 - readout / 2.0)
        .collect();
    Ok(AlignedTraces {
        rel_shots,
        time_us,
        per_qubit,
        system,
        raw_system,
        n_used: usable.len(),
        n_excluded,
    })
}

/// Ramsey variance scan output.
#[derive(Debug, Clone, PartialEq)]
pub struct RamseyScanResult {
    pub events: Vec<EventRecord>,
    /// Prominence threshold separating coincident from non-coincident peaks.
    pub threshold: f64,
    /// Per-segment variance of the system mean trace.
    pub variance: Vec<f64>,
    /// Matched-filter output over the inverted, offset-removed variance.
    pub filtered: Vec<f64>,
    pub segment_duration_us: f64,
}

fn local_peaks_with_prominence(x: &[f64]) -> Vec<(usize, f64)> {
    let n = x.len();
    let mut peaks = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if x[i] > x[i - 1] && x[i] >= x[i + 1] {
            // walk out to the nearest higher point on each side, tracking
            // the minimum along the way (standard prominence definition)
            let mut left_min = x[i];
            let mut j = i;
            while j > 0 {
                j -= 1;
                if x[j] > x[i] {
                    break;
                }
                left_min = left_min.min(x[j]);
            }
            if j == 0 && x[0] <= x[i] {
                left_min = left_min.min(x[0]);
            }
            let mut right_min = x[i];
            let mut j = i;
            while j + 1 < n {
                j += 1;
                if x[j] > x[i] {
                    break;
                }
                right_min = right_min.min(x[j]);
            }
            if j + 1 == n && x[n - 1] <= x[i] {
                right_min = right_min.min(x[n - 1]);
            }
            let prominence = x[i] - left_min.max(right_min);
            peaks.push((i, prominence));
        }
    }
    peaks
}

/// Segment-variance scan of a Ramsey run: dephasing events collapse the
/// fringes toward 0.5, so the per-segment variance of the system mean trace
/// drops sharply. The variance is inverted and offset-removed, convolved
/// with a unit-energy causal exponential matched filter, and peaks
/// coincident with a linac trigger (within `coincidence_window` points)
/// become events. The prominence threshold is the midpoint between the
/// noise level (the larger of the biggest non-coincident prominence and an
/// 8-sigma MAD floor) and the coincident cluster above it; with no cluster
/// above the noise, no events are reported.
pub fn ramsey_scan(
    run: &Run,
    segment_len: usize,
    filter_decay_ms: f64,
    coincidence_window: usize,
) -> Result<RamseyScanResult> {
    if run.header.prep != Prep::Ramsey {
        return Err(Error::detection("ramsey_scan needs a Ramsey run"));
    }
    if run.shots.len() < segment_len {
        return Err(Error::detection("run shorter than one segment"));
    }
    let nq = run.header.n_qubits as f64;
    let timing = &run.header.timing;
    let mean_delay = timing.detect_delays_us.iter().sum::<f64>()
        / timing.detect_delays_us.len() as f64;
    let seg_dur = segment_len as f64 * timing.shot_period_us(mean_delay);

    let n_seg = run.shots.len() / segment_len;
    let variance: Vec<f64> = (0..n_seg)
        .into_par_iter()
        .map(|i| {
            let seg = &run.shots[i * segment_len..(i + 1) * segment_len];
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for s in seg {
                let m = s.state_bits.count_ones() as f64 / nq;
                sum += m;
                sum2 += m * m;
            }
            let mean = sum / segment_len as f64;
            (sum2 / segment_len as f64 - mean * mean).max(0.0)
        })
        .collect();

    // invert and remove offset: events are dips in variance
    let mut sorted = variance.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let x: Vec<f64> = variance.iter().map(|&v| median - v).collect();

    // unit-energy causal exponential
    let decay_seg = (filter_decay_ms * 1000.0 / seg_dur).max(1e-6);
    let klen = ((decay_seg * 8.0).ceil() as usize).clamp(1, n_seg);
    let mut kernel: Vec<f64> = (0..klen).map(|j| (-(j as f64) / decay_seg).exp()).collect();
    let energy = kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    for k in &mut kernel {
        *k /= energy;
    }
    let filtered: Vec<f64> = (0..n_seg)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .take(i + 1)
                .map(|(j, &k)| k * x[i - j])
                .sum()
        })
        .collect();

    let peaks = local_peaks_with_prominence(&filtered);
    // trigger positions in segment units
    let triggers: Vec<(u64, u64, usize)> = trigger_shots(run)
        .into_iter()
        .enumerate()
        .map(|(k, shot)| (k as u64, shot, shot as usize / segment_len))
        .collect();
    let mut coincident: Vec<(usize, f64, u64, u64)> = Vec::new(); // (seg, prom, trig idx, trig shot)
    let mut non_coincident: Vec<f64> = Vec::new();
    for &(seg, prom) in &peaks {
        let near = triggers
            .iter()
            .filter(|(_, _, ts)| seg.abs_diff(*ts) < coincidence_window)
            .min_by_key(|(_, _, ts)| seg.abs_diff(*ts));
        match near {
            Some(&(ti, tshot, _)) => coincident.push((seg, prom, ti, tshot)),
            None => non_coincident.push(prom),
        }
    }
    // noise scale of the filtered series (robust, MAD-based): the event
    // cluster must clear both the largest non-coincident prominence and an
    // 8-sigma noise floor (segment variances have heavy tails), otherwise
    // there is no separable cluster and the scan reports nothing
    let mut f_sorted = filtered.clone();
    f_sorted.sort_by(f64::total_cmp);
    let f_med = f_sorted[f_sorted.len() / 2];
    let mut devs: Vec<f64> = filtered.iter().map(|f| (f - f_med).abs()).collect();
    devs.sort_by(f64::total_cmp);
    let sigma = 1.4826 * devs[devs.len() / 2];
    let max_nc = non_coincident.iter().copied().fold(0.0f64, f64::max);
    let floor = max_nc.max(8.0 * sigma);
    let cluster_min = coincident
        .iter()
        .map(|&(_, p, _, _)| p)
        .filter(|&p| p > floor)
        .fold(f64::INFINITY, f64::min);
    let threshold = if cluster_min.is_finite() {
        (floor + cluster_min) / 2.0
    } else {
        f64::INFINITY
    };

    // one event per trigger: keep the most prominent coincident peak
    let mut by_trigger: std::collections::BTreeMap<u64, (f64, u64)> = Default::default();
    for &(_, prom, ti, tshot) in &coincident {
        if prom > threshold {
            let entry = by_trigger.entry(ti).or_insert((prom, tshot));
            if prom > entry.0 {
                *entry = (prom, tshot);
            }
        }
    }
    let n = by_trigger.len() as f64;
    let mut proms: Vec<(u64, f64, u64)> = by_trigger
        .into_iter()
        .map(|(ti, (p, shot))| (ti, p, shot))
        .collect();
    let mut ranked = proms.clone();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let rank_of = |ti: u64| ranked.iter().position(|r| r.0 == ti).unwrap();
    proms.sort_by_key(|r| r.0);
    let events = proms
        .iter()
        .map(|&(ti, p, shot)| EventRecord {
            trigger_index: ti,
            score: p,
            rank_fraction: (rank_of(ti) + 1) as f64 / n,
            aligned_shot_index: shot,
        })
        .collect();
    Ok(RamseyScanResult {
        events,
        threshold,
        variance,
        filtered,
        segment_duration_us: seg_dur,
    })
}

/// Averaged 10-point fringe over the `n_cycles` complete schedule cycles
/// ending just before `shot`. Returns (delay, mean |1> fraction) pairs.
fn preceding_fringe(run: &Run, shot: u64, n_cycles: u64) -> Option<Vec<(f64, f64)>> {
    let cycle = (shot / 10).checked_sub(n_cycles)?;
    let start = cycle * 10;
    let nq = run.header.n_qubits as f64;
    let delays = &run.header.timing.detect_delays_us;
    let mut sums = vec![0.0f64; 10];
    let mut counts = vec![0u64; 10];
    for s in &run.shots[start as usize..(shot - shot % 10) as usize] {
        let slot = s.delay_slot as usize;
        sums[slot] += s.state_bits.count_ones() as f64 / nq;
        counts[slot] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return None;
    }
    Some(
        (0..10)
            .map(|i| (delays[i], sums[i] / counts[i] as f64))
            .collect(),
    )
}

/// Mean of the shortest half (the "shorth"): robust to outliers.
fn shorth_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let half = v.len() / 2 + 1;
    if half >= v.len() {
        return v.iter().sum::<f64>() / v.len() as f64;
    }
    let (mut best_i, mut best_range) = (0usize, f64::INFINITY);
    for i in 0..=(v.len() - half) {
        let range = v[i + half - 1] - v[i];
        if range < best_range {
            best_range = range;
            best_i = i;
        }
    }
    v[best_i..best_i + half].iter().sum::<f64>() / half as f64
}

/// Drop events whose pre-event baseline fringe frequency deviates from the
/// robust mean by more than `tolerance`. Returns (kept, n_dropped).
pub fn downselect_baseline(
    run: &Run,
    events: &[EventRecord],
    n_preceding: u64,
    tolerance: f64,
) -> Result<(Vec<EventRecord>, usize)> {
    if run.header.prep != Prep::Ramsey {
        return Err(Error::detection("baseline down-selection needs a Ramsey run"));
    }
    let freqs: Vec<(EventRecord, Option<f64>)> = events
        .par_iter()
        .map(|e| {
            let freq = preceding_fringe(run, e.aligned_shot_index, n_preceding).and_then(|pts| {
                let ts: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                fit_decaying_sinusoid(&ts, &ys)
                    .ok()
                    .map(|f| f.omega / (2.0 * std::f64::consts::PI))
            });
            (*e, freq)
        })
        .collect();
    let ok_freqs: Vec<f64> = freqs.iter().filter_map(|(_, f)| *f).collect();
    if ok_freqs.is_empty() {
        return Ok((Vec::new(), events.len()));
    }
    let center = shorth_mean(&ok_freqs);
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for (e, f) in freqs {
        match f {
            Some(f) if (f - center).abs() <= tolerance * center.abs() => kept.push(e),
            _ => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

/// One time slice of the aligned Ramsey average.
#[derive(Debug, Clone, PartialEq)]
pub struct FringeSlice {
    /// Slice center relative to the trigger, us.
    pub time_us: f64,
    /// Mean |1> fraction per delay slot (the 10-point fringe).
    pub fringe: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RamseyAligned {
    pub slices: Vec<FringeSlice>,
    pub delays_us: Vec<f64>,
    pub cycle_us: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Align events to the trigger with full-cycle resolution, average the
/// fringes per relative cycle, then down-sample by merging `downsample`
/// consecutive cycles per slice.
pub fn ramsey_align_average(
    run: &Run,
    events: &[EventRecord],
    cycles_before: u64,
    cycles_after: u64,
    downsample: u64,
) -> Result<RamseyAligned> {
    if events.is_empty() {
        return Err(Error::detection("no events to align"));
    }
    if downsample == 0 {
        return Err(Error::detection("downsample must be >= 1"));
    }
    let timing = &run.header.timing;
    let delays = timing.detect_delays_us.clone();
    let cycle_us: f64 = delays.iter().map(|&d| timing.shot_period_us(d)).sum();
    let nq = run.header.n_qubits as f64;
    let n_cycles_run = (run.shots.len() / 10) as i64;
    let span = cycles_before + cycles_after;
    let usable: Vec<&EventRecord> = events
        .iter()
        .filter(|e| {
            let c = (e.aligned_shot_index / 10) as i64;
            c - cycles_before as i64 >= 0 && c + cycles_after as i64 <= n_cycles_run
        })
        .collect();
    let n_excluded = events.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::detection("all events fall too close to the run edges"));
    }
    let n_bins = (span / downsample) as usize;
    let mut sums = vec![vec![0.0f64; 10]; n_bins];
    let mut counts = vec![vec![0u64; 10]; n_bins];
    for e in &usable {
        let c0 = (e.aligned_shot_index / 10) as i64 - cycles_before as i64;
        for r in 0..span as i64 {
            let bin = (r as u64 / downsample) as usize;
            if bin >= n_bins {
                break;
            }
            let start = ((c0 + r) * 10) as usize;
            for s in &run.shots[start..start + 10] {
                let slot = s.delay_slot as usize;
                sums[bin][slot] += s.state_bits.count_ones() as f64 / nq;
                counts[bin][slot] += 1;
            }
        }
    }
    let slices = (0..n_bins)
        .map(|b| {
            let rel_center =
                (b as f64 + 0.5) * downsample as f64 - cycles_before as f64;
            FringeSlice {
                time_us: rel_center * cycle_us,
                fringe: (0..10)
                    .map(|slot| sums[b][slot] / counts[b][slot].max(1) as f64)
                    .collect(),
            }
        })
        .collect();
    Ok(RamseyAligned {
        slices,
        delays_us: delays,
        cycle_us,
        n_used: usable.len(),
        n_excluded,
    })
}
