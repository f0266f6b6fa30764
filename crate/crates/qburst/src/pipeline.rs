//! End-to-end orchestration shared by the CLI and integration tests:
//! campaign simulation, event detection, the global rate fit, the Ramsey
//! transient chain, and artifact emission with stage-attributed errors.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, JunctionOrientation, QubitConfig};
use crate::detection::{
    align_average, classify_events, derive_excitation_threshold, derive_threshold,
    downselect_baseline, ramsey_align_average, ramsey_scan, score_excitation_triggers,
    score_relaxation_triggers, AlignedTraces, EventRecord, RamseyAligned, RamseyScanResult,
    WindowSpec,
};
use crate::error::{Error, Result};
use crate::fitting::ratefit::SIGMA_FLOOR;
use crate::fitting::{
    estimate_spam, extract_transient_recovery, fit_decaying_cosine, fit_rate_model,
    weighted_mean_t1, BaselineSeries, ExpFit, RateFitResult, RateTrace,
};
use crate::ratemodel::SpamParams;
use crate::report;
use crate::shotfile::{Prep, Run};
use crate::simulator::{simulate_ramsey_run, simulate_run, MagnetState};

/// File-name fragment for a detection delay (`0.2` -> `0p2`).
pub fn delay_label(delay_us: f64) -> String {
    format!("{delay_us}").replace('.', "p")
}

/// Canonical run file name: `{qubitset}_{prep}_{delay}.qshot`.
pub fn run_filename(n_qubits: usize, prep: Prep, delay_us: f64) -> String {
    format!("{n_qubits}q_{}_{}.qshot", prep.as_str(), delay_label(delay_us))
}

fn truth_path(run_path: &Path) -> PathBuf {
    run_path.with_extension("truth.toml")
}

/// Simulate the full 14-run basis-preparation campaign (both preps at every
/// delay) and write the shot files, ground-truth sidecars and manifest.
pub fn simulate_campaign(
    config: &ExperimentConfig,
    seed: u64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let inner = || -> Result<Vec<PathBuf>> {
        config.validate()?;
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for prep in [Prep::One, Prep::Zero] {
            for (slot, &delay) in config.timing.detect_delays_us.iter().enumerate() {
                let (run, truth) = simulate_run(config, prep, slot as u8, seed)?;
                let path = dir.join(run_filename(config.n_qubits(), prep, delay));
                run.write_path(&path)?;
                std::fs::write(truth_path(&path), truth.emit())?;
                paths.push(path);
            }
        }
        report::write_manifest(dir, config, seed, &[("command", "simulate".into())])?;
        Ok(paths)
    };
    inner().map_err(|e| Error::in_stage("simulate", e))
}

/// Simulate a Ramsey run and write it next to a manifest.
pub fn simulate_ramsey_campaign(
    config: &ExperimentConfig,
    seed: u64,
    dir: &Path,
) -> Result<PathBuf> {
    let inner = || -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let (run, truth) = simulate_ramsey_run(config, seed)?;
        let path = dir.join(format!("{}q_ramsey.qshot", config.n_qubits()));
        run.write_path(&path)?;
        std::fs::write(truth_path(&path), truth.emit())?;
        report::write_manifest(dir, config, seed, &[("command", "simulate-ramsey".into())])?;
        Ok(path)
    };
    inner().map_err(|e| Error::in_stage("simulate-ramsey", e))
}

/// A run read back from disk.
pub struct LoadedRun {
    pub path: PathBuf,
    pub run: Run,
}

/// Load every `.qshot` file in a directory, sorted by file name so the
/// downstream pipeline is order-deterministic.
pub fn load_runs(dir: &Path) -> Result<Vec<LoadedRun>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "qshot").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MissingInput(dir.to_path_buf()));
    }
    paths
        .into_iter()
        .map(|path| {
            let run = Run::read_path(&path)?;
            Ok(LoadedRun { path, run })
        })
        .collect()
}

/// Detection delay of a basis-preparation run (from its first record's slot).
pub fn run_delay_us(run: &Run) -> Result<f64> {
    let slot = run
        .shots
        .first()
        .ok_or_else(|| Error::detection("empty run"))?
        .delay_slot as usize;
    run.header
        .timing
        .detect_delays_us
        .get(slot)
        .copied()
        .ok_or_else(|| Error::detection("delay slot out of schedule range"))
}

fn high_gap_from_header(run: &Run) -> Vec<usize> {
    run.header
        .qubits
        .iter()
        .enumerate()
        .filter(|(_, q)| q.orientation == JunctionOrientation::HighGapIsland)
        .map(|(i, _)| i)
        .collect()
}

/// Per-qubit mean error over the pre-trigger windows of every trigger whose
/// window fits inside the run (the quiet baseline feeding SPAM estimation).
pub fn pre_trigger_baselines(run: &Run, windows: &WindowSpec, prep: Prep) -> Result<Vec<f64>> {
    windows.validate()?;
    let period = run
        .header
        .timing
        .shot_period_us(run_delay_us(run)?);
    let (_, pre_lo, pre_hi) = windows.shot_bounds(period);
    let nq = run.header.n_qubits as usize;
    let n = run.shots.len() as i64;
    let mut counts = vec![0u64; nq];
    let mut total = 0u64;
    for shot in run.shots.iter().filter(|s| s.trigger) {
        let t = shot.shot_index as i64;
        if t + pre_lo < 0 || t + pre_hi >= n {
            continue;
        }
        for idx in t + pre_lo..=t + pre_hi {
            let bits = run.shots[idx as usize].state_bits;
            for (q, count) in counts.iter_mut().enumerate() {
                let bit = (bits >> q) & 1;
                let err = match prep {
                    Prep::Zero => bit,
                    _ => 1 - bit,
                };
                *count += err as u64;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::detection("no complete pre-trigger windows in run"));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Detection results for one run.
pub struct RunDetection {
    pub prep: Prep,
    pub delay_us: f64,
    pub shot_period_us: f64,
    pub gun_pulse_width_us: f64,
    pub n_scored: usize,
    pub threshold: f64,
    pub event_rate: f64,
    pub events: Vec<EventRecord>,
    pub aligned: AlignedTraces,
    /// Pre-trigger mean error per qubit.
    pub baselines: Vec<f64>,
}

/// Detection results for the whole basis-preparation campaign.
pub struct DetectionSummary {
    pub relaxation: Vec<RunDetection>,
    pub excitation: Vec<RunDetection>,
    pub mean_relaxation_rate: f64,
    pub qubits: Vec<QubitConfig>,
    pub readout_us: f64,
}

/// How far the aligned averages extend around the trigger, us.
const ALIGN_BEFORE_US: f64 = 6_000.0;
const ALIGN_AFTER_US: f64 = 10_000.0;

fn detect_one(
    run: &Run,
    windows: &WindowSpec,
    threshold: f64,
    scores: &[crate::detection::TriggerScore],
) -> Result<RunDetection> {
    let prep = run.header.prep;
    let delay_us = run_delay_us(run)?;
    let period = run.header.timing.shot_period_us(delay_us);
    let events = classify_events(scores, threshold);
    let span_before = (ALIGN_BEFORE_US / period).ceil() as u64;
    let span_after = (ALIGN_AFTER_US / period).ceil() as u64;
    let aligned = align_average(run, &events, span_before, span_after, prep)?;
    let baselines = pre_trigger_baselines(run, windows, prep)?;
    Ok(RunDetection {
        prep,
        delay_us,
        shot_period_us: period,
        gun_pulse_width_us: run.header.timing.gun_pulse_width_us,
        n_scored: scores.len(),
        threshold,
        event_rate: events.len() as f64 / scores.len() as f64,
        events,
        aligned,
        baselines,
    })
}

/// Run relaxation detection on every prep-|1> run, derive the excitation
/// threshold from the mean relaxation event rate, and score the prep-|0>
/// runs against it.
pub fn detect_campaign(runs: &[&Run]) -> Result<DetectionSummary> {
    let windows = WindowSpec::default();
    let mut one_runs: Vec<&Run> = runs
        .iter()
        .copied()
        .filter(|r| r.header.prep == Prep::One)
        .collect();
    let mut zero_runs: Vec<&Run> = runs
        .iter()
        .copied()
        .filter(|r| r.header.prep == Prep::Zero)
        .collect();
    if one_runs.is_empty() {
        return Err(Error::detection("no prep-|1> runs to detect on"));
    }
    let by_delay = |r: &&Run| run_delay_us(r).unwrap_or(f64::INFINITY);
    one_runs.sort_by(|a, b| by_delay(a).total_cmp(&by_delay(b)));
    zero_runs.sort_by(|a, b| by_delay(a).total_cmp(&by_delay(b)));

    let relaxation: Vec<RunDetection> = one_runs
        .iter()
        .map(|run| {
            let scores = score_relaxation_triggers(run, &windows)?;
            let pre: Vec<f64> = scores.iter().map(|s| s.pre_mean).collect();
            let post: Vec<f64> = scores.iter().map(|s| s.post_mean).collect();
            let thr = derive_threshold(&pre, &post)?;
            detect_one(run, &windows, thr.threshold, &scores)
        })
        .collect::<Result<_>>()?;
    let mean_relaxation_rate =
        relaxation.iter().map(|d| d.event_rate).sum::<f64>() / relaxation.len() as f64;

    let excitation: Vec<RunDetection> = zero_runs
        .iter()
        .map(|run| {
            let high_gap = high_gap_from_header(run);
            let scores =
                score_excitation_triggers(run, &high_gap, windows.post_window_ms, &windows)?;
            let post: Vec<f64> = scores.iter().map(|s| s.post_mean).collect();
            let thr = derive_excitation_threshold(&post, mean_relaxation_rate)?;
            detect_one(run, &windows, thr, &scores)
        })
        .collect::<Result<_>>()?;

    let header = &one_runs[0].header;
    Ok(DetectionSummary {
        relaxation,
        excitation,
        mean_relaxation_rate,
        qubits: header.qubits.clone(),
        readout_us: header.timing.readout_duration_us,
    })
}

/// Aligned averages converted to fit input: t is the expected shot-start
/// offset since impact (the impact lands uniformly within the trigger shot
/// and the gun pulse, hence the half-period and half-pulse shifts). The
/// trigger shot and the first shot after it are skipped -- the impact can
/// fall inside either, leaving a partial exposure no single offset models.
/// Sigmas are binomial with one pseudo-count (zero-error bins would
/// otherwise collapse to the floor and get absurd weight) and floored at
/// `SIGMA_FLOOR`.
pub fn traces_for_qubit(runs: &[RunDetection], qubit: usize) -> Vec<RateTrace> {
    runs.iter()
        .map(|d| {
            let p = d.shot_period_us;
            let n = d.aligned.n_used as f64;
            let points = d
                .aligned
                .rel_shots
                .iter()
                .zip(&d.aligned.per_qubit[qubit])
                .filter(|(&rel, _)| rel >= 2)
                .map(|(&rel, &y)| {
                    let t = rel as f64 * p - p / 2.0 - d.gun_pulse_width_us / 2.0;
                    let pc = (y * n + 1.0) / (n + 2.0);
                    let sigma = (pc * (1.0 - pc) / n).sqrt().max(SIGMA_FLOOR);
                    (t, y, sigma)
                })
                .collect();
            RateTrace {
                prep: d.prep,
                delay_us: d.delay_us,
                points,
            }
        })
        .collect()
}

/// One qubit's pipeline output.
pub struct QubitFitResult {
    pub id: String,
    pub orientation: JunctionOrientation,
    pub spam: SpamParams,
    pub fit: RateFitResult,
}

/// SPAM estimation from pre-trigger baselines followed by the per-qubit
/// global rate fit over all 14 aligned traces.
pub fn fit_campaign(det: &DetectionSummary) -> Result<Vec<QubitFitResult>> {
    if det.relaxation.is_empty() || det.excitation.is_empty() {
        return Err(Error::fit("both preparations are required for the rate fit"));
    }
    let series = |runs: &[RunDetection]| -> Vec<BaselineSeries> {
        runs.iter()
            .map(|d| BaselineSeries {
                delay_us: d.delay_us,
                per_qubit: d.baselines.clone(),
            })
            .collect()
    };
    let spams = estimate_spam(
        &series(&det.excitation),
        &series(&det.relaxation),
        det.readout_us,
    )?;
    (0..det.qubits.len())
        .into_par_iter()
        .map(|q| {
            let mut traces = traces_for_qubit(&det.relaxation, q);
            traces.extend(traces_for_qubit(&det.excitation, q));
            let qc = &det.qubits[q];
            let fit = fit_rate_model(
                &traces,
                &spams[q],
                1000.0 / qc.t1_us,
                qc.orientation,
                det.readout_us,
            )?;
            Ok(QubitFitResult {
                id: qc.id.clone(),
                orientation: qc.orientation,
                spam: spams[q],
                fit,
            })
        })
        .collect()
}

/// Knobs for the Ramsey chain with the defaults used throughout.
pub struct RamseyOptions {
    pub segment_len: usize,
    pub filter_decay_ms: f64,
    pub coincidence_window: usize,
    /// Pre-event shots feeding baseline down-selection.
    pub n_preceding: u64,
    /// Relative frequency tolerance for down-selection.
    pub tolerance: f64,
    pub cycles_before: u64,
    pub cycles_after: u64,
    /// Cycles merged per aligned slice.
    pub downsample: u64,
    /// Early window excluded from the recovery fits, us.
    pub exclude_early_us: f64,
    /// Initial fringe frequency for the per-slice fits, kHz.
    pub init_freq_khz: f64,
}

impl Default for RamseyOptions {
    fn default() -> Self {
        RamseyOptions {
            segment_len: 200,
            filter_decay_ms: 5.0,
            coincidence_window: 6,
            n_preceding: 500,
            tolerance: 0.2,
            cycles_before: 54,
            cycles_after: 216,
            downsample: 2,
            exclude_early_us: 2000.0,
            init_freq_khz: 100.0,
        }
    }
}

/// Full Ramsey pipeline output.
pub struct RamseyPipelineResult {
    pub scan: RamseyScanResult,
    pub kept: Vec<EventRecord>,
    pub n_dropped: usize,
    pub aligned: RamseyAligned,
    pub baseline_freq_khz: f64,
    /// Baseline decay rate of the fringe envelope, 1/us.
    pub baseline_decay_per_us: f64,
    /// (slice time, baseline_freq - slice freq, sd), kHz; the detuning
    /// deficit that recovers to zero.
    pub detuning_series: Vec<(f64, f64, f64)>,
    /// (slice time, extra dephasing rate, sd), kHz.
    pub dephasing_series: Vec<(f64, f64, f64)>,
    pub detuning_recovery: ExpFit,
    /// Absent when the extra-dephasing series is too degenerate to fit
    /// (e.g. a fast transient already gone by the first usable slice).
    pub dephasing_recovery: Option<ExpFit>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Robust sigma estimate: 1.4826 * median absolute deviation.
fn mad_sigma(xs: &[f64], center: f64) -> f64 {
    let devs: Vec<f64> = xs.iter().map(|&x| (x - center).abs()).collect();
    1.4826 * median(&devs)
}

struct SliceFit {
    time_us: f64,
    freq_khz: f64,
    decay_per_us: f64,
}

/// Scan -> down-select -> align -> per-slice sinusoid fits -> recovery fits.
pub fn ramsey_pipeline(run: &Run, opts: &RamseyOptions) -> Result<RamseyPipelineResult> {
    let scan = ramsey_scan(run, opts.segment_len, opts.filter_decay_ms, opts.coincidence_window)?;
    if scan.events.is_empty() {
        return Err(Error::detection("no Ramsey events detected"));
    }
    let (kept, n_dropped) =
        downselect_baseline(run, &scan.events, opts.n_preceding, opts.tolerance)?;
    if kept.is_empty() {
        return Err(Error::detection("all Ramsey events rejected by down-selection"));
    }
    let aligned = ramsey_align_average(
        run,
        &kept,
        opts.cycles_before,
        opts.cycles_after,
        opts.downsample,
    )?;
    let w0 = 2.0 * std::f64::consts::PI * opts.init_freq_khz * 1e-3;
    let two_pi = 2.0 * std::f64::consts::PI;
    let fits: Vec<SliceFit> = aligned
        .slices
        .par_iter()
        .filter_map(|s| {
            let fit = fit_decaying_cosine(&aligned.delays_us, &s.fringe, w0).ok()?;
            // a frequency stuck at the fit's search-box edge means the
            // fringe was too collapsed to carry frequency information
            if fit.omega <= 0.21 * w0 || fit.omega >= 4.8 * w0 {
                return None;
            }
            Some(SliceFit {
                time_us: s.time_us,
                freq_khz: fit.omega.abs() / two_pi * 1e3,
                decay_per_us: 1.0 / fit.t_phi,
            })
        })
        .collect();
    let half_span = opts.downsample as f64 * aligned.cycle_us / 2.0;
    // fully pre-trigger and fully post-trigger-cycle slices, with a small
    // margin against float equality at the bin edges
    let eps = 1e-6 * aligned.cycle_us;
    let baseline: Vec<&SliceFit> = fits
        .iter()
        .filter(|f| f.time_us + half_span <= eps)
        .collect();
    let post: Vec<&SliceFit> = fits
        .iter()
        .filter(|f| f.time_us - half_span >= aligned.cycle_us - eps)
        .collect();
    if baseline.len() < 3 {
        return Err(Error::fit("too few pre-trigger slices fit for a Ramsey baseline"));
    }
    if post.len() < 4 {
        return Err(Error::fit("too few post-trigger slices fit for recovery extraction"));
    }
    // Per-slice LM sigmas are unreliable for this near-degenerate 5-param
    // fringe fit, so weight the recovery series by the robust scatter of
    // the quiet pre-trigger slices instead.
    let base_freqs: Vec<f64> = baseline.iter().map(|f| f.freq_khz).collect();
    let base_decays: Vec<f64> = baseline.iter().map(|f| f.decay_per_us).collect();
    let baseline_freq_khz = median(&base_freqs);
    let baseline_decay_per_us = median(&base_decays);
    let freq_sigma = mad_sigma(&base_freqs, baseline_freq_khz).max(1e-3);
    let decay_sigma = mad_sigma(&base_decays, baseline_decay_per_us).max(1e-9);
    let detuning_series: Vec<(f64, f64, f64)> = post
        .iter()
        .map(|f| (f.time_us, baseline_freq_khz - f.freq_khz, freq_sigma))
        .collect();
    let dephasing_series: Vec<(f64, f64, f64)> = post
        .iter()
        .map(|f| {
            (
                f.time_us,
                (f.decay_per_us - baseline_decay_per_us) * 1e3,
                decay_sigma * 1e3,
            )
        })
        .collect();
    let detuning_recovery = extract_transient_recovery(&detuning_series, opts.exclude_early_us)?;
    let dephasing_recovery =
        extract_transient_recovery(&dephasing_series, opts.exclude_early_us).ok();
    Ok(RamseyPipelineResult {
        scan,
        kept,
        n_dropped,
        aligned,
        baseline_freq_khz,
        baseline_decay_per_us,
        detuning_series,
        dephasing_series,
        detuning_recovery,
        dephasing_recovery,
    })
}

/// Control-test comparison: event fraction with the bending magnet
/// energized vs de-energized.
pub struct ControlTestResult {
    pub energized_rate: f64,
    pub deenergized_rate: f64,
    /// De-energized post-trigger system trace aligned over all triggers.
    pub deenergized_aligned: AlignedTraces,
}

pub fn control_test(config: &ExperimentConfig, seed: u64) -> Result<ControlTestResult> {
    let windows = WindowSpec::default();
    let rate_and_scores = |magnet: MagnetState| -> Result<(f64, Run)> {
        let (run, _) = crate::simulator::simulate_control_test(config, magnet, seed)?;
        let scores = score_relaxation_triggers(&run, &windows)?;
        let pre: Vec<f64> = scores.iter().map(|s| s.pre_mean).collect();
        let post: Vec<f64> = scores.iter().map(|s| s.post_mean).collect();
        let thr = derive_threshold(&pre, &post)?;
        let events = classify_events(&scores, thr.threshold);
        Ok((events.len() as f64 / scores.len() as f64, run))
    };
    let (energized_rate, _) = rate_and_scores(MagnetState::Energized)?;
    let (deenergized_rate, de_run) = rate_and_scores(MagnetState::DeEnergized)?;
    // flatness view: align over every scored trigger, eventful or not
    let scores = score_relaxation_triggers(&de_run, &windows)?;
    let all: Vec<EventRecord> = scores
        .iter()
        .map(|s| EventRecord {
            trigger_index: s.trigger_index,
            score: s.post_mean,
            rank_fraction: 1.0,
            aligned_shot_index: s.shot_index,
        })
        .collect();
    let period = de_run.header.timing.shot_period_us(run_delay_us(&de_run)?);
    let span_before = (ALIGN_BEFORE_US / period).ceil() as u64;
    let span_after = (ALIGN_AFTER_US / period).ceil() as u64;
    let deenergized_aligned = align_average(&de_run, &all, span_before, span_after, Prep::One)?;
    Ok(ControlTestResult {
        energized_rate,
        deenergized_rate,
        deenergized_aligned,
    })
}

/// Everything the full pipeline produced (also written to disk as CSVs).
pub struct PipelineOutput {
    pub detection: DetectionSummary,
    pub fits: Vec<QubitFitResult>,
    pub ramsey: Option<RamseyPipelineResult>,
}

fn qubit_ids(det: &DetectionSummary) -> Vec<String> {
    det.qubits.iter().map(|q| q.id.clone()).collect()
}

fn write_detection_artifacts(det: &DetectionSummary, out: &Path) -> Result<()> {
    let ids = qubit_ids(det);
    for d in det.relaxation.iter().chain(&det.excitation) {
        let tag = format!("{}_{}", d.prep.as_str(), delay_label(d.delay_us));
        report::write_events_csv(&out.join(format!("events_{tag}.csv")), &d.events, d.threshold)?;
        report::write_traces_csv(&out.join(format!("traces_{tag}.csv")), &d.aligned, &ids)?;
    }
    let rows: Vec<Vec<String>> = det
        .relaxation
        .iter()
        .map(|d| {
            vec![
                format!("{}", d.delay_us),
                d.n_scored.to_string(),
                d.events.len().to_string(),
                format!("{:.6e}", d.event_rate),
                format!("{:.6e}", d.event_rate / det.mean_relaxation_rate - 1.0),
            ]
        })
        .collect();
    report::write_csv(
        &out.join("event_rate_stability.csv"),
        &[
            "delay_us,n_triggers,n_events,event_rate,relative_deviation_from_mean",
            &format!("mean_event_rate={:.6e}", det.mean_relaxation_rate),
        ],
        &rows,
    )
}

fn write_fit_artifacts(fits: &[QubitFitResult], out: &Path) -> Result<()> {
    let table: Vec<(String, String, RateFitResult)> = fits
        .iter()
        .map(|f| (f.id.clone(), f.orientation.as_str().to_string(), f.fit.clone()))
        .collect();
    report::write_rate_table_csv(&out.join("rate_fits.csv"), &table)?;
    let rows: Vec<Vec<String>> = fits
        .iter()
        .map(|f| {
            vec![
                f.id.clone(),
                format!("{:.6e}", f.spam.eps0),
                format!("{:.6e}", f.spam.eps1),
            ]
        })
        .collect();
    report::write_csv(&out.join("spam.csv"), &["qubit,eps0,eps1"], &rows)
}

fn write_ramsey_artifacts(r: &RamseyPipelineResult, out: &Path) -> Result<()> {
    report::write_fringes_csv(&out.join("ramsey_fringes.csv"), &r.aligned)?;
    let series_rows = |s: &[(f64, f64, f64)]| -> Vec<Vec<String>> {
        s.iter()
            .map(|&(t, v, sd)| vec![format!("{t:.3}"), format!("{v:.6e}"), format!("{sd:.6e}")])
            .collect()
    };
    report::write_csv(
        &out.join("ramsey_detuning.csv"),
        &[
            "slice_time_us,detuning_deficit_khz,sd_khz",
            &format!("baseline_freq_khz={:.4}", r.baseline_freq_khz),
        ],
        &series_rows(&r.detuning_series),
    )?;
    report::write_csv(
        &out.join("ramsey_dephasing.csv"),
        &[
            "slice_time_us,extra_dephasing_khz,sd_khz",
            &format!("baseline_decay_per_us={:.6e}", r.baseline_decay_per_us),
        ],
        &series_rows(&r.dephasing_series),
    )?;
    let rec_row = |name: &str, f: &ExpFit| {
        vec![
            name.to_string(),
            format!("{:.6e}", f.a),
            format!("{:.6e}", f.a_sd),
            format!("{:.6e}", f.tau),
            format!("{:.6e}", f.tau_sd),
            format!("{:.6e}", f.c),
            format!("{:.6e}", f.c_sd),
        ]
    };
    let mut rows = vec![rec_row("detuning", &r.detuning_recovery)];
    if let Some(deph) = &r.dephasing_recovery {
        rows.push(rec_row("dephasing", deph));
    }
    report::write_csv(
        &out.join("ramsey_recovery.csv"),
        &["transient,amplitude_khz,amplitude_sd,tau_us,tau_sd,offset_khz,offset_sd"],
        &rows,
    )
}

fn orientation_mean_tau(fits: &[QubitFitResult], orientation: JunctionOrientation) -> Option<(f64, f64)> {
    let vals: Vec<(f64, f64)> = fits
        .iter()
        .filter(|f| f.orientation == orientation)
        .map(|f| (f.fit.params.tau_rel, f.fit.sds.tau_rel.max(1e-9)))
        .collect();
    weighted_mean_t1(&vals).ok()
}

fn write_summary(out: &Path, output: &PipelineOutput) -> Result<()> {
    use std::fmt::Write as _;
    let mut md = String::from("# Pipeline summary\n\n## Rate-model fits\n\n");
    let table: Vec<(String, String, RateFitResult)> = output
        .fits
        .iter()
        .map(|f| (f.id.clone(), f.orientation.as_str().to_string(), f.fit.clone()))
        .collect();
    md.push_str(&report::rate_table_markdown(&table));
    for (label, o) in [
        ("low-gap-island", JunctionOrientation::LowGapIsland),
        ("high-gap-island", JunctionOrientation::HighGapIsland),
    ] {
        if let Some((tau, sd)) = orientation_mean_tau(&output.fits, o) {
            let _ = writeln!(md, "\nWeighted mean tau_rel ({label}): {tau:.0} +- {sd:.0} us");
        }
    }
    let det = &output.detection;
    let _ = writeln!(
        md,
        "\n## Event rates\n\nMean relaxation event rate over {} delays: {:.4}",
        det.relaxation.len(),
        det.mean_relaxation_rate
    );
    for d in &det.relaxation {
        let _ = writeln!(
            md,
            "- delay {} us: {} events / {} triggers (rate {:.4})",
            d.delay_us,
            d.events.len(),
            d.n_scored,
            d.event_rate
        );
    }
    if let Some(r) = &output.ramsey {
        let _ = writeln!(
            md,
            "\n## Ramsey transients\n\n{} events detected, {} kept after down-selection.\n\
             Baseline fringe frequency: {:.2} kHz.\n\
             Detuning transient: {:.1} kHz amplitude, tau = {:.0} us.",
            r.scan.events.len(),
            r.kept.len(),
            r.baseline_freq_khz,
            r.detuning_recovery.a,
            r.detuning_recovery.tau,
        );
        if let Some(deph) = &r.dephasing_recovery {
            let _ = writeln!(
                md,
                "Dephasing transient: {:.1} kHz amplitude, tau = {:.0} us.",
                deph.a, deph.tau
            );
        }
    }
    std::fs::write(out.join("summary.md"), md)?;
    Ok(())
}

/// Detection stage alone: load runs, classify, align, write artifacts.
pub fn detect_to_dir(in_dir: &Path, out_dir: &Path) -> Result<DetectionSummary> {
    std::fs::create_dir_all(out_dir)?;
    let loaded = load_runs(in_dir).map_err(|e| Error::in_stage("load", e))?;
    let basis: Vec<&Run> = loaded
        .iter()
        .map(|l| &l.run)
        .filter(|r| r.header.prep != Prep::Ramsey)
        .collect();
    let detection = detect_campaign(&basis).map_err(|e| Error::in_stage("detect", e))?;
    write_detection_artifacts(&detection, out_dir).map_err(|e| Error::in_stage("detect", e))?;
    Ok(detection)
}

/// Detection followed by SPAM estimation and the global rate fits.
pub fn fit_rates_to_dir(
    in_dir: &Path,
    out_dir: &Path,
) -> Result<(DetectionSummary, Vec<QubitFitResult>)> {
    let detection = detect_to_dir(in_dir, out_dir)?;
    let fits = fit_campaign(&detection).map_err(|e| Error::in_stage("fit-rates", e))?;
    write_fit_artifacts(&fits, out_dir).map_err(|e| Error::in_stage("fit-rates", e))?;
    Ok((detection, fits))
}

/// Ramsey chain over the (single) Ramsey run found in `in_dir`.
pub fn fit_ramsey_to_dir(
    in_dir: &Path,
    out_dir: &Path,
    opts: &RamseyOptions,
) -> Result<RamseyPipelineResult> {
    std::fs::create_dir_all(out_dir)?;
    let loaded = load_runs(in_dir).map_err(|e| Error::in_stage("load", e))?;
    let ramsey_run = loaded
        .iter()
        .find(|l| l.run.header.prep == Prep::Ramsey)
        .ok_or_else(|| Error::in_stage("load", Error::MissingInput(in_dir.join("*ramsey*.qshot"))))?;
    let r = ramsey_pipeline(&ramsey_run.run, opts).map_err(|e| Error::in_stage("fit-ramsey", e))?;
    write_ramsey_artifacts(&r, out_dir).map_err(|e| Error::in_stage("fit-ramsey", e))?;
    Ok(r)
}

/// Detect -> align -> fit -> report over the shot files in `in_dir`, writing
/// artifacts into `out_dir` as each stage completes (so a failing stage
/// retains everything produced before it). A Ramsey run is processed when
/// present, otherwise that stage is skipped.
pub fn full_pipeline(in_dir: &Path, out_dir: &Path) -> Result<PipelineOutput> {
    std::fs::create_dir_all(out_dir)?;
    let loaded = load_runs(in_dir).map_err(|e| Error::in_stage("load", e))?;
    let basis: Vec<&Run> = loaded
        .iter()
        .map(|l| &l.run)
        .filter(|r| r.header.prep != Prep::Ramsey)
        .collect();
    let detection = detect_campaign(&basis).map_err(|e| Error::in_stage("detect", e))?;
    write_detection_artifacts(&detection, out_dir).map_err(|e| Error::in_stage("detect", e))?;
    let fits = fit_campaign(&detection).map_err(|e| Error::in_stage("fit-rates", e))?;
    write_fit_artifacts(&fits, out_dir).map_err(|e| Error::in_stage("fit-rates", e))?;
    let ramsey_run = loaded.iter().find(|l| l.run.header.prep == Prep::Ramsey);
    let ramsey = match ramsey_run {
        Some(l) => {
            let r = ramsey_pipeline(&l.run, &RamseyOptions::default())
                .map_err(|e| Error::in_stage("fit-ramsey", e))?;
            write_ramsey_artifacts(&r, out_dir).map_err(|e| Error::in_stage("fit-ramsey", e))?;
            Some(r)
        }
        None => None,
    };
    let output = PipelineOutput {
        detection,
        fits,
        ramsey,
    };
    write_summary(out_dir, &output).map_err(|e| Error::in_stage("report", e))?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tempdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "qburst-pipeline-{tag}-{}",
            std::process::id()
        ));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.timing.trigger_period_us = 50_000.0;
        cfg.timing.shots_per_run = 400_000;
        cfg.timing.detect_delays_us = vec![1.0, 8.0];
        cfg.impact.lambda_per_pulse = 0.5;
        cfg.qubits.truncate(4);
        cfg
    }

    #[test]
    fn filenames_are_stable() {
        assert_eq!(run_filename(8, Prep::One, 0.2), "8q_prep1_0p2.qshot");
        assert_eq!(run_filename(8, Prep::Zero, 12.0), "8q_prep0_12.qshot");
    }

    #[test]
    fn campaign_round_trips_through_disk() {
        let cfg = small_config();
        let dir = tempdir("roundtrip");
        let paths = simulate_campaign(&cfg, 11, &dir).unwrap();
        assert_eq!(paths.len(), 2 * cfg.timing.detect_delays_us.len());
        for p in &paths {
            assert!(truth_path(p).exists());
        }
        assert!(dir.join("manifest.toml").exists());
        let loaded = load_runs(&dir).unwrap();
        assert_eq!(loaded.len(), paths.len());
        std::fs::remove_dir_all(dir).unwrap();
    }

    /// Short-transient chip so a 20 ms trigger period keeps pre-windows
    /// quiet while still yielding >= 1000 triggers from 4M shots.
    fn fit_smoke_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.timing.trigger_period_us = 20_000.0;
        cfg.timing.shots_per_run = 4_000_000;
        cfg.timing.detect_delays_us = vec![1.0, 8.0];
        cfg.impact.lambda_per_pulse = 0.5;
        let mut a = cfg.qubits[0].clone(); // low-gap template
        a.id = "qa".into();
        a.tau_rel_us = 400.0;
        a.a_rel_khz = 300.0;
        let mut b = cfg.qubits[2].clone(); // high-gap template (q13)
        b.id = "qb".into();
        let mut c = cfg.qubits[0].clone();
        c.id = "qc".into();
        c.tau_rel_us = 800.0;
        c.a_rel_khz = 270.0;
        cfg.qubits = vec![a, b, c];
        cfg
    }

    #[test]
    fn detect_and_fit_produce_sane_results() {
        let cfg = fit_smoke_config();
        let dir = tempdir("detectfit");
        simulate_campaign(&cfg, 23, &dir).unwrap();
        let out = dir.join("out");
        let result = full_pipeline(&dir, &out).unwrap();
        assert_eq!(result.detection.relaxation.len(), 2);
        assert_eq!(result.detection.excitation.len(), 2);
        assert!(result.detection.mean_relaxation_rate > 0.2);
        assert!(result.detection.mean_relaxation_rate < 0.6);
        assert_eq!(result.fits.len(), 3);
        for (f, spec) in result.fits.iter().zip(&cfg.qubits) {
            assert_eq!(f.id, spec.id);
            // loose band: this is a smoke test of the plumbing, the tight
            // parameter-recovery checks live in the fit module tests
            let ratio = f.fit.params.tau_rel / spec.tau_rel_us;
            assert!(
                ratio > 0.4 && ratio < 2.5,
                "{}: tau_rel {} vs {}",
                f.id,
                f.fit.params.tau_rel,
                spec.tau_rel_us
            );
        }
        for name in [
            "event_rate_stability.csv",
            "rate_fits.csv",
            "spam.csv",
            "summary.md",
            "traces_prep1_1.csv",
            "events_prep0_8.csv",
        ] {
            assert!(out.join(name).exists(), "missing {name}");
        }
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn ramsey_pipeline_recovers_detuning_transient() {
        let cfg = crate::config::load_config_with_overrides(
            "",
            &[
                "timing.shots_per_run=1600000".into(),
                "impact.lambda_per_pulse=0.4".into(),
                "impact.magnitude_dispersion=0".into(),
            ],
        )
        .unwrap();
        let dir = tempdir("ramsey");
        let path = simulate_ramsey_campaign(&cfg, 61, &dir).unwrap();
        let run = Run::read_path(&path).unwrap();
        let result = ramsey_pipeline(&run, &RamseyOptions::default()).unwrap();
        assert!(!result.kept.is_empty());
        assert!(
            (result.baseline_freq_khz - cfg.ramsey.intentional_detuning_khz).abs() < 5.0,
            "baseline {}",
            result.baseline_freq_khz
        );
        // loose bands: few averaged events, the tight recovery check lives
        // in the acceptance suite
        let a = result.detuning_recovery.a;
        let tau = result.detuning_recovery.tau;
        assert!(a > 10.0 && a < 60.0, "amplitude {a}");
        assert!(tau > 500.0 && tau < 8000.0, "tau {tau}");
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn missing_input_is_stage_attributed() {
        let dir = tempdir("empty");
        let out = dir.join("out");
        let err = match full_pipeline(&dir, &out) {
            Err(e) => e,
            Ok(_) => panic!("empty input directory must fail"),
        };
        assert!(matches!(err, Error::Stage { stage: "load", .. }));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn baselines_match_quiet_run_spam() {
        let mut cfg = small_config();
        cfg.impact.lambda_per_pulse = 0.0;
        cfg.reset_success = 1.0;
        let (run, _) = simulate_run(&cfg, Prep::Zero, 0, 5).unwrap();
        let base = pre_trigger_baselines(&run, &WindowSpec::default(), Prep::Zero).unwrap();
        for (b, spec) in base.iter().zip(&cfg.qubits) {
            // prep-|0> baseline error is dominated by eps0 (T1 decay of a
            // |0> state contributes nothing; only SPAM flips appear)
            assert!((b - spec.eps0 / 2.0 * (2.0 - spec.eps0 / 2.0)).abs() < 0.01);
        }
    }
}
