//! Experiment configuration: chip description, timing, impact model and
//! Ramsey parameters.
//!
//! The on-disk dialect is TOML (flat sections, `key = value`, lists in
//! brackets); see the README for a complete annotated example. A minimal
//! empty config is valid and equals the documented defaults: the reference
//! 8-qubit chip at 10 Hz triggers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratemodel::{RateParams, SpamParams};

/// Which side of the superconducting-gap asymmetry connects to the
/// capacitor island. Selects the rate-model variant: high-gap-island qubits
/// carry a second excitation term, low-gap-island qubits must not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JunctionOrientation {
    #[serde(rename = "low-gap-island")]
    LowGapIsland,
    #[serde(rename = "high-gap-island")]
    HighGapIsland,
}

impl JunctionOrientation {
    pub fn as_str(self) -> &'static str {
        match self {
            JunctionOrientation::LowGapIsland => "low-gap-island",
            JunctionOrientation::HighGapIsland => "high-gap-island",
        }
    }
}

/// Static per-qubit description (the part stored in run headers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitConfig {
    pub id: String,
    pub orientation: JunctionOrientation,
    pub t1_us: f64,
    #[serde(default)]
    pub t1_err_us: f64,
}

impl QubitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1_us > 0.0) {
            return Err(Error::config(format!(
                "qubit {}: t1_us must be > 0 (got {})",
                self.id, self.t1_us
            )));
        }
        if !(self.t1_err_us >= 0.0) {
            return Err(Error::config(format!(
                "qubit {}: t1_err_us must be >= 0 (got {})",
                self.id, self.t1_err_us
            )));
        }
        Ok(())
    }
}

/// Full per-qubit entry: static description plus the injected rate-model and
/// SPAM parameters used by the simulator (and by round-trip checks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSpec {
    pub id: String,
    pub orientation: JunctionOrientation,
    pub t1_us: f64,
    #[serde(default)]
    pub t1_err_us: f64,
    pub a_rel_khz: f64,
    pub tau_rel_us: f64,
    pub a_exc1_khz: f64,
    pub tau_exc1_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_exc2_khz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_exc2_us: Option<f64>,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default = "default_eps1")]
    pub eps1: f64,
}

fn default_eps0() -> f64 {
    0.02
}

fn default_eps1() -> f64 {
    0.04
}

impl QubitSpec {
    pub fn qubit_config(&self) -> QubitConfig {
        QubitConfig {
            id: self.id.clone(),
            orientation: self.orientation,
            t1_us: self.t1_us,
            t1_err_us: self.t1_err_us,
        }
    }

    pub fn rate_params(&self) -> RateParams {
        RateParams {
            a_rel: self.a_rel_khz,
            tau_rel: self.tau_rel_us,
            a_exc1: self.a_exc1_khz,
            tau_exc1: self.tau_exc1_us,
            a_exc2: self.a_exc2_khz,
            tau_exc2: self.tau_exc2_us,
            gamma_t1: 1000.0 / self.t1_us,
        }
    }

    pub fn spam(&self) -> SpamParams {
        SpamParams {
            eps0: self.eps0,
            eps1: self.eps1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.qubit_config().validate()?;
        self.rate_params()
            .validate(self.orientation)
            .map_err(|e| Error::config(format!("qubit {}: {e}", self.id)))?;
        self.spam()
            .validate()
            .map_err(|e| Error::config(format!("qubit {}: {e}", self.id)))?;
        Ok(())
    }
}

/// Shot and trigger timing. All times in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    /// Linac trigger period (default 100 ms = 10 Hz).
    pub trigger_period_us: f64,
    /// Gun pulse width; impacts land uniformly within it.
    pub gun_pulse_width_us: f64,
    /// Reset + preparation time at the start of each shot.
    pub prep_duration_us: f64,
    /// Total readout time; the model evolves over delay + readout/2.
    pub readout_duration_us: f64,
    /// Ordered detection-delay schedule.
    pub detect_delays_us: Vec<f64>,
    /// Shots per measurement run.
    pub shots_per_run: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            trigger_period_us: 100_000.0,
            gun_pulse_width_us: 4.0,
            prep_duration_us: 0.8,
            readout_duration_us: 4.0,
            detect_delays_us: vec![0.2, 0.6, 1.0, 2.0, 4.0, 8.0, 12.0],
            shots_per_run: 5_000_000,
        }
    }
}

/// Allowed shot-period band. The nominal operating band is 5-15 us, but the
/// reference delay schedule (12 us delay + 4 us readout) lands at 16.8, so
/// the upper edge is relaxed to 17.
pub const SHOT_PERIOD_BOUNDS_US: (f64, f64) = (5.0, 17.0);

impl TimingConfig {
    pub fn shot_period_us(&self, delay_us: f64) -> f64 {
        self.prep_duration_us + delay_us + self.readout_duration_us
    }

    pub fn validate(&self) -> Result<()> {
        if self.detect_delays_us.is_empty() {
            return Err(Error::config("detect_delays_us must not be empty"));
        }
        if self.trigger_period_us <= 0.0 || self.gun_pulse_width_us < 0.0 {
            return Err(Error::config("trigger_period_us must be > 0 and gun_pulse_width_us >= 0"));
        }
        if self.prep_duration_us < 0.0 || self.readout_duration_us <= 0.0 {
            return Err(Error::config("prep_duration_us >= 0 and readout_duration_us > 0 required"));
        }
        if self.shots_per_run == 0 {
            return Err(Error::config("shots_per_run must be > 0"));
        }
        let (lo, hi) = SHOT_PERIOD_BOUNDS_US;
        for (i, &d) in self.detect_delays_us.iter().enumerate() {
            if d < 0.0 {
                return Err(Error::config(format!("detect delay {i} is negative")));
            }
            let p = self.shot_period_us(d);
            if !(lo..=hi).contains(&p) {
                return Err(Error::config(format!(
                    "shot period {p:.2} us for delay {d} us falls outside [{lo}, {hi}] us"
                )));
            }
        }
        Ok(())
    }

    pub fn delay_slot(&self, delay_us: f64) -> Option<u8> {
        self.detect_delays_us
            .iter()
            .position(|&d| (d - delay_us).abs() < 1e-9)
            .map(|i| i as u8)
    }
}

/// Per-trigger impact statistics at the chip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpactModel {
    /// Mean electrons per trigger at the chip.
    pub lambda_per_pulse: f64,
    /// Log-normal sigma of the per-electron magnitude factor; magnitudes of
    /// multi-electron events sum.
    pub magnitude_dispersion: f64,
    /// Emit per-trigger ground-truth impact labels in the sidecar.
    pub detector_coincidence: bool,
    /// Residual rate with the bending magnet de-energized (Bremsstrahlung
    /// from the radiator).
    pub deenergized_lambda: f64,
}

impl Default for ImpactModel {
    fn default() -> Self {
        ImpactModel {
            lambda_per_pulse: 0.2,
            magnitude_dispersion: 0.5,
            detector_coincidence: true,
            deenergized_lambda: 0.002,
        }
    }
}

impl ImpactModel {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_per_pulse < 0.0 || self.deenergized_lambda < 0.0 {
            return Err(Error::config("impact rates must be >= 0"));
        }
        if self.magnitude_dispersion < 0.0 {
            return Err(Error::config("magnitude_dispersion must be >= 0"));
        }
        Ok(())
    }
}

/// Exponential transient: `amplitude * exp(-t / decay)` anchored at the
/// impact time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transient {
    pub amplitude_khz: f64,
    pub decay_us: f64,
}

impl Transient {
    pub fn at(&self, t_us: f64) -> f64 {
        if t_us < 0.0 {
            0.0
        } else {
            self.amplitude_khz * (-t_us / self.decay_us).exp()
        }
    }
}

/// Ramsey-sequence generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RamseyConfig {
    /// Control-side intentional detuning; +100 kHz applied to the control
    /// means -100 kHz effective qubit detuning.
    pub intentional_detuning_khz: f64,
    /// Transient negative detuning following an impact.
    pub detuning_transient: Transient,
    /// Transient extra dephasing rate following an impact.
    pub dephasing_transient: Transient,
    /// Relaxation transient collapsing fringe visibility after an impact
    /// (the same quasiparticle burst that drives basis-prep errors); set to
    /// none to simulate pure-dephasing events.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxation_transient: Option<Transient>,
    /// 10-slot detection-delay schedule, strictly increasing.
    pub delay_schedule_us: Vec<f64>,
    /// Slow random walk of the baseline detuning.
    pub drift_khz_per_sqrt_min: f64,
    /// Static dephasing time entering the fringe envelope.
    pub t2_static_us: f64,
    /// Static fringe visibility.
    pub visibility: f64,
}

impl Default for RamseyConfig {
    fn default() -> Self {
        RamseyConfig {
            intentional_detuning_khz: 100.0,
            detuning_transient: Transient {
                amplitude_khz: 30.0,
                decay_us: 2000.0,
            },
            dephasing_transient: Transient {
                amplitude_khz: 300.0,
                decay_us: 600.0,
            },
            // ~3x faster than the detuning transient: the frequency error
            // persists much longer than the visibility collapse
            relaxation_transient: Some(Transient {
                amplitude_khz: 2000.0,
                decay_us: 667.0,
            }),
            delay_schedule_us: vec![0.032, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            drift_khz_per_sqrt_min: 0.0,
            t2_static_us: 18.0,
            visibility: 0.9,
        }
    }
}

impl RamseyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay_schedule_us.len() != 10 {
            return Err(Error::config(format!(
                "ramsey delay schedule must have 10 entries (got {})",
                self.delay_schedule_us.len()
            )));
        }
        if !self.delay_schedule_us.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("ramsey delays must be strictly increasing"));
        }
        if self.t2_static_us <= 0.0 {
            return Err(Error::config("t2_static_us must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::config("visibility must be in [0, 1]"));
        }
        if self.drift_khz_per_sqrt_min < 0.0 {
            return Err(Error::config("drift_khz_per_sqrt_min must be >= 0"));
        }
        Ok(())
    }
}

/// Complete experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub timing: TimingConfig,
    pub impact: ImpactModel,
    pub ramsey: RamseyConfig,
    /// Conditional-reset success probability given the previous measurement.
    pub reset_success: f64,
    pub qubits: Vec<QubitSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            timing: TimingConfig::default(),
            impact: ImpactModel::default(),
            ramsey: RamseyConfig::default(),
            reset_success: 0.98,
            qubits: default_chip(),
        }
    }
}

/// The 8-qubit chip with the reference per-qubit T1, orientation and rate
/// parameters.
pub fn default_chip() -> Vec<QubitSpec> {
    fn low(id: &str, t1: f64, t1e: f64, a_rel: f64, tau_rel: f64, a1: f64, tau1: f64) -> QubitSpec {
        QubitSpec {
            id: id.into(),
            orientation: JunctionOrientation::LowGapIsland,
            t1_us: t1,
            t1_err_us: t1e,
            a_rel_khz: a_rel,
            tau_rel_us: tau_rel,
            a_exc1_khz: a1,
            tau_exc1_us: tau1,
            a_exc2_khz: None,
            tau_exc2_us: None,
            eps0: default_eps0(),
            eps1: default_eps1(),
        }
    }
    #[allow(clippy::too_many_arguments)]
    fn high(
        id: &str,
        t1: f64,
        t1e: f64,
        a_rel: f64,
        tau_rel: f64,
        a1: f64,
        tau1: f64,
        a2: f64,
        tau2: f64,
    ) -> QubitSpec {
        QubitSpec {
            id: id.into(),
            orientation: JunctionOrientation::HighGapIsland,
            t1_us: t1,
            t1_err_us: t1e,
            a_rel_khz: a_rel,
            tau_rel_us: tau_rel,
            a_exc1_khz: a1,
            tau_exc1_us: tau1,
            a_exc2_khz: Some(a2),
            tau_exc2_us: Some(tau2),
            eps0: default_eps0(),
            eps1: default_eps1(),
        }
    }
    vec![
        low("q11", 35.0, 7.0, 294.0, 8080.0, 183.0, 20.0),
        high("q12", 72.0, 13.0, 527.0, 388.0, 38.0, 1030.0, 480.0, 15.0),
        high("q13", 36.0, 5.0, 383.0, 283.0, 45.0, 1010.0, 360.0, 19.0),
        low("q21", 42.0, 8.0, 467.0, 9110.0, 190.0, 34.0),
        low("q22", 61.0, 7.0, 272.0, 6240.0, 162.0, 42.0),
        high("q23", 73.0, 19.0, 611.0, 370.0, 46.0, 960.0, 760.0, 17.0),
        low("q31", 42.0, 7.0, 273.0, 7880.0, 137.0, 29.0),
        high("q33", 80.0, 17.0, 487.0, 414.0, 34.0, 1000.0, 620.0, 13.0),
    ]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        self.impact.validate()?;
        self.ramsey.validate()?;
        if self.qubits.is_empty() {
            return Err(Error::config("at least one qubit required"));
        }
        if self.qubits.len() > 16 {
            return Err(Error::config("at most 16 qubits supported"));
        }
        if !(0.0..=1.0).contains(&self.reset_success) {
            return Err(Error::config("reset_success must be in [0, 1]"));
        }
        for q in &self.qubits {
            q.validate()?;
        }
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    /// Indices of the high-gap-island qubits (used by excitation scoring).
    pub fn high_gap_indices(&self) -> Vec<usize> {
        self.qubits
            .iter()
            .enumerate()
            .filter(|(_, q)| q.orientation == JunctionOrientation::HighGapIsland)
            .map(|(i, _)| i)
            .collect()
    }

    /// Serialize back to the config dialect. `parse(emit(c)) == c`.
    pub fn emit(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse and validate a configuration from the documented dialect.
pub fn load_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::config(format!("parse failure: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Deep-merge `over` into `base`: tables merge recursively, everything else
/// (including arrays) is replaced wholesale.
fn merge_value(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse with dotted-path `key=value` overrides applied after the file parse
/// (last wins). Overrides act on the fully defaulted configuration, so paths
/// into default-populated sections (e.g. `qubits.0.t1_us`) resolve even when
/// the file does not mention them.
pub fn load_config_with_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let file_value: toml::Value =
        toml::from_str(text).map_err(|e| Error::config(format!("parse failure: {e}")))?;
    let mut value = toml::Value::try_from(ExperimentConfig::default())
        .expect("default config serializes");
    merge_value(&mut value, file_value);
    for ov in overrides {
        let (path, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{ov}` is not key=value")))?;
        apply_override(&mut value, path.trim(), raw.trim())?;
    }
    let cfg: ExperimentConfig = value
        .try_into()
        .map_err(|e| Error::config(format!("override produced invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    // bracketed list of numbers
    if let Some(inner) = raw.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        let items: Vec<toml::Value> = inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(parse_override_value)
            .collect();
        return toml::Value::Array(items);
    }
    toml::Value::String(raw.trim_matches('"').to_string())
}

fn apply_override(root: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if let Ok(idx) = seg.parse::<usize>() {
            let arr = cur
                .as_array_mut()
                .ok_or_else(|| Error::config(format!("override path `{path}`: `{seg}` indexes a non-array")))?;
            if idx >= arr.len() {
                return Err(Error::config(format!(
                    "override path `{path}`: index {idx} out of bounds"
                )));
            }
            if last {
                arr[idx] = parse_override_value(raw);
                return Ok(());
            }
            cur = &mut arr[idx];
        } else {
            let table = cur
                .as_table_mut()
                .ok_or_else(|| Error::config(format!("override path `{path}`: `{seg}` indexes a non-table")))?;
            if last {
                table.insert(seg.to_string(), parse_override_value(raw));
                return Ok(());
            }
            cur = table
                .entry(seg.to_string())
                .or_insert(toml::Value::Table(Default::default()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_equals_defaults() {
        let cfg = load_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.timing.detect_delays_us.len(), 7);
        assert_eq!(cfg.n_qubits(), 8);
    }

    #[test]
    fn reference_delay_schedule_gives_seven_slots() {
        let cfg = load_config("[timing]\ndetect_delays_us = [0.2, 0.6, 1, 2, 4, 8, 12]\n").unwrap();
        assert_eq!(cfg.timing.detect_delays_us.len(), 7);
        assert_eq!(cfg.timing.delay_slot(4.0), Some(4));
    }

    #[test]
    fn negative_t1_rejected() {
        let text = r#"
[[qubits]]
id = "qx"
orientation = "low-gap-island"
t1_us = -1.0
a_rel_khz = 100.0
tau_rel_us = 1000.0
a_exc1_khz = 10.0
tau_exc1_us = 50.0
"#;
        let err = load_config(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = load_config("[timing]\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn shot_period_band_enforced() {
        let err = load_config("[timing]\ndetect_delays_us = [20.0]\n").unwrap_err();
        assert!(err.to_string().contains("shot period"), "{err}");
    }

    #[test]
    fn emit_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.emit();
        let back = load_config(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let cfg = load_config_with_overrides(
            "",
            &[
                "impact.lambda_per_pulse=0".to_string(),
                "timing.shots_per_run=1000".to_string(),
                "qubits.0.t1_us=50".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.impact.lambda_per_pulse, 0.0);
        assert_eq!(cfg.timing.shots_per_run, 1000);
        assert_eq!(cfg.qubits[0].t1_us, 50.0);
    }

    #[test]
    fn orientation_gate_in_config() {
        // low-gap-island qubit with a second excitation term must be rejected
        let text = r#"
[[qubits]]
id = "qx"
orientation = "low-gap-island"
t1_us = 40.0
a_rel_khz = 100.0
tau_rel_us = 1000.0
a_exc1_khz = 10.0
tau_exc1_us = 50.0
a_exc2_khz = 5.0
tau_exc2_us = 10.0
"#;
        assert!(load_config(text).is_err());
    }
}
