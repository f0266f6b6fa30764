//! Artifact emission: schema-commented CSV files, the run manifest, and the
//! markdown summary table.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::detection::{AlignedTraces, EventRecord, RamseyAligned};
use crate::error::Result;
use crate::fitting::ratefit::RateFitResult;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Write a CSV with `#`-prefixed schema/comment lines before the data.
pub fn write_csv(path: &Path, schema: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    for line in schema {
        let _ = writeln!(out, "# {line}");
    }
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Manifest written next to every artifact set. The timestamp is the only
/// non-deterministic field anywhere in the output tree.
pub fn write_manifest(
    dir: &Path,
    config: &ExperimentConfig,
    seed: u64,
    extra: &[(&str, String)],
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "tool = \"qburst {}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "seed = {seed}");
    let _ = writeln!(out, "config_sha256 = \"{}\"", sha256_hex(config.emit().as_bytes()));
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let _ = writeln!(out, "created_unix = {created}");
    for (k, v) in extra {
        let _ = writeln!(out, "{k} = \"{v}\"");
    }
    std::fs::write(dir.join("manifest.toml"), out)?;
    Ok(())
}

fn fmt_g(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.is_finite() {
        format!("{v:.6e}")
    } else {
        "nan".to_string()
    }
}

pub fn write_traces_csv(path: &Path, traces: &AlignedTraces, qubit_ids: &[String]) -> Result<()> {
    let mut cols = vec!["relative_time_us".to_string()];
    cols.extend(qubit_ids.iter().map(|id| format!("{id}_error_rate")));
    cols.push("system_sum".to_string());
    let schema_line = cols.join(",");
    let rows: Vec<Vec<String>> = (0..traces.time_us.len())
        .map(|i| {
            let mut row = vec![fmt_g(traces.time_us[i])];
            row.extend(traces.per_qubit.iter().map(|q| fmt_g(q[i])));
            row.push(fmt_g(traces.system[i]));
            row
        })
        .collect();
    write_csv(
        path,
        &[
            &schema_line,
            &format!(
                "events_used={} events_excluded={}",
                traces.n_used, traces.n_excluded
            ),
        ],
        &rows,
    )
}

pub fn write_events_csv(path: &Path, events: &[EventRecord], threshold: f64) -> Result<()> {
    let rows: Vec<Vec<String>> = events
        .iter()
        .map(|e| {
            vec![
                e.trigger_index.to_string(),
                fmt_g(e.score),
                fmt_g(e.rank_fraction),
                e.aligned_shot_index.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "trigger_index,score,rank_fraction,aligned_shot_index",
            &format!("threshold={}", fmt_g(threshold)),
        ],
        &rows,
    )
}

pub fn write_fringes_csv(path: &Path, aligned: &RamseyAligned) -> Result<()> {
    let delays: Vec<String> = aligned
        .delays_us
        .iter()
        .map(|d| format!("p1_at_{d}us"))
        .collect();
    let schema = format!("slice_time_us,{}", delays.join(","));
    let rows: Vec<Vec<String>> = aligned
        .slices
        .iter()
        .map(|s| {
            let mut row = vec![fmt_g(s.time_us)];
            row.extend(s.fringe.iter().map(|&f| fmt_g(f)));
            row
        })
        .collect();
    write_csv(
        path,
        &[
            &schema,
            &format!(
                "events_used={} events_excluded={} cycle_us={}",
                aligned.n_used, aligned.n_excluded, aligned.cycle_us
            ),
        ],
        &rows,
    )
}

/// Table I / S2-style parameter table, one row per qubit.
pub fn rate_table_rows(fits: &[(String, String, RateFitResult)]) -> Vec<Vec<String>> {
    fits.iter()
        .map(|(id, orientation, fit)| {
            let p = &fit.params;
            let s = &fit.sds;
            vec![
                id.clone(),
                orientation.clone(),
                fmt_g(p.a_rel),
                fmt_g(s.a_rel),
                fmt_g(p.tau_rel),
                fmt_g(s.tau_rel),
                fmt_g(p.a_exc1),
                fmt_g(s.a_exc1),
                fmt_g(p.tau_exc1),
                fmt_g(s.tau_exc1),
                p.a_exc2.map(fmt_g).unwrap_or_default(),
                s.a_exc2.map(fmt_g).unwrap_or_default(),
                p.tau_exc2.map(fmt_g).unwrap_or_default(),
                s.tau_exc2.map(fmt_g).unwrap_or_default(),
                fmt_g(fit.residual_norm),
                fit.n_points.to_string(),
            ]
        })
        .collect()
}

pub const RATE_TABLE_SCHEMA: &str = "qubit,orientation,a_rel_khz,a_rel_sd,tau_rel_us,tau_rel_sd,\
a_exc1_khz,a_exc1_sd,tau_exc1_us,tau_exc1_sd,a_exc2_khz,a_exc2_sd,tau_exc2_us,tau_exc2_sd,\
residual_norm,n_points";

pub fn write_rate_table_csv(path: &Path, fits: &[(String, String, RateFitResult)]) -> Result<()> {
    write_csv(path, &[RATE_TABLE_SCHEMA], &rate_table_rows(fits))
}

/// Markdown summary in the conventional table column order.
pub fn rate_table_markdown(fits: &[(String, String, RateFitResult)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| qubit | orientation | A_rel (kHz) | tau_rel (us) | A_exc1 (kHz) | tau_exc1 (us) | A_exc2 (kHz) | tau_exc2 (us) |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    for (id, orientation, fit) in fits {
        let p = &fit.params;
        let s = &fit.sds;
        let cell = |v: f64, sd: f64| format!("{v:.0} +- {sd:.0}");
        let opt = |v: Option<f64>, sd: Option<f64>| match (v, sd) {
            (Some(v), Some(sd)) => cell(v, sd),
            _ => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "| {id} | {orientation} | {} | {} | {} | {} | {} | {} |",
            cell(p.a_rel, s.a_rel),
            cell(p.tau_rel, s.tau_rel),
            cell(p.a_exc1, s.a_exc1),
            cell(p.tau_exc1, s.tau_exc1),
            opt(p.a_exc2, s.a_exc2),
            opt(p.tau_exc2, s.tau_exc2),
        );
    }
    out
}
