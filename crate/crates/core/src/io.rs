//! Artifact formats: binned traces, JSON-lines event logs and CSV tables.
//!
//! Times are written with 17 significant digits so they parse back to the
//! same `f64`. Probabilities and ratios use 6. Every file starts with `#`
//! comment lines carrying the seed and configuration, and files are written
//! through a temporary sibling and renamed into place.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{Arm, GainRow, TrialResult};
use crate::error::ParamError;
use crate::photophysics::Gate;
use crate::simulate::Trajectory;
use crate::stats::SurvivalCurve;

pub fn fmt_time(x: f64) -> String {
    format!("{x:.16e}")
}

/// Six significant digits in positional notation where reasonable.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-3..=15).contains(&exp) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// `# ` prefixed header lines.
pub fn header(seed: u64, config_text: &str) -> String {
    let mut s = format!("# seed = {seed}\n");
    for line in config_text.lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

/// Writes `contents` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

/// Counts photons in half-open bins `[k*w, (k+1)*w)` covering `[0, end)`.
/// Bins after the last photon are kept as zeros.
pub fn bin_trace(
    photon_times: &[f64],
    bin_width: f64,
    end: f64,
) -> Result<Vec<(f64, u64)>, ParamError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(ParamError::new(
            "bin_width",
            format!("must be > 0, got {bin_width}"),
        ));
    }
    if !(end.is_finite() && end >= 0.0) {
        return Err(ParamError::new(
            "end",
            format!("must be finite and >= 0, got {end}"),
        ));
    }
    let n_bins = (end / bin_width).ceil() as usize;
    let mut bins = vec![0u64; n_bins];
    for &t in photon_times {
        if t < 0.0 || t >= end {
            continue;
        }
        let k = ((t / bin_width).floor() as usize).min(n_bins - 1);
        bins[k] += 1;
    }
    Ok(bins
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * bin_width, c))
        .collect())
}

pub fn trace_csv(bins: &[(f64, u64)], head: &str) -> String {
    let mut s = String::from(head);
    s.push_str("bin_start_s,counts\n");
    for (start, c) in bins {
        s.push_str(&format!("{},{c}\n", fmt_time(*start)));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Photon,
    Dark,
    GateOn,
    GateOff,
    Bleach,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogMeta {
    pub seed: u64,
    pub end_time: f64,
    pub config: String,
}

/// Time-ordered events of a recorded trajectory. At equal times gate
/// changes come first, then detections, then bleaching.
pub fn event_records(traj: &Trajectory) -> Vec<EventRecord> {
    let mut out: Vec<(f64, u8, EventKind)> = Vec::new();
    for &(t, g) in &traj.gate_events {
        let kind = match g {
            Gate::On => EventKind::GateOn,
            Gate::Off => EventKind::GateOff,
        };
        out.push((t, 0, kind));
    }
    out.extend(traj.photon_times.iter().map(|&t| (t, 1, EventKind::Photon)));
    out.extend(traj.dark_times.iter().map(|&t| (t, 1, EventKind::Dark)));
    if let Some(t) = traj.bleach_time {
        out.push((t, 2, EventKind::Bleach));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.into_iter()
        .map(|(t, _, kind)| EventRecord { t, kind })
        .collect()
}

pub fn event_log_jsonl(meta: &EventLogMeta, events: &[EventRecord]) -> String {
    let mut s = serde_json::json!({ "meta": meta }).to_string();
    s.push('\n');
    for e in events {
        let kind = serde_json::to_string(&e.kind).expect("enum serializes");
        s.push_str(&format!("{{\"t\":{},\"kind\":{kind}}}\n", fmt_time(e.t)));
    }
    s
}

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing header line")]
    MissingHeader,
}

fn parse_err(line: usize, message: impl Into<String>) -> ReadError {
    ReadError::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_event_log(text: &str) -> Result<(Option<EventLogMeta>, Vec<EventRecord>), ReadError> {
    #[derive(Deserialize)]
    struct MetaLine {
        meta: EventLogMeta,
    }
    let mut meta = None;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(m) = serde_json::from_str::<MetaLine>(line) {
                meta = Some(m.meta);
                continue;
            }
        }
        let e: EventRecord =
            serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        events.push(e);
    }
    Ok((meta, events))
}

pub const TRIAL_COLUMNS: &str = "molecule_index,tau_t_s,n_photons,survival_time_s,bleached,illuminated_triplet_s,arm,illuminated_s,triplet_visits";

pub fn trials_csv(trials: &[TrialResult], head: &str) -> String {
    let mut s = String::from(head);
    s.push_str(TRIAL_COLUMNS);
    s.push('\n');
    for t in trials {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            t.molecule_index,
            fmt_time(t.tau_t_used),
            t.n_photons,
            fmt_time(t.survival_time),
            t.bleached,
            fmt_time(t.illuminated_triplet_time),
            t.arm.label(),
            fmt_time(t.illuminated_time),
            t.triplet_visits,
        ));
    }
    s
}

/// Data lines of a CSV, skipping comments and the column header.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .skip(1)
}

/// Reads a trial table. The last two columns are optional.
pub fn parse_trials_csv(text: &str) -> Result<Vec<TrialResult>, ReadError> {
    let has_header = text
        .lines()
        .map(str::trim)
        .any(|l| l.starts_with("molecule_index,"));
    if !has_header {
        return Err(ReadError::MissingHeader);
    }
    let mut out = Vec::new();
    for (line, l) in data_lines(text) {
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 7 && f.len() != 9 {
            return Err(parse_err(
                line,
                format!("expected 7 or 9 fields, found {}", f.len()),
            ));
        }
        let num = |i: usize| -> Result<f64, ReadError> {
            f[i].parse()
                .map_err(|_| parse_err(line, format!("bad number `{}`", f[i])))
        };
        let int = |i: usize| -> Result<u64, ReadError> {
            f[i].parse()
                .map_err(|_| parse_err(line, format!("bad integer `{}`", f[i])))
        };
        out.push(TrialResult {
            molecule_index: int(0)? as usize,
            tau_t_used: num(1)?,
            n_photons: int(2)?,
            survival_time: num(3)?,
            bleached: f[4]
                .parse()
                .map_err(|_| parse_err(line, format!("bad boolean `{}`", f[4])))?,
            illuminated_triplet_time: num(5)?,
            arm: Arm::parse(f[6]).ok_or_else(|| parse_err(line, format!("bad arm `{}`", f[6])))?,
            illuminated_time: if f.len() == 9 { num(7)? } else { f64::NAN },
            triplet_visits: if f.len() == 9 { int(8)? } else { 0 },
        });
    }
    Ok(out)
}

pub fn gain_table_csv(rows: &[GainRow], head: &str) -> String {
    let mut s = String::from(head);
    s.push_str("tau_d_s,g_measured,g_predicted,ci_low,ci_high,n_with,n_without\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_time(r.tau_d),
            fmt_sig6(r.g_measured),
            fmt_sig6(r.g_predicted),
            fmt_sig6(r.ci_low),
            fmt_sig6(r.ci_high),
            r.n_with,
            r.n_without
        ));
    }
    s
}

pub fn survival_csv(curve: &SurvivalCurve, head: &str) -> String {
    let mut s = String::from(head);
    s.push_str("value,probability\n");
    for (v, p) in curve.support.iter().zip(&curve.probability) {
        s.push_str(&format!("{v},{}\n", fmt_sig6(*p)));
    }
    s
}

pub fn gate_commands_csv(commands: &[crate::controller::GateCommand], head: &str) -> String {
    let mut s = String::from(head);
    s.push_str("actuate_at,level\n");
    for c in commands {
        s.push_str(&format!("{},{}\n", fmt_time(c.actuate_at), c.level));
    }
    s
}

/// Photon timestamps, one per line, in seconds. Blank and `#` lines are
/// skipped; a non-numeric first line is taken as a column header.
pub fn parse_timestamps(text: &str) -> Result<Vec<f64>, ReadError> {
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let field = l.split(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(t) if t.is_finite() => out.push(t),
            _ if first => {}
            _ => return Err(parse_err(i + 1, format!("bad timestamp `{field}`"))),
        }
        first = false;
    }
    Ok(out)
}
