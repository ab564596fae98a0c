//! Sectioned `key = value` run configuration.
//!
//! ```text
//! [photophysics]
//! preset = dii
//! k_bleach = 2/s
//!
//! [feedback]
//! tau_d = 70us
//! tau_off = 400us
//!
//! [ensemble]
//! n_molecules = 56
//! lifetime = lognormal(240us, 0.8)
//! ```
//!
//! Durations take `ns`, `us`, `ms` or `s`; rates take `/s`, `k/s` or `M/s`.
//! Bare numbers are seconds or per-second. Every problem in a document is
//! collected and reported together.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use crate::controller::FeedbackConfig;
use crate::ensemble::{EnsembleConfig, LifetimeDistribution, SimPath};
use crate::photophysics::PhotophysicsParams;
use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    Syntax,
    UnknownKey,
    UnitMismatch,
    Range,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    /// 1-based; 0 for problems not tied to a line.
    pub line: usize,
    pub column: usize,
    pub kind: IssueKind,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            IssueKind::Syntax => "syntax error",
            IssueKind::UnknownKey => "unknown key",
            IssueKind::UnitMismatch => "unit error",
            IssueKind::Range => "out of range",
            IssueKind::Missing => "missing key",
        };
        if self.line == 0 {
            write!(f, "{kind}: {}", self.message)
        } else {
            write!(
                f,
                "line {}, column {}: {kind}: {}",
                self.line, self.column, self.message
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<Issue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration problem(s):", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub params: PhotophysicsParams,
    pub feedback: FeedbackConfig,
    pub n_molecules: usize,
    pub horizon: f64,
    pub master_seed: u64,
    pub lifetime: LifetimeDistribution,
    pub path: SimPath,
    pub min_detected_rate: Option<f64>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Option<Self> {
        let preset = presets::by_name(name)?;
        Some(Self {
            preset: Some(name.to_string()),
            params: preset.params,
            feedback: FeedbackConfig::default(),
            n_molecules: 56,
            horizon: 600.0,
            master_seed: 0,
            lifetime: preset.lifetime,
            path: SimPath::Aggregated,
            min_detected_rate: None,
            out_dir: PathBuf::from("out"),
        })
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            n_molecules: self.n_molecules,
            params: self.params,
            lifetime: self.lifetime.clone(),
            feedback: self.feedback,
            horizon: self.horizon,
            master_seed: self.master_seed,
            path: self.path,
            min_detected_rate: self.min_detected_rate,
        }
    }

    /// Renders a document that parses back to an identical value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("[photophysics]\n");
        if let Some(p) = &self.preset {
            s.push_str(&format!("preset = {p}\n"));
        }
        let p = &self.params;
        s.push_str(&format!("k_exc = {:e}/s\n", p.k_exc));
        s.push_str(&format!("k_fl = {:e}/s\n", p.k_fl));
        s.push_str(&format!("k_isc = {:e}/s\n", p.k_isc));
        s.push_str(&format!("tau_t = {:e}s\n", p.tau_t));
        s.push_str(&format!("eta = {:e}\n", p.eta));
        s.push_str(&format!("k_bleach = {:e}/s\n", p.k_bleach));
        s.push_str(&format!("dark_rate = {:e}/s\n", p.dark_rate));
        let f = &self.feedback;
        s.push_str("\n[feedback]\n");
        s.push_str(&format!("tau_d = {:e}s\n", f.tau_d));
        s.push_str(&format!("tau_off = {:e}s\n", f.tau_off));
        s.push_str(&format!("latency = {:e}s\n", f.latency));
        s.push_str(&format!("enabled = {}\n", f.enabled));
        s.push_str("\n[ensemble]\n");
        s.push_str(&format!("n_molecules = {}\n", self.n_molecules));
        if self.horizon.is_infinite() {
            s.push_str("horizon = inf\n");
        } else {
            s.push_str(&format!("horizon = {:e}s\n", self.horizon));
        }
        s.push_str(&format!("seed = {}\n", self.master_seed));
        let lifetime = match &self.lifetime {
            LifetimeDistribution::Fixed(t) => format!("fixed({t:e}s)"),
            LifetimeDistribution::LogNormal { mu_log, sigma_log } => {
                format!("lognormal_log({mu_log:e}, {sigma_log:e})")
            }
            LifetimeDistribution::Empirical(v) => {
                let items: Vec<String> = v.iter().map(|t| format!("{t:e}s")).collect();
                format!("empirical({})", items.join(", "))
            }
        };
        s.push_str(&format!("lifetime = {lifetime}\n"));
        let path = match self.path {
            SimPath::Exact => "exact",
            SimPath::Aggregated => "aggregated",
        };
        s.push_str(&format!("path = {path}\n"));
        if let Some(r) = self.min_detected_rate {
            s.push_str(&format!("min_rate = {r:e}/s\n"));
        }
        s.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        s
    }
}

const PHOTOPHYSICS_KEYS: &[&str] = &[
    "preset",
    "k_exc",
    "k_fl",
    "k_isc",
    "tau_t",
    "eta",
    "k_bleach",
    "dark_rate",
];
const FEEDBACK_KEYS: &[&str] = &["tau_d", "tau_off", "latency", "enabled"];
const ENSEMBLE_KEYS: &[&str] = &[
    "n_molecules",
    "horizon",
    "seed",
    "lifetime",
    "path",
    "min_rate",
    "out_dir",
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Quantity {
    Duration,
    Rate,
}

fn split_number(s: &str) -> Option<(f64, &str)> {
    let s = s.trim();
    let mut ends: Vec<usize> = s.char_indices().map(|(i, _)| i).skip(1).collect();
    ends.push(s.len());
    for &end in ends.iter().rev() {
        let head = &s[..end];
        // Reject words such as "inf" or "nan" hiding in a prefix.
        if !head.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.') {
            continue;
        }
        if let Ok(v) = head.parse::<f64>() {
            return Some((v, s[end..].trim()));
        }
    }
    None
}

fn parse_quantity(raw: &str, want: Quantity) -> Result<f64, (IssueKind, String)> {
    let (value, unit) = split_number(raw).ok_or_else(|| {
        (
            IssueKind::Syntax,
            format!("expected a number, found `{raw}`"),
        )
    })?;
    if !value.is_finite() {
        return Err((IssueKind::Range, format!("`{raw}` is not finite")));
    }
    // Dividing keeps `240us` equal to the literal `240e-6`.
    let duration = match unit {
        "" => None,
        "ns" => Some(1e9),
        "us" | "µs" => Some(1e6),
        "ms" => Some(1e3),
        "s" => Some(1.0),
        _ => None,
    };
    let rate = match unit {
        "" | "/s" => Some(1.0),
        "k/s" => Some(1e3),
        "M/s" => Some(1e6),
        _ => None,
    };
    match (want, unit) {
        (_, "") => Ok(value),
        (Quantity::Duration, _) => match duration {
            Some(divisor) => Ok(value / divisor),
            None if rate.is_some() => Err((
                IssueKind::UnitMismatch,
                format!("expected a duration, found rate unit `{unit}`"),
            )),
            None => Err((
                IssueKind::UnitMismatch,
                format!("unknown duration unit `{unit}`"),
            )),
        },
        (Quantity::Rate, _) => match rate {
            Some(scale) => Ok(value * scale),
            None if duration.is_some() => Err((
                IssueKind::UnitMismatch,
                format!("expected a rate, found duration unit `{unit}`"),
            )),
            None => Err((
                IssueKind::UnitMismatch,
                format!("unknown rate unit `{unit}`"),
            )),
        },
    }
}

/// A duration such as `70us` or `1.5e-3` (seconds).
pub fn parse_duration(text: &str) -> Result<f64, String> {
    parse_quantity(text, Quantity::Duration).map_err(|(_, m)| m)
}

/// Comma-separated durations.
pub fn parse_duration_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',').map(|s| parse_duration(s.trim())).collect()
}

/// Arguments of `name(a, b, ...)`.
fn call_args<'a>(raw: &'a str, name: &str) -> Option<Vec<&'a str>> {
    let rest = raw.strip_prefix(name)?.trim_start();
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.split(',').map(str::trim).collect())
}

fn parse_lifetime(raw: &str) -> Result<LifetimeDistribution, (IssueKind, String)> {
    let raw = raw.trim();
    let number = |s: &str| -> Result<f64, (IssueKind, String)> {
        match split_number(s) {
            Some((v, "")) if v.is_finite() => Ok(v),
            _ => Err((
                IssueKind::Syntax,
                format!("expected a plain number, found `{s}`"),
            )),
        }
    };
    if let Some(args) = call_args(raw, "fixed") {
        if let [t] = args.as_slice() {
            return Ok(LifetimeDistribution::Fixed(parse_quantity(
                t,
                Quantity::Duration,
            )?));
        }
    } else if let Some(args) = call_args(raw, "lognormal_log") {
        if let [mu, sigma] = args.as_slice() {
            return Ok(LifetimeDistribution::LogNormal {
                mu_log: number(mu)?,
                sigma_log: number(sigma)?,
            });
        }
    } else if let Some(args) = call_args(raw, "lognormal") {
        if let [median, sigma] = args.as_slice() {
            let median = parse_quantity(median, Quantity::Duration)?;
            if !(median > 0.0) {
                return Err((IssueKind::Range, "lognormal median must be > 0".into()));
            }
            return Ok(LifetimeDistribution::lognormal_median(
                median,
                number(sigma)?,
            ));
        }
    } else if let Some(args) = call_args(raw, "empirical") {
        let values = args
            .iter()
            .map(|a| parse_quantity(a, Quantity::Duration))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(LifetimeDistribution::Empirical(values));
    }
    Err((
        IssueKind::Syntax,
        format!("expected fixed(T), lognormal(MEDIAN, SIGMA), lognormal_log(MU, SIGMA) or empirical(T, ...), found `{raw}`"),
    ))
}

struct Parser {
    sections: HashMap<&'static str, HashMap<String, Entry>>,
    issues: Vec<Issue>,
}

impl Parser {
    fn issue(&mut self, line: usize, column: usize, kind: IssueKind, message: impl Into<String>) {
        self.issues.push(Issue {
            line,
            column,
            kind,
            message: message.into(),
        });
    }

    fn scan(&mut self, text: &str) {
        let mut section: Option<&'static str> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = match raw_line.find(['#', ';']) {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            if content.trim().is_empty() {
                continue;
            }
            let indent = content.len() - content.trim_start().len();
            let trimmed = content.trim();
            if let Some(rest) = trimmed.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    self.issue(
                        line_no,
                        indent + 1,
                        IssueKind::Syntax,
                        "unterminated section header",
                    );
                    continue;
                };
                section = match name.trim() {
                    "photophysics" => Some("photophysics"),
                    "feedback" => Some("feedback"),
                    "ensemble" => Some("ensemble"),
                    other => {
                        self.issue(
                            line_no,
                            indent + 2,
                            IssueKind::UnknownKey,
                            format!("unknown section `[{other}]`"),
                        );
                        None
                    }
                };
                continue;
            }
            let Some(eq) = content.find('=') else {
                self.issue(
                    line_no,
                    indent + 1,
                    IssueKind::Syntax,
                    "expected `key = value` or `[section]`",
                );
                continue;
            };
            let key = content[..eq].trim();
            let value_part = &content[eq + 1..];
            let value_col = eq + 2 + (value_part.len() - value_part.trim_start().len());
            let value = value_part.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                self.issue(line_no, indent + 1, IssueKind::Syntax, "malformed key");
                continue;
            }
            if value.is_empty() {
                self.issue(
                    line_no,
                    eq + 2,
                    IssueKind::Syntax,
                    format!("`{key}` has no value"),
                );
                continue;
            }
            let Some(sec) = section else {
                self.issue(
                    line_no,
                    indent + 1,
                    IssueKind::Syntax,
                    format!("`{key}` appears outside a known section"),
                );
                continue;
            };
            let allowed = match sec {
                "photophysics" => PHOTOPHYSICS_KEYS,
                "feedback" => FEEDBACK_KEYS,
                _ => ENSEMBLE_KEYS,
            };
            if !allowed.contains(&key) {
                self.issue(
                    line_no,
                    indent + 1,
                    IssueKind::UnknownKey,
                    format!("`{key}` is not a key of [{sec}]"),
                );
                continue;
            }
            let entries = self.sections.entry(sec).or_default();
            if let Some(prev) = entries.get(key) {
                let prev_line = prev.line;
                self.issue(
                    line_no,
                    indent + 1,
                    IssueKind::Syntax,
                    format!("duplicate key `{key}` (first set on line {prev_line})"),
                );
                continue;
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line: line_no,
                    column: value_col,
                },
            );
        }
    }

    fn entry(&self, sec: &str, key: &str) -> Option<Entry> {
        self.sections.get(sec).and_then(|m| m.get(key)).cloned()
    }

    fn get<T>(
        &mut self,
        sec: &str,
        key: &str,
        parse: impl Fn(&str) -> Result<T, (IssueKind, String)>,
    ) -> Option<T> {
        let e = self.entry(sec, key)?;
        match parse(&e.value) {
            Ok(v) => Some(v),
            Err((kind, msg)) => {
                self.issue(e.line, e.column, kind, format!("{key}: {msg}"));
                None
            }
        }
    }

    fn range(&mut self, sec: &str, key: &str, message: String) {
        let (line, column) = self.entry(sec, key).map_or((0, 0), |e| (e.line, e.column));
        self.issue(line, column, IssueKind::Range, format!("{key}: {message}"));
    }
}

fn plain<T: std::str::FromStr>(
    what: &'static str,
) -> impl Fn(&str) -> Result<T, (IssueKind, String)> {
    move |s: &str| {
        s.parse::<T>()
            .map_err(|_| (IssueKind::Syntax, format!("expected {what}, found `{s}`")))
    }
}

fn duration(s: &str) -> Result<f64, (IssueKind, String)> {
    parse_quantity(s, Quantity::Duration)
}

fn rate(s: &str) -> Result<f64, (IssueKind, String)> {
    parse_quantity(s, Quantity::Rate)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut p = Parser {
        sections: HashMap::new(),
        issues: Vec::new(),
    };
    p.scan(text);

    let preset_name = p.get("photophysics", "preset", |s| Ok(s.to_string()));
    let preset = match &preset_name {
        Some(name) => match presets::by_name(name) {
            Some(pr) => Some(pr),
            None => {
                p.range(
                    "photophysics",
                    "preset",
                    format!(
                        "unknown preset `{name}` (known: {})",
                        presets::NAMES.join(", ")
                    ),
                );
                None
            }
        },
        None => None,
    };

    let mut fields: [(&'static str, Option<f64>); 7] = [
        ("k_exc", None),
        ("k_fl", None),
        ("k_isc", None),
        ("tau_t", None),
        ("eta", None),
        ("k_bleach", None),
        ("dark_rate", None),
    ];
    for (key, slot) in fields.iter_mut() {
        *slot = match *key {
            "tau_t" => p.get("photophysics", key, duration),
            "eta" => p.get("photophysics", key, |s| match split_number(s) {
                Some((v, "")) => Ok(v),
                _ => Err((
                    IssueKind::Syntax,
                    format!("expected a plain number, found `{s}`"),
                )),
            }),
            _ => p.get("photophysics", key, rate),
        };
    }
    let base = preset.as_ref().map(|pr| pr.params);
    let mut resolve = |i: usize, fallback: Option<f64>| -> f64 {
        let (key, value) = fields[i];
        match value.or(fallback) {
            Some(v) => v,
            None => {
                if preset_name.is_none() {
                    p.issue(
                        0,
                        0,
                        IssueKind::Missing,
                        format!("[photophysics] {key} is required without a preset"),
                    );
                }
                f64::NAN
            }
        }
    };
    let params = PhotophysicsParams {
        k_exc: resolve(0, base.map(|b| b.k_exc)),
        k_fl: resolve(1, base.map(|b| b.k_fl)),
        k_isc: resolve(2, base.map(|b| b.k_isc)),
        tau_t: resolve(3, base.map(|b| b.tau_t)),
        eta: resolve(4, base.map(|b| b.eta)),
        k_bleach: resolve(5, base.map(|b| b.k_bleach)),
        dark_rate: resolve(6, Some(base.map_or(0.0, |b| b.dark_rate))),
    };
    let params_complete = [
        params.k_exc,
        params.k_fl,
        params.k_isc,
        params.tau_t,
        params.eta,
        params.k_bleach,
    ]
    .iter()
    .all(|v| !v.is_nan());
    if params_complete {
        if let Err(e) = params.validate() {
            p.range("photophysics", e.field, e.message);
        }
    }

    let defaults = FeedbackConfig::default();
    let feedback = FeedbackConfig {
        tau_d: p
            .get("feedback", "tau_d", duration)
            .unwrap_or(defaults.tau_d),
        tau_off: p
            .get("feedback", "tau_off", duration)
            .unwrap_or(defaults.tau_off),
        latency: p
            .get("feedback", "latency", duration)
            .unwrap_or(defaults.latency),
        enabled: p
            .get("feedback", "enabled", plain::<bool>("true or false"))
            .unwrap_or(defaults.enabled),
    };
    if let Err(e) = feedback.validate() {
        p.range("feedback", e.field, e.message);
    }

    let n_molecules = p
        .get(
            "ensemble",
            "n_molecules",
            plain::<usize>("a non-negative integer"),
        )
        .unwrap_or(56);
    if n_molecules == 0 {
        p.range("ensemble", "n_molecules", "must be >= 1".into());
    }
    let horizon = p
        .get("ensemble", "horizon", |s| {
            if s == "inf" {
                Ok(f64::INFINITY)
            } else {
                duration(s)
            }
        })
        .unwrap_or(600.0);
    if !(horizon > 0.0) {
        p.range("ensemble", "horizon", format!("must be > 0, got {horizon}"));
    }
    let master_seed = p
        .get(
            "ensemble",
            "seed",
            plain::<u64>("an unsigned 64-bit integer"),
        )
        .unwrap_or(0);
    let lifetime = p
        .get("ensemble", "lifetime", parse_lifetime)
        .or_else(|| preset.as_ref().map(|pr| pr.lifetime.clone()))
        .unwrap_or(LifetimeDistribution::Fixed(params.tau_t));
    // A lifetime defaulted from a missing tau_t is already reported.
    let defaulted = p.entry("ensemble", "lifetime").is_none() && preset.is_none();
    if !(defaulted && !params_complete) {
        if let Err(e) = lifetime.validate() {
            p.range("ensemble", "lifetime", e.to_string());
        }
    }
    let path = p
        .get("ensemble", "path", |s| match s {
            "exact" => Ok(SimPath::Exact),
            "aggregated" => Ok(SimPath::Aggregated),
            _ => Err((
                IssueKind::Syntax,
                format!("expected exact or aggregated, found `{s}`"),
            )),
        })
        .unwrap_or_default();
    let min_detected_rate = p.get("ensemble", "min_rate", rate);
    if min_detected_rate.is_some_and(|r| r < 0.0) {
        p.range("ensemble", "min_rate", "must be >= 0".into());
    }
    let out_dir = p
        .get("ensemble", "out_dir", |s| Ok(PathBuf::from(s)))
        .unwrap_or_else(|| PathBuf::from("out"));

    if !p.issues.is_empty() {
        p.issues.sort_by_key(|i| (i.line, i.column));
        return Err(ConfigError { issues: p.issues });
    }
    Ok(RunConfig {
        preset: preset_name,
        params,
        feedback,
        n_molecules,
        horizon,
        master_seed,
        lifetime,
        path,
        min_detected_rate,
        out_dir,
    })
}
