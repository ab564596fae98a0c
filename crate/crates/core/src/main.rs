use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use photostab::config::{parse_config, parse_duration, parse_duration_list, RunConfig};
use photostab::ensemble::{bleached_counts, molecule_trajectory, sweep_tau_d, Arm, SimPath};
use photostab::io::{self, EventLogMeta};
use photostab::simulate::Record;
use photostab::stats::{gain_estimate, ks_two_sample, survival_curve};
use photostab::{presets, replay, TrialResult};

#[derive(Parser)]
#[command(
    name = "photostab",
    version,
    about = "Photostability under quantum-jump feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Run configuration file. Without one the `dii` preset is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Arms to run or write: with, without.
    #[arg(long, global = true, value_delimiter = ',')]
    arms: Option<Vec<String>>,
    /// Decision windows, e.g. `40us,70us,100us`.
    #[arg(long = "tau-d", global = true)]
    tau_d: Option<String>,
    /// Simulate every excitation cycle.
    #[arg(long, global = true, conflicts_with = "aggregated")]
    exact: bool,
    /// Collapse the singlet manifold into one bright state (default).
    #[arg(long, global = true)]
    aggregated: bool,
    /// Worker threads; output does not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print a built-in preset as a configuration document.
    #[arg(long, value_name = "NAME")]
    show_preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// One molecule: event log and binned trace per arm.
    Simulate {
        /// Ensemble index of the molecule.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "1ms")]
        bin: String,
    },
    /// Paired ensembles over decision windows: gain table and trial tables.
    Sweep {
        #[arg(long, default_value_t = photostab::ensemble::DEFAULT_BOOTSTRAP)]
        bootstrap: usize,
    },
    /// Controller only: photon timestamps to gate commands.
    Replay {
        photons: PathBuf,
        /// End of the replay; defaults to the last photon.
        #[arg(long)]
        horizon: Option<String>,
    },
    /// Compare two trial tables: survival curves, gain and KS statistics.
    Analyze {
        with: PathBuf,
        without: PathBuf,
        #[arg(long, default_value_t = photostab::ensemble::DEFAULT_BOOTSTRAP)]
        bootstrap: usize,
    },
    /// Re-bin the photons of an event log.
    Trace {
        events: PathBuf,
        #[arg(long, default_value = "1ms")]
        bin: String,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

struct Context {
    config: RunConfig,
    out: PathBuf,
}

impl Context {
    /// Resolved configuration for headers. The output directory is left out
    /// so that runs differing only in destination produce identical files.
    fn config_text(&self) -> String {
        self.config
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("out_dir"))
            .map(|l| format!("{l}\n"))
            .collect()
    }

    fn header(&self) -> String {
        io::header(self.config.master_seed, &self.config_text())
    }

    fn write(&self, name: &str, contents: &str) -> Outcome {
        let path = self.out.join(name);
        io::write_atomic(&path, contents)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }
}

fn load(cli: &Cli) -> Result<Context, Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::from_preset("dii").expect("built-in preset"),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if cli.exact {
        config.path = SimPath::Exact;
    } else if cli.aggregated {
        config.path = SimPath::Aggregated;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    let out = config.out_dir.clone();
    Ok(Context { config, out })
}

fn arms(cli: &Cli, default: &[Arm]) -> Result<Vec<Arm>, Failure> {
    match &cli.arms {
        None => Ok(default.to_vec()),
        Some(list) => list
            .iter()
            .map(|s| {
                Arm::parse(s.trim())
                    .ok_or_else(|| Failure::Config(format!("--arms: unknown arm `{s}`")))
            })
            .collect(),
    }
}

fn duration_flag(name: &str, text: &str) -> Result<f64, Failure> {
    let v = parse_duration(text).map_err(|e| Failure::Config(format!("{name}: {e}")))?;
    if !(v > 0.0) {
        return Err(Failure::Config(format!("{name}: must be > 0")));
    }
    Ok(v)
}

fn simulate(cli: &Cli, index: usize, bin: &str) -> Outcome {
    let ctx = load(cli)?;
    let width = duration_flag("--bin", bin)?;
    if ctx.config.horizon.is_infinite() {
        return Err(Failure::Config("simulate needs a finite horizon".into()));
    }
    let mut ens = ctx.config.ensemble();
    if let Some(list) = &cli.tau_d {
        let values =
            parse_duration_list(list).map_err(|e| Failure::Config(format!("--tau-d: {e}")))?;
        let [tau_d] = values.as_slice() else {
            return Err(Failure::Config("simulate takes a single --tau-d".into()));
        };
        ens.feedback = ens.feedback.with_tau_d(*tau_d);
        ens.feedback
            .validate()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    for arm in arms(cli, &[Arm::With])? {
        let Some((tau_t, traj)) =
            molecule_trajectory(&ens, arm, index, Record::Events).map_err(Failure::runtime)?
        else {
            eprintln!("molecule {index} is below the admission rate; nothing written");
            continue;
        };
        let label = arm.label();
        let meta = EventLogMeta {
            seed: ctx.config.master_seed,
            end_time: traj.end_time,
            config: ctx.config_text(),
        };
        let events = io::event_records(&traj);
        ctx.write(
            &format!("events_{label}.jsonl"),
            &io::event_log_jsonl(&meta, &events),
        )?;
        let bins = io::bin_trace(&traj.photon_times, width, traj.end_time)
            .map_err(|e| Failure::Config(e.to_string()))?;
        ctx.write(
            &format!("trace_{label}.csv"),
            &io::trace_csv(&bins, &ctx.header()),
        )?;
        println!(
            "{label}: tau_t={} photons={} end={} bleached={}",
            io::fmt_sig6(tau_t),
            traj.n_photons,
            io::fmt_time(traj.end_time),
            traj.bleached()
        );
    }
    Ok(())
}

fn window_label(tau_d: f64) -> String {
    format!("{}ns", (tau_d * 1e9).round() as u64)
}

fn sweep(cli: &Cli, n_boot: usize) -> Outcome {
    let ctx = load(cli)?;
    let values = match &cli.tau_d {
        Some(list) => {
            parse_duration_list(list).map_err(|e| Failure::Config(format!("--tau-d: {e}")))?
        }
        None => vec![ctx.config.feedback.tau_d],
    };
    for &v in &values {
        ctx.config
            .feedback
            .with_tau_d(v)
            .validate()
            .map_err(|e| Failure::Config(format!("--tau-d: {e}")))?;
    }
    let write_arms = arms(cli, &[Arm::With, Arm::Without])?;
    let sweep = sweep_tau_d(&ctx.config.ensemble(), &values, n_boot).map_err(Failure::runtime)?;
    for w in &sweep.table.warnings {
        eprintln!("{w}");
    }
    for r in &sweep.table.rows {
        eprintln!(
            "tau_d={} G={} predicted={} ci=[{}, {}] n={}/{}",
            io::fmt_sig6(r.tau_d),
            io::fmt_sig6(r.g_measured),
            io::fmt_sig6(r.g_predicted),
            io::fmt_sig6(r.ci_low),
            io::fmt_sig6(r.ci_high),
            r.n_with,
            r.n_without
        );
    }
    for (tau_d, e) in &sweep.table.failures {
        eprintln!("tau_d={}: {e}", io::fmt_sig6(*tau_d));
    }
    let head = ctx.header();
    ctx.write(
        "gain_table.csv",
        &io::gain_table_csv(&sweep.table.rows, &head),
    )?;
    if write_arms.contains(&Arm::Without) {
        ctx.write("trials_without.csv", &io::trials_csv(&sweep.without, &head))?;
    }
    if write_arms.contains(&Arm::With) {
        for (tau_d, trials) in &sweep.with {
            let name = format!("trials_with_{}.csv", window_label(*tau_d));
            ctx.write(&name, &io::trials_csv(trials, &head))?;
        }
    }
    if sweep.table.rows.is_empty() {
        return Err(Failure::Runtime("no gain row could be computed".into()));
    }
    Ok(())
}

fn replay_cmd(cli: &Cli, photons: &Path, horizon: Option<&str>) -> Outcome {
    let ctx = load(cli)?;
    let mut feedback = ctx.config.feedback;
    if let Some(list) = &cli.tau_d {
        let values =
            parse_duration_list(list).map_err(|e| Failure::Config(format!("--tau-d: {e}")))?;
        let [tau_d] = values.as_slice() else {
            return Err(Failure::Config("replay takes a single --tau-d".into()));
        };
        feedback = feedback.with_tau_d(*tau_d);
    }
    let text = fs::read_to_string(photons)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", photons.display())))?;
    let times = io::parse_timestamps(&text)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", photons.display())))?;
    let horizon = match horizon {
        Some(h) => duration_flag("--horizon", h)?,
        None => times.last().copied().unwrap_or(0.0),
    };
    let commands = replay(feedback, &times, horizon).map_err(|e| match e {
        photostab::ControllerError::InvalidConfig(p) => Failure::Config(p.to_string()),
        other => Failure::runtime(other),
    })?;
    let head = io::header(ctx.config.master_seed, &ctx.config_text());
    ctx.write("gate.csv", &io::gate_commands_csv(&commands, &head))?;
    println!("{} commands over {} photons", commands.len(), times.len());
    Ok(())
}

fn read_trials(path: &Path) -> Result<Vec<TrialResult>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    io::parse_trials_csv(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn round6(x: f64) -> f64 {
    io::fmt_sig6(x).parse().unwrap_or(x)
}

fn analyze(cli: &Cli, with_path: &Path, without_path: &Path, n_boot: usize) -> Outcome {
    let ctx = load(cli)?;
    let with = read_trials(with_path)?;
    let without = read_trials(without_path)?;
    let head = ctx.header();
    let n_with = bleached_counts(&with);
    let n_without = bleached_counts(&without);
    let t_of = |trials: &[TrialResult]| -> Vec<f64> {
        trials
            .iter()
            .filter(|t| t.bleached)
            .map(|t| t.survival_time)
            .collect()
    };
    let t_with = t_of(&with);
    let t_without = t_of(&without);
    for (name, data) in [
        ("survival_n_with.csv", &n_with),
        ("survival_n_without.csv", &n_without),
        ("survival_t_with.csv", &t_with),
        ("survival_t_without.csv", &t_without),
    ] {
        let curve = survival_curve(data).map_err(|e| Failure::Runtime(format!("{name}: {e}")))?;
        ctx.write(name, &io::survival_csv(&curve, &head))?;
    }
    let gain = gain_estimate(&n_with, &n_without, n_boot, ctx.config.master_seed)
        .map_err(Failure::runtime)?;
    let ks_n = ks_two_sample(&n_with, &n_without).map_err(Failure::runtime)?;
    let ks_t = ks_two_sample(&t_with, &t_without).map_err(Failure::runtime)?;
    let report = json!({
        "seed": ctx.config.master_seed,
        "config": ctx.config_text(),
        "g": round6(gain.g),
        "ci_low": round6(gain.ci_low),
        "ci_high": round6(gain.ci_high),
        "n_with": gain.n_with,
        "n_without": gain.n_without,
        "d": round6(ks_n.d),
        "p": round6(ks_n.p),
        "d_time": round6(ks_t.d),
        "p_time": round6(ks_t.p),
        "censored_with": with.len() - n_with.len(),
        "censored_without": without.len() - n_without.len(),
    });
    let text = serde_json::to_string_pretty(&report).map_err(Failure::runtime)? + "\n";
    ctx.write("analysis.json", &text)?;
    println!(
        "G={} ci=[{}, {}] ks_p(N)={} ks_p(t)={}",
        io::fmt_sig6(gain.g),
        io::fmt_sig6(gain.ci_low),
        io::fmt_sig6(gain.ci_high),
        io::fmt_sig6(ks_n.p),
        io::fmt_sig6(ks_t.p)
    );
    Ok(())
}

fn trace(cli: &Cli, events: &Path, bin: &str) -> Outcome {
    let ctx = load(cli)?;
    let width = duration_flag("--bin", bin)?;
    let text = fs::read_to_string(events)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", events.display())))?;
    let (meta, records) = io::parse_event_log(&text)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", events.display())))?;
    let photons: Vec<f64> = records
        .iter()
        .filter(|r| r.kind == io::EventKind::Photon)
        .map(|r| r.t)
        .collect();
    let last = records.iter().map(|r| r.t).fold(0.0, f64::max);
    let (end, head) = match &meta {
        Some(m) => (m.end_time, io::header(m.seed, &m.config)),
        None => (last, ctx.header()),
    };
    let bins = io::bin_trace(&photons, width, end).map_err(|e| Failure::Config(e.to_string()))?;
    ctx.write("trace.csv", &io::trace_csv(&bins, &head))?;
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    if let Some(name) = &cli.show_preset {
        let cfg = RunConfig::from_preset(name).ok_or_else(|| {
            Failure::Config(format!(
                "unknown preset `{name}` (known: {})",
                presets::NAMES.join(", ")
            ))
        })?;
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Failure::Config("no subcommand given; see --help".into()));
    };
    match command {
        Command::Simulate { index, bin } => simulate(cli, *index, bin),
        Command::Sweep { bootstrap } => sweep(cli, *bootstrap),
        Command::Replay { photons, horizon } => replay_cmd(cli, photons, horizon.as_deref()),
        Command::Analyze {
            with,
            without,
            bootstrap,
        } => analyze(cli, with, without, *bootstrap),
        Command::Trace { events, bin } => trace(cli, events, bin),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(0) => Err(Failure::Config("--jobs must be >= 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(Failure::runtime(e)),
        },
        None => run(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
