use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use photostab::config::{parse_config, RunConfig};
use photostab::io::{parse_event_log, parse_trials_csv, EventKind};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photostab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect()
}

#[test]
fn show_preset_prints_a_parseable_config() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["dii", "terrylene"] {
        let out = run(&["--show-preset", name], dir.path());
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        assert_eq!(
            parse_config(&text).unwrap(),
            RunConfig::from_preset(name).unwrap()
        );
    }
    assert_eq!(
        run(&["--show-preset", "rhodamine"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.cfg"),
        "[feedback]\ntau_d = -1us\nbogus = 3\n",
    )
    .unwrap();
    let out = run(&["sweep", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("tau_d"), "{err}");
    assert!(err.contains("line 3"), "{err}");

    assert_eq!(
        run(&["sweep", "--config", "missing.cfg"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["sweep", "--tau-d", "70kHz"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["simulate", "--arms", "both"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&[], dir.path()).status.code(), Some(2));
    assert_eq!(
        run(&["--jobs", "0", "replay", "x"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("unsorted.txt"), "2e-6\n1e-6\n").unwrap();
    let out = run(&["replay", "unsorted.txt", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(
        run(&["replay", "absent.txt"], dir.path()).status.code(),
        Some(3)
    );
    assert!(!dir.path().join("o").join("gate.csv").exists());
}

#[test]
fn replay_writes_the_hand_traced_schedule() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("photons.txt"), "# one photon\n0e0\n").unwrap();
    let out = run(
        &[
            "replay",
            "photons.txt",
            "--horizon",
            "600us",
            "--out",
            "r",
            "--seed",
            "5",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("r/gate.csv")).unwrap();
    assert!(csv.starts_with("# seed = 5\n"));
    assert!(csv.contains("# tau_d = 7e-5s"));
    assert_eq!(
        data_rows(&csv),
        vec![
            "7.0599999999999995e-5,OFF",
            "4.7120000000000002e-4,ON",
            "5.4180000000000005e-4,OFF",
        ]
    );
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "actuate_at,level");
}

#[test]
fn simulate_trace_and_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "[photophysics]\npreset = dii\nk_bleach = 20/s\n[ensemble]\nn_molecules = 12\nseed = 3\nhorizon = 2s\n",
    )
    .unwrap();
    let ok = |args: &[&str]| {
        let out = run(args, dir.path());
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    ok(&[
        "simulate", "--config", "run.cfg", "--out", "s", "--bin", "2ms",
    ]);
    let log = fs::read_to_string(dir.path().join("s/events_with.jsonl")).unwrap();
    let (meta, events) = parse_event_log(&log).unwrap();
    let meta = meta.expect("meta line");
    assert_eq!(meta.seed, 3);
    assert_eq!(parse_config(&meta.config).unwrap().master_seed, 3);
    let photons = events
        .iter()
        .filter(|e| e.kind == EventKind::Photon)
        .count() as u64;
    assert!(events.windows(2).all(|w| w[0].t <= w[1].t));

    let trace = fs::read_to_string(dir.path().join("s/trace_with.csv")).unwrap();
    let counts: u64 = data_rows(&trace)
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(counts, photons);

    // Re-binning the log at the same width reproduces the trace exactly.
    ok(&["trace", "s/events_with.jsonl", "--bin", "2ms", "--out", "t"]);
    let rebinned = fs::read_to_string(dir.path().join("t/trace.csv")).unwrap();
    assert_eq!(rebinned, trace);

    ok(&[
        "sweep",
        "--config",
        "run.cfg",
        "--tau-d",
        "70us",
        "--out",
        "w",
        "--bootstrap",
        "200",
    ]);
    let table = fs::read_to_string(dir.path().join("w/gain_table.csv")).unwrap();
    let rows = data_rows(&table);
    assert_eq!(rows.len(), 1);
    let tau_d: f64 = rows[0].split(',').next().unwrap().parse().unwrap();
    assert_eq!(tau_d, 7e-5);
    let with = parse_trials_csv(
        &fs::read_to_string(dir.path().join("w/trials_with_70000ns.csv")).unwrap(),
    )
    .unwrap();
    let without =
        parse_trials_csv(&fs::read_to_string(dir.path().join("w/trials_without.csv")).unwrap())
            .unwrap();
    assert_eq!(with.len(), 12);
    for (a, b) in with.iter().zip(&without) {
        assert_eq!(a.molecule_index, b.molecule_index);
        assert_eq!(a.tau_t_used, b.tau_t_used);
    }

    ok(&[
        "analyze",
        "w/trials_with_70000ns.csv",
        "w/trials_without.csv",
        "--out",
        "a",
    ]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/analysis.json")).unwrap())
            .unwrap();
    for key in ["g", "ci_low", "ci_high", "d", "p"] {
        assert!(json[key].is_number(), "{key}");
    }
    assert!(json["ci_low"].as_f64() <= json["g"].as_f64());
    let survival = fs::read_to_string(dir.path().join("a/survival_n_with.csv")).unwrap();
    let first = data_rows(&survival)[0];
    assert!(first.ends_with(",1.00000"), "{first}");
}

#[test]
fn arms_flag_limits_written_tables() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "[photophysics]\npreset = dii\nk_bleach = 50/s\n[ensemble]\nn_molecules = 6\nhorizon = 1s\n",
    )
    .unwrap();
    let out = run(
        &[
            "sweep",
            "--config",
            "run.cfg",
            "--arms",
            "without",
            "--out",
            "o",
            "--bootstrap",
            "100",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut names: Vec<String> = fs::read_dir(dir.path().join("o"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, vec!["gain_table.csv", "trials_without.csv"]);
}
