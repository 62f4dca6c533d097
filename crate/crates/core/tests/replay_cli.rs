use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crashwatch::geo::ResponderRegistry;
use crashwatch::gsm::FaultScript;
use crashwatch::replay::{run, synthesize_trace, PipelineConfig, ReportDocument, Scenario};

const REGISTRY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/responders.csv");

fn crashwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crashwatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, scenario: &str, seed: u64) -> PathBuf {
    let path = dir.join(format!("{scenario}-{seed}.trace"));
    ok(crashwatch(&[
        "synth",
        "--scenario",
        scenario,
        "--seed",
        &seed.to_string(),
        "--out",
        p(&path),
    ]));
    path
}

fn registry() -> ResponderRegistry {
    ResponderRegistry::load(REGISTRY).unwrap()
}

#[test]
fn synth_replay_metrics_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for (scenario, seed) in [("clean_crash", 1), ("no_gps_crash", 2), ("tilt_spikes", 3)] {
        let trace = synth(dir.path(), scenario, seed);
        let report = dir.path().join(format!("{scenario}.toml"));
        let transcript = dir.path().join(format!("{scenario}.txt"));
        let log = ok(crashwatch(&[
            "replay",
            "--trace",
            p(&trace),
            "--registry",
            REGISTRY,
            "--report",
            p(&report),
            "--transcript",
            p(&transcript),
        ]));
        assert!(log.contains("accident staged"), "{log}");
        reports.push(report);
    }
    let mut args = vec!["metrics", "--reports"];
    args.extend(reports.iter().map(|r| p(r)));
    let merged = ReportDocument::parse(&ok(crashwatch(&args))).unwrap();
    assert_eq!(merged.n_trials, 3);
    // the spike-only trace is the one miss, the silent receiver the one unlocated crash
    assert_eq!((merged.detection.tp, merged.detection.fn_), (2, 1));
    assert_eq!((merged.location.tp, merged.location.fn_), (2, 1));
    assert_eq!((merged.notification.tp, merged.notification.fn_), (3, 0));
    assert_eq!(merged.trials.iter().map(|t| t.place_no).collect::<Vec<_>>(), [1, 2, 3]);
}

#[test]
fn replay_without_report_prints_it() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "clean_crash", 4);
    let stdout = ok(crashwatch(&["replay", "--trace", p(&trace), "--registry", REGISTRY]));
    assert!(stdout.contains("format = \"crashwatch-report/1\""), "{stdout}");
    assert!(stdout.contains("sms hospital +8801711"), "{stdout}");
}

#[test]
fn fault_script_and_config_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let trace = synth(dir.path(), "clean_crash", 5);
    let faults = dir.path().join("faults.txt");
    std::fs::write(&faults, "# every command fails\ncmd_index:* action:error\n").unwrap();
    let config = dir.path().join("pipeline.toml");
    std::fs::write(&config, "[link]\nmax_retries = 1\n").unwrap();
    let report = dir.path().join("r.toml");
    let log = ok(crashwatch(&[
        "replay",
        "--trace",
        p(&trace),
        "--registry",
        REGISTRY,
        "--config",
        p(&config),
        "--fault-script",
        p(&faults),
        "--report",
        p(&report),
    ]));
    assert!(log.contains("failed attempts=2"), "{log}");
    let doc = ReportDocument::load(&report).unwrap();
    assert_eq!((doc.notification.tp, doc.notification.fn_), (0, 1));
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.trace");
    let out = crashwatch(&["replay", "--trace", p(&missing), "--registry", REGISTRY]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let bad = dir.path().join("bad.trace");
    std::fs::write(&bad, "crashwatch-trace 1 vehicle=V\n10 ACC 1 2\n").unwrap();
    let out = crashwatch(&["replay", "--trace", p(&bad), "--registry", REGISTRY]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = crashwatch(&["synth", "--scenario", "rollover", "--seed", "1", "--out", p(&bad)]);
    assert!(!out.status.success());

    let out = crashwatch(&["replay", "--trace", p(&bad)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no responder registry"));
}

#[test]
fn quiet_trace_has_no_events() {
    let out = run(
        &synthesize_trace(Scenario::Quiet, 1),
        &registry(),
        &PipelineConfig::default(),
        FaultScript::default(),
    )
    .unwrap();
    assert!(out.log.is_empty(), "{}", out.log_text());
    assert!(out.trials.is_empty());
    assert_eq!(out.report().detection.ratio, None);
}

#[test]
fn proximity_only_warns_without_notifying() {
    let out = run(
        &synthesize_trace(Scenario::ProximityOnly, 3),
        &registry(),
        &PipelineConfig::default(),
        FaultScript::default(),
    )
    .unwrap();
    assert!(out.proximity_warnings >= 1);
    assert!(out.deliveries.is_empty());
    assert!(out.trials.is_empty());
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for round in 0..2 {
        let trace = dir.path().join(format!("t{round}"));
        ok(crashwatch(&[
            "synth",
            "--scenario",
            "clean_crash",
            "--seed",
            "7",
            "--out",
            p(&trace),
        ]));
        let report = dir.path().join(format!("r{round}"));
        let transcript = dir.path().join(format!("x{round}"));
        let log = ok(crashwatch(&[
            "replay",
            "--trace",
            p(&trace),
            "--registry",
            REGISTRY,
            "--report",
            p(&report),
            "--transcript",
            p(&transcript),
        ]));
        outputs.push([
            std::fs::read(trace).unwrap(),
            std::fs::read(report).unwrap(),
            std::fs::read(transcript).unwrap(),
            log.into_bytes(),
        ]);
    }
    assert_eq!(outputs[0], outputs[1]);
}
