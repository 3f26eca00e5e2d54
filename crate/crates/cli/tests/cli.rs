use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use obpursuit::hilbert::SampledSignal;
use obpursuit::io::{read_signal_csv, write_signal_csv};
use obpursuit::simulate::TrialConfig;
use serde_json::Value;

fn obpursuit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obpursuit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_signal(path: &Path, s: &SampledSignal) {
    write_signal_csv(s, fs::File::create(path).unwrap()).unwrap();
}

fn read_signal(path: &Path) -> SampledSignal {
    read_signal_csv(fs::File::open(path).unwrap()).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn strip_runtime(v: &mut Value) {
    for t in v["trials"].as_array_mut().unwrap() {
        t["runtime_ms"] = Value::Null;
    }
}

fn decompose(signal: &SampledSignal, extra: &[&str]) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("signal.csv");
    write_signal(&input, signal);
    let out = dir.path().join("out");
    let mut args = vec!["decompose", input.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (obpursuit(&args), dir)
}

#[test]
fn single_atom_selects_one_index() {
    let bench = TrialConfig::oscillators_desk().dictionaries().unwrap();
    let atom = bench.v_atoms.atom(6).scaled(0.7);
    let (out, dir) = decompose(&atom, &["--delta", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["summary"]["selected"], serde_json::json!([6]));
    assert_eq!(report["config"]["pursuit"]["delta"], serde_json::json!(0.0));
}

#[test]
fn wperp_signal_has_zero_v_component() {
    let bench = TrialConfig::oscillators_desk().dictionaries().unwrap();
    let f = bench.wperp_atoms.atom(10).add(&bench.wperp_atoms.atom(40).scaled(0.3)).unwrap();
    let (out, dir) = decompose(&f, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_signal(&dir.path().join("out/component_v.csv"));
    assert!(v.as_slice().iter().all(|&x| x == 0.0));
}

#[test]
fn components_sum_back_to_input() {
    let bench = TrialConfig::oscillators_desk().dictionaries().unwrap();
    let f = bench
        .v_atoms
        .atom(3)
        .add(&bench.v_atoms.atom(17).scaled(-0.4))
        .unwrap()
        .add(&bench.wperp_atoms.atom(55).scaled(0.8))
        .unwrap();
    let (out, dir) = decompose(&f, &[]);
    assert_eq!(out.status.code(), Some(0));
    let v = read_signal(&dir.path().join("out/component_v.csv"));
    let w = read_signal(&dir.path().join("out/component_wperp.csv"));
    let input = read_signal(&dir.path().join("signal.csv"));
    for i in 0..input.len() {
        assert!((v.as_slice()[i] + w.as_slice()[i] - input.as_slice()[i]).abs() <= 1e-12);
    }
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["summary"]["selected"], serde_json::json!([3, 17]));
}

#[test]
fn exhausted_budget_exits_2() {
    let bench = TrialConfig::oscillators_desk().dictionaries().unwrap();
    let f = bench.v_atoms.atom(3).add(bench.v_atoms.atom(40)).unwrap();
    let (out, _dir) = decompose(&f, &["--delta", "0", "--sparsity", "1", "--max-rank", "1", "--swap-stages", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "grid,value\n0.0,1.0\n0.5,2.0\n1.0,oops\n").unwrap();
    let out = obpursuit(&["decompose", input.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[pursuit]\nswap_stages = 3\n").unwrap();
    let out = obpursuit(&["simulate-oscillators", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("swap_stages"));
}

fn simulate(dir: &Path, extra: &[&str]) -> (Output, Value) {
    let mut args = vec!["simulate-oscillators", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = obpursuit(&args);
    let json = read_json(&dir.join("campaign.json"));
    (out, json)
}

#[test]
fn single_noiseless_trial_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (out, json) = simulate(dir.path(), &["--trials", "1", "--noise", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("success rate 1.0000 (1/1)"), "{stdout}");
    assert_eq!(json["success_rate"], serde_json::json!(1.0));
    assert!(dir.path().join("trials.csv").exists());
}

#[test]
fn same_seed_same_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--trials", "3", "--seed", "42", "--noise", "0.5"];
    let (out_a, mut ja) = simulate(a.path(), &args);
    let (out_b, mut jb) = simulate(b.path(), &args);
    let hash = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .find(|l| l.starts_with("result hash"))
            .unwrap()
            .to_string()
    };
    assert_eq!(hash(&out_a), hash(&out_b));
    strip_runtime(&mut ja);
    strip_runtime(&mut jb);
    assert_eq!(ja, jb);
    assert_eq!(ja["trials"][0]["seed"], serde_json::json!(42));
}

#[test]
fn noise_mode_is_recorded() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, ja) = simulate(a.path(), &["--trials", "1", "--noise", "1", "--noise-mode", "variance"]);
    let (_, jb) = simulate(b.path(), &["--trials", "1", "--noise", "1", "--noise-mode", "stddev"]);
    assert_eq!(ja["noise_mode"], "variance");
    assert_eq!(jb["noise_mode"], "stddev");
    assert_ne!(ja["config_hash"], jb["config_hash"]);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[experiment]\nseed = 5\ntrials = 1\n[noise]\npercent = 0.0\n").unwrap();
    let (out, json) = simulate(dir.path(), &["--config", cfg.to_str().unwrap(), "--seed", "8"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json["config"]["experiment"]["seed"], serde_json::json!(8));
    assert_eq!(json["n_trials"], serde_json::json!(1));
}

#[test]
fn failed_campaign_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    // δ this large stops the pursuit before any atom is selected
    fs::write(&cfg, "[experiment]\ntrials = 1\n[pursuit]\nmax_rank = 20\nmax_swap_stage = 0\ndelta = 1e9\n").unwrap();
    let (out, json) = simulate(dir.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json["success_count"], serde_json::json!(0));
}

#[test]
fn presets_parse() {
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for name in ["oscillators-desk.toml", "spectrum-desk.toml", "oscillators-paper.toml", "spectrum-paper.toml"] {
        let dir = tempfile::tempdir().unwrap();
        let path = presets.join(name);
        // export-dictionary validates the full config without running a campaign
        let out = obpursuit(&["export-dictionary", "--config", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
