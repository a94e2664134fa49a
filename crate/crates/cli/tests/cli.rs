use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phantom-planner")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Writes a copy of the substantiating phantom scenario with textual replacements.
fn variant(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(scenario("fig1_phantom_substantiates")).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    let path = dir.join("variant.toml");
    fs::write(&path, text).unwrap();
    path
}

fn empty_scene(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(scenario("fig1_phantom")).unwrap();
    let cut = text.find("[[objects]]").unwrap();
    let path = dir.join("empty.toml");
    fs::write(&path, &text[..cut]).unwrap();
    path
}

fn rows(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    (header, r.records().map(Result::unwrap).collect())
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn plan_on_empty_scene_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let s = empty_scene(dir.path());
    let out = dir.path().join("out");
    let o = run(&["plan", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["plan_combined.csv", "plan_a.csv", "plan_b.csv", "plan_z.csv", "cost.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("w_a = 1, w_b = 0"));
}

#[test]
fn certain_object_keeps_branch_b_behind_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let s = scenario("fig1_phantom_substantiates");
    let o = run(&["plan", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap(), "--at", "1.6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, records) = rows(&out.join("plan_b.csv"));
    let s_col = column(&header, "s");
    let last: f64 = records.last().unwrap()[s_col].parse().unwrap();
    // s0 = 40 m, sigma0 = 0.5 m, three-sigma truncation
    assert!(last <= 38.5 + 1e-6, "{last}");
    assert!(last > 20.0);
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = run(&["plan", "--scenario", "x.toml", "--out", "o", "--bogus"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn invalid_scenario_exits_3_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let s = variant(dir.path(), &[("corridor_half_width = 3.0", "corridor_half_width = -1.0")]);
    let o = run(&["plan", "--scenario", s.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("corridor_half_width"));
}

#[test]
fn infeasible_plan_exits_4_and_still_writes_the_fallback() {
    let dir = tempfile::tempdir().unwrap();
    // certain object between the pinned points at t = 0
    let s = variant(
        dir.path(),
        &[("s0 = 40.0", "s0 = 5.0"), ("[{ t = 1.0, p_exist = 0.3 }, { t = 1.4, p_exist = 1.0 }]", "[{ t = 0.0, p_exist = 1.0 }]")],
    );
    let out = dir.path().join("out");
    let o = run(&["plan", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stop[red@"));
    assert!(out.join("plan_z.csv").exists());
    assert!(!out.join("plan_combined.csv").exists());
}

#[test]
fn simulate_writes_a_continuous_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let s = scenario("fig1_phantom");
    let o = run(&["simulate", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap(), "--duration", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, records) = rows(&out.join("trajectory.csv"));
    let (t_col, x_col) = (column(&header, "t"), column(&header, "x"));
    assert_eq!(records.len(), 16 * 2 + 1);
    let mut prev_x = f64::NEG_INFINITY;
    for (i, r) in records.iter().enumerate() {
        let t: f64 = r[t_col].parse().unwrap();
        assert!((t - 0.2 * i as f64).abs() < 1e-9);
        let x: f64 = r[x_col].parse().unwrap();
        // no gaps or jumps between stitched windows at cruise speed
        assert!(i == 0 || (x - prev_x).abs() <= 2.0 + 1e-6);
        prev_x = x;
    }
    let (_, replans) = rows(&out.join("replans.csv"));
    assert_eq!(replans.len(), 15);
    assert!(out.join("metrics.json").exists());
}

#[test]
fn sweep_writes_bundles_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let s = scenario("fig1_phantom");
    let o = run(&[
        "simulate", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap(), "--duration", "4", "--sweep", "p_exist=0.1,0.5,1.0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for p in ["0.1", "0.5", "1"] {
        let b = out.join(format!("p_exist_{p}"));
        for f in ["trajectory.csv", "replans.csv", "metrics.json"] {
            assert!(b.join(f).exists(), "{p}/{f}");
        }
    }
    let (header, records) = rows(&out.join("summary.csv"));
    assert_eq!(records.len(), 3);
    let decel = column(&header, "max_decel");
    let values: Vec<f64> = records.iter().map(|r| r[decel].parse().unwrap()).collect();
    assert!(values[2] >= values[0], "{values:?}");
}

#[test]
fn bad_duration_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("fig1_phantom");
    let o = run(&["simulate", "--scenario", s.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--duration", "1.0"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("fig1_phantom");
    let outs: Vec<PathBuf> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("run{k}"));
            let o = run(&["simulate", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap(), "--duration", "3.2"]);
            assert_eq!(code(&o), 0);
            out
        })
        .collect();
    for f in ["trajectory.csv", "replans.csv", "metrics.json"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
}
