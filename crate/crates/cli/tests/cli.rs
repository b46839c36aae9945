use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// Runs the binary in `dir` with a whitespace-separated argument line.
fn mcstereo(line: &str, dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcstereo"))
        .args(line.split_whitespace())
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth_rds(dir: &Path, name: &str, seed: u64) {
    let out = mcstereo(
        &format!("synth --mode rds --out {name} --seed {seed} --width 64 --height 32 --disparity 6 --dmax 32"),
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

const RUN: &str = "run --left scene/left.pgm --right scene/right.pgm";

#[test]
fn synth_run_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_rds(dir, "scene", 3);
    for f in ["left.pgm", "right.pgm", "gt.pfm", "occ.pgm", "spec.json"] {
        assert!(dir.join("scene").join(f).is_file(), "missing {f}");
    }

    let out = mcstereo(
        &format!("{RUN} --out d.pfm --dmax 32 --schedule 4x2,2x2 --trace t.jsonl --viz d.png"),
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.join("d.png").is_file());
    let trace = fs::read_to_string(dir.join("t.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 4);
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("mean_abs_delta").is_some());
    }

    let out = mcstereo("eval --pred d.pfm --gt scene/gt.pfm --occ scene/occ.pgm --json", dir);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["epe"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["region"], "non_occluded");

    let out = mcstereo("eval --pred scene/gt.pfm --gt scene/gt.pfm", dir);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("EPE     0.0000"));
}

#[test]
fn quarter_resolution_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_rds(dir, "scene", 1);
    let out = mcstereo(&format!("{RUN} --out d.q.pfm --dmax 32 --schedule 2x2"), dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let header = fs::read(dir.join("d.q.pfm")).unwrap();
    assert!(header.starts_with(b"Pf\n16 8\n"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for line in [
        "frobnicate",
        "run --left a.pgm",
        "synth --mode spiral --out x",
        "eval --pred a --gt b --bogus",
    ] {
        assert_eq!(code(&mcstereo(line, tmp.path())), 2, "{line}");
    }
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = mcstereo("run --left nope.pgm --right nope.pgm --out d.pfm", dir);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:"));

    synth_rds(dir, "scene", 2);
    for extra in [
        "--dmax 30",
        "--schedule 2x4,4x4",
        "--iters 7",
        "--updater gru:missing.bin",
        "--peaks 0",
    ] {
        let out = mcstereo(&format!("{RUN} --out d.pfm {extra}"), dir);
        assert_eq!(code(&out), 1, "{extra}");
    }

    // full-resolution gt against a differently sized prediction
    let out = mcstereo("synth --mode rds --out small --width 32 --height 16 --disparity 4", dir);
    assert_eq!(code(&out), 0);
    let out = mcstereo("eval --pred small/gt.pfm --gt scene/gt.pfm", dir);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("dimension"));
}

#[test]
fn synth_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = mcstereo(
        "synth --mode repeat --out rep --width 64 --height 64 --period 8 --disparity 12 --aperture 32",
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.join("rep/periodic.pgm").is_file());

    let out = mcstereo(
        "synth --mode step --out step --width 64 --height 32 --d1 4 --d2 12",
        dir,
    );
    assert_eq!(code(&out), 0);
    let spec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("step/spec.json")).unwrap()).unwrap();
    assert_eq!(spec["field"]["kind"], "step");

    // d* + P beyond d_max
    let out = mcstereo("synth --mode repeat --out bad --disparity 190 --period 8", dir);
    assert_eq!(code(&out), 1);
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_rds(dir, "a", 9);
    synth_rds(dir, "b", 9);
    for f in ["left.pgm", "right.pgm", "gt.pfm"] {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn ablate_writes_csv_and_markdown() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::create_dir(dir.join("set")).unwrap();
    synth_rds(&dir.join("set"), "s0", 0);
    synth_rds(&dir.join("set"), "s1", 1);
    fs::write(
        dir.join("grid.json"),
        r#"{"configs": [
            {"id": "k1", "peaks": 1, "dmax": 32, "schedule": "2x2"},
            {"id": "k3", "peaks": 3, "dmax": 32, "schedule": "2x2"}
        ]}"#,
    )
    .unwrap();
    let out = mcstereo("ablate --scenes set --grid grid.json --out r.csv --markdown r.md", dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.join("r.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("s0,k1,"));
    assert!(lines[4].starts_with("s1,k3,"));
    let md = fs::read_to_string(dir.join("r.md")).unwrap();
    assert_eq!(md, String::from_utf8_lossy(&out.stdout));

    // same inputs, same bytes
    let again = mcstereo("ablate --scenes set --grid grid.json --out r2.csv", dir);
    assert_eq!(code(&again), 0);
    assert_eq!(fs::read(dir.join("r2.csv")).unwrap(), csv.as_bytes());

    fs::write(dir.join("empty.json"), r#"{"configs": []}"#).unwrap();
    let out = mcstereo("ablate --scenes set --grid empty.json --out r3.csv", dir);
    assert_eq!(code(&out), 1);
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mcstereo("selftest", tmp.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 8);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_rds(dir, "scene", 4);
    let mut outputs = Vec::new();
    for threads in [1, 4] {
        let out = mcstereo(
            &format!(
                "--threads {threads} {RUN} --out d{threads}.pfm --dmax 32 --schedule 4x2,2x2 --trace t{threads}.jsonl"
            ),
            dir,
        );
        assert_eq!(code(&out), 0);
        outputs.push((
            fs::read(dir.join(format!("d{threads}.pfm"))).unwrap(),
            fs::read(dir.join(format!("t{threads}.jsonl"))).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}
