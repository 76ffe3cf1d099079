use std::path::PathBuf;
use std::process::{Command, Output};

fn seqlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqlearn"))
        .args(args)
        .output()
        .expect("spawn seqlearn")
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_waveforms() {
    let dir = tempfile::tempdir().unwrap();
    let vcd = dir.path().join("a.vcd");
    let csv = dir.path().join("a.csv");
    let out = seqlearn(&[
        "run",
        &scenario("design_a_train_recognize.json"),
        "--vcd",
        vcd.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(
        text.contains("TRAINED") && text.contains("RECOGNIZED"),
        "{text}"
    );
    assert!(std::fs::read_to_string(vcd).unwrap().starts_with("$"));
    assert!(std::fs::read_to_string(csv).unwrap().lines().count() > 1);
}

#[test]
fn run_json_output_parses() {
    let out = seqlearn(&["run", &scenario("design_b_45ns.json"), "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["outcome"], "SET_40NS");
    assert_eq!(v[0]["bias_mv"], 950);
}

#[test]
fn decode_prints_bits() {
    let out = seqlearn(&["decode", "--train-offset", "10ns", "--stream", "ABABBAAB"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().next(), Some("1101"));
}

#[test]
fn decode_negative_offset() {
    let out = seqlearn(&["decode", "--train-offset", "-10ns", "--stream", "BAAB"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().next(), Some("10"));
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let out = seqlearn(&[
        "sweep",
        "--start",
        "30ns",
        "--end",
        "32ns",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(csv).unwrap();
    let decisions: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(decisions, ["SET_20NS", "FAILED", "SET_40NS"]);
}

#[test]
fn fom_reports_rate() {
    let out = seqlearn(&["fom", "--design", "a", "--mode", "overlapped"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("ops/s"));
}

#[test]
fn bad_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"design":"A","sequence":"AB","bogus":1}"#).unwrap();
    assert_eq!(
        seqlearn(&["run", bad.to_str().unwrap()]).status.code(),
        Some(1)
    );
    assert_eq!(
        seqlearn(&["decode", "--stream", "ABA"]).status.code(),
        Some(1)
    );

    let late = dir.path().join("late.json");
    std::fs::write(
        &late,
        r#"{"design":"A","timing":{"inter_pulse_delay":"15ns"},"sequence":"AB"}"#,
    )
    .unwrap();
    assert_eq!(
        seqlearn(&["run", late.to_str().unwrap()]).status.code(),
        Some(1)
    );
}
