use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn patchnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn clean_run_exits_zero() {
    let out = patchnet(&["run", scenario("happy.toml").to_str().unwrap(), "--seed", "4", "--check-lemmas"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("3/3 installed"));
    assert_eq!(stdout.matches(": holds").count(), 4);
}

#[test]
fn legacy_forgery_exits_three() {
    let out = patchnet(&["run", scenario("legacy_leiba.toml").to_str().unwrap(), "--check-lemmas"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PaymentOnlyIfGenerateProof: VIOLATED"));
    // the same scenario with the fixed device signature format is clean
    let out = patchnet(&[
        "run",
        scenario("legacy_leiba.toml").to_str().unwrap(),
        "--mode",
        "standard",
        "--check-lemmas",
    ]);
    assert_eq!(code(&out), 0);
}

#[test]
fn undeclared_violation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(&dir, "impostor_manufacturer = true\n");
    assert_eq!(code(&patchnet(&["run", path.to_str().unwrap()])), 1);
    assert_eq!(code(&patchnet(&["run", scenario("impostor.toml").to_str().unwrap()])), 0);
}

#[test]
fn config_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(&dir, "steps_per_block = 0\n");
    assert_eq!(code(&patchnet(&["run", bad.to_str().unwrap()])), 2);
    let missing = dir.path().join("absent.toml");
    assert_eq!(code(&patchnet(&["run", missing.to_str().unwrap()])), 2);
    let happy = scenario("happy.toml");
    assert_eq!(code(&patchnet(&["run", happy.to_str().unwrap(), "--attack", "nonsense"])), 2);
}

#[test]
fn attack_suite_reports_each_attack() {
    let out = patchnet(&["run", scenario("happy.toml").to_str().unwrap(), "--attack", "all"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches(": defeated").count(), 5);
    let out = patchnet(&[
        "run",
        scenario("happy.toml").to_str().unwrap(),
        "--attack",
        "leiba-forgery",
        "--mode",
        "legacy-leiba",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn traces_are_written_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("run.jsonl");
    let out = patchnet(&[
        "run",
        scenario("adversarial.toml").to_str().unwrap(),
        "--seeds",
        "3..5",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    for seed in [3, 4] {
        let text = std::fs::read_to_string(dir.path().join(format!("run-{seed}.jsonl"))).unwrap();
        assert!(text.lines().count() > 10);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("seq").is_some() && v.get("event").is_some());
        }
    }
    assert!(!trace.exists());
}
