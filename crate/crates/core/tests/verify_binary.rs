use std::path::PathBuf;
use std::process::Command;

fn write_config(name: &str, body: &str) -> PathBuf {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn verify() -> Command {
    Command::new(env!("CARGO_BIN_EXE_verify"))
}

#[test]
fn passing_suites_exit_zero_and_write_every_format() {
    let cfg = write_config("pass.toml", "n_points = 3\nseed_count = 3\n");
    for (fmt, head) in [("json", "{"), ("csv", "suite,seed,residual,tolerance,pass"), ("table", "check")] {
        let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("report.{fmt}"));
        let st = verify()
            .args(["--config", cfg.to_str().unwrap(), "--suite", "fubini", "--suite", "wiener"])
            .args(["--format", fmt, "--out", out.to_str().unwrap()])
            .env("VERIFY_THREADS", "2")
            .status()
            .unwrap();
        assert!(st.success(), "{fmt}");
        assert!(std::fs::read_to_string(&out).unwrap().starts_with(head), "{fmt}");
    }
}

#[test]
fn tolerances_gate_the_exit_code() {
    let cfg = write_config("fail.toml", "n_points = 2\nseed_count = 1\n[tolerances.overrides]\n\"norms\" = -1.0\n");
    let out = verify().args(["--config", cfg.to_str().unwrap(), "--suite", "norms", "--format", "csv"]).output().unwrap();
    assert!(out.status.code() == Some(2), "negative tolerance is a config error");
    let cfg = write_config("zero_tol.toml", "n_points = 3\nseed_count = 4\n[tolerances.overrides]\n\"fubini\" = 0.0\n");
    let out = verify().args(["--config", cfg.to_str().unwrap(), "--suite", "fubini", "--format", "csv"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let flagged = text.lines().skip(1).any(|l| l.ends_with(",false"));
    assert_eq!(out.status.success(), !flagged);
}

#[test]
fn config_errors_name_the_field() {
    let cfg = write_config("bad.toml", "n_points = 2\nsuites = [\"fubini\", \"telepathy\"]\n");
    let out = verify().args(["--config", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("suites") && err.contains("telepathy"), "{err}");
    assert!(out.stdout.is_empty(), "no partial run");
    let out = verify().args(["--config", "/nonexistent/cfg.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_count_flag_overrides_config() {
    let cfg = write_config("seeds.toml", "n_points = 1\nseed_count = 50\n");
    let out = verify()
        .args(["--config", cfg.to_str().unwrap(), "--suite", "fubini", "--seed-count", "3", "--format", "csv"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 4);
}
