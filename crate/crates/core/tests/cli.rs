use std::path::Path;
use std::process::{Command, Output};

fn slwlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slwlab")).args(args).arg("--out").arg(out).output().expect("spawn slwlab")
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn ode_matches_logarithm() {
    let dir = tempfile::tempdir().unwrap();
    let o = slwlab(&["ode", "--k", "0", "--l", "2", "--sign", "defocusing", "--t-end", "10"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("tables/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("t,u,u_t"));
    let mut last_t = 0.0;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((cols[1] - cols[0].ln_1p()).abs() <= 1e-9 * (1.0 + cols[1]));
        last_t = cols[0];
    }
    assert_eq!(last_t, 10.0);
}

#[test]
fn blowup_time_of_quadratic_family() {
    let dir = tempfile::tempdir().unwrap();
    let o = slwlab(&["blowup", "--k", "0", "--l", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    let t: f64 = r["tables"][0]["columns"][0][1][0].as_f64().unwrap();
    assert!((t - 1.0).abs() <= 1e-4);
    assert_eq!(r["schema"], 1);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = slwlab(&["inflate", "--s", "2.0", "--k", "0", "--l", "3", "--n", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("s_c"));
    assert!(!dir.path().join("report.json").exists());

    let o = slwlab(&["exponents", "--foo", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("foo"));

    let o = slwlab(&["exponents", "--config", "/nonexistent/config.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = slwlab(&["exponents", "--k", "0", "--l", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_error_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = slwlab(&["dispersion", "--length", "3", "--points", "256"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_verdict_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // too short a domain for the dilated profiles at negative order
    let o = slwlab(&["norms", "--length", "64"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let r = report(dir.path());
    let dil = r["verdicts"].as_array().unwrap().iter().find(|v| v["name"] == "dilation_law").unwrap();
    assert_eq!(dil["passed"], false);
}

#[test]
fn outputs_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let o = slwlab(&["exponents", "--k", "0", "--l", "3", "--n", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let echo = std::fs::read_to_string(dir.path().join("config-echo.toml")).unwrap();
    assert!(echo.contains("subcommand = \"exponents\""));
    assert!(echo.contains("l = 3.0"));
    assert!(dir.path().join("tables/exponents.csv").exists());
    assert!(dir.path().join("timing.json").exists());
    let r = report(dir.path());
    assert!(r.get("wall_seconds").is_none());
    assert_eq!(r["config"]["subcommand"], "exponents");
}

#[test]
fn env_var_sets_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_slwlab"))
        .args(["exponents"])
        .env("SLWLAB_OUT", &target)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(target.join("report.json").exists());
}

#[test]
fn config_file_values_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "k = 0.0\nl = 3.0\nt_end = 4.0\n").unwrap();
    let out = dir.path().join("o");
    let o = slwlab(&["ode", "--config", cfg.to_str().unwrap(), "--t-end", "2"], &out);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["config"]["l"].as_f64(), Some(3.0));
    assert_eq!(r["config"]["t_end"].as_f64(), Some(2.0));

    std::fs::write(&cfg, "k = 0.0\nwidth = 3\n").unwrap();
    let o = slwlab(&["ode", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("width"));
}
