//! End-to-end runs of the `faraday-sim` binary.

use std::path::Path;
use std::process::{Command, Output};

use faraday_sim::cli::output::Table;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_faraday-sim"));
    c.env_remove("FARADAY_SIM_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn body(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn simulate_writes_trace_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["simulate", "--out", out, "--emit-plot"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = Table::read(&dir.path().join("trace.csv")).unwrap();
    assert_eq!(
        trace.columns,
        [
            "time_s",
            "time_tau",
            "fz",
            "trace",
            "signal_noiseless",
            "signal_noisy",
            "envelope"
        ]
    );
    assert_eq!(trace.header.get("config_digest").unwrap().len(), 64);
    assert!(trace
        .header
        .get("tool")
        .unwrap()
        .starts_with("faraday-sim "));
    assert!(dir.path().join("fit.csv").exists());
    assert!(dir.path().join("trace.gp").exists());
}

#[test]
fn fit_round_trip_reproduces_in_process_report() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let fit = dir.path().join("fit");
    assert!(run(&["simulate", "--out", sim.to_str().unwrap()])
        .status
        .success());
    let trace = sim.join("trace.csv");
    let o = run(&[
        "fit",
        trace.to_str().unwrap(),
        "--out",
        fit.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = Table::read(&sim.join("fit.csv")).unwrap();
    let b = Table::read(&fit.join("fit.csv")).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra[0], rb[0]);
        assert_eq!(ra[3], rb[3]);
        for c in 1..3 {
            let (x, y): (f64, f64) = (ra[c].parse().unwrap(), rb[c].parse().unwrap());
            assert!(
                (x.is_nan() && y.is_nan()) || (x - y).abs() <= 1e-12 * x.abs().max(1.0),
                "{} {x} {y}",
                ra[0]
            );
        }
    }
    // Fitting the same file twice is byte-identical.
    let again = dir.path().join("again");
    run(&[
        "fit",
        trace.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(fit.join("fit.csv")).unwrap(),
        std::fs::read(again.join("fit.csv")).unwrap()
    );
}

#[test]
fn fit_rejects_truncated_and_malformed_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(run(&["simulate", "--out", out]).status.success());
    let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let cut = &text[..text.len() - 40];
    let p = write(dir.path(), "cut.csv", cut);
    let o = run(&["fit", &p, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema error"));

    let p = write(dir.path(), "cols.csv", "# tau_s: 1e-3\ntime_s,fz\n0,1\n");
    let o = run(&["fit", &p, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing column `time_tau`"));

    let o = run(&["fit", "/nonexistent/trace.csv", "--out", out]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn fit_reports_revival_boundary_warning() {
    let dir = tempfile::tempdir().unwrap();
    // Critical angle: a plain exponential decay with nothing to revive.
    let cfg = write(
        dir.path(),
        "c.toml",
        "[probe]\npolarization_angle_deg = 54.735610317245346\n",
    );
    let out = dir.path().join("o");
    assert!(
        run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    let o = run(&[
        "fit",
        out.join("trace.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let report = Table::read(&out.join("fit.csv")).unwrap();
    let warnings = report.rows.iter().find(|r| r[0] == "warnings").unwrap();
    assert!(
        warnings[3].contains("revival_at_window_boundary"),
        "{warnings:?}"
    );
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[probe]\ntua_s = 1e-3\n");
    let o = run(&["simulate", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("probe") && err.contains("tua_s"), "{err}");

    let o = run(&["scan-angle", "--values", "10,120", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["simulate", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "simulate",
        "--config",
        "/nonexistent/run.toml",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_path_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "env.toml", "[grid]\npoints = 2\n");
    let out = dir.path().join("o");
    let o = bin()
        .env("FARADAY_SIM_CONFIG", &cfg)
        .args(["simulate", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // A two-point grid is degenerate but legal.
    assert_eq!(body(&out.join("trace.csv")).len(), 3);
}

#[test]
fn linear_regime_is_a_decaying_sinusoid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "lin.toml",
        "[probe]\nnonlinearity = 0.0\n[grid]\nduration_tau = 5\npoints = 3000\n",
    );
    let out = dir.path().join("o");
    assert!(
        run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    let t = Table::read(&out.join("trace.csv")).unwrap();
    let path = out.join("trace.csv");
    let omega: f64 = t.header.get("larmor_frequency").unwrap().parse().unwrap();
    let rate = faraday_sim::decoherence::DEFAULT_CALIBRATION * 1e3;
    let times = t.float_column("time_s", &path).unwrap();
    let fz = t.float_column("fz", &path).unwrap();
    for (t, z) in times.iter().zip(&fz) {
        let expect = -4.0 * (-rate * t).exp() * (omega * t).sin();
        assert!((z - expect).abs() < 1e-8, "t={t} fz={z} expect={expect}");
    }
}

#[test]
fn scans_are_sorted_and_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "u.toml", "[decoherence]\nmodel = \"none\"\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, workers) in [(&a, "1"), (&b, "4")] {
        let o = run(&[
            "scan-tau",
            "--config",
            &cfg,
            "--values",
            "3e-3,1e-3,2e-3",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let x = std::fs::read(a.join("scan_tau.csv")).unwrap();
    assert_eq!(x, std::fs::read(b.join("scan_tau.csv")).unwrap());
    let t = Table::read(&a.join("scan_tau.csv")).unwrap();
    let taus = t.float_column("tau_s", &a.join("scan_tau.csv")).unwrap();
    assert_eq!(taus, vec![1e-3, 2e-3, 3e-3]);
    let err = t.columns.iter().position(|c| c == "error").unwrap();
    assert!(t.rows.iter().all(|r| r[err].is_empty()));
}

#[test]
fn single_value_scans() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["scan-tau", "--values", "1e-3", "--out", out]);
    assert!(o.status.success());
    assert_eq!(body(&dir.path().join("scan_tau.csv")).len(), 2);
    let o = run(&[
        "scan-critical",
        "--values",
        "1e-3",
        "--out",
        out,
        "--emit-plot",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = Table::read(&dir.path().join("scan_critical.csv")).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert!(dir.path().join("scan_critical.gp").exists());
}
