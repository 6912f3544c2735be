//! Acceptance criteria, one test each. Every test writes a single
//! `PASS`/`FAIL` line straight to stdout so it shows up without --nocapture.

use std::f64::consts::PI;
use std::io::Write;

use faraday_sim::analysis::{detect_revival, fit_decay, one_over_e_time, DecayModel, Envelope};
use faraday_sim::cli::commands::cmd_simulate;
use faraday_sim::cli::config::RunConfig;
use faraday_sim::cli::pipeline::{simulate, Scenario};
use faraday_sim::cli::scan::{scan_angle, scan_critical, scan_tau, with_critical_angle};
use faraday_sim::decoherence::{DecoherenceModel, DEFAULT_CALIBRATION};
use faraday_sim::evolution::{
    compare_full_vs_rwa, propagate_lindblad, propagate_unitary, LindbladOptions, TimeGrid,
    UnitaryOptions,
};
use faraday_sim::exec::ExecMode;
use faraday_sim::light_shift::{
    build_full_hamiltonian, critical_angle, rwa_geometric_factor, FieldConfig, ProbeConfig,
};
use faraday_sim::signal::{measure, PolarimeterConfig, SignalTrace};
use faraday_sim::spin::{coherent_state, SpinOperators};

fn report(n: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "{} criterion {n:>2} ({title}): {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn config(text: &str) -> RunConfig {
    RunConfig::parse(text).unwrap()
}

/// Rotating-frame, transverse-envelope configuration.
fn rotating(extra: &str) -> RunConfig {
    config(&format!(
        "[model]\nframe = \"rotating\"\n[analysis]\nenvelope = \"transverse\"\n{extra}"
    ))
}

fn envelope_of(cfg: &RunConfig) -> (Scenario, Envelope) {
    let s = Scenario::from_config(cfg).unwrap();
    let r = s.evolve(ExecMode::Parallel).unwrap();
    let env = Envelope::from_transverse(&r);
    (s, env)
}

/// Least-squares slope of ln y against ln x.
fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn criterion_01_critical_angle_cancellation() {
    let g = rwa_geometric_factor(critical_angle());
    let cfg = rotating(&format!(
        "[probe]\npolarization_angle_deg = {}\n[decoherence]\nmodel = \"none\"\n[grid]\nduration_tau = {}\npoints = 20001\n",
        critical_angle().to_degrees(),
        10.0 * (2.0f64 / 7.0).sqrt() / 1.2
    ));
    let s = Scenario::from_config(&cfg).unwrap();
    let lab = s.evolve(ExecMode::Parallel).unwrap().to_lab_frame();
    let omega = s.larmor_frequency();
    let mut worst = 0.0f64;
    for (k, &t) in lab.times.iter().enumerate() {
        // Pure Larmor precession of a spin along x about y: F_z = −F·sin(Ω_L t).
        let larmor = -4.0 * (omega * t).sin();
        worst = worst.max((lab.fz_series[k] - larmor).abs());
        let env = lab.fx_series[k].hypot(lab.fz_series[k]);
        worst = worst.max((env - 4.0).abs());
    }
    report(
        1,
        "critical-angle cancellation",
        g.abs() < 1e-15 && worst < 1e-10,
        &format!("geometric factor {g:.1e}, max deviation from pure Larmor {worst:.1e}"),
    );
}

#[test]
fn criterion_02_factor_of_two_geometry() {
    let fit_time = |theta: f64| {
        let cfg = rotating(&format!(
            "[probe]\npolarization_angle_deg = {theta}\n[decoherence]\nmodel = \"none\"\n"
        ));
        let (_, env) = envelope_of(&cfg);
        let t1e = one_over_e_time(&env).unwrap();
        let fit = fit_decay(&env.window(0.0, 2.0 * t1e), DecayModel::Gaussian);
        assert!(fit.success, "{}", fit.message);
        fit.one_over_e_time
    };
    let (t0, t90) = (fit_time(0.0), fit_time(90.0));
    let ratio = t90 / t0;
    report(
        2,
        "factor-of-two geometry",
        (ratio - 2.0).abs() <= 0.05,
        &format!(
            "Gaussian 1/e times {:.4} and {:.4} tau_s, ratio {ratio:.4}",
            t0 / 1e-3,
            t90 / 1e-3
        ),
    );
}

#[test]
fn criterion_03_one_axis_twisting_oracle() {
    let cfg =
        rotating("[decoherence]\nmodel = \"none\"\n[grid]\nduration_tau = 4.0\npoints = 8001\n");
    let (s, env) = envelope_of(&cfg);
    let gamma = 1.0 / s.tau_s();
    let mut worst = 0.0f64;
    for (t, m) in env.times.iter().zip(&env.magnitude) {
        let oracle = 4.0 * (1.2 * gamma * t).cos().abs().powi(7);
        worst = worst.max((m - oracle).abs());
    }
    let expected = PI / (1.2 * gamma);
    let t1e = one_over_e_time(&env).unwrap();
    let rev = detect_revival(&env, (2.0 * t1e, env.valid_end)).unwrap();
    let timing = (rev.t_revival / expected - 1.0).abs();
    report(
        3,
        "one-axis-twisting oracle",
        worst < 1e-6 && timing < 0.01 && rev.revival_amplitude_ratio > 0.99,
        &format!(
            "max |envelope - 4|cos|^7| = {worst:.1e}, revival at {:.4} tau_s (expected {:.4}), amplitude {:.6}",
            rev.t_revival / s.tau_s(),
            expected / s.tau_s(),
            rev.revival_amplitude_ratio
        ),
    );
}

#[test]
fn criterion_04_tau_scaling() {
    let cfg = config("[decoherence]\nmodel = \"none\"\n");
    let taus = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
    let points = scan_tau(&cfg, &taus, ExecMode::Parallel).unwrap();
    let col = |f: &dyn Fn(&faraday_sim::cli::scan::PointSummary) -> Option<f64>| -> Vec<f64> {
        points
            .iter()
            .map(|p| f(&p.summary).expect("quantity present"))
            .collect()
    };
    let slopes = [
        log_slope(&taus, &col(&|s| s.collapse_time)),
        log_slope(&taus, &col(&|s| s.revival_time)),
        log_slope(&taus, &col(&|s| s.revival_collapse_time)),
    ];
    report(
        4,
        "tau_s scaling",
        slopes.iter().all(|s| (s - 1.0).abs() <= 0.02),
        &format!(
            "log-log slopes collapse {:.5}, revival {:.5}, revival collapse {:.5}",
            slopes[0], slopes[1], slopes[2]
        ),
    );
}

fn default_angle_scan() -> Vec<faraday_sim::cli::scan::ScanPoint> {
    let angles = with_critical_angle(vec![0.0, 90.0]);
    scan_angle(&RunConfig::default(), &angles, ExecMode::Parallel).unwrap()
}

#[test]
fn criterion_05_envelope_character() {
    let points = default_angle_scan();
    let mut pass = true;
    let mut detail = Vec::new();
    for p in &points {
        let want = if (p.value - critical_angle().to_degrees()).abs() < 1e-9 {
            DecayModel::Exponential
        } else {
            DecayModel::Gaussian
        };
        let s = &p.summary;
        let ok = s.best_model == Some(want) && s.residual_ratio.unwrap_or(0.0) >= 2.0;
        pass &= ok;
        detail.push(format!(
            "{:.2} deg -> {} (ratio {:.2})",
            p.value,
            s.best_model.map_or("none", |m| m.as_str()),
            s.residual_ratio.unwrap_or(f64::NAN)
        ));
    }
    report(5, "envelope character", pass, &detail.join(", "));
}

#[test]
fn criterion_06_tenfold_window_extension() {
    let points = default_angle_scan();
    let tau = 1e-3;
    let at = |deg: f64| {
        points
            .iter()
            .find(|p| (p.value - deg).abs() < 1e-9)
            .and_then(|p| p.summary.collapse_time)
            .unwrap()
    };
    let (t0, tc) = (at(0.0), at(critical_angle().to_degrees()));
    let (ratio, over_tau) = (tc / t0, tc / tau);
    report(
        6,
        "tenfold window extension",
        ratio >= 10.0 && over_tau >= 4.0,
        &format!(
            "calibration {DEFAULT_CALIBRATION}: critical decay {over_tau:.3} tau_s, theta=0 collapse {:.4} tau_s, ratio {ratio:.2}",
            t0 / tau
        ),
    );
}

#[test]
fn criterion_07_rwa_validity() {
    let ops = SpinOperators::new(4.0).unwrap();
    let rho = coherent_state(&ops, PI / 2.0, 0.0).to_density();
    let gamma = 1e3;
    let chi = 1.2 * gamma;
    // Ten θ=0 collapse-equivalent times, the window of criterion 1. It also
    // spans the critical-angle decay time.
    let grid = TimeGrid::new(0.0, 10.0 * (2.0f64 / 7.0).sqrt() / chi, 2001).unwrap();
    let ratios = [1000.0, 300.0, 100.0, 30.0, 10.0];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, theta) in [("0", 0.0), ("90", PI / 2.0), ("critical", critical_angle())] {
        let d: Vec<_> = ratios
            .iter()
            .map(|&r| {
                let probe = ProbeConfig::with_scattering_rate(gamma, theta);
                let field = FieldConfig::new(r * chi).unwrap();
                compare_full_vs_rwa(&ops, &field, &probe, &rho, &grid).unwrap()
            })
            .collect();
        let within = d[..3].iter().all(|x| x.envelope < 0.01);
        let monotone = d[2].envelope <= d[3].envelope && d[3].envelope <= d[4].envelope;
        // At θ=0 the two Hamiltonians commute and agree to round-off.
        pass &= within && (theta == 0.0 || monotone);
        let fmt = |f: &dyn Fn(&faraday_sim::evolution::RwaDeviation) -> f64| {
            d.iter()
                .map(|x| format!("{:.2e}", f(x)))
                .collect::<Vec<_>>()
                .join("/")
        };
        detail.push(format!(
            "theta {name}: envelope {} (pointwise {})",
            fmt(&|x| x.envelope),
            fmt(&|x| x.pointwise)
        ));
    }
    report(
        7,
        "RWA validity",
        pass,
        &format!("ratio 1000/300/100/30/10; {}", detail.join("; ")),
    );
}

#[test]
fn criterion_08_plateau() {
    let taus = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
    let points = scan_critical(&RunConfig::default(), &taus, ExecMode::Parallel).unwrap();
    let hom: Vec<f64> = points
        .iter()
        .map(|p| p.homogeneous.collapse_time.unwrap())
        .collect();
    let inh: Vec<f64> = points
        .iter()
        .map(|p| p.inhomogeneous.collapse_time.unwrap())
        .collect();
    let slope = log_slope(&taus, &hom);
    let last = (inh[4] / inh[3] - 1.0).abs();
    report(
        8,
        "plateau",
        (slope - 1.0).abs() <= 0.02 && last < 0.10,
        &format!(
            "homogeneous slope {slope:.4}; with inhomogeneity {} ms; change over the last decade {:.1}%",
            inh.iter().map(|t| format!("{:.3}", t * 1e3)).collect::<Vec<_>>().join("/"),
            100.0 * last
        ),
    );
}

#[test]
fn criterion_09_numerical_hygiene() {
    let ops = SpinOperators::new(4.0).unwrap();
    let rho = coherent_state(&ops, PI / 2.0, 0.0).to_density();
    let probe = ProbeConfig::with_scattering_rate(1e3, 0.5);
    let field = FieldConfig::new(2.4e5).unwrap();
    let h = build_full_hamiltonian(&ops, &field, &probe).unwrap();
    let grid = TimeGrid::new(0.0, 4e-3, 2001).unwrap();
    let opts = UnitaryOptions {
        retain_states: true,
        track_eigenvalues: false,
    };
    let u = propagate_unitary(&h, &ops, &rho, &grid, opts).unwrap();
    let states = u.states.as_ref().unwrap();
    let unitary_drift = states
        .iter()
        .map(|s| (s.trace() - 1.0).abs().max((s.purity() - 1.0).abs()))
        .fold(0.0, f64::max);

    // Lindblad: γ_s t = 20 with the default pumping model.
    let cfg = rotating("[probe]\npolarization_angle_deg = 30\n[grid]\nduration_tau = 20\n");
    let s = Scenario::from_config(&cfg).unwrap();
    let r = s.evolve(ExecMode::Sequential).unwrap();
    let trace_drift = r
        .trace_series
        .iter()
        .map(|t| (t - 1.0).abs())
        .fold(0.0, f64::max);
    let min_eig = r.min_eigenvalue.unwrap();

    let h = build_full_hamiltonian(&ops, &field, &probe).unwrap();
    let channels = s.channels(&probe).unwrap();
    let grid = TimeGrid::new(0.0, 3e-3, 4001).unwrap();
    let base = propagate_lindblad(
        &h,
        &channels,
        &ops,
        &rho,
        &grid,
        &LindbladOptions::default(),
    )
    .unwrap();
    let halved = propagate_lindblad(
        &h,
        &channels,
        &ops,
        &rho,
        &grid,
        &LindbladOptions {
            extra_halvings: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let step_change = base
        .fz_series
        .iter()
        .zip(&halved.fz_series)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    report(
        9,
        "numerical hygiene",
        unitary_drift < 1e-12 && trace_drift < 1e-9 && min_eig > -1e-9 && step_change < 1e-8,
        &format!(
            "unitary trace/purity drift {unitary_drift:.1e}, Lindblad trace drift {trace_drift:.1e}, min eigenvalue {min_eig:.1e}, step-halving change {step_change:.1e}"
        ),
    );
}

#[test]
fn criterion_10_measurement_statistics() {
    let n = 20000;
    let zero = SignalTrace::from_samples((0..n).map(|k| k as f64 * 1e-6).collect(), vec![0.0; n]);
    let std = |trials: usize| {
        let cfg = PolarimeterConfig {
            n_trials: trials,
            rng_seed: 7,
            ..Default::default()
        };
        let m = measure(&zero, &cfg, ExecMode::Parallel).unwrap();
        let mean = m.mean_signal.iter().sum::<f64>() / n as f64;
        (m.mean_signal
            .iter()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64)
            .sqrt()
    };
    let ratio = std(128) / std(1);
    let expected = 1.0 / 128f64.sqrt();
    let stat_ok = (ratio / expected - 1.0).abs() <= 0.15;

    let cfg = RunConfig::default();
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    cmd_simulate(&cfg, dirs[0].path(), false).unwrap();
    cmd_simulate(&cfg, dirs[1].path(), false).unwrap();
    let mut other = cfg.clone();
    other.polarimeter.seed = 1;
    cmd_simulate(&other, dirs[2].path(), false).unwrap();
    let read = |i: usize, f: &str| std::fs::read(dirs[i].path().join(f)).unwrap();
    let identical =
        read(0, "trace.csv") == read(1, "trace.csv") && read(0, "fit.csv") == read(1, "fit.csv");
    let seed_matters = read(0, "trace.csv") != read(2, "trace.csv");
    report(
        10,
        "measurement statistics",
        stat_ok && identical && seed_matters,
        &format!(
            "sigma ratio {ratio:.5} vs 1/sqrt(128) = {expected:.5}; same seed byte-identical: {identical}; different seed differs: {seed_matters}"
        ),
    );
}

#[test]
fn criterion_11_calibration_knobs_and_monotonicity() {
    let factors = [1.0, 1.5, 2.0, 3.0];
    let amplitudes = |model: DecoherenceModel| -> Vec<f64> {
        factors
            .iter()
            .map(|f| {
                let mut cfg = rotating("[grid]\nduration_tau = 4.0\npoints = 8001\n");
                cfg.decoherence.model = model;
                cfg.decoherence.loss_calibration = DEFAULT_CALIBRATION;
                cfg.probe.extra_scattering_factor = *f;
                let (s, env) = envelope_of(&cfg);
                // Narrow window around the one-axis-twisting revival π/|χ|.
                let t_rev = PI / s.chi().abs();
                detect_revival(&env, (0.95 * t_rev, 1.05 * t_rev))
                    .unwrap()
                    .revival_amplitude_ratio
            })
            .collect()
    };
    let loss = amplitudes(DecoherenceModel::Loss);
    let depol = amplitudes(DecoherenceModel::Depolarization);
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    // The shipped simulate path finds the same revival under the loss model.
    let mut cfg = config("[decoherence]\nmodel = \"loss\"\n");
    cfg.decoherence.loss_calibration = DEFAULT_CALIBRATION;
    let sim = simulate(&Scenario::from_config(&cfg).unwrap(), ExecMode::Parallel).unwrap();
    let lab_revival = sim
        .report
        .revival
        .map_or(f64::NAN, |r| r.revival_amplitude_ratio);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|a| format!("{a:.4}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    report(
        11,
        "calibration knobs, not absolute values",
        decreasing(&loss) && decreasing(&depol) && lab_revival > 0.3,
        &format!(
            "absolute experimental values are not asserted; revival amplitude vs extra_scattering_factor 1/1.5/2/3: loss {}, depolarization {}; simulate (loss) revival {lab_revival:.3}",
            fmt(&loss),
            fmt(&depol)
        ),
    );
}
