//! Subcommands and their file outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{extract_envelope, summarize, Envelope, EnvelopeMethod, EnvelopeReport};
use crate::exec::{with_workers, ExecMode};
use crate::signal::SignalTrace;

use super::config::{RunConfig, Spacing};
use super::output::{self, fmt_f64, Header, Table};
use super::pipeline::{simulate, Scenario};
use super::scan;
use super::CliError;

/// Environment variable holding the default config path.
pub const CONFIG_ENV: &str = "FARADAY_SIM_CONFIG";

#[derive(Debug, Parser)]
#[command(
    name = "faraday-sim",
    version,
    about = "Faraday-probed atomic spin simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration. Defaults apply when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Base seed for shot noise (overrides polarimeter.seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Also write a gnuplot script next to each CSV.
    #[arg(long, global = true)]
    pub emit_plot: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time trace of one configuration: trace.csv and fit.csv.
    Simulate,
    /// Collapse and revival times against τ_s at fixed angle: scan_tau.csv.
    ScanTau(ScanArgs),
    /// Decay time against polarization angle: scan_angle.csv.
    ScanAngle(ScanArgs),
    /// Critical-angle decay time against τ_s, with and without inhomogeneity: scan_critical.csv.
    ScanCritical(ScanArgs),
    /// Re-analyze a stored trace.csv: fit.csv.
    Fit {
        /// Trace written by `simulate`.
        trace: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Comma-separated swept values (τ_s in s, θ in degrees); overrides [scan].
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
}

/// Runs a parsed command line and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.polarimeter.seed = seed;
    }
    if let Command::ScanTau(a) | Command::ScanAngle(a) | Command::ScanCritical(a) = &cli.command {
        if let Some(v) = &a.values {
            cfg.scan.values = Some(v.clone());
        }
    }
    cfg.validate()?;
    let out = output::ensure_dir(&cli.out)?;
    with_workers(cli.workers, || match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &out, cli.emit_plot),
        Command::ScanTau(_) => cmd_scan_tau(&cfg, &out, cli.emit_plot),
        Command::ScanAngle(_) => cmd_scan_angle(&cfg, &out, cli.emit_plot),
        Command::ScanCritical(_) => cmd_scan_critical(&cfg, &out, cli.emit_plot),
        Command::Fit { trace } => cmd_fit(trace, &out),
    })
}

const MODE: ExecMode = ExecMode::Parallel;

fn maybe_plot(
    written: &mut Vec<PathBuf>,
    emit: bool,
    out: &Path,
    csv_name: &str,
    script: impl FnOnce(&str) -> String,
) -> Result<(), CliError> {
    if emit {
        let path = out.join(Path::new(csv_name).with_extension("gp"));
        output::write_text(&path, &script(csv_name))?;
        written.push(path);
    }
    Ok(())
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    out: &Path,
    emit_plot: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let scenario = Scenario::from_config(cfg)?;
    let sim = simulate(&scenario, MODE)?;
    let tau = scenario.tau_s();
    let mut header = Header::new("simulate", &scenario.digest);
    header
        .push("seed", cfg.polarimeter.seed)
        .push("spin", cfg.model.spin)
        .push("tau_s", fmt_f64(tau))
        .push("larmor_frequency", fmt_f64(scenario.larmor_frequency()))
        .push("theta_deg", fmt_f64(cfg.probe.polarization_angle_deg))
        .push("frame", format!("{:?}", cfg.model.frame).to_lowercase())
        .push("envelope_method", scenario.envelope_method().as_str())
        .push("n_trials", cfg.polarimeter.n_trials);
    let trace_path = out.join("trace.csv");
    output::write_table(
        &trace_path,
        &header,
        &output::TRACE_COLUMNS,
        &output::trace_rows(&sim, tau),
    )?;
    let fit_path = out.join("fit.csv");
    write_report(&fit_path, &header, "simulate", &sim.report, tau)?;
    let mut written = vec![trace_path, fit_path];
    maybe_plot(&mut written, emit_plot, out, "trace.csv", |data| {
        output::plot_script(
            data,
            "Faraday signal",
            (2, "t / tau_s"),
            &[(6, "signal (averaged)"), (7, "envelope")],
            false,
        )
    })?;
    Ok(written)
}

fn write_report(
    path: &Path,
    source: &Header,
    command: &str,
    report: &EnvelopeReport,
    tau_s: f64,
) -> Result<(), CliError> {
    let mut header = Header::new(command, source.get("config_digest").unwrap_or(""));
    for key in [
        "seed",
        "spin",
        "tau_s",
        "larmor_frequency",
        "theta_deg",
        "envelope_method",
    ] {
        if let Some(v) = source.get(key) {
            header.push(key, v);
        }
    }
    output::write_table(
        path,
        &header,
        &output::FIT_COLUMNS,
        &output::report_rows(report, tau_s),
    )
}

/// Re-runs envelope extraction and fitting on a stored trace.
pub fn fit_trace(path: &Path) -> Result<(Header, EnvelopeReport, f64), CliError> {
    let table = Table::read(path)?;
    let schema = |message: String| CliError::Schema {
        path: path.display().to_string(),
        message,
    };
    for col in output::TRACE_COLUMNS {
        if !table.columns.iter().any(|c| c == col) {
            return Err(schema(format!("missing column `{col}`")));
        }
    }
    let header_f64 = |key: &str| -> Result<f64, CliError> {
        table
            .header
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| schema(format!("header entry `{key}` missing or not a number")))
    };
    let tau_s = header_f64("tau_s")?;
    let larmor = header_f64("larmor_frequency")?;
    let method = table
        .header
        .get("envelope_method")
        .and_then(output::method_from_str)
        .ok_or_else(|| schema("header entry `envelope_method` missing or unknown".into()))?;
    let times = table.float_column("time_s", path)?;
    let signal = table.float_column("signal_noisy", path)?;
    let env = match method {
        EnvelopeMethod::Transverse => Ok(Envelope::new(
            times,
            table.float_column("envelope", path)?,
            method,
        )),
        m => extract_envelope(&SignalTrace::from_samples(times, signal), larmor, m),
    };
    let report = match env {
        Ok(env) => summarize(&env),
        Err(e) => EnvelopeReport {
            collapse_time: None,
            selection: None,
            revival: None,
            warnings: vec![format!("envelope: {e}")],
        },
    };
    Ok((table.header, report, tau_s))
}

pub fn cmd_fit(trace: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (header, report, tau_s) = fit_trace(trace)?;
    let path = out.join("fit.csv");
    write_report(&path, &header, "fit", &report, tau_s)?;
    Ok(vec![path])
}

fn scan_header(command: &str, cfg: &RunConfig, swept: &str) -> Header {
    let mut h = Header::new(command, &cfg.digest());
    h.push("seed", cfg.polarimeter.seed)
        .push("spin", cfg.model.spin)
        .push("swept", swept);
    h
}

fn all_failed(errors: &[Option<&String>]) -> Result<(), CliError> {
    if !errors.is_empty() && errors.iter().all(Option::is_some) {
        return Err(CliError::Numerical(crate::Error::Analysis(format!(
            "every scan point failed; first: {}",
            errors[0].expect("checked")
        ))));
    }
    Ok(())
}

pub fn cmd_scan_tau(
    cfg: &RunConfig,
    out: &Path,
    emit_plot: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let values = scan::resolve_values(&cfg.scan, (1e-4, 1e-2, 5, Spacing::Log))?;
    let points = scan::scan_tau(cfg, &values, MODE)?;
    let mut header = scan_header("scan-tau", cfg, "tau_s");
    header.push("theta_deg", fmt_f64(cfg.scan.angle_deg.unwrap_or(90.0)));
    let path = out.join("scan_tau.csv");
    output::write_table(
        &path,
        &header,
        &output::SCAN_TAU_COLUMNS,
        &output::scan_tau_rows(&points),
    )?;
    let mut written = vec![path];
    maybe_plot(&mut written, emit_plot, out, "scan_tau.csv", |data| {
        output::plot_script(
            data,
            "Collapse and revival times",
            (1, "tau_s [s]"),
            &[(2, "collapse 1/e"), (4, "revival"), (6, "revival collapse")],
            true,
        )
    })?;
    all_failed(&points.iter().map(|p| p.error.as_ref()).collect::<Vec<_>>())?;
    Ok(written)
}

pub fn cmd_scan_angle(
    cfg: &RunConfig,
    out: &Path,
    emit_plot: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let mut values = scan::resolve_values(&cfg.scan, (0.0, 90.0, 19, Spacing::Linear))?;
    if cfg.scan.include_critical {
        values = scan::with_critical_angle(values);
    }
    let points = scan::scan_angle(cfg, &values, MODE)?;
    let header = scan_header("scan-angle", cfg, "theta_deg");
    let path = out.join("scan_angle.csv");
    output::write_table(
        &path,
        &header,
        &output::SCAN_ANGLE_COLUMNS,
        &output::scan_angle_rows(&points),
    )?;
    let mut written = vec![path];
    maybe_plot(&mut written, emit_plot, out, "scan_angle.csv", |data| {
        output::plot_script(
            data,
            "1/e decay time against polarization angle",
            (1, "theta [deg]"),
            &[(3, "threshold 1/e [tau_s]"), (7, "fit 1/e [tau_s]")],
            false,
        )
    })?;
    all_failed(&points.iter().map(|p| p.error.as_ref()).collect::<Vec<_>>())?;
    Ok(written)
}

pub fn cmd_scan_critical(
    cfg: &RunConfig,
    out: &Path,
    emit_plot: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let values = scan::resolve_values(&cfg.scan, (1e-4, 1.0, 9, Spacing::Log))?;
    let points = scan::scan_critical(cfg, &values, MODE)?;
    let base = scan::critical_base(cfg, &values);
    let mut header = scan_header("scan-critical", cfg, "tau_s");
    header
        .push("theta_deg", fmt_f64(base.probe.polarization_angle_deg))
        .push(
            "larmor_frequency",
            fmt_f64(base.field.larmor_frequency.unwrap_or(f64::NAN)),
        )
        .push("larmor_spread", fmt_f64(base.ensemble.larmor_spread));
    let path = out.join("scan_critical.csv");
    output::write_table(
        &path,
        &header,
        &output::SCAN_CRITICAL_COLUMNS,
        &output::scan_critical_rows(&points),
    )?;
    let mut written = vec![path];
    maybe_plot(&mut written, emit_plot, out, "scan_critical.csv", |data| {
        output::plot_script(
            data,
            "Critical-angle decay time",
            (1, "tau_s [s]"),
            &[(2, "homogeneous"), (4, "with inhomogeneity")],
            true,
        )
    })?;
    all_failed(&points.iter().map(|p| p.error.as_ref()).collect::<Vec<_>>())?;
    Ok(written)
}
