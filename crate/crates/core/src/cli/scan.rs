//! Parameter scans. Points run concurrently and come back sorted by the swept
//! value; a failing point records its error and the scan continues.

use crate::analysis::{one_over_e_time, summarize, DecayModel, EnvelopeMethod, EnvelopeReport};
use crate::decoherence::EnsembleSpec;
use crate::evolution::{compare_full_vs_rwa, RwaDeviation, TimeGrid};
use crate::exec::{map_slice, ExecMode};
use crate::light_shift::{critical_angle, CS_NONLINEARITY};

use super::config::{FrameChoice, RunConfig, ScanSection, Spacing};
use super::pipeline::{noiseless_envelope, Scenario};
use super::CliError;

/// Swept values: explicit list, else a range, else `default`. Sorted, duplicates removed.
pub fn resolve_values(
    scan: &ScanSection,
    default: (f64, f64, usize, Spacing),
) -> Result<Vec<f64>, CliError> {
    let mut values = match &scan.values {
        Some(v) => v.clone(),
        None => {
            let start = scan.start.unwrap_or(default.0);
            let stop = scan.stop.unwrap_or(default.1);
            let count = scan.count.unwrap_or(default.2);
            let spacing = scan.spacing.unwrap_or(default.3);
            range(start, stop, count, spacing)?
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::config("scan.values", "values must be finite"));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    Ok(values)
}

fn range(start: f64, stop: f64, count: usize, spacing: Spacing) -> Result<Vec<f64>, CliError> {
    if count == 0 {
        return Err(CliError::config("scan.count", "must be at least 1"));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let step = |k: usize| k as f64 / (count - 1) as f64;
    match spacing {
        Spacing::Linear => Ok((0..count)
            .map(|k| start + (stop - start) * step(k))
            .collect()),
        Spacing::Log => {
            if !(start > 0.0 && stop > 0.0) {
                return Err(CliError::config(
                    "scan.start",
                    "log spacing needs positive bounds",
                ));
            }
            let (a, b) = (start.ln(), stop.ln());
            Ok((0..count).map(|k| (a + (b - a) * step(k)).exp()).collect())
        }
    }
}

/// Quantities shared by every scan row, taken from one envelope report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSummary {
    /// Threshold 1/e time, s.
    pub collapse_time: Option<f64>,
    pub best_model: Option<DecayModel>,
    pub residual_ratio: Option<f64>,
    /// 1/e times of the two fits, s.
    pub gaussian_one_over_e: Option<f64>,
    pub exponential_one_over_e: Option<f64>,
    pub revival_time: Option<f64>,
    pub revival_amplitude: Option<f64>,
    pub revival_collapse_time: Option<f64>,
    pub warnings: Vec<String>,
}

impl PointSummary {
    pub fn from_report(report: &EnvelopeReport) -> Self {
        let fit = |m: DecayModel| {
            report.selection.as_ref().and_then(|s| {
                let f = match m {
                    DecayModel::Gaussian => &s.gaussian,
                    DecayModel::Exponential => &s.exponential,
                };
                f.success.then_some(f.one_over_e_time)
            })
        };
        Self {
            collapse_time: report.collapse_time,
            best_model: report.selection.as_ref().map(|s| s.best),
            residual_ratio: report.selection.as_ref().map(|s| s.residual_ratio),
            gaussian_one_over_e: fit(DecayModel::Gaussian),
            exponential_one_over_e: fit(DecayModel::Exponential),
            revival_time: report.revival.map(|r| r.t_revival),
            revival_amplitude: report.revival.map(|r| r.revival_amplitude_ratio),
            revival_collapse_time: report.revival.and_then(|r| r.revival_collapse_time),
            warnings: report.warnings.clone(),
        }
    }

    /// 1/e time of the preferred fit.
    pub fn best_fit_time(&self) -> Option<f64> {
        match self.best_model? {
            DecayModel::Gaussian => self.gaussian_one_over_e,
            DecayModel::Exponential => self.exponential_one_over_e,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanPoint {
    /// Swept value: τ_s in s, or θ in degrees.
    pub value: f64,
    pub tau_s: f64,
    pub summary: PointSummary,
    pub error: Option<String>,
}

fn analyze(cfg: &RunConfig, value: f64, mode: ExecMode) -> ScanPoint {
    let run = || -> Result<(f64, PointSummary), CliError> {
        let scenario = Scenario::from_config(cfg)?;
        let env = noiseless_envelope(&scenario, mode)?;
        Ok((
            scenario.tau_s(),
            PointSummary::from_report(&summarize(&env)),
        ))
    };
    match run() {
        Ok((tau_s, summary)) => ScanPoint {
            value,
            tau_s,
            summary,
            error: None,
        },
        Err(e) => ScanPoint {
            value,
            tau_s: f64::NAN,
            summary: PointSummary::default(),
            error: Some(e.to_string()),
        },
    }
}

fn with_tau(cfg: &RunConfig, tau_s: f64) -> RunConfig {
    let mut c = cfg.clone();
    c.probe.tau_s = Some(tau_s);
    c.probe.detuning = None;
    c.probe.intensity_ratio = None;
    c
}

/// Collapse, revival and revival-collapse times against τ_s at fixed θ
/// (`scan.angle_deg`, 90° by default).
pub fn scan_tau(
    cfg: &RunConfig,
    values: &[f64],
    mode: ExecMode,
) -> Result<Vec<ScanPoint>, CliError> {
    let mut base = cfg.clone();
    base.probe.polarization_angle_deg = cfg.scan.angle_deg.unwrap_or(90.0);
    base.validate()?;
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(CliError::config(
            "scan.values",
            "scattering times must be positive",
        ));
    }
    Ok(map_slice(values, mode, |&tau| {
        analyze(&with_tau(&base, tau), tau, mode)
    }))
}

/// Decay time against θ in degrees.
pub fn scan_angle(
    cfg: &RunConfig,
    values: &[f64],
    mode: ExecMode,
) -> Result<Vec<ScanPoint>, CliError> {
    cfg.validate()?;
    if values.iter().any(|v| !(0.0..=90.0).contains(v)) {
        return Err(CliError::config(
            "scan.values",
            "angles must lie in [0, 90] degrees",
        ));
    }
    Ok(map_slice(values, mode, |&theta| {
        let mut c = cfg.clone();
        c.probe.polarization_angle_deg = theta;
        analyze(&c, theta, mode)
    }))
}

/// Adds the critical angle (degrees) to an angle list, keeping it sorted.
pub fn with_critical_angle(mut values: Vec<f64>) -> Vec<f64> {
    let crit = critical_angle().to_degrees();
    if !values.contains(&crit) {
        values.push(crit);
        values.sort_by(f64::total_cmp);
    }
    values
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalPoint {
    pub tau_s: f64,
    pub homogeneous: PointSummary,
    pub inhomogeneous: PointSummary,
    pub rwa_deviation: Option<RwaDeviation>,
    /// Ω_L/|χ|
    pub larmor_over_chi: f64,
    pub error: Option<String>,
}

/// Number of grid points for the full-vs-RWA comparison.
const COMPARISON_POINTS: usize = 4000;

/// Configuration used by [`scan_critical`] for the run with inhomogeneity:
/// rotating frame, transverse envelope, and a Larmor spread σ = √2/plateau
/// unless the ensemble section already sets one.
pub fn critical_base(cfg: &RunConfig, values: &[f64]) -> RunConfig {
    let mut base = cfg.clone();
    base.probe.polarization_angle_deg = cfg
        .scan
        .angle_deg
        .unwrap_or_else(|| critical_angle().to_degrees());
    base.model.frame = FrameChoice::Rotating;
    base.analysis.envelope = EnvelopeMethod::Transverse;
    if base.field.larmor_frequency.is_none() && base.field.magnetic_field.is_none() {
        let tau_min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let chi = base.probe.nonlinearity.max(0.0);
        let scale = if chi > 0.0 { chi } else { CS_NONLINEARITY };
        base.field.larmor_frequency = Some(base.field.rwa_ratio * scale / tau_min);
    }
    if base.ensemble.larmor_spread == 0.0 {
        base.ensemble.larmor_spread = 2f64.sqrt() / cfg.scan.plateau_time;
    }
    base
}

/// Decay time at the critical angle against τ_s, with and without ensemble
/// inhomogeneity, plus the full-vs-RWA deviation at the fixed Larmor frequency.
pub fn scan_critical(
    cfg: &RunConfig,
    values: &[f64],
    mode: ExecMode,
) -> Result<Vec<CriticalPoint>, CliError> {
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(CliError::config(
            "scan.values",
            "scattering times must be positive",
        ));
    }
    let inhomogeneous = critical_base(cfg, values);
    inhomogeneous.validate()?;
    let mut homogeneous = inhomogeneous.clone();
    homogeneous.ensemble = EnsembleSpec {
        gamma_spread: 0.0,
        larmor_spread: 0.0,
        ..inhomogeneous.ensemble
    };
    Ok(map_slice(values, mode, |&tau| {
        let run = || -> Result<CriticalPoint, CliError> {
            let hom = with_tau(&homogeneous, tau);
            let scenario = Scenario::from_config(&hom)?;
            let hom_env = noiseless_envelope(&scenario, mode)?;
            let inh = Scenario::from_config(&with_tau(&inhomogeneous, tau))?;
            let inh_env = noiseless_envelope(&inh, mode)?;
            let cmp_grid = TimeGrid::new(0.0, scenario.grid.t_end, COMPARISON_POINTS)?;
            let deviation = compare_full_vs_rwa(
                &scenario.ops,
                &scenario.field,
                &scenario.probe,
                &scenario.rho0,
                &cmp_grid,
            )?;
            let mut hom_summary = PointSummary::from_report(&summarize(&hom_env));
            let mut inh_summary = PointSummary::from_report(&summarize(&inh_env));
            // The threshold time is meaningful even when the fits are not.
            hom_summary.collapse_time = one_over_e_time(&hom_env);
            inh_summary.collapse_time = one_over_e_time(&inh_env);
            Ok(CriticalPoint {
                tau_s: tau,
                homogeneous: hom_summary,
                inhomogeneous: inh_summary,
                rwa_deviation: Some(deviation),
                larmor_over_chi: scenario.rwa_ratio(),
                error: None,
            })
        };
        run().unwrap_or_else(|e| CriticalPoint {
            tau_s: tau,
            homogeneous: PointSummary::default(),
            inhomogeneous: PointSummary::default(),
            rwa_deviation: None,
            larmor_over_chi: f64::NAN,
            error: Some(e.to_string()),
        })
    }))
}
