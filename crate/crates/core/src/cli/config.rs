//! Run configuration: one TOML document with a section per subsystem.
//!
//! Every key is optional; unknown keys are rejected with their full path.
//! Units: angles in degrees, times in seconds, frequencies in rad/s.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::EnvelopeMethod;
use crate::decoherence::{DecoherenceModel, EnsembleSpec, DEFAULT_CALIBRATION};
use crate::light_shift::{PhysicalPreset, CS_NONLINEARITY};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub probe: ProbeSection,
    pub field: FieldSection,
    pub decoherence: DecoherenceSection,
    pub ensemble: EnsembleSpec,
    pub polarimeter: PolarimeterSection,
    pub grid: GridSection,
    pub analysis: AnalysisSection,
    pub scan: ScanSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameChoice {
    /// Full Hamiltonian in the lab frame.
    Lab,
    /// Rotating-wave Hamiltonian, mapped back to the lab for the signal.
    Rotating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Spin quantum number F.
    pub spin: f64,
    pub frame: FrameChoice,
    /// Initial spin-coherent state direction, degrees. 90/0 points along x.
    pub initial_polar_deg: f64,
    pub initial_azimuth_deg: f64,
    /// Path to a species preset file; the built-in Cs D2 preset otherwise.
    pub preset: Option<String>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            spin: 4.0,
            frame: FrameChoice::Lab,
            initial_polar_deg: 90.0,
            initial_azimuth_deg: 0.0,
            preset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    /// Scattering time τ_s = 1/γ_s, s. Mutually exclusive with detuning/intensity.
    pub tau_s: Option<f64>,
    /// Detuning from the D2 line, rad/s.
    pub detuning: Option<f64>,
    /// I_p/I₀
    pub intensity_ratio: Option<f64>,
    /// Natural linewidth override, rad/s.
    pub linewidth: Option<f64>,
    pub polarization_angle_deg: f64,
    pub nonlinearity: f64,
    pub extra_scattering_factor: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            tau_s: None,
            detuning: None,
            intensity_ratio: None,
            linewidth: None,
            polarization_angle_deg: 0.0,
            nonlinearity: CS_NONLINEARITY,
            extra_scattering_factor: 1.0,
        }
    }
}

/// τ_s used when the probe section specifies neither τ_s nor Δ and I_p/I₀.
pub const DEFAULT_TAU_S: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    /// Ω_L, rad/s.
    pub larmor_frequency: Option<f64>,
    /// |B|, tesla; converted with the preset's g_F.
    pub magnetic_field: Option<f64>,
    /// Ω_L/|χ| used when no field is given.
    pub rwa_ratio: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            larmor_frequency: None,
            magnetic_field: None,
            rwa_ratio: 200.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoherenceSection {
    pub model: DecoherenceModel,
    /// Depolarization rate in units of the total scattering rate.
    pub calibration: f64,
    /// Loss rate in units of the total scattering rate.
    pub loss_calibration: f64,
}

impl Default for DecoherenceSection {
    fn default() -> Self {
        Self {
            model: DecoherenceModel::Depolarization,
            calibration: DEFAULT_CALIBRATION,
            loss_calibration: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarimeterSection {
    pub rotation_gain: f64,
    /// photons/s
    pub photon_flux: f64,
    /// s
    pub bin_time: f64,
    pub n_trials: usize,
    pub seed: u64,
}

impl Default for PolarimeterSection {
    fn default() -> Self {
        Self {
            rotation_gain: 1.0,
            photon_flux: 1e12,
            bin_time: 1e-6,
            n_trials: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Span in units of the characteristic collapse/decay time.
    pub collapse_times: f64,
    /// Explicit span in seconds (overrides `collapse_times`).
    pub duration: Option<f64>,
    /// Explicit span in units of τ_s (overrides `collapse_times`).
    pub duration_tau: Option<f64>,
    /// Number of grid points; by default the larger of 4000 and
    /// `samples_per_period` points per Larmor period.
    pub points: Option<usize>,
    pub samples_per_period: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            collapse_times: 8.0,
            duration: None,
            duration_tau: None,
            points: None,
            samples_per_period: 24.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub envelope: EnvelopeMethod,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            envelope: EnvelopeMethod::QuadratureDemod,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    /// Explicit values of the swept parameter (τ_s in s, or θ in degrees).
    pub values: Option<Vec<f64>>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub count: Option<usize>,
    pub spacing: Option<Spacing>,
    /// Add the critical angle to angle scans.
    pub include_critical: bool,
    /// Fixed θ (degrees) for τ_s scans; 90 for scan-tau, critical for scan-critical.
    pub angle_deg: Option<f64>,
    /// Inhomogeneous 1/e time used for scan-critical when the ensemble
    /// section sets no Larmor spread, s.
    pub plateau_time: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            values: None,
            start: None,
            stop: None,
            count: None,
            spacing: None,
            include_critical: true,
            angle_deg: None,
            plateau_time: 10e-3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses TOML, reporting the dotted key path of the first offending entry.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de =
            toml::Deserializer::parse(text).map_err(|e| invalid("<document>", e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if !(m.spin > 0.0) || ((2.0 * m.spin) - (2.0 * m.spin).round()).abs() > 1e-12 {
            return Err(invalid("model.spin", "must be a positive multiple of 1/2"));
        }
        let p = &self.probe;
        if p.tau_s.is_some() && (p.detuning.is_some() || p.intensity_ratio.is_some()) {
            return Err(invalid(
                "probe.tau_s",
                "give either tau_s or detuning + intensity_ratio, not both",
            ));
        }
        if p.detuning.is_some() != p.intensity_ratio.is_some() {
            return Err(invalid(
                "probe.detuning",
                "detuning and intensity_ratio must be given together",
            ));
        }
        if let Some(t) = p.tau_s {
            if !(t > 0.0) {
                return Err(invalid("probe.tau_s", "must be positive"));
            }
        }
        if let Some(d) = p.detuning {
            if d == 0.0 || !d.is_finite() {
                return Err(invalid("probe.detuning", "must be non-zero"));
            }
        }
        if let Some(i) = p.intensity_ratio {
            if !(i > 0.0) {
                return Err(invalid("probe.intensity_ratio", "must be positive"));
            }
        }
        if !(0.0..=90.0).contains(&p.polarization_angle_deg) {
            return Err(invalid(
                "probe.polarization_angle_deg",
                "must lie in [0, 90]",
            ));
        }
        if !(p.nonlinearity >= 0.0) {
            return Err(invalid("probe.nonlinearity", "must be non-negative"));
        }
        if !(p.extra_scattering_factor >= 1.0) {
            return Err(invalid(
                "probe.extra_scattering_factor",
                "must be at least 1",
            ));
        }
        let f = &self.field;
        if f.larmor_frequency.is_some() && f.magnetic_field.is_some() {
            return Err(invalid(
                "field.larmor_frequency",
                "give either larmor_frequency or magnetic_field",
            ));
        }
        if let Some(w) = f.larmor_frequency {
            if !(w >= 0.0) {
                return Err(invalid("field.larmor_frequency", "must be non-negative"));
            }
        }
        if !(f.rwa_ratio > 0.0) {
            return Err(invalid("field.rwa_ratio", "must be positive"));
        }
        let d = &self.decoherence;
        if !(d.calibration >= 0.0) {
            return Err(invalid("decoherence.calibration", "must be non-negative"));
        }
        if !(d.loss_calibration >= 0.0) {
            return Err(invalid(
                "decoherence.loss_calibration",
                "must be non-negative",
            ));
        }
        let e = &self.ensemble;
        if !(e.gamma_spread >= 0.0) {
            return Err(invalid("ensemble.gamma_spread", "must be non-negative"));
        }
        if !(e.larmor_spread >= 0.0) {
            return Err(invalid("ensemble.larmor_spread", "must be non-negative"));
        }
        if e.n_samples == 0 {
            return Err(invalid("ensemble.n_samples", "must be at least 1"));
        }
        let pol = &self.polarimeter;
        if !(pol.photon_flux > 0.0) {
            return Err(invalid("polarimeter.photon_flux", "must be positive"));
        }
        if !(pol.bin_time > 0.0) {
            return Err(invalid("polarimeter.bin_time", "must be positive"));
        }
        if pol.n_trials == 0 {
            return Err(invalid("polarimeter.n_trials", "must be at least 1"));
        }
        let g = &self.grid;
        if !(g.collapse_times > 0.0) {
            return Err(invalid("grid.collapse_times", "must be positive"));
        }
        if let Some(t) = g.duration {
            if !(t > 0.0) {
                return Err(invalid("grid.duration", "must be positive"));
            }
        }
        if let Some(t) = g.duration_tau {
            if !(t > 0.0) {
                return Err(invalid("grid.duration_tau", "must be positive"));
            }
        }
        if let Some(n) = g.points {
            if n < 2 {
                return Err(invalid("grid.points", "must be at least 2"));
            }
        }
        if !(g.samples_per_period >= 8.0) {
            return Err(invalid("grid.samples_per_period", "must be at least 8"));
        }
        let s = &self.scan;
        if let Some(v) = &s.values {
            if v.is_empty() {
                return Err(invalid("scan.values", "must contain at least one value"));
            }
        }
        if let Some(c) = s.count {
            if c == 0 {
                return Err(invalid("scan.count", "must be at least 1"));
            }
        }
        if !(s.plateau_time > 0.0) {
            return Err(invalid("scan.plateau_time", "must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. Field order is fixed by the struct,
    /// so the digest does not depend on key order in the source file.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn preset(&self) -> Result<PhysicalPreset, ConfigError> {
        match &self.model.preset {
            None => Ok(PhysicalPreset::cesium_d2()),
            Some(p) => PhysicalPreset::load(Path::new(p))
                .map_err(|e| invalid("model.preset", format!("{p}: {e}"))),
        }
    }
}
