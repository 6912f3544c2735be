//! Probe light shift and the single-spin Hamiltonians it produces.
//!
//! The probe is linearly polarized at angle θ to the magnetic field, which
//! points along +y. With ε_p = (sin θ, cos θ, 0) the tensor light shift is
//! χ·(ε_p·F̂)², χ = −1.2·γ_s for Cs F=4. In the frame rotating at the Larmor
//! frequency only χ·(cos²θ − ½sin²θ)·F̂y² survives.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{hermiticity_error, CMatrix, SpinOperators};

/// Bohr magneton over Planck's constant, Hz/T.
pub const BOHR_MAGNETON_HZ_PER_T: f64 = 1.399_624_493_61e10;

/// Default magnitude of the rank-2 coefficient, in units of γ_s (Cs F=4).
pub const CS_NONLINEARITY: f64 = 1.2;

/// How strongly the probe drives the atoms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProbeStrength {
    /// Detuning Δ (rad/s, signed) and intensity in units of saturation intensity.
    Saturation { detuning: f64, intensity_ratio: f64 },
    /// Photon scattering rate γ_s (1/s) given directly.
    ScatteringRate(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub strength: ProbeStrength,
    /// Natural linewidth Γ, rad/s.
    pub linewidth: f64,
    /// Angle θ between probe polarization and magnetic field, radians.
    pub polarization_angle: f64,
    /// |β U₀/(Δ/Γ)| in units of γ_s. Zero disables the nonlinearity.
    pub nonlinearity: f64,
    /// Multiplies the scattering rate seen by decoherence channels, ≥ 1.
    pub extra_scattering_factor: f64,
}

impl ProbeConfig {
    /// Probe at scattering rate `gamma_s` with Cs defaults otherwise.
    pub fn with_scattering_rate(gamma_s: f64, polarization_angle: f64) -> Self {
        Self {
            strength: ProbeStrength::ScatteringRate(gamma_s),
            linewidth: PhysicalPreset::cesium_d2().gamma_rad_per_s,
            polarization_angle,
            nonlinearity: CS_NONLINEARITY,
            extra_scattering_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.linewidth > 0.0) {
            return Err(Error::InvalidProbe("linewidth must be positive".into()));
        }
        match self.strength {
            ProbeStrength::Saturation {
                detuning,
                intensity_ratio,
            } => {
                if detuning == 0.0 || !detuning.is_finite() {
                    return Err(Error::InvalidProbe("detuning must be non-zero".into()));
                }
                if !(intensity_ratio >= 0.0) {
                    return Err(Error::InvalidProbe(
                        "intensity ratio must be non-negative".into(),
                    ));
                }
            }
            ProbeStrength::ScatteringRate(g) => {
                if !(g >= 0.0) || !g.is_finite() {
                    return Err(Error::InvalidProbe(
                        "scattering rate must be non-negative".into(),
                    ));
                }
            }
        }
        if !(0.0..=PI / 2.0 + 1e-12).contains(&self.polarization_angle) {
            return Err(Error::InvalidProbe(format!(
                "polarization angle {} rad outside [0, π/2]",
                self.polarization_angle
            )));
        }
        if !(self.nonlinearity >= 0.0) {
            return Err(Error::InvalidProbe(
                "nonlinearity magnitude must be non-negative".into(),
            ));
        }
        if !(self.extra_scattering_factor >= 1.0) {
            return Err(Error::InvalidProbe(
                "extra scattering factor must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Unit polarization vector (x, y, z).
    pub fn polarization(&self) -> [f64; 3] {
        let (s, c) = self.polarization_angle.sin_cos();
        [s, c, 0.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Ω_L = g_F μ_B B / ħ, rad/s. The field points along +y.
    pub larmor_frequency: f64,
}

impl FieldConfig {
    pub fn new(larmor_frequency: f64) -> Result<Self> {
        if !(larmor_frequency >= 0.0) || !larmor_frequency.is_finite() {
            return Err(Error::InvalidProbe(format!(
                "Larmor frequency {larmor_frequency} must be non-negative"
            )));
        }
        Ok(Self { larmor_frequency })
    }

    /// Larmor frequency for field `tesla` and Landé factor `gf`.
    pub fn from_magnetic_field(tesla: f64, gf: f64) -> Result<Self> {
        Self::new((2.0 * PI * BOHR_MAGNETON_HZ_PER_T * gf * tesla).abs())
    }
}

/// Which frame a Hamiltonian (and any result propagated with it) lives in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Frame {
    Lab,
    /// Frame rotating about +y at `larmor_frequency` (rad/s).
    Rotating {
        larmor_frequency: f64,
    },
}

#[derive(Clone, Debug)]
pub struct HamiltonianSpec {
    /// rad/s
    pub matrix: CMatrix,
    pub frame: Frame,
    pub description: String,
}

/// s = (Γ/2Δ)²·(I_p/I₀). With a directly specified scattering rate this is
/// the inverse relation s = 2γ_s/Γ.
pub fn saturation_parameter(probe: &ProbeConfig) -> Result<f64> {
    probe.validate()?;
    Ok(match probe.strength {
        ProbeStrength::Saturation {
            detuning,
            intensity_ratio,
        } => (probe.linewidth / (2.0 * detuning)).powi(2) * intensity_ratio,
        ProbeStrength::ScatteringRate(g) => 2.0 * g / probe.linewidth,
    })
}

/// γ_s = sΓ/2 of the probe alone, without extra scattering.
pub fn probe_scattering_rate(probe: &ProbeConfig) -> Result<f64> {
    probe.validate()?;
    Ok(match probe.strength {
        ProbeStrength::ScatteringRate(g) => g,
        ProbeStrength::Saturation { .. } => saturation_parameter(probe)? * probe.linewidth / 2.0,
    })
}

/// Total scattering rate, including `extra_scattering_factor`.
pub fn scattering_rate(probe: &ProbeConfig) -> Result<f64> {
    Ok(probe_scattering_rate(probe)? * probe.extra_scattering_factor)
}

/// χ = −1.2·γ_s (rad/s). Only the probe's own scattering contributes; extra
/// scattering (e.g. broadband laser background) adds decoherence but no light shift.
pub fn nonlinear_coefficient(probe: &ProbeConfig) -> Result<f64> {
    Ok(-probe.nonlinearity * probe_scattering_rate(probe)?)
}

/// Scalar shift (2/3)U₀ with U₀ = sΔ/2, rad/s. It never enters a Hamiltonian.
/// `None` when the probe is specified by its scattering rate alone.
pub fn scalar_light_shift(probe: &ProbeConfig) -> Result<Option<f64>> {
    let s = saturation_parameter(probe)?;
    Ok(match probe.strength {
        ProbeStrength::Saturation { detuning, .. } => Some(2.0 / 3.0 * s * detuning / 2.0),
        ProbeStrength::ScatteringRate(_) => None,
    })
}

fn check_dims(ops: &SpinOperators, m: &CMatrix) -> Result<()> {
    if m.nrows() != ops.dim {
        return Err(Error::DimensionMismatch {
            expected: ops.dim,
            found: m.nrows(),
        });
    }
    Ok(())
}

/// H = Ω_L·F̂y + χ·(sin θ F̂x + cos θ F̂y)², lab frame.
pub fn build_full_hamiltonian(
    ops: &SpinOperators,
    field: &FieldConfig,
    probe: &ProbeConfig,
) -> Result<HamiltonianSpec> {
    let chi = nonlinear_coefficient(probe)?;
    let proj = ops.along(probe.polarization());
    check_dims(ops, &proj)?;
    let matrix = ops.fy.map(|z| z * field.larmor_frequency) + (&proj * &proj).map(|z| z * chi);
    Ok(HamiltonianSpec {
        matrix: symmetrize(matrix),
        frame: Frame::Lab,
        description: format!(
            "full: Omega_L={:e} rad/s, chi={:e} rad/s, theta={:.6} rad",
            field.larmor_frequency, chi, probe.polarization_angle
        ),
    })
}

/// cos²θ − ½sin²θ
pub fn rwa_geometric_factor(theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    c * c - 0.5 * s * s
}

/// θ = arctan √2, where the rotating-frame nonlinearity vanishes.
pub fn critical_angle() -> f64 {
    std::f64::consts::SQRT_2.atan()
}

/// H_rot = χ·(cos²θ − ½sin²θ)·F̂y² in the frame rotating at Ω_L.
pub fn build_rwa_hamiltonian(
    ops: &SpinOperators,
    field: &FieldConfig,
    probe: &ProbeConfig,
) -> Result<HamiltonianSpec> {
    build_rwa_hamiltonian_in_frame(ops, field, probe, field.larmor_frequency)
}

/// RWA Hamiltonian seen from a frame rotating at `frame_frequency`, which may
/// differ from the atom's own Ω_L (inhomogeneous ensembles). The residual
/// (Ω_L − frame_frequency)·F̂y term is kept.
pub fn build_rwa_hamiltonian_in_frame(
    ops: &SpinOperators,
    field: &FieldConfig,
    probe: &ProbeConfig,
    frame_frequency: f64,
) -> Result<HamiltonianSpec> {
    let chi = nonlinear_coefficient(probe)?;
    let g = rwa_geometric_factor(probe.polarization_angle);
    let fy2 = &ops.fy * &ops.fy;
    check_dims(ops, &fy2)?;
    let detuning = field.larmor_frequency - frame_frequency;
    let mut matrix = fy2.map(|z| z * (chi * g));
    if detuning != 0.0 {
        matrix += ops.fy.map(|z| z * detuning);
    }
    Ok(HamiltonianSpec {
        matrix: symmetrize(matrix),
        frame: Frame::Rotating {
            larmor_frequency: frame_frequency,
        },
        description: format!(
            "rwa: chi={:e} rad/s, factor={:.6}, residual Larmor {:e} rad/s",
            chi, g, detuning
        ),
    })
}

/// Ω_L/γ_s. Infinite when the probe does not scatter.
pub fn rwa_validity_margin(field: &FieldConfig, probe: &ProbeConfig) -> Result<f64> {
    let gamma = probe_scattering_rate(probe)?;
    if gamma == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(field.larmor_frequency / gamma)
}

fn symmetrize(m: CMatrix) -> CMatrix {
    debug_assert!(hermiticity_error(&m) < 1e-6 * (1.0 + m.norm()));
    (&m + m.adjoint()).map(|z: Complex64| z * 0.5)
}

/// Species constants loaded from a small TOML file.
///
/// ```toml
/// species_label = "Cs 6S1/2 F=4, D2 line"
/// gamma_rad_per_s = 3.267256359733385e7
/// gf = 0.25
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalPreset {
    pub species_label: String,
    /// Natural linewidth Γ, rad/s.
    pub gamma_rad_per_s: f64,
    /// Landé g-factor of the hyperfine level.
    pub gf: f64,
}

impl PhysicalPreset {
    /// Cs D2 line, F=4 ground level. External reference data.
    pub fn cesium_d2() -> Self {
        Self {
            species_label: "Cs 6S1/2 F=4, D2 line".into(),
            gamma_rad_per_s: 2.0 * PI * 5.2e6,
            gf: 0.25,
        }
    }

    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
