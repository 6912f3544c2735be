//! Optical-pumping decoherence channels and ensemble inhomogeneity.
//!
//! The microscopic Raman jump operators are not modeled. Two phenomenological
//! channels stand in for them: an isotropic depolarizer built from F̂x, F̂y, F̂z
//! and a uniform population loss to the unobserved hyperfine level. Their
//! rates are tied to γ_s through a single calibration scalar.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::EvolutionResult;
use crate::light_shift::{scattering_rate, ProbeConfig};
use crate::spin::{CMatrix, SpinOperators};

/// Default depolarization rate in units of the total scattering rate.
pub const DEFAULT_CALIBRATION: f64 = 0.23;

#[derive(Clone, Debug)]
pub struct DecoherenceChannel {
    pub label: String,
    /// Jump operators, each already carrying √rate.
    pub lindblad_ops: Vec<CMatrix>,
    /// When false only the −½{L†L, ρ} part acts: population leaves the manifold.
    pub trace_preserving: bool,
}

impl DecoherenceChannel {
    /// Σ_k L_k†L_k
    pub fn total_rate_operator(&self) -> CMatrix {
        let d = self.lindblad_ops.first().map_or(0, |m| m.nrows());
        self.lindblad_ops
            .iter()
            .fold(CMatrix::zeros(d, d), |acc, l| acc + l.adjoint() * l)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::NegativeRate(rate));
    }
    Ok(())
}

/// Isotropic depolarization with L_q = √rate·F̂_q, q ∈ {x, y, z}.
///
/// The adjoint dissipator gives D†(F̂z) = −½Σ_q[F̂_q,[F̂_q,F̂z]] = −F̂z, so every
/// spin component decays at exactly `rate` for any F.
pub fn depolarization_channel(rate: f64, ops: &SpinOperators) -> Result<DecoherenceChannel> {
    check_rate(rate)?;
    let amp = rate.sqrt();
    Ok(DecoherenceChannel {
        label: format!("depolarization({rate:e})"),
        lindblad_ops: [&ops.fx, &ops.fy, &ops.fz]
            .into_iter()
            .map(|f| f.map(|z| z * amp))
            .collect(),
        trace_preserving: true,
    })
}

/// Uniform loss: tr ρ(t) = exp(−rate·t) when nothing else acts.
pub fn loss_channel(rate: f64, dim: usize) -> Result<DecoherenceChannel> {
    check_rate(rate)?;
    Ok(DecoherenceChannel {
        label: format!("loss({rate:e})"),
        lindblad_ops: vec![DMatrix::<Complex64>::identity(dim, dim).map(|z| z * rate.sqrt())],
        trace_preserving: false,
    })
}

/// Which channels the pumping model switches on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoherenceModel {
    None,
    Depolarization,
    Loss,
    DepolarizationLoss,
}

/// Depolarization at `calibration`·γ_s (total scattering rate), optionally
/// with loss at `loss_calibration`·γ_s.
pub fn pumping_channels(
    model: DecoherenceModel,
    probe: &ProbeConfig,
    calibration: f64,
    loss_calibration: f64,
    ops: &SpinOperators,
) -> Result<Vec<DecoherenceChannel>> {
    let gamma = scattering_rate(probe)?;
    let mut channels = Vec::new();
    if matches!(
        model,
        DecoherenceModel::Depolarization | DecoherenceModel::DepolarizationLoss
    ) && calibration > 0.0
    {
        channels.push(depolarization_channel(calibration * gamma, ops)?);
    }
    if matches!(
        model,
        DecoherenceModel::Loss | DecoherenceModel::DepolarizationLoss
    ) && loss_calibration > 0.0
    {
        channels.push(loss_channel(loss_calibration * gamma, ops.dim)?);
    }
    Ok(channels)
}

/// The shipped pumping model: depolarization only.
pub fn default_pumping_model(
    probe: &ProbeConfig,
    calibration: f64,
    ops: &SpinOperators,
) -> Result<Vec<DecoherenceChannel>> {
    check_rate(calibration)?;
    pumping_channels(
        DecoherenceModel::Depolarization,
        probe,
        calibration,
        0.0,
        ops,
    )
}

/// Gaussian spreads of γ_s and Ω_L across the atomic sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSpec {
    /// Fractional σ of γ_s.
    pub gamma_spread: f64,
    /// σ of Ω_L, rad/s.
    pub larmor_spread: f64,
    /// Quadrature nodes per spread dimension.
    pub n_samples: usize,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            gamma_spread: 0.0,
            larmor_spread: 0.0,
            n_samples: 7,
        }
    }
}

/// One ensemble member: multiplicative γ_s factor, additive Ω_L offset, weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleSample {
    pub gamma_factor: f64,
    pub larmor_offset: f64,
    pub weight: f64,
}

impl EnsembleSpec {
    pub fn is_homogeneous(&self) -> bool {
        self.gamma_spread == 0.0 && self.larmor_spread == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_spread >= 0.0) || !(self.larmor_spread >= 0.0) {
            return Err(Error::InvalidProbe(
                "ensemble spreads must be non-negative".into(),
            ));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidProbe(
                "ensemble needs at least one sample".into(),
            ));
        }
        Ok(())
    }

    /// Tensor-product Gauss–Hermite nodes over the non-zero spreads.
    pub fn samples(&self) -> Result<Vec<EnsembleSample>> {
        self.validate()?;
        let nodes = gauss_hermite(self.n_samples);
        let single = [(0.0, 1.0)];
        let g_nodes: &[(f64, f64)] = if self.gamma_spread > 0.0 {
            &nodes
        } else {
            &single
        };
        let l_nodes: &[(f64, f64)] = if self.larmor_spread > 0.0 {
            &nodes
        } else {
            &single
        };
        let mut out = Vec::with_capacity(g_nodes.len() * l_nodes.len());
        for &(xg, wg) in g_nodes {
            for &(xl, wl) in l_nodes {
                out.push(EnsembleSample {
                    gamma_factor: (1.0 + self.gamma_spread * xg).max(0.0),
                    larmor_offset: self.larmor_spread * xl,
                    weight: wg * wl,
                });
            }
        }
        Ok(out)
    }
}

/// Nodes and weights for E[f(X)], X ~ N(0, 1) (probabilists' Gauss–Hermite),
/// via the Golub–Welsch eigenvalue problem.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    assert!(n > 0);
    // Jacobi matrix of the probabilists' Hermite polynomials: off-diagonal √k.
    let jac = DMatrix::<f64>::from_fn(n, n, |r, c| {
        if r + 1 == c || c + 1 == r {
            (r.max(c) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jac.symmetric_eigen();
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = out.iter().map(|p| p.1).sum();
    for p in &mut out {
        p.1 /= total;
        if p.0.abs() < 1e-14 {
            p.0 = 0.0;
        }
    }
    out
}

/// Weighted mean over ensemble members on a common grid. Expectation values
/// are averaged with their surviving population as extra weight, so the
/// product ⟨F̂z⟩·tr ρ (what the polarimeter sees) is the plain weighted mean.
pub fn ensemble_average(results: &[(f64, EvolutionResult)]) -> Result<EvolutionResult> {
    let (_, first) = results
        .first()
        .ok_or_else(|| Error::Analysis("empty ensemble".into()))?;
    for (_, r) in results {
        if r.times != first.times || r.frame != first.frame {
            return Err(Error::GridMismatch);
        }
    }
    let wsum: f64 = results.iter().map(|(w, _)| w).sum();
    let n = first.len();
    let mut out = first.clone();
    out.states = None;
    out.substeps = results.iter().filter_map(|(_, r)| r.substeps).max();
    out.min_eigenvalue = results
        .iter()
        .filter_map(|(_, r)| r.min_eigenvalue)
        .reduce(f64::min);
    for k in 0..n {
        let mut tr = 0.0;
        let (mut x, mut y, mut z, mut p) = (0.0, 0.0, 0.0, 0.0);
        for (w, r) in results {
            let wt = w / wsum * r.trace_series[k];
            tr += wt;
            x += wt * r.fx_series[k];
            y += wt * r.fy_series[k];
            z += wt * r.fz_series[k];
            p += w / wsum * r.purity_series[k];
        }
        out.trace_series[k] = tr;
        let norm = if tr > 0.0 { tr } else { 1.0 };
        out.fx_series[k] = x / norm;
        out.fy_series[k] = y / norm;
        out.fz_series[k] = z / norm;
        out.purity_series[k] = p;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{propagate_lindblad, LindbladOptions, TimeGrid};
    use crate::light_shift::{Frame, HamiltonianSpec};
    use crate::spin::{coherent_state, DensityMatrix};

    fn zero_h(d: usize) -> HamiltonianSpec {
        HamiltonianSpec {
            matrix: CMatrix::zeros(d, d),
            frame: Frame::Lab,
            description: "zero".into(),
        }
    }

    fn run(channels: &[DecoherenceChannel], rho: &DensityMatrix, t_end: f64) -> EvolutionResult {
        let ops = SpinOperators::new(4.0).unwrap();
        let grid = TimeGrid::new(0.0, t_end, 201).unwrap();
        propagate_lindblad(
            &zero_h(9),
            channels,
            &ops,
            rho,
            &grid,
            &LindbladOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn negative_rates_rejected() {
        let ops = SpinOperators::new(4.0).unwrap();
        assert!(matches!(
            depolarization_channel(-1.0, &ops),
            Err(Error::NegativeRate(_))
        ));
        assert!(matches!(loss_channel(-0.1, 9), Err(Error::NegativeRate(_))));
    }

    #[test]
    fn zero_rate_is_identity_dynamics() {
        let ops = SpinOperators::new(4.0).unwrap();
        let rho = coherent_state(&ops, 1.0, 0.0).to_density();
        let ch = depolarization_channel(0.0, &ops).unwrap();
        let r = run(&[ch], &rho, 3.0);
        let z0 = r.fz_series[0];
        assert!(r.fz_series.iter().all(|z| (z - z0).abs() < 1e-14));
        let r = run(&[loss_channel(0.0, 9).unwrap()], &rho, 3.0);
        assert!(r.trace_series.iter().all(|t| (t - 1.0).abs() < 1e-14));
    }

    #[test]
    fn depolarization_decays_spin_at_requested_rate() {
        let ops = SpinOperators::new(4.0).unwrap();
        let gamma = 0.8;
        for (polar, azimuth) in [(0.0, 0.0), (std::f64::consts::FRAC_PI_2, 0.0), (1.0, 2.0)] {
            let rho = coherent_state(&ops, polar, azimuth).to_density();
            let ch = depolarization_channel(gamma, &ops).unwrap();
            let r = run(&[ch], &rho, 4.0);
            for k in 0..r.len() {
                let decay = (-gamma * r.times[k]).exp();
                assert!((r.fx_series[k] - r.fx_series[0] * decay).abs() < 1e-9);
                assert!((r.fy_series[k] - r.fy_series[0] * decay).abs() < 1e-9);
                assert!((r.fz_series[k] - r.fz_series[0] * decay).abs() < 1e-9);
                assert!(
                    (r.trace_series[k] - 1.0).abs() < 1e-10,
                    "drift {:e} {:?}",
                    r.trace_series[k] - 1.0,
                    r.substeps
                );
            }
        }
    }

    #[test]
    fn mixed_state_is_fixed_point() {
        let ops = SpinOperators::new(4.0).unwrap();
        let rho = DensityMatrix::maximally_mixed(9);
        let ch = depolarization_channel(2.0, &ops).unwrap();
        let grid = TimeGrid::new(0.0, 5.0, 21).unwrap();
        let opts = LindbladOptions {
            retain_states: true,
            ..Default::default()
        };
        let r = propagate_lindblad(&zero_h(9), &[ch], &ops, &rho, &grid, &opts).unwrap();
        for s in r.states.unwrap() {
            let diff = (&s.rho - &rho.rho)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn loss_channel_trace_decay() {
        let ops = SpinOperators::new(4.0).unwrap();
        let rho = coherent_state(&ops, 0.3, 0.0).to_density();
        let gamma = 2.5;
        let grid = TimeGrid::new(0.0, 1.0 / gamma, 51).unwrap();
        let r = propagate_lindblad(
            &zero_h(9),
            &[loss_channel(gamma, 9).unwrap()],
            &ops,
            &rho,
            &grid,
            &LindbladOptions::default(),
        )
        .unwrap();
        assert!((r.trace_series.last().unwrap() - (-1.0f64).exp()).abs() < 1e-6);
        // Normalized expectation of the survivors is unchanged.
        assert!((r.fz_series.last().unwrap() - r.fz_series[0]).abs() < 1e-10);
    }

    #[test]
    fn gauss_hermite_moments() {
        for n in [1, 3, 7, 9] {
            let nodes = gauss_hermite(n);
            let m0: f64 = nodes.iter().map(|p| p.1).sum();
            let m2: f64 = nodes.iter().map(|p| p.1 * p.0 * p.0).sum();
            let m4: f64 = nodes.iter().map(|p| p.1 * p.0.powi(4)).sum();
            assert!((m0 - 1.0).abs() < 1e-12);
            if n >= 2 {
                assert!((m2 - 1.0).abs() < 1e-12, "n={n}");
            }
            if n >= 3 {
                assert!((m4 - 3.0).abs() < 1e-11, "n={n}");
            }
        }
    }

    #[test]
    fn ensemble_samples_weights_sum_to_one() {
        let spec = EnsembleSpec {
            gamma_spread: 0.1,
            larmor_spread: 5.0,
            n_samples: 7,
        };
        let s = spec.samples().unwrap();
        assert_eq!(s.len(), 49);
        let w: f64 = s.iter().map(|x| x.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
        assert_eq!(EnsembleSpec::default().samples().unwrap().len(), 1);
    }
}
