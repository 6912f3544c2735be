//! One simulation run: config → operators, Hamiltonian and channels →
//! propagation → polarimeter signal → envelope → report.

use std::f64::consts::{PI, TAU};

use crate::analysis::{extract_envelope, summarize, Envelope, EnvelopeMethod, EnvelopeReport};
use crate::decoherence::{pumping_channels, DecoherenceChannel, DecoherenceModel, EnsembleSample};
use crate::evolution::{
    propagate_lindblad, propagate_unitary, EvolutionResult, LindbladOptions, TimeGrid,
    UnitaryOptions,
};
use crate::exec::{map_slice, ExecMode};
use crate::light_shift::{
    build_full_hamiltonian, build_rwa_hamiltonian_in_frame, nonlinear_coefficient,
    probe_scattering_rate, rwa_geometric_factor, scattering_rate, FieldConfig, ProbeConfig,
    ProbeStrength,
};
use crate::signal::{faraday_signal, measure, PolarimeterConfig, SignalTrace};
use crate::spin::{coherent_state, DensityMatrix, SpinOperators};

use super::config::{FrameChoice, RunConfig, DEFAULT_TAU_S};
use super::CliError;

/// Default grid length when neither Larmor sampling nor an explicit count applies.
pub const MIN_GRID_POINTS: usize = 4000;
/// Refuse grids that would not fit comfortably in memory.
pub const MAX_GRID_POINTS: usize = 4_000_000;

/// Everything a run needs, resolved from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: RunConfig,
    pub digest: String,
    pub ops: SpinOperators,
    pub probe: ProbeConfig,
    pub field: FieldConfig,
    pub grid: TimeGrid,
    pub rho0: DensityMatrix,
    pub polarimeter: PolarimeterConfig,
}

impl Scenario {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let preset = cfg.preset()?;
        let ops =
            SpinOperators::new(cfg.model.spin).map_err(|e| CliError::config("model.spin", e))?;
        let p = &cfg.probe;
        let strength = match (p.tau_s, p.detuning, p.intensity_ratio) {
            (_, Some(detuning), Some(intensity_ratio)) => ProbeStrength::Saturation {
                detuning,
                intensity_ratio,
            },
            (tau, _, _) => ProbeStrength::ScatteringRate(1.0 / tau.unwrap_or(DEFAULT_TAU_S)),
        };
        let probe = ProbeConfig {
            strength,
            linewidth: p.linewidth.unwrap_or(preset.gamma_rad_per_s),
            polarization_angle: p.polarization_angle_deg.to_radians(),
            nonlinearity: p.nonlinearity,
            extra_scattering_factor: p.extra_scattering_factor,
        };
        probe.validate().map_err(|e| CliError::config("probe", e))?;
        let gamma = probe_scattering_rate(&probe).map_err(|e| CliError::config("probe", e))?;
        let chi = nonlinear_coefficient(&probe).map_err(|e| CliError::config("probe", e))?;

        let f = &cfg.field;
        let field = match (f.larmor_frequency, f.magnetic_field) {
            (Some(w), _) => FieldConfig::new(w),
            (None, Some(b)) => FieldConfig::from_magnetic_field(b, preset.gf),
            // Without a light shift the ratio is taken relative to 1.2·γ_s.
            (None, None) => {
                let scale = if chi != 0.0 { chi.abs() } else { 1.2 * gamma };
                FieldConfig::new(f.rwa_ratio * scale)
            }
        }
        .map_err(|e| CliError::config("field", e))?;

        let mut scenario = Self {
            config: cfg.clone(),
            digest: cfg.digest(),
            rho0: coherent_state(
                &ops,
                cfg.model.initial_polar_deg.to_radians(),
                cfg.model.initial_azimuth_deg.to_radians(),
            )
            .to_density(),
            ops,
            probe,
            field,
            grid: TimeGrid::new(0.0, 1.0, 2)?,
            polarimeter: PolarimeterConfig {
                rotation_gain: cfg.polarimeter.rotation_gain,
                photon_flux: cfg.polarimeter.photon_flux,
                bin_time: cfg.polarimeter.bin_time,
                n_trials: cfg.polarimeter.n_trials,
                rng_seed: cfg.polarimeter.seed,
            },
        };
        scenario.grid = scenario.default_grid()?;
        Ok(scenario)
    }

    /// τ_s = 1/γ_s of the probe alone.
    pub fn tau_s(&self) -> f64 {
        1.0 / probe_scattering_rate(&self.probe).expect("probe validated")
    }

    pub fn chi(&self) -> f64 {
        nonlinear_coefficient(&self.probe).expect("probe validated")
    }

    pub fn larmor_frequency(&self) -> f64 {
        self.field.larmor_frequency
    }

    pub fn envelope_method(&self) -> EnvelopeMethod {
        self.config.analysis.envelope
    }

    /// Ω_L/|χ|; infinite without a light shift.
    pub fn rwa_ratio(&self) -> f64 {
        let chi = self.chi();
        if chi == 0.0 {
            f64::INFINITY
        } else {
            self.field.larmor_frequency / chi.abs()
        }
    }

    /// Shortest of the one-axis-twisting collapse time √(2/(2F−1))/|χ·g(θ)|,
    /// the pumping decay time and the inhomogeneous dephasing time.
    pub fn characteristic_time(&self) -> f64 {
        let mut t = f64::INFINITY;
        let twist = (self.chi() * rwa_geometric_factor(self.probe.polarization_angle)).abs();
        let order = 2.0 * self.ops.f - 1.0;
        if twist > 0.0 && order > 0.0 {
            t = t.min((2.0 / order).sqrt() / twist);
        }
        let d = &self.config.decoherence;
        let total = scattering_rate(&self.probe).expect("probe validated");
        let mut rate = 0.0;
        if matches!(
            d.model,
            DecoherenceModel::Depolarization | DecoherenceModel::DepolarizationLoss
        ) {
            rate += d.calibration * total;
        }
        if matches!(
            d.model,
            DecoherenceModel::Loss | DecoherenceModel::DepolarizationLoss
        ) {
            rate += d.loss_calibration * total;
        }
        if rate > 0.0 {
            t = t.min(1.0 / rate);
        }
        let spread = self.config.ensemble.larmor_spread;
        if spread > 0.0 {
            t = t.min(2f64.sqrt() / spread);
        }
        if t.is_finite() {
            t
        } else {
            10.0 * self.tau_s()
        }
    }

    fn default_grid(&self) -> Result<TimeGrid, CliError> {
        let g = &self.config.grid;
        let duration = match (g.duration, g.duration_tau) {
            (Some(t), _) => t,
            (None, Some(n)) => n * self.tau_s(),
            (None, None) => g.collapse_times * self.characteristic_time(),
        };
        let points = match g.points {
            Some(n) => n,
            None if self.envelope_method() == EnvelopeMethod::Transverse => MIN_GRID_POINTS,
            None => {
                let periods = self.field.larmor_frequency * duration / TAU;
                let n = (g.samples_per_period * periods).ceil() + 1.0;
                if !(n <= MAX_GRID_POINTS as f64) {
                    return Err(CliError::config(
                        "grid.points",
                        format!(
                            "{n:e} points needed to sample {periods:e} Larmor periods; \
                             shorten the run or use the transverse envelope"
                        ),
                    ));
                }
                (n as usize).max(MIN_GRID_POINTS)
            }
        };
        if points > MAX_GRID_POINTS {
            return Err(CliError::config(
                "grid.points",
                format!("at most {MAX_GRID_POINTS}"),
            ));
        }
        TimeGrid::new(0.0, duration, points).map_err(|e| CliError::config("grid", e))
    }

    /// Decoherence channels for a (possibly rescaled) probe.
    pub fn channels(&self, probe: &ProbeConfig) -> crate::Result<Vec<DecoherenceChannel>> {
        let d = &self.config.decoherence;
        pumping_channels(d.model, probe, d.calibration, d.loss_calibration, &self.ops)
    }

    fn sample_probe(&self, sample: &EnsembleSample) -> crate::Result<ProbeConfig> {
        if sample.gamma_factor == 1.0 {
            return Ok(self.probe);
        }
        let gamma = probe_scattering_rate(&self.probe)?;
        Ok(ProbeConfig {
            strength: ProbeStrength::ScatteringRate(gamma * sample.gamma_factor),
            ..self.probe
        })
    }

    fn evolve_sample(&self, sample: &EnsembleSample) -> crate::Result<EvolutionResult> {
        let probe = self.sample_probe(sample)?;
        let field = FieldConfig::new((self.field.larmor_frequency + sample.larmor_offset).abs())?;
        let h = match self.config.model.frame {
            FrameChoice::Lab => build_full_hamiltonian(&self.ops, &field, &probe)?,
            FrameChoice::Rotating => build_rwa_hamiltonian_in_frame(
                &self.ops,
                &field,
                &probe,
                self.field.larmor_frequency,
            )?,
        };
        let channels = self.channels(&probe)?;
        if channels.is_empty() {
            propagate_unitary(
                &h,
                &self.ops,
                &self.rho0,
                &self.grid,
                UnitaryOptions::default(),
            )
        } else {
            propagate_lindblad(
                &h,
                &channels,
                &self.ops,
                &self.rho0,
                &self.grid,
                &LindbladOptions::default(),
            )
        }
    }

    /// Ensemble-averaged evolution in the configured frame.
    pub fn evolve(&self, mode: ExecMode) -> crate::Result<EvolutionResult> {
        let samples = self.config.ensemble.samples()?;
        let mut result = if samples.len() == 1 {
            self.evolve_sample(&samples[0])?
        } else {
            let runs: Vec<(f64, EvolutionResult)> = map_slice(&samples, mode, |s| {
                self.evolve_sample(s).map(|r| (s.weight, r))
            })
            .into_iter()
            .collect::<crate::Result<_>>()?;
            crate::decoherence::ensemble_average(&runs)?
        };
        result.config_digest = self.digest.clone();
        Ok(result)
    }

    /// Envelope of `signal` by the configured method. The transverse method
    /// reads the spin directly from `result` and scales it by the gain.
    pub fn envelope(
        &self,
        signal: &SignalTrace,
        result: &EvolutionResult,
    ) -> crate::Result<Envelope> {
        match self.envelope_method() {
            EnvelopeMethod::Transverse => {
                Ok(Envelope::from_transverse(result).scaled(self.polarimeter.rotation_gain.abs()))
            }
            m => extract_envelope(signal, self.field.larmor_frequency, m),
        }
    }
}

/// Output of [`simulate`].
#[derive(Clone, Debug)]
pub struct Simulation {
    /// Lab-frame evolution.
    pub result: EvolutionResult,
    pub noiseless: SignalTrace,
    pub noisy: SignalTrace,
    /// `None` when the trace is too short or coarse to demodulate.
    pub envelope: Option<Envelope>,
    pub report: EnvelopeReport,
}

/// Full pipeline. The envelope and report are taken from the trial-averaged
/// noisy signal, as a measurement would.
pub fn simulate(scenario: &Scenario, mode: ExecMode) -> crate::Result<Simulation> {
    let result = scenario.evolve(mode)?.to_lab_frame();
    let noiseless = faraday_signal(&result, &scenario.polarimeter);
    let noisy = measure(&noiseless, &scenario.polarimeter, mode)?;
    let (envelope, report) = match scenario.envelope(&noisy, &result) {
        Ok(env) => {
            let report = summarize(&env);
            (Some(env), report)
        }
        Err(e) => (
            None,
            EnvelopeReport {
                collapse_time: None,
                selection: None,
                revival: None,
                warnings: vec![format!("envelope: {e}")],
            },
        ),
    };
    Ok(Simulation {
        result,
        noiseless,
        noisy,
        envelope,
        report,
    })
}

/// Noise-free envelope of a scenario, as used by the scans.
pub fn noiseless_envelope(scenario: &Scenario, mode: ExecMode) -> crate::Result<Envelope> {
    let result = scenario.evolve(mode)?;
    let lab = result.to_lab_frame();
    let signal = faraday_signal(&lab, &scenario.polarimeter);
    scenario.envelope(&signal, &lab)
}

/// Period of the one-axis-twisting revival, π/|χ·g(θ)|.
pub fn revival_period(scenario: &Scenario) -> f64 {
    PI / (scenario.chi() * rwa_geometric_factor(scenario.probe.polarization_angle)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(text: &str) -> Scenario {
        Scenario::from_config(&RunConfig::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn defaults_resolve() {
        let s = scenario("");
        assert!((s.tau_s() - 1e-3).abs() < 1e-15);
        assert!((s.chi() + 1.2e3).abs() < 1e-9);
        assert!((s.rwa_ratio() - 200.0).abs() < 1e-9);
        // θ=0: √(2/7)/(1.2 γ_s) ≈ 0.445 τ_s, 8 of them.
        let expect = 8.0 * (2.0f64 / 7.0).sqrt() / 1.2e3;
        assert!((s.grid.t_end - expect).abs() < 1e-12);
        let per_period = TAU / (s.larmor_frequency() * s.grid.spacing());
        assert!(per_period >= 24.0 - 1e-9);
    }

    #[test]
    fn probe_from_saturation() {
        let s = scenario("[probe]\ndetuning = -6.28e9\nintensity_ratio = 10\n");
        let gamma = 1.0 / s.tau_s();
        let g = 2.0 * PI * 5.2e6;
        let expected = (g / (2.0 * 6.28e9)).powi(2) * 10.0 * g / 2.0;
        assert!((gamma / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn magnetic_field_sets_larmor() {
        let s = scenario("[field]\nmagnetic_field = 1e-6\n");
        assert!((s.larmor_frequency() - TAU * 1.39962449361e10 * 0.25 * 1e-6).abs() < 1e-3);
    }

    #[test]
    fn oversized_grid_is_a_config_error() {
        let cfg = RunConfig::parse("[grid]\nduration = 10.0\n").unwrap();
        let err = Scenario::from_config(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
