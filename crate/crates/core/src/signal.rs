//! Synthetic Faraday polarimeter signal: rotation angle proportional to
//! ⟨F̂z⟩, balanced-detector shot noise and trial averaging.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::EvolutionResult;
use crate::exec::{map_indexed, ExecMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarimeterConfig {
    /// Rotation angle (rad) per unit ⟨F̂z⟩.
    pub rotation_gain: f64,
    /// Photons per second reaching the detector.
    pub photon_flux: f64,
    /// Integration time of one sample, s.
    pub bin_time: f64,
    pub n_trials: usize,
    pub rng_seed: u64,
}

impl Default for PolarimeterConfig {
    fn default() -> Self {
        Self {
            rotation_gain: 1.0,
            photon_flux: 1e12,
            bin_time: 1e-6,
            n_trials: 128,
            rng_seed: 0,
        }
    }
}

impl PolarimeterConfig {
    /// 1/(2√N) for N detected photons per bin.
    pub fn shot_noise_sigma(&self) -> Result<f64> {
        let photons = self.photon_flux * self.bin_time;
        if !(photons > 0.0) {
            return Err(Error::InfiniteNoise);
        }
        Ok(0.5 / photons.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalTrace {
    pub times: Vec<f64>,
    /// Rotation angle, rad.
    pub mean_signal: Vec<f64>,
    /// Standard deviation of `mean_signal` per bin, rad.
    pub sigma: Vec<f64>,
    pub n_trials: usize,
    pub seed: Option<u64>,
}

impl SignalTrace {
    pub fn from_samples(times: Vec<f64>, signal: Vec<f64>) -> Self {
        let n = times.len();
        Self {
            times,
            mean_signal: signal,
            sigma: vec![0.0; n],
            n_trials: 1,
            seed: None,
        }
    }
}

/// signal(t) = gain·⟨F̂z⟩(t)·tr ρ(t)
pub fn faraday_signal(result: &EvolutionResult, cfg: &PolarimeterConfig) -> SignalTrace {
    let signal = result
        .fz_series
        .iter()
        .zip(&result.trace_series)
        .map(|(z, tr)| cfg.rotation_gain * z * tr)
        .collect();
    SignalTrace::from_samples(result.times.clone(), signal)
}

/// Counter-based standard normal deviates: sample `k` of stream `seed` is
/// always the same number regardless of how many others are drawn.
struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    fn new(seed: u64, start: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Two u64 (four 32-bit words) per sample.
        rng.set_word_pos(u128::from(start) * 4);
        Self { rng }
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Box–Muller, one deviate per pair of uniforms.
    fn next(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Adds one realization of shot noise seeded by `cfg.rng_seed`.
pub fn add_shot_noise(trace: &SignalTrace, cfg: &PolarimeterConfig) -> Result<SignalTrace> {
    let sigma = cfg.shot_noise_sigma()?;
    let mut stream = NormalStream::new(cfg.rng_seed, 0);
    let mean_signal = trace
        .mean_signal
        .iter()
        .map(|s| s + sigma * stream.next())
        .collect();
    Ok(SignalTrace {
        times: trace.times.clone(),
        mean_signal,
        sigma: trace.sigma.iter().map(|s| s.hypot(sigma)).collect(),
        n_trials: 1,
        seed: Some(cfg.rng_seed),
    })
}

/// Mean of `n_trials` traces produced by `generate(base_seed + k)`. Trials may
/// run concurrently; the reduction always sums in trial order.
pub fn average_trials<F>(
    generate: F,
    n_trials: usize,
    base_seed: u64,
    mode: ExecMode,
) -> Result<SignalTrace>
where
    F: Fn(u64) -> Result<SignalTrace> + Sync + Send,
{
    if n_trials == 0 {
        return Err(Error::Analysis("trial count must be at least 1".into()));
    }
    let trials = map_indexed(n_trials, mode, |k| {
        generate(base_seed.wrapping_add(k as u64))
    });
    let trials: Vec<SignalTrace> = trials.into_iter().collect::<Result<_>>()?;
    let first = &trials[0];
    let n = first.times.len();
    if trials.iter().any(|t| t.times.len() != n) {
        return Err(Error::GridMismatch);
    }
    let inv = 1.0 / n_trials as f64;
    let mut mean = vec![0.0; n];
    let mut var = vec![0.0; n];
    for t in &trials {
        for k in 0..n {
            mean[k] += t.mean_signal[k];
            var[k] += t.sigma[k] * t.sigma[k];
        }
    }
    Ok(SignalTrace {
        times: first.times.clone(),
        mean_signal: mean.into_iter().map(|m| m * inv).collect(),
        sigma: var.into_iter().map(|v| v.sqrt() * inv).collect(),
        n_trials,
        seed: Some(base_seed),
    })
}

/// Noisy average of `cfg.n_trials` shots of `noiseless`.
pub fn measure(
    noiseless: &SignalTrace,
    cfg: &PolarimeterConfig,
    mode: ExecMode,
) -> Result<SignalTrace> {
    average_trials(
        |seed| {
            let shot = PolarimeterConfig {
                rng_seed: seed,
                ..*cfg
            };
            add_shot_noise(noiseless, &shot)
        },
        cfg.n_trials,
        cfg.rng_seed,
        mode,
    )
}
