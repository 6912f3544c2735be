//! Envelope extraction, decay fits and collapse/revival timing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::EvolutionResult;
use crate::signal::SignalTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeMethod {
    /// Lock-in style demodulation at Ω_L.
    QuadratureDemod,
    /// Interpolated local maxima of |signal|.
    PeakDetect,
    /// √(⟨F̂x⟩² + ⟨F̂z⟩²) taken directly from a propagation result.
    Transverse,
}

impl EnvelopeMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvelopeMethod::QuadratureDemod => "quadrature_demod",
            EnvelopeMethod::PeakDetect => "peak_detect",
            EnvelopeMethod::Transverse => "transverse",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub times: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub method: EnvelopeMethod,
    /// Samples outside [settle_time, valid_end] are filter transients and are
    /// left out of fits.
    pub settle_time: f64,
    pub valid_end: f64,
}

impl Envelope {
    pub fn new(times: Vec<f64>, magnitude: Vec<f64>, method: EnvelopeMethod) -> Self {
        let settle_time = times.first().copied().unwrap_or(0.0);
        let valid_end = times.last().copied().unwrap_or(0.0);
        Self {
            times,
            magnitude,
            method,
            settle_time,
            valid_end,
        }
    }

    pub fn from_transverse(result: &EvolutionResult) -> Self {
        let mag = result
            .transverse_magnitude()
            .iter()
            .zip(&result.trace_series)
            .map(|(m, tr)| m * tr)
            .collect();
        Self::new(result.times.clone(), mag, EnvelopeMethod::Transverse)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Samples with t in [t0, t1].
    pub fn window(&self, t0: f64, t1: f64) -> Envelope {
        let (times, magnitude) = self
            .times
            .iter()
            .zip(&self.magnitude)
            .filter(|(t, _)| **t >= t0 && **t <= t1)
            .map(|(t, m)| (*t, *m))
            .unzip();
        Envelope {
            times,
            magnitude,
            method: self.method,
            settle_time: self.settle_time.max(t0),
            valid_end: self.valid_end.min(t1),
        }
    }

    pub fn scaled(&self, factor: f64) -> Envelope {
        Envelope {
            magnitude: self.magnitude.iter().map(|m| m * factor).collect(),
            ..self.clone()
        }
    }
}

/// First-order low-pass (bilinear transform) run forward then backward, so
/// the overall response has zero phase. Each pass starts from the steady
/// state of the mean over `warmup` leading samples.
fn zero_phase_lowpass(x: &[f64], cutoff: f64, dt: f64, warmup: usize) -> Vec<f64> {
    let k = (cutoff * dt / 2.0).tan();
    let b = k / (1.0 + k);
    let a = (k - 1.0) / (1.0 + k);
    let pass = |input: &mut dyn Iterator<Item = f64>, seed: f64| -> Vec<f64> {
        let (mut x_prev, mut y_prev) = (seed, seed);
        input
            .map(|xi| {
                let y = b * (xi + x_prev) - a * y_prev;
                x_prev = xi;
                y_prev = y;
                y
            })
            .collect()
    };
    let w = warmup.clamp(1, x.len().max(1));
    let head = x.iter().take(w).sum::<f64>() / w as f64;
    let forward = pass(&mut x.iter().copied(), head);
    let tail = forward.iter().rev().take(w).sum::<f64>() / w as f64;
    let mut backward = pass(&mut forward.iter().rev().copied(), tail);
    backward.reverse();
    backward
}

/// Envelope of a precession signal at Larmor frequency `larmor` (rad/s).
///
/// Demodulation multiplies by cos/sin(Ω_L t), low-passes both quadratures with
/// cutoff Ω_L/5 and returns 2√(I² + Q²). The first and last 3/cutoff seconds
/// are marked as filter transients.
pub fn extract_envelope(
    trace: &SignalTrace,
    larmor: f64,
    method: EnvelopeMethod,
) -> Result<Envelope> {
    let n = trace.times.len();
    if n < 2 {
        return Ok(Envelope::new(
            trace.times.clone(),
            trace.mean_signal.iter().map(|s| s.abs()).collect(),
            method,
        ));
    }
    let dt = (trace.times[n - 1] - trace.times[0]) / (n - 1) as f64;
    match method {
        EnvelopeMethod::QuadratureDemod => {
            if !(larmor > 0.0) {
                return Err(Error::UnknownLarmor);
            }
            let per_period = std::f64::consts::TAU / (larmor * dt);
            if per_period < 8.0 {
                return Err(Error::Undersampled(per_period));
            }
            let (i, q): (Vec<f64>, Vec<f64>) = trace
                .times
                .iter()
                .zip(&trace.mean_signal)
                .map(|(t, s)| {
                    let (sn, cs) = (larmor * t).sin_cos();
                    (s * cs, s * sn)
                })
                .unzip();
            let cutoff = larmor / 5.0;
            let warmup = per_period.round() as usize;
            let i = zero_phase_lowpass(&i, cutoff, dt, warmup);
            let q = zero_phase_lowpass(&q, cutoff, dt, warmup);
            let magnitude = i.iter().zip(&q).map(|(a, b)| 2.0 * a.hypot(*b)).collect();
            Ok(Envelope {
                times: trace.times.clone(),
                magnitude,
                method,
                settle_time: trace.times[0] + 3.0 / cutoff,
                valid_end: trace.times[n - 1] - 3.0 / cutoff,
            })
        }
        EnvelopeMethod::PeakDetect => {
            let a: Vec<f64> = trace.mean_signal.iter().map(|s| s.abs()).collect();
            let mut times = Vec::new();
            let mut magnitude = Vec::new();
            for k in 1..n - 1 {
                if a[k] > a[k - 1] && a[k] >= a[k + 1] {
                    let (t, m) = parabolic_peak(trace.times[k], dt, a[k - 1], a[k], a[k + 1]);
                    times.push(t);
                    magnitude.push(m);
                }
            }
            if times.is_empty() {
                return Ok(Envelope::new(trace.times.clone(), a, method));
            }
            Ok(Envelope::new(times, magnitude, method))
        }
        EnvelopeMethod::Transverse => Err(Error::Analysis(
            "transverse envelopes come from propagation results, not signals".into(),
        )),
    }
}

/// Vertex of the parabola through three equally spaced samples.
fn parabolic_peak(t: f64, dt: f64, left: f64, mid: f64, right: f64) -> (f64, f64) {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < f64::MIN_POSITIVE {
        return (t, mid);
    }
    let offset = (0.5 * (left - right) / denom).clamp(-1.0, 1.0);
    (t + offset * dt, mid - 0.25 * (left - right) * offset)
}

/// Model-free 1/e time: first time the envelope falls below 1/e of its
/// running maximum, linearly interpolated. `None` if it never does.
pub fn one_over_e_time(env: &Envelope) -> Option<f64> {
    let mut peak = f64::NEG_INFINITY;
    for k in 0..env.len() {
        let m = env.magnitude[k];
        let threshold = peak / std::f64::consts::E;
        if k > 0 && peak > 0.0 && m < threshold {
            let (t0, m0) = (env.times[k - 1], env.magnitude[k - 1]);
            let frac = (m0 - threshold) / (m0 - m);
            return Some(t0 + frac * (env.times[k] - t0));
        }
        peak = peak.max(m);
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    /// A·exp(−t²/T²)
    Gaussian,
    /// A·exp(−t/τ)
    Exponential,
}

impl DecayModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecayModel::Gaussian => "gaussian",
            DecayModel::Exponential => "exponential",
        }
    }

    /// Shape f(t) and ∂f/∂(ln T) at unit amplitude.
    fn eval(&self, t: f64, timescale: f64) -> (f64, f64) {
        match self {
            DecayModel::Gaussian => {
                let u = t * t / (timescale * timescale);
                let f = (-u).exp();
                (f, 2.0 * u * f)
            }
            DecayModel::Exponential => {
                let u = t / timescale;
                let f = (-u).exp();
                (f, u * f)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub model: DecayModel,
    pub amplitude: f64,
    /// T or τ, s.
    pub timescale: f64,
    pub one_over_e_time: f64,
    pub residual_rms: f64,
    pub success: bool,
    pub iterations: usize,
    pub message: String,
}

impl DecayFit {
    /// Converged, and the residual is small compared to the amplitude.
    pub fn reliable(&self) -> bool {
        self.success && self.residual_rms <= 0.1 * self.amplitude.abs()
    }

    fn failed(model: DecayModel, message: impl Into<String>) -> Self {
        Self {
            model,
            amplitude: f64::NAN,
            timescale: f64::NAN,
            one_over_e_time: f64::NAN,
            residual_rms: f64::NAN,
            success: false,
            iterations: 0,
            message: message.into(),
        }
    }
}

const MAX_ITERATIONS: usize = 200;

/// Least-squares fit of A·exp(−t²/T²) or A·exp(−t/τ), with t measured from
/// zero. Starts from a log-linear regression and refines with damped
/// Gauss–Newton (Levenberg–Marquardt) steps in (A, ln T).
pub fn fit_decay(env: &Envelope, model: DecayModel) -> DecayFit {
    let pts: Vec<(f64, f64)> = env
        .times
        .iter()
        .zip(&env.magnitude)
        .filter(|(t, m)| t.is_finite() && m.is_finite())
        .map(|(t, m)| (*t, *m))
        .collect();
    if pts.len() < 10 {
        return DecayFit::failed(model, format!("need at least 10 points, got {}", pts.len()));
    }
    let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !(ymax > 0.0) {
        return DecayFit::failed(model, "envelope has no positive samples");
    }
    let span = pts.last().unwrap().0 - pts[0].0;

    // ln y = a − b·u with u = t (exponential) or t² (Gaussian).
    let reg: Vec<(f64, f64)> = pts
        .iter()
        .filter(|p| p.1 > 1e-3 * ymax)
        .map(|&(t, y)| {
            let u = match model {
                DecayModel::Gaussian => t * t,
                DecayModel::Exponential => t,
            };
            (u, y.ln())
        })
        .collect();
    let (mut amp, mut log_ts) = (ymax, span.max(f64::MIN_POSITIVE).ln());
    if reg.len() >= 2 {
        let n = reg.len() as f64;
        let mu = reg.iter().map(|p| p.0).sum::<f64>() / n;
        let ml = reg.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = reg.iter().map(|p| (p.0 - mu).powi(2)).sum();
        let sxy: f64 = reg.iter().map(|p| (p.0 - mu) * (p.1 - ml)).sum();
        if sxx > 0.0 {
            let slope = sxy / sxx;
            if slope < 0.0 {
                amp = (ml - slope * mu).exp();
                log_ts = match model {
                    DecayModel::Gaussian => -0.5 * (-slope).ln(),
                    DecayModel::Exponential => -(-slope).ln(),
                };
            }
        }
    }

    let cost = |a: f64, lt: f64| -> f64 {
        let ts = lt.exp();
        pts.iter()
            .map(|&(t, y)| (a * model.eval(t, ts).0 - y).powi(2))
            .sum()
    };
    let mut c = cost(amp, log_ts);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let ts = log_ts.exp();
        // Normal equations for (A, ln T).
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for &(t, y) in &pts {
            let (f, df) = model.eval(t, ts);
            let j = [f, amp * df];
            let r = amp * f - y;
            for a in 0..2 {
                jtr[a] += j[a] * r;
                for b in 0..2 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e16 {
            let m00 = jtj[0][0] * (1.0 + lambda);
            let m11 = jtj[1][1] * (1.0 + lambda);
            let det = m00 * m11 - jtj[0][1] * jtj[1][0];
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let da = -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
            let dl = -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
            let (na, nl) = (amp + da, log_ts + dl.clamp(-2.0, 2.0));
            let nc = cost(na, nl);
            if nc.is_finite() && nc <= c {
                let rel = (c - nc) / c.max(f64::MIN_POSITIVE);
                let step = da.abs() / amp.abs().max(1e-300) + dl.abs();
                amp = na;
                log_ts = nl;
                c = nc;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-14 || step < 1e-13 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: already at the minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let timescale = log_ts.exp();
    let ok = converged && timescale.is_finite() && timescale > 0.0 && amp.is_finite();
    DecayFit {
        model,
        amplitude: amp,
        timescale,
        one_over_e_time: timescale,
        residual_rms: (c / pts.len() as f64).sqrt(),
        success: ok,
        iterations,
        message: if ok {
            "converged".into()
        } else {
            format!("no convergence after {iterations} iterations")
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSelection {
    pub best: DecayModel,
    /// Residual RMS of the losing model over that of the winner (≥ 1).
    pub residual_ratio: f64,
    pub gaussian: DecayFit,
    pub exponential: DecayFit,
}

impl ModelSelection {
    pub fn reliable(&self) -> bool {
        match self.best {
            DecayModel::Gaussian => self.gaussian.reliable(),
            DecayModel::Exponential => self.exponential.reliable(),
        }
    }
}

pub fn gaussian_vs_exponential(env: &Envelope) -> Result<ModelSelection> {
    let gaussian = fit_decay(env, DecayModel::Gaussian);
    let exponential = fit_decay(env, DecayModel::Exponential);
    let (best, ratio) = match (gaussian.success, exponential.success) {
        (false, false) => {
            return Err(Error::Analysis(format!(
                "both fits failed: {}; {}",
                gaussian.message, exponential.message
            )))
        }
        (true, false) => (DecayModel::Gaussian, f64::INFINITY),
        (false, true) => (DecayModel::Exponential, f64::INFINITY),
        (true, true) => {
            let (g, e) = (gaussian.residual_rms, exponential.residual_rms);
            if g <= e {
                (DecayModel::Gaussian, e / g.max(f64::MIN_POSITIVE))
            } else {
                (DecayModel::Exponential, g / e.max(f64::MIN_POSITIVE))
            }
        }
    };
    Ok(ModelSelection {
        best,
        residual_ratio: ratio,
        gaussian,
        exponential,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RevivalReport {
    pub t_revival: f64,
    /// Peak envelope at the revival over the initial envelope amplitude.
    pub revival_amplitude_ratio: f64,
    /// Time at which the revival has fallen to 1/e of its peak.
    pub revival_collapse_time: Option<f64>,
    /// The maximum sits on the edge of the search window, or is not
    /// [`REVIVAL_PROMINENCE`] above the lowest value before it.
    pub at_boundary: bool,
}

/// Relative rise above the preceding minimum that a revival peak needs.
pub const REVIVAL_PROMINENCE: f64 = 0.05;

/// Largest envelope value inside `window` (t0, t1). The initial amplitude is
/// the largest value before t0.
pub fn detect_revival(env: &Envelope, window: (f64, f64)) -> Result<RevivalReport> {
    let idx: Vec<usize> = (0..env.len())
        .filter(|&k| env.times[k] >= window.0 && env.times[k] <= window.1)
        .collect();
    let (first, last) = match (idx.first(), idx.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::Analysis("revival search window is empty".into())),
    };
    let initial = env.magnitude[..first]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(initial > 0.0) {
        return Err(Error::Analysis(
            "no initial envelope before the revival window".into(),
        ));
    }
    let kmax = idx
        .iter()
        .copied()
        .max_by(|&a, &b| env.magnitude[a].total_cmp(&env.magnitude[b]))
        .expect("window is non-empty");
    // A maximum that barely rises above the lowest earlier sample is filter
    // ripple on a decaying envelope, not a revival.
    let trough = env.magnitude[first..=kmax]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let prominent = env.magnitude[kmax] > trough * (1.0 + REVIVAL_PROMINENCE);
    let at_boundary = kmax == first || kmax == last || !prominent;
    let (t_peak, m_peak) = if kmax != first && kmax != last {
        let dt = 0.5 * (env.times[kmax + 1] - env.times[kmax - 1]);
        parabolic_peak(
            env.times[kmax],
            dt,
            env.magnitude[kmax - 1],
            env.magnitude[kmax],
            env.magnitude[kmax + 1],
        )
    } else {
        (env.times[kmax], env.magnitude[kmax])
    };
    let threshold = m_peak / std::f64::consts::E;
    let revival_collapse_time = (kmax + 1..env.len())
        .find(|&k| env.magnitude[k] < threshold)
        .map(|k| {
            let (t0, m0) = (env.times[k - 1], env.magnitude[k - 1]);
            let frac = ((m0 - threshold) / (m0 - env.magnitude[k])).clamp(0.0, 1.0);
            t0 + frac * (env.times[k] - t0)
        });
    Ok(RevivalReport {
        t_revival: t_peak,
        revival_amplitude_ratio: m_peak / initial,
        revival_collapse_time,
        at_boundary,
    })
}

/// Everything the scans and the fit command report about one envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeReport {
    pub collapse_time: Option<f64>,
    pub selection: Option<ModelSelection>,
    pub revival: Option<RevivalReport>,
    pub warnings: Vec<String>,
}

/// 1/e time, both model fits over [settle, 2·t₁/ₑ] and a revival search over
/// [2·t₁/ₑ, end].
pub fn summarize(env: &Envelope) -> EnvelopeReport {
    let mut warnings = Vec::new();
    let collapse_time = one_over_e_time(env);
    let end = env.valid_end;
    let fit_end = collapse_time.map_or(end, |t| (2.0 * t).min(end));
    let selection = match gaussian_vs_exponential(&env.window(env.settle_time, fit_end)) {
        Ok(s) => Some(s),
        Err(e) => {
            warnings.push(format!("fit: {e}"));
            None
        }
    };
    let revival = match collapse_time {
        None => {
            warnings.push("no_decay".into());
            None
        }
        Some(t) => match detect_revival(env, (2.0 * t, end)) {
            Ok(r) => {
                if r.at_boundary {
                    warnings.push("revival_at_window_boundary".into());
                }
                if r.revival_collapse_time.is_none() {
                    warnings.push("revival_never_collapses".into());
                }
                Some(r)
            }
            Err(e) => {
                warnings.push(format!("revival: {e}"));
                None
            }
        },
    };
    EnvelopeReport {
        collapse_time,
        selection,
        revival,
        warnings,
    }
}
