//! Density-matrix propagation.
//!
//! Coherent runs use the exact eigendecomposition of the (time-independent)
//! Hamiltonian. Runs with decoherence integrate the Lindblad equation with
//! classical fourth-order Runge–Kutta: for a linear autonomous system one RK4
//! step of size h is the degree-4 Taylor polynomial of exp(hL), so the
//! propagator across one grid interval is that polynomial raised to the
//! 2^k-th power by repeated squaring. k is chosen by step halving until the
//! propagator stops changing.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::decoherence::DecoherenceChannel;
use crate::error::{Error, Result};
use crate::light_shift::{
    build_full_hamiltonian, build_rwa_hamiltonian, FieldConfig, Frame, HamiltonianSpec, ProbeConfig,
};
use crate::spin::{
    hermitian_eigenvalues, hermiticity_error, trace_of_product, CMatrix, DensityMatrix,
    HermitianEigen, SpinOperators,
};

/// Uniform time grid, seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_points: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_points: usize) -> Result<Self> {
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "t_end ({t_end}) must exceed t_start ({t_start})"
            )));
        }
        if n_points < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {n_points}"
            )));
        }
        Ok(Self {
            t_start,
            t_end,
            n_points,
        })
    }

    pub fn spacing(&self) -> f64 {
        (self.t_end - self.t_start) / (self.n_points - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.n_points {
            self.t_end
        } else {
            self.t_start + k as f64 * self.spacing()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.time(k)).collect()
    }
}

/// Expectation values (normalized to the surviving population) on a grid.
#[derive(Clone, Debug)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    pub states: Option<Vec<DensityMatrix>>,
    pub fx_series: Vec<f64>,
    pub fy_series: Vec<f64>,
    pub fz_series: Vec<f64>,
    pub trace_series: Vec<f64>,
    /// tr(ρ²)/tr(ρ)²
    pub purity_series: Vec<f64>,
    /// Smallest eigenvalue of ρ seen during the run (only tracked when requested
    /// for unitary runs; always tracked for Lindblad runs).
    pub min_eigenvalue: Option<f64>,
    /// RK4 substeps per grid interval; `None` for exact propagation.
    pub substeps: Option<u64>,
    pub frame: Frame,
    pub spin: f64,
    pub config_digest: String,
}

impl EvolutionResult {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// √(⟨F̂x⟩² + ⟨F̂z⟩²), the spin component transverse to the field. It is the
    /// same in the lab and the rotating frame.
    pub fn transverse_magnitude(&self) -> Vec<f64> {
        self.fx_series
            .iter()
            .zip(&self.fz_series)
            .map(|(x, z)| x.hypot(*z))
            .collect()
    }

    /// Maps a rotating-frame result to the lab frame with exp(−iΩ_L t F̂y).
    pub fn to_lab_frame(&self) -> EvolutionResult {
        let omega = match self.frame {
            Frame::Lab => return self.clone(),
            Frame::Rotating { larmor_frequency } => larmor_frequency,
        };
        let mut out = self.clone();
        for (k, &t) in self.times.iter().enumerate() {
            let (s, c) = (omega * t).sin_cos();
            let (x, z) = (self.fx_series[k], self.fz_series[k]);
            out.fz_series[k] = z * c - x * s;
            out.fx_series[k] = x * c + z * s;
        }
        if let (Some(states), Some(out_states)) = (&self.states, out.states.as_mut()) {
            let eig = HermitianEigen::new(&spin_fy(self.spin));
            for (k, &t) in self.times.iter().enumerate() {
                let u = eig.unitary(omega * t);
                out_states[k] = DensityMatrix {
                    rho: &u * &states[k].rho * u.adjoint(),
                };
            }
        }
        out.frame = Frame::Lab;
        out
    }
}

fn spin_fy(f: f64) -> CMatrix {
    SpinOperators::new(f)
        .expect("spin came from valid operators")
        .fy
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UnitaryOptions {
    pub retain_states: bool,
    /// Diagonalize ρ(t) at every grid point and record the minimum eigenvalue.
    pub track_eigenvalues: bool,
}

fn check_hamiltonian(h: &HamiltonianSpec, ops: &SpinOperators, rho0: &DensityMatrix) -> Result<()> {
    if h.matrix.nrows() != ops.dim || h.matrix.ncols() != ops.dim {
        return Err(Error::DimensionMismatch {
            expected: ops.dim,
            found: h.matrix.nrows(),
        });
    }
    if rho0.dim() != ops.dim {
        return Err(Error::DimensionMismatch {
            expected: ops.dim,
            found: rho0.dim(),
        });
    }
    let dev = hermiticity_error(&h.matrix);
    if dev > 1e-10 * (1.0 + h.matrix.norm()) {
        return Err(Error::InvalidHamiltonian(dev));
    }
    Ok(())
}

/// Closed-form ρ(t) = e^{−iHt} ρ₀ e^{iHt}, evaluated in the energy eigenbasis.
#[derive(Clone, Debug)]
pub struct UnitaryPropagator {
    eigen: HermitianEigen,
    rho_eigen: CMatrix,
    ops_eigen: [CMatrix; 3],
    trace: f64,
}

impl UnitaryPropagator {
    pub fn new(h: &HamiltonianSpec, ops: &SpinOperators, rho0: &DensityMatrix) -> Result<Self> {
        check_hamiltonian(h, ops, rho0)?;
        let eigen = HermitianEigen::new(&h.matrix);
        let v = &eigen.vectors;
        let vd = v.adjoint();
        let rho_eigen = &vd * &rho0.rho * v;
        let ops_eigen = [&vd * &ops.fx * v, &vd * &ops.fy * v, &vd * &ops.fz * v];
        Ok(Self {
            eigen,
            rho_eigen,
            ops_eigen,
            trace: rho0.trace(),
        })
    }

    fn rho_eigen_at(&self, t: f64) -> CMatrix {
        let phases: Vec<Complex64> = self
            .eigen
            .values
            .iter()
            .map(|&l| Complex64::from_polar(1.0, -l * t))
            .collect();
        CMatrix::from_fn(self.rho_eigen.nrows(), self.rho_eigen.ncols(), |j, k| {
            phases[j] * self.rho_eigen[(j, k)] * phases[k].conj()
        })
    }

    /// (⟨F̂x⟩, ⟨F̂y⟩, ⟨F̂z⟩) at time `t`, normalized by the trace.
    pub fn observe(&self, t: f64) -> [f64; 3] {
        let r = self.rho_eigen_at(t);
        let mut out = [0.0; 3];
        for (o, op) in out.iter_mut().zip(&self.ops_eigen) {
            *o = trace_of_product(&r, op).re / self.trace;
        }
        out
    }

    pub fn state(&self, t: f64) -> DensityMatrix {
        let v = &self.eigen.vectors;
        let rho = v * self.rho_eigen_at(t) * v.adjoint();
        DensityMatrix {
            rho: (&rho + rho.adjoint()).map(|z| z * 0.5),
        }
    }
}

pub fn propagate_unitary(
    h: &HamiltonianSpec,
    ops: &SpinOperators,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    options: UnitaryOptions,
) -> Result<EvolutionResult> {
    let prop = UnitaryPropagator::new(h, ops, rho0)?;
    let times = grid.times();
    let n = times.len();
    let trace = rho0.trace();
    let purity = rho0.purity() / (trace * trace);
    let mut result = EvolutionResult {
        times: times.clone(),
        states: options.retain_states.then(|| Vec::with_capacity(n)),
        fx_series: Vec::with_capacity(n),
        fy_series: Vec::with_capacity(n),
        fz_series: Vec::with_capacity(n),
        trace_series: vec![trace; n],
        purity_series: Vec::with_capacity(n),
        min_eigenvalue: None,
        substeps: None,
        frame: h.frame,
        spin: ops.f,
        config_digest: String::new(),
    };
    let mut min_eig = f64::INFINITY;
    for &t in &times {
        let [x, y, z] = prop.observe(t - grid.t_start);
        result.fx_series.push(x);
        result.fy_series.push(y);
        result.fz_series.push(z);
        if options.retain_states || options.track_eigenvalues {
            let state = prop.state(t - grid.t_start);
            result.purity_series.push(state.purity() / (trace * trace));
            if options.track_eigenvalues {
                min_eig = min_eig.min(state.min_eigenvalue());
            }
            if let Some(states) = result.states.as_mut() {
                states.push(state);
            }
        } else {
            result.purity_series.push(purity);
        }
    }
    if options.track_eigenvalues {
        result.min_eigenvalue = Some(min_eig);
    }
    Ok(result)
}

#[derive(Clone, Copy, Debug)]
pub struct LindbladOptions {
    /// Largest allowed change of any propagator element between successive halvings.
    pub tolerance: f64,
    /// Extra halvings applied after convergence (used for convergence checks).
    pub extra_halvings: u32,
    pub max_halvings: u32,
    pub retain_states: bool,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-13,
            extra_halvings: 0,
            max_halvings: 48,
            retain_states: false,
        }
    }
}

/// Column-major vectorized Liouvillian: vec(AXB) = (Bᵀ ⊗ A) vec(X).
pub fn liouvillian(h: &CMatrix, channels: &[DecoherenceChannel]) -> CMatrix {
    let d = h.nrows();
    let id = CMatrix::identity(d, d);
    let mi = Complex64::new(0.0, -1.0);
    let mut l = (id.kronecker(h) - h.transpose().kronecker(&id)).map(|z| z * mi);
    for ch in channels {
        for op in &ch.lindblad_ops {
            let ldl = op.adjoint() * op;
            if ch.trace_preserving {
                l += op.conjugate().kronecker(op);
            }
            l -= (id.kronecker(&ldl) + ldl.transpose().kronecker(&id)).map(|z| z * 0.5);
        }
    }
    l
}

fn one_norm(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// (RK4 step of size dt/2^k)^(2^k) for the linear system dv/dt = L v.
fn rk4_power(l: &CMatrix, dt: f64, halvings: u32) -> CMatrix {
    let n = l.nrows();
    let h = dt / 2f64.powi(halvings as i32);
    let a = l.map(|z| z * h);
    let id = CMatrix::identity(n, n);
    // I + A(I + A/2(I + A/3(I + A/4)))
    let mut p = &id + a.map(|z| z / 4.0);
    p = &id + (&a * p).map(|z| z / 3.0);
    p = &id + (&a * p).map(|z| z / 2.0);
    p = &id + &a * p;
    for _ in 0..halvings {
        p = &p * &p;
    }
    p
}

/// Grid-step propagator with step-halving control. Returns it with the number
/// of halvings used.
pub fn step_propagator(l: &CMatrix, dt: f64, options: &LindbladOptions) -> Result<(CMatrix, u32)> {
    let norm = one_norm(l) * dt;
    let mut k = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let mut prev = rk4_power(l, dt, k);
    let mut prev_diff = f64::INFINITY;
    loop {
        if k >= options.max_halvings {
            return Err(Error::StepUnderflow {
                halvings: k,
                residual: prev_diff,
            });
        }
        let next = rk4_power(l, dt, k + 1);
        let diff = max_abs_diff(&prev, &next);
        k += 1;
        // Either converged, or the truncation error has dropped below the
        // round-off floor that repeated squaring builds up.
        let floor = prev_diff < 1e-8 && diff > 0.5 * prev_diff;
        if diff <= options.tolerance || floor {
            let mut p = next;
            for _ in 0..options.extra_halvings {
                k += 1;
                p = rk4_power(l, dt, k);
            }
            return Ok((p, k));
        }
        prev = next;
        prev_diff = diff;
    }
}

/// Integrates dρ/dt = −i[H,ρ] + Σ_k (L_k ρ L_k† − ½{L_k†L_k, ρ}).
pub fn propagate_lindblad(
    h: &HamiltonianSpec,
    channels: &[DecoherenceChannel],
    ops: &SpinOperators,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    options: &LindbladOptions,
) -> Result<EvolutionResult> {
    check_hamiltonian(h, ops, rho0)?;
    let d = ops.dim;
    for ch in channels {
        for op in &ch.lindblad_ops {
            if op.nrows() != d || op.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: op.nrows(),
                });
            }
        }
    }
    let l = liouvillian(&h.matrix, channels);
    let (step, halvings) = step_propagator(&l, grid.spacing(), options)?;

    let times = grid.times();
    let n = times.len();
    let mut result = EvolutionResult {
        times: times.clone(),
        states: options.retain_states.then(|| Vec::with_capacity(n)),
        fx_series: Vec::with_capacity(n),
        fy_series: Vec::with_capacity(n),
        fz_series: Vec::with_capacity(n),
        trace_series: Vec::with_capacity(n),
        purity_series: Vec::with_capacity(n),
        min_eigenvalue: None,
        substeps: Some(1u64 << halvings.min(63)),
        frame: h.frame,
        spin: ops.f,
        config_digest: String::new(),
    };

    let mut rho = rho0.rho.clone();
    let mut min_eig = f64::INFINITY;
    for (k, &t) in times.iter().enumerate() {
        if k > 0 {
            let v = DVector::from_column_slice(rho.as_slice());
            let next = &step * v;
            rho = CMatrix::from_column_slice(d, d, next.as_slice());
            rho = (&rho + rho.adjoint()).map(|z| z * 0.5);
        }
        let eig = hermitian_eigenvalues(&rho)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if eig < -1e-6 {
            return Err(Error::PositivityViolation {
                time: t,
                eigenvalue: eig,
            });
        }
        min_eig = min_eig.min(eig);
        let tr = rho.trace().re;
        result.trace_series.push(tr);
        result
            .fx_series
            .push(trace_of_product(&rho, &ops.fx).re / tr);
        result
            .fy_series
            .push(trace_of_product(&rho, &ops.fy).re / tr);
        result
            .fz_series
            .push(trace_of_product(&rho, &ops.fz).re / tr);
        let purity: f64 = rho.iter().map(|z| z.norm_sqr()).sum();
        result.purity_series.push(purity / (tr * tr));
        if let Some(states) = result.states.as_mut() {
            states.push(DensityMatrix { rho: rho.clone() });
        }
    }
    result.min_eigenvalue = Some(min_eig);
    Ok(result)
}

/// Deviation between full and rotating-wave dynamics, in units of F.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RwaDeviation {
    /// max_t |⟨F̂z⟩_full − ⟨F̂z⟩_rwa| with the RWA result mapped to the lab frame.
    pub pointwise: f64,
    /// max_t of the difference of transverse envelopes after averaging both
    /// over one Larmor period (envelope detection).
    pub envelope: f64,
}

const ENVELOPE_SAMPLES_PER_PERIOD: usize = 32;

/// Propagates the lab-frame full Hamiltonian and the rotating-frame RWA
/// Hamiltonian from the same initial state and compares them.
pub fn compare_full_vs_rwa(
    ops: &SpinOperators,
    field: &FieldConfig,
    probe: &ProbeConfig,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
) -> Result<RwaDeviation> {
    let full = UnitaryPropagator::new(&build_full_hamiltonian(ops, field, probe)?, ops, rho0)?;
    let rwa = UnitaryPropagator::new(&build_rwa_hamiltonian(ops, field, probe)?, ops, rho0)?;
    let omega = field.larmor_frequency;

    // Rotating-frame transverse components (x, z) of each model at time t.
    let full_rot = |t: f64| {
        let [x, _, z] = full.observe(t);
        let (s, c) = (omega * t).sin_cos();
        (x * c - z * s, z * c + x * s)
    };
    let rwa_rot = |t: f64| {
        let [x, _, z] = rwa.observe(t);
        (x, z)
    };

    let mut pointwise = 0.0_f64;
    let mut envelope = 0.0_f64;
    for t in grid.times() {
        let tau = t - grid.t_start;
        let [_, _, z_full] = full.observe(tau);
        let (xr, zr) = rwa_rot(tau);
        let (s, c) = (omega * tau).sin_cos();
        pointwise = pointwise.max((z_full - (zr * c - xr * s)).abs());

        let (mut fa, mut ra) = ((0.0, 0.0), (0.0, 0.0));
        if omega > 0.0 {
            let period = 2.0 * std::f64::consts::PI / omega;
            let m = ENVELOPE_SAMPLES_PER_PERIOD;
            for j in 0..m {
                let ts = tau + period * ((j as f64 + 0.5) / m as f64 - 0.5);
                let f = full_rot(ts);
                let r = rwa_rot(ts);
                fa = (fa.0 + f.0 / m as f64, fa.1 + f.1 / m as f64);
                ra = (ra.0 + r.0 / m as f64, ra.1 + r.1 / m as f64);
            }
        } else {
            fa = full_rot(tau);
            ra = rwa_rot(tau);
        }
        envelope = envelope.max((fa.0.hypot(fa.1) - ra.0.hypot(ra.1)).abs());
    }
    Ok(RwaDeviation {
        pointwise: pointwise / ops.f,
        envelope: envelope / ops.f,
    })
}
