//! Angular-momentum operators, spin-coherent states and rotations.
//!
//! Everything is in units of ħ = 1. The basis is |F, m⟩ ordered with m
//! descending from +F to −F, so `fz` is `diag(F, F−1, …, −F)` and index 0 is
//! the stretched state |F, F⟩.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Matrix representation of F̂ for a single spin-F manifold.
#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub f: f64,
    pub dim: usize,
    pub fx: CMatrix,
    pub fy: CMatrix,
    pub fz: CMatrix,
    pub f_plus: CMatrix,
    pub f_minus: CMatrix,
}

impl SpinOperators {
    /// Builds the operators for spin `f`. `f` must be a positive multiple of 1/2.
    pub fn new(f: f64) -> Result<Self> {
        let twice = 2.0 * f;
        if !(f > 0.0) || !f.is_finite() || (twice - twice.round()).abs() > 1e-12 {
            return Err(Error::InvalidSpin(f));
        }
        let dim = twice.round() as usize + 1;
        let m = |i: usize| f - i as f64;

        let fz = CMatrix::from_fn(dim, dim, |r, c| {
            if r == c {
                Complex64::new(m(r), 0.0)
            } else {
                ZERO
            }
        });
        // F+ |m⟩ = √(f(f+1) − m(m+1)) |m+1⟩; |m+1⟩ sits one row above |m⟩.
        let f_plus = CMatrix::from_fn(dim, dim, |r, c| {
            if c == r + 1 {
                let mc = m(c);
                Complex64::new((f * (f + 1.0) - mc * (mc + 1.0)).sqrt(), 0.0)
            } else {
                ZERO
            }
        });
        let f_minus = f_plus.adjoint();
        let fx = (&f_plus + &f_minus).map(|z| z * 0.5);
        let fy = (&f_plus - &f_minus).map(|z| z / (2.0 * I));

        Ok(Self {
            f,
            dim,
            fx,
            fy,
            fz,
            f_plus,
            f_minus,
        })
    }

    pub fn identity(&self) -> CMatrix {
        CMatrix::identity(self.dim, self.dim)
    }

    /// `n·F̂` for a (not necessarily normalized) direction `n`.
    pub fn along(&self, n: [f64; 3]) -> CMatrix {
        self.fx.map(|z| z * n[0]) + self.fy.map(|z| z * n[1]) + self.fz.map(|z| z * n[2])
    }

    /// Magnetic quantum numbers in basis order.
    pub fn m_values(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.f - i as f64).collect()
    }
}

/// Pure state in the |F, m⟩ basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: CVector,
}

impl StateVector {
    /// Wraps and normalizes `amplitudes`.
    pub fn new(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NumericalConsistency(
                "state vector has zero or non-finite norm".into(),
            ));
        }
        Ok(Self {
            amplitudes: amplitudes.unscale(norm),
        })
    }

    /// Basis state with index `index` (0 is m = +F).
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amplitudes = CVector::zeros(dim);
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// |⟨self|other⟩|, which is 1 for states equal up to a global phase.
    pub fn overlap(&self, other: &StateVector) -> f64 {
        self.amplitudes.dotc(&other.amplitudes).norm()
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            rho: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

/// Density matrix of the spin manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub rho: CMatrix,
}

impl DensityMatrix {
    pub fn new(rho: CMatrix) -> Result<Self> {
        if rho.nrows() != rho.ncols() {
            return Err(Error::DimensionMismatch {
                expected: rho.nrows(),
                found: rho.ncols(),
            });
        }
        let dev = hermiticity_error(&rho);
        if dev > 1e-10 {
            return Err(Error::NumericalConsistency(format!(
                "density matrix not Hermitian (deviation {dev:e})"
            )));
        }
        Ok(Self { rho })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            rho: CMatrix::identity(dim, dim).map(|z| z / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    /// tr(ρ²)
    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.rho)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn hermiticity_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for r in 0..n {
        for c in r..n {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let sym = (m + m.adjoint()).map(|z| z * 0.5);
    sym.symmetric_eigenvalues().iter().copied().collect()
}

/// Eigendecomposition `G = V diag(λ) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(g: &CMatrix) -> Self {
        let sym = (g + g.adjoint()).map(|z| z * 0.5);
        let eig = sym.symmetric_eigen();
        Self {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    /// exp(−i·angle·G)
    pub fn unitary(&self, angle: f64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (c, &lam) in self.values.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, -angle * lam);
            for r in 0..n {
                scaled[(r, c)] *= phase;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// exp(−i·angle·G) for Hermitian `G`.
pub fn unitary_exp(generator: &CMatrix, angle: f64) -> CMatrix {
    HermitianEigen::new(generator).unitary(angle)
}

/// Spin-coherent state pointing along (polar, azimuth):
/// exp(−i·azimuth·F̂z)·exp(−i·polar·F̂y)|F, F⟩.
pub fn coherent_state(ops: &SpinOperators, polar: f64, azimuth: f64) -> StateVector {
    let top = StateVector::basis(ops.dim, 0);
    let ry = unitary_exp(&ops.fy, polar);
    let rz = unitary_exp(&ops.fz, azimuth);
    let amplitudes = rz * (ry * top.amplitudes);
    // Re-normalize to absorb the eigendecomposition round-off.
    StateVector::new(amplitudes).expect("rotation of a unit vector is non-zero")
}

/// tr(ρ·op). Fails when the imaginary residue exceeds 1e-8.
pub fn expectation(rho: &DensityMatrix, op: &CMatrix) -> Result<f64> {
    if op.nrows() != rho.dim() || op.ncols() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: op.nrows(),
        });
    }
    let value = trace_of_product(&rho.rho, op);
    if value.im.abs() > 1e-8 {
        return Err(Error::NumericalConsistency(format!(
            "expectation value has imaginary part {:e}",
            value.im
        )));
    }
    Ok(value.re)
}

/// tr(A·B) without forming the product.
pub(crate) fn trace_of_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Applies exp(−i·angle·(axis·F̂)).
pub fn rotate_state(
    ops: &SpinOperators,
    state: &StateVector,
    axis: [f64; 3],
    angle: f64,
) -> Result<StateVector> {
    if state.dim() != ops.dim {
        return Err(Error::DimensionMismatch {
            expected: ops.dim,
            found: state.dim(),
        });
    }
    let len = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
    if len == 0.0 {
        return Err(Error::ZeroAxis);
    }
    if (len - 1.0).abs() > 1e-9 {
        return Err(Error::AxisNotNormalized(len));
    }
    let u = unitary_exp(&ops.along(axis), angle);
    Ok(StateVector {
        amplitudes: u * &state.amplitudes,
    })
}
