//! Dense complex linear algebra for small Hilbert spaces.
//!
//! Everything here works on `nalgebra` dynamic matrices; the physical
//! dimensions in this crate are tiny (two-level systems, a handful of
//! levels for generic models), so clarity wins over blocking or caching.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Unitarity tolerance applied on construction and after products.
pub const UNITARY_TOL: f64 = 1e-10;

pub const I: C64 = C64::new(0.0, 1.0);

/// `e^{iφ}`.
#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Max-entry deviation `‖M†M − I‖_max`.
pub fn unitarity_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let prod = m.adjoint() * m;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            worst = worst.max((prod[(i, j)] - target).norm());
        }
    }
    worst
}

/// Max-entry deviation `‖M − M†‖_max`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// Square complex matrix carrying the unitarity invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix(CMatrix);

impl UnitaryMatrix {
    /// Validates unitarity (`‖U†U − I‖_max < 1e-10`) and `|det U| ≈ 1`.
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let deviation = unitarity_deviation(&m);
        if deviation >= UNITARY_TOL {
            return Err(Error::NotUnitary { deviation });
        }
        let det_dev = (m.determinant().norm() - 1.0).abs();
        if det_dev >= UNITARY_TOL {
            return Err(Error::NotUnitary { deviation: det_dev });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix known to be unitary by construction (closed forms,
    /// products of unitaries). Checked in debug builds.
    pub(crate) fn from_trusted(m: CMatrix) -> Self {
        debug_assert!(unitarity_deviation(&m) < 1e-8, "trusted matrix not unitary");
        Self(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    /// Diagonal unitary with entries `e^{iφ_k}`.
    pub fn diagonal_phases(phases: &[f64]) -> Self {
        let n = phases.len();
        let mut m = CMatrix::zeros(n, n);
        for (k, &p) in phases.iter().enumerate() {
            m[(k, k)] = cis(p);
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    /// Product `self · rhs`.
    pub fn compose(&self, rhs: &UnitaryMatrix) -> Self {
        Self(&self.0 * &rhs.0)
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        &self.0 * v
    }

    pub fn deviation(&self) -> f64 {
        unitarity_deviation(&self.0)
    }

    pub fn max_abs_diff(&self, other: &UnitaryMatrix) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

/// `exp(i·coeff·H)` for Hermitian `H`, through its eigendecomposition.
pub fn exp_i_hermitian(h: &CMatrix, coeff: f64) -> CMatrix {
    let eig = h.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let n = h.nrows();
    let mut d = CMatrix::zeros(n, n);
    for k in 0..n {
        d[(k, k)] = cis(coeff * eig.eigenvalues[k]);
    }
    v * d * v.adjoint()
}

/// Eigenpairs `(eigenvalue, normalized eigenvector)` of a unitary matrix.
///
/// Uses the complex Schur form; for a normal matrix the triangular factor is
/// diagonal and the Schur vectors are eigenvectors.
pub fn unitary_eigen(u: &UnitaryMatrix) -> Vec<(C64, CVector)> {
    let n = u.dim();
    if n == 1 {
        return vec![(u.0[(0, 0)], CVector::from_element(1, C64::new(1.0, 0.0)))];
    }
    let (q, t) = nalgebra::linalg::Schur::new(u.0.clone()).unpack();
    (0..n)
        .map(|k| {
            let mut v: CVector = q.column(k).into_owned();
            let norm = v.norm();
            v /= C64::new(norm, 0.0);
            (t[(k, k)], v)
        })
        .collect()
}

/// `⟨a|b⟩`.
#[inline]
pub fn inner(a: &CVector, b: &CVector) -> C64 {
    a.dotc(b)
}

/// `⟨a|M|a⟩`.
pub fn expectation(a: &CVector, m: &CMatrix) -> C64 {
    a.dotc(&(m * a))
}

/// Rotates `v` so its largest-modulus component is real and positive.
pub fn fix_largest_component_phase(v: &mut CVector) {
    let mut best = 0usize;
    let mut best_mod = -1.0;
    for (k, z) in v.iter().enumerate() {
        // strict comparison with a small margin keeps ties on the first index
        if z.norm() > best_mod + 1e-12 {
            best_mod = z.norm();
            best = k;
        }
    }
    if best_mod > 0.0 {
        let phase = v[best] / C64::new(best_mod, 0.0);
        *v *= phase.conj();
    }
}

/// Complex number serialized as `{re, im}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for ComplexValue {
    fn from(z: C64) -> Self {
        Self {
            re: crate::numerics::sig12(z.re),
            im: crate::numerics::sig12(z.im),
        }
    }
}

impl From<ComplexValue> for C64 {
    fn from(z: ComplexValue) -> Self {
        C64::new(z.re, z.im)
    }
}
