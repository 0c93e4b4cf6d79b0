//! Driven-system models and their time evolution.
//!
//! Units: ħ = 1, energies are angular frequencies, and the fast phase is
//! `θ = ω₀ t`. The delta kick of the kicked model acts at the end of each
//! drive period: the propagator over `[0, 2π)` is free and the kick factor
//! `e^{−iλW} = I + (e^{−iλ} − 1)W` multiplies it at `θ = 2π`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::floquet::{FloquetSystem, ThetaPropagator};
use crate::linalg::{cis, hermitian_deviation, CMatrix, CVector, UnitaryMatrix, C64};

const NORM_TOL: f64 = 1e-12;

/// Two-level system kicked once per drive period by a rank-one projector.
///
/// `H(λ, θ) = (ω₁/2)|↓⟩⟨↓| + ω₀ λ s W Σₙ δ(θ − 2πn)` with `W = |w⟩⟨w|` and
/// `s` the kick scale (1 for the physical model, 0 switches the kick off).
#[derive(Debug, Clone, PartialEq)]
pub struct KickedTwoLevelModel {
    omega0: f64,
    omega1: f64,
    kick_vector: [C64; 2],
    kick_scale: f64,
}

impl KickedTwoLevelModel {
    /// Kick-strength periodicity of the propagator.
    pub const LAMBDA_PERIOD: f64 = TAU;

    /// Model with the standard kick vector `|w⟩ = (|↑⟩ − i|↓⟩)/√2`.
    pub fn new(omega0: f64, omega1: f64) -> Result<Self> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self::with_kick_vector(omega0, omega1, [C64::new(s, 0.0), C64::new(0.0, -s)])
    }

    pub fn with_kick_vector(omega0: f64, omega1: f64, kick_vector: [C64; 2]) -> Result<Self> {
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(Error::InvalidArgument(format!("omega0 must be positive, got {omega0}")));
        }
        if !omega1.is_finite() {
            return Err(Error::InvalidArgument(format!("omega1 must be finite, got {omega1}")));
        }
        let norm2 = kick_vector[0].norm_sqr() + kick_vector[1].norm_sqr();
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "kick vector must be normalized, ⟨w|w⟩ = {norm2}"
            )));
        }
        Ok(Self {
            omega0,
            omega1,
            kick_vector,
            kick_scale: 1.0,
        })
    }

    /// Multiplies the kick strength by `scale` (0 turns the kick off).
    pub fn with_kick_scale(mut self, scale: f64) -> Self {
        self.kick_scale = scale;
        self
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn omega1(&self) -> f64 {
        self.omega1
    }

    pub fn kick_vector(&self) -> [C64; 2] {
        self.kick_vector
    }

    pub fn kick_scale(&self) -> f64 {
        self.kick_scale
    }

    /// The kick projector `W = |w⟩⟨w|`.
    pub fn projector(&self) -> CMatrix {
        let w = CVector::from_row_slice(&self.kick_vector);
        &w * w.adjoint()
    }

    /// Free Hamiltonian `H₀ = (ω₁/2)|↓⟩⟨↓|`.
    pub fn free_hamiltonian(&self) -> CMatrix {
        let mut h = CMatrix::zeros(2, 2);
        h[(1, 1)] = C64::new(self.omega1 / 2.0, 0.0);
        h
    }

    /// `e^{−iλW} = I + (e^{−iλ} − 1)W`, 2π-periodic in λ.
    pub fn kick_unitary(&self, lambda: f64) -> UnitaryMatrix {
        let factor = cis(-lambda * self.kick_scale) - C64::new(1.0, 0.0);
        let m = CMatrix::identity(2, 2) + self.projector() * factor;
        UnitaryMatrix::from_trusted(m)
    }

    /// Free evolution `diag(1, e^{−i(ω₁/ω₀)θ/2})` over the phase interval `[0, θ]`.
    pub fn free_evolution(&self, theta: f64) -> Result<UnitaryMatrix> {
        if !(0.0..=TAU).contains(&theta) {
            return Err(Error::ThetaOutOfRange { theta });
        }
        Ok(self.free_evolution_unchecked(theta))
    }

    pub(crate) fn free_evolution_unchecked(&self, theta: f64) -> UnitaryMatrix {
        UnitaryMatrix::diagonal_phases(&[0.0, -self.omega1 / self.omega0 * theta / 2.0])
    }

    /// One-period propagator `U_λ(2π) = e^{−iλW} e^{−iH₀2π/ω₀}`.
    pub fn monodromy(&self, lambda: f64) -> UnitaryMatrix {
        self.kick_unitary(lambda).compose(&self.free_evolution_unchecked(TAU))
    }

    /// Kick times `t_k = 2πk/ω₀` in `(t_start, t_end]`.
    pub fn kick_times(&self, t_start: f64, t_end: f64) -> Vec<f64> {
        let period = TAU / self.omega0;
        let first = (t_start / period + 1e-9).floor() as i64 + 1;
        let last = (t_end / period + 1e-9).floor() as i64;
        (first..=last).map(|k| k as f64 * period).collect()
    }

    /// Exact propagator over `[0, T]` for a slowly varying kick strength
    /// `λ(t)`: the ordered product of `e^{−iλ(t_k)W}·e^{−iH₀2π/ω₀}` factors
    /// followed by a partial free evolution up to `T`.
    pub fn propagate_exact(&self, schedule: &dyn Fn(f64) -> f64, duration: f64) -> Result<UnitaryMatrix> {
        if !(duration > 0.0) {
            return Err(Error::Schedule(format!("duration must be positive, got {duration}")));
        }
        self.propagate_exact_interval(schedule, 0.0, duration)
    }

    /// Exact propagator from `t_start` (a kick-period multiple) to `t_end`.
    pub fn propagate_exact_interval(
        &self,
        schedule: &dyn Fn(f64) -> f64,
        t_start: f64,
        t_end: f64,
    ) -> Result<UnitaryMatrix> {
        let period = TAU / self.omega0;
        let phase_in = (t_start / period).fract();
        if phase_in > 1e-9 && phase_in < 1.0 - 1e-9 {
            return Err(Error::Schedule(format!(
                "interval start {t_start} is not a multiple of the kick period"
            )));
        }
        if t_end < t_start {
            return Err(Error::Schedule("interval end precedes start".into()));
        }
        let one_period = self.free_evolution_unchecked(TAU);
        let mut u = CMatrix::identity(2, 2);
        let mut last = t_start;
        for t_k in self.kick_times(t_start, t_end) {
            let lambda = schedule(t_k);
            if !lambda.is_finite() {
                return Err(Error::Schedule(format!("schedule undefined at kick time {t_k}")));
            }
            let step = self.kick_unitary(lambda).compose(&one_period);
            u = step.matrix() * u;
            last = t_k;
        }
        let remaining = (self.omega0 * (t_end - last)).clamp(0.0, TAU);
        if remaining > 0.0 {
            u = self.free_evolution_unchecked(remaining).matrix() * u;
        }
        Ok(UnitaryMatrix::from_trusted(u))
    }

    /// Hamiltonian with each delta kick replaced by a normalized Gaussian of
    /// width `sigma` (in θ) centred at `2π − offset`, for ODE cross-checks.
    pub fn gaussian_smoothed(&self, sigma: f64, offset: f64) -> PeriodicHamiltonianModel {
        let h0 = self.free_hamiltonian();
        let w = self.projector() * C64::new(self.kick_scale, 0.0);
        let omega0 = self.omega0;
        let centre = TAU - offset;
        let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
        PeriodicHamiltonianModel::new(2, omega0, move |lambda, theta| {
            let x = (theta - centre) / sigma;
            let g = norm * (-0.5 * x * x).exp();
            &h0 + &w * C64::new(omega0 * lambda * g, 0.0)
        })
    }
}

impl FloquetSystem for KickedTwoLevelModel {
    fn dim(&self) -> usize {
        2
    }

    fn omega0(&self) -> f64 {
        self.omega0
    }

    fn propagator_samples(&self, lambda: f64, n_theta: usize) -> Result<ThetaPropagator> {
        let step = TAU / n_theta as f64;
        let samples = (0..=n_theta)
            .map(|k| self.free_evolution_unchecked(k as f64 * step))
            .collect();
        ThetaPropagator::new(samples, self.monodromy(lambda))
    }

    fn smooth_hamiltonian(&self, _lambda: f64, _theta: f64) -> CMatrix {
        self.free_hamiltonian()
    }

    fn kick_generator(&self, lambda: f64) -> Option<CMatrix> {
        Some(self.projector() * C64::new(lambda * self.kick_scale, 0.0))
    }
}

type HamiltonianFn = dyn Fn(f64, f64) -> CMatrix + Send + Sync;

/// Smooth `2π`-periodic Hamiltonian `H(λ, θ)` supplied as a closure.
#[derive(Clone)]
pub struct PeriodicHamiltonianModel {
    dim: usize,
    omega0: f64,
    hamiltonian: Arc<HamiltonianFn>,
    substeps: usize,
}

impl fmt::Debug for PeriodicHamiltonianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicHamiltonianModel")
            .field("dim", &self.dim)
            .field("omega0", &self.omega0)
            .finish_non_exhaustive()
    }
}

impl PeriodicHamiltonianModel {
    pub fn new<F>(dim: usize, omega0: f64, hamiltonian: F) -> Self
    where
        F: Fn(f64, f64) -> CMatrix + Send + Sync + 'static,
    {
        Self {
            dim,
            omega0,
            hamiltonian: Arc::new(hamiltonian),
            substeps: 8,
        }
    }

    /// Atom in a continuous-wave field, `H = H₀ + μE cos θ`; the field
    /// amplitude `E` plays the role of the parameter.
    pub fn cw_laser(h0: CMatrix, dipole: CMatrix, omega0: f64) -> Self {
        let dim = h0.nrows();
        Self::new(dim, omega0, move |amplitude, theta| {
            &h0 + &dipole * C64::new(amplitude * theta.cos(), 0.0)
        })
    }

    /// RK4 substeps per θ sample used when sampling the propagator.
    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// `H(λ, θ)`, checked Hermitian within 1e-12.
    pub fn hamiltonian(&self, lambda: f64, theta: f64) -> Result<CMatrix> {
        let h = (self.hamiltonian)(lambda, theta);
        if h.nrows() != self.dim || h.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: h.nrows(),
            });
        }
        let deviation = hermitian_deviation(&h);
        if deviation > 1e-12 {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(h)
    }

    fn rk4_step(&self, lambda: f64, theta: f64, h: f64, u: &CMatrix) -> Result<CMatrix> {
        let coeff = C64::new(0.0, -1.0 / self.omega0);
        let f = |th: f64, y: &CMatrix| -> Result<CMatrix> { Ok(self.hamiltonian(lambda, th)? * y * coeff) };
        let half = C64::new(h / 2.0, 0.0);
        let full = C64::new(h, 0.0);
        let k1 = f(theta, u)?;
        let k2 = f(theta + h / 2.0, &(u + &k1 * half))?;
        let k3 = f(theta + h / 2.0, &(u + &k2 * half))?;
        let k4 = f(theta + h, &(u + &k3 * full))?;
        Ok(u + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0))
    }
}

/// Fixed-step RK4 solution of `iω₀ dU/dθ = H(λ, θ) U` over `theta_span`,
/// starting from the identity. The result is not re-unitarized.
pub fn propagate_ode(
    model: &PeriodicHamiltonianModel,
    lambda: f64,
    theta_span: (f64, f64),
    steps: usize,
) -> Result<CMatrix> {
    if steps < 64 {
        return Err(Error::GridTooCoarse(format!("RK4 needs at least 64 steps, got {steps}")));
    }
    let (start, end) = theta_span;
    let h = (end - start) / steps as f64;
    let mut u = CMatrix::identity(model.dim, model.dim);
    for k in 0..steps {
        u = model.rk4_step(lambda, start + k as f64 * h, h, &u)?;
    }
    Ok(u)
}

impl FloquetSystem for PeriodicHamiltonianModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn omega0(&self) -> f64 {
        self.omega0
    }

    fn propagator_samples(&self, lambda: f64, n_theta: usize) -> Result<ThetaPropagator> {
        let dtheta = TAU / n_theta as f64;
        let h = dtheta / self.substeps as f64;
        let mut u = CMatrix::identity(self.dim, self.dim);
        let mut samples = Vec::with_capacity(n_theta + 1);
        samples.push(UnitaryMatrix::identity(self.dim));
        for k in 0..n_theta {
            for s in 0..self.substeps {
                let theta = k as f64 * dtheta + s as f64 * h;
                u = self.rk4_step(lambda, theta, h, &u)?;
            }
            samples.push(UnitaryMatrix::new(u.clone())?);
        }
        let monodromy = samples[n_theta].clone();
        ThetaPropagator::new(samples, monodromy)
    }

    fn smooth_hamiltonian(&self, lambda: f64, theta: f64) -> CMatrix {
        (self.hamiltonian)(lambda, theta)
    }

    fn kick_generator(&self, _lambda: f64) -> Option<CMatrix> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{exp_i_hermitian, max_abs_diff};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn model(ratio: f64) -> KickedTwoLevelModel {
        KickedTwoLevelModel::new(1.0, 1.0 / ratio).unwrap()
    }

    #[test]
    fn projector_is_idempotent() {
        let m = model(1.0);
        let w = m.projector();
        assert!(max_abs_diff(&(&w * &w), &w) < 1e-12);
    }

    #[test]
    fn rejects_unnormalized_kick_vector() {
        let err = KickedTwoLevelModel::with_kick_vector(1.0, 1.0, [c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn kick_unitary_special_values() {
        let m = model(1.0);
        assert!(m.kick_unitary(0.0).max_abs_diff(&UnitaryMatrix::identity(2)) < 1e-15);
        assert!(m.kick_unitary(TAU).max_abs_diff(&UnitaryMatrix::identity(2)) < 1e-15);
        // oracle: exp(−iπW) from the eigendecomposition of W
        let oracle = exp_i_hermitian(&m.projector(), -PI);
        let expected = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]);
        assert!(max_abs_diff(&oracle, &expected) < 1e-12);
        assert!(max_abs_diff(m.kick_unitary(PI).matrix(), &expected) < 1e-12);
    }

    #[test]
    fn free_evolution_values() {
        let m = model(1.0);
        assert!(m.free_evolution(0.0).unwrap().max_abs_diff(&UnitaryMatrix::identity(2)) < 1e-15);
        let full = m.free_evolution(TAU).unwrap();
        assert!((full.matrix()[(1, 1)] - c(-1.0, 0.0)).norm() < 1e-14);
        let half = KickedTwoLevelModel::new(2.0, 1.0).unwrap();
        let u = half.free_evolution(TAU).unwrap();
        assert!((u.matrix()[(1, 1)] - c(0.0, -1.0)).norm() < 1e-14);
        assert!(matches!(m.free_evolution(7.0), Err(Error::ThetaOutOfRange { .. })));
        assert!(matches!(m.free_evolution(-0.1), Err(Error::ThetaOutOfRange { .. })));
    }

    #[test]
    fn free_evolution_matches_rk4() {
        let m = KickedTwoLevelModel::new(2.0, 1.0).unwrap();
        let h0 = m.free_hamiltonian();
        let ode = PeriodicHamiltonianModel::new(2, 2.0, move |_, _| h0.clone());
        let u = propagate_ode(&ode, 0.0, (0.0, TAU), 512).unwrap();
        assert!(max_abs_diff(&u, m.free_evolution(TAU).unwrap().matrix()) < 1e-10);
    }

    #[test]
    fn monodromy_at_zero_kick() {
        let m = KickedTwoLevelModel::new(1.0, 0.7).unwrap();
        let u = m.monodromy(0.0);
        let expected = UnitaryMatrix::diagonal_phases(&[0.0, -PI * 0.7]);
        assert!(u.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn propagate_exact_single_period_and_free() {
        let m = model(1.0);
        let period = TAU / m.omega0();
        let u = m.propagate_exact(&|_| 1.3, period).unwrap();
        assert!(u.max_abs_diff(&m.monodromy(1.3)) < 1e-14);
        let t = 3.7;
        let free = m.propagate_exact(&|_| 0.0, t).unwrap();
        let expected = UnitaryMatrix::diagonal_phases(&[0.0, -m.omega1() * t / 2.0]);
        assert!(free.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn propagate_exact_rejects_undefined_schedule() {
        let m = model(1.0);
        let err = m.propagate_exact(&|t| if t > 5.0 { f64::NAN } else { 0.0 }, 20.0);
        assert!(matches!(err, Err(Error::Schedule(_))));
    }

    #[test]
    fn propagate_ode_rejects_bad_input() {
        let bad = PeriodicHamiltonianModel::new(2, 1.0, |_, _| {
            CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
        });
        assert!(matches!(propagate_ode(&bad, 0.0, (0.0, TAU), 128), Err(Error::NotHermitian { .. })));
        let ok = PeriodicHamiltonianModel::new(1, 1.0, |_, _| CMatrix::zeros(1, 1));
        assert!(matches!(propagate_ode(&ok, 0.0, (0.0, TAU), 16), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn cw_laser_with_zero_field_is_free() {
        let h0 = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.5, 0.0)]);
        let mu = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let model = PeriodicHamiltonianModel::cw_laser(h0.clone(), mu, 1.0);
        let u = propagate_ode(&model, 0.0, (0.0, TAU), 1024).unwrap();
        let expected = exp_i_hermitian(&h0, -TAU);
        assert!(max_abs_diff(&u, &expected) < 1e-10);
    }
}
