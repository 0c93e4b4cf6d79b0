//! Floquet decomposition `U(θ) = Z(θ) e^{iMθ}` of one drive period.
//!
//! θ-sampled quantities live on the closed grid `θ_k = 2πk/N`, `k = 0..=N`.
//! The last sample is the limit `θ → 2π⁻`, i.e. before the end-of-period
//! kick, so every integrand on the grid is smooth and closed-interval
//! quadrature applies. The kick itself enters only through the model's
//! kick generator `G` (kick factor `e^{−iG}`).

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::linalg::{cis, expectation, fix_largest_component_phase, inner, CMatrix, CVector, UnitaryMatrix, C64, I};
use crate::numerics::{derivative_fd4, trapezoid, wrap_tau};

/// Eigenphase gap below which the monodromy counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// A periodically driven system that can be Floquet-analysed at parameter λ.
pub trait FloquetSystem: Send + Sync {
    fn dim(&self) -> usize;

    fn omega0(&self) -> f64;

    /// Propagator on the closed θ grid (last sample before the kick) and the
    /// full monodromy.
    fn propagator_samples(&self, lambda: f64, n_theta: usize) -> Result<ThetaPropagator>;

    /// Hamiltonian at `(λ, θ)` without boundary-supported kick terms.
    fn smooth_hamiltonian(&self, lambda: f64, theta: f64) -> CMatrix;

    /// Dimensionless kick generator `G` with kick factor `e^{−iG}` applied
    /// at the end of each period; `None` for smooth drives.
    fn kick_generator(&self, lambda: f64) -> Option<CMatrix>;
}

/// θ-sampled propagator of one period.
#[derive(Debug, Clone)]
pub struct ThetaPropagator {
    samples: Vec<UnitaryMatrix>,
    monodromy: UnitaryMatrix,
}

impl ThetaPropagator {
    pub fn new(samples: Vec<UnitaryMatrix>, monodromy: UnitaryMatrix) -> Result<Self> {
        if samples.len() < 5 {
            return Err(Error::GridTooCoarse(format!(
                "need at least 4 θ intervals, got {}",
                samples.len().saturating_sub(1)
            )));
        }
        let dim = monodromy.dim();
        if let Some(bad) = samples.iter().find(|u| u.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        let start_dev = samples[0].max_abs_diff(&UnitaryMatrix::identity(dim));
        if start_dev > 1e-12 {
            return Err(Error::InvalidArgument(format!("U(0) differs from identity by {start_dev:.3e}")));
        }
        Ok(Self { samples, monodromy })
    }

    /// A θ-independent propagator `U ≡ I`.
    pub fn identity(dim: usize, n_theta: usize) -> Result<Self> {
        Self::new(vec![UnitaryMatrix::identity(dim); n_theta + 1], UnitaryMatrix::identity(dim))
    }

    pub fn n_theta(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn samples(&self) -> &[UnitaryMatrix] {
        &self.samples
    }

    pub fn monodromy(&self) -> &UnitaryMatrix {
        &self.monodromy
    }
}

/// One Floquet eigenpair: `M|μ⟩ = −(χ̃/ω₀)|μ⟩`.
#[derive(Debug, Clone)]
pub struct FloquetEigenpair {
    /// `2πχ̃/ω₀` in `[0, 2π)`.
    pub mu_phase: f64,
    pub vector: CVector,
}

#[derive(Debug, Clone)]
pub struct FloquetDecomposition {
    omega0: f64,
    n_theta: usize,
    z_samples: Vec<CMatrix>,
    generator: CMatrix,
    eigenpairs: Vec<FloquetEigenpair>,
    monodromy: UnitaryMatrix,
}

/// Smallest circular distance between any two phases.
pub fn min_phase_gap(phases: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for (i, a) in phases.iter().enumerate() {
        for b in &phases[i + 1..] {
            let d = wrap_tau(a - b);
            gap = gap.min(d.min(TAU - d));
        }
    }
    gap
}

/// Eigenpairs of a monodromy sorted by `2πχ̃/ω₀ ∈ [0, 2π)`; errors on
/// eigenphase gaps below [`DEGENERACY_TOL`].
pub fn monodromy_eigenpairs(monodromy: &UnitaryMatrix) -> Result<Vec<FloquetEigenpair>> {
    let mut pairs: Vec<FloquetEigenpair> = crate::linalg::unitary_eigen(monodromy)
        .into_iter()
        .map(|(value, mut vector)| {
            fix_largest_component_phase(&mut vector);
            FloquetEigenpair {
                mu_phase: wrap_tau(-value.arg()),
                vector,
            }
        })
        .collect();
    pairs.sort_by(|a, b| a.mu_phase.total_cmp(&b.mu_phase));
    let phases: Vec<f64> = pairs.iter().map(|p| p.mu_phase).collect();
    let gap = min_phase_gap(&phases);
    if pairs.len() > 1 && gap < DEGENERACY_TOL {
        return Err(Error::DegenerateSpectrum { gap });
    }
    Ok(pairs)
}

/// Splits a θ-sampled propagator into `Z(θ)` and the constant generator `M`,
/// with monodromy eigenphases taken in the `[0, 2π)` window.
pub fn floquet_decompose(propagator: &ThetaPropagator, omega0: f64) -> Result<FloquetDecomposition> {
    let eigenpairs = monodromy_eigenpairs(propagator.monodromy())?;
    let dim = propagator.monodromy().dim();
    let n_theta = propagator.n_theta();
    let mut generator = CMatrix::zeros(dim, dim);
    for pair in &eigenpairs {
        let proj = &pair.vector * pair.vector.adjoint();
        generator += proj * C64::new(-pair.mu_phase / TAU, 0.0);
    }
    let step = TAU / n_theta as f64;
    let z_samples = propagator
        .samples()
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let theta = k as f64 * step;
            let mut inv_phase = CMatrix::zeros(dim, dim);
            for pair in &eigenpairs {
                let proj = &pair.vector * pair.vector.adjoint();
                inv_phase += proj * cis(pair.mu_phase * theta / TAU);
            }
            if k == 0 {
                CMatrix::identity(dim, dim)
            } else {
                u.matrix() * inv_phase
            }
        })
        .collect();
    Ok(FloquetDecomposition {
        omega0,
        n_theta,
        z_samples,
        generator,
        eigenpairs,
        monodromy: propagator.monodromy().clone(),
    })
}

impl FloquetDecomposition {
    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn theta_step(&self) -> f64 {
        TAU / self.n_theta as f64
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    pub fn z_samples(&self) -> &[CMatrix] {
        &self.z_samples
    }

    pub fn generator(&self) -> &CMatrix {
        &self.generator
    }

    pub fn eigenpairs(&self) -> &[FloquetEigenpair] {
        &self.eigenpairs
    }

    pub fn monodromy(&self) -> &UnitaryMatrix {
        &self.monodromy
    }

    /// Principal-window quasienergy `χ̃_j ∈ [0, ω₀)`.
    pub fn quasienergy(&self, branch: usize) -> f64 {
        self.omega0 * self.eigenpairs[branch].mu_phase / TAU
    }

    /// `e^{iM·2π}`.
    pub fn generator_exponential(&self) -> CMatrix {
        crate::linalg::exp_i_hermitian(&self.generator, TAU)
    }

    /// `Z(θ_k) e^{iMθ_k}`.
    pub fn reconstruct(&self, k: usize) -> CMatrix {
        let theta = k as f64 * self.theta_step();
        &self.z_samples[k] * crate::linalg::exp_i_hermitian(&self.generator, theta)
    }

    /// Applies `f(k, Z_k)` to every `Z` sample (used to probe sensitivity of
    /// the consistency checks).
    pub fn map_z_samples(&mut self, mut f: impl FnMut(usize, &CMatrix) -> CMatrix) {
        for (k, z) in self.z_samples.iter_mut().enumerate() {
            *z = f(k, z);
        }
    }

    fn check_branch(&self, branch: usize) -> Result<()> {
        if branch >= self.eigenpairs.len() {
            return Err(Error::InvalidArgument(format!(
                "branch {branch} out of range (dimension {})",
                self.eigenpairs.len()
            )));
        }
        Ok(())
    }

    /// `Z(θ_k)|μ_j⟩` on the closed grid.
    pub fn branch_samples(&self, branch: usize) -> Vec<CVector> {
        let mu = &self.eigenpairs[branch].vector;
        self.z_samples.iter().map(|z| z * mu).collect()
    }
}

/// Quasienergy state `|a(θ)⟩ = e^{inθ} Z(θ)|μ_j⟩` with `χ_a = χ̃_j + nω₀`.
#[derive(Debug, Clone)]
pub struct QuasienergyState {
    pub block: i64,
    pub branch: usize,
    pub chi: f64,
    pub theta_step: f64,
    pub samples: Vec<CVector>,
}

pub fn quasienergy_state(decomp: &FloquetDecomposition, branch: usize, block: i64) -> Result<QuasienergyState> {
    decomp.check_branch(branch)?;
    let step = decomp.theta_step();
    let samples = decomp
        .branch_samples(branch)
        .into_iter()
        .enumerate()
        .map(|(k, v)| v * cis(block as f64 * k as f64 * step))
        .collect();
    Ok(QuasienergyState {
        block,
        branch,
        chi: decomp.quasienergy(branch) + block as f64 * decomp.omega0(),
        theta_step: step,
        samples,
    })
}

impl QuasienergyState {
    /// Largest pointwise deviation of `⟨a(θ)|a(θ)⟩` from 1.
    pub fn pointwise_norm_deviation(&self) -> f64 {
        self.samples
            .iter()
            .map(|v| (v.norm_squared() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `⟨a|a⟩` in the extended space (θ-average of the pointwise norm).
    pub fn extended_norm(&self) -> f64 {
        let vals: Vec<f64> = self.samples.iter().map(|v| v.norm_squared()).collect();
        trapezoid(&vals, self.theta_step) / TAU
    }

    /// `⟨self|other⟩` in the extended space.
    pub fn extended_inner(&self, other: &QuasienergyState) -> C64 {
        let vals: Vec<C64> = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| inner(a, b))
            .collect();
        trapezoid(&vals, self.theta_step) / TAU
    }
}

/// Moore–Stedman factors of one period for branch `j`.
#[derive(Debug, Clone, Copy)]
pub struct PhaseSplit {
    pub dynamical: C64,
    pub geometric: C64,
}

struct BranchIntegrals {
    /// `∫₀^{2π} ⟨v|H|v⟩ dθ`, including the kick delta.
    energy: f64,
    /// `∫₀^{2π} ⟨v|∂_θ v⟩ dθ`, including the kick jump `−i⟨μ|G|μ⟩`.
    derivative: C64,
}

fn branch_integrals(system: &dyn FloquetSystem, lambda: f64, decomp: &FloquetDecomposition, branch: usize) -> BranchIntegrals {
    let step = decomp.theta_step();
    let v = decomp.branch_samples(branch);
    let energies: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(k, vk)| expectation(vk, &system.smooth_hamiltonian(lambda, k as f64 * step)).re)
        .collect();
    let mut energy = trapezoid(&energies, step);

    let mut derivative = C64::new(0.0, 0.0);
    let dim = decomp.dim();
    let mut dv: Vec<Vec<C64>> = vec![Vec::new(); dim];
    for c in 0..dim {
        let comp: Vec<C64> = v.iter().map(|x| x[c]).collect();
        dv[c] = derivative_fd4(&comp, step);
    }
    let integrand: Vec<C64> = (0..v.len())
        .map(|k| (0..dim).map(|c| v[k][c].conj() * dv[c][k]).sum())
        .collect();
    derivative += trapezoid(&integrand, step);

    if let Some(g) = system.kick_generator(lambda) {
        let mu = &decomp.eigenpairs()[branch].vector;
        let kick = expectation(mu, &g).re;
        energy += decomp.omega0() * kick;
        derivative += -I * kick;
    }
    BranchIntegrals { energy, derivative }
}

/// `dynamical = exp(−(i/ω₀)∫⟨μ|Z†HZ|μ⟩dθ)`, `geometric = exp(−∫⟨μ|Z†∂_θZ|μ⟩dθ)`.
///
/// The kick delta contributes `ω₀⟨μ|G|μ⟩` to the energy integral and the
/// matching jump of `Z` contributes `−i⟨μ|G|μ⟩` to the derivative integral.
pub fn moore_stedman_phase_split(
    system: &dyn FloquetSystem,
    lambda: f64,
    decomp: &FloquetDecomposition,
    branch: usize,
) -> Result<PhaseSplit> {
    decomp.check_branch(branch)?;
    let ints = branch_integrals(system, lambda, decomp, branch);
    Ok(PhaseSplit {
        dynamical: cis(-ints.energy / decomp.omega0()),
        geometric: (-ints.derivative).exp(),
    })
}

/// `|χ̃_j − ⟨H⟩_θ + iω₀⟨∂_θ⟩_θ|` for branch `j`.
pub fn quasienergy_expectation_residual(
    system: &dyn FloquetSystem,
    lambda: f64,
    decomp: &FloquetDecomposition,
    branch: usize,
) -> Result<f64> {
    decomp.check_branch(branch)?;
    let ints = branch_integrals(system, lambda, decomp, branch);
    let avg_h = ints.energy / TAU;
    let avg_d = ints.derivative / TAU;
    let chi = decomp.quasienergy(branch);
    Ok((C64::new(chi - avg_h, 0.0) + I * decomp.omega0() * avg_d).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::KickedTwoLevelModel;
    use std::f64::consts::PI;

    fn decomp_at(model: &KickedTwoLevelModel, lambda: f64, n: usize) -> FloquetDecomposition {
        floquet_decompose(&model.propagator_samples(lambda, n).unwrap(), model.omega0()).unwrap()
    }

    #[test]
    fn identity_propagator_has_zero_generator() {
        let prop = ThetaPropagator::identity(3, 16).unwrap();
        // U ≡ I is fully degenerate
        assert!(matches!(floquet_decompose(&prop, 1.0), Err(Error::DegenerateSpectrum { .. })));
        let prop1 = ThetaPropagator::identity(1, 16).unwrap();
        let d = floquet_decompose(&prop1, 1.0).unwrap();
        assert!(d.generator().norm() < 1e-15);
        assert!(d.z_samples().iter().all(|z| (z - CMatrix::identity(1, 1)).norm() < 1e-15));
    }

    #[test]
    fn kicked_eigenpairs_match_closed_form() {
        let model = KickedTwoLevelModel::new(1.0, 1.0).unwrap();
        for &lambda in &[0.3, 1.0, 2.5, 5.9] {
            let d = decomp_at(&model, lambda, 64);
            let pairs = d.eigenpairs();
            let mu1 = CVector::from_vec(vec![C64::new((lambda / 4.0).cos(), 0.0), C64::new(-(lambda / 4.0).sin(), 0.0)]);
            // branch with eigenvalue e^{−iλ/2} has 2πχ̃/ω₀ = λ/2
            let j = pairs
                .iter()
                .position(|p| (wrap_tau(p.mu_phase - lambda / 2.0)).min(TAU - wrap_tau(p.mu_phase - lambda / 2.0)) < 1e-10)
                .unwrap();
            assert!((inner(&pairs[j].vector, &mu1).norm() - 1.0).abs() < 1e-10);
        }
        let d = decomp_at(&model, PI, 64);
        assert!((d.quasienergy(0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn generator_reproduces_monodromy() {
        let model = KickedTwoLevelModel::new(1.0, 0.63).unwrap();
        let d = decomp_at(&model, 1.7, 64);
        assert!(crate::linalg::max_abs_diff(&d.generator_exponential(), d.monodromy().matrix()) < 1e-9);
        assert!(crate::linalg::hermitian_deviation(d.generator()) < 1e-10);
        let prop = model.propagator_samples(1.7, 64).unwrap();
        for k in 0..=64 {
            assert!(crate::linalg::max_abs_diff(&d.reconstruct(k), prop.samples()[k].matrix()) < 1e-9);
            assert!(crate::linalg::unitarity_deviation(&d.z_samples()[k]) < 1e-10);
        }
    }

    #[test]
    fn degenerate_monodromy_rejected() {
        // ω₀ = ω₁/2 at λ = 0 gives U(2π) = I
        let model = KickedTwoLevelModel::new(1.0, 2.0).unwrap();
        let prop = model.propagator_samples(0.0, 32).unwrap();
        assert!(matches!(floquet_decompose(&prop, 1.0), Err(Error::DegenerateSpectrum { .. })));
    }

    #[test]
    fn quasienergy_state_at_zero_kick_is_spin_up() {
        let model = KickedTwoLevelModel::new(1.0, 1.0).unwrap();
        let d = decomp_at(&model, 0.0, 64);
        let a = quasienergy_state(&d, 0, 0).unwrap();
        assert!(a.chi.abs() < 1e-15);
        for v in &a.samples {
            assert!((v[0] - C64::new(1.0, 0.0)).norm() < 1e-14 && v[1].norm() < 1e-14);
        }
    }

    #[test]
    fn quasienergy_state_closed_form_and_ladder() {
        let model = KickedTwoLevelModel::new(1.0, 1.0).unwrap();
        let lambda: f64 = 1.3;
        let d = decomp_at(&model, lambda, 128);
        let a = quasienergy_state(&d, 0, 0).unwrap();
        let up = quasienergy_state(&d, 0, 1).unwrap();
        assert!((up.chi - a.chi - 1.0).abs() < 1e-14);
        for (k, v) in a.samples.iter().enumerate() {
            let theta = k as f64 * a.theta_step;
            let pref = cis(lambda * theta / (4.0 * PI));
            let expected = [pref * (lambda / 4.0).cos(), -pref * (lambda / 4.0).sin() * cis(-theta / 2.0)];
            assert!((v[0] - expected[0]).norm() < 1e-12 && (v[1] - expected[1]).norm() < 1e-12, "k = {k}");
            assert!(up.samples[k] == v * cis(theta));
        }
        assert!(a.pointwise_norm_deviation() < 1e-10);
        assert!((a.extended_norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn phase_split_trivial_at_zero_kick() {
        let model = KickedTwoLevelModel::new(1.0, 1.0).unwrap();
        let d = decomp_at(&model, 0.0, 256);
        let split = moore_stedman_phase_split(&model, 0.0, &d, 0).unwrap();
        assert!((split.dynamical - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((split.geometric - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert_eq!(quasienergy_expectation_residual(&model, 0.0, &d, 0).unwrap(), 0.0);
    }

    #[test]
    fn split_reference_values_converge() {
        // ω₀ = ω₁, λ = π, branch 0: both factors agree between 4096 and 8192 samples
        let model = KickedTwoLevelModel::new(1.0, 1.0).unwrap();
        let coarse = moore_stedman_phase_split(&model, PI, &decomp_at(&model, PI, 4096), 0).unwrap();
        let fine = moore_stedman_phase_split(&model, PI, &decomp_at(&model, PI, 8192), 0).unwrap();
        assert!((coarse.dynamical - fine.dynamical).norm() < 1e-6);
        assert!((coarse.geometric - fine.geometric).norm() < 1e-6);
        // closed form: ⟨H⟩ integral = ∫(1/2)sin²(π/4) dθ + ω₀·π·⟨μ|W|μ⟩, ⟨μ|W|μ⟩ = 1/2
        let energy = 0.5 * 0.5 * TAU + PI * 0.5;
        assert!((fine.dynamical - cis(-energy)).norm() < 1e-9);
        // product must be e^{−2πiχ̃/ω₀} = e^{−iπ/2}
        assert!((fine.dynamical * fine.geometric - cis(-PI / 2.0)).norm() < 1e-9);
    }

    #[test]
    fn hf_eigen_residual_on_smooth_segment() {
        let model = KickedTwoLevelModel::new(1.0, 1.0).unwrap();
        let d = decomp_at(&model, 2.2, 4096);
        let a = quasienergy_state(&d, 1, -1).unwrap();
        let h = model.free_hamiltonian();
        let comp0: Vec<C64> = a.samples.iter().map(|v| v[0]).collect();
        let comp1: Vec<C64> = a.samples.iter().map(|v| v[1]).collect();
        let d0 = derivative_fd4(&comp0, a.theta_step);
        let d1 = derivative_fd4(&comp1, a.theta_step);
        for k in 0..a.samples.len() {
            let v = &a.samples[k];
            let dv = CVector::from_vec(vec![d0[k], d1[k]]);
            let r = &h * v - dv * (I * d.omega0()) - v * C64::new(a.chi, 0.0);
            assert!(r.norm() < 1e-5, "k = {k}: {}", r.norm());
        }
    }
}
