//! Connection forms, gerbe data `(B^α, A^{αβ}, h^{αβγ})`, curvature and
//! restricted gauge transformations, all sampled on chart grids.
//!
//! Coordinates are `(λ, θ, t)` with λ the chart coordinate. For a
//! one-dimensional parameter space the `dλ∧dλ'` families of `B` (the
//! curvature of `η_M` and the `η_M ∧ dχ` cross term) vanish identically, so
//! only the `dλ∧dθ`, `dθ∧dt` and `dλ∧dt` coefficients are stored. Forms are
//! independent of `t` on each chart except through `A^{αβ}`.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::Serialize;

use crate::atlas::{verify_cocycles, CircleAtlas, Lattice, LocalSection, TransitionDatum};
use crate::error::{Error, Result};
use crate::linalg::{cis, C64, I};
use crate::numerics::{derivative_central, derivative_fd4, unwrap};

/// Minimum λ samples for connection forms.
pub const MIN_FORM_SAMPLES: usize = 16;
/// Chart-independence tolerance for the curvature.
pub const CURVATURE_TOL: f64 = 1e-5;

/// Sample layout of one chart: λ lattice points × closed θ grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChartGrid {
    pub chart: usize,
    pub lattice: Lattice,
    pub first_index: i64,
    pub len: usize,
    pub n_theta: usize,
}

impl ChartGrid {
    pub fn of(section: &LocalSection) -> Self {
        Self {
            chart: section.chart,
            lattice: section.lattice,
            first_index: section.first_index,
            len: section.len(),
            n_theta: section.n_theta,
        }
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        self.lattice.coordinate(self.first_index + i as i64)
    }

    pub fn circle_index(&self, i: usize) -> i64 {
        self.lattice.circle_index(self.first_index + i as i64)
    }

    pub fn position(&self, circle_index: i64) -> Option<usize> {
        let offset = (circle_index - self.first_index).rem_euclid(self.lattice.size) as usize;
        (offset < self.len).then_some(offset)
    }

    pub fn theta_step(&self) -> f64 {
        TAU / self.n_theta as f64
    }

    pub fn lambda_step(&self) -> f64 {
        self.lattice.step
    }

    #[inline]
    pub fn at(&self, i: usize, k: usize) -> usize {
        i * (self.n_theta + 1) + k
    }

    fn size(&self) -> usize {
        self.len * (self.n_theta + 1)
    }
}

/// `η_M = (1/2π)⟨a|∂_λ a⟩`, `η_0 = (ω₀/2π)⟨a|∂_θ a⟩` pointwise in θ, and `dχ/dλ`.
#[derive(Debug, Clone, Serialize)]
pub struct ConnectionForms {
    pub grid: ChartGrid,
    pub omega0: f64,
    pub eta_m: Vec<C64>,
    pub eta_0: Vec<C64>,
    pub chi: Vec<f64>,
    pub chi_gradient: Vec<f64>,
    /// Largest real part discarded when projecting onto imaginary values.
    pub max_real_part: f64,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Second-order λ-derivative coefficients at sample `i` of `n`.
fn lambda_stencil(i: usize, n: usize) -> [(usize, f64); 3] {
    if i == 0 {
        [(0, -1.5), (1, 2.0), (2, -0.5)]
    } else if i == n - 1 {
        [(n - 1, 1.5), (n - 2, -2.0), (n - 3, 0.5)]
    } else {
        [(i - 1, -0.5), (i + 1, 0.5), (i, 0.0)]
    }
}

/// Connection forms of a section: central differences in λ, fourth-order
/// differences in θ on the closed θ grid.
pub fn connection_forms(section: &LocalSection) -> Result<ConnectionForms> {
    let grid = ChartGrid::of(section);
    if grid.len < MIN_FORM_SAMPLES {
        return Err(Error::GridTooCoarse(format!(
            "chart {} holds {} λ samples (need {MIN_FORM_SAMPLES})",
            grid.chart, grid.len
        )));
    }
    let (n, nt, dim) = (grid.len, grid.n_theta, section.dim);
    let h = grid.lambda_step();
    let ht = grid.theta_step();
    let omega0 = section.omega0;
    let rows: Vec<(Vec<C64>, Vec<C64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut em = Vec::with_capacity(nt + 1);
            let mut worst: f64 = 0.0;
            for k in 0..=nt {
                let a = section.state(i, k);
                let d: C64 = lambda_stencil(i, n)
                    .iter()
                    .map(|&(j, w)| dot(a, section.state(j, k)) * w)
                    .sum::<C64>()
                    / h;
                worst = worst.max(d.re.abs());
                em.push(I * d.im / TAU);
            }
            let mut derivs: Vec<Vec<C64>> = Vec::with_capacity(dim);
            for c in 0..dim {
                let comp: Vec<C64> = (0..=nt).map(|k| section.state(i, k)[c]).collect();
                derivs.push(derivative_fd4(&comp, ht));
            }
            let mut e0 = Vec::with_capacity(nt + 1);
            for k in 0..=nt {
                let a = section.state(i, k);
                let d: C64 = (0..dim).map(|c| a[c].conj() * derivs[c][k]).sum();
                worst = worst.max(d.re.abs());
                e0.push(I * omega0 * d.im / TAU);
            }
            (em, e0, worst)
        })
        .collect();
    let mut eta_m = Vec::with_capacity(grid.size());
    let mut eta_0 = Vec::with_capacity(grid.size());
    let mut max_real_part: f64 = 0.0;
    for (em, e0, w) in rows {
        eta_m.extend(em);
        eta_0.extend(e0);
        max_real_part = max_real_part.max(w);
    }
    Ok(ConnectionForms {
        grid,
        omega0,
        eta_m,
        eta_0,
        chi: section.chi.clone(),
        chi_gradient: derivative_central(&section.chi, h),
        max_real_part,
    })
}

/// `B^α = η_M dλ∧dθ − η_0 dθ∧dt − (∂_λη_0 + (2π/ω₀)η_0 ∂_λχ) dλ∧dt`.
#[derive(Debug, Clone, Serialize)]
pub struct ChartB {
    pub grid: ChartGrid,
    pub lambda_theta: Vec<C64>,
    pub theta_t: Vec<C64>,
    pub lambda_t: Vec<C64>,
}

/// λ-derivative of a `[i][k]` array along each θ column.
fn lambda_derivative(grid: &ChartGrid, values: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); values.len()];
    let h = grid.lambda_step();
    for k in 0..=grid.n_theta {
        let col: Vec<C64> = (0..grid.len).map(|i| values[grid.at(i, k)]).collect();
        for (i, d) in derivative_central(&col, h).into_iter().enumerate() {
            out[grid.at(i, k)] = d;
        }
    }
    out
}

/// θ-derivative of a `[i][k]` array along each λ row.
fn theta_derivative(grid: &ChartGrid, values: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..grid.len {
        let row = &values[grid.at(i, 0)..=grid.at(i, grid.n_theta)];
        out.extend(derivative_fd4(row, grid.theta_step()));
    }
    out
}

pub fn assemble_b(forms: &ConnectionForms) -> ChartB {
    let grid = forms.grid;
    let d_eta0 = lambda_derivative(&grid, &forms.eta_0);
    let ratio = TAU / forms.omega0;
    let mut lambda_t = Vec::with_capacity(grid.size());
    for i in 0..grid.len {
        for k in 0..=grid.n_theta {
            let idx = grid.at(i, k);
            lambda_t.push(-d_eta0[idx] - forms.eta_0[idx] * (ratio * forms.chi_gradient[i]));
        }
    }
    ChartB {
        grid,
        lambda_theta: forms.eta_m.clone(),
        theta_t: forms.eta_0.iter().map(|e| -e).collect(),
        lambda_t,
    }
}

/// `A^{αβ} = (i/2π)(φ^{αβ} + n^{αβ}ω₀t)(dθ + (2π/ω₀)∂_λχ^α dλ)` on one
/// overlap component, sampled at the shared lattice points.
#[derive(Debug, Clone, Serialize)]
pub struct PairA {
    pub alpha: usize,
    pub beta: usize,
    pub component: usize,
    pub circle_indices: Vec<i64>,
    pub phi: Vec<f64>,
    pub n: i64,
    pub chi_gradient: Vec<f64>,
    pub omega0: f64,
}

impl PairA {
    pub fn theta_coeff(&self, r: usize, t: f64) -> C64 {
        I * ((self.phi[r] + self.n as f64 * self.omega0 * t) / TAU)
    }

    pub fn lambda_coeff(&self, r: usize, t: f64) -> C64 {
        I * ((self.phi[r] + self.n as f64 * self.omega0 * t) * self.chi_gradient[r] / self.omega0)
    }
}

pub fn assemble_a(transition: &TransitionDatum, alpha_forms: &ConnectionForms) -> Result<PairA> {
    let chi_gradient = transition
        .circle_indices
        .iter()
        .map(|&c| {
            alpha_forms
                .grid
                .position(c)
                .map(|i| alpha_forms.chi_gradient[i])
                .ok_or_else(|| Error::GridMismatch(format!("overlap point {c} missing on chart {}", transition.alpha)))
        })
        .collect::<Result<_>>()?;
    Ok(PairA {
        alpha: transition.alpha,
        beta: transition.beta,
        component: transition.component,
        circle_indices: transition.circle_indices.clone(),
        phi: transition.phi.clone(),
        n: transition.n,
        chi_gradient,
        omega0: alpha_forms.omega0,
    })
}

/// `h^{αβγ} = e^{−i(2π/ω₀)χ^α z} e^{−izθ}` on one triple component.
#[derive(Debug, Clone, Serialize)]
pub struct TripleH {
    pub charts: [usize; 3],
    pub triple: usize,
    pub z: i64,
    pub circle_indices: Vec<i64>,
    pub chi_alpha: Vec<f64>,
    pub omega0: f64,
}

impl TripleH {
    pub fn value(&self, r: usize, theta: f64) -> C64 {
        assemble_h_value(self.z, self.chi_alpha[r], self.omega0, theta)
    }
}

pub fn assemble_h_value(z: i64, chi: f64, omega0: f64, theta: f64) -> C64 {
    cis(-(TAU / omega0) * chi * z as f64 - z as f64 * theta)
}

pub fn assemble_h(
    charts: [usize; 3],
    triple: usize,
    z: i64,
    circle_indices: Vec<i64>,
    alpha_forms: &ConnectionForms,
) -> Result<TripleH> {
    let chi_alpha = circle_indices
        .iter()
        .map(|&c| {
            alpha_forms
                .grid
                .position(c)
                .map(|i| alpha_forms.chi[i])
                .ok_or_else(|| Error::GridMismatch(format!("triple point {c} missing on chart {}", charts[0])))
        })
        .collect::<Result<_>>()?;
    Ok(TripleH {
        charts,
        triple,
        z,
        circle_indices,
        chi_alpha,
        omega0: alpha_forms.omega0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GerbeData {
    pub omega0: f64,
    pub forms: Vec<ConnectionForms>,
    pub b: Vec<ChartB>,
    pub a: Vec<PairA>,
    pub h: Vec<TripleH>,
}

impl GerbeData {
    pub fn forms_of(&self, chart: usize) -> Option<&ConnectionForms> {
        self.forms.iter().find(|f| f.grid.chart == chart)
    }

    pub fn b_of(&self, chart: usize) -> Option<&ChartB> {
        self.b.iter().find(|b| b.grid.chart == chart)
    }
}

/// Connection forms, B, A and h for a family of chart sections and their
/// transition data.
pub fn assemble_gerbe(atlas: &CircleAtlas, sections: &[LocalSection], transitions: &[TransitionDatum]) -> Result<GerbeData> {
    if sections.is_empty() {
        return Err(Error::InvalidArgument("no sections".into()));
    }
    let omega0 = sections[0].omega0;
    let forms: Vec<ConnectionForms> = sections.par_iter().map(connection_forms).collect::<Result<_>>()?;
    let b: Vec<ChartB> = forms.par_iter().map(assemble_b).collect();
    let find = |chart: usize| {
        forms
            .iter()
            .find(|f| f.grid.chart == chart)
            .ok_or_else(|| Error::InvalidArgument(format!("no section for chart {chart}")))
    };
    let a = transitions
        .iter()
        .map(|t| assemble_a(t, find(t.alpha)?))
        .collect::<Result<Vec<_>>>()?;
    let mut h = Vec::new();
    for tc in verify_cocycles(atlas, transitions)? {
        let tri = &atlas.triples[tc.triple];
        let [ab, ac, bc] = [tri.faces[0], tri.faces[1], tri.faces[2]];
        let pts = |o: usize| -> Vec<i64> {
            let ov = &atlas.overlaps[o];
            transitions
                .iter()
                .find(|t| t.alpha == ov.charts[0] && t.beta == ov.charts[1] && t.component == ov.component)
                .map(|t| t.circle_indices.clone())
                .unwrap_or_default()
        };
        let (pac, pbc) = (pts(ac), pts(bc));
        let common: Vec<i64> = pts(ab)
            .into_iter()
            .filter(|c| pac.contains(c) && pbc.contains(c))
            .collect();
        h.push(assemble_h(tc.charts, tc.triple, tc.z, common, find(tc.charts[0])?)?);
    }
    Ok(GerbeData { omega0, forms, b, a, h })
}

/// Largest residual of each gluing relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GluingReport {
    /// `dA^{αβ} = B^β − B^α`.
    pub relation_i: f64,
    /// `A^{βγ} − A^{αγ} + A^{αβ} = −(h^{αβγ})⁻¹dh^{αβγ}`.
    pub relation_ii: f64,
    /// `dB^α = dB^β`.
    pub relation_iii: f64,
    pub n_lambda: usize,
    pub n_theta: usize,
    pub n_t: usize,
}

fn t_grid(t_max: f64, n_t: usize) -> Vec<f64> {
    (0..n_t).map(|j| t_max * j as f64 / (n_t - 1) as f64).collect()
}

/// Derivative of a short complex sequence (second order).
fn diff(values: &[C64], step: f64) -> Vec<C64> {
    derivative_central(values, step)
}

/// Finite-difference check of the gluing relations on `(λ, θ, t)` grids with
/// `n_t` time samples on `[0, t_max]`.
pub fn verify_gerbe_gluing(atlas: &CircleAtlas, gerbe: &GerbeData, t_max: f64, n_t: usize) -> Result<GluingReport> {
    if atlas.charts.len() < 2 || gerbe.a.is_empty() {
        return Err(Error::InvalidArgument("gluing needs at least two overlapping charts".into()));
    }
    if n_t < 3 {
        return Err(Error::GridTooCoarse(format!("{n_t} time samples")));
    }
    let g0 = gerbe.forms[0].grid;
    for f in &gerbe.forms {
        if f.grid.lattice != g0.lattice || f.grid.n_theta != g0.n_theta {
            return Err(Error::GridMismatch(format!("chart {} uses a different grid", f.grid.chart)));
        }
    }
    let ts = t_grid(t_max, n_t);
    let dt = ts[1] - ts[0];
    let nt = g0.n_theta;
    let ht = g0.theta_step();
    let hl = g0.lambda_step();
    let zero = C64::new(0.0, 0.0);

    // (i)
    let rel_i = gerbe
        .a
        .par_iter()
        .map(|pa| -> Result<f64> {
            let (ba, bb) = match (gerbe.b_of(pa.alpha), gerbe.b_of(pa.beta)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::GridMismatch(format!("missing B on charts ({}, {})", pa.alpha, pa.beta))),
            };
            let m = pa.circle_indices.len();
            if m < 3 {
                return Err(Error::GridTooCoarse(format!("overlap ({}, {}) too short", pa.alpha, pa.beta)));
            }
            let mut worst: f64 = 0.0;
            for &t in &ts {
                let a_theta: Vec<C64> = (0..m).map(|r| pa.theta_coeff(r, t)).collect();
                let a_lambda: Vec<C64> = (0..m).map(|r| pa.lambda_coeff(r, t)).collect();
                let d_lambda_a_theta = diff(&a_theta, hl);
                // A is θ-independent: ∂_θ A_λ by differencing a constant row
                let d_theta_a_lambda: Vec<C64> = a_lambda
                    .iter()
                    .map(|&v| derivative_fd4(&vec![v; nt + 1], ht)[nt / 2])
                    .collect();
                for r in 0..m {
                    let c = pa.circle_indices[r];
                    let (ia, ib) = (ba.grid.position(c).unwrap(), bb.grid.position(c).unwrap());
                    let series = |tt: f64| (pa.theta_coeff(r, tt), pa.lambda_coeff(r, tt));
                    let (th_m, la_m) = series(t - dt);
                    let (th_p, la_p) = series(t + dt);
                    let d_t_theta = (th_p - th_m) / (2.0 * dt);
                    let d_t_lambda = (la_p - la_m) / (2.0 * dt);
                    let da_lt = zero - d_t_lambda;
                    let da_th_t = zero - d_t_theta;
                    let da_lth = d_lambda_a_theta[r] - d_theta_a_lambda[r];
                    for k in 0..=nt {
                        let (ka, kb) = (ba.grid.at(ia, k), bb.grid.at(ib, k));
                        worst = worst
                            .max((da_lth - (bb.lambda_theta[kb] - ba.lambda_theta[ka])).norm())
                            .max((da_th_t - (bb.theta_t[kb] - ba.theta_t[ka])).norm())
                            .max((da_lt - (bb.lambda_t[kb] - ba.lambda_t[ka])).norm());
                    }
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    // (ii)
    let mut rel_ii: f64 = 0.0;
    for th in &gerbe.h {
        let [a, b, c] = th.charts;
        let tri = &atlas.triples[th.triple];
        let pair = |o: usize| -> Result<&PairA> {
            let ov = &atlas.overlaps[o];
            gerbe
                .a
                .iter()
                .find(|p| p.alpha == ov.charts[0] && p.beta == ov.charts[1] && p.component == ov.component)
                .ok_or_else(|| Error::GridMismatch(format!("missing A on triple ({a}, {b}, {c})")))
        };
        let (a_ab, a_ac, a_bc) = (pair(tri.faces[0])?, pair(tri.faces[1])?, pair(tri.faces[2])?);
        let m = th.circle_indices.len();
        if m < 3 {
            return Err(Error::GridTooCoarse(format!("triple ({a}, {b}, {c}) holds {m} λ samples")));
        }
        let pos = |p: &PairA, cidx: i64| p.circle_indices.iter().position(|&x| x == cidx).unwrap();
        // phase of h along λ (θ = 0) and along θ (first λ sample)
        let arg_l = unwrap(&(0..m).map(|r| th.value(r, 0.0).arg()).collect::<Vec<_>>());
        let arg_l: Vec<C64> = arg_l.into_iter().map(|x| C64::new(x, 0.0)).collect();
        let d_arg_l = diff(&arg_l, hl);
        let arg_t: Vec<f64> = unwrap(&(0..=nt).map(|k| th.value(0, k as f64 * ht).arg()).collect::<Vec<_>>());
        let arg_t: Vec<C64> = arg_t.into_iter().map(|x| C64::new(x, 0.0)).collect();
        let d_arg_t = derivative_fd4(&arg_t, ht);
        for &t in &ts {
            for r in 0..m {
                let cidx = th.circle_indices[r];
                let (rab, rac, rbc) = (pos(a_ab, cidx), pos(a_ac, cidx), pos(a_bc, cidx));
                let lhs_theta = a_bc.theta_coeff(rbc, t) - a_ac.theta_coeff(rac, t) + a_ab.theta_coeff(rab, t);
                let lhs_lambda = a_bc.lambda_coeff(rbc, t) - a_ac.lambda_coeff(rac, t) + a_ab.lambda_coeff(rab, t);
                let rhs_lambda = -I * d_arg_l[r];
                for d in d_arg_t.iter().step_by((nt / 16).max(1)) {
                    let rhs_theta = -I * d;
                    rel_ii = rel_ii.max((lhs_theta - rhs_theta).norm());
                }
                rel_ii = rel_ii.max((lhs_lambda - rhs_lambda).norm());
            }
        }
    }

    // (iii)
    let curv = chart_curvatures(gerbe);
    let rel_iii = curvature_mismatch(atlas, &curv).0;

    Ok(GluingReport {
        relation_i: rel_i,
        relation_ii: rel_ii,
        relation_iii: rel_iii,
        n_lambda: g0.lattice.samples_per_2pi,
        n_theta: nt,
        n_t,
    })
}

/// `dλ∧dθ∧dt` coefficient of `dB^α` on one chart.
#[derive(Debug, Clone, Serialize)]
pub struct ChartCurvature {
    pub grid: ChartGrid,
    pub values: Vec<C64>,
}

impl ChartCurvature {
    /// θ-average of the curvature at λ sample `i`.
    pub fn theta_average(&self, i: usize) -> C64 {
        let g = &self.grid;
        let row = &self.values[g.at(i, 0)..=g.at(i, g.n_theta)];
        crate::numerics::trapezoid(row, g.theta_step()) / TAU
    }
}

/// `H = ∂_λ B_θt − ∂_θ B_λt + ∂_t B_λθ`, the last term vanishing on charts.
fn chart_curvatures(gerbe: &GerbeData) -> Vec<ChartCurvature> {
    gerbe
        .b
        .par_iter()
        .map(|b| {
            let dl = lambda_derivative(&b.grid, &b.theta_t);
            let dth = theta_derivative(&b.grid, &b.lambda_t);
            ChartCurvature {
                grid: b.grid,
                values: dl.iter().zip(&dth).map(|(x, y)| x - y).collect(),
            }
        })
        .collect()
}

/// Largest `|H^α − H^β|` over all overlaps, with the offending charts.
fn curvature_mismatch(atlas: &CircleAtlas, curv: &[ChartCurvature]) -> (f64, Vec<usize>) {
    let mut worst = 0.0;
    let mut charts = Vec::new();
    for o in &atlas.overlaps {
        let (Some(ca), Some(cb)) = (
            curv.iter().find(|c| c.grid.chart == o.charts[0]),
            curv.iter().find(|c| c.grid.chart == o.charts[1]),
        ) else {
            continue;
        };
        for i in 0..ca.grid.len {
            let Some(j) = cb.grid.position(ca.grid.circle_index(i)) else {
                continue;
            };
            for k in 0..=ca.grid.n_theta {
                let d = (ca.values[ca.grid.at(i, k)] - cb.values[cb.grid.at(j, k)]).norm();
                if d > worst {
                    worst = d;
                    charts = o.charts.clone();
                }
            }
        }
    }
    (worst, charts)
}

/// Curvature samples per chart; errors if charts disagree on an overlap by
/// more than [`CURVATURE_TOL`].
pub fn curvature_h(atlas: &CircleAtlas, gerbe: &GerbeData) -> Result<Vec<ChartCurvature>> {
    let curv = chart_curvatures(gerbe);
    let (worst, charts) = curvature_mismatch(atlas, &curv);
    if worst > CURVATURE_TOL {
        return Err(Error::CocycleViolation { charts, magnitude: worst });
    }
    Ok(curv)
}

/// Chart phase function `ε(ℓ) = c + Σ a_j sin(f_j ℓ + ϕ_j)` with its exact derivative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeFunction {
    #[serde(default)]
    pub constant: f64,
    /// `(amplitude, frequency, phase)` triples.
    #[serde(default)]
    pub modes: Vec<(f64, f64, f64)>,
}

impl GaugeFunction {
    pub fn value(&self, x: f64) -> f64 {
        self.constant + self.modes.iter().map(|&(a, f, p)| a * (f * x + p).sin()).sum::<f64>()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.modes.iter().map(|&(a, f, p)| a * f * (f * x + p).cos()).sum()
    }
}

/// Restricted gauge transformation: `ε^α` and `p^α` per chart, `m^{αβ}` per
/// pair overlap component (indexed like `CircleAtlas::overlaps`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictedGauge {
    pub epsilon: Vec<GaugeFunction>,
    pub p: Vec<i64>,
    pub m: Vec<i64>,
}

impl RestrictedGauge {
    pub fn identity(atlas: &CircleAtlas) -> Self {
        Self {
            epsilon: vec![GaugeFunction::default(); atlas.charts.len()],
            p: vec![0; atlas.charts.len()],
            m: vec![0; atlas.overlaps.len()],
        }
    }

    fn validate(&self, atlas: &CircleAtlas) -> Result<()> {
        if self.epsilon.len() != atlas.charts.len() || self.p.len() != atlas.charts.len() {
            return Err(Error::InvalidArgument(format!(
                "gauge needs ε and p for each of {} charts",
                atlas.charts.len()
            )));
        }
        if self.m.len() != atlas.overlaps.len() {
            return Err(Error::InvalidArgument(format!(
                "gauge needs m for each of {} overlap components",
                atlas.overlaps.len()
            )));
        }
        Ok(())
    }

    fn m_of(&self, atlas: &CircleAtlas, alpha: usize, beta: usize, component: usize) -> i64 {
        let (lo, hi, sign) = if alpha < beta { (alpha, beta, 1) } else { (beta, alpha, -1) };
        atlas
            .overlaps
            .iter()
            .position(|o| o.charts == [lo, hi] && o.component == component)
            .map(|i| sign * self.m[i])
            .unwrap_or(0)
    }
}

/// Applies a restricted gauge transformation through its transformation
/// laws: states `↦ e^{iε^α}e^{ip^αθ}`, `φ ↦ φ + ε^β − ε^α + 2πm`,
/// `n ↦ n + p^β − p^α`, `χ ↦ χ + pω₀`, `η_M ↦ η_M + (i/2π)∂_λε`,
/// `η_0 ↦ η_0 + (i/2π)pω₀`, B, A and h accordingly (`z ↦ z + δm`).
pub fn apply_gauge(
    atlas: &CircleAtlas,
    sections: &[LocalSection],
    transitions: &[TransitionDatum],
    gerbe: &GerbeData,
    gauge: &RestrictedGauge,
) -> Result<(Vec<LocalSection>, Vec<TransitionDatum>, GerbeData)> {
    gauge.validate(atlas)?;
    let omega0 = gerbe.omega0;
    let new_sections: Vec<LocalSection> = sections
        .iter()
        .map(|s| {
            let eps = &gauge.epsilon[s.chart];
            s.regauged(&|x| eps.value(x), gauge.p[s.chart])
        })
        .collect();

    let beta_coord = |chart: usize, x: f64| atlas.to_chart(chart, x).unwrap_or(x);
    let new_transitions: Vec<TransitionDatum> = transitions
        .iter()
        .map(|t| {
            let m = gauge.m_of(atlas, t.alpha, t.beta, t.component);
            let mut out = t.clone();
            for (phi, &x) in out.phi.iter_mut().zip(&t.coords) {
                *phi += gauge.epsilon[t.beta].value(beta_coord(t.beta, x)) - gauge.epsilon[t.alpha].value(x)
                    + TAU * m as f64;
            }
            out.n += gauge.p[t.beta] - gauge.p[t.alpha];
            out
        })
        .collect();

    let mut forms = gerbe.forms.clone();
    let mut b = gerbe.b.clone();
    for (f, bf) in forms.iter_mut().zip(b.iter_mut()) {
        let chart = f.grid.chart;
        let eps = &gauge.epsilon[chart];
        let p = gauge.p[chart] as f64;
        let shift0 = I * (p * omega0 / TAU);
        for i in 0..f.grid.len {
            let de = I * (eps.derivative(f.grid.coordinate(i)) / TAU);
            f.chi[i] += p * omega0;
            let dlt = I * (p * f.chi_gradient[i]);
            for k in 0..=f.grid.n_theta {
                let idx = f.grid.at(i, k);
                f.eta_m[idx] += de;
                f.eta_0[idx] += shift0;
                bf.lambda_theta[idx] += de;
                bf.theta_t[idx] -= shift0;
                bf.lambda_t[idx] -= dlt;
            }
        }
    }

    let a = gerbe
        .a
        .iter()
        .map(|pa| {
            let m = gauge.m_of(atlas, pa.alpha, pa.beta, pa.component);
            let mut out = pa.clone();
            let grid = forms.iter().find(|f| f.grid.chart == pa.alpha).map(|f| f.grid);
            for (r, phi) in out.phi.iter_mut().enumerate() {
                let x = grid
                    .and_then(|g| g.position(pa.circle_indices[r]).map(|i| g.coordinate(i)))
                    .unwrap_or(0.0);
                *phi += gauge.epsilon[pa.beta].value(beta_coord(pa.beta, x)) - gauge.epsilon[pa.alpha].value(x)
                    + TAU * m as f64;
            }
            out.n += gauge.p[pa.beta] - gauge.p[pa.alpha];
            out
        })
        .collect();

    let h = gerbe
        .h
        .iter()
        .map(|th| {
            let [x, y, z] = th.charts;
            let tri = &atlas.triples[th.triple];
            let comp = |i: usize| atlas.overlaps[tri.faces[i]].component;
            let dm = gauge.m_of(atlas, y, z, comp(2)) - gauge.m_of(atlas, x, z, comp(1)) + gauge.m_of(atlas, x, y, comp(0));
            let mut out = th.clone();
            out.z += dm;
            for c in &mut out.chi_alpha {
                *c += gauge.p[x] as f64 * omega0;
            }
            out
        })
        .collect();

    Ok((new_sections, new_transitions, GerbeData { omega0, forms, b, a, h }))
}
