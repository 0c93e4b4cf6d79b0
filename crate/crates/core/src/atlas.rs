//! Circle atlases, chart-local quasienergy sections and their transition data.
//!
//! The parameter manifold is a circle of circumference `period`. Charts are
//! open coordinate intervals `]start, end[` embedded by `ℓ ↦ ℓ mod period`.
//! All sections of one analysis share a global λ lattice `ℓ = k·step`, so
//! overlapping charts sample exactly the same circle points.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::floquet::{floquet_decompose, min_phase_gap, monodromy_eigenpairs, FloquetDecomposition, FloquetSystem};
use crate::linalg::{cis, inner, CVector, C64};
use crate::numerics::{interpolate, unwrap, wrap_pi};

/// Dominant-mode weight required when extracting `n^{αβ}`.
pub const FOURIER_DOMINANCE: f64 = 0.999;
/// Minimum number of λ samples on an overlap for transition fitting.
pub const MIN_OVERLAP_SAMPLES: usize = 8;
/// Continuation ambiguity threshold.
pub const AMBIGUITY_TOL: f64 = 1e-3;
/// Quasienergy gap (in units of ω₀) below which a crossing is reported.
pub const CROSSING_TOL: f64 = 1e-6;
/// Integrality tolerance for `z^{αβγ}`.
pub const COCYCLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chart {
    pub index: usize,
    pub start: f64,
    pub end: f64,
}

impl Chart {
    pub fn contains(&self, coord: f64) -> bool {
        coord > self.start && coord < self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// One connected component of a pairwise, triple or quadruple overlap.
/// `start`/`end` are in the coordinate of the first (smallest-index) chart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapComponent {
    pub charts: Vec<usize>,
    pub component: usize,
    pub start: f64,
    pub end: f64,
    /// Indices of the faces: for triples the pair overlaps `(αβ, αγ, βγ)`,
    /// for quadruples the triples `(βγδ, αγδ, αβδ, αβγ)` followed by the
    /// pair overlap `αβ`.
    pub faces: Vec<usize>,
}

impl OverlapComponent {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CircleAtlas {
    pub period: f64,
    pub charts: Vec<Chart>,
    pub overlaps: Vec<OverlapComponent>,
    pub triples: Vec<OverlapComponent>,
    pub quadruples: Vec<OverlapComponent>,
}

/// Intersections of the arc of chart `b` with chart `a`, in `a`'s coordinate.
fn arc_intersections(a: (f64, f64), b: (f64, f64), period: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let k_lo = ((a.0 - b.1) / period).floor() as i64 - 1;
    let k_hi = ((a.1 - b.0) / period).ceil() as i64 + 1;
    for k in k_lo..=k_hi {
        let s = (b.0 + k as f64 * period).max(a.0);
        let e = (b.1 + k as f64 * period).min(a.1);
        if e - s > SLIVER * period {
            out.push((s, e));
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

/// Intersections narrower than `SLIVER·period` are rounding artefacts of
/// coincident chart ends and count as empty.
const SLIVER: f64 = 1e-9;

fn interval_intersection(a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
    let s = a.0.max(b.0);
    let e = a.1.min(b.1);
    (e - s > SLIVER * (a.1 - a.0).max(b.1 - b.0)).then_some((s, e))
}

fn check_cover(charts: &[Chart], period: f64) -> Result<()> {
    let mut intervals = Vec::new();
    for c in charts {
        let s = c.start.rem_euclid(period);
        for k in -1..=1 {
            intervals.push((s + k as f64 * period, s + c.length() + k as f64 * period));
        }
    }
    // sweep over [0, period]; open intervals need strict overlap at every join
    let mut cur = 0.0;
    loop {
        let reach = intervals
            .iter()
            .filter(|(s, e)| *s < cur && *e > cur)
            .map(|(_, e)| *e)
            .fold(f64::NEG_INFINITY, f64::max);
        if !reach.is_finite() {
            return Err(Error::InvalidCover(format!("point {cur} of the circle is not covered")));
        }
        if reach > period {
            return Ok(());
        }
        cur = reach;
    }
}

/// Builds an atlas of the circle of circumference `period` from open
/// coordinate ranges, computing all overlap components.
pub fn build_circle_atlas(period: f64, chart_specs: &[(f64, f64)]) -> Result<CircleAtlas> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::InvalidCover(format!("period must be positive, got {period}")));
    }
    if chart_specs.is_empty() {
        return Err(Error::InvalidCover("no charts".into()));
    }
    let mut charts = Vec::with_capacity(chart_specs.len());
    for (index, &(start, end)) in chart_specs.iter().enumerate() {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::InvalidCover(format!("chart {index}: empty or invalid range ]{start}, {end}[")));
        }
        if end - start >= period {
            return Err(Error::InvalidCover(format!(
                "chart {index}: range length {} not shorter than the period",
                end - start
            )));
        }
        charts.push(Chart { index, start, end });
    }
    check_cover(&charts, period)?;

    let m = charts.len();
    let range = |c: usize| (charts[c].start, charts[c].end);
    let mut overlaps = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            for (component, (s, e)) in arc_intersections(range(a), range(b), period).into_iter().enumerate() {
                overlaps.push(OverlapComponent {
                    charts: vec![a, b],
                    component,
                    start: s,
                    end: e,
                    faces: Vec::new(),
                });
            }
        }
    }
    let mut atlas = CircleAtlas {
        period,
        charts,
        overlaps,
        triples: Vec::new(),
        quadruples: Vec::new(),
    };

    let mut triples = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                let ab: Vec<usize> = atlas.overlap_indices(&[a, b]);
                let ac: Vec<usize> = atlas.overlap_indices(&[a, c]);
                let mut component = 0;
                for &i in &ab {
                    for &j in &ac {
                        let (oi, oj) = (&atlas.overlaps[i], &atlas.overlaps[j]);
                        if let Some((s, e)) = interval_intersection((oi.start, oi.end), (oj.start, oj.end)) {
                            let mid = atlas.to_chart(b, 0.5 * (s + e)).expect("triple point inside chart");
                            let bc = atlas.find_component(&atlas.overlaps, &[b, c], mid).ok_or_else(|| {
                                Error::InvalidCover(format!("triple ({a},{b},{c}) without a matching pair overlap"))
                            })?;
                            triples.push(OverlapComponent {
                                charts: vec![a, b, c],
                                component,
                                start: s,
                                end: e,
                                faces: vec![i, j, bc],
                            });
                            component += 1;
                        }
                    }
                }
            }
        }
    }
    atlas.triples = triples;

    let mut quadruples = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                for d in c + 1..m {
                    let mut component = 0;
                    let abc: Vec<usize> = (0..atlas.triples.len())
                        .filter(|&t| atlas.triples[t].charts == [a, b, c])
                        .collect();
                    for &t in &abc {
                        for j in atlas.overlap_indices(&[a, d]) {
                            let (ot, oj) = (&atlas.triples[t], &atlas.overlaps[j]);
                            let Some((s, e)) = interval_intersection((ot.start, ot.end), (oj.start, oj.end)) else {
                                continue;
                            };
                            let mid = 0.5 * (s + e);
                            let in_b = atlas.to_chart(b, mid).unwrap();
                            let face = |charts: &[usize], x: f64| {
                                atlas
                                    .find_component(&atlas.triples, charts, x)
                                    .ok_or_else(|| Error::InvalidCover(format!("missing triple face {charts:?}")))
                            };
                            let bcd = face(&[b, c, d], in_b)?;
                            let acd = face(&[a, c, d], mid)?;
                            let abd = face(&[a, b, d], mid)?;
                            let ab = atlas
                                .find_component(&atlas.overlaps, &[a, b], mid)
                                .expect("quadruple point inside pair overlap");
                            quadruples.push(OverlapComponent {
                                charts: vec![a, b, c, d],
                                component,
                                start: s,
                                end: e,
                                faces: vec![bcd, acd, abd, t, ab],
                            });
                            component += 1;
                        }
                    }
                }
            }
        }
    }
    atlas.quadruples = quadruples;
    Ok(atlas)
}

impl CircleAtlas {
    pub fn chart(&self, index: usize) -> Result<&Chart> {
        self.charts
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("chart {index} does not exist")))
    }

    /// Coordinate of chart `target` for the circle point with coordinate
    /// `coord` (any chart), if the point lies in `target`.
    pub fn to_chart(&self, target: usize, coord: f64) -> Option<f64> {
        let c = self.charts.get(target)?;
        let k = ((c.start - coord) / self.period).ceil();
        let x = coord + k * self.period;
        if c.contains(x) {
            Some(x)
        } else if c.contains(x + self.period) {
            Some(x + self.period)
        } else {
            None
        }
    }

    /// Indices into `overlaps` of the components of the given chart pair.
    pub fn overlap_indices(&self, pair: &[usize]) -> Vec<usize> {
        (0..self.overlaps.len())
            .filter(|&i| self.overlaps[i].charts == pair)
            .collect()
    }

    /// Index of the component of `list` with the given (sorted) charts that
    /// contains the circle point `coord` (any representative).
    pub fn find_component(&self, list: &[OverlapComponent], charts: &[usize], coord: f64) -> Option<usize> {
        let x = self.to_chart(charts[0], coord)?;
        (0..list.len()).find(|&i| list[i].charts == charts && x > list[i].start && x < list[i].end)
    }

    /// The pair overlap (as index into `overlaps`) of the unordered charts
    /// `a`, `b` containing the circle point `coord` (any representative).
    pub fn pair_component_at(&self, a: usize, b: usize, coord: f64) -> Option<usize> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.find_component(&self.overlaps, &[lo, hi], coord)
    }
}

/// Global λ lattice `ℓ = k·step` with `step = 2π / samples_per_2pi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lattice {
    pub period: f64,
    pub samples_per_2pi: usize,
    pub step: f64,
    /// Lattice points per period.
    pub size: i64,
}

impl Lattice {
    pub fn new(period: f64, samples_per_2pi: usize) -> Result<Self> {
        if samples_per_2pi < 8 {
            return Err(Error::GridTooCoarse(format!("{samples_per_2pi} λ samples per 2π")));
        }
        let step = TAU / samples_per_2pi as f64;
        let ratio = period / step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::GridMismatch(format!(
                "period {period} is not a multiple of the λ spacing {step}"
            )));
        }
        Ok(Self {
            period,
            samples_per_2pi,
            step,
            size: ratio.round() as i64,
        })
    }

    pub fn coordinate(&self, k: i64) -> f64 {
        k as f64 * self.step
    }

    pub fn circle_index(&self, k: i64) -> i64 {
        k.rem_euclid(self.size)
    }

    /// First and last lattice index strictly inside `]start, end[`.
    pub fn interior_indices(&self, start: f64, end: f64) -> (i64, i64) {
        let lo = (start / self.step + 1e-9).floor() as i64 + 1;
        let hi = (end / self.step - 1e-9).ceil() as i64 - 1;
        (lo, hi)
    }
}

/// Initial condition for a chart section.
#[derive(Debug, Clone, Copy)]
pub enum BranchSeed<'a> {
    /// Floquet branch `branch` (sorted by `χ̃ ∈ [0, ω₀)`) in block `block`,
    /// taken at the lattice point nearest to `anchor`.
    Floquet { anchor: f64, branch: usize, block: i64 },
    /// Continue an existing section through the first shared lattice point.
    Continue { from: &'a LocalSection },
}

/// A quasienergy branch on one chart: `χ(ℓ_i)` and `|a(θ_k, ℓ_i)⟩`.
#[derive(Debug, Clone)]
pub struct LocalSection {
    pub chart: usize,
    pub lattice: Lattice,
    pub first_index: i64,
    pub omega0: f64,
    pub dim: usize,
    pub n_theta: usize,
    pub chi: Vec<f64>,
    /// Floquet branch label (sorted principal quasienergy) per λ sample.
    pub branches: Vec<usize>,
    data: Vec<C64>,
}

impl LocalSection {
    pub fn len(&self) -> usize {
        self.chi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chi.is_empty()
    }

    pub fn lattice_index(&self, i: usize) -> i64 {
        self.first_index + i as i64
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        self.lattice.coordinate(self.lattice_index(i))
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.coordinate(i)).collect()
    }

    pub fn circle_index(&self, i: usize) -> i64 {
        self.lattice.circle_index(self.lattice_index(i))
    }

    /// Sample position of a circle point, if it lies on this chart.
    pub fn position_of_circle_index(&self, c: i64) -> Option<usize> {
        let size = self.lattice.size;
        let offset = (c - self.first_index).rem_euclid(size) as usize;
        (offset < self.len()).then_some(offset)
    }

    pub fn theta_step(&self) -> f64 {
        TAU / self.n_theta as f64
    }

    fn offset(&self, i: usize, k: usize) -> usize {
        (i * (self.n_theta + 1) + k) * self.dim
    }

    /// Components of `|a(θ_k, ℓ_i)⟩`.
    pub fn state(&self, i: usize, k: usize) -> &[C64] {
        let o = self.offset(i, k);
        &self.data[o..o + self.dim]
    }

    pub fn state_vector(&self, i: usize, k: usize) -> CVector {
        CVector::from_column_slice(self.state(i, k))
    }

    /// `|a(θ=0, ℓ_i)⟩`, the Floquet eigenvector in this section's gauge.
    pub fn mu(&self, i: usize) -> CVector {
        self.state_vector(i, 0)
    }

    /// θ-averaged overlap `⟨a(ℓ_i)|a(ℓ_j)⟩` in the extended space.
    pub fn extended_overlap(&self, i: usize, j: usize) -> C64 {
        let h = self.theta_step();
        let vals: Vec<C64> = (0..=self.n_theta)
            .map(|k| dot(self.state(i, k), self.state(j, k)))
            .collect();
        crate::numerics::trapezoid(&vals, h) / TAU
    }

    /// Regauged section: states times `e^{iε(ℓ)} e^{ipθ}`, `χ ↦ χ + pω₀`.
    pub fn regauged(&self, epsilon: &dyn Fn(f64) -> f64, p: i64) -> LocalSection {
        let mut out = self.clone();
        let h = self.theta_step();
        for i in 0..self.len() {
            let e = epsilon(self.coordinate(i));
            out.chi[i] += p as f64 * self.omega0;
            for k in 0..=self.n_theta {
                let f = cis(e + p as f64 * k as f64 * h);
                let o = self.offset(i, k);
                for z in &mut out.data[o..o + self.dim] {
                    *z *= f;
                }
            }
        }
        out
    }

    /// Rows `(λ, branch, χ mod ω₀)` for quasienergy sweeps.
    pub fn sweep_rows(&self) -> Vec<(f64, usize, f64)> {
        (0..self.len())
            .map(|i| (self.coordinate(i), self.branches[i], self.chi[i].rem_euclid(self.omega0)))
            .collect()
    }

    /// Builds a section directly from samples (`states[i][k]` on the closed
    /// θ grid). Mostly useful for synthetic fixtures.
    pub fn from_samples(
        chart: usize,
        lattice: Lattice,
        first_index: i64,
        omega0: f64,
        chi: Vec<f64>,
        states: &[Vec<CVector>],
    ) -> Result<Self> {
        if states.len() != chi.len() || states.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: chi.len(),
                found: states.len(),
            });
        }
        let n_theta = states[0].len().saturating_sub(1);
        let dim = states[0].first().map(|v| v.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(states.len() * (n_theta + 1) * dim);
        for row in states {
            if row.len() != n_theta + 1 {
                return Err(Error::GridMismatch("ragged θ samples".into()));
            }
            for v in row {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
                }
                data.extend(v.iter().copied());
            }
        }
        Ok(Self {
            chart,
            lattice,
            first_index,
            omega0,
            dim,
            n_theta,
            branches: vec![0; chi.len()],
            chi,
            data,
        })
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Picks the eigenpair continuing `(mu_prev, chi_prev)`: largest overlap,
/// block closest to `chi_prev`, phase making the overlap real positive.
fn continue_branch(
    decomp: &FloquetDecomposition,
    mu_prev: &CVector,
    chi_prev: f64,
    coordinate: f64,
) -> Result<(usize, CVector, f64)> {
    let mut scored: Vec<(usize, f64)> = decomp
        .eigenpairs()
        .iter()
        .enumerate()
        .map(|(j, p)| (j, inner(mu_prev, &p.vector).norm()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    if scored.len() > 1 && scored[0].1 - scored[1].1 < AMBIGUITY_TOL {
        return Err(Error::NearDegeneracy {
            coordinate,
            best: scored[0].1,
            second: scored[1].1,
        });
    }
    let j = scored[0].0;
    let v = &decomp.eigenpairs()[j].vector;
    let ov = inner(mu_prev, v);
    let mu = v * (ov.conj() / ov.norm());
    let omega0 = decomp.omega0();
    let base = decomp.quasienergy(j);
    let chi = base + ((chi_prev - base) / omega0).round() * omega0;
    Ok((j, mu, chi))
}

/// Builds the chart section for one branch by continuation in λ.
///
/// Consecutive Floquet vectors `|a(θ=0)⟩` are made to overlap real
/// positively; the θ-dependence follows from `a(θ) = e^{iχθ/ω₀}U(θ)a(0)`.
pub fn build_local_section(
    atlas: &CircleAtlas,
    lattice: &Lattice,
    chart: usize,
    system: &dyn FloquetSystem,
    seed: BranchSeed<'_>,
    n_theta: usize,
) -> Result<LocalSection> {
    let c = *atlas.chart(chart)?;
    if (lattice.period - atlas.period).abs() > 1e-12 * atlas.period {
        return Err(Error::GridMismatch("lattice period differs from the atlas period".into()));
    }
    let (k_lo, k_hi) = lattice.interior_indices(c.start, c.end);
    if k_hi - k_lo + 1 < 5 {
        return Err(Error::GridTooCoarse(format!("chart {chart} holds {} λ samples", k_hi - k_lo + 1)));
    }
    let n = (k_hi - k_lo + 1) as usize;
    let omega0 = system.omega0();
    let decomps: Vec<FloquetDecomposition> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ell = lattice.coordinate(k_lo + i as i64);
            floquet_decompose(&system.propagator_samples(ell, n_theta)?, omega0)
        })
        .collect::<Result<_>>()?;

    // reference (position, μ, χ) the continuation starts from
    let (start, mu_ref, chi_ref) = match seed {
        BranchSeed::Floquet { anchor, branch, block } => {
            if !c.contains(anchor) {
                return Err(Error::InvalidArgument(format!("anchor {anchor} outside chart {chart}")));
            }
            let pos = ((anchor / lattice.step).round() as i64).clamp(k_lo, k_hi) - k_lo;
            let d = &decomps[pos as usize];
            let pair = d.eigenpairs().get(branch).ok_or_else(|| {
                Error::InvalidArgument(format!("branch {branch} out of range (dimension {})", d.dim()))
            })?;
            (pos as usize, pair.vector.clone(), d.quasienergy(branch) + block as f64 * omega0)
        }
        BranchSeed::Continue { from } => {
            if from.lattice != *lattice || from.n_theta != n_theta {
                return Err(Error::GridMismatch("seed section uses a different grid".into()));
            }
            let found = (0..n).find_map(|i| {
                from.position_of_circle_index(lattice.circle_index(k_lo + i as i64))
                    .map(|j| (i, j))
            });
            let (i, j) = found.ok_or_else(|| {
                Error::InvalidArgument(format!("chart {chart} shares no lattice point with chart {}", from.chart))
            })?;
            (i, from.mu(j), from.chi[j])
        }
    };

    let mut chosen: Vec<Option<(usize, CVector, f64)>> = vec![None; n];
    let coord = |i: usize| lattice.coordinate(k_lo + i as i64);
    chosen[start] = Some(continue_branch(&decomps[start], &mu_ref, chi_ref, coord(start))?);
    for i in start + 1..n {
        let (_, mu, chi) = chosen[i - 1].as_ref().unwrap();
        chosen[i] = Some(continue_branch(&decomps[i], mu, *chi, coord(i))?);
    }
    for i in (0..start).rev() {
        let (_, mu, chi) = chosen[i + 1].as_ref().unwrap();
        chosen[i] = Some(continue_branch(&decomps[i], mu, *chi, coord(i))?);
    }

    let h = TAU / n_theta as f64;
    let dim = system.dim();
    let mut data = Vec::with_capacity(n * (n_theta + 1) * dim);
    let mut chi = Vec::with_capacity(n);
    let mut branches = Vec::with_capacity(n);
    for (i, entry) in chosen.into_iter().enumerate() {
        let (j, mu, chi_i) = entry.unwrap();
        let d = &decomps[i];
        let shift = (chi_i - d.quasienergy(j)) / omega0;
        for (k, z) in d.z_samples().iter().enumerate() {
            let v = (z * &mu) * cis(shift * k as f64 * h);
            data.extend(v.iter().copied());
        }
        chi.push(chi_i);
        branches.push(j);
    }
    let section = LocalSection {
        chart,
        lattice: *lattice,
        first_index: k_lo,
        omega0,
        dim,
        n_theta,
        chi,
        branches,
        data,
    };
    for i in 1..n {
        let jump = (section.chi[i] - section.chi[i - 1]).abs();
        if jump >= omega0 / 4.0 {
            return Err(Error::GridTooCoarse(format!("χ jumps by {jump} at ℓ = {}", section.coordinate(i))));
        }
        let ov = section.extended_overlap(i - 1, i).norm();
        if ov <= 0.999 {
            return Err(Error::GridTooCoarse(format!(
                "consecutive section overlap {ov} at ℓ = {}",
                section.coordinate(i)
            )));
        }
    }
    Ok(section)
}

/// `|a⟩^β = e^{iφ^{αβ}(ℓ)} e^{in^{αβ}θ} |a⟩^α` on one overlap component.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionDatum {
    pub alpha: usize,
    pub beta: usize,
    pub component: usize,
    /// Sample coordinates in chart α.
    pub coords: Vec<f64>,
    pub circle_indices: Vec<i64>,
    pub phi: Vec<f64>,
    pub n: i64,
    /// Smallest dominant Fourier weight over the overlap.
    pub min_weight: f64,
}

impl TransitionDatum {
    /// `φ^{αβ}` interpolated at an α-coordinate.
    pub fn phi_at(&self, coord: f64) -> Result<f64> {
        let (lo, hi) = (self.coords[0], *self.coords.last().unwrap());
        if coord < lo - 1e-12 || coord > hi + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "coordinate {coord} outside sampled overlap [{lo}, {hi}] of charts ({}, {})",
                self.alpha, self.beta
            )));
        }
        let step = if self.coords.len() > 1 { self.coords[1] - self.coords[0] } else { 1.0 };
        Ok(interpolate(&self.phi, lo, step, coord))
    }

    pub fn phi_by_circle_index(&self) -> HashMap<i64, f64> {
        self.circle_indices.iter().copied().zip(self.phi.iter().copied()).collect()
    }

    /// Datum for the reversed pair.
    pub fn reversed(&self, beta_coords: Vec<f64>) -> TransitionDatum {
        TransitionDatum {
            alpha: self.beta,
            beta: self.alpha,
            component: self.component,
            coords: beta_coords,
            circle_indices: self.circle_indices.clone(),
            phi: self.phi.iter().map(|p| -p).collect(),
            n: -self.n,
            min_weight: self.min_weight,
        }
    }
}

/// Dominant θ-Fourier mode `(n, c_n, weight)` of `r(θ_k)`, `k = 0..N−1`.
fn dominant_mode(ratio: &[C64]) -> (i64, C64, f64) {
    let n = ratio.len();
    let mut winding = 0.0;
    for k in 0..n {
        let next = ratio[(k + 1) % n];
        winding += wrap_pi(next.arg() - ratio[k].arg());
    }
    let mode = (winding / TAU).round() as i64;
    let h = TAU / n as f64;
    let c: C64 = ratio
        .iter()
        .enumerate()
        .map(|(k, r)| r * cis(-(mode as f64) * k as f64 * h))
        .sum::<C64>()
        / n as f64;
    let total: f64 = ratio.iter().map(|r| r.norm_sqr()).sum::<f64>() / n as f64;
    let weight = if total > 0.0 { c.norm_sqr() / total } else { 0.0 };
    (mode, c, weight)
}

/// Transition data between two sections, one datum per overlap component
/// (ordered by α-coordinate).
pub fn compute_transition_datum(
    atlas: &CircleAtlas,
    alpha: &LocalSection,
    beta: &LocalSection,
) -> Result<Vec<TransitionDatum>> {
    if alpha.lattice != beta.lattice || alpha.n_theta != beta.n_theta || alpha.dim != beta.dim {
        return Err(Error::GridMismatch(format!(
            "sections on charts {} and {} use different grids",
            alpha.chart, beta.chart
        )));
    }
    let mut runs: Vec<Vec<(usize, usize)>> = Vec::new();
    for i in 0..alpha.len() {
        if let Some(j) = beta.position_of_circle_index(alpha.circle_index(i)) {
            match runs.last_mut() {
                Some(run) if run.last().map(|&(pi, pj)| pi + 1 == i && pj + 1 == j).unwrap_or(false) => {
                    run.push((i, j))
                }
                _ => runs.push(vec![(i, j)]),
            }
        }
    }
    let n_theta = alpha.n_theta;
    let mut out = Vec::with_capacity(runs.len());
    for run in runs {
        if run.len() < MIN_OVERLAP_SAMPLES {
            return Err(Error::GridTooCoarse(format!(
                "overlap of charts {} and {} holds {} λ samples (need {MIN_OVERLAP_SAMPLES})",
                alpha.chart,
                beta.chart,
                run.len()
            )));
        }
        let modes: Vec<(i64, C64, f64)> = run
            .par_iter()
            .map(|&(i, j)| {
                let ratio: Vec<C64> = (0..n_theta).map(|k| dot(alpha.state(i, k), beta.state(j, k))).collect();
                dominant_mode(&ratio)
            })
            .collect();
        let min_weight = modes.iter().map(|m| m.2).fold(f64::INFINITY, f64::min);
        if min_weight < FOURIER_DOMINANCE {
            return Err(Error::MismatchedBranch { weight: min_weight });
        }
        let n = modes[0].0;
        if modes.iter().any(|m| m.0 != n) {
            return Err(Error::MismatchedBranch { weight: min_weight });
        }
        let phases: Vec<f64> = modes.iter().map(|m| m.1.arg()).collect();
        let coords: Vec<f64> = run.iter().map(|&(i, _)| alpha.coordinate(i)).collect();
        let component = if alpha.chart == beta.chart {
            0
        } else {
            let idx = atlas
                .pair_component_at(alpha.chart, beta.chart, coords[coords.len() / 2])
                .ok_or_else(|| {
                    Error::GridMismatch(format!(
                        "shared samples of charts {} and {} lie outside their overlap",
                        alpha.chart, beta.chart
                    ))
                })?;
            atlas.overlaps[idx].component
        };
        out.push(TransitionDatum {
            alpha: alpha.chart,
            beta: beta.chart,
            component,
            circle_indices: run.iter().map(|&(i, _)| alpha.circle_index(i)).collect(),
            coords,
            phi: unwrap(&phases),
            n,
            min_weight,
        });
    }
    Ok(out)
}

/// Transition data for every overlapping pair `α < β` of a family of
/// sections indexed by chart.
pub fn compute_all_transitions(atlas: &CircleAtlas, sections: &[LocalSection]) -> Result<Vec<TransitionDatum>> {
    let mut pairs = Vec::new();
    for o in &atlas.overlaps {
        let pair = (o.charts[0], o.charts[1]);
        if !pairs.contains(&pair) {
            pairs.push(pair);
        }
    }
    let nested: Vec<Vec<TransitionDatum>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let sa = sections.iter().find(|s| s.chart == a);
            let sb = sections.iter().find(|s| s.chart == b);
            match (sa, sb) {
                (Some(sa), Some(sb)) => compute_transition_datum(atlas, sa, sb),
                _ => Err(Error::InvalidArgument(format!("missing section for chart pair ({a}, {b})"))),
            }
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Largest `|a^β − e^{iφ^{αβ}}e^{in^{αβ}θ}a^α|` over the overlap samples of one datum.
pub fn transition_residual(sections: &[LocalSection], datum: &TransitionDatum) -> Result<f64> {
    let find = |c: usize| {
        sections
            .iter()
            .find(|s| s.chart == c)
            .ok_or_else(|| Error::InvalidArgument(format!("missing section for chart {c}")))
    };
    let (sa, sb) = (find(datum.alpha)?, find(datum.beta)?);
    let mut worst: f64 = 0.0;
    for (&c, &phi) in datum.circle_indices.iter().zip(&datum.phi) {
        let (Some(i), Some(j)) = (sa.position_of_circle_index(c), sb.position_of_circle_index(c)) else {
            return Err(Error::GridMismatch(format!("circle index {c} missing from a section")));
        };
        for k in 0..sa.n_theta {
            let theta = k as f64 * sa.theta_step();
            let phase = cis(phi + datum.n as f64 * theta);
            for (x, y) in sa.state(i, k).iter().zip(sb.state(j, k)) {
                worst = worst.max((y - phase * x).norm());
            }
        }
    }
    Ok(worst)
}

/// `(n, φ by circle index)` of the oriented pair `(a, b)` on the component
/// `component` of their overlap, using antisymmetry if stored reversed.
fn oriented_pair(data: &[TransitionDatum], a: usize, b: usize, component: usize) -> Option<(i64, HashMap<i64, f64>)> {
    if let Some(d) = data.iter().find(|d| d.alpha == a && d.beta == b && d.component == component) {
        return Some((d.n, d.phi_by_circle_index()));
    }
    data.iter()
        .find(|d| d.alpha == b && d.beta == a && d.component == component)
        .map(|d| (-d.n, d.phi_by_circle_index().into_iter().map(|(k, p)| (k, -p)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripleCocycle {
    pub charts: [usize; 3],
    /// Index into `CircleAtlas::triples`.
    pub triple: usize,
    pub z: i64,
    /// Largest `|φ^{αβ} + φ^{βγ} + φ^{γα} − 2πz|` over the triple overlap.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadrupleClass {
    pub charts: [usize; 4],
    pub quadruple: usize,
    pub w: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CocycleClasses {
    pub z: Vec<TripleCocycle>,
    pub nu: i64,
    /// Whether `z` is an integer coboundary (trivial class).
    pub z_trivial: bool,
    pub w: Vec<QuadrupleClass>,
    /// Oriented traversal used for ν: `(from chart, to chart, overlap index)`.
    pub traversal: Vec<(usize, usize, usize)>,
}

/// Checks `n^{αβ} + n^{βγ} + n^{γα} = 0` and integrality of
/// `(φ^{αβ} + φ^{βγ} + φ^{γα})/2π` on every triple overlap.
pub fn verify_cocycles(atlas: &CircleAtlas, data: &[TransitionDatum]) -> Result<Vec<TripleCocycle>> {
    let mut out = Vec::with_capacity(atlas.triples.len());
    for (t, tri) in atlas.triples.iter().enumerate() {
        let [a, b, c] = [tri.charts[0], tri.charts[1], tri.charts[2]];
        let comp = |i: usize| atlas.overlaps[tri.faces[i]].component;
        let missing = || Error::InvalidArgument(format!("missing transition data on triple ({a}, {b}, {c})"));
        let (n_ab, p_ab) = oriented_pair(data, a, b, comp(0)).ok_or_else(missing)?;
        let (n_ac, p_ac) = oriented_pair(data, a, c, comp(1)).ok_or_else(missing)?;
        let (n_bc, p_bc) = oriented_pair(data, b, c, comp(2)).ok_or_else(missing)?;
        let n_sum = n_ab + n_bc - n_ac;
        if n_sum != 0 {
            return Err(Error::CocycleViolation {
                charts: vec![a, b, c],
                magnitude: n_sum as f64,
            });
        }
        let mut sums: Vec<(i64, f64)> = p_ab
            .iter()
            .filter_map(|(k, x)| Some((*k, x + p_bc.get(k)? - p_ac.get(k)?)))
            .collect();
        if sums.is_empty() {
            return Err(Error::GridTooCoarse(format!("no λ samples on triple overlap ({a}, {b}, {c})")));
        }
        sums.sort_by_key(|s| s.0);
        let z = (sums[0].1 / TAU).round();
        let residual = sums.iter().map(|s| (s.1 - TAU * z).abs()).fold(0.0, f64::max);
        if residual / TAU >= COCYCLE_TOL {
            return Err(Error::CocycleViolation {
                charts: vec![a, b, c],
                magnitude: residual,
            });
        }
        out.push(TripleCocycle {
            charts: [a, b, c],
            triple: t,
            z: z as i64,
            residual,
        });
    }
    Ok(out)
}

/// Oriented traversal of a circular atlas: `(from, to, overlap index)`
/// steps, going once around in increasing coordinate.
pub fn oriented_traversal(atlas: &CircleAtlas) -> Result<Vec<(usize, usize, usize)>> {
    let p = atlas.period;
    let reference = atlas.charts[0].start + 0.5 * atlas.charts[0].length();
    let mut current = 0usize;
    let mut offset = 0.0;
    let mut steps = Vec::new();
    let unrolled = |c: usize, off: f64| (atlas.charts[c].start + off, atlas.charts[c].end + off);
    let contains = |c: usize, off: f64, x: f64| {
        let (s, e) = unrolled(c, off);
        x > s && x < e
    };
    for _ in 0..4 * atlas.charts.len() + 4 {
        if contains(current, offset, reference + p) {
            if current != 0 {
                let idx = atlas
                    .pair_component_at(current, 0, reference)
                    .ok_or_else(|| Error::InvalidCover("traversal cannot close".into()))?;
                steps.push((current, 0, idx));
            }
            return Ok(steps);
        }
        let (cur_start, cur_end) = unrolled(current, offset);
        let mut best: Option<(usize, f64, f64)> = None;
        for d in 0..atlas.charts.len() {
            if d == current {
                continue;
            }
            let base = ((cur_end - atlas.charts[d].end) / p).ceil();
            for k in [base - 1.0, base, base + 1.0] {
                let off = k * p;
                let (s, e) = unrolled(d, off);
                if s < cur_end && e > cur_end && best.map(|b| e > b.2).unwrap_or(true) {
                    best = Some((d, off, e));
                }
            }
        }
        let (next, next_off, _) = best.ok_or_else(|| Error::InvalidCover("traversal stuck".into()))?;
        let lo = cur_start.max(atlas.charts[next].start + next_off);
        let idx = atlas
            .pair_component_at(current, next, 0.5 * (lo + cur_end))
            .ok_or_else(|| Error::InvalidCover("traversal step outside any overlap".into()))?;
        steps.push((current, next, idx));
        current = next;
        offset = next_off;
    }
    Err(Error::InvalidCover("traversal did not close".into()))
}

/// Oriented n-winding: the block shift acquired by a state continued once
/// around the circle, `ν = Σ n^{βα}` over traversal steps `α → β`.
pub fn n_winding(atlas: &CircleAtlas, data: &[TransitionDatum]) -> Result<(i64, Vec<(usize, usize, usize)>)> {
    let steps = oriented_traversal(atlas)?;
    let mut nu = 0;
    for &(from, to, idx) in &steps {
        let comp = atlas.overlaps[idx].component;
        let (n, _) = oriented_pair(data, to, from, comp)
            .ok_or_else(|| Error::InvalidArgument(format!("missing transition data for charts ({from}, {to})")))?;
        nu += n;
    }
    Ok((nu, steps))
}

/// Searches integers `x_v ∈ [−bound, bound]` with `Σ sign·x_v = target` for
/// every constraint. Returns one solution if any.
pub fn integer_coboundary_search(
    n_vars: usize,
    constraints: &[(Vec<(usize, i64)>, i64)],
    bound: i64,
) -> Option<Vec<i64>> {
    // a constraint is checked once all its variables are assigned
    let ready_at: Vec<usize> = constraints
        .iter()
        .map(|(terms, _)| terms.iter().map(|t| t.0).max().unwrap_or(0))
        .collect();
    let unconstrained: Vec<bool> = (0..n_vars)
        .map(|v| !constraints.iter().any(|(terms, _)| terms.iter().any(|t| t.0 == v)))
        .collect();
    fn go(
        v: usize,
        x: &mut Vec<i64>,
        constraints: &[(Vec<(usize, i64)>, i64)],
        ready_at: &[usize],
        unconstrained: &[bool],
        bound: i64,
    ) -> bool {
        if v == x.len() {
            return true;
        }
        let range: Vec<i64> = if unconstrained[v] { vec![0] } else { (-bound..=bound).collect() };
        for val in range {
            x[v] = val;
            let ok = constraints.iter().zip(ready_at).all(|((terms, target), &r)| {
                r != v || terms.iter().map(|&(i, s)| s * x[i]).sum::<i64>() == *target
            });
            if ok && go(v + 1, x, constraints, ready_at, unconstrained, bound) {
                return true;
            }
        }
        false
    }
    let mut x = vec![0; n_vars];
    if constraints.iter().any(|(terms, t)| terms.is_empty() && *t != 0) {
        return None;
    }
    go(0, &mut x, constraints, &ready_at, &unconstrained, bound).then_some(x)
}

/// Whether two z-cocycles (per triple overlap) differ by `δx` for integers
/// `x` on pair overlaps.
pub fn z_cohomologous(atlas: &CircleAtlas, z1: &[TripleCocycle], z2: &[TripleCocycle], bound: i64) -> bool {
    let diff = |t: usize| {
        let a = z1.iter().find(|z| z.triple == t).map(|z| z.z).unwrap_or(0);
        let b = z2.iter().find(|z| z.triple == t).map(|z| z.z).unwrap_or(0);
        b - a
    };
    let constraints: Vec<(Vec<(usize, i64)>, i64)> = atlas
        .triples
        .iter()
        .enumerate()
        .map(|(t, tri)| (vec![(tri.faces[2], 1), (tri.faces[1], -1), (tri.faces[0], 1)], diff(t)))
        .collect();
    integer_coboundary_search(atlas.overlaps.len(), &constraints, bound).is_some()
}

/// Whether two w-cochains (per quadruple overlap) differ by `δy` for
/// integers `y` on triple overlaps.
pub fn w_cohomologous(atlas: &CircleAtlas, w1: &[QuadrupleClass], w2: &[QuadrupleClass], bound: i64) -> bool {
    let diff = |q: usize| {
        let a = w1.iter().find(|w| w.quadruple == q).map(|w| w.w).unwrap_or(0);
        let b = w2.iter().find(|w| w.quadruple == q).map(|w| w.w).unwrap_or(0);
        b - a
    };
    let constraints: Vec<(Vec<(usize, i64)>, i64)> = atlas
        .quadruples
        .iter()
        .enumerate()
        .map(|(q, quad)| {
            let f = &quad.faces;
            (vec![(f[0], 1), (f[1], -1), (f[2], 1), (f[3], -1)], diff(q))
        })
        .collect();
    integer_coboundary_search(atlas.triples.len(), &constraints, bound).is_some()
}

/// z (per triple), ν (oriented n-winding), triviality of z and
/// `w^{αβγδ} = n^{αβ} z^{βγδ}` (per quadruple).
pub fn compute_cohomology_classes(atlas: &CircleAtlas, data: &[TransitionDatum]) -> Result<CocycleClasses> {
    let z = verify_cocycles(atlas, data)?;
    let (nu, traversal) = n_winding(atlas, data)?;
    let bound = z.iter().map(|t| t.z.abs()).max().unwrap_or(0).max(1);
    let z_trivial = z_cohomologous(atlas, &z, &[], bound);
    let mut w = Vec::with_capacity(atlas.quadruples.len());
    for (q, quad) in atlas.quadruples.iter().enumerate() {
        let ab = &atlas.overlaps[quad.faces[4]];
        let (n_ab, _) = oriented_pair(data, quad.charts[0], quad.charts[1], ab.component)
            .ok_or_else(|| Error::InvalidArgument("missing transition data on quadruple overlap".into()))?;
        let z_bcd = z.iter().find(|t| t.triple == quad.faces[0]).map(|t| t.z).unwrap_or(0);
        w.push(QuadrupleClass {
            charts: [quad.charts[0], quad.charts[1], quad.charts[2], quad.charts[3]],
            quadruple: q,
            w: n_ab * z_bcd,
        });
    }
    Ok(CocycleClasses {
        z,
        nu,
        z_trivial,
        w,
        traversal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Anholonomy {
    /// `permutation[j]`: branch reached at the loop end from branch `j`.
    pub permutation: Vec<usize>,
    pub block_shifts: Vec<i64>,
    pub chi_start: Vec<f64>,
    pub chi_end: Vec<f64>,
    /// Smallest quasienergy gap along the loop, in units of ω₀.
    pub min_gap: f64,
}

/// Follows every Floquet branch along `λ ∈ [start, start + length]` and
/// reports the induced permutation and block shifts.
pub fn detect_anholonomy(
    system: &dyn FloquetSystem,
    start: f64,
    length: f64,
    n_steps: usize,
    n_theta: usize,
) -> Result<Anholonomy> {
    if n_steps < 8 {
        return Err(Error::GridTooCoarse(format!("{n_steps} loop steps")));
    }
    let omega0 = system.omega0();
    let lambdas: Vec<f64> = (0..=n_steps)
        .map(|k| start + length * k as f64 / n_steps as f64)
        .collect();
    let pairs: Vec<_> = lambdas
        .par_iter()
        .map(|&lambda| {
            let prop = system.propagator_samples(lambda, n_theta)?;
            let eig = monodromy_eigenpairs(prop.monodromy()).map_err(|e| match e {
                Error::DegenerateSpectrum { gap } => Error::Crossing {
                    lambda,
                    gap: (gap * omega0 / TAU).abs(),
                },
                other => other,
            })?;
            let phases: Vec<f64> = eig.iter().map(|p| p.mu_phase).collect();
            let gap = if phases.len() > 1 { min_phase_gap(&phases) / TAU } else { f64::INFINITY };
            if gap < CROSSING_TOL {
                return Err(Error::Crossing {
                    lambda,
                    gap: gap * omega0,
                });
            }
            Ok((eig, gap))
        })
        .collect::<Result<_>>()?;
    let min_gap = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let chi_of = |k: usize, j: usize| omega0 * pairs[k].0[j].mu_phase / TAU;
    let dim = pairs[0].0.len();
    let mut permutation = Vec::with_capacity(dim);
    let mut block_shifts = Vec::with_capacity(dim);
    let mut chi_end = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut mu = pairs[0].0[j].vector.clone();
        let mut chi = chi_of(0, j);
        for k in 1..=n_steps {
            let mut scored: Vec<(usize, f64)> = pairs[k]
                .0
                .iter()
                .enumerate()
                .map(|(i, p)| (i, inner(&mu, &p.vector).norm()))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1));
            if scored.len() > 1 && scored[0].1 - scored[1].1 < AMBIGUITY_TOL {
                return Err(Error::NearDegeneracy {
                    coordinate: lambdas[k],
                    best: scored[0].1,
                    second: scored[1].1,
                });
            }
            let i = scored[0].0;
            let v = &pairs[k].0[i].vector;
            let ov = inner(&mu, v);
            mu = v * (ov.conj() / ov.norm());
            let base = chi_of(k, i);
            chi = base + ((chi - base) / omega0).round() * omega0;
        }
        // identify the end point with the start point of the closed loop
        let (target, _) = pairs[0]
            .0
            .iter()
            .enumerate()
            .map(|(i, p)| (i, inner(&mu, &p.vector).norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        permutation.push(target);
        block_shifts.push(((chi - chi_of(0, target)) / omega0).round() as i64);
        chi_end.push(chi);
    }
    Ok(Anholonomy {
        permutation,
        block_shifts,
        chi_start: (0..dim).map(|j| chi_of(0, j)).collect(),
        chi_end,
        min_gap,
    })
}

/// Standard three-chart cover of the 4π circle: `]−π, π[`, `]0, 3π[`, `]2π, 4π[`.
pub fn kicked_reference_atlas() -> CircleAtlas {
    build_circle_atlas(2.0 * TAU, &[(-PI, PI), (0.0, 3.0 * PI), (2.0 * PI, 4.0 * PI)]).expect("valid reference cover")
}

/// Sections on every chart of a circular atlas, seeded by a Floquet branch
/// on chart 0 and continued chart by chart along the oriented traversal.
pub fn build_chained_sections(
    atlas: &CircleAtlas,
    lattice: &Lattice,
    system: &dyn FloquetSystem,
    anchor: f64,
    branch: usize,
    block: i64,
    n_theta: usize,
) -> Result<Vec<LocalSection>> {
    let first = build_local_section(
        atlas,
        lattice,
        0,
        system,
        BranchSeed::Floquet { anchor, branch, block },
        n_theta,
    )?;
    let mut sections = vec![first];
    for (from, to, _) in oriented_traversal(atlas)? {
        if sections.iter().any(|s| s.chart == to) {
            continue;
        }
        let src = sections.iter().find(|s| s.chart == from).unwrap();
        let next = build_local_section(atlas, lattice, to, system, BranchSeed::Continue { from: src }, n_theta)?;
        sections.push(next);
    }
    // charts skipped by the traversal continue from any built neighbour
    while sections.len() < atlas.charts.len() {
        let mut progress = false;
        for to in 0..atlas.charts.len() {
            if sections.iter().any(|s| s.chart == to) {
                continue;
            }
            let neighbour = sections
                .iter()
                .find(|s| atlas.overlaps.iter().any(|o| o.charts.contains(&s.chart) && o.charts.contains(&to)));
            if let Some(src) = neighbour {
                let next = build_local_section(atlas, lattice, to, system, BranchSeed::Continue { from: src }, n_theta)?;
                sections.push(next);
                progress = true;
            }
        }
        if !progress {
            return Err(Error::InvalidCover("atlas is not connected".into()));
        }
    }
    sections.sort_by_key(|s| s.chart);
    Ok(sections)
}
