//! Surface holonomy over the world-sheet `C × S¹`, dynamical phase and the
//! adiabatic prediction `ψ(T) = e^{iδ} e^{−iγ} |a, λ(T)⟩`.
//!
//! Log-terms are accumulated and exponentiated once. Surface integrals use
//! the trapezoid rule over the closed θ grid and composite Simpson in t.
//! The θ-derivative of a kicked state jumps at the period boundary; that
//! jump contributes `−i⟨a(0)|G|a(0)⟩` per period to `∫⟨a|∂_θ a⟩dθ`, so each
//! chart segment carries a separate kick-boundary term next to `∬ f*B`.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::atlas::{CircleAtlas, LocalSection, TransitionDatum};
use crate::error::{Error, Result};
use crate::floquet::FloquetSystem;
use crate::gerbe::{ChartGrid, GerbeData, PairA};
use crate::linalg::{cis, expectation, CVector, ComplexValue, C64, I};
use crate::numerics::{interpolate, lagrange_weights, simpson, trapezoid};
use crate::propagator::KickedTwoLevelModel;

/// Smallest accepted quadrature grid (t intervals per segment × θ samples).
pub const MIN_T_INTERVALS: usize = 64;
pub const MIN_THETA_SAMPLES: usize = 256;

pub const ETA0_NOTE: &str = "eta_0 is computed from the sampled states; for the kicked two-level model it \
equals (i omega0/8 pi)(l/pi - 2 sin^2(l/4)). The alternative closed form (i omega0/8 pi)(l/pi - sin^2(l/4)) \
and the curvature -(i omega0/8 pi)(1/pi - sin(l/2)) derived from it are not reproduced; the curvature \
computed here is -(i omega0/8 pi)(1/pi - sin(l/2)/2). The reference target -exp(i omega0 T/4) is reported \
for comparison only; agreement with exact propagation is the binding check.";

pub type ScheduleFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Chart `chart` is used on `[t_in, t_out]` with coordinate `ℓ = λ(t) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub chart: usize,
    pub t_in: f64,
    pub t_out: f64,
    pub offset: f64,
}

#[derive(Clone)]
pub struct LoopSchedule {
    pub duration: f64,
    lambda: ScheduleFn,
    rate: ScheduleFn,
    pub segments: Vec<Segment>,
}

impl std::fmt::Debug for LoopSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoopSchedule")
            .field("duration", &self.duration)
            .field("segments", &self.segments)
            .finish()
    }
}

impl LoopSchedule {
    /// Schedule `λ(t)` with derivative `rate`, visiting `charts` in order and
    /// switching at `transition_times`.
    pub fn new(
        atlas: &CircleAtlas,
        duration: f64,
        lambda: ScheduleFn,
        rate: ScheduleFn,
        charts: &[usize],
        transition_times: &[f64],
    ) -> Result<Self> {
        if !(duration.is_finite() && duration >= 0.0) || (duration == 0.0 && charts.len() != 1) {
            return Err(Error::Schedule(format!("invalid duration {duration}")));
        }
        if charts.is_empty() || charts.len() != transition_times.len() + 1 {
            return Err(Error::Schedule(format!(
                "{} charts need {} transition times, got {}",
                charts.len(),
                charts.len().saturating_sub(1),
                transition_times.len()
            )));
        }
        let mut bounds = vec![0.0];
        bounds.extend_from_slice(transition_times);
        bounds.push(duration);
        if duration > 0.0 && bounds.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Schedule("transition times must increase strictly inside (0, T)".into()));
        }
        let mut segments = Vec::with_capacity(charts.len());
        for (s, &chart) in charts.iter().enumerate() {
            atlas.chart(chart).map_err(|e| Error::Schedule(e.to_string()))?;
            if s > 0 && charts[s - 1] == chart {
                return Err(Error::Schedule(format!("consecutive segments both use chart {chart}")));
            }
            let (t_in, t_out) = (bounds[s], bounds[s + 1]);
            let mid = lambda(0.5 * (t_in + t_out));
            let coord = atlas
                .to_chart(chart, mid)
                .ok_or_else(|| Error::Schedule(format!("segment {s} midpoint λ = {mid} is outside chart {chart}")))?;
            let offset = coord - mid;
            let c = atlas.charts[chart];
            for j in 0..=256 {
                let t = t_in + (t_out - t_in) * j as f64 / 256.0;
                let l = lambda(t);
                if !l.is_finite() {
                    return Err(Error::Schedule(format!("schedule undefined at t = {t}")));
                }
                if !c.contains(l + offset) {
                    return Err(Error::Schedule(format!(
                        "transition point outside overlap: λ({t}) = {l} leaves chart {chart}"
                    )));
                }
            }
            segments.push(Segment {
                chart,
                t_in,
                t_out,
                offset,
            });
        }
        Ok(Self {
            duration,
            lambda,
            rate,
            segments,
        })
    }

    /// `λ(t) = λ₀ + (λ₁ − λ₀)t/T` with transitions given as λ values.
    pub fn linear(
        atlas: &CircleAtlas,
        lambda_start: f64,
        lambda_end: f64,
        duration: f64,
        charts: &[usize],
        transition_lambdas: &[f64],
    ) -> Result<Self> {
        let span = lambda_end - lambda_start;
        if span == 0.0 && !transition_lambdas.is_empty() {
            return Err(Error::Schedule("constant schedule cannot have transitions".into()));
        }
        let times: Vec<f64> = transition_lambdas
            .iter()
            .map(|l| (l - lambda_start) / span * duration)
            .collect();
        let rate = if duration > 0.0 { span / duration } else { 0.0 };
        Self::new(
            atlas,
            duration,
            Arc::new(move |t| lambda_start + rate * t),
            Arc::new(move |_| rate),
            charts,
            &times,
        )
    }

    pub fn constant(atlas: &CircleAtlas, lambda0: f64, chart: usize, duration: f64) -> Result<Self> {
        Self::linear(atlas, lambda0, lambda0, duration, &[chart], &[])
    }

    pub fn lambda(&self, t: f64) -> f64 {
        (self.lambda)(t)
    }

    pub fn rate(&self, t: f64) -> f64 {
        (self.rate)(t)
    }

    pub fn transition_times(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.t_in).collect()
    }

    pub fn schedule_fn(&self) -> ScheduleFn {
        self.lambda.clone()
    }
}

/// Everything the holonomy needs about one family of chart sections.
pub struct HolonomyContext<'a> {
    pub atlas: &'a CircleAtlas,
    pub sections: &'a [LocalSection],
    pub transitions: &'a [TransitionDatum],
    pub gerbe: &'a GerbeData,
    pub system: &'a dyn FloquetSystem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadrature {
    /// Simpson intervals in t per segment (even).
    pub t_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { t_intervals: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentTerm {
    pub chart: usize,
    pub t_in: f64,
    pub t_out: f64,
    /// `∬ f*B^α` over the segment (gerbe route).
    pub surface: ComplexValue,
    /// Kick-boundary part `−i(ω₀/2π)∫⟨a(0)|G|a(0)⟩dt`.
    pub kick_boundary: ComplexValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeTerm {
    pub from: usize,
    pub to: usize,
    pub t: f64,
    pub lambda: f64,
    pub phi: f64,
    pub n: i64,
    /// `i(φ^{αβ} + n^{αβ}ω₀t^{αβ})`.
    pub log: ComplexValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub fidelity: f64,
    pub phase_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolonomyReport {
    pub phase: ComplexValue,
    pub log_phase: ComplexValue,
    pub surface_terms: Vec<SegmentTerm>,
    pub edge_terms: Vec<EdgeTerm>,
    /// Chart-product phase assembled from θ-integrated connection forms.
    pub composite_phase: ComplexValue,
    pub route_difference: f64,
    pub dynamical_phase: ComplexValue,
    /// `−e^{iω₀T/4}`, the closed-form target for the default kicked loop.
    pub reference_target: ComplexValue,
    pub oracle: Option<OracleComparison>,
    pub n_theta: usize,
    pub t_intervals: usize,
    pub note: String,
}

struct ChartTable {
    grid: ChartGrid,
    /// `∫ η_M dθ`, `∫ η_0 dθ` per λ sample.
    eta_m_int: Vec<C64>,
    eta_0_int: Vec<C64>,
    /// `(1/2π)∫⟨a|H_smooth|a⟩dθ`.
    energy: Vec<f64>,
    mu: Vec<CVector>,
}

fn chart_tables(ctx: &HolonomyContext<'_>) -> Result<Vec<ChartTable>> {
    ctx.gerbe
        .forms
        .par_iter()
        .map(|f| {
            let g = f.grid;
            let section = ctx
                .sections
                .iter()
                .find(|s| s.chart == g.chart)
                .ok_or_else(|| Error::InvalidArgument(format!("no section on chart {}", g.chart)))?;
            if section.len() != g.len || section.n_theta != g.n_theta {
                return Err(Error::GridMismatch(format!("section and forms differ on chart {}", g.chart)));
            }
            let ht = g.theta_step();
            let mut eta_m_int = Vec::with_capacity(g.len);
            let mut eta_0_int = Vec::with_capacity(g.len);
            let mut energy = Vec::with_capacity(g.len);
            let mut mu = Vec::with_capacity(g.len);
            for i in 0..g.len {
                let row = g.at(i, 0)..=g.at(i, g.n_theta);
                eta_m_int.push(trapezoid(&f.eta_m[row.clone()], ht));
                eta_0_int.push(trapezoid(&f.eta_0[row], ht));
                let l = g.coordinate(i);
                let e: Vec<f64> = (0..=g.n_theta)
                    .map(|k| {
                        let a = section.state_vector(i, k);
                        expectation(&a, &ctx.system.smooth_hamiltonian(l, k as f64 * ht)).re
                    })
                    .collect();
                energy.push(trapezoid(&e, ht) / TAU);
                mu.push(section.mu(i));
            }
            Ok(ChartTable {
                grid: g,
                eta_m_int,
                eta_0_int,
                energy,
                mu,
            })
        })
        .collect()
}

fn table_of(tables: &[ChartTable], chart: usize) -> Result<&ChartTable> {
    tables
        .iter()
        .find(|t| t.grid.chart == chart)
        .ok_or_else(|| Error::InvalidArgument(format!("no data for chart {chart}")))
}

fn t_nodes(seg: &Segment, intervals: usize) -> (Vec<f64>, f64) {
    let dt = (seg.t_out - seg.t_in) / intervals as f64;
    ((0..=intervals).map(|j| seg.t_in + j as f64 * dt).collect(), dt)
}

/// `⟨a(0)|G(λ)|a(0)⟩` per λ sample with the physical `λ = ℓ − offset`.
fn kick_expectations(ctx: &HolonomyContext<'_>, table: &ChartTable, offset: f64) -> Vec<f64> {
    (0..table.grid.len)
        .map(|i| {
            let lambda = table.grid.coordinate(i) - offset;
            ctx.system
                .kick_generator(lambda)
                .map(|g| expectation(&table.mu[i], &g).re)
                .unwrap_or(0.0)
        })
        .collect()
}

fn check_quadrature(ctx: &HolonomyContext<'_>, quad: &Quadrature) -> Result<()> {
    let n_theta = ctx.gerbe.forms.first().map(|f| f.grid.n_theta).unwrap_or(0);
    if quad.t_intervals < MIN_T_INTERVALS || quad.t_intervals % 2 != 0 || n_theta < MIN_THETA_SAMPLES {
        return Err(Error::GridTooCoarse(format!(
            "quadrature {}×{n_theta} (t × θ) below {MIN_T_INTERVALS}×{MIN_THETA_SAMPLES} or odd t count",
            quad.t_intervals
        )));
    }
    Ok(())
}

/// `φ^{αβ}` and `n^{αβ}` at the circle point `lambda` from gerbe A data.
fn edge_from_a(ctx: &HolonomyContext<'_>, from: usize, to: usize, lambda: f64) -> Result<(f64, i64)> {
    let idx = ctx
        .atlas
        .pair_component_at(from, to, lambda)
        .ok_or_else(|| Error::Schedule(format!("transition point outside overlap: λ = {lambda}, charts ({from}, {to})")))?;
    let ov = &ctx.atlas.overlaps[idx];
    let pa: &PairA = ctx
        .gerbe
        .a
        .iter()
        .find(|p| p.alpha == ov.charts[0] && p.beta == ov.charts[1] && p.component == ov.component)
        .ok_or_else(|| Error::InvalidArgument(format!("missing A on charts ({from}, {to})")))?;
    let grid = ctx
        .gerbe
        .forms_of(pa.alpha)
        .ok_or_else(|| Error::InvalidArgument(format!("missing forms on chart {}", pa.alpha)))?
        .grid;
    let first = grid.position(pa.circle_indices[0]).unwrap();
    let x = ctx.atlas.to_chart(pa.alpha, lambda).unwrap();
    let origin = grid.coordinate(first);
    let last = origin + (pa.phi.len() - 1) as f64 * grid.lambda_step();
    if x < origin - 1e-12 || x > last + 1e-12 {
        return Err(Error::Schedule(format!(
            "transition point outside overlap: λ = {lambda} not within sampled overlap of ({from}, {to})"
        )));
    }
    let phi = interpolate(&pa.phi, origin, grid.lambda_step(), x);
    Ok(if pa.alpha == from { (phi, pa.n) } else { (-phi, -pa.n) })
}

/// Same edge data read from the transition records.
fn edge_from_transitions(ctx: &HolonomyContext<'_>, from: usize, to: usize, lambda: f64) -> Result<(f64, i64)> {
    let idx = ctx
        .atlas
        .pair_component_at(from, to, lambda)
        .ok_or_else(|| Error::Schedule(format!("transition point outside overlap: λ = {lambda}")))?;
    let ov = &ctx.atlas.overlaps[idx];
    let d = ctx
        .transitions
        .iter()
        .find(|d| d.alpha == ov.charts[0] && d.beta == ov.charts[1] && d.component == ov.component)
        .ok_or_else(|| Error::InvalidArgument(format!("missing transition data on charts ({from}, {to})")))?;
    let phi = d.phi_at(ctx.atlas.to_chart(d.alpha, lambda).unwrap())?;
    Ok(if d.alpha == from { (phi, d.n) } else { (-phi, -d.n) })
}

/// Integrand of one t node: `∫ f*B dθ`, kick-boundary rate and `⟨H⟩_θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrandSample {
    pub segment: usize,
    pub chart: usize,
    pub t: f64,
    pub lambda: f64,
    pub surface: ComplexValue,
    pub kick_boundary: ComplexValue,
    pub energy: f64,
}

struct Holonomy {
    samples: Vec<IntegrandSample>,
    log: C64,
    composite_log: C64,
    segments: Vec<SegmentTerm>,
    edges: Vec<EdgeTerm>,
    dynamical: C64,
}

fn compute(ctx: &HolonomyContext<'_>, schedule: &LoopSchedule, quad: &Quadrature) -> Result<Holonomy> {
    check_quadrature(ctx, quad)?;
    let tables = chart_tables(ctx)?;
    let omega0 = ctx.gerbe.omega0;
    type SegmentSums = (C64, C64, C64, f64, Vec<IntegrandSample>);
    let per_segment: Vec<SegmentSums> = schedule
        .segments
        .par_iter()
        .enumerate()
        .map(|(s, seg)| -> Result<SegmentSums> {
            let table = table_of(&tables, seg.chart)?;
            let b = ctx
                .gerbe
                .b_of(seg.chart)
                .ok_or_else(|| Error::InvalidArgument(format!("no B on chart {}", seg.chart)))?;
            let g = table.grid;
            let (origin, step) = (g.coordinate(0), g.lambda_step());
            let kick = kick_expectations(ctx, table, seg.offset);
            let (ts, dt) = t_nodes(seg, quad.t_intervals);
            let mut gerbe_route = Vec::with_capacity(ts.len());
            let mut composite = Vec::with_capacity(ts.len());
            let mut kick_term = Vec::with_capacity(ts.len());
            let mut energy = Vec::with_capacity(ts.len());
            for &t in &ts {
                let l = schedule.lambda(t) + seg.offset;
                let rate = schedule.rate(t);
                // gerbe route: f*B = (b_λθ λ' − b_θt) dt∧dθ, θ-integrated after interpolation
                let (start, w) = lagrange_weights(g.len, origin, step, l, 6);
                let row: Vec<C64> = (0..=g.n_theta)
                    .map(|k| {
                        w.iter().enumerate().fold(C64::new(0.0, 0.0), |acc, (j, &wj)| {
                            let idx = g.at(start + j, k);
                            acc + (b.lambda_theta[idx] * rate - b.theta_t[idx]) * wj
                        })
                    })
                    .collect();
                gerbe_route.push(trapezoid(&row, g.theta_step()));
                composite.push(
                    interpolate(&table.eta_m_int, origin, step, l) * rate + interpolate(&table.eta_0_int, origin, step, l),
                );
                let q = interpolate(&kick, origin, step, l);
                kick_term.push(-I * (omega0 / TAU) * q);
                energy.push(interpolate(&table.energy, origin, step, l) + omega0 * q / TAU);
            }
            let samples = ts
                .iter()
                .enumerate()
                .map(|(j, &t)| IntegrandSample {
                    segment: s,
                    chart: seg.chart,
                    t,
                    lambda: schedule.lambda(t),
                    surface: gerbe_route[j].into(),
                    kick_boundary: kick_term[j].into(),
                    energy: energy[j],
                })
                .collect();
            Ok((
                simpson(&gerbe_route, dt),
                simpson(&composite, dt),
                simpson(&kick_term, dt),
                simpson(&energy, dt),
                samples,
            ))
        })
        .collect::<Result<_>>()?;

    let mut log = C64::new(0.0, 0.0);
    let mut composite_log = C64::new(0.0, 0.0);
    let mut energy = 0.0;
    let mut segments = Vec::with_capacity(per_segment.len());
    let mut samples = Vec::new();
    for (seg, (surface, comp, kick, e, rows)) in schedule.segments.iter().zip(per_segment) {
        samples.extend(rows);
        log += surface + kick;
        composite_log += comp + kick;
        energy += e;
        segments.push(SegmentTerm {
            chart: seg.chart,
            t_in: seg.t_in,
            t_out: seg.t_out,
            surface: surface.into(),
            kick_boundary: kick.into(),
        });
    }
    let mut edges = Vec::new();
    for w in schedule.segments.windows(2) {
        let (from, to, t) = (w[0].chart, w[1].chart, w[1].t_in);
        let lambda = schedule.lambda(t);
        let (phi, n) = edge_from_a(ctx, from, to, lambda)?;
        let (phi_b, n_b) = edge_from_transitions(ctx, from, to, lambda)?;
        let term = I * (phi + n as f64 * omega0 * t);
        log += term;
        composite_log += I * (phi_b + n_b as f64 * omega0 * t);
        edges.push(EdgeTerm {
            from,
            to,
            t,
            lambda,
            phi,
            n,
            log: term.into(),
        });
    }
    Ok(Holonomy {
        samples,
        log,
        composite_log,
        segments,
        edges,
        dynamical: cis(-energy),
    })
}

fn report_from(h: &Holonomy, schedule: &LoopSchedule, quad: &Quadrature, ctx: &HolonomyContext<'_>) -> HolonomyReport {
    let omega0 = ctx.gerbe.omega0;
    HolonomyReport {
        phase: h.log.exp().into(),
        log_phase: h.log.into(),
        surface_terms: h.segments.clone(),
        edge_terms: h.edges.clone(),
        composite_phase: h.composite_log.exp().into(),
        route_difference: (h.log.exp() - h.composite_log.exp()).norm(),
        dynamical_phase: h.dynamical.into(),
        reference_target: (-cis(omega0 * schedule.duration / 4.0)).into(),
        oracle: None,
        n_theta: ctx.gerbe.forms.first().map(|f| f.grid.n_theta).unwrap_or(0),
        t_intervals: quad.t_intervals,
        note: ETA0_NOTE.to_string(),
    }
}

/// `e^{iγ(S)}` with all intermediate terms.
pub fn surface_holonomy(ctx: &HolonomyContext<'_>, schedule: &LoopSchedule, quad: &Quadrature) -> Result<HolonomyReport> {
    let h = compute(ctx, schedule, quad)?;
    Ok(report_from(&h, schedule, quad, ctx))
}

/// Per-node integrands of every segment, in schedule order.
pub fn surface_integrand(ctx: &HolonomyContext<'_>, schedule: &LoopSchedule, quad: &Quadrature) -> Result<Vec<IntegrandSample>> {
    Ok(compute(ctx, schedule, quad)?.samples)
}

/// `e^{iδ(T)} = exp(−i∫⟨H⟩dt)`, the kick delta contributing
/// `(ω₀/2π)⟨a(0)|G(λ(t))|a(0)⟩` to the θ-averaged energy.
pub fn dynamical_phase(ctx: &HolonomyContext<'_>, schedule: &LoopSchedule, quad: &Quadrature) -> Result<C64> {
    Ok(compute(ctx, schedule, quad)?.dynamical)
}

/// Section state `|a(θ=0)⟩` of `chart` at circle point `lambda`.
fn section_state(ctx: &HolonomyContext<'_>, chart: usize, lambda: f64) -> Result<CVector> {
    let s = ctx
        .sections
        .iter()
        .find(|s| s.chart == chart)
        .ok_or_else(|| Error::InvalidArgument(format!("no section on chart {chart}")))?;
    let l = ctx
        .atlas
        .to_chart(chart, lambda)
        .ok_or_else(|| Error::Schedule(format!("λ = {lambda} outside chart {chart}")))?;
    let (origin, step) = (s.coordinate(0), s.lattice.step);
    let mut v = CVector::zeros(s.dim);
    for c in 0..s.dim {
        let comp: Vec<C64> = (0..s.len()).map(|i| s.state(i, 0)[c]).collect();
        v[c] = interpolate(&comp, origin, step, l);
    }
    let norm = v.norm();
    Ok(v / C64::new(norm, 0.0))
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub initial: CVector,
    pub state: CVector,
    pub report: HolonomyReport,
}

/// Initial section state and `e^{iδ}e^{−iγ}|a(θ=0, λ(T))⟩^ζ`.
pub fn adiabatic_prediction(ctx: &HolonomyContext<'_>, schedule: &LoopSchedule, quad: &Quadrature) -> Result<Prediction> {
    let periods = ctx.gerbe.omega0 * schedule.duration / TAU;
    if (periods - periods.round()).abs() > 1e-9 * periods.max(1.0) {
        return Err(Error::Schedule(format!("ω₀T = 2π·{periods} is not a multiple of 2π")));
    }
    let first = schedule.segments.first().unwrap();
    let last = schedule.segments.last().unwrap();
    let initial = section_state(ctx, first.chart, schedule.lambda(0.0))?;
    let end = section_state(ctx, last.chart, schedule.lambda(schedule.duration))?;
    let h = compute(ctx, schedule, quad)?;
    let state = end * (h.dynamical * (-h.log).exp());
    Ok(Prediction {
        initial,
        state,
        report: report_from(&h, schedule, quad, ctx),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub kicks: usize,
    pub duration: f64,
    pub fidelity: f64,
    pub phase_error: f64,
    pub holonomy: ComplexValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Mean `log₂` ratio of successive phase errors.
    pub phase_order: f64,
    /// Mean `log₂` ratio of successive fidelity deficits.
    pub fidelity_order: f64,
    pub converging: bool,
}

/// Compares the prediction with exact kicked propagation for each kick count
/// `K` (duration `2πK/ω₀`).
pub fn verify_against_exact(
    model: &KickedTwoLevelModel,
    ctx: &HolonomyContext<'_>,
    schedule_for: &(dyn Fn(f64) -> Result<LoopSchedule> + Sync),
    kick_counts: &[usize],
    quad: &Quadrature,
) -> Result<ConvergenceTable> {
    if kick_counts.is_empty() || kick_counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("kick counts must be non-empty and increasing".into()));
    }
    let rows: Vec<ConvergenceRow> = kick_counts
        .par_iter()
        .map(|&k| {
            let duration = TAU * k as f64 / model.omega0();
            let schedule = schedule_for(duration)?;
            let pred = adiabatic_prediction(ctx, &schedule, quad)?;
            let lambda = schedule.schedule_fn();
            let u = model.propagate_exact(&*lambda, duration)?;
            let exact = u.apply(&pred.initial);
            let ov = pred.state.dotc(&exact);
            Ok(ConvergenceRow {
                kicks: k,
                duration,
                fidelity: ov.norm(),
                phase_error: ov.arg(),
                holonomy: pred.report.phase,
            })
        })
        .collect::<Result<_>>()?;
    let order = |f: &dyn Fn(&ConvergenceRow) -> f64| {
        let ratios: Vec<f64> = rows
            .windows(2)
            .filter(|w| f(&w[1]) > 0.0 && f(&w[0]) > 0.0)
            .map(|w| (f(&w[0]) / f(&w[1])).log2())
            .collect();
        if ratios.is_empty() {
            f64::NAN
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        }
    };
    let phase_order = order(&|r| r.phase_error.abs());
    let fidelity_order = order(&|r| 1.0 - r.fidelity);
    let converging = rows.windows(2).all(|w| w[1].phase_error.abs() <= w[0].phase_error.abs());
    Ok(ConvergenceTable {
        rows,
        phase_order,
        fidelity_order,
        converging,
    })
}

/// Default kicked loop on the reference atlas: `λ(t) = 4πt/T` through charts
/// 1, 2, 3, 1 with transitions at `λ = π/2, 5π/2` and `λ^{31}`.
pub fn reference_loop(atlas: &CircleAtlas, duration: f64, lambda_31: f64) -> Result<LoopSchedule> {
    LoopSchedule::linear(atlas, 0.0, 4.0 * PI, duration, &[0, 1, 2, 0], &[PI / 2.0, 5.0 * PI / 2.0, lambda_31])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::{build_chained_sections, compute_all_transitions, kicked_reference_atlas, Lattice};
    use crate::floquet::{floquet_decompose, moore_stedman_phase_split};
    use crate::gerbe::{apply_gauge, assemble_gerbe, RestrictedGauge};

    struct Fixture {
        atlas: CircleAtlas,
        sections: Vec<LocalSection>,
        transitions: Vec<TransitionDatum>,
        gerbe: GerbeData,
        model: KickedTwoLevelModel,
    }

    impl Fixture {
        fn new(n_lambda: usize, n_theta: usize) -> Self {
            let atlas = kicked_reference_atlas();
            let lattice = Lattice::new(atlas.period, n_lambda).unwrap();
            let model = KickedTwoLevelModel::new(1.0, 1.0).unwrap();
            let sections = build_chained_sections(&atlas, &lattice, &model, 0.0, 0, 0, n_theta).unwrap();
            let transitions = compute_all_transitions(&atlas, &sections).unwrap();
            let gerbe = assemble_gerbe(&atlas, &sections, &transitions).unwrap();
            Self {
                atlas,
                sections,
                transitions,
                gerbe,
                model,
            }
        }

        fn ctx(&self) -> HolonomyContext<'_> {
            HolonomyContext {
                atlas: &self.atlas,
                sections: &self.sections,
                transitions: &self.transitions,
                gerbe: &self.gerbe,
                system: &self.model,
            }
        }
    }

    #[test]
    fn schedule_validation() {
        let atlas = kicked_reference_atlas();
        assert!(reference_loop(&atlas, 10.0, 3.5 * PI).is_ok());
        assert!(matches!(reference_loop(&atlas, 10.0, 2.5 * PI), Err(Error::Schedule(_))));
        assert!(matches!(
            LoopSchedule::linear(&atlas, 0.0, 4.0 * PI, 1.0, &[0, 1], &[]),
            Err(Error::Schedule(_))
        ));
        assert!(matches!(LoopSchedule::constant(&atlas, 0.0, 0, -1.0), Err(Error::Schedule(_))));
    }

    #[test]
    fn routes_agree_and_phase_is_unimodular() {
        let fx = Fixture::new(128, 256);
        let sched = reference_loop(&fx.atlas, TAU * 64.0, 3.5 * PI).unwrap();
        let rep = surface_holonomy(&fx.ctx(), &sched, &Quadrature::default()).unwrap();
        let phase: C64 = rep.phase.into();
        assert!((phase.norm() - 1.0).abs() < 1e-10);
        assert!(rep.route_difference < 1e-10, "{}", rep.route_difference);
        assert_eq!(rep.edge_terms.len(), 3);
        assert_eq!(rep.edge_terms[2].n, -1);
    }

    #[test]
    fn zero_kick_constant_schedule() {
        let fx = Fixture::new(64, 256);
        let sched = LoopSchedule::constant(&fx.atlas, 0.0, 0, TAU * 5.0).unwrap();
        let pred = adiabatic_prediction(&fx.ctx(), &sched, &Quadrature::default()).unwrap();
        let phase: C64 = pred.report.phase.into();
        let dynamical: C64 = pred.report.dynamical_phase.into();
        assert!((phase - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((dynamical - C64::new(1.0, 0.0)).norm() < 1e-12);
        let exact = fx.model.monodromy(0.0).apply(&pred.initial);
        assert!((pred.state - exact).norm() < 1e-12);
    }

    #[test]
    fn zero_duration_leaves_state_unchanged() {
        let fx = Fixture::new(64, 256);
        let sched = LoopSchedule::constant(&fx.atlas, 0.7, 0, 0.0).unwrap();
        let pred = adiabatic_prediction(&fx.ctx(), &sched, &Quadrature::default()).unwrap();
        assert!((pred.state - pred.initial).norm() < 1e-14);
        let bad = LoopSchedule::constant(&fx.atlas, 0.7, 0, 1.0).unwrap();
        assert!(matches!(adiabatic_prediction(&fx.ctx(), &bad, &Quadrature::default()), Err(Error::Schedule(_))));
    }

    #[test]
    fn lower_branch_dynamical_phase() {
        let atlas = kicked_reference_atlas();
        let lattice = Lattice::new(atlas.period, 64).unwrap();
        let model = KickedTwoLevelModel::new(1.0, 1.0).unwrap();
        let sections = build_chained_sections(&atlas, &lattice, &model, 0.0, 1, 0, 256).unwrap();
        let transitions = compute_all_transitions(&atlas, &sections).unwrap();
        let gerbe = assemble_gerbe(&atlas, &sections, &transitions).unwrap();
        let ctx = HolonomyContext {
            atlas: &atlas,
            sections: &sections,
            transitions: &transitions,
            gerbe: &gerbe,
            system: &model,
        };
        let duration = TAU * 3.0;
        let sched = LoopSchedule::constant(&atlas, 0.0, 0, duration).unwrap();
        let d = dynamical_phase(&ctx, &sched, &Quadrature::default()).unwrap();
        assert!((d - cis(-0.5 * duration)).norm() < 1e-10);
    }

    #[test]
    fn constant_schedule_matches_floquet_factors() {
        let fx = Fixture::new(256, 1024);
        let lambda0 = 1.1;
        let kicks = 7;
        let sched = LoopSchedule::constant(&fx.atlas, lambda0, 0, TAU * kicks as f64).unwrap();
        let pred = adiabatic_prediction(&fx.ctx(), &sched, &Quadrature::default()).unwrap();
        let d = floquet_decompose(&fx.model.propagator_samples(lambda0, 1024).unwrap(), 1.0).unwrap();
        let j = d.eigenpairs().iter().position(|p| (p.mu_phase - lambda0 / 2.0).abs() < 1e-9).unwrap();
        let split = moore_stedman_phase_split(&fx.model, lambda0, &d, j).unwrap();
        let phase: C64 = pred.report.phase.into();
        let expected_inv = split.geometric.powi(kicks);
        assert!((phase.inv() - expected_inv).norm() < 1e-6);
        let exact = fx.model.propagate_exact(&|_| lambda0, TAU * kicks as f64).unwrap().apply(&pred.initial);
        assert!((pred.state.dotc(&exact) - C64::new(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn transition_point_independence() {
        let fx = Fixture::new(256, 256);
        let duration = TAU * 128.0;
        let ctx = fx.ctx();
        let base: C64 = surface_holonomy(&ctx, &reference_loop(&fx.atlas, duration, 3.5 * PI).unwrap(), &Quadrature::default())
            .unwrap()
            .phase
            .into();
        for l31 in [3.1 * PI, 3.3 * PI, 3.75 * PI, 3.9 * PI] {
            let p: C64 = surface_holonomy(&ctx, &reference_loop(&fx.atlas, duration, l31).unwrap(), &Quadrature::default())
                .unwrap()
                .phase
                .into();
            assert!((p - base).norm() < 1e-6, "λ31 = {l31}: {}", (p - base).norm());
        }
    }

    #[test]
    fn gauge_invariance() {
        let fx = Fixture::new(256, 256);
        let sched = reference_loop(&fx.atlas, TAU * 64.0, 3.5 * PI).unwrap();
        let base: C64 = surface_holonomy(&fx.ctx(), &sched, &Quadrature::default()).unwrap().phase.into();
        let mut gauge = RestrictedGauge::identity(&fx.atlas);
        gauge.p = vec![1, -2, 2];
        gauge.m = vec![1, 0, -1];
        gauge.epsilon[0].modes = vec![(0.4, 0.7, 0.2)];
        gauge.epsilon[1].constant = 1.3;
        gauge.epsilon[2].modes = vec![(-0.3, 1.1, 2.0)];
        let (s2, t2, g2) = apply_gauge(&fx.atlas, &fx.sections, &fx.transitions, &fx.gerbe, &gauge).unwrap();
        let ctx2 = HolonomyContext {
            atlas: &fx.atlas,
            sections: &s2,
            transitions: &t2,
            gerbe: &g2,
            system: &fx.model,
        };
        let p: C64 = surface_holonomy(&ctx2, &sched, &Quadrature::default()).unwrap().phase.into();
        assert!((p - base).norm() < 1e-8, "{}", (p - base).norm());
    }

    #[test]
    fn prediction_tracks_exact_evolution() {
        let run = |n_lambda| {
            let fx = Fixture::new(n_lambda, 256);
            let atlas = &fx.atlas;
            verify_against_exact(
                &fx.model,
                &fx.ctx(),
                &|t| reference_loop(atlas, t, 3.5 * PI),
                &[64, 256],
                &Quadrature::default(),
            )
            .unwrap()
        };
        let coarse = run(256);
        let fine = run(512);
        for r in coarse.rows.iter().chain(&fine.rows) {
            assert!(r.fidelity > 0.9999 && r.phase_error.abs() < 2e-4, "{r:?}");
        }
        for (c, f) in coarse.rows.iter().zip(&fine.rows) {
            assert!(c.phase_error.abs() > 3.0 * f.phase_error.abs(), "{c:?} {f:?}");
        }
    }

    #[test]
    fn coarse_quadrature_rejected() {
        let fx = Fixture::new(64, 64);
        let sched = reference_loop(&fx.atlas, TAU * 8.0, 3.5 * PI).unwrap();
        assert!(matches!(
            surface_holonomy(&fx.ctx(), &sched, &Quadrature::default()),
            Err(Error::GridTooCoarse(_))
        ));
    }
}
