//! Experiment runners behind the `quasienergies`, `anholonomy`, `holonomy`
//! and `verify` subcommands.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ConfigError, Format, Model, ModelConfig, RunConfig, ScheduleConfig, ScheduleKind};
use crate::atlas::{
    build_chained_sections, compute_all_transitions, compute_cohomology_classes, detect_anholonomy, transition_residual, verify_cocycles,
    w_cohomologous, Anholonomy, CircleAtlas, Lattice, LocalSection, TransitionDatum, CROSSING_TOL,
};
use crate::error::Error;
use crate::floquet::{floquet_decompose, min_phase_gap, monodromy_eigenpairs, moore_stedman_phase_split};
use crate::gerbe::{apply_gauge, assemble_gerbe, curvature_h, verify_gerbe_gluing, GaugeFunction, GerbeData, GluingReport, RestrictedGauge};
use crate::holonomy::{
    adiabatic_prediction, surface_holonomy, surface_integrand, verify_against_exact, ConvergenceTable, HolonomyContext,
    HolonomyReport, LoopSchedule, OracleComparison, Quadrature,
};
use crate::linalg::{inner, CVector, ComplexValue, C64};
use crate::numerics::{sig12, wrap_tau};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Compute(#[from] Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Files written by a command and whether all checked invariants held.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub passed: bool,
}

fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(x) = n.as_f64().filter(|_| !n.is_i64() && !n.is_u64()) {
                if let Some(r) = serde_json::Number::from_f64(sig12(x)) {
                    *n = r;
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// JSON with a top-level `schema_version` and floats at 12 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("report serializes");
    round_json(&mut v);
    let mut out = serde_json::Map::new();
    out.insert("schema_version".into(), SCHEMA_VERSION.into());
    match v {
        serde_json::Value::Object(o) => out.extend(o),
        other => {
            out.insert("data".into(), other);
        }
    }
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(out)).unwrap();
    s.push('\n');
    s
}

fn num(x: f64) -> String {
    let x = sig12(x);
    if x != 0.0 && (x.abs() < 1e-4 || x.abs() >= 1e15) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn write_file(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

fn wants(cfg: &RunConfig, f: Format) -> bool {
    cfg.output.formats.contains(&f)
}

fn monodromy_of(model: &Model, lambda: f64, n_theta: usize) -> crate::Result<crate::UnitaryMatrix> {
    match model {
        Model::Kicked(m) => Ok(m.monodromy(lambda)),
        Model::Generic(m) => Ok(crate::floquet::FloquetSystem::propagator_samples(m, lambda, n_theta)?
            .monodromy()
            .clone()),
    }
}

// ---------------------------------------------------------------- quasienergies

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasienergyRow {
    pub omega0_over_omega1: f64,
    pub lambda: f64,
    pub branch: usize,
    pub chi_mod_omega0: f64,
    pub chart: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingRow {
    pub omega0_over_omega1: f64,
    pub lambda: f64,
    /// Smallest quasienergy gap in units of `ω₀`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasienergyDataset {
    pub rows: Vec<QuasienergyRow>,
    pub crossings: Vec<CrossingRow>,
}

fn ratio_model(cfg: &ModelConfig, ratio: f64) -> ModelConfig {
    match cfg {
        ModelConfig::KickedTwoLevel { omega1, .. } => cfg.with_omega0(ratio * omega1),
        ModelConfig::GenericPeriodic { omega0, .. } => cfg.with_omega0(ratio * omega0),
    }
}

/// Quasienergy branches over `λ ∈ [0, λ_max]` for one frequency ratio.
/// Branch labels follow eigenvector continuity and restart after a crossing.
pub fn sweep_quasienergies(cfg: &RunConfig, ratio: f64) -> CliResult<QuasienergyDataset> {
    let model = ratio_model(&cfg.model, ratio).build()?;
    let atlas = cfg.atlas()?;
    let omega0 = model.system().omega0();
    let n = cfg.sweep.lambda_samples;
    let lambdas: Vec<f64> = (0..=n).map(|k| cfg.sweep.lambda_max * k as f64 / n as f64).collect();
    let spectra: Vec<Result<Vec<(f64, CVector)>, f64>> = lambdas
        .par_iter()
        .map(|&l| {
            let m = monodromy_of(&model, l, cfg.grids.n_theta)?;
            Ok(match monodromy_eigenpairs(&m) {
                Ok(eig) => {
                    let phases: Vec<f64> = eig.iter().map(|p| p.mu_phase).collect();
                    let gap = if phases.len() > 1 { min_phase_gap(&phases) / TAU } else { f64::INFINITY };
                    if gap < CROSSING_TOL {
                        Err(gap)
                    } else {
                        Ok(eig.into_iter().map(|p| (p.mu_phase, p.vector)).collect())
                    }
                }
                Err(Error::DegenerateSpectrum { gap }) => Err(gap / TAU),
                Err(e) => return Err(e),
            })
        })
        .collect::<crate::Result<_>>()?;

    let mut rows = Vec::new();
    let mut crossings = Vec::new();
    let mut previous: Option<Vec<CVector>> = None;
    for (&lambda, spec) in lambdas.iter().zip(spectra) {
        let eig = match spec {
            Ok(e) => e,
            Err(gap) => {
                crossings.push(CrossingRow {
                    omega0_over_omega1: ratio,
                    lambda,
                    gap,
                });
                previous = None;
                continue;
            }
        };
        let order: Vec<usize> = match &previous {
            None => (0..eig.len()).collect(),
            Some(prev) => {
                let mut taken = vec![false; eig.len()];
                prev.iter()
                    .map(|v| {
                        let best = (0..eig.len())
                            .filter(|&i| !taken[i])
                            .max_by(|&a, &b| inner(v, &eig[a].1).norm().total_cmp(&inner(v, &eig[b].1).norm()))
                            .unwrap();
                        taken[best] = true;
                        best
                    })
                    .collect()
            }
        };
        let chart = (0..atlas.charts.len()).find(|&c| atlas.to_chart(c, lambda).is_some());
        for (branch, &i) in order.iter().enumerate() {
            rows.push(QuasienergyRow {
                omega0_over_omega1: ratio,
                lambda,
                branch,
                chi_mod_omega0: omega0 * wrap_tau(eig[i].0) / TAU,
                chart,
            });
        }
        previous = Some(order.iter().map(|&i| eig[i].1.clone()).collect());
    }
    Ok(QuasienergyDataset { rows, crossings })
}

pub fn quasienergy_csv(data: &QuasienergyDataset) -> (String, String) {
    let mut main = String::from("omega0_over_omega1,lambda,branch,chi_mod_omega0,chart\n");
    for r in &data.rows {
        let chart = r.chart.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(
            main,
            "{},{},{},{},{}",
            num(r.omega0_over_omega1),
            num(r.lambda),
            r.branch,
            num(r.chi_mod_omega0),
            chart
        );
    }
    let mut cross = String::from("omega0_over_omega1,lambda,gap\n");
    for c in &data.crossings {
        let _ = writeln!(cross, "{},{},{}", num(c.omega0_over_omega1), num(c.lambda), num(c.gap));
    }
    (main, cross)
}

pub fn cmd_quasienergies(cfg: &RunConfig, out: &Path) -> CliResult<Outcome> {
    let parts: Vec<QuasienergyDataset> = cfg
        .sweep
        .frequency_ratios
        .iter()
        .map(|&r| sweep_quasienergies(cfg, r))
        .collect::<CliResult<_>>()?;
    let data = QuasienergyDataset {
        rows: parts.iter().flat_map(|p| p.rows.clone()).collect(),
        crossings: parts.iter().flat_map(|p| p.crossings.clone()).collect(),
    };
    let mut files = Vec::new();
    if wants(cfg, Format::Csv) {
        let (main, cross) = quasienergy_csv(&data);
        write_file(out, "quasienergies.csv", &main, &mut files)?;
        write_file(out, "crossings.csv", &cross, &mut files)?;
    }
    if wants(cfg, Format::Json) {
        write_file(out, "quasienergies.json", &to_json(&data), &mut files)?;
    }
    Ok(Outcome { files, passed: true })
}

// ---------------------------------------------------------------- shared pipeline

/// Sections, transitions and gerbe of one branch on the configured atlas.
pub struct Pipeline {
    pub model: Model,
    pub atlas: CircleAtlas,
    pub lattice: Lattice,
    pub sections: Vec<LocalSection>,
    pub transitions: Vec<TransitionDatum>,
    pub gerbe: GerbeData,
}

impl Pipeline {
    pub fn build(cfg: &RunConfig, n_lambda: usize, n_theta: usize) -> CliResult<Self> {
        let model = cfg.model.build()?;
        let atlas = cfg.atlas()?;
        let lattice = Lattice::new(atlas.period, n_lambda)?;
        let (anchor, branch) = cfg.schedule.as_ref().map(|s| (s.anchor, s.branch)).unwrap_or((0.0, 0));
        let sections = build_chained_sections(&atlas, &lattice, model.system(), anchor, branch, 0, n_theta)?;
        let transitions = compute_all_transitions(&atlas, &sections)?;
        let gerbe = assemble_gerbe(&atlas, &sections, &transitions)?;
        Ok(Self {
            model,
            atlas,
            lattice,
            sections,
            transitions,
            gerbe,
        })
    }

    pub fn ctx(&self) -> HolonomyContext<'_> {
        HolonomyContext {
            atlas: &self.atlas,
            sections: &self.sections,
            transitions: &self.transitions,
            gerbe: &self.gerbe,
            system: self.model.system(),
        }
    }
}

fn schedule_error(e: Error) -> CliError {
    match e {
        Error::Schedule(msg) => CliError::Config(ConfigError {
            path: "schedule".into(),
            message: msg,
        }),
        other => CliError::Compute(other),
    }
}

/// Loop schedule of the config at duration `duration`.
pub fn build_schedule(s: &ScheduleConfig, atlas: &CircleAtlas, duration: f64) -> CliResult<LoopSchedule> {
    let end = s.lambda_end(atlas.period);
    match s.kind {
        ScheduleKind::Constant => LoopSchedule::constant(atlas, s.lambda_start, s.charts[0], duration),
        ScheduleKind::Linear => LoopSchedule::linear(atlas, s.lambda_start, end, duration, &s.charts, &s.transitions),
    }
    .map_err(schedule_error)
}

fn required_schedule(cfg: &RunConfig) -> CliResult<&ScheduleConfig> {
    cfg.schedule.as_ref().ok_or_else(|| {
        CliError::Config(ConfigError {
            path: "schedule".into(),
            message: "required by this command".into(),
        })
    })
}

fn quadrature(cfg: &RunConfig) -> Quadrature {
    Quadrature {
        t_intervals: cfg.grids.n_t,
    }
}

// ---------------------------------------------------------------- anholonomy

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopResult {
    pub length: f64,
    pub permutation: Vec<usize>,
    pub block_shifts: Vec<i64>,
    pub chi_start: Vec<f64>,
    pub chi_end: Vec<f64>,
    pub min_gap: f64,
}

impl LoopResult {
    fn from(length: f64, a: Anholonomy) -> Self {
        Self {
            length,
            permutation: a.permutation,
            block_shifts: a.block_shifts,
            chi_start: a.chi_start,
            chi_end: a.chi_end,
            min_gap: a.min_gap,
        }
    }

    fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(i, &p)| i == p) && self.block_shifts.iter().all(|&n| n == 0)
    }

    fn is_permutation_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(i, &p)| i == p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnholonomyReport {
    pub omega0: f64,
    pub loop_2pi: Option<LoopResult>,
    pub loop_4pi: Option<LoopResult>,
    pub anholonomic: bool,
    pub period: Option<f64>,
    pub nu: Option<i64>,
    pub verdict: String,
    pub crossing: Option<String>,
}

pub fn anholonomy_report(cfg: &RunConfig) -> CliResult<AnholonomyReport> {
    let model = cfg.model.build()?;
    let system = model.system();
    let omega0 = system.omega0();
    let steps = |length: f64| ((length / TAU) * cfg.grids.n_lambda as f64).round() as usize;
    let run = |length: f64| detect_anholonomy(system, 0.0, length, steps(length), cfg.grids.n_theta);
    let (l2, l4) = rayon::join(|| run(TAU), || run(2.0 * TAU));
    let (l2, l4) = match (l2, l4) {
        (Ok(a), Ok(b)) => (LoopResult::from(TAU, a), LoopResult::from(2.0 * TAU, b)),
        (Err(e @ (Error::Crossing { .. } | Error::NearDegeneracy { .. })), _)
        | (_, Err(e @ (Error::Crossing { .. } | Error::NearDegeneracy { .. }))) => {
            return Ok(AnholonomyReport {
                omega0,
                loop_2pi: None,
                loop_4pi: None,
                anholonomic: false,
                period: None,
                nu: None,
                verdict: "undetermined: quasienergy crossing on the loop".into(),
                crossing: Some(e.to_string()),
            })
        }
        (Err(e), _) | (_, Err(e)) => return Err(e.into()),
    };
    let nu = Pipeline::build(cfg, cfg.grids.n_lambda, cfg.grids.n_theta)
        .ok()
        .and_then(|p| compute_cohomology_classes(&p.atlas, &p.transitions).ok())
        .map(|c| c.nu);
    let nu_text = nu.map(|n| n.to_string()).unwrap_or_else(|| "n/a".into());
    let (anholonomic, period, verdict) = if l2.is_identity() {
        (false, Some(TAU), format!("trivial, period 2π, ν = {nu_text}"))
    } else if l4.is_permutation_identity() {
        (true, Some(2.0 * TAU), format!("anholonomic, period 4π, ν = {nu_text}"))
    } else {
        (true, None, format!("anholonomic, period beyond 4π, ν = {nu_text}"))
    };
    Ok(AnholonomyReport {
        omega0,
        loop_2pi: Some(l2),
        loop_4pi: Some(l4),
        anholonomic,
        period,
        nu,
        verdict,
        crossing: None,
    })
}

pub fn cmd_anholonomy(cfg: &RunConfig, out: &Path) -> CliResult<Outcome> {
    let report = anholonomy_report(cfg)?;
    let mut files = Vec::new();
    write_file(out, "anholonomy.json", &to_json(&report), &mut files)?;
    Ok(Outcome {
        files,
        passed: report.crossing.is_none(),
    })
}

// ---------------------------------------------------------------- holonomy

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MooreStedmanComparison {
    pub kicks: usize,
    /// Geometric Floquet factor raised to the number of periods.
    pub geometric_power: ComplexValue,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolonomyCommandReport {
    pub omega0: f64,
    pub duration: f64,
    pub n_lambda: usize,
    pub holonomy: HolonomyReport,
    pub reference_target_difference: f64,
    pub moore_stedman: Option<MooreStedmanComparison>,
    pub convergence: Option<ConvergenceTable>,
}

fn oracle(pipe: &Pipeline, sched: &LoopSchedule, quad: &Quadrature) -> CliResult<(HolonomyReport, Option<CVector>)> {
    let ctx = pipe.ctx();
    let periods = pipe.gerbe.omega0 * sched.duration / TAU;
    match pipe.model.kicked() {
        Some(m) if (periods - periods.round()).abs() < 1e-9 * periods.max(1.0) => {
            let pred = adiabatic_prediction(&ctx, sched, quad)?;
            let lambda = sched.schedule_fn();
            let exact = m.propagate_exact(&*lambda, sched.duration)?.apply(&pred.initial);
            let ov = pred.state.dotc(&exact);
            let mut rep = pred.report;
            rep.oracle = Some(OracleComparison {
                fidelity: ov.norm(),
                phase_error: ov.arg(),
            });
            Ok((rep, Some(pred.initial)))
        }
        _ => Ok((surface_holonomy(&ctx, sched, quad)?, None)),
    }
}

pub fn holonomy_report(cfg: &RunConfig) -> CliResult<(HolonomyCommandReport, String)> {
    let s = required_schedule(cfg)?;
    let pipe = Pipeline::build(cfg, cfg.grids.n_lambda, cfg.grids.n_theta)?;
    let omega0 = pipe.gerbe.omega0;
    let duration = s.duration(omega0);
    let sched = build_schedule(s, &pipe.atlas, duration)?;
    let quad = quadrature(cfg);
    let (rep, initial) = oracle(&pipe, &sched, &quad)?;

    let moore_stedman = match (s.kind, s.kicks, &initial) {
        (ScheduleKind::Constant, Some(k), Some(init)) => {
            let l = s.lambda_start;
            let d = floquet_decompose(&pipe.model.system().propagator_samples(l, cfg.grids.n_theta)?, omega0)?;
            let j = (0..d.dim())
                .max_by(|&a, &b| {
                    inner(&d.eigenpairs()[a].vector, init)
                        .norm()
                        .total_cmp(&inner(&d.eigenpairs()[b].vector, init).norm())
                })
                .unwrap();
            let split = moore_stedman_phase_split(pipe.model.system(), l, &d, j)?;
            let geo = split.geometric.powi(k as i32);
            let phase: C64 = rep.phase.into();
            Some(MooreStedmanComparison {
                kicks: k,
                geometric_power: geo.into(),
                difference: (phase.inv() - geo).norm(),
            })
        }
        _ => None,
    };

    let convergence = match pipe.model.kicked() {
        Some(m) if !s.kick_counts.is_empty() => {
            let atlas = &pipe.atlas;
            let make = |t: f64| {
                build_schedule(s, atlas, t).map_err(|e| match e {
                    CliError::Compute(e) => e,
                    other => Error::Schedule(other.to_string()),
                })
            };
            Some(verify_against_exact(m, &pipe.ctx(), &make, &s.kick_counts, &quad)?)
        }
        _ => None,
    };

    let samples = surface_integrand(&pipe.ctx(), &sched, &quad)?;
    let mut csv = String::from("segment,chart,t,lambda,surface_re,surface_im,kick_re,kick_im,energy\n");
    for x in &samples {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            x.segment,
            x.chart,
            num(x.t),
            num(x.lambda),
            num(x.surface.re),
            num(x.surface.im),
            num(x.kick_boundary.re),
            num(x.kick_boundary.im),
            num(x.energy)
        );
    }
    let phase: C64 = rep.phase.into();
    let target: C64 = rep.reference_target.into();
    Ok((
        HolonomyCommandReport {
            omega0,
            duration,
            n_lambda: cfg.grids.n_lambda,
            reference_target_difference: (phase - target).norm(),
            holonomy: rep,
            moore_stedman,
            convergence,
        },
        csv,
    ))
}

pub fn cmd_holonomy(cfg: &RunConfig, out: &Path) -> CliResult<Outcome> {
    let (report, csv) = holonomy_report(cfg)?;
    let mut files = Vec::new();
    if wants(cfg, Format::Json) {
        write_file(out, "holonomy.json", &to_json(&report), &mut files)?;
    }
    if wants(cfg, Format::Csv) {
        write_file(out, "holonomy_integrand.csv", &csv, &mut files)?;
    }
    Ok(Outcome { files, passed: true })
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &str, residual: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: residual.is_finite() && residual < tolerance,
            residual,
            tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, residual: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            passed: false,
            ..Self::new(name, residual, tolerance, detail)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRow {
    pub n_lambda: usize,
    pub lambda_step: f64,
    pub relation_i: f64,
    pub relation_ii: f64,
    pub relation_iii: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
    pub gluing: GluingReport,
    pub refinement: Option<Vec<RefinementRow>>,
    pub refinement_order: Option<f64>,
}

fn cocycle_suite(pipe: &Pipeline, corrupt: f64) -> CliResult<SuiteResult> {
    let mut data = pipe.transitions.clone();
    if corrupt != 0.0 {
        if let Some(d) = data.first_mut() {
            d.phi.iter_mut().for_each(|p| *p += corrupt);
        }
    }
    let tol = crate::atlas::COCYCLE_TOL;
    let mut consistency: f64 = 0.0;
    for d in &data {
        consistency = consistency.max(transition_residual(&pipe.sections, d)?);
    }
    Ok(match verify_cocycles(&pipe.atlas, &data) {
        Ok(z) => {
            let worst = z.iter().map(|t| t.residual).fold(consistency, f64::max);
            SuiteResult::new(
                "cocycle",
                worst,
                tol,
                format!(
                    "transition consistency {consistency:.3e}, z = {:?}",
                    z.iter().map(|t| t.z).collect::<Vec<_>>()
                ),
            )
        }
        Err(Error::CocycleViolation { charts, magnitude }) => {
            SuiteResult::failed("cocycle", magnitude.max(consistency), tol, format!("violation on charts {charts:?}"))
        }
        Err(e) => SuiteResult::failed("cocycle", f64::INFINITY, tol, e.to_string()),
    })
}

fn gluing(pipe: &Pipeline) -> crate::Result<GluingReport> {
    verify_gerbe_gluing(&pipe.atlas, &pipe.gerbe, 4.0 * TAU / pipe.gerbe.omega0, 5)
}

fn random_gauge(atlas: &CircleAtlas, rng: &mut ChaCha8Rng) -> RestrictedGauge {
    let epsilon = (0..atlas.charts.len())
        .map(|_| GaugeFunction {
            constant: rng.gen_range(-TAU..TAU),
            modes: (0..2)
                .map(|_| (rng.gen_range(-0.5..0.5), rng.gen_range(0.2..1.5), rng.gen_range(0.0..TAU)))
                .collect(),
        })
        .collect();
    RestrictedGauge {
        epsilon,
        p: (0..atlas.charts.len()).map(|_| rng.gen_range(-2..=2)).collect(),
        m: (0..atlas.overlaps.len()).map(|_| rng.gen_range(-1..=1)).collect(),
    }
}

fn gauge_suite(pipe: &Pipeline, cfg: &RunConfig, sched: Option<&LoopSchedule>) -> CliResult<SuiteResult> {
    let quad = quadrature(cfg);
    let base_classes = compute_cohomology_classes(&pipe.atlas, &pipe.transitions)?;
    let base_phase: Option<C64> = match sched {
        Some(s) => Some(surface_holonomy(&pipe.ctx(), s, &quad)?.phase.into()),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.verify.seed);
    let gauges: Vec<RestrictedGauge> = (0..cfg.verify.gauge_samples).map(|_| random_gauge(&pipe.atlas, &mut rng)).collect();
    let results: Vec<(f64, bool)> = gauges
        .par_iter()
        .map(|g| -> CliResult<(f64, bool)> {
            let (s2, t2, g2) = apply_gauge(&pipe.atlas, &pipe.sections, &pipe.transitions, &pipe.gerbe, g)?;
            let classes = compute_cohomology_classes(&pipe.atlas, &t2)?;
            let bound = 4;
            let same_class = classes.nu == base_classes.nu && w_cohomologous(&pipe.atlas, &classes.w, &base_classes.w, bound);
            let diff = match (sched, base_phase) {
                (Some(s), Some(p0)) => {
                    let ctx = HolonomyContext {
                        atlas: &pipe.atlas,
                        sections: &s2,
                        transitions: &t2,
                        gerbe: &g2,
                        system: pipe.model.system(),
                    };
                    let p: C64 = surface_holonomy(&ctx, s, &quad)?.phase.into();
                    (p - p0).norm()
                }
                _ => 0.0,
            };
            Ok((diff, same_class))
        })
        .collect::<CliResult<_>>()?;
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let classes_ok = results.iter().all(|r| r.1);
    let mut suite = SuiteResult::new(
        "gauge",
        worst,
        1e-8,
        format!("{} gauges, ν and w classes preserved: {classes_ok}", gauges.len()),
    );
    suite.passed &= classes_ok;
    Ok(suite)
}

/// Moves the last transition point across its overlap window.
fn transition_suite(pipe: &Pipeline, s: &ScheduleConfig, duration: f64, quad: &Quadrature, tol: f64) -> CliResult<Option<SuiteResult>> {
    if s.kind != ScheduleKind::Linear || s.transitions.is_empty() {
        return Ok(None);
    }
    let k = s.transitions.len() - 1;
    let (from, to) = (s.charts[k], s.charts[k + 1]);
    let x0 = s.transitions[k];
    let lo_t = if k > 0 { s.transitions[k - 1] } else { s.lambda_start };
    let hi_t = s.lambda_end(pipe.atlas.period);
    // admissible window: λ near x0 inside both charts and between neighbours
    let inside = |x: f64| {
        pipe.atlas.pair_component_at(from, to, x).is_some()
            && pipe.atlas.pair_component_at(from, to, x) == pipe.atlas.pair_component_at(from, to, x0)
    };
    let step = pipe.lattice.step;
    let (mut a, mut b) = (x0, x0);
    while a - step > lo_t && inside(a - step) {
        a -= step;
    }
    while b + step < hi_t && inside(b + step) {
        b += step;
    }
    let (a, b) = (a + 8.0 * step, b - 8.0 * step);
    if !(b > a) {
        return Ok(None);
    }
    let base: C64 = surface_holonomy(&pipe.ctx(), &build_schedule(s, &pipe.atlas, duration)?, quad)?.phase.into();
    let mut worst: f64 = 0.0;
    let mut placements = Vec::new();
    for j in 0..5 {
        let x = a + (b - a) * (j as f64 + 0.5) / 5.0;
        let mut moved = s.clone();
        moved.transitions[k] = x;
        let p: C64 = surface_holonomy(&pipe.ctx(), &build_schedule(&moved, &pipe.atlas, duration)?, quad)?
            .phase
            .into();
        worst = worst.max((p - base).norm());
        placements.push(sig12(x));
    }
    Ok(Some(SuiteResult::new(
        "transition_independence",
        worst,
        tol,
        format!("charts ({from}, {to}), placements {placements:?}"),
    )))
}

pub fn verify_report(cfg: &RunConfig) -> CliResult<VerifyReport> {
    let pipe = Pipeline::build(cfg, cfg.grids.n_lambda, cfg.grids.n_theta)?;
    let quad = quadrature(cfg);
    let mut suites = vec![cocycle_suite(&pipe, cfg.verify.corrupt_phi)?];

    let glue = gluing(&pipe)?;
    let worst = glue.relation_i.max(glue.relation_ii).max(glue.relation_iii);
    suites.push(SuiteResult::new(
        "gluing",
        worst,
        cfg.verify.gluing_tol,
        format!(
            "dA = ΔB {:.3e}, triple {:.3e}, dB chart-independence {:.3e}",
            glue.relation_i, glue.relation_ii, glue.relation_iii
        ),
    ));
    suites.push(match curvature_h(&pipe.atlas, &pipe.gerbe) {
        Ok(_) => SuiteResult::new("curvature", 0.0, crate::gerbe::CURVATURE_TOL, "H agrees on overlaps"),
        Err(Error::CocycleViolation { charts, magnitude }) => SuiteResult::failed(
            "curvature",
            magnitude,
            crate::gerbe::CURVATURE_TOL,
            format!("H differs on charts {charts:?}"),
        ),
        Err(e) => return Err(e.into()),
    });

    let sched = match &cfg.schedule {
        Some(s) => Some((s, s.duration(pipe.gerbe.omega0))),
        None => None,
    };
    let loop_schedule = match sched {
        Some((s, t)) => Some(build_schedule(s, &pipe.atlas, t)?),
        None => None,
    };
    suites.push(gauge_suite(&pipe, cfg, loop_schedule.as_ref())?);
    if let (Some((s, t)), Some(ls)) = (sched, &loop_schedule) {
        if let Some(suite) = transition_suite(&pipe, s, t, &quad, cfg.verify.holonomy_tol)? {
            suites.push(suite);
        }
        let (rep, _) = oracle(&pipe, ls, &quad)?;
        suites.push(SuiteResult::new(
            "formula_equivalence",
            rep.route_difference,
            1e-10,
            "gerbe formula vs chart-product formula",
        ));
        if let Some(o) = &rep.oracle {
            suites.push(SuiteResult::new(
                "oracle",
                o.phase_error.abs().max(1.0 - o.fidelity),
                cfg.verify.oracle_phase_tol,
                format!("fidelity {:.12}, phase error {:.3e}", o.fidelity, o.phase_error),
            ));
        }
    }

    let (refinement, refinement_order) = if cfg.verify.refinement {
        let coarse_n = cfg.grids.n_lambda / 2;
        let coarse = Pipeline::build(cfg, coarse_n, cfg.grids.n_theta)?;
        let g_coarse = gluing(&coarse)?;
        let rows = vec![
            RefinementRow {
                n_lambda: coarse_n,
                lambda_step: coarse.lattice.step,
                relation_i: g_coarse.relation_i,
                relation_ii: g_coarse.relation_ii,
                relation_iii: g_coarse.relation_iii,
            },
            RefinementRow {
                n_lambda: cfg.grids.n_lambda,
                lambda_step: pipe.lattice.step,
                relation_i: glue.relation_i,
                relation_ii: glue.relation_ii,
                relation_iii: glue.relation_iii,
            },
        ];
        let order = (g_coarse.relation_i / glue.relation_i).log2();
        let ratio = g_coarse.relation_i / glue.relation_i;
        let mut suite = SuiteResult::new(
            "refinement",
            glue.relation_i,
            cfg.verify.gluing_tol,
            format!("relation (i) shrinks {ratio:.2}× per halving, order {order:.2}"),
        );
        suite.passed = ratio >= 3.5 || g_coarse.relation_i < 1e-10;
        suites.push(suite);
        (Some(rows), Some(order))
    } else {
        (None, None)
    };

    Ok(VerifyReport {
        passed: suites.iter().all(|s| s.passed),
        suites,
        gluing: glue,
        refinement,
        refinement_order,
    })
}

pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> CliResult<Outcome> {
    let report = verify_report(cfg)?;
    let mut files = Vec::new();
    write_file(out, "verify.json", &to_json(&report), &mut files)?;
    if let (Some(rows), true) = (&report.refinement, wants(cfg, Format::Csv)) {
        let mut csv = String::from("n_lambda,lambda_step,relation_i,relation_ii,relation_iii\n");
        for r in rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                r.n_lambda,
                num(r.lambda_step),
                num(r.relation_i),
                num(r.relation_ii),
                num(r.relation_iii)
            );
        }
        write_file(out, "refinement.csv", &csv, &mut files)?;
    }
    Ok(Outcome {
        files,
        passed: report.passed,
    })
}
