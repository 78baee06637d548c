//! Subcommand runners. Each writes `report.json` plus CSV artifacts into the
//! output directory and reports whether every gated check passed.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use pathhj_core::characteristics::{
    homogeneous_complexes, integrate_characteristic, standard_e, verify_c4, C4Config, C4Report, CharacteristicPair,
    SelectionPolicy,
};
use pathhj_core::classical::{hopf_lax_classical, solve_classical, transport_classical};
use pathhj_core::control::{bellman_hamiltonian, check_lipschitz_b3, ConstantReport, HamiltonianHandle, TerminalFn};
use pathhj_core::functional::{
    default_schedule, estimate_ci_derivatives, integral_squared_norm, squared_current, DirectionalConfig, FunctionalHandle,
};
use pathhj_core::lyapunov::{self, check_v_bounds, sample_set, verify_conditions, BoundReport, ConditionsConfig, ConditionsReport, LyapunovParams};
use pathhj_core::minimax::{
    check_boundary, check_mc, consistency_experiment, consistency_points, control_hints, directional_criterion, mc_samples,
    stability_experiment, viscosity_touch_test, BoundaryReport, ConsistencyReport, DirectionalCriterion, MCReport, OracleFn,
    SearchConfig, StabilityReport, TouchConfig, TouchReport,
};
use pathhj_core::path::History;
use pathhj_core::sampling;
use pathhj_core::value::{check_dpp, hopf_lax_value, value, value_functional, DPConfig, ValueResult, DELAY_SCENARIO_VALUE};
use pathhj_core::{GridSpec, HistoryPoint, PathGrid};
use serde::Serialize;

use crate::config::{section, ConsistencyScenario, NamedFunctional, PolicyConfig, ProblemConfig, StabilityFamily};
use crate::io;
use crate::{Config, RunError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    VerifyLyapunov,
    SolveValue,
    CheckMinimax,
    Consistency,
    Stability,
    Derivatives,
    Characteristics,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::VerifyLyapunov,
        Command::SolveValue,
        Command::CheckMinimax,
        Command::Consistency,
        Command::Stability,
        Command::Derivatives,
        Command::Characteristics,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::VerifyLyapunov => "verify-lyapunov",
            Command::SolveValue => "solve-value",
            Command::CheckMinimax => "check-minimax",
            Command::Consistency => "consistency",
            Command::Stability => "stability",
            Command::Derivatives => "derivatives",
            Command::Characteristics => "characteristics",
        }
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown subcommand `{s}`"))
    }
}

/// Command-line overrides applied on top of the config.
#[derive(Clone, Debug, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub step: Option<f64>,
    /// Multiplies every gated tolerance.
    pub tolerance_scale: f64,
}

impl Default for Overrides {
    fn default() -> Self {
        Self { seed: None, step: None, tolerance_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Gate {
    fn at_most(name: &str, value: f64, limit: f64) -> Gate {
        Gate { name: name.into(), value, limit, passed: value <= limit }
    }
    fn flag(name: &str, ok: bool) -> Gate {
        Gate { name: name.into(), value: if ok { 1.0 } else { 0.0 }, limit: 1.0, passed: ok }
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    tolerance_scale: f64,
    passed: bool,
    gates: &'a [Gate],
    artifacts: &'a [String],
    details: T,
}

/// What a run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub command: Command,
    pub passed: bool,
    pub gates: Vec<Gate>,
    pub artifacts: Vec<String>,
}

struct Ctx<'a> {
    cfg: Config,
    seed: u64,
    scale: f64,
    out: &'a Path,
    artifacts: Vec<String>,
}

impl Ctx<'_> {
    fn file(&mut self, name: &str) -> Result<std::fs::File, RunError> {
        self.artifacts.push(name.to_string());
        io::create(&self.out.join(name))
    }
}

/// Runs `cmd` with `cfg` and writes its artifacts into `out`.
pub fn run(cmd: Command, cfg: &Config, overrides: &Overrides, out: &Path) -> Result<Outcome, RunError> {
    let mut cfg = cfg.clone();
    if let Some(step) = overrides.step {
        cfg.grid.step = step;
        cfg.grid.spec()?;
    }
    if !(overrides.tolerance_scale > 0.0 && overrides.tolerance_scale.is_finite()) {
        return Err(RunError::Config(format!("tolerance scale {} must be positive", overrides.tolerance_scale)));
    }
    std::fs::create_dir_all(out).map_err(|e| RunError::Io(format!("{}: {e}", out.display())))?;
    let seed = overrides.seed.unwrap_or(cfg.seed);
    let mut ctx = Ctx { cfg, seed, scale: overrides.tolerance_scale, out, artifacts: Vec::new() };
    let (gates, details) = match cmd {
        Command::VerifyLyapunov => verify_lyapunov(&mut ctx)?,
        Command::SolveValue => solve_value(&mut ctx)?,
        Command::CheckMinimax => check_minimax(&mut ctx)?,
        Command::Consistency => consistency(&mut ctx)?,
        Command::Stability => stability(&mut ctx)?,
        Command::Derivatives => derivatives(&mut ctx)?,
        Command::Characteristics => characteristics(&mut ctx)?,
    };
    let passed = gates.iter().all(|g| g.passed);
    let report = Report {
        command: cmd.name(),
        seed,
        tolerance_scale: ctx.scale,
        passed,
        gates: &gates,
        artifacts: &ctx.artifacts,
        details,
    };
    io::write_json(&out.join("report.json"), &report)?;
    Ok(Outcome { command: cmd, passed, gates, artifacts: ctx.artifacts })
}

type Ran = (Vec<Gate>, serde_json::Value);

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value, RunError> {
    serde_json::to_value(v).map_err(|e| RunError::Io(e.to_string()))
}

fn config_err(what: &str) -> impl Fn(pathhj_core::Error) -> RunError + '_ {
    move |e| RunError::Config(format!("{what}: {e}"))
}

#[derive(Serialize)]
struct LyapunovDetails {
    lambda: ConstantReport,
    params: LyapunovParams,
    conditions: ConditionsReport,
    v_bounds: Option<BoundReport>,
}

fn verify_lyapunov(ctx: &mut Ctx) -> Result<Ran, RunError> {
    let s = section(&ctx.cfg.lyapunov, "lyapunov")?.clone();
    let spec = ctx.cfg.grid.spec()?;
    let h = HamiltonianHandle::delayed_linear(s.delay_kind.clone(), &spec).map_err(config_err("lyapunov.delay_kind"))?;
    let d = sample_set(spec, s.d_paths, ctx.seed);
    let lam = check_lipschitz_b3(&h, &d, s.lambda_trials, ctx.seed.wrapping_add(1))?;
    // a Hamiltonian that ignores the history has no Lipschitz constant to estimate
    let lambda = f64::max(lam.estimated, 1e-6);
    let eps = s.eps_fraction * lyapunov::eps0(lambda, spec.horizon);
    let params = LyapunovParams::new(lambda, eps, spec.horizon).map_err(config_err("lyapunov.eps_fraction"))?;
    let kind = s.sigma_kind.clone();
    let sigma: TerminalFn = Arc::new(move |p: &PathGrid| kind.eval(p));
    let defaults = ConditionsConfig::default();
    let cc = ConditionsConfig {
        trials: s.trials,
        seed: ctx.seed,
        tolerance_a_per_step: defaults.tolerance_a_per_step * ctx.scale,
        tolerance_d: defaults.tolerance_d * ctx.scale,
        ..defaults
    };
    let conditions = verify_conditions(&params, &h, &sigma, &d, &cc)?;
    let v_bounds = if s.v_bound_samples > 0 { Some(check_v_bounds(s.v_bound_samples, ctx.seed)?) } else { None };

    let mut gates = vec![
        Gate::at_most("a.identity_residual", conditions.a.max_identity_residual, conditions.a.tolerance),
        Gate::flag("a.positive", conditions.a.passed),
        Gate::flag("b", conditions.b.passed),
        Gate::flag("c.strictly_decreasing", conditions.c.passed),
        Gate::at_most("d.worst_violation", conditions.d.worst_violation, conditions.d.tolerance),
    ];
    if let Some(vb) = &v_bounds {
        gates.push(Gate::flag("v_bounds", vb.passed));
    }
    let rows: Vec<Vec<f64>> =
        conditions.c.sequence.iter().map(|m| vec![m.eps, m.admitted as f64, m.max_sigma_gap]).collect();
    let f = ctx.file("modulus.csv")?;
    io::write_table_csv(f, &["eps".into(), "admitted".into(), "max_sigma_gap".into()], &rows)?;
    Ok((gates, to_value(&LyapunovDetails { lambda: lam, params, conditions, v_bounds })?))
}

fn dp_config(coarse: f64, max_depth: usize, leaf_cap: Option<u64>) -> DPConfig {
    let mut c = DPConfig::new(coarse, max_depth);
    if let Some(cap) = leaf_cap {
        c.leaf_cap = cap as u128;
    }
    c
}

#[derive(Serialize)]
struct ValueDetails {
    result: ValueResult,
    oracle: Option<f64>,
    oracle_relative_error: Option<f64>,
    dpp_tau: f64,
    dpp_residual: f64,
}

fn solve_value(ctx: &mut Ctx) -> Result<Ran, RunError> {
    let s = section(&ctx.cfg.value, "value")?.clone();
    let (pc, problem) = ctx.cfg.problem()?;
    let pc = pc.clone();
    let spec = problem.spec;
    let point = match (&s.initial, &pc) {
        (Some(init), _) => init.point(spec)?,
        (None, ProblemConfig::DelayScenario) => HistoryPoint::new(0.0, PathGrid::constant(spec, &[1.0]))?,
        (None, _) => HistoryPoint::new(0.0, PathGrid::zeros(spec))?,
    };
    let dp = dp_config(s.coarse_step, s.max_depth, s.leaf_cap);
    let result = value(&problem, &point, &dp)?;
    let oracle = match &pc {
        ProblemConfig::DelayScenario if s.initial.is_none() => Some(DELAY_SCENARIO_VALUE),
        ProblemConfig::HopfLax { .. } => Some(hopf_lax_value(point.history().current(), point.t(), spec.horizon, 1.0)),
        ProblemConfig::Transport { speed } => Some((point.history().current()[0] + speed * (spec.horizon - point.t())).sin()),
        _ => None,
    };
    let rel = oracle.map(|o| (result.value - o).abs() / o.abs().max(1.0));
    let tau = s.dpp_tau.unwrap_or_else(|| f64::min(point.t() + s.coarse_step, spec.horizon));
    let dpp = check_dpp(&problem, &point, tau, &dp)?;

    let mut gates = vec![Gate::at_most("dpp_residual", dpp, s.dpp_tolerance * ctx.scale)];
    if let Some(r) = rel {
        gates.push(Gate::at_most("oracle_relative_error", r, s.oracle_tolerance * ctx.scale));
    }
    let f = ctx.file("path.csv")?;
    io::write_path_csv(f, point.path())?;
    if s.sweep > 0 {
        let first = point.index();
        let last = spec.last_index() - 1;
        let mut rows = Vec::with_capacity(s.sweep);
        for k in 0..s.sweep {
            let i = if s.sweep == 1 { first } else { first + (last - first) * k / (s.sweep - 1) };
            let q = HistoryPoint::at_index(i, point.path().clone())?;
            let mut row = vec![spec.time(i)];
            row.extend_from_slice(point.path().node(i));
            row.push(value(&problem, &q, &dp)?.value);
            rows.push(row);
        }
        let mut header = vec!["t".to_string()];
        header.extend((1..=spec.n).map(|i| format!("x{i}")));
        header.push("phi".into());
        let f = ctx.file("sweep.csv")?;
        io::write_table_csv(f, &header, &rows)?;
    }
    let details = ValueDetails { result, oracle, oracle_relative_error: rel, dpp_tau: tau, dpp_residual: dpp };
    Ok((gates, to_value(&details)?))
}

#[derive(Serialize)]
struct MinimaxDetails {
    tol: f64,
    mc: MCReport,
    boundary: BoundaryReport,
    shifted_boundary: BoundaryReport,
    negated_boundary: BoundaryReport,
    directional: Vec<DirectionalCriterion>,
    touch: Option<TouchDetails>,
}

#[derive(Serialize)]
struct TouchDetails {
    solution: Vec<TouchReport>,
    reversed: Vec<TouchReport>,
}

fn check_minimax(ctx: &mut Ctx) -> Result<Ran, RunError> {
    let s = section(&ctx.cfg.minimax, "minimax")?.clone();
    let (_, problem) = ctx.cfg.problem()?;
    let spec = problem.spec;
    let dp = DPConfig::new(s.coarse_step, 64);
    let phi = value_functional(&problem, &dp);
    let h = bellman_hamiltonian(&problem)?;
    let e = standard_e(problem.c, h.clone())?;
    let hints = control_hints(&problem, problem.c);
    let tol = s.tol_factor * s.coarse_step * ctx.scale;
    let samples = mc_samples(spec, s.samples, s.s_scale, ctx.seed);
    let mc = check_mc(&phi, &e, &e, &samples, tol, &SearchConfig::new(s.budget, ctx.seed), &hints)?;
    let exact = 1e-12 * ctx.scale;
    let boundary = check_boundary(&phi, &problem.sigma, spec, s.boundary_samples, exact, ctx.seed);
    let shifted_boundary = check_boundary(&phi.shifted(0.1), &problem.sigma, spec, s.boundary_samples, exact, ctx.seed);
    let negated_boundary = check_boundary(&phi.scaled(-1.0), &problem.sigma, spec, s.boundary_samples, exact, ctx.seed);

    let mut directional = Vec::new();
    let mut rng = sampling::rng(ctx.seed.wrapping_add(7));
    for _ in 0..s.directional_points {
        let hi = spec.horizon - 9.0 * spec.step;
        if hi < 0.0 {
            break;
        }
        let p = sampling::random_point(spec, &mut rng, 1.0, 0.0, hi);
        let sv = sampling::gaussian(&mut rng, spec.n);
        let dc = DirectionalConfig { samples_per_eps: 16, ..DirectionalConfig::new(spec.step, ctx.seed) };
        directional.push(directional_criterion(&phi, &h, &p, &sv, problem.c, tol, &dc)?);
    }

    let mut gates = vec![
        Gate::at_most("mc.upper_failures", (mc.rows.len() - mc.upper_passed) as f64, 0.0),
        Gate::at_most("mc.lower_failures", (mc.rows.len() - mc.lower_passed) as f64, 0.0),
        Gate::flag("boundary.equality", boundary.equality_holds()),
        Gate::flag("negative.shifted_fails_lower_boundary", shifted_boundary.upper_holds() && !shifted_boundary.lower_holds()),
        Gate::flag("negative.negated_fails_upper_boundary", !negated_boundary.upper_holds()),
    ];
    let touch = match &s.touch {
        Some(t) => {
            let (solution, reversed) = touch_suite(t, ctx.seed, ctx.scale)?;
            let tested: usize = solution.iter().map(|r| r.tested).sum();
            let failures: usize = solution.iter().map(|r| r.failures).sum();
            let reversed_failures: usize = reversed.iter().map(|r| r.failures).sum();
            gates.push(Gate::at_most("touch.failures", failures as f64, 0.0));
            gates.push(Gate::flag("touch.tested", tested > 0));
            gates.push(Gate::flag("negative.reversed_touch_fails", reversed_failures > 0));
            Some(TouchDetails { solution, reversed })
        }
        None => None,
    };

    let mut header = vec!["t".to_string(), "tau".to_string()];
    header.extend((1..=spec.n).map(|i| format!("s{i}")));
    header.extend(["upper_margin", "lower_margin", "upper_passed", "lower_passed"].map(String::from));
    let rows: Vec<Vec<f64>> = mc
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![r.t, r.tau];
            v.extend_from_slice(&r.s);
            v.extend([r.upper.margin, r.lower.margin, r.upper.passed as u8 as f64, r.lower.passed as u8 as f64]);
            v
        })
        .collect();
    let f = ctx.file("mc.csv")?;
    io::write_table_csv(f, &header, &rows)?;
    let details = MinimaxDetails { tol, mc, boundary, shifted_boundary, negated_boundary, directional, touch };
    Ok((gates, to_value(&details)?))
}

/// Touch tests at `anchors` random points for the lifted transport solution
/// and for the solution with the speed reversed.
pub fn touch_suite(
    t: &crate::config::TouchSection,
    seed: u64,
    scale: f64,
) -> Result<(Vec<TouchReport>, Vec<TouchReport>), RunError> {
    let horizon = 1.0;
    let spec = GridSpec::new(1, 0.5, horizon, t.step).map_err(config_err("minimax.touch.step"))?;
    let speed = t.speed;
    let h = HamiltonianHandle::new("transport", speed.abs().max(1.0), move |_: &History, s: &[f64]| s[0] * speed);
    let mut out = Vec::new();
    for sign in [1.0, -1.0] {
        let sol = solve_classical(&transport_classical(sign * speed, horizon, t.half_width, t.cells).map_err(config_err("minimax.touch"))?)?;
        let phi = pathhj_core::classical::lift_to_path(&sol);
        let mut rng = sampling::rng(seed);
        let mut reports = Vec::with_capacity(t.anchors);
        for k in 0..t.anchors {
            let point = sampling::random_point(spec, &mut rng, 0.5, 0.1, 0.7);
            let defaults = TouchConfig::default();
            let cfg = TouchConfig { family: t.family, seed: seed.wrapping_add(k as u64), tol: defaults.tol * scale, ..defaults };
            reports.push(viscosity_touch_test(&phi, &h, &point, &cfg)?);
        }
        out.push(reports);
    }
    let reversed = out.pop().expect("two runs");
    let solution = out.pop().expect("two runs");
    Ok((solution, reversed))
}

fn consistency(ctx: &mut Ctx) -> Result<Ran, RunError> {
    let s = section(&ctx.cfg.consistency, "consistency")?.clone();
    let g = ctx.cfg.grid;
    if g.n != 1 {
        return Err(RunError::Config("consistency: grid.n must be 1".into()));
    }
    let (problem, classical, oracle): (_, _, OracleFn) = match s.scenario {
        ConsistencyScenario::HopfLax => {
            let p = ProblemConfig::HopfLax { rest: true }.build(&g)?;
            let c = hopf_lax_classical(1, 1.0, g.horizon, s.half_width, s.cells).map_err(config_err("consistency"))?;
            let horizon = g.horizon;
            (p, c, Arc::new(move |t: f64, x: &[f64]| hopf_lax_value(x, t, horizon, 1.0)))
        }
        ConsistencyScenario::Transport => {
            let p = ProblemConfig::Transport { speed: s.speed }.build(&g)?;
            let c = transport_classical(s.speed, g.horizon, s.half_width, s.cells).map_err(config_err("consistency"))?;
            let (horizon, speed) = (g.horizon, s.speed);
            (p, c, Arc::new(move |t: f64, x: &[f64]| (x[0] + speed * (horizon - t)).sin()))
        }
    };
    let sol = solve_classical(&classical)?;
    let points = consistency_points(problem.spec, s.samples, s.sample_half, ctx.seed);
    let dp = DPConfig::new(s.coarse_step, 64);
    let report: ConsistencyReport = consistency_experiment(&problem, &dp, &sol, &points, Some(&oracle), s.tol * ctx.scale)?;
    let gates = vec![
        Gate::at_most("dp_vs_classical", report.max_rel, report.tol),
        Gate::at_most("vs_oracle", report.max_rel_oracle.unwrap_or(0.0), report.tol),
    ];
    let f = ctx.file("classical.csv")?;
    io::write_grid_csv(f, &sol)?;
    let rows: Vec<Vec<f64>> = report
        .samples
        .iter()
        .map(|x| vec![x.t, x.x[0], x.dp, x.classical, x.oracle.unwrap_or(f64::NAN), x.rel])
        .collect();
    let f = ctx.file("samples.csv")?;
    io::write_table_csv(f, &["t", "x1", "dp", "classical", "oracle", "rel"].map(String::from), &rows)?;
    Ok((gates, to_value(&report)?))
}

#[derive(Serialize)]
struct StabilityDetails {
    family: StabilityFamily,
    times: Vec<f64>,
    report: StabilityReport,
}

fn stability(ctx: &mut Ctx) -> Result<Ran, RunError> {
    let s = section(&ctx.cfg.stability, "stability")?.clone();
    let (_, problem) = ctx.cfg.problem()?;
    let spec = problem.spec;
    let points = consistency_points(spec, s.points, 1.0, ctx.seed);
    let dp = DPConfig::new(s.coarse_step, 64);
    let (p, sig): (pathhj_core::minimax::PerturbFn, TerminalFn) = match s.family {
        StabilityFamily::ConstantShift => (Arc::new(|_: &History| 1.0), Arc::new(|_: &PathGrid| 0.0)),
        StabilityFamily::Boundary => (
            Arc::new(|_: &History| 0.0),
            Arc::new(|x: &PathGrid| (3.0 * x.node(x.spec().last_index())[0]).cos()),
        ),
    };
    let tol = s.tol * ctx.scale;
    let final_delta = s.deltas.last().copied().unwrap_or(0.0);
    // the final-deviation gate is family specific, so the report's own is not used
    let report = stability_experiment(&problem, p, sig, &s.deltas, &points, &dp, f64::INFINITY, s.slack * ctx.scale)?;
    let times: Vec<f64> = points.iter().map(|q| q.t()).collect();
    let mut gates = vec![Gate::flag("decreasing", report.decreasing)];
    match s.family {
        StabilityFamily::ConstantShift => {
            let worst = report
                .steps
                .iter()
                .flat_map(|st| st.per_point.iter().zip(&times).map(move |(d, t)| (d - st.delta * (spec.horizon - t)).abs()))
                .fold(0.0, f64::max);
            gates.push(Gate::at_most("shift_identity_error", worst, tol));
        }
        StabilityFamily::Boundary => {
            let worst = report.steps.iter().map(|st| st.deviation - st.delta).fold(f64::NEG_INFINITY, f64::max);
            gates.push(Gate::at_most("deviation_minus_delta", worst, tol));
            gates.push(Gate::at_most("final_deviation", report.final_deviation, final_delta + tol));
        }
    }
    let rows: Vec<Vec<f64>> = report.steps.iter().map(|st| vec![st.delta, st.deviation]).collect();
    let f = ctx.file("stability.csv")?;
    io::write_table_csv(f, &["delta".into(), "deviation".into()], &rows)?;
    Ok((gates, to_value(&StabilityDetails { family: s.family, times, report })?))
}

#[derive(Serialize)]
struct DerivativeRow {
    t: f64,
    dt: f64,
    dt_exact: f64,
    grad: Vec<f64>,
    grad_exact: Vec<f64>,
    residual: f64,
    error: f64,
}

fn derivatives(ctx: &mut Ctx) -> Result<Ran, RunError> {
    let s = section(&ctx.cfg.derivatives, "derivatives")?.clone();
    let spec = ctx.cfg.grid.spec()?;
    let phi: FunctionalHandle = match s.functional {
        NamedFunctional::V => lyapunov::v_functional(),
        NamedFunctional::Nu => {
            let eps = s.eps_fraction * lyapunov::eps0(s.lambda, spec.horizon);
            lyapunov::nu_functional(LyapunovParams::new(s.lambda, eps, spec.horizon).map_err(config_err("derivatives"))?)
        }
        NamedFunctional::SquaredCurrent => squared_current(),
        NamedFunctional::IntegralSquaredNorm => integral_squared_norm(),
    };
    let schedule = default_schedule(spec.step);
    let hi = spec.horizon - 9.0 * spec.step;
    if hi < 0.0 {
        return Err(RunError::Config("derivatives: the horizon must exceed 9 grid steps".into()));
    }
    let mut rng = sampling::rng(ctx.seed);
    let mut rows = Vec::with_capacity(s.points);
    for _ in 0..s.points {
        let p = sampling::random_point(spec, &mut rng, 1.0, 0.0, hi);
        let est = estimate_ci_derivatives(&phi, &p, &schedule)?;
        let h = p.history();
        let dt_exact = phi.analytic_dt(&h).expect("named functionals carry derivatives");
        let grad_exact = phi.analytic_grad(&h).expect("named functionals carry derivatives");
        let err = grad_exact.iter().zip(&est.grad).map(|(a, b)| (a - b).abs()).fold((est.dt - dt_exact).abs(), f64::max);
        let scale = 1.0 + dt_exact.abs() + grad_exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
        rows.push(DerivativeRow { t: p.t(), dt: est.dt, dt_exact, grad: est.grad, grad_exact, residual: est.residual, error: err / scale });
    }
    let worst = rows.iter().map(|r| r.error).fold(0.0, f64::max);
    let gates = vec![Gate::at_most("max_relative_error", worst, s.tol * ctx.scale)];
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.t, r.dt, r.dt_exact, r.residual, r.error]).collect();
    let f = ctx.file("derivatives.csv")?;
    io::write_table_csv(f, &["t", "dt", "dt_exact", "residual", "error"].map(String::from), &table)?;
    Ok((gates, to_value(&rows)?))
}

#[derive(Serialize)]
struct CharacteristicsDetails {
    z_final: f64,
    standard: C4Report,
    homogeneous: Option<C4Report>,
}

fn characteristics(ctx: &mut Ctx) -> Result<Ran, RunError> {
    let s = section(&ctx.cfg.characteristics, "characteristics")?.clone();
    let spec = ctx.cfg.grid.spec()?;
    let h = HamiltonianHandle::delayed_linear(s.delay_kind.clone(), &spec).map_err(config_err("characteristics.delay_kind"))?;
    let e = standard_e(s.c, h.clone()).map_err(config_err("characteristics.c"))?;
    if s.s.len() != spec.n {
        return Err(RunError::Config(format!("characteristics.s has {} entries, grid.n is {}", s.s.len(), spec.n)));
    }
    let point = match &s.initial {
        Some(i) => i.point(spec)?,
        None => HistoryPoint::new(0.0, PathGrid::constant(spec, &vec![1.0; spec.n]))?,
    };
    let policy = match &s.policy {
        PolicyConfig::Fixed { b } => SelectionPolicy::Fixed(b.clone()),
        PolicyConfig::Random => SelectionPolicy::RandomPerCell,
    };
    let pair: CharacteristicPair = integrate_characteristic(&e, &point, &s.s, &policy, ctx.seed).map_err(|err| match err {
        pathhj_core::Error::SelectionOutsideSet { .. } => RunError::Config(format!("characteristics.policy: {err}")),
        other => other.into(),
    })?;
    let c4 = |mesh: usize, seed: u64| C4Config { trials: s.c4.trials, mesh, extra_params: s.c4.extra_params, seed };
    let standard = verify_c4(Some(&e), None, &h, spec, &c4(s.c4.mesh, ctx.seed))?;
    let mut gates = vec![Gate::at_most("c4.standard", standard.max_residual, s.standard_tol * ctx.scale)];
    let homogeneous = if s.homogeneous {
        let (up, lo) = homogeneous_complexes(s.c, h.clone())?;
        let r = verify_c4(Some(&up), Some(&lo), &h, spec, &c4(s.c4.mesh, ctx.seed))?;
        gates.push(Gate::at_most("c4.homogeneous", r.max_residual, s.homogeneous_tol * ctx.scale));
        Some(r)
    } else {
        None
    };
    let f = ctx.file("characteristic.csv")?;
    io::write_characteristic_csv(f, &pair)?;
    let details = CharacteristicsDetails { z_final: pair.z_at(spec.last_index()), standard, homogeneous };
    Ok((gates, to_value(&details)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("solve".parse::<Command>().is_err());
    }

    #[test]
    fn gates_compare_against_limits() {
        assert!(Gate::at_most("x", 1.0, 1.0).passed);
        assert!(!Gate::at_most("x", f64::NAN, 1.0).passed);
        assert!(!Gate::flag("x", false).passed);
    }

    #[test]
    fn nonpositive_tolerance_scale_is_a_config_error() {
        let cfg = Config::parse(r#"{ "seed": 1, "grid": { "n": 1, "h": 1, "T": 1, "step": 0.1 } }"#).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let o = Overrides { tolerance_scale: 0.0, ..Overrides::default() };
        assert!(matches!(run(Command::Stability, &cfg, &o, dir.path()), Err(RunError::Config(_))));
    }

    #[test]
    fn bad_step_override_is_a_config_error() {
        let cfg = Config::parse(r#"{ "seed": 1, "grid": { "n": 1, "h": 1, "T": 1, "step": 0.1 } }"#).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let o = Overrides { step: Some(-1.0), ..Overrides::default() };
        assert!(matches!(run(Command::Stability, &cfg, &o, dir.path()), Err(RunError::Config(_))));
    }
}
