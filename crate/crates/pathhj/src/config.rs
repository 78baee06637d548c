//! Scenario configuration: one JSON document per run.

use std::path::Path;

use pathhj_core::control::{linear_problem, Coefficients, ControlProblem, DelayKind, RunningKind, TerminalKind};
use pathhj_core::value::{delay_scenario, hopf_lax_scenario, hopf_lax_scenario_with_rest, transport_scenario};
use pathhj_core::{GridSpec, HistoryPoint, PathGrid};
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
    #[serde(default)]
    pub lyapunov: Option<LyapunovSection>,
    #[serde(default)]
    pub value: Option<ValueSection>,
    #[serde(default)]
    pub minimax: Option<MinimaxSection>,
    #[serde(default)]
    pub consistency: Option<ConsistencySection>,
    #[serde(default)]
    pub stability: Option<StabilitySection>,
    #[serde(default)]
    pub derivatives: Option<DerivativesSection>,
    #[serde(default)]
    pub characteristics: Option<CharacteristicsSection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub h: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub step: f64,
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec, RunError> {
        GridSpec::new(self.n, self.h, self.horizon, self.step).map_err(|e| RunError::Config(format!("grid: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// `ẏ = y(τ − 1)` from `x ≡ 1`; `h` and `T` come from the scenario, only the step from the grid.
    DelayScenario,
    HopfLax {
        #[serde(default)]
        rest: bool,
    },
    Transport {
        speed: f64,
    },
    Linear {
        delay_kind: DelayKind,
        coefficients: Coefficients,
        controls: Vec<Vec<f64>>,
        c: f64,
        sigma_kind: TerminalKind,
        g_kind: RunningKind,
    },
}

impl ProblemConfig {
    pub fn build(&self, grid: &GridConfig) -> Result<ControlProblem, RunError> {
        let err = |e: pathhj_core::Error| RunError::Config(format!("problem: {e}"));
        match self {
            ProblemConfig::DelayScenario => delay_scenario(grid.step).map(|(p, _)| p).map_err(err),
            ProblemConfig::HopfLax { rest } => {
                if grid.n != 1 {
                    return Err(RunError::Config("problem: hopf_lax needs grid.n = 1".into()));
                }
                if *rest {
                    hopf_lax_scenario_with_rest(grid.h, grid.horizon, grid.step).map_err(err)
                } else {
                    hopf_lax_scenario(grid.h, grid.horizon, grid.step).map_err(err)
                }
            }
            ProblemConfig::Transport { speed } => {
                if grid.n != 1 {
                    return Err(RunError::Config("problem: transport needs grid.n = 1".into()));
                }
                transport_scenario(*speed, grid.h, grid.horizon, grid.step).map_err(err)
            }
            ProblemConfig::Linear { delay_kind, coefficients, controls, c, sigma_kind, g_kind } => linear_problem(
                grid.spec()?,
                delay_kind.clone(),
                *coefficients,
                controls.clone(),
                *c,
                sigma_kind.clone(),
                g_kind.clone(),
            )
            .map_err(err),
        }
    }

    /// The grid the problem actually lives on.
    pub fn grid(&self, grid: &GridConfig) -> GridConfig {
        match self {
            ProblemConfig::DelayScenario => GridConfig { n: 1, h: 1.0, horizon: 2.0, step: grid.step },
            _ => *grid,
        }
    }
}

/// A constant history `x ≡ value` at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub t: f64,
    pub value: Vec<f64>,
}

impl InitialConfig {
    pub fn point(&self, spec: GridSpec) -> Result<HistoryPoint, RunError> {
        if self.value.len() != spec.n {
            return Err(RunError::Config(format!("initial.value has {} entries, grid.n is {}", self.value.len(), spec.n)));
        }
        HistoryPoint::new(self.t, PathGrid::constant(spec, &self.value)).map_err(|e| RunError::Config(format!("initial: {e}")))
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub delay_kind: DelayKind,
    #[serde(default = "LyapunovSection::d_paths")]
    pub d_paths: usize,
    #[serde(default = "LyapunovSection::lambda_trials")]
    pub lambda_trials: usize,
    #[serde(default = "LyapunovSection::trials")]
    pub trials: usize,
    /// `ε / ε₀`.
    #[serde(default = "one")]
    pub eps_fraction: f64,
    #[serde(default = "LyapunovSection::sigma")]
    pub sigma_kind: TerminalKind,
    /// Random histories for the `V` bounds; 0 skips them.
    #[serde(default)]
    pub v_bound_samples: usize,
}

impl LyapunovSection {
    fn d_paths() -> usize {
        50
    }
    fn lambda_trials() -> usize {
        2000
    }
    fn trials() -> usize {
        1000
    }
    fn sigma() -> TerminalKind {
        TerminalKind::Norm
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSection {
    pub coarse_step: f64,
    #[serde(default = "ValueSection::max_depth")]
    pub max_depth: usize,
    #[serde(default)]
    pub leaf_cap: Option<u64>,
    /// Defaults to the scenario's own start, or `x ≡ 0` at `t = 0`.
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    /// `τ` of the DPP check; defaults to `t + coarse_step`.
    #[serde(default)]
    pub dpp_tau: Option<f64>,
    #[serde(default = "ValueSection::dpp_tolerance")]
    pub dpp_tolerance: f64,
    /// Relative tolerance against a scenario oracle.
    #[serde(default = "ValueSection::oracle_tolerance")]
    pub oracle_tolerance: f64,
    /// Number of grid times along the initial history written to `sweep.csv`.
    #[serde(default)]
    pub sweep: usize,
}

impl ValueSection {
    fn max_depth() -> usize {
        64
    }
    fn dpp_tolerance() -> f64 {
        1e-12
    }
    fn oracle_tolerance() -> f64 {
        0.02
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimaxSection {
    pub coarse_step: f64,
    #[serde(default = "MinimaxSection::samples")]
    pub samples: usize,
    #[serde(default = "MinimaxSection::budget")]
    pub budget: usize,
    /// Tolerance in units of the coarse step.
    #[serde(default = "MinimaxSection::tol_factor")]
    pub tol_factor: f64,
    #[serde(default = "one")]
    pub s_scale: f64,
    #[serde(default = "MinimaxSection::boundary_samples")]
    pub boundary_samples: usize,
    /// Points for the (ungated) directional-derivative criterion.
    #[serde(default)]
    pub directional_points: usize,
    #[serde(default)]
    pub touch: Option<TouchSection>,
}

impl MinimaxSection {
    fn samples() -> usize {
        30
    }
    fn budget() -> usize {
        60
    }
    fn tol_factor() -> f64 {
        3.0
    }
    fn boundary_samples() -> usize {
        32
    }
}

/// Viscosity touch tests on the lifted transport solution and its reversed twin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TouchSection {
    pub speed: f64,
    pub cells: usize,
    pub half_width: f64,
    pub anchors: usize,
    pub family: usize,
    /// Grid step of the probe paths.
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyScenario {
    HopfLax,
    Transport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencySection {
    pub scenario: ConsistencyScenario,
    #[serde(default = "ConsistencySection::speed")]
    pub speed: f64,
    pub coarse_step: f64,
    pub cells: usize,
    pub half_width: f64,
    #[serde(default = "ConsistencySection::samples")]
    pub samples: usize,
    /// Sampled states lie in `[−sample_half, sample_half]`.
    #[serde(default = "ConsistencySection::sample_half")]
    pub sample_half: f64,
    #[serde(default = "ConsistencySection::tol")]
    pub tol: f64,
}

impl ConsistencySection {
    fn speed() -> f64 {
        0.5
    }
    fn samples() -> usize {
        20
    }
    fn sample_half() -> f64 {
        1.5
    }
    fn tol() -> f64 {
        0.05
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityFamily {
    /// `P ≡ 1`, `S ≡ 0`.
    ConstantShift,
    /// `P ≡ 0`, `S = cos(3 y₁(T))`.
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub family: StabilityFamily,
    pub coarse_step: f64,
    #[serde(default = "StabilitySection::deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "StabilitySection::points")]
    pub points: usize,
    #[serde(default = "StabilitySection::tol")]
    pub tol: f64,
    #[serde(default = "StabilitySection::slack")]
    pub slack: f64,
}

impl StabilitySection {
    fn deltas() -> Vec<f64> {
        vec![1.0, 0.5, 0.25, 0.125]
    }
    fn points() -> usize {
        5
    }
    fn tol() -> f64 {
        1e-10
    }
    fn slack() -> f64 {
        1e-12
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedFunctional {
    V,
    Nu,
    SquaredCurrent,
    IntegralSquaredNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativesSection {
    pub functional: NamedFunctional,
    #[serde(default = "DerivativesSection::points")]
    pub points: usize,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "DerivativesSection::eps_fraction")]
    pub eps_fraction: f64,
    #[serde(default = "DerivativesSection::tol")]
    pub tol: f64,
}

impl DerivativesSection {
    fn points() -> usize {
        20
    }
    fn eps_fraction() -> f64 {
        0.5
    }
    fn tol() -> f64 {
        0.05
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Fixed { b: Vec<f64> },
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct C4Section {
    pub trials: usize,
    pub mesh: usize,
    #[serde(default)]
    pub extra_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacteristicsSection {
    pub delay_kind: DelayKind,
    pub c: f64,
    pub s: Vec<f64>,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    pub c4: C4Section,
    /// Also check the homogeneous half-ball complexes.
    #[serde(default)]
    pub homogeneous: bool,
    #[serde(default = "CharacteristicsSection::standard_tol")]
    pub standard_tol: f64,
    #[serde(default = "CharacteristicsSection::homogeneous_tol")]
    pub homogeneous_tol: f64,
}

impl CharacteristicsSection {
    fn standard_tol() -> f64 {
        1e-10
    }
    fn homogeneous_tol() -> f64 {
        1e-3
    }
}

impl Config {
    /// Parses a config; errors carry serde's line and column.
    pub fn parse(text: &str) -> Result<Config, RunError> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.grid.spec()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Config::parse(&text).map_err(|e| match e {
            RunError::Config(m) => RunError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn problem(&self) -> Result<(&ProblemConfig, ControlProblem), RunError> {
        let p = self.problem.as_ref().ok_or_else(|| RunError::Config("missing field `problem`".into()))?;
        Ok((p, p.build(&self.grid)?))
    }
}

pub(crate) fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, RunError> {
    s.as_ref().ok_or_else(|| RunError::Config(format!("missing field `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{ "seed": 3, "grid": { "n": 1, "h": 0.5, "T": 0.5, "step": 0.05 } }"#;

    #[test]
    fn minimal_config_parses() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.grid.horizon, 0.5);
        assert!(c.value.is_none());
    }

    #[test]
    fn section_defaults_fill_in() {
        let text = r#"{ "seed": 1, "grid": { "n": 1, "h": 0.5, "T": 0.5, "step": 0.05 },
                        "minimax": { "coarse_step": 0.05 } }"#;
        let m = Config::parse(text).unwrap().minimax.unwrap();
        assert_eq!((m.samples, m.budget, m.tol_factor), (30, 60, 3.0));
    }

    #[test]
    fn errors_are_config_errors_with_position() {
        for bad in ["", "{", r#"{ "grid": { "n": 1, "h": 0.5, "T": 0.5, "step": 0.05 } }"#, r#"{ "seed": -1 }"#] {
            match Config::parse(bad) {
                Err(RunError::Config(m)) => assert!(m.contains("line"), "{m}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_grid_is_rejected() {
        let text = r#"{ "seed": 1, "grid": { "n": 0, "h": 0.5, "T": 0.5, "step": 0.05 } }"#;
        assert!(matches!(Config::parse(text), Err(RunError::Config(_))));
    }

    #[test]
    fn delay_scenario_fixes_its_grid() {
        let c = Config::parse(
            r#"{ "seed": 1, "grid": { "n": 3, "h": 0.2, "T": 9, "step": 0.01 }, "problem": { "kind": "delay_scenario" } }"#,
        )
        .unwrap();
        let (pc, p) = c.problem().unwrap();
        assert_eq!(pc.grid(&c.grid), GridConfig { n: 1, h: 1.0, horizon: 2.0, step: 0.01 });
        assert_eq!((p.spec.n, p.spec.horizon), (1, 2.0));
    }

    #[test]
    fn hopf_lax_needs_one_dimension() {
        let c = Config::parse(r#"{ "seed": 1, "grid": { "n": 2, "h": 0.5, "T": 0.5, "step": 0.05 }, "problem": { "kind": "hopf_lax" } }"#)
            .unwrap();
        assert!(matches!(c.problem(), Err(RunError::Config(_))));
    }

    #[test]
    fn initial_point_checks_dimension() {
        let spec = GridSpec::new(2, 0.5, 0.5, 0.05).unwrap();
        assert!(InitialConfig { t: 0.1, value: vec![1.0] }.point(spec).is_err());
        let p = InitialConfig { t: 0.1, value: vec![1.0, 2.0] }.point(spec).unwrap();
        assert_eq!(p.history().current(), &[1.0, 2.0]);
    }
}
