//! Configuration, command dispatch and report emission.
//!
//! A run is driven by one JSON file (see `configs/`). Every command writes
//! `report.json` (sorted keys, no timestamps) into the output directory;
//! `--format csv` adds per-check CSV files.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::bounds::{
    c_phi, extract_bounds, grad_phi_bound_check, BoundSet, CPhiVariant, CutoffKind, CutoffProfile, KProfile,
    DEFAULT_CUT_BAND_CELLS,
};
use crate::calculus::{
    calibrate, calibration_reference, identity_refinement, Calibration, Tolerance, CALIBRATION_FLOOR,
    CALIBRATION_SAFETY,
};
use crate::drift::{drift_field, DriftReport, FunctionalKind, FunctionalSpec};
use crate::fields::{
    closed_form_solution, grid_json, solve_heat, write_grid_csv, Ball, ExactSolution, FieldOrigin, Mode, Region,
    ScalarField,
};
use crate::geometry::{EvolvingModel, ModelKind, ScaleProfile};
use crate::grid::GridSpec;
use crate::inequality::{
    bcp_rhs, check_ball_in_chart, constant_table, hamilton_global, hamilton_local, hamilton_local_general,
    liyau_global, liyau_local, liyau_local_general, liyau_lower_order_general, liyau_lower_order_local, ricci_compact,
    ricci_local_pair, CheckOptions, Curvature, InequalityReport, Theorem, DEFAULT_T_LO_STEPS,
};
use crate::montecarlo::{
    simulate, supermartingale_test, weak_error, EnsembleSpec, McReport, DEFAULT_DR, SE_MULTIPLIER, WEAK_ERROR_BIAS,
};
use crate::{Error, Result};

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "HARNACK_LAB_OUT";
/// Output directory when neither flag, environment nor config name one.
pub const DEFAULT_OUT_DIR: &str = "harnack-lab-out";
pub const DEFAULT_RESOLUTION: usize = 64;
/// Default number of time steps over `[0, T]` when `grid.dt` is absent.
pub const DEFAULT_TIME_STEPS: f64 = 100.0;
/// Accepted refinement ratio of identity residuals per halving.
pub const IDENTITY_RATIO_WINDOW: (f64, f64) = (3.5, 4.5);
/// Residuals below this are treated as exact (roundoff only).
pub const ROUNDOFF_FLOOR: f64 = 1e-10;
pub const IDENTITY_LEVELS: usize = 3;
pub const DEFAULT_RHO: f64 = 1.0;
pub const DEFAULT_ALPHA: f64 = 2.0;
/// Any admissible amplitude; weak-error observables use only the shape.
const OBSERVABLE_AMPLITUDE: f64 = 0.5;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_RUNTIME_FAULT: i32 = 3;

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub solution: Option<SolutionConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    #[serde(default)]
    pub checks: Vec<CheckConfig>,
    #[serde(default)]
    pub drift: Vec<DriftConfig>,
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Sphere,
    Circle,
    Torus,
    Hyperbolic,
}

/// `{"kind", "n", "params", "T"}`; params are `{c0}` (sphere),
/// `{profile}` (circle, torus) or `{kappa, radius}` (hyperbolic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelName,
    pub n: usize,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub pole_band: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SphereParams {
    c0: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileParams {
    #[serde(default = "ScaleProfile::unit")]
    profile: ScaleProfile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperbolicParams {
    kappa: f64,
    radius: f64,
}

fn params<T: for<'de> Deserialize<'de>>(p: &Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(p.clone())).map_err(|e| Error::Config(format!("model.params: {e}")))
}

impl ModelConfig {
    pub fn build(&self) -> Result<EvolvingModel> {
        let model = match self.kind {
            ModelName::Sphere => {
                let p: SphereParams = params(&self.params)?;
                EvolvingModel::shrinking_sphere(self.n, p.c0, self.horizon)?
            }
            ModelName::Circle => {
                if self.n != 1 {
                    return Err(Error::param("model.n", "the circle has n = 1"));
                }
                let p: ProfileParams = params(&self.params)?;
                EvolvingModel::conformal_circle(p.profile, self.horizon)?
            }
            ModelName::Torus => {
                let p: ProfileParams = params(&self.params)?;
                EvolvingModel::conformal_torus(self.n, p.profile, self.horizon)?
            }
            ModelName::Hyperbolic => {
                let p: HyperbolicParams = params(&self.params)?;
                EvolvingModel::static_hyperbolic(self.n, p.kappa, p.radius, self.horizon)?
            }
        };
        Ok(match self.pole_band {
            Some(b) => {
                if !(b >= 0.0 && b.is_finite()) {
                    return Err(Error::param("model.pole_band", "must be finite and nonnegative"));
                }
                model.with_pole_band(b)
            }
            None => model,
        })
    }
}

/// Closed-form `1 + ε e^{−λ(t)} Z`, or a Crank–Nicolson solve from
/// `1 + ε Z` at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolutionConfig {
    ClosedForm { mode: Mode, epsilon: f64 },
    Numeric { mode: Mode, epsilon: f64 },
}

impl SolutionConfig {
    pub fn mode(&self) -> (Mode, f64) {
        match *self {
            SolutionConfig::ClosedForm { mode, epsilon } | SolutionConfig::Numeric { mode, epsilon } => (mode, epsilon),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Largest time step; `T / 100` when absent.
    #[serde(default)]
    pub dt: Option<f64>,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            resolution: DEFAULT_RESOLUTION,
            dt: None,
        }
    }
}

/// `c_tol` pins the tolerance constant instead of calibrating it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default)]
    pub c_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub theorem: String,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub rho: Option<f64>,
    /// Constant `k` (lower bound of `R_t`, or the Ricci bound).
    #[serde(default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub cutoff: Option<CutoffKind>,
    #[serde(default)]
    pub t_lo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub kind: String,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub t_lo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    #[serde(default = "default_dr")]
    pub dr: f64,
    /// Defaults to `T`.
    #[serde(default)]
    pub t_star: Option<f64>,
    pub start: Vec<f64>,
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Eigenfunction observable of the weak-error test; the solution's
    /// mode when absent. `weak_error: false` skips the test.
    #[serde(default = "default_true")]
    pub weak_error: bool,
    #[serde(default)]
    pub observable: Option<Mode>,
    #[serde(default)]
    pub supermartingale: Vec<DriftConfig>,
}

fn default_dr() -> f64 {
    DEFAULT_DR
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            formats: default_formats(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Lowercase hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// The config with `--refine` and `--seed` folded in.
    pub fn effective(&self, refine: u32, seed: Option<u64>) -> Result<Self> {
        let mut cfg = self.clone();
        let scale = 1usize
            .checked_shl(refine)
            .filter(|s| *s <= 1 << 12)
            .ok_or_else(|| Error::param("refine", "too many halvings"))?;
        cfg.grid.resolution = cfg.grid.resolution.saturating_mul(scale);
        let dt = cfg.grid.dt.unwrap_or(cfg.model.horizon / DEFAULT_TIME_STEPS);
        cfg.grid.dt = Some(dt / scale as f64);
        if let (Some(mc), Some(s)) = (cfg.mc.as_mut(), seed) {
            mc.seed = s;
        }
        Ok(cfg)
    }
}

// ---------------------------------------------------------------- plan

/// A validated check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckPlan {
    pub theorem: Theorem,
    pub alpha: Option<f64>,
    pub ball: Option<(Vec<f64>, f64)>,
    pub k: Option<f64>,
    pub cutoff: CutoffKind,
    pub t_lo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftPlan {
    pub kind: FunctionalKind,
    pub alpha: Option<f64>,
    pub k: Option<f64>,
    pub t_lo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McPlan {
    pub ensemble: EnsembleSpec,
    pub observable: Option<Mode>,
    pub supermartingale: Vec<DriftPlan>,
}

/// Everything a command needs, checked up front; errors here are
/// configuration errors (exit 2).
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: RunConfig,
    pub model: EvolvingModel,
    pub grid: GridSpec,
    pub solution: SolutionConfig,
    pub checks: Vec<CheckPlan>,
    pub drifts: Vec<DriftPlan>,
    pub mc: Option<McPlan>,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

fn alpha_above_one(name: &str, v: Option<f64>) -> Result<f64> {
    let a = v.ok_or_else(|| Error::param(name, "required (must exceed 1)"))?;
    if a > 1.0 && a.is_finite() {
        Ok(a)
    } else {
        Err(Error::param(name, format!("must exceed 1, got {a}")))
    }
}

fn finite_opt(name: &str, v: Option<f64>) -> Result<Option<f64>> {
    match v {
        Some(x) if !x.is_finite() => Err(Error::param(name, "must be finite")),
        _ => Ok(v),
    }
}

fn plan_check(i: usize, c: &CheckConfig, model: &EvolvingModel) -> Result<CheckPlan> {
    let theorem = Theorem::parse(&c.theorem).map_err(|e| Error::Config(format!("checks[{i}]: {e}")))?;
    let name = |p: &str| format!("checks[{i}].{p}");
    let alpha = if theorem.needs_alpha() {
        Some(alpha_above_one(&name("alpha"), c.alpha)?)
    } else if theorem == Theorem::RicciLocalHamilton {
        // the pair is computed together, α only shapes the unused Li-Yau half
        Some(alpha_above_one(&name("alpha"), c.alpha.or(Some(DEFAULT_ALPHA)))?)
    } else {
        if c.alpha.is_some() {
            return Err(Error::param(&name("alpha"), format!("not used by {}", theorem.id())));
        }
        None
    };
    let local = !matches!(
        theorem,
        Theorem::HamiltonGlobal | Theorem::LiyauGlobal | Theorem::RicciCompact
    );
    let ball = if local {
        let x0 =
            c.x0.clone()
                .ok_or_else(|| Error::param(&name("x0"), "required for local checks"))?;
        let rho = positive(
            &name("rho"),
            c.rho
                .ok_or_else(|| Error::param(&name("rho"), "required for local checks"))?,
        )?;
        check_ball_in_chart(model, &x0, rho).map_err(|e| Error::Config(format!("checks[{i}]: {e}")))?;
        Some((x0, rho))
    } else {
        if c.x0.is_some() || c.rho.is_some() {
            return Err(Error::param(&name("x0"), format!("{} takes no ball", theorem.id())));
        }
        None
    };
    let ricci = matches!(
        theorem,
        Theorem::RicciCompact | Theorem::RicciLocalHamilton | Theorem::RicciLocalLiyau
    );
    if ricci && !matches!(model.kind, ModelKind::ShrinkingSphere { .. }) {
        return Err(Error::Config(format!(
            "checks[{i}]: {} needs the Ricci-flow sphere",
            theorem.id()
        )));
    }
    if matches!(theorem, Theorem::LiyauGlobal) && !model.is_closed() {
        return Err(Error::Config(format!("checks[{i}]: liyau_global needs a closed model")));
    }
    let k = finite_opt(&name("k"), c.k)?;
    if !(ricci || theorem == Theorem::HamiltonGlobal) && k.is_some() {
        return Err(Error::param(&name("k"), format!("not used by {}", theorem.id())));
    }
    let general = matches!(
        theorem,
        Theorem::HamiltonLocalGeneral | Theorem::LiyauLocalGeneral | Theorem::LiyauLowerOrderGeneral
    );
    if !general && c.cutoff.is_some() {
        return Err(Error::param(&name("cutoff"), format!("not used by {}", theorem.id())));
    }
    Ok(CheckPlan {
        theorem,
        alpha,
        ball,
        k,
        cutoff: c.cutoff.unwrap_or(CutoffKind::Cosine),
        t_lo: finite_opt(&name("t_lo"), c.t_lo)?,
    })
}

fn plan_drift(label: &str, d: &DriftConfig, model: &EvolvingModel) -> Result<DriftPlan> {
    let kind = FunctionalKind::parse(&d.kind).map_err(|e| Error::Config(format!("{label}: {e}")))?;
    let name = |p: &str| format!("{label}.{p}");
    let alpha = match kind {
        FunctionalKind::STildeLiyau => Some(alpha_above_one(&name("alpha"), d.alpha)?),
        _ => {
            if d.alpha.is_some() {
                return Err(Error::param(&name("alpha"), format!("not used by {}", kind.id())));
            }
            None
        }
    };
    if kind == FunctionalKind::STildeLiyau && d.k.is_some() {
        return Err(Error::param(&name("k"), "not used by s_tilde_liyau"));
    }
    if kind == FunctionalKind::SHatRicci && !matches!(model.kind, ModelKind::ShrinkingSphere { .. }) {
        return Err(Error::Config(format!(
            "{label}: s_hat_ricci needs the Ricci-flow sphere"
        )));
    }
    Ok(DriftPlan {
        kind,
        alpha,
        k: finite_opt(&name("k"), d.k)?,
        t_lo: finite_opt(&name("t_lo"), d.t_lo)?,
    })
}

impl Plan {
    /// Validates an effective config (see [`RunConfig::effective`]).
    pub fn new(config: RunConfig) -> Result<Self> {
        let model = config.model.build()?;
        let validity = model.validity();
        if !validity.valid {
            return Err(Error::InvalidModel(validity.message));
        }
        let dt = positive("grid.dt", config.grid.dt.unwrap_or(model.horizon / DEFAULT_TIME_STEPS))?;
        let grid = GridSpec::for_model(&model, config.grid.resolution, dt)?;
        let solution = config.solution.unwrap_or_else(|| {
            let (mode, epsilon) = calibration_reference(&model);
            SolutionConfig::ClosedForm { mode, epsilon }
        });
        let (mode, eps) = solution.mode();
        if !eps.is_finite() {
            return Err(Error::param("solution.epsilon", "must be finite"));
        }
        ExactSolution::new(&model, mode, eps)?;
        let checks = config
            .checks
            .iter()
            .enumerate()
            .map(|(i, c)| plan_check(i, c, &model))
            .collect::<Result<Vec<_>>>()?;
        let drifts = config
            .drift
            .iter()
            .enumerate()
            .map(|(i, d)| plan_drift(&format!("drift[{i}]"), d, &model))
            .collect::<Result<Vec<_>>>()?;
        let mc = match &config.mc {
            None => None,
            Some(m) => {
                let ensemble = EnsembleSpec {
                    t_star: m.t_star.unwrap_or(model.horizon),
                    start: m.start.clone(),
                    n_paths: m.n_paths,
                    dr: m.dr,
                    checkpoints: m.checkpoints.clone(),
                    seed: m.seed,
                };
                // simulating zero steps validates the ensemble settings cheaply
                let probe = EnsembleSpec {
                    n_paths: 1,
                    checkpoints: vec![0.0],
                    ..ensemble.clone()
                };
                simulate(&model, &probe).map_err(|e| Error::Config(format!("mc: {e}")))?;
                if ensemble.n_paths == 0 {
                    return Err(Error::param("mc.n_paths", "must be positive"));
                }
                positive("mc.dr", ensemble.dr)?;
                let ok = !ensemble.checkpoints.is_empty()
                    && ensemble.checkpoints.windows(2).all(|w| w[1] > w[0])
                    && ensemble.checkpoints.iter().all(|&r| r >= 0.0 && r <= ensemble.t_star);
                if !ok {
                    return Err(Error::param(
                        "mc.checkpoints",
                        "must increase strictly within [0, t_star]",
                    ));
                }
                if let Some(obs) = m.observable {
                    ExactSolution::new(&model, obs, OBSERVABLE_AMPLITUDE)?;
                }
                let supermartingale = m
                    .supermartingale
                    .iter()
                    .enumerate()
                    .map(|(i, d)| plan_drift(&format!("mc.supermartingale[{i}]"), d, &model))
                    .collect::<Result<Vec<_>>>()?;
                Some(McPlan {
                    ensemble,
                    observable: m.observable,
                    supermartingale,
                })
            }
        };
        Ok(Plan {
            config,
            model,
            grid,
            solution,
            checks,
            drifts,
            mc,
        })
    }

    pub fn field(&self) -> Result<ScalarField> {
        match self.solution {
            SolutionConfig::ClosedForm { mode, epsilon } => {
                closed_form_solution(&self.model, mode, epsilon, &self.grid)
            }
            SolutionConfig::Numeric { mode, epsilon } => {
                let sol = ExactSolution::new(&self.model, mode, epsilon)?;
                solve_heat(&self.model, |x| sol.value(x, 0.0), &self.grid)
            }
        }
    }
}

// ---------------------------------------------------------------- execution

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Run,
    Constants,
    Identities,
    Mc,
    Solve,
}

impl CommandKind {
    pub fn id(self) -> &'static str {
        match self {
            CommandKind::Run => "run",
            CommandKind::Constants => "constants",
            CommandKind::Identities => "identities",
            CommandKind::Mc => "mc",
            CommandKind::Solve => "solve",
        }
    }
}

/// A failed command: bad configuration (exit 2) or a fault while running
/// (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(Error),
    #[error("{0}")]
    Fault(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID_CONFIG,
            CliError::Fault(_) => EXIT_RUNTIME_FAULT,
        }
    }
}

/// Report of one command. `text` is the human-readable summary printed on
/// stdout.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub pass: bool,
    pub text: String,
    /// Extra files (name, contents) written next to `report.json`.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_PASS
        } else {
            EXIT_CHECK_FAILED
        }
    }

    /// `report.json` bytes: pretty JSON with sorted keys and a final newline.
    pub fn report_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(&self.report)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.report_bytes()?)?;
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

fn fault<T>(r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(CliError::Fault)
}

fn to_value<T: Serialize>(v: &T) -> std::result::Result<Value, CliError> {
    fault(serde_json::to_value(v).map_err(Error::from))
}

struct Context {
    plan: Plan,
    c_tol: f64,
    calibration: Option<Calibration>,
    bounds: BoundSet,
}

impl Context {
    fn new(plan: Plan) -> std::result::Result<Self, CliError> {
        let (c_tol, calibration) = match plan.config.tolerance.c_tol {
            Some(c) => (positive("tolerance.c_tol", c).map_err(CliError::Invalid)?, None),
            None => {
                let cal = fault(calibrate(&plan.model))?;
                (cal.c_tol, Some(cal))
            }
        };
        let bounds = fault(extract_bounds(&plan.model, None))?;
        Ok(Context {
            plan,
            c_tol,
            calibration,
            bounds,
        })
    }

    fn provenance(&self) -> std::result::Result<Value, CliError> {
        let grid = &self.plan.grid;
        Ok(json!({
            "config_sha256": fault(self.plan.config.hash())?,
            "version": env!("CARGO_PKG_VERSION"),
            "grid": to_value(grid)?,
            "h": grid.h(),
            "dt": grid.dt(),
            "tolerance": {
                "c_tol": self.c_tol,
                "source": if self.calibration.is_some() { "calibrated" } else { "config" },
                "calibration": to_value(&self.calibration)?,
                "spatial": Tolerance::for_grid(self.c_tol, grid, false).value,
                "space_time": Tolerance::for_grid(self.c_tol, grid, true).value,
            },
            "constants": {
                "t_lo_steps": DEFAULT_T_LO_STEPS,
                "calibration_safety": CALIBRATION_SAFETY,
                "calibration_floor": CALIBRATION_FLOOR,
                "mc_se_multiplier": SE_MULTIPLIER,
                "mc_weak_error_bias": WEAK_ERROR_BIAS,
                "cut_band_cells": DEFAULT_CUT_BAND_CELLS,
            },
            "bounds": to_value(&self.bounds)?,
        }))
    }

    fn header(&self, command: CommandKind) -> std::result::Result<Map<String, Value>, CliError> {
        let mut m = Map::new();
        m.insert("command".into(), json!(command.id()));
        m.insert("provenance".into(), self.provenance()?);
        m.insert("model".into(), to_value(&self.plan.model)?);
        m.insert("model_validity".into(), to_value(&self.plan.model.validity())?);
        Ok(m)
    }

    fn local_bounds(&self, x0: &[f64], rho: f64) -> Result<BoundSet> {
        let region = Region {
            t_min: 0.0,
            t_max: self.plan.model.horizon,
            ball: Some(Ball {
                center: x0.to_vec(),
                radius: rho,
            }),
        };
        extract_bounds(&self.plan.model, Some(&region))
    }

    fn functional(&self, d: &DriftPlan) -> Result<FunctionalSpec> {
        let horizon = self.plan.model.horizon;
        Ok(match d.kind {
            FunctionalKind::HHamilton => {
                FunctionalSpec::hamilton(d.k.map_or(self.bounds.k, KProfile::constant), horizon)
            }
            FunctionalKind::STildeLiyau => {
                FunctionalSpec::liyau(d.alpha.unwrap_or(DEFAULT_ALPHA), &self.bounds, horizon)?
            }
            FunctionalKind::SHatRicci => FunctionalSpec::ricci(d.k.unwrap_or(self.bounds.ricci_abs), horizon),
        })
    }

    fn run_check(&self, c: &CheckPlan, field: &ScalarField) -> Result<(Vec<InequalityReport>, BoundSet)> {
        let opts = CheckOptions {
            c_tol: self.c_tol,
            t_lo: c.t_lo,
        };
        let bounds = match &c.ball {
            Some((x0, rho)) => self.local_bounds(x0, *rho)?,
            None => self.bounds.clone(),
        };
        let cutoff = |x0: &[f64], rho: f64| {
            CutoffProfile::build(&field.model, &field.grid, x0, rho, c.cutoff, DEFAULT_CUT_BAND_CELLS)
        };
        let alpha = c.alpha.unwrap_or(DEFAULT_ALPHA);
        let ball = || c.ball.clone().ok_or_else(|| Error::param("x0", "missing ball"));
        let reports = match c.theorem {
            Theorem::HamiltonGlobal => {
                let k = c.k.map_or(bounds.k, KProfile::constant);
                vec![hamilton_global(field, &k, opts)?]
            }
            Theorem::HamiltonLocal => {
                let (x0, rho) = ball()?;
                vec![hamilton_local(field, &x0, rho, &bounds, opts)?]
            }
            Theorem::HamiltonLocalGeneral => {
                let (x0, rho) = ball()?;
                vec![hamilton_local_general(field, &cutoff(&x0, rho)?, &bounds, opts)?]
            }
            Theorem::LiyauLocal => {
                let (x0, rho) = ball()?;
                vec![liyau_local(field, alpha, &x0, rho, &bounds, opts)?]
            }
            Theorem::LiyauLocalGeneral => {
                let (x0, rho) = ball()?;
                vec![liyau_local_general(field, alpha, &cutoff(&x0, rho)?, &bounds, opts)?]
            }
            Theorem::LiyauGlobal => vec![liyau_global(field, alpha, &bounds, opts)?],
            Theorem::LiyauLowerOrderLocal => {
                let (x0, rho) = ball()?;
                vec![liyau_lower_order_local(field, &x0, rho, &bounds, opts)?]
            }
            Theorem::LiyauLowerOrderGeneral => {
                let (x0, rho) = ball()?;
                vec![liyau_lower_order_general(field, &cutoff(&x0, rho)?, &bounds, opts)?]
            }
            Theorem::RicciCompact => vec![ricci_compact(field, c.k.unwrap_or(bounds.ricci_abs), opts)?],
            Theorem::RicciLocalHamilton | Theorem::RicciLocalLiyau => {
                let (x0, rho) = ball()?;
                let (ham, ly) = ricci_local_pair(field, alpha, &x0, rho, c.k.unwrap_or(bounds.ricci_abs), opts)?;
                vec![if c.theorem == Theorem::RicciLocalHamilton {
                    ham
                } else {
                    ly
                }]
            }
        };
        Ok((reports, bounds))
    }

    fn run_mc(&self, mc: &McPlan, field: &ScalarField) -> Result<Vec<McReport>> {
        let ensemble = simulate(&self.plan.model, &mc.ensemble)?;
        let mut out = Vec::new();
        if self.plan.config.mc.as_ref().is_some_and(|m| m.weak_error) {
            let mode = mc.observable.unwrap_or(self.plan.solution.mode().0);
            let sol = ExactSolution::new(&self.plan.model, mode, OBSERVABLE_AMPLITUDE)?;
            out.push(weak_error(&ensemble, &sol)?);
        }
        for d in &mc.supermartingale {
            out.push(supermartingale_test(&self.functional(d)?, &ensemble, field)?);
        }
        Ok(out)
    }
}

fn field_summary(field: &ScalarField) -> std::result::Result<Value, CliError> {
    let max = field.values.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(json!({
        "origin": to_value(&field.origin)?,
        "min": field.min_value(),
        "max": max,
        "nodes": field.grid.n_nodes(),
        "times": field.grid.n_times(),
    }))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> std::result::Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    fault(f(&mut buf))?;
    Ok(buf)
}

/// Unique file name `<stem>.csv`, suffixed `_2`, `_3`, … on repeats.
fn csv_name(files: &[(String, Vec<u8>)], stem: &str) -> String {
    let mut name = format!("{stem}.csv");
    let mut i = 2;
    while files.iter().any(|(n, _)| *n == name) {
        name = format!("{stem}_{i}.csv");
        i += 1;
    }
    name
}

fn line(text: &mut String, label: &str, pass: bool, detail: String) {
    let _ = writeln!(text, "{:<28} {}  {detail}", label, if pass { "PASS" } else { "FAIL" });
}

/// Runs one command on a validated plan. Nothing is written to disk.
pub fn execute(command: CommandKind, plan: Plan, formats: &[Format]) -> std::result::Result<Outcome, CliError> {
    let csv = formats.contains(&Format::Csv);
    let ctx = Context::new(plan)?;
    let mut report = ctx.header(command)?;
    let mut files = Vec::new();
    let mut text = String::new();
    let mut failures: Vec<String> = Vec::new();

    match command {
        CommandKind::Run => {
            let field = fault(ctx.plan.field())?;
            report.insert("field".into(), field_summary(&field)?);
            let mut checks = Vec::new();
            for c in &ctx.plan.checks {
                let (reps, bounds) = fault(ctx.run_check(c, &field))?;
                for r in reps {
                    let mut v = to_value(&r)?;
                    if let Value::Object(m) = &mut v {
                        m.insert("bounds".into(), to_value(&bounds)?);
                    }
                    line(
                        &mut text,
                        r.theorem.id(),
                        r.pass,
                        format!(
                            "min_slack {:.6e}, violations {}/{}",
                            r.min_slack, r.violations, r.checked
                        ),
                    );
                    if !r.pass {
                        failures.push(r.theorem.id().into());
                    }
                    if csv {
                        let name = csv_name(&files, r.theorem.id());
                        files.push((name, csv_bytes(|b| r.write_csv(b))?));
                    }
                    checks.push(v);
                }
            }
            report.insert("checks".into(), Value::Array(checks));
            let mut drifts = Vec::new();
            for d in &ctx.plan.drifts {
                let spec = fault(ctx.functional(d))?;
                let r: DriftReport = fault(drift_field(&spec, &field, ctx.c_tol, d.t_lo))?;
                line(
                    &mut text,
                    r.kind.id(),
                    r.pass,
                    format!("masked_sup {:.6e} <= tau {:.3e}", r.masked_sup, r.tolerance.value),
                );
                if !r.pass {
                    failures.push(r.kind.id().into());
                }
                if csv {
                    let name = csv_name(&files, &format!("drift_{}", r.kind.id()));
                    files.push((name, csv_bytes(|b| write_grid_csv(b, &field.grid, "drift", &r.drift))?));
                }
                let mut v = to_value(&r)?;
                if let Value::Object(m) = &mut v {
                    m.insert("spec".into(), to_value(&spec)?);
                }
                drifts.push(v);
            }
            report.insert("drift".into(), Value::Array(drifts));
            let mut mcs = Vec::new();
            if let Some(mc) = &ctx.plan.mc {
                for r in fault(ctx.run_mc(mc, &field))? {
                    mc_line(&mut text, &r);
                    if !r.pass {
                        failures.push(format!("mc:{}", r.test));
                    }
                    if csv {
                        let name = csv_name(&files, &format!("mc_{}", r.test));
                        files.push((name, csv_bytes(|b| r.write_csv(b))?));
                    }
                    mcs.push(to_value(&r)?);
                }
            }
            report.insert("mc".into(), Value::Array(mcs));
        }
        CommandKind::Mc => {
            let mc = ctx
                .plan
                .mc
                .as_ref()
                .ok_or_else(|| CliError::Invalid(Error::Config("the mc command needs an `mc` section".into())))?;
            let needs_field = !mc.supermartingale.is_empty();
            let field = if needs_field {
                Some(fault(ctx.plan.field())?)
            } else {
                None
            };
            let placeholder;
            let field_ref = match &field {
                Some(f) => f,
                None => {
                    placeholder = fault(closed_form_solution(
                        &ctx.plan.model,
                        Mode::Constant,
                        0.0,
                        &ctx.plan.grid,
                    ))?;
                    &placeholder
                }
            };
            let mut mcs = Vec::new();
            for r in fault(ctx.run_mc(mc, field_ref))? {
                mc_line(&mut text, &r);
                if !r.pass {
                    failures.push(format!("mc:{}", r.test));
                }
                if csv {
                    let name = csv_name(&files, &format!("mc_{}", r.test));
                    files.push((name, csv_bytes(|b| r.write_csv(b))?));
                }
                mcs.push(to_value(&r)?);
            }
            report.insert("mc".into(), Value::Array(mcs));
        }
        CommandKind::Identities => {
            let (mode, eps) = match ctx.plan.solution {
                SolutionConfig::ClosedForm { mode, epsilon } => (mode, epsilon),
                SolutionConfig::Numeric { .. } => calibration_reference(&ctx.plan.model),
            };
            let levels = fault(identity_refinement(
                &ctx.plan.model,
                mode,
                eps,
                &ctx.plan.grid,
                IDENTITY_LEVELS,
            ))?;
            let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::INFINITY };
            let mut entries = Vec::new();
            for (name, pick) in [
                (
                    "first",
                    (|l: &crate::calculus::RefinementLevel| l.sup_first) as fn(&_) -> f64,
                ),
                ("second", |l: &crate::calculus::RefinementLevel| l.sup_second),
            ] {
                let sups: Vec<f64> = levels.iter().map(pick).collect();
                let ratios: Vec<f64> = sups.windows(2).map(|w| ratio(w[0], w[1])).collect();
                let roundoff = sups.iter().all(|&s| s <= ROUNDOFF_FLOOR);
                let in_window = ratios
                    .iter()
                    .all(|&r| r >= IDENTITY_RATIO_WINDOW.0 && r <= IDENTITY_RATIO_WINDOW.1);
                let bounded = levels
                    .iter()
                    .zip(&sups)
                    .all(|(l, &s)| s <= ctx.c_tol * (l.h * l.h + l.dt * l.dt) + ROUNDOFF_FLOOR);
                let pass = (roundoff || in_window) && bounded;
                line(
                    &mut text,
                    &format!("identity_{name}"),
                    pass,
                    format!(
                        "sups {:?}, ratios {:?}",
                        sups.iter().map(|s| format!("{s:.3e}")).collect::<Vec<_>>(),
                        ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
                    ),
                );
                if !pass {
                    failures.push(format!("identity_{name}"));
                }
                entries.push(json!({
                    "identity": name,
                    "sups": sups,
                    "ratios": ratios,
                    "ratio_window": [IDENTITY_RATIO_WINDOW.0, IDENTITY_RATIO_WINDOW.1],
                    "roundoff_only": roundoff,
                    "bounded_by_c_tol_h2": bounded,
                    "pass": pass,
                }));
            }
            report.insert(
                "identities".into(),
                json!({
                    "mode": to_value(&mode)?,
                    "amplitude": eps,
                    "levels": to_value(&levels)?,
                    "results": entries,
                }),
            );
        }
        CommandKind::Solve => {
            let field = fault(ctx.plan.field())?;
            report.insert("field".into(), field_summary(&field)?);
            let mut dump = serde_json::to_vec(&grid_json(&field.grid, "u", &field.values))
                .map_err(|e| CliError::Fault(e.into()))?;
            dump.push(b'\n');
            files.push(("field.json".into(), dump));
            if csv {
                files.push(("field.csv".into(), csv_bytes(|b| field.write_csv(b))?));
            }
            let _ = writeln!(
                text,
                "solved {} on {} nodes x {} times, min u = {:.6e}",
                ctx.plan.model.name(),
                field.grid.n_nodes(),
                field.grid.n_times(),
                field.min_value()
            );
            if let FieldOrigin::Numeric {
                max_principle_violations,
                ..
            } = field.origin
            {
                let _ = writeln!(text, "max-principle violations: {max_principle_violations}");
            }
        }
        CommandKind::Constants => {
            let (table, value) = constants_table(&ctx)?;
            text.push_str(&table);
            report.insert("constants".into(), value);
        }
    }

    let pass = failures.is_empty();
    report.insert("failures".into(), json!(failures));
    report.insert("pass".into(), json!(pass));
    let _ = writeln!(text, "overall: {}", if pass { "PASS" } else { "FAIL" });
    Ok(Outcome {
        report: Value::Object(report),
        pass,
        text,
        files,
    })
}

fn mc_line(text: &mut String, r: &McReport) {
    let detail = match (&r.weak_error, &r.monotonicity) {
        (Some(w), _) => format!(
            "mean {:.6} vs {:.6}, |err| {:.2e} <= {:.2e}",
            w.mean, w.reference, w.abs_error, w.allowance
        ),
        (None, Some(m)) => format!("worst drop z = {:.3}", m.worst_drop),
        _ => String::new(),
    };
    let flag = if r.flagged { " (pole band flagged)" } else { "" };
    line(text, &format!("mc:{}", r.test), r.pass, format!("{detail}{flag}"));
}

/// Constant blocks, numeric `c_φ` sups and the comparison value `2kn + n/t`.
fn constants_table(ctx: &Context) -> std::result::Result<(String, Value), CliError> {
    let plan = &ctx.plan;
    let model = &plan.model;
    let n = model.dim;
    let first_ball = plan.checks.iter().find_map(|c| c.ball.clone());
    let alpha = plan.checks.iter().find_map(|c| c.alpha).unwrap_or(DEFAULT_ALPHA);
    let (x0, rho) = first_ball.unwrap_or_else(|| (vec![0.0; n], DEFAULT_RHO));
    let ball_ok = check_ball_in_chart(model, &x0, rho).is_ok();
    let bounds = if ball_ok {
        fault(ctx.local_bounds(&x0, rho))?
    } else {
        ctx.bounds.clone()
    };
    let k = bounds.ricci_abs;
    let curvature = Curvature::from(&bounds);
    let rows = fault(constant_table(n, rho, alpha, &curvature, k))?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} n={n} rho={rho} alpha={alpha} k={k} k1={} k2={} k3={} k4={}",
        model.name(),
        curvature.k1,
        curvature.k2,
        curvature.k3,
        curvature.k4
    );
    let _ = writeln!(text, "{:<34} {:>16}  note", "constant", "value");
    for r in &rows {
        let _ = writeln!(text, "{:<34} {:>16.8e}  {}", r.theorem, r.value, r.note);
    }

    let mut cphi = Vec::new();
    let mut cutoff_report = Value::Null;
    if ball_ok {
        match CutoffProfile::build(model, &plan.grid, &x0, rho, CutoffKind::Cosine, DEFAULT_CUT_BAND_CELLS) {
            Ok(profile) => {
                for variant in [CPhiVariant::Three, CPhiVariant::Seven, CPhiVariant::LiYau { alpha }] {
                    let r = fault(c_phi(&profile, variant, &bounds, ctx.c_tol))?;
                    let label = match variant {
                        CPhiVariant::Three => "c_phi[3] numeric sup".to_string(),
                        CPhiVariant::Seven => "c_phi[7] numeric sup".to_string(),
                        CPhiVariant::LiYau { alpha } => format!("c_phi[3+a^2n/(a-1)] a={alpha}"),
                    };
                    let bound = r.analytic_bound.map_or("-".to_string(), |b| format!("{b:.8e}"));
                    let _ = writeln!(text, "{:<34} {:>16.8e}  analytic bound {bound}", label, r.numeric_sup);
                    cphi.push(to_value(&r)?);
                }
                cutoff_report = to_value(&fault(grad_phi_bound_check(&profile, ctx.c_tol))?)?;
            }
            Err(e) => {
                let _ = writeln!(text, "c_phi skipped: {e}");
            }
        }
    } else {
        let _ = writeln!(text, "c_phi skipped: ball B_{rho}({x0:?}) leaves the chart");
    }
    let t_hi = plan.grid.t_hi;
    let bcp = bcp_rhs(n, k, t_hi);
    let _ = writeln!(
        text,
        "{:<34} {:>16.8e}  2kn + n/t at t = {t_hi}",
        "bcp_comparison_at_T", bcp
    );
    let value = json!({
        "n": n,
        "rho": rho,
        "alpha": alpha,
        "k": k,
        "x0": x0,
        "bounds": to_value(&bounds)?,
        "rows": to_value(&rows)?,
        "c_phi": cphi,
        "cutoff": cutoff_report,
        "bcp_comparison": {"t": t_hi, "value": bcp},
    });
    Ok((text, value))
}

// ---------------------------------------------------------------- command line

#[derive(Debug, Parser)]
#[command(
    name = "harnack-lab",
    version,
    about = "Gradient-estimate laboratory for heat flows on evolving manifolds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve, extract bounds, run checks, drifts and Monte Carlo.
    Run(CommonArgs),
    /// Print every constant block next to the numeric cutoff constants.
    Constants(CommonArgs),
    /// Identity residual refinement study.
    Identities(CommonArgs),
    /// Monte Carlo ensemble tests only.
    Mc(CommonArgs),
    /// Export the solution field.
    Solve(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides HARNACK_LAB_OUT and the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Halve grid spacing and time step this many times.
    #[arg(long, default_value_t = 0)]
    pub refine: u32,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `json` writes report.json; `csv` adds per-check CSV files.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl Command {
    fn split(&self) -> (CommandKind, &CommonArgs) {
        match self {
            Command::Run(a) => (CommandKind::Run, a),
            Command::Constants(a) => (CommandKind::Constants, a),
            Command::Identities(a) => (CommandKind::Identities, a),
            Command::Mc(a) => (CommandKind::Mc, a),
            Command::Solve(a) => (CommandKind::Solve, a),
        }
    }
}

/// `--out`, then `HARNACK_LAB_OUT`, then `output.dir` (relative to the
/// config file), then `harnack-lab-out`.
pub fn output_dir(args_out: Option<&Path>, env: Option<OsString>, config: &RunConfig, config_path: &Path) -> PathBuf {
    if let Some(p) = args_out {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    match &config.output.dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => config_path.parent().unwrap_or(Path::new(".")).join(d),
        None => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

/// Parses arguments, runs the command, writes its files and returns the
/// process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (kind, args) = cli.command.split();
    let invalid = |e: Error| {
        eprintln!("error: {e}");
        EXIT_INVALID_CONFIG
    };
    let config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return invalid(e),
    };
    let formats = match args.format {
        Some(Format::Json) => vec![Format::Json],
        Some(Format::Csv) => vec![Format::Json, Format::Csv],
        None => config.output.formats.clone(),
    };
    let dir = output_dir(args.out.as_deref(), std::env::var_os(OUT_ENV), &config, &args.config);
    let plan = match config.effective(args.refine, args.seed).and_then(Plan::new) {
        Ok(p) => p,
        Err(e) => return invalid(e),
    };
    let outcome = match execute(kind, plan, &formats) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    print!("{}", outcome.text);
    if let Err(e) = outcome.write(&dir) {
        eprintln!("error: cannot write reports to {}: {e}", dir.display());
        return EXIT_RUNTIME_FAULT;
    }
    println!("report: {}", dir.join("report.json").display());
    outcome.exit_code()
}
