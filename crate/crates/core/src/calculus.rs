//! Finite-difference differential quantities on space-time grids and the
//! pointwise residuals of the evolution identities for `q = |∇u|²/u`.
//!
//! Grid functions use NaN for "undefined"; a stencil is only formed where
//! every node it touches is defined, so derived quantities shrink the
//! defined region by one cell per differentiation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundSet;
use crate::error::{Error, Result};
use crate::fields::{closed_form_solution, Mode, ScalarField};
use crate::geometry::{EvolvingModel, MetricData, ModelKind};
use crate::grid::GridSpec;

/// Safety factor applied to the calibrated residual constant.
pub const CALIBRATION_SAFETY: f64 = 10.0;
/// Lower bound on any calibrated `C_tol`.
pub const CALIBRATION_FLOOR: f64 = 1.0;
/// Resolutions of the calibration refinement pair.
pub const CALIBRATION_RESOLUTIONS: [usize; 2] = [32, 64];
/// Chart step for tensor derivatives taken directly from the model.
const TENSOR_FD_STEP: f64 = 1e-4;

/// Tolerance `τ = C_tol · (h² + δt²)` (`δt = 0` for purely spatial checks).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub c_tol: f64,
    pub h: f64,
    pub dt: f64,
    pub value: f64,
}

impl Tolerance {
    pub fn spatial(c_tol: f64, h: f64) -> Self {
        Self::space_time(c_tol, h, 0.0)
    }

    pub fn space_time(c_tol: f64, h: f64, dt: f64) -> Self {
        Tolerance {
            c_tol,
            h,
            dt,
            value: c_tol * (h * h + dt * dt),
        }
    }

    pub fn for_grid(c_tol: f64, grid: &GridSpec, with_time: bool) -> Self {
        if with_time {
            Self::space_time(c_tol, grid.h(), grid.dt())
        } else {
            Self::spatial(c_tol, grid.h())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    GradSq,
    Laplacian,
    Q,
    HessFNormSq,
    LapF,
    ULogU,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::GradSq => "grad_sq",
            Quantity::Laplacian => "laplacian",
            Quantity::Q => "q",
            Quantity::HessFNormSq => "hess_f_norm_sq",
            Quantity::LapF => "lap_f",
            Quantity::ULogU => "u_log_u",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "grad_sq" => Quantity::GradSq,
            "laplacian" => Quantity::Laplacian,
            "q" => Quantity::Q,
            "hess_f_norm_sq" => Quantity::HessFNormSq,
            "lap_f" => Quantity::LapF,
            "u_log_u" => Quantity::ULogU,
            other => return Err(Error::UnsupportedMode(format!("unknown quantity `{other}`"))),
        })
    }
}

/// A derived grid function.
#[derive(Debug, Clone)]
pub struct QuantityField {
    pub name: String,
    pub values: Vec<Vec<f64>>,
    pub stencil_order: u32,
}

/// Spatial derivatives of a grid function at one node, in chart
/// components; coordinates without a grid axis have zero derivatives.
#[derive(Debug, Clone)]
pub struct SpatialJet {
    pub u: f64,
    pub du: Vec<f64>,
    /// `∂_a∂_b u` at `a·n + b`.
    pub d2u: Vec<f64>,
}

pub fn spatial_jet(grid: &GridSpec, row: &[f64], node: usize) -> Option<SpatialJet> {
    let n = grid.axes.len() + grid.fixed.len();
    let u = row[node];
    if !u.is_finite() {
        return None;
    }
    let mut du = vec![0.0; n];
    let mut d2u = vec![0.0; n * n];
    let val = |i: Option<usize>| i.map(|i| row[i]).filter(|v| v.is_finite());
    for (k, axis) in grid.axes.iter().enumerate() {
        let h = axis.spacing();
        let up = val(grid.neighbor(node, k, 1))?;
        let dn = val(grid.neighbor(node, k, -1))?;
        du[k] = (up - dn) / (2.0 * h);
        d2u[k * n + k] = (up - 2.0 * u + dn) / (h * h);
    }
    if grid.axes.len() == 2 {
        let (h0, h1) = (grid.axes[0].spacing(), grid.axes[1].spacing());
        let diag = |d0: isize, d1: isize| grid.neighbor(node, 0, d0).and_then(|i| grid.neighbor(i, 1, d1));
        let pp = val(diag(1, 1))?;
        let pm = val(diag(1, -1))?;
        let mp = val(diag(-1, 1))?;
        let mm = val(diag(-1, -1))?;
        let c = (pp - pm - mp + mm) / (4.0 * h0 * h1);
        d2u[1] = c;
        d2u[n] = c;
    }
    Some(SpatialJet { u, du, d2u })
}

/// Second-order time derivative: central inside, one-sided at the ends.
pub fn time_derivative(grid: &GridSpec, values: &[Vec<f64>], j: usize, node: usize) -> Option<f64> {
    let nt = values.len();
    if nt < 3 {
        return None;
    }
    let dt = grid.dt();
    let v = |jj: usize| Some(values[jj][node]).filter(|x| x.is_finite());
    let d = if j == 0 {
        (-3.0 * v(0)? + 4.0 * v(1)? - v(2)?) / (2.0 * dt)
    } else if j == nt - 1 {
        (3.0 * v(j)? - 4.0 * v(j - 1)? + v(j - 2)?) / (2.0 * dt)
    } else {
        (v(j + 1)? - v(j - 1)?) / (2.0 * dt)
    };
    Some(d)
}

/// Covariant Hessian `∂²u − Γ ∂u`.
pub fn covariant_hessian(md: &MetricData, du: &[f64], d2u: &[f64]) -> Vec<f64> {
    let n = md.dim();
    let mut h = d2u.to_vec();
    for a in 0..n {
        for b in 0..n {
            let mut corr = 0.0;
            for k in 0..n {
                corr += md.gamma(k, a, b) * du[k];
            }
            h[a * n + b] -= corr;
        }
    }
    h
}

/// Pointwise quantities built from `u`'s spatial jet and the metric.
#[derive(Debug, Clone)]
pub struct LocalQuantities {
    pub u: f64,
    pub du: Vec<f64>,
    pub hess: Vec<f64>,
    pub grad_sq: f64,
    pub laplacian: f64,
    pub q: f64,
    /// `∇²f = ∇²u/u − du⊗du/u²`, `f = log u`.
    pub hess_f: Vec<f64>,
    pub hess_f_norm_sq: f64,
    pub lap_f: f64,
}

impl LocalQuantities {
    pub fn new(md: &MetricData, jet: &SpatialJet) -> Self {
        let n = md.dim();
        let u = jet.u;
        let hess = covariant_hessian(md, &jet.du, &jet.d2u);
        let grad_sq = md.covector_norm_sq(&jet.du);
        let laplacian = md.trace(&hess);
        let mut hess_f = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                hess_f[a * n + b] = hess[a * n + b] / u - jet.du[a] * jet.du[b] / (u * u);
            }
        }
        let hess_f_norm_sq = md.inner(&hess_f, &hess_f);
        let lap_f = md.trace(&hess_f);
        LocalQuantities {
            u,
            du: jet.du.clone(),
            hess,
            grad_sq,
            laplacian,
            q: grad_sq / u,
            hess_f,
            hess_f_norm_sq,
            lap_f,
        }
    }

    pub fn get(&self, q: Quantity) -> f64 {
        match q {
            Quantity::GradSq => self.grad_sq,
            Quantity::Laplacian => self.laplacian,
            Quantity::Q => self.q,
            Quantity::HessFNormSq => self.hess_f_norm_sq,
            Quantity::LapF => self.lap_f,
            Quantity::ULogU => self.u * self.u.ln(),
        }
    }
}

/// Evaluates `f(j, node, metric, local)` at every node where the spatial
/// jet of `values` exists; NaN elsewhere. Parallel over time layers.
pub fn map_local<F>(model: &EvolvingModel, grid: &GridSpec, values: &[Vec<f64>], f: F) -> Vec<Vec<f64>>
where
    F: Fn(usize, usize, &MetricData, &LocalQuantities) -> f64 + Sync,
{
    let points = grid.points();
    (0..values.len())
        .into_par_iter()
        .map(|j| {
            let t = grid.time(j);
            (0..points.len())
                .map(|i| {
                    let Some(jet) = spatial_jet(grid, &values[j], i) else {
                        return f64::NAN;
                    };
                    let Ok(md) = model.metric_data(&points[i], t) else {
                        return f64::NAN;
                    };
                    let lq = LocalQuantities::new(&md, &jet);
                    f(j, i, &md, &lq)
                })
                .collect()
        })
        .collect()
}

/// `(∂_t − ½ Δ_{g_t}) Φ` by finite differences.
pub fn heat_drift(model: &EvolvingModel, grid: &GridSpec, values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    map_local(model, grid, values, |j, i, _, lq| {
        match time_derivative(grid, values, j, i) {
            Some(dt) => dt - 0.5 * lq.laplacian,
            None => f64::NAN,
        }
    })
}

pub fn differentiate(field: &ScalarField, name: Quantity) -> QuantityField {
    let values = if name == Quantity::ULogU {
        field
            .values
            .iter()
            .map(|r| r.iter().map(|u| u * u.ln()).collect())
            .collect()
    } else {
        map_local(&field.model, &field.grid, &field.values, |_, _, _, lq| lq.get(name))
    };
    QuantityField {
        name: name.name().to_string(),
        values,
        stencil_order: 2,
    }
}

/// `q` computed as `4 |∇√u|²`.
pub fn q_via_sqrt(field: &ScalarField) -> QuantityField {
    let roots: Vec<Vec<f64>> = field
        .values
        .iter()
        .map(|r| r.iter().map(|u| u.sqrt()).collect())
        .collect();
    let values = map_local(&field.model, &field.grid, &roots, |_, _, _, lq| 4.0 * lq.grad_sq);
    QuantityField {
        name: "q".into(),
        values,
        stencil_order: 2,
    }
}

/// Location and value of an extremal node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeRef {
    pub time_index: usize,
    pub node: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
}

impl NodeRef {
    pub fn new(grid: &GridSpec, j: usize, node: usize, value: f64) -> Self {
        NodeRef {
            time_index: j,
            node,
            t: grid.time(j),
            x: grid.point(node),
            value,
        }
    }
}

/// Nodes outside the pole band with `t ∈ [t_min, t_max]`.
pub fn base_mask(model: &EvolvingModel, grid: &GridSpec, t_min: f64, t_max: f64) -> Vec<Vec<bool>> {
    let points = grid.points();
    let pole: Vec<bool> = points.iter().map(|x| model.in_pole_band(x)).collect();
    let eps = 1e-12 * grid.t_hi.abs().max(1.0);
    (0..grid.n_times())
        .map(|j| {
            let t = grid.time(j);
            let on = t >= t_min - eps && t <= t_max + eps;
            pole.iter().map(|p| on && !p).collect()
        })
        .collect()
}

/// Verdict of a pointwise `slack ≥ −τ` check over a mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlackSummary {
    pub checked: usize,
    pub min_slack: f64,
    pub violations: usize,
    pub worst: NodeRef,
    pub tolerance: Tolerance,
    pub pass: bool,
}

pub fn summarize_slack(
    grid: &GridSpec,
    values: &[Vec<f64>],
    mask: &[Vec<bool>],
    tolerance: Tolerance,
    label: &str,
) -> Result<SlackSummary> {
    let mut checked = 0;
    let mut violations = 0;
    let mut worst: Option<NodeRef> = None;
    for (j, (row, mrow)) in values.iter().zip(mask).enumerate() {
        for (i, (&v, &on)) in row.iter().zip(mrow).enumerate() {
            if !on || !v.is_finite() {
                continue;
            }
            checked += 1;
            if v < -tolerance.value {
                violations += 1;
            }
            if worst.as_ref().is_none_or(|w| v < w.value) {
                worst = Some(NodeRef::new(grid, j, i, v));
            }
        }
    }
    let worst = worst.ok_or_else(|| Error::EmptyMask(label.to_string()))?;
    Ok(SlackSummary {
        checked,
        min_slack: worst.value,
        violations,
        worst,
        tolerance,
        pass: violations == 0,
    })
}

/// Largest `|v|` over defined, masked-in nodes.
pub fn masked_sup_abs(grid: &GridSpec, values: &[Vec<f64>], mask: &[Vec<bool>]) -> Option<NodeRef> {
    let mut best: Option<NodeRef> = None;
    for (j, (row, mrow)) in values.iter().zip(mask).enumerate() {
        for (i, (&v, &on)) in row.iter().zip(mrow).enumerate() {
            if on && v.is_finite() && best.as_ref().is_none_or(|b| v.abs() > b.value) {
                best = Some(NodeRef::new(grid, j, i, v.abs()));
            }
        }
    }
    best
}

/// A pointwise check field with its verdict.
#[derive(Debug, Clone)]
pub struct SlackField {
    pub name: String,
    pub values: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub summary: SlackSummary,
}

/// Residuals of
/// `(½Δ − ∂_t)(u log u) = ½ q` and
/// `(½Δ − ∂_t) q = u |∇²f|² + R_t(∇u, ∇u)/u`.
#[derive(Debug, Clone)]
pub struct IdentityResiduals {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub sup_first: f64,
    pub sup_second: f64,
    pub h: f64,
    pub dt: f64,
}

pub fn identity_residuals(field: &ScalarField) -> Result<IdentityResiduals> {
    let (model, grid) = (&field.model, &field.grid);
    if grid.n_times() < 3 {
        return Err(Error::GridTooCoarse("at least three time levels are needed".into()));
    }
    let ulogu: Vec<Vec<f64>> = differentiate(field, Quantity::ULogU).values;
    let q = differentiate(field, Quantity::Q).values;
    let d_ulogu = heat_drift(model, grid, &ulogu);
    let d_q = heat_drift(model, grid, &q);
    let rhs2 = map_local(model, grid, &field.values, |_, _, md, lq| {
        let r = &md.ricci + &md.dt_g;
        lq.u * lq.hess_f_norm_sq + md.eval_on_covector(&r, &lq.du) / lq.u
    });
    let first = zip_map(&d_ulogu, &q, |d, q| -d - 0.5 * q);
    let second = zip_map(&d_q, &rhs2, |d, r| -d - r);
    let mask = base_mask(model, grid, grid.t_lo, grid.t_hi);
    let sup = |v: &[Vec<f64>]| {
        masked_sup_abs(grid, v, &mask)
            .map(|n| n.value)
            .ok_or_else(|| Error::GridTooCoarse("no interior nodes for the identity stencils".into()))
    };
    Ok(IdentityResiduals {
        sup_first: sup(&first)?,
        sup_second: sup(&second)?,
        first,
        second,
        mask,
        h: grid.h(),
        dt: grid.dt(),
    })
}

pub(crate) fn zip_map<F: Fn(f64, f64) -> f64>(a: &[Vec<f64>], b: &[Vec<f64>], f: F) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| f(x, y)).collect())
        .collect()
}

/// One level of a refinement study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementLevel {
    pub h: f64,
    pub dt: f64,
    pub sup_first: f64,
    pub sup_second: f64,
}

/// Identity residual sup-norms of an exact solution on `levels` grids,
/// halving `h` and `δt` each time.
pub fn identity_refinement(
    model: &EvolvingModel,
    mode: Mode,
    amplitude: f64,
    grid: &GridSpec,
    levels: usize,
) -> Result<Vec<RefinementLevel>> {
    let mut g = grid.clone();
    let mut out = Vec::with_capacity(levels);
    for _ in 0..levels {
        let f = closed_form_solution(model, mode, amplitude, &g)?;
        let r = identity_residuals(&f)?;
        out.push(RefinementLevel {
            h: r.h,
            dt: r.dt,
            sup_first: r.sup_first,
            sup_second: r.sup_second,
        });
        g = g.refined();
    }
    Ok(out)
}

/// Reference solution used to calibrate `C_tol` for a model.
pub fn calibration_reference(model: &EvolvingModel) -> (Mode, f64) {
    match model.kind {
        ModelKind::ConformalCircle { .. } => (Mode::Circle { m: 1 }, 0.5),
        ModelKind::ConformalTorus { .. } => (Mode::Torus { m1: 1, m2: 1 }, 0.5),
        ModelKind::ShrinkingSphere { .. } => (Mode::Zonal { l: 1 }, 0.3),
        ModelKind::StaticHyperbolic { .. } => {
            if model.dim == 2 {
                (Mode::Spherical { s: 0.5 }, 1.0)
            } else {
                (Mode::Constant, 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub c_tol: f64,
    pub reference_mode: Mode,
    pub reference_amplitude: f64,
    pub levels: Vec<RefinementLevel>,
    pub safety: f64,
    pub floor: f64,
}

/// `C_tol = max(floor, safety · max_levels sup|residual| / (h² + δt²))`
/// from the identity residuals of the model's reference solution.
pub fn calibrate(model: &EvolvingModel) -> Result<Calibration> {
    let (mode, eps) = calibration_reference(model);
    let h0 = match model.kind {
        ModelKind::StaticHyperbolic { radius, .. } => radius / CALIBRATION_RESOLUTIONS[0] as f64,
        ModelKind::ShrinkingSphere { .. } => std::f64::consts::PI / CALIBRATION_RESOLUTIONS[0] as f64,
        _ => 2.0 * std::f64::consts::PI / CALIBRATION_RESOLUTIONS[0] as f64,
    };
    let grid = GridSpec::for_model(model, CALIBRATION_RESOLUTIONS[0], h0)?;
    let levels = identity_refinement(model, mode, eps, &grid, CALIBRATION_RESOLUTIONS.len())?;
    let worst = levels
        .iter()
        .map(|l| l.sup_first.max(l.sup_second) / (l.h * l.h + l.dt * l.dt))
        .fold(0.0, f64::max);
    Ok(Calibration {
        c_tol: (CALIBRATION_SAFETY * worst).max(CALIBRATION_FLOOR),
        reference_mode: mode,
        reference_amplitude: eps,
        levels,
        safety: CALIBRATION_SAFETY,
        floor: CALIBRATION_FLOOR,
    })
}

fn slack_field(
    field: &ScalarField,
    name: &str,
    values: Vec<Vec<f64>>,
    tolerance: Tolerance,
    t_min: f64,
) -> Result<SlackField> {
    let mask = base_mask(&field.model, &field.grid, t_min, field.grid.t_hi);
    let summary = summarize_slack(&field.grid, &values, &mask, tolerance, name)?;
    Ok(SlackField {
        name: name.to_string(),
        values,
        mask,
        summary,
    })
}

/// `u|∇²f|² − (u/n)(Δf)² ≥ −τ`.
pub fn hessian_bound_check(field: &ScalarField, c_tol: f64) -> Result<SlackField> {
    let n = field.model.dim as f64;
    let values = map_local(&field.model, &field.grid, &field.values, |_, _, _, lq| {
        lq.u * lq.hess_f_norm_sq - lq.u / n * lq.lap_f * lq.lap_f
    });
    let tol = Tolerance::for_grid(c_tol, &field.grid, false);
    slack_field(field, "hessian_bound", values, tol, field.grid.t_lo)
}

/// `(½Δ − ∂_t) q + k(t) q ≥ −τ`.
pub fn rt_lower_residual<K: Fn(f64) -> f64 + Sync>(field: &ScalarField, k: K, c_tol: f64) -> Result<SlackField> {
    let (model, grid) = (&field.model, &field.grid);
    let q = differentiate(field, Quantity::Q).values;
    let d_q = heat_drift(model, grid, &q);
    let values: Vec<Vec<f64>> = d_q
        .iter()
        .zip(&q)
        .enumerate()
        .map(|(j, (dr, qr))| {
            let kt = k(grid.time(j));
            dr.iter().zip(qr).map(|(d, q)| -d + kt * q).collect()
        })
        .collect();
    let tol = Tolerance::for_grid(c_tol, grid, true);
    slack_field(field, "rt_lower", values, tol, grid.t_lo)
}

/// `|∇²f|² − α⟨∂_t g, ∇²f⟩ − (aα/n)(Δf)² + (αn/4b) max{k₂², k₃²} ≥ −τ`
/// for `a + b = 1/α`.
pub fn hess_dtg_inequality_check(
    field: &ScalarField,
    alpha: f64,
    a: f64,
    b: f64,
    bounds: &BoundSet,
    c_tol: f64,
) -> Result<SlackField> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::param("a, b", "must be positive"));
    }
    if ((a + b) * alpha - 1.0).abs() > 1e-12 {
        return Err(Error::param(
            "a, b",
            format!("a + b = {} must equal 1/α = {}", a + b, 1.0 / alpha),
        ));
    }
    let n = field.model.dim as f64;
    let kmax = bounds.k2.powi(2).max(bounds.k3.powi(2));
    let values = map_local(&field.model, &field.grid, &field.values, |_, _, md, lq| {
        let dtg: Vec<f64> = md.dt_g.iter().copied().collect();
        // nalgebra stores column-major; dt_g is symmetric
        lq.hess_f_norm_sq - alpha * md.inner(&dtg, &lq.hess_f) - a * alpha / n * lq.lap_f * lq.lap_f
            + alpha * n / (4.0 * b) * kmax
    });
    let tol = Tolerance::for_grid(c_tol, &field.grid, false);
    slack_field(field, "hess_dtg", values, tol, field.grid.t_lo)
}

/// `div(∂_t g) − ½ ∇ tr_g(∂_t g)` as a covector, by central differences of
/// the analytic metric velocity in chart directions.
pub fn dtg_divergence_term(model: &EvolvingModel, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let md = model.metric_data(x, t)?;
    let n = md.dim();
    let b = |y: &[f64]| -> Result<(Vec<f64>, f64)> {
        let m = model.metric_data(y, t)?;
        let v: Vec<f64> = (0..n * n).map(|k| m.dt_g[(k / n, k % n)]).collect();
        let tr = m.trace(&v);
        Ok((v, tr))
    };
    let mut db = vec![vec![0.0; n * n]; n];
    let mut dtr = vec![0.0; n];
    for i in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += TENSOR_FD_STEP;
        xm[i] -= TENSOR_FD_STEP;
        let (bp, tp) = b(&xp)?;
        let (bm, tm) = b(&xm)?;
        for k in 0..n * n {
            db[i][k] = (bp[k] - bm[k]) / (2.0 * TENSOR_FD_STEP);
        }
        dtr[i] = (tp - tm) / (2.0 * TENSOR_FD_STEP);
    }
    let bt = |p: usize, q: usize| md.dt_g[(p, q)];
    let mut out = vec![0.0; n];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let gij = md.g_inv[(i, j)];
                if gij == 0.0 {
                    continue;
                }
                let mut cov = db[i][j * n + k];
                for p in 0..n {
                    cov -= md.gamma(p, i, j) * bt(p, k) + md.gamma(p, i, k) * bt(j, p);
                }
                acc += gij * cov;
            }
        }
        *o = acc - 0.5 * dtr[k];
    }
    Ok(out)
}

/// Compares `∂_t(Δ_{g_t} v)` for `v` frozen at each time slice, formed by
/// differencing the operator over `t ± δt`, with
/// `−⟨∂_t g, ∇²v⟩ − ⟨div(∂_t g) − ½∇tr(∂_t g), ∇v⟩`. Interior time levels only.
pub fn laplacian_variation_check(model: &EvolvingModel, field: &ScalarField) -> Result<Vec<Vec<f64>>> {
    let grid = &field.grid;
    let dt = grid.dt();
    let points = grid.points();
    let nt = grid.n_times();
    if nt < 3 {
        return Err(Error::GridTooCoarse("need interior time levels".into()));
    }
    let rows: Vec<Vec<f64>> = (0..nt)
        .into_par_iter()
        .map(|j| {
            if j == 0 || j == nt - 1 {
                return vec![f64::NAN; points.len()];
            }
            let t = grid.time(j);
            (0..points.len())
                .map(|i| {
                    let x = &points[i];
                    let Some(jet) = spatial_jet(grid, &field.values[j], i) else {
                        return f64::NAN;
                    };
                    let eval = || -> Result<f64> {
                        let lap_at = |s: f64| -> Result<f64> {
                            let md = model.metric_data(x, s)?;
                            Ok(md.trace(&covariant_hessian(&md, &jet.du, &jet.d2u)))
                        };
                        let numeric = (lap_at(t + dt)? - lap_at(t - dt)?) / (2.0 * dt);
                        let md = model.metric_data(x, t)?;
                        let n = md.dim();
                        let hess = covariant_hessian(&md, &jet.du, &jet.d2u);
                        let dtg: Vec<f64> = (0..n * n).map(|k| md.dt_g[(k / n, k % n)]).collect();
                        let w = dtg_divergence_term(model, x, t)?;
                        let raised: f64 = (0..n)
                            .map(|a| (0..n).map(|b| md.g_inv[(a, b)] * w[a] * jet.du[b]).sum::<f64>())
                            .sum();
                        Ok(numeric - (-md.inner(&dtg, &hess) - raised))
                    };
                    eval().unwrap_or(f64::NAN)
                })
                .collect()
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::extract_bounds;
    use crate::fields::closed_form_solution;
    use crate::geometry::ScaleProfile;
    use std::f64::consts::PI;

    fn circle_field(res: usize, dt: f64) -> ScalarField {
        let m = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap();
        let g = GridSpec::for_model(&m, res, dt).unwrap();
        closed_form_solution(&m, Mode::Circle { m: 1 }, 0.5, &g).unwrap()
    }

    #[test]
    fn constant_field_has_zero_quantities() {
        let m = EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap();
        let g = GridSpec::for_model(&m, 16, 0.05).unwrap();
        let f = closed_form_solution(&m, Mode::Constant, 0.0, &g).unwrap();
        for q in [Quantity::GradSq, Quantity::Laplacian, Quantity::Q] {
            let v = differentiate(&f, q);
            assert!(v.values.iter().flatten().filter(|x| x.is_finite()).all(|x| *x == 0.0));
        }
        let r = identity_residuals(&f).unwrap();
        assert_eq!(r.sup_first, 0.0);
        assert_eq!(r.sup_second, 0.0);
    }

    #[test]
    fn circle_q_at_quarter_turn() {
        // node π/2 is index 16 of 64
        let f = circle_field(64, 0.01);
        let q = differentiate(&f, Quantity::Q);
        let h = 2.0 * PI / 64.0;
        // u = 1, u_θ = −0.5 (sin h / h) from the central stencil
        let stencil = 0.25 * (h.sin() / h).powi(2);
        assert!((q.values[0][16] - stencil).abs() < 1e-14);
        assert!((q.values[0][16] - 0.25).abs() < 1e-3);
    }

    #[test]
    fn circle_laplacian_is_twice_time_derivative() {
        let f = circle_field(128, 0.005);
        let lap = differentiate(&f, Quantity::Laplacian);
        let j = 100;
        let t = f.grid.time(j);
        for i in [0, 10, 70] {
            let th = f.grid.point(i)[0];
            let exact = -0.5 * (-t / 2.0).exp() * th.cos();
            assert!((lap.values[j][i] - exact).abs() < 1e-3);
            let dt = time_derivative(&f.grid, &f.values, j, i).unwrap();
            assert!((dt - 0.5 * exact).abs() < 1e-5);
        }
    }

    #[test]
    fn q_two_ways_agree_to_second_order() {
        let mut diffs = Vec::new();
        for res in [32, 64] {
            let f = circle_field(res, 0.05);
            let a = differentiate(&f, Quantity::Q);
            let b = q_via_sqrt(&f);
            let d = zip_map(&a.values, &b.values, |x, y| (x - y).abs());
            diffs.push(d.iter().flatten().copied().fold(0.0, f64::max));
        }
        let r = diffs[0] / diffs[1];
        assert!((3.5..=4.5).contains(&r), "{diffs:?}");
    }

    #[test]
    fn circle_identity_residuals_converge() {
        let m = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap();
        let g = GridSpec::for_model(&m, 32, 0.1).unwrap();
        let levels = identity_refinement(&m, Mode::Circle { m: 1 }, 0.5, &g, 3).unwrap();
        for w in levels.windows(2) {
            let r1 = w[0].sup_first / w[1].sup_first;
            let r2 = w[0].sup_second / w[1].sup_second;
            assert!((3.5..=4.5).contains(&r1), "{levels:?}");
            assert!((3.5..=4.5).contains(&r2), "{levels:?}");
        }
    }

    #[test]
    fn sphere_identities_have_no_curvature_term() {
        let m = EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap();
        let g = GridSpec::for_model(&m, 64, 0.01).unwrap();
        let f = closed_form_solution(&m, Mode::Zonal { l: 1 }, 0.3, &g).unwrap();
        let r = identity_residuals(&f).unwrap();
        let cal = calibrate(&m).unwrap();
        let tol = Tolerance::space_time(cal.c_tol, r.h, r.dt).value;
        assert!(
            r.sup_first <= tol && r.sup_second <= tol,
            "{} {} {}",
            r.sup_first,
            r.sup_second,
            tol
        );
    }

    #[test]
    fn hessian_bound_is_equality_in_one_dimension() {
        let f = circle_field(64, 0.05);
        let s = hessian_bound_check(&f, 1.0).unwrap();
        assert!(s.values.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn hessian_bound_strict_for_anisotropic_torus_mode() {
        let m = EvolvingModel::conformal_torus(2, ScaleProfile::unit(), 1.0).unwrap();
        let g = GridSpec::for_model(&m, 32, 0.1).unwrap();
        let f = closed_form_solution(&m, Mode::Torus { m1: 1, m2: 0 }, 0.5, &g).unwrap();
        let s = hessian_bound_check(&f, 1.0).unwrap();
        assert!(s.summary.pass);
        // f_yy = 0 while f_xx ≠ 0 away from the inflection lines
        let node = g.flat(&[5, 3]);
        assert!(s.values[2][node] > 1e-3);
    }

    #[test]
    fn rt_lower_on_hyperbolic_and_sphere() {
        let h = EvolvingModel::static_hyperbolic(2, 1.0, 3.0, 1.0).unwrap();
        let g = GridSpec::for_model(&h, 64, 0.02).unwrap();
        let f = closed_form_solution(&h, Mode::Spherical { s: 0.5 }, 1.0, &g).unwrap();
        let c = calibrate(&h).unwrap().c_tol;
        assert!(rt_lower_residual(&f, |_| 1.0, c).unwrap().summary.pass);

        let s = EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap();
        let g = GridSpec::for_model(&s, 64, 0.01).unwrap();
        let f = closed_form_solution(&s, Mode::Zonal { l: 1 }, 0.3, &g).unwrap();
        let c = calibrate(&s).unwrap().c_tol;
        assert!(rt_lower_residual(&f, |_| 0.0, c).unwrap().summary.pass);
    }

    #[test]
    fn hess_dtg_check_on_oscillating_torus() {
        let p = ScaleProfile::Sine {
            amplitude: 0.25,
            omega: 1.0,
        };
        let m = EvolvingModel::conformal_torus(2, p, 2.0).unwrap();
        let g = GridSpec::for_model(&m, 32, 0.05).unwrap();
        let f = closed_form_solution(&m, Mode::Torus { m1: 1, m2: 1 }, 0.5, &g).unwrap();
        let b = extract_bounds(&m, None).unwrap();
        let s = hess_dtg_inequality_check(&f, 2.0, 0.25, 0.25, &b, 1.0).unwrap();
        assert!(s.summary.pass, "{:?}", s.summary);
        assert!(hess_dtg_inequality_check(&f, 2.0, 0.25, 0.3, &b, 1.0).is_err());

        let one = closed_form_solution(&m, Mode::Constant, 0.0, &g).unwrap();
        let s = hess_dtg_inequality_check(&one, 2.0, 0.25, 0.25, &b, 1.0).unwrap();
        let expected = 2.0 * 2.0 / (4.0 * 0.25) * b.k2.max(b.k3).powi(2);
        assert!((s.summary.min_slack - expected).abs() < 1e-12);
    }

    #[test]
    fn laplacian_variation_on_conformal_circle() {
        let p = ScaleProfile::Sine {
            amplitude: 0.3,
            omega: 2.0,
        };
        let m = EvolvingModel::conformal_circle(p, 1.0).unwrap();
        let mut sups = Vec::new();
        for res in [32, 64] {
            let g = GridSpec::for_model(&m, res, 0.8 / res as f64).unwrap();
            let f = closed_form_solution(&m, Mode::Circle { m: 1 }, 0.5, &g).unwrap();
            let r = laplacian_variation_check(&m, &f).unwrap();
            sups.push(
                r.iter()
                    .flatten()
                    .filter(|v| v.is_finite())
                    .fold(0.0f64, |a, v| a.max(v.abs())),
            );
        }
        assert!(sups[1] < sups[0] / 3.5, "{sups:?}");
        assert!(sups[1] < 1e-3);
    }

    #[test]
    fn laplacian_variation_on_sphere_and_static() {
        let s = EvolvingModel::shrinking_sphere(3, 1.0, 0.3).unwrap();
        let w = dtg_divergence_term(&s, &[0.8, 1.1, 0.2], 0.1).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-6));
        // the residual is the δt² error of differencing Δ_{g_t} in time
        let mut sups = Vec::new();
        for dt in [0.01, 0.005] {
            let g = GridSpec::for_model(&s, 64, dt).unwrap();
            let f = closed_form_solution(&s, Mode::Zonal { l: 2 }, 0.3, &g).unwrap();
            let r = laplacian_variation_check(&s, &f).unwrap();
            let mask = base_mask(&s, &g, 0.0, 0.25);
            sups.push(masked_sup_abs(&g, &r, &mask).unwrap().value);
        }
        let ratio = sups[0] / sups[1];
        assert!((3.5..=4.5).contains(&ratio), "{sups:?}");

        let c = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap();
        let g = GridSpec::for_model(&c, 16, 0.1).unwrap();
        let f = closed_form_solution(&c, Mode::Circle { m: 2 }, 0.5, &g).unwrap();
        let r = laplacian_variation_check(&c, &f).unwrap();
        assert!(r.iter().flatten().filter(|v| v.is_finite()).all(|v| *v == 0.0));
    }
}
