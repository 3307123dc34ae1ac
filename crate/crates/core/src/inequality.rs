//! Pointwise evaluation of the Hamilton- and Li-Yau-type gradient
//! inequalities with their slack `rhs − lhs` on a field's grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bounds::{certify_k, BoundSet, CPhiVariant, CutoffProfile, KProfile};
use crate::calculus::{base_mask, map_local, summarize_slack, NodeRef, Tolerance};
use crate::error::{Error, Result};
use crate::fields::{sup_norm, Ball, FieldOrigin, Mode, Region, ScalarField};
use crate::geometry::{EvolvingModel, ModelKind};
use crate::grid::GridSpec;

/// Default lower time cutoff of every mask, in time steps.
pub const DEFAULT_T_LO_STEPS: f64 = 4.0;

/// `(4 − π)²`, the denominator produced by `φ ≥ 1 − π/4` on `B_{ρ/2}`.
fn fp2() -> f64 {
    (4.0 - PI).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    HamiltonGlobal,
    HamiltonLocal,
    HamiltonLocalGeneral,
    LiyauLocal,
    LiyauLocalGeneral,
    LiyauGlobal,
    LiyauLowerOrderLocal,
    LiyauLowerOrderGeneral,
    RicciCompact,
    RicciLocalHamilton,
    RicciLocalLiyau,
}

impl Theorem {
    pub const ALL: [Theorem; 11] = [
        Theorem::HamiltonGlobal,
        Theorem::HamiltonLocal,
        Theorem::HamiltonLocalGeneral,
        Theorem::LiyauLocal,
        Theorem::LiyauLocalGeneral,
        Theorem::LiyauGlobal,
        Theorem::LiyauLowerOrderLocal,
        Theorem::LiyauLowerOrderGeneral,
        Theorem::RicciCompact,
        Theorem::RicciLocalHamilton,
        Theorem::RicciLocalLiyau,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Theorem::HamiltonGlobal => "hamilton_global",
            Theorem::HamiltonLocal => "hamilton_local",
            Theorem::HamiltonLocalGeneral => "hamilton_local_general",
            Theorem::LiyauLocal => "liyau_local",
            Theorem::LiyauLocalGeneral => "liyau_local_general",
            Theorem::LiyauGlobal => "liyau_global",
            Theorem::LiyauLowerOrderLocal => "liyau_lower_order_local",
            Theorem::LiyauLowerOrderGeneral => "liyau_lower_order_general",
            Theorem::RicciCompact => "ricci_compact",
            Theorem::RicciLocalHamilton => "ricci_local_hamilton",
            Theorem::RicciLocalLiyau => "ricci_local_liyau",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Theorem::ALL
            .into_iter()
            .find(|t| t.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown theorem id `{s}`")))
    }

    pub fn needs_alpha(self) -> bool {
        matches!(
            self,
            Theorem::LiyauLocal | Theorem::LiyauLocalGeneral | Theorem::LiyauGlobal | Theorem::RicciLocalLiyau
        )
    }
}

/// The four constants `k₁ … k₄` entering the right-hand sides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl From<&BoundSet> for Curvature {
    fn from(b: &BoundSet) -> Self {
        Curvature {
            k1: b.k1,
            k2: b.k2,
            k3: b.k3,
            k4: b.k4,
        }
    }
}

impl Curvature {
    /// `max{k₂,k₃} + k₃ + √(2k₄) + (k₁+k₄)/(α−1)`.
    fn liyau_tail(&self, alpha: f64) -> f64 {
        self.k2.max(self.k3) + self.k3 + (2.0 * self.k4).sqrt() + (self.k1 + self.k4) / (alpha - 1.0)
    }

    fn insert(&self, map: &mut BTreeMap<String, f64>) {
        map.insert("k1".into(), self.k1);
        map.insert("k2".into(), self.k2);
        map.insert("k3".into(), self.k3);
        map.insert("k4".into(), self.k4);
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("must exceed 1, got {alpha}")))
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::param("rho", format!("must be positive, got {rho}")))
    }
}

/// `1/t + 4π²(n+7)/((4−π)²ρ²) + (π²+16)(k₁+k₂)/(4−π)²`.
pub fn hamilton_local_bracket(n: usize, rho: f64, c: &Curvature, t: f64) -> f64 {
    1.0 / t + 4.0 * PI * PI * (n as f64 + 7.0) / (fp2() * rho * rho) + (PI * PI + 16.0) * (c.k1 + c.k2) / fp2()
}

/// Right-hand side of the local Li-Yau estimate without its time term
/// folded out: `nα²[2/t + 8π²(n+3+α²n/(α−1))/((4−π)²ρ²) + 16π(k₁+k₂)/(4−π)² + tail]`.
pub fn liyau_local_rhs(n: usize, alpha: f64, rho: f64, c: &Curvature, t: f64) -> f64 {
    let nf = n as f64;
    let a2 = alpha * alpha;
    nf * a2
        * (2.0 / t
            + 8.0 * PI * PI * (nf + 3.0 + a2 * nf / (alpha - 1.0)) / (fp2() * rho * rho)
            + 16.0 * PI * (c.k1 + c.k2) / fp2()
            + c.liyau_tail(alpha))
}

/// `nα²[2/t + max{k₂,k₃} + k₃ + √(2k₄) + (k₁+k₄)/(α−1)]`.
pub fn liyau_global_rhs(n: usize, alpha: f64, c: &Curvature, t: f64) -> f64 {
    n as f64 * alpha * alpha * (2.0 / t + c.liyau_tail(alpha))
}

/// The α = 1 estimate with lower-order term, split as
/// `(base, coefficient of ‖|∇u|/u‖)`.
pub fn lower_order_local_terms(n: usize, rho: f64, c: &Curvature, t: f64) -> (f64, f64) {
    let nf = n as f64;
    let base = 2.0 * nf / t
        + 8.0 * nf * PI * PI * (nf + 3.0) / (fp2() * rho * rho)
        + 16.0 * nf * PI * (c.k1 + c.k2) / fp2()
        + c.k2.max(c.k3) * nf
        + (2.0 * c.k4).sqrt() * nf;
    let coeff = 8.0 * PI * nf / (fp2() * rho) + (2.0 * nf * (c.k1 + c.k4)).sqrt();
    (base, coeff)
}

/// `kn + 2n/t`.
pub fn ricci_compact_rhs(n: usize, k: f64, t: f64) -> f64 {
    k * n as f64 + 2.0 * n as f64 / t
}

/// `2(1/t + 4π²(n+7)/((4−π)²ρ²) + 8kπ/(4−π)²)`, the factor multiplying
/// `4 + log(‖u‖/u)`.
pub fn ricci_local_hamilton_factor(n: usize, rho: f64, k: f64, t: f64) -> f64 {
    2.0 * (1.0 / t + 4.0 * PI * PI * (n as f64 + 7.0) / (fp2() * rho * rho) + 8.0 * k * PI / fp2())
}

/// `2α²n/t + 8α²nπ²[n(1+α²/(α−1))+3]/((4−π)²ρ²) + ((4+π)/(4−π))²α²kn + α³kn/(α−1)`.
pub fn ricci_local_liyau_rhs(n: usize, alpha: f64, rho: f64, k: f64, t: f64) -> f64 {
    let nf = n as f64;
    let a2 = alpha * alpha;
    2.0 * a2 * nf / t
        + 8.0 * a2 * nf * PI * PI * (nf * (1.0 + a2 / (alpha - 1.0)) + 3.0) / (fp2() * rho * rho)
        + ((4.0 + PI) / (4.0 - PI)).powi(2) * a2 * k * nf
        + alpha.powi(3) * k * nf / (alpha - 1.0)
}

/// Comparison value `2kn + n/t` for the compact Ricci-flow estimate.
pub fn bcp_rhs(n: usize, k: f64, t: f64) -> f64 {
    2.0 * k * n as f64 + n as f64 / t
}

/// Per-check settings shared by all inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub c_tol: f64,
    /// Lower end of the time mask; `DEFAULT_T_LO_STEPS · δt` when absent.
    pub t_lo: Option<f64>,
}

impl CheckOptions {
    pub fn new(c_tol: f64) -> Self {
        CheckOptions { c_tol, t_lo: None }
    }

    pub fn t_min(&self, grid: &GridSpec) -> f64 {
        self.t_lo
            .unwrap_or(DEFAULT_T_LO_STEPS * grid.dt())
            .max(grid.t_lo)
            .max(f64::MIN_POSITIVE)
    }

    /// Spatial tolerance for closed-form fields, space-time for solved ones.
    pub fn tolerance(&self, field: &ScalarField) -> Tolerance {
        let with_time = matches!(field.origin, FieldOrigin::Numeric { .. });
        Tolerance::for_grid(self.c_tol, &field.grid, with_time)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub theorem: Theorem,
    pub constants: BTreeMap<String, f64>,
    pub checked: usize,
    pub min_slack: f64,
    pub violations: usize,
    pub worst_node: NodeRef,
    pub tolerance: Tolerance,
    pub t_min: f64,
    pub grid: GridSpec,
    pub pass: bool,
    #[serde(skip)]
    pub lhs: Vec<Vec<f64>>,
    #[serde(skip)]
    pub rhs: Vec<Vec<f64>>,
    #[serde(skip)]
    pub slack: Vec<Vec<f64>>,
    #[serde(skip)]
    pub mask: Vec<Vec<bool>>,
}

impl InequalityReport {
    /// Per-node rows `t, x…, lhs, rhs, slack, masked`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let dim = self.grid.axes.len() + self.grid.fixed.len();
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|k| format!("x{k}")));
        header.extend(["lhs", "rhs", "slack", "masked"].map(String::from));
        wr.write_record(&header)?;
        let points = self.grid.points();
        let cell = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        for j in 0..self.grid.n_times() {
            let t = self.grid.time(j);
            for (i, p) in points.iter().enumerate() {
                let mut rec = vec![t.to_string()];
                rec.extend(p.iter().map(|c| c.to_string()));
                rec.push(cell(self.lhs[j][i]));
                rec.push(cell(self.rhs[j][i]));
                rec.push(cell(self.slack[j][i]));
                rec.push(u8::from(self.mask[j][i]).to_string());
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Value of the right-hand side at a node.
    pub fn rhs_at(&self, j: usize, node: usize) -> f64 {
        self.rhs[j][node]
    }
}

fn check_field(field: &ScalarField) -> Result<()> {
    field.grid.check_model(&field.model)?;
    let min = field.min_value();
    if !(min > 0.0) {
        return Err(Error::param("field", format!("must be positive, minimum is {min}")));
    }
    Ok(())
}

/// Errors unless `B_ρ(x₀)` stays inside the model chart for every `t`.
pub fn check_ball_in_chart(model: &EvolvingModel, x0: &[f64], rho: f64) -> Result<()> {
    check_rho(rho)?;
    // poles are admissible centres, so no full chart check here
    if x0.len() != model.dim || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("x0", format!("expected {} finite coordinates", model.dim)));
    }
    let outside = |reason: String| Error::OutsideChart {
        point: x0.to_vec(),
        reason,
    };
    match model.kind {
        ModelKind::ConformalCircle { profile } | ModelKind::ConformalTorus { profile } => {
            let mut ts = vec![0.0, model.horizon];
            ts.extend(profile.turning_points(0.0, model.horizon));
            let a_min = ts.iter().map(|&t| profile.value(t)).fold(f64::INFINITY, f64::min);
            if rho >= PI * a_min {
                return Err(outside(format!(
                    "ball radius {rho} wraps the period π·a = {}",
                    PI * a_min
                )));
            }
        }
        ModelKind::ShrinkingSphere { .. } => {
            let r_min = model.conformal_factor(model.horizon).sqrt();
            if rho >= PI * r_min {
                return Err(outside(format!(
                    "ball radius {rho} covers the sphere of radius {r_min}"
                )));
            }
        }
        ModelKind::StaticHyperbolic { radius, .. } => {
            let reach = x0[0] + rho;
            if x0[0] < 0.0 || reach > radius * (1.0 + 1e-12) {
                return Err(outside(format!(
                    "ball reaches radius {reach} beyond the chart radius {radius}"
                )));
            }
        }
    }
    Ok(())
}

/// Nodes with `t ≥ t_min` outside the pole band and, when given, inside the
/// closed ball `B_r(x₀)` of `g_t`.
fn check_mask(field: &ScalarField, t_min: f64, ball: Option<(&[f64], f64)>) -> Vec<Vec<bool>> {
    let grid = &field.grid;
    let mut mask = base_mask(&field.model, grid, t_min, grid.t_hi);
    if let Some((x0, r)) = ball {
        let points = grid.points();
        for (j, row) in mask.iter_mut().enumerate() {
            let t = grid.time(j);
            for (on, x) in row.iter_mut().zip(&points) {
                *on = *on && field.model.distance(x0, x, t) <= r * (1.0 + 1e-12);
            }
        }
    }
    mask
}

/// `|∇u|²/u² − α Δu/u` (Hamilton quantity when `α = 0`).
fn lhs_field(field: &ScalarField, alpha: f64) -> Vec<Vec<f64>> {
    map_local(&field.model, &field.grid, &field.values, |_, _, _, lq| {
        lq.grad_sq / (lq.u * lq.u) - alpha * lq.laplacian / lq.u
    })
}

/// Evaluates `f(j, t, node, u)` at every node.
fn pointwise<F: Fn(usize, f64, usize, f64) -> f64>(field: &ScalarField, f: F) -> Vec<Vec<f64>> {
    field
        .values
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let t = field.grid.time(j);
            row.iter().enumerate().map(|(i, &u)| f(j, t, i, u)).collect()
        })
        .collect()
}

struct Assembly<'a> {
    theorem: Theorem,
    field: &'a ScalarField,
    lhs: Vec<Vec<f64>>,
    rhs: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
    constants: BTreeMap<String, f64>,
    opts: CheckOptions,
    t_min: f64,
}

impl Assembly<'_> {
    fn finish(self) -> Result<InequalityReport> {
        let slack: Vec<Vec<f64>> = self
            .rhs
            .iter()
            .zip(&self.lhs)
            .map(|(r, l)| r.iter().zip(l).map(|(a, b)| a - b).collect())
            .collect();
        let tolerance = self.opts.tolerance(self.field);
        let mask: Vec<Vec<bool>> = self
            .mask
            .iter()
            .zip(&slack)
            .map(|(m, s)| m.iter().zip(s).map(|(&on, v)| on && v.is_finite()).collect())
            .collect();
        let summary = summarize_slack(&self.field.grid, &slack, &mask, tolerance, self.theorem.id())?;
        Ok(InequalityReport {
            theorem: self.theorem,
            constants: self.constants,
            checked: summary.checked,
            min_slack: summary.min_slack,
            violations: summary.violations,
            worst_node: summary.worst,
            tolerance,
            t_min: self.t_min,
            grid: self.field.grid.clone(),
            pass: summary.pass,
            lhs: self.lhs,
            rhs: self.rhs,
            slack,
            mask,
        })
    }
}

fn constants_of<const N: usize>(pairs: [(&str, f64); N]) -> BTreeMap<String, f64> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Hamilton-type global estimate
/// `|∇u|²/u² ≤ (2/∫₀ᵗ e^{−∫ₛᵗ k}) log(‖u‖/u)` with the sup over the whole
/// grid.
///
/// Closed models only, apart from bounded closed-form fields on the
/// hyperbolic chart where the sup is attained at the pole.
pub fn hamilton_global(field: &ScalarField, k: &KProfile, opts: CheckOptions) -> Result<InequalityReport> {
    check_field(field)?;
    let model = &field.model;
    let bounded_exact = matches!(
        field.origin,
        FieldOrigin::Exact {
            mode: Mode::Spherical { .. } | Mode::Constant,
            ..
        }
    );
    if !model.is_closed() && !bounded_exact {
        return Err(Error::UnsupportedModel(format!(
            "{} is not closed and the field is not a bounded closed form",
            model.name()
        )));
    }
    certify_k(model, k, &field.grid)?;
    let grid = &field.grid;
    let sup = sup_norm(field, &Region::whole(grid))?;
    let weights: Vec<f64> = grid.times().iter().map(|&t| k.forward_weight(t)).collect();
    let t_min = opts.t_min(grid);
    let rhs = pointwise(field, |j, _, _, u| {
        let w = weights[j];
        if w > 0.0 {
            2.0 / w * (sup / u).ln()
        } else {
            f64::NAN
        }
    });
    let mut constants = constants_of([("sup_u", sup), ("k_sup", k.sup(grid.t_lo, grid.t_hi))]);
    constants.insert("weight_at_t_hi".into(), weights[weights.len() - 1]);
    Assembly {
        theorem: Theorem::HamiltonGlobal,
        field,
        lhs: lhs_field(field, 0.0),
        rhs,
        mask: check_mask(field, t_min, None),
        constants,
        opts,
        t_min,
    }
    .finish()
}

fn ball_sup(field: &ScalarField, x0: &[f64], rho: f64) -> Result<f64> {
    let region = Region {
        t_min: field.grid.t_lo,
        t_max: field.grid.t_hi,
        ball: Some(Ball {
            center: x0.to_vec(),
            radius: rho,
        }),
    };
    sup_norm(field, &region)
}

/// Hamilton-type local estimate on `B_{ρ/2,T}`.
pub fn hamilton_local(
    field: &ScalarField,
    x0: &[f64],
    rho: f64,
    bounds: &BoundSet,
    opts: CheckOptions,
) -> Result<InequalityReport> {
    check_field(field)?;
    check_ball_in_chart(&field.model, x0, rho)?;
    let n = field.model.dim;
    let c = Curvature::from(bounds);
    let sup = ball_sup(field, x0, rho)?;
    let t_min = opts.t_min(&field.grid);
    let rhs = pointwise(field, |_, t, _, u| {
        2.0 * hamilton_local_bracket(n, rho, &c, t) * (4.0 + (sup / u).ln()).powi(2)
    });
    let mut constants = constants_of([
        ("rho", rho),
        ("sup_u_ball", sup),
        ("bracket_constant", hamilton_local_bracket(n, rho, &c, f64::INFINITY)),
    ]);
    c.insert(&mut constants);
    Assembly {
        theorem: Theorem::HamiltonLocal,
        field,
        lhs: lhs_field(field, 0.0),
        rhs,
        mask: check_mask(field, t_min, Some((x0, 0.5 * rho))),
        constants,
        opts,
        t_min,
    }
    .finish()
}

fn check_cutoff(field: &ScalarField, cutoff: &CutoffProfile) -> Result<()> {
    if cutoff.grid != field.grid || cutoff.model != field.model {
        return Err(Error::param(
            "cutoff",
            "cutoff and field live on different grids or models",
        ));
    }
    Ok(())
}

/// Mask of the cutoff's support intersected with `t ≥ t_min`.
fn cutoff_mask(cutoff: &CutoffProfile, t_min: f64) -> Vec<Vec<bool>> {
    let grid = &cutoff.grid;
    cutoff
        .mask
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let late = grid.time(j) >= t_min - 1e-12;
            row.iter()
                .zip(&cutoff.phi[j])
                .map(|(&on, &p)| on && late && p > 0.0)
                .collect()
        })
        .collect()
}

/// General Hamilton-type estimate with the cutoff-dependent constant
/// `sup_D{7|∇φ|² − φ(Δ−2∂_t)φ}` on the cutoff's support.
pub fn hamilton_local_general(
    field: &ScalarField,
    cutoff: &CutoffProfile,
    bounds: &BoundSet,
    opts: CheckOptions,
) -> Result<InequalityReport> {
    check_field(field)?;
    check_cutoff(field, cutoff)?;
    let c7 = cutoff
        .sup_functional(CPhiVariant::Seven.coefficient(field.model.dim)?, field.grid.t_lo)?
        .value;
    let sup = ball_sup(field, &cutoff.center, cutoff.radius)?;
    let c = Curvature::from(bounds);
    let t_min = opts.t_min(&field.grid);
    let rhs = pointwise(field, |j, t, i, u| {
        let p = cutoff.phi[j][i];
        if p <= 0.0 {
            return f64::NAN;
        }
        2.0 * (1.0 / t + c7 / (p * p) + c.k1 + c.k2) * (4.0 + (sup / u).ln()).powi(2)
    });
    let mut constants = constants_of([("rho", cutoff.radius), ("sup_u_ball", sup), ("c_phi_7", c7)]);
    c.insert(&mut constants);
    Assembly {
        theorem: Theorem::HamiltonLocalGeneral,
        field,
        lhs: lhs_field(field, 0.0),
        rhs,
        mask: cutoff_mask(cutoff, t_min),
        constants,
        opts,
        t_min,
    }
    .finish()
}

/// Li-Yau-type local estimate on `B_{ρ/2,T}`.
pub fn liyau_local(
    field: &ScalarField,
    alpha: f64,
    x0: &[f64],
    rho: f64,
    bounds: &BoundSet,
    opts: CheckOptions,
) -> Result<InequalityReport> {
    check_alpha(alpha)?;
    check_field(field)?;
    check_ball_in_chart(&field.model, x0, rho)?;
    let n = field.model.dim;
    let c = Curvature::from(bounds);
    let t_min = opts.t_min(&field.grid);
    let rhs = pointwise(field, |_, t, _, _| liyau_local_rhs(n, alpha, rho, &c, t));
    let mut constants = constants_of([
        ("alpha", alpha),
        ("rho", rho),
        ("rhs_constant", liyau_local_rhs(n, alpha, rho, &c, f64::INFINITY)),
    ]);
    c.insert(&mut constants);
    Assembly {
        theorem: Theorem::LiyauLocal,
        field,
        lhs: lhs_field(field, alpha),
        rhs,
        mask: check_mask(field, t_min, Some((x0, 0.5 * rho))),
        constants,
        opts,
        t_min,
    }
    .finish()
}

/// General Li-Yau-type estimate with
/// `C = sup_D{(3 + α²n/(α−1))|∇φ|² − φ(Δ−2∂_t)φ}`.
pub fn liyau_local_general(
    field: &ScalarField,
    alpha: f64,
    cutoff: &CutoffProfile,
    bounds: &BoundSet,
    opts: CheckOptions,
) -> Result<InequalityReport> {
    check_alpha(alpha)?;
    check_field(field)?;
    check_cutoff(field, cutoff)?;
    let n = field.model.dim;
    let coeff = CPhiVariant::LiYau { alpha }.coefficient(n)?;
    let cc = cutoff.sup_functional(coeff, field.grid.t_lo)?.value;
    let c = Curvature::from(bounds);
    let t_min = opts.t_min(&field.grid);
    let scale = n as f64 * alpha * alpha;
    let tail = c.liyau_tail(alpha);
    let rhs = pointwise(field, |j, t, i, _| {
        let p = cutoff.phi[j][i];
        if p <= 0.0 {
            return f64::NAN;
        }
        scale * (2.0 / t + 2.0 * cc / (p * p) + tail)
    });
    let mut constants = constants_of([
        ("alpha", alpha),
        ("rho", cutoff.radius),
        ("c_phi_coefficient", coeff),
        ("c_phi_alpha", cc),
    ]);
    c.insert(&mut constants);
    Assembly {
        theorem: Theorem::LiyauLocalGeneral,
        field,
        lhs: lhs_field(field, alpha),
        rhs,
        mask: cutoff_mask(cutoff, t_min),
        constants,
        opts,
        t_min,
    }
    .finish()
}

/// Li-Yau-type global estimate on a closed model.
pub fn liyau_global(
    field: &ScalarField,
    alpha: f64,
    bounds: &BoundSet,
    opts: CheckOptions,
) -> Result<InequalityReport> {
    check_alpha(alpha)?;
    check_field(field)?;
    if !field.model.is_closed() {
        return Err(Error::UnsupportedModel(format!("{} is not closed", field.model.name())));
    }
    let n = field.model.dim;
    let c = Curvature::from(bounds);
    let t_min = opts.t_min(&field.grid);
    let rhs = pointwise(field, |_, t, _, _| liyau_global_rhs(n, alpha, &c, t));
    let mut constants = constants_of([
        ("alpha", alpha),
        ("rhs_constant", liyau_global_rhs(n, alpha, &c, f64::INFINITY)),
    ]);
    c.insert(&mut constants);
    Assembly {
        theorem: Theorem::LiyauGlobal,
        field,
        lhs: lhs_field(field, alpha),
        rhs,
        mask: check_mask(field, t_min, None),
        constants,
        opts,
        t_min,
    }
    .finish()
}

/// `‖|∇u|/u‖` over the grid nodes of `B_{ρ,T}` outside the pole band.
pub fn gradient_log_sup(field: &ScalarField, x0: &[f64], rho: f64) -> Result<f64> {
    let g = map_local(&field.model, &field.grid, &field.values, |_, _, _, lq| {
        lq.grad_sq.max(0.0).sqrt() / lq.u
    });
    let mask = check_mask(field, field.grid.t_lo, Some((x0, rho)));
    crate::calculus::masked_sup_abs(&field.grid, &g, &mask)
        .map(|n| n.value)
        .ok_or_else(|| Error::EmptyRegion("B_rho".into()))
}

/// Local `α = 1` estimate with the lower-order term `‖|∇u|/u‖_{B_{ρ,T}}`,
/// computed from the field.
pub fn liyau_lower_order_local(
    field: &ScalarField,
    x0: &[f64],
    rho: f64,
    bounds: &BoundSet,
    opts: CheckOptions,
) -> Result<InequalityReport> {
    check_field(field)?;
    check_ball_in_chart(&field.model, x0, rho)?;
    let n = field.model.dim;
    let c = Curvature::from(bounds);
    let grad_sup = gradient_log_sup(field, x0, rho)?;
    let t_min = opts.t_min(&field.grid);
    let rhs = pointwise(field, |_, t, _, _| {
        let (base, coeff) = lower_order_local_terms(n, rho, &c, t);
        base + coeff * grad_sup
    });
    let (base, coeff) = lower_order_local_terms(n, rho, &c, f64::INFINITY);
    let mut constants = constants_of([
        ("rho", rho),
        ("grad_sup", grad_sup),
        ("base_constant", base),
        ("grad_coefficient", coeff),
    ]);
    c.insert(&mut constants);
    Assembly {
        theorem: Theorem::LiyauLowerOrderLocal,
        field,
        lhs: lhs_field(field, 1.0),
        rhs,
        mask: check_mask(field, t_min, Some((x0, 0.5 * rho))),
        constants,
        opts,
        t_min,
    }
    .finish()
}

/// General `α = 1` estimate with lower-order term and cutoff constants
/// `c_φ = sup_D{3|∇φ|² − φ(Δ−2∂_t)φ}` and `‖φ∇φ‖_D`.
pub fn liyau_lower_order_general(
    field: &ScalarField,
    cutoff: &CutoffProfile,
    bounds: &BoundSet,
    opts: CheckOptions,
) -> Result<InequalityReport> {
    check_field(field)?;
    check_cutoff(field, cutoff)?;
    let n = field.model.dim as f64;
    let c3 = cutoff.sup_functional(3.0, field.grid.t_lo)?.value;
    let pg = cutoff.phi_grad_sup()?;
    let grad_sup = gradient_log_sup(field, &cutoff.center, cutoff.radius)?;
    let c = Curvature::from(bounds);
    let t_min = opts.t_min(&field.grid);
    let root = (2.0 * n * (c.k1 + c.k4)).sqrt();
    let rhs = pointwise(field, |j, t, i, _| {
        let p = cutoff.phi[j][i];
        if p <= 0.0 {
            return f64::NAN;
        }
        let p2 = p * p;
        2.0 * n / t
            + 2.0 * n * c3 / p2
            + c.k2.max(c.k3) * n
            + (2.0 * c.k4).sqrt() * n
            + (4.0 * n * pg / p2 + root) * grad_sup
    });
    let mut constants = constants_of([
        ("rho", cutoff.radius),
        ("c_phi_3", c3),
        ("phi_grad_sup", pg),
        ("grad_sup", grad_sup),
    ]);
    c.insert(&mut constants);
    Assembly {
        theorem: Theorem::LiyauLowerOrderGeneral,
        field,
        lhs: lhs_field(field, 1.0),
        rhs,
        mask: cutoff_mask(cutoff, t_min),
        constants,
        opts,
        t_min,
    }
    .finish()
}

/// Errors unless `0 ≤ Ric ≤ k` holds on the sphere over the field's window.
fn certify_ricci_band(field: &ScalarField, k: f64) -> Result<()> {
    let ModelKind::ShrinkingSphere { .. } = field.model.kind else {
        return Err(Error::UnsupportedModel(format!(
            "Ricci-flow estimates need the shrinking sphere, got {}",
            field.model.name()
        )));
    };
    let ric = field.model.ricci_eigenvalue(field.grid.t_hi);
    if ric > k * (1.0 + 1e-12) {
        return Err(Error::MissingCertificate(format!("Ric reaches {ric} > k = {k}")));
    }
    Ok(())
}

/// `|∇u|²/u² − Δu/u ≤ kn + 2n/t` on the shrinking sphere.
pub fn ricci_compact(field: &ScalarField, k: f64, opts: CheckOptions) -> Result<InequalityReport> {
    check_field(field)?;
    certify_ricci_band(field, k)?;
    let n = field.model.dim;
    let t_min = opts.t_min(&field.grid);
    let rhs = pointwise(field, |_, t, _, _| ricci_compact_rhs(n, k, t));
    let constants = constants_of([("k", k), ("bcp_at_t_hi", bcp_rhs(n, k, field.grid.t_hi))]);
    Assembly {
        theorem: Theorem::RicciCompact,
        field,
        lhs: lhs_field(field, 1.0),
        rhs,
        mask: check_mask(field, t_min, None),
        constants,
        opts,
        t_min,
    }
    .finish()
}

/// Both local Ricci-flow estimates on `B_{ρ/2,T}`: the Hamilton type
/// (factor taken to the first power) and the Li-Yau type.
pub fn ricci_local_pair(
    field: &ScalarField,
    alpha: f64,
    x0: &[f64],
    rho: f64,
    k: f64,
    opts: CheckOptions,
) -> Result<(InequalityReport, InequalityReport)> {
    check_alpha(alpha)?;
    check_field(field)?;
    certify_ricci_band(field, k)?;
    check_ball_in_chart(&field.model, x0, rho)?;
    let n = field.model.dim;
    let sup = ball_sup(field, x0, rho)?;
    let t_min = opts.t_min(&field.grid);
    let mask = check_mask(field, t_min, Some((x0, 0.5 * rho)));
    let ham = Assembly {
        theorem: Theorem::RicciLocalHamilton,
        field,
        lhs: lhs_field(field, 0.0),
        rhs: pointwise(field, |_, t, _, u| {
            ricci_local_hamilton_factor(n, rho, k, t) * (4.0 + (sup / u).ln())
        }),
        mask: mask.clone(),
        constants: constants_of([("k", k), ("rho", rho), ("sup_u_ball", sup)]),
        opts,
        t_min,
    }
    .finish()?;
    let ly = Assembly {
        theorem: Theorem::RicciLocalLiyau,
        field,
        lhs: lhs_field(field, alpha),
        rhs: pointwise(field, |_, t, _, _| ricci_local_liyau_rhs(n, alpha, rho, k, t)),
        mask,
        constants: constants_of([
            ("alpha", alpha),
            ("k", k),
            ("rho", rho),
            ("rhs_constant", ricci_local_liyau_rhs(n, alpha, rho, k, f64::INFINITY)),
        ]),
        opts,
        t_min,
    }
    .finish()?;
    Ok((ham, ly))
}

/// One row of the constant table: the time-independent part of a
/// right-hand side (its value as `t → ∞`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantRow {
    pub theorem: String,
    pub value: f64,
    pub note: String,
}

/// Time-independent constant blocks of every right-hand side for the given
/// dimension, radius, α and curvature constants; `k` is the Ricci bound.
pub fn constant_table(n: usize, rho: f64, alpha: f64, c: &Curvature, k: f64) -> Result<Vec<ConstantRow>> {
    check_alpha(alpha)?;
    check_rho(rho)?;
    let inf = f64::INFINITY;
    let row = |id: &str, value: f64, note: &str| ConstantRow {
        theorem: id.into(),
        value,
        note: note.into(),
    };
    let (lo_base, lo_coeff) = lower_order_local_terms(n, rho, c, inf);
    Ok(vec![
        row(
            "hamilton_local",
            hamilton_local_bracket(n, rho, c, inf),
            "bracket minus 1/t",
        ),
        row(
            "liyau_local",
            liyau_local_rhs(n, alpha, rho, c, inf),
            "rhs minus 2nα²/t",
        ),
        row("liyau_global", liyau_global_rhs(n, alpha, c, inf), "rhs minus 2nα²/t"),
        row(
            "liyau_lower_order_local",
            lo_base,
            "rhs minus 2n/t, without gradient term",
        ),
        row(
            "liyau_lower_order_local_grad",
            lo_coeff,
            "coefficient of the gradient sup",
        ),
        row("ricci_compact", ricci_compact_rhs(n, k, inf), "rhs minus 2n/t"),
        row(
            "ricci_local_hamilton",
            ricci_local_hamilton_factor(n, rho, k, inf),
            "factor minus 2/t",
        ),
        row(
            "ricci_local_liyau",
            ricci_local_liyau_rhs(n, alpha, rho, k, inf),
            "rhs minus 2α²n/t",
        ),
        row("bcp_comparison", bcp_rhs(n, k, inf), "2kn + n/t minus n/t"),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{extract_bounds, CutoffKind, DEFAULT_CUT_BAND_CELLS};
    use crate::fields::closed_form_solution;
    use crate::geometry::ScaleProfile;

    const C_TOL: f64 = 10.0;

    fn flat() -> Curvature {
        Curvature::default()
    }

    fn constant_field(model: &EvolvingModel, res: usize, dt: f64) -> ScalarField {
        let grid = GridSpec::for_model(model, res, dt).unwrap();
        closed_form_solution(model, Mode::Constant, 0.0, &grid).unwrap()
    }

    #[test]
    fn formula_evaluations() {
        let b = hamilton_local_bracket(2, 1.0, &flat(), 1.0);
        let expect = 1.0 + 36.0 * PI * PI / fp2();
        assert!((b - expect).abs() < 1e-12);
        assert!((36.0 * PI * PI / fp2() - 482.2).abs() < 0.1);

        let r = liyau_local_rhs(2, 2.0, 1.0, &flat(), 1.0);
        assert!((r - 8.0 * (2.0 + 8.0 * PI * PI * 13.0 / fp2())).abs() < 1e-9);

        assert_eq!(liyau_global_rhs(2, 2.0, &flat(), 1.0), 16.0);
        assert_eq!(ricci_compact_rhs(2, 2.0, 0.5), 12.0);
        assert_eq!(bcp_rhs(2, 2.0, 0.5), 12.0);

        let (base, coeff) = lower_order_local_terms(2, 1.0, &flat(), 1.0);
        assert!((base - (4.0 + 16.0 * PI * PI * 5.0 / fp2())).abs() < 1e-9);
        assert!((coeff - 16.0 * PI / fp2()).abs() < 1e-12);
    }

    #[test]
    fn ricci_local_constants_on_sphere() {
        // α = 2, n = 2, k = 2, ρ = ½
        let f = ricci_local_hamilton_factor(2, 0.5, 2.0, 1.0);
        assert!((f - 2.0 * (1.0 + 144.0 * PI * PI / fp2() + 16.0 * PI / fp2())).abs() < 1e-9);
        let l = ricci_local_liyau_rhs(2, 2.0, 0.5, 2.0, 1.0);
        let expect =
            16.0 + 8.0 * 8.0 * PI * PI * 13.0 / (fp2() * 0.25) + ((4.0 + PI) / (4.0 - PI)).powi(2) * 16.0 + 32.0;
        assert!((l - expect).abs() < 1e-9);
    }

    #[test]
    fn alpha_one_rejected_with_parameter_name() {
        let m = EvolvingModel::conformal_torus(2, ScaleProfile::unit(), 1.0).unwrap();
        let f = constant_field(&m, 16, 0.1);
        let b = extract_bounds(&m, None).unwrap();
        let err = liyau_local(&f, 1.0, &[0.0, 0.0], 1.0, &b, CheckOptions::new(C_TOL)).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { ref name, .. } if name == "alpha"));
        assert!(liyau_global(&f, 0.5, &b, CheckOptions::new(C_TOL)).is_err());
    }

    #[test]
    fn ball_exiting_chart_rejected() {
        let m = EvolvingModel::conformal_torus(2, ScaleProfile::unit(), 1.0).unwrap();
        assert!(matches!(
            check_ball_in_chart(&m, &[0.0, 0.0], 3.2),
            Err(Error::OutsideChart { .. })
        ));
        let h = EvolvingModel::static_hyperbolic(2, 1.0, 3.0, 1.0).unwrap();
        assert!(check_ball_in_chart(&h, &[0.0, 0.0], 3.0).is_ok());
        assert!(check_ball_in_chart(&h, &[1.0, 0.0], 2.5).is_err());
    }

    #[test]
    fn constant_solution_has_slack_equal_to_rhs() {
        let m = EvolvingModel::conformal_torus(2, ScaleProfile::unit(), 1.0).unwrap();
        let f = constant_field(&m, 16, 0.05);
        let b = extract_bounds(&m, None).unwrap();
        let opts = CheckOptions::new(C_TOL);
        let g = liyau_global(&f, 2.0, &b, opts).unwrap();
        assert!(g.pass);
        // slack = rhs, which is nonincreasing in t, so the minimum sits at t_hi
        assert!((g.worst_node.t - 1.0).abs() < 1e-12);
        assert!((g.min_slack - liyau_global_rhs(2, 2.0, &flat(), 1.0)).abs() < 1e-9);
        assert!(g.rhs.windows(2).skip(1).all(|w| w[1][0] <= w[0][0]));
        let h = hamilton_global(&f, &KProfile::constant(0.0), opts).unwrap();
        assert_eq!(h.min_slack, 0.0);
        assert!(h.pass);
        let l = hamilton_local(&f, &[0.0, 0.0], 1.0, &b, opts).unwrap();
        assert!(l.min_slack > 0.0);
    }

    #[test]
    fn classical_hamilton_on_static_circle() {
        let m = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap();
        let grid = GridSpec::for_model(&m, 128, 0.01).unwrap();
        let f = closed_form_solution(&m, Mode::Circle { m: 1 }, 0.5, &grid).unwrap();
        let r = hamilton_global(&f, &KProfile::constant(0.0), CheckOptions::new(C_TOL)).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.violations, 0);
        // rhs is exactly (2/t) log(‖u‖/u)
        let j = grid.steps;
        let i = grid.axes[0].n / 2;
        let u = f.values[j][i];
        assert!((r.rhs[j][i] - 2.0 * (1.5 / u).ln()).abs() < 1e-12);
        // hand evaluation at θ = π, t = 1: u = 1 − ½e^{−½}, ∇u = 0
        assert!((u - (1.0 - 0.5 * (-0.5f64).exp())).abs() < 1e-12);
        assert!(r.lhs[j][i].abs() < 1e-12);
        assert!(r.slack[j][i] > 0.0);
    }

    #[test]
    fn hamilton_global_needs_certificate() {
        let m = EvolvingModel::static_hyperbolic(2, 1.0, 3.0, 1.0).unwrap();
        let grid = GridSpec::for_model(&m, 32, 0.05).unwrap();
        let f = closed_form_solution(&m, Mode::Spherical { s: 0.5 }, 0.5, &grid).unwrap();
        let err = hamilton_global(&f, &KProfile::constant(0.0), CheckOptions::new(C_TOL)).unwrap_err();
        assert!(matches!(err, Error::MissingCertificate(_)));
        assert!(hamilton_global(&f, &KProfile::constant(1.0), CheckOptions::new(C_TOL)).is_ok());
    }

    #[test]
    fn sphere_ricci_compact_zonal() {
        let m = EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap();
        let grid = GridSpec::for_model(&m, 64, 0.005).unwrap();
        let f = closed_form_solution(&m, Mode::Zonal { l: 1 }, 0.3, &grid).unwrap();
        let r = ricci_compact(&f, 2.0, CheckOptions::new(C_TOL)).unwrap();
        assert!(r.pass && r.min_slack > 0.0, "{r:?}");
        assert_eq!(r.rhs[grid.steps][0], 12.0);
        assert!(matches!(
            ricci_compact(&f, 1.5, CheckOptions::new(C_TOL)),
            Err(Error::MissingCertificate(_))
        ));
        let (h, l) = ricci_local_pair(&f, 2.0, &[0.0, PI / 2.0], 0.5, 2.0, CheckOptions::new(C_TOL)).unwrap();
        assert!(h.pass && l.pass);
    }

    #[test]
    fn general_lemmas_dominate_theorems_on_half_ball() {
        let m = EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap();
        let grid = GridSpec::for_model(&m, 96, 0.005).unwrap();
        let f = closed_form_solution(&m, Mode::Zonal { l: 1 }, 0.3, &grid).unwrap();
        let b = extract_bounds(&m, None).unwrap();
        let x0 = [0.0, PI / 2.0];
        let rho = 0.6;
        let cut = CutoffProfile::build(&m, &grid, &x0, rho, CutoffKind::Cosine, DEFAULT_CUT_BAND_CELLS).unwrap();
        let opts = CheckOptions::new(C_TOL);
        let pairs = [
            (
                hamilton_local_general(&f, &cut, &b, opts).unwrap(),
                hamilton_local(&f, &x0, rho, &b, opts).unwrap(),
            ),
            (
                liyau_local_general(&f, 2.0, &cut, &b, opts).unwrap(),
                liyau_local(&f, 2.0, &x0, rho, &b, opts).unwrap(),
            ),
            (
                liyau_lower_order_general(&f, &cut, &b, opts).unwrap(),
                liyau_lower_order_local(&f, &x0, rho, &b, opts).unwrap(),
            ),
        ];
        for (general, theorem) in &pairs {
            assert!(general.pass, "{:?}", general.theorem);
            assert!(theorem.pass, "{:?}", theorem.theorem);
            for j in 0..grid.n_times() {
                for i in 0..grid.n_nodes() {
                    if theorem.mask[j][i] && general.mask[j][i] {
                        // the lemma's rhs is bounded by the theorem's after
                        // φ ≥ 1 − π/4; the lower-order pair differs by the
                        // gradient coefficient 16πn vs 8πn
                        let slack_factor = if general.theorem == Theorem::LiyauLowerOrderGeneral {
                            2.0
                        } else {
                            1.0
                        };
                        let tol = 0.05 * theorem.rhs[j][i];
                        assert!(
                            general.rhs[j][i] <= slack_factor * theorem.rhs[j][i] + tol,
                            "{:?} at ({j},{i}): {} > {}",
                            general.theorem,
                            general.rhs[j][i],
                            theorem.rhs[j][i]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tent_cutoff_on_oscillating_torus() {
        let profile = ScaleProfile::Sine {
            amplitude: 0.25,
            omega: 1.0,
        };
        let m = EvolvingModel::conformal_torus(2, profile, 1.0).unwrap();
        let grid = GridSpec::for_model(&m, 48, 0.01).unwrap();
        let f = closed_form_solution(&m, Mode::Torus { m1: 1, m2: 1 }, 0.4, &grid).unwrap();
        let b = extract_bounds(&m, None).unwrap();
        let cut =
            CutoffProfile::build(&m, &grid, &[PI, PI], 1.5, CutoffKind::Quadratic, DEFAULT_CUT_BAND_CELLS).unwrap();
        let opts = CheckOptions::new(C_TOL);
        assert!(hamilton_local_general(&f, &cut, &b, opts).unwrap().pass);
        assert!(liyau_local_general(&f, 2.0, &cut, &b, opts).unwrap().pass);
        assert!(liyau_lower_order_general(&f, &cut, &b, opts).unwrap().pass);
    }

    #[test]
    fn report_json_and_csv() {
        let m = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap();
        let f = constant_field(&m, 8, 0.25);
        let b = extract_bounds(&m, None).unwrap();
        let r = liyau_global(&f, 2.0, &b, CheckOptions::new(C_TOL)).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["theorem"], "liyau_global");
        assert!(v.get("lhs").is_none());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 5 * 8);
        assert!(text.starts_with("t,x0,lhs,rhs,slack,masked"));
    }

    #[test]
    fn theorem_ids_round_trip() {
        for t in Theorem::ALL {
            assert_eq!(Theorem::parse(t.id()).unwrap(), t);
        }
        assert!(Theorem::parse("nope").is_err());
    }

    #[test]
    fn constant_table_collapses_when_flat() {
        let rows = constant_table(2, 1.0, 2.0, &flat(), 0.0).unwrap();
        let get = |id: &str| rows.iter().find(|r| r.theorem == id).unwrap().value;
        assert!((get("hamilton_local") - 36.0 * PI * PI / fp2()).abs() < 1e-9);
        assert_eq!(get("liyau_global"), 0.0);
        assert_eq!(get("bcp_comparison"), 0.0);
    }
}
