//! Curvature constants of a model over a time window, and the distance
//! cutoff `φ` with its derived constants.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::calculus::{base_mask, heat_drift, map_local, masked_sup_abs, time_derivative, NodeRef, Tolerance};
use crate::error::{Error, Result};
use crate::fields::Region;
use crate::geometry::{
    relative_eigenvalues, sphere_angle, sphere_point, wrap_angle, EvolvingModel, ModelKind, ScaleProfile,
};
use crate::grid::GridSpec;
use crate::quad;

/// Default width, in grid cells, of the band masked around the cut locus.
pub const DEFAULT_CUT_BAND_CELLS: usize = 3;
/// Slack for re-verifying analytic bounds on samples.
const VERIFY_SLACK: f64 = 1e-10;

/// Lower-bound profile `k(t)` for `R_t ≥ −k(t) g_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KProfile {
    Constant {
        value: f64,
    },
    /// `k(t) = max(0, −2ȧ/a)` of a conformal scale profile.
    Contraction {
        profile: ScaleProfile,
    },
}

impl KProfile {
    pub fn constant(value: f64) -> Self {
        KProfile::Constant { value }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            KProfile::Constant { value } => value,
            KProfile::Contraction { profile } => (-2.0 * profile.log_rate(t)).max(0.0),
        }
    }

    /// `∫_s^t k(r) dr`.
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        match *self {
            KProfile::Constant { value } => value * (t - s),
            KProfile::Contraction { profile } => profile.contraction_integral(s, t),
        }
    }

    /// `∫_0^t exp(−∫_s^t k(r) dr) ds`.
    pub fn forward_weight(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            KProfile::Constant { value } if value.abs() * t < 1e-8 => t * (1.0 - 0.5 * value * t),
            KProfile::Constant { value } => -(-value * t).exp_m1() / value,
            KProfile::Contraction { profile } => {
                let f = |s: f64| (-profile.contraction_integral(s, t)).exp();
                let breaks = profile.turning_points(0.0, t);
                quad::integrate_with_breaks(&f, 0.0, t, &breaks, 1e-13 * t.max(1e-3))
            }
        }
    }

    pub fn sup(&self, t0: f64, t1: f64) -> f64 {
        match *self {
            KProfile::Constant { value } => value,
            KProfile::Contraction { profile } => {
                let (lo, _) = profile.log_rate_range(t0, t1);
                (-2.0 * lo).max(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundRegion {
    Global {
        t0: f64,
        t1: f64,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
        t0: f64,
        t1: f64,
    },
}

/// Curvature constants valid on a region, relative to `g_t`:
/// `Ric ≥ −k₁`, `−k₂ ≤ ∂_t g ≤ k₃`, `|∇∂_t g| ≤ k₄`, `R_t ≥ −k(t)` and
/// `|Ric| ≤ ricci_abs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSet {
    pub k: KProfile,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub ricci_abs: f64,
    pub ricci_min: f64,
    pub region: BoundRegion,
}

/// Tightest constants for the model over the region's time window
/// (the whole model window when `region` is `None`).
pub fn extract_bounds(model: &EvolvingModel, region: Option<&Region>) -> Result<BoundSet> {
    let (t0, t1) = region.map_or((0.0, model.horizon), |r| (r.t_min, r.t_max));
    if t0 > t1 {
        return Err(Error::param("region", "t_min exceeds t_max"));
    }
    model.check_time(t0)?;
    model.check_time(t1)?;
    if let Some(b) = region.and_then(|r| r.ball.as_ref()) {
        if b.center.len() != model.dim || !(b.radius > 0.0) {
            return Err(Error::param("region", "ball centre/radius invalid for the model"));
        }
    }
    let region_desc = match region.and_then(|r| r.ball.clone()) {
        Some(b) => BoundRegion::Ball {
            center: b.center,
            radius: b.radius,
            t0,
            t1,
        },
        None => BoundRegion::Global { t0, t1 },
    };
    let n1 = model.dim as f64 - 1.0;
    let set = match model.kind {
        ModelKind::ShrinkingSphere { .. } => {
            let top = n1 / model.conformal_factor(t1);
            let bottom = n1 / model.conformal_factor(t0);
            BoundSet {
                k: KProfile::constant(0.0),
                k1: 0.0,
                k2: top,
                k3: 0.0,
                k4: 0.0,
                ricci_abs: top,
                ricci_min: bottom,
                region: region_desc,
            }
        }
        ModelKind::ConformalCircle { profile } | ModelKind::ConformalTorus { profile } => {
            let (lo, hi) = profile.log_rate_range(t0, t1);
            let k = if profile.is_static() {
                KProfile::constant(0.0)
            } else {
                KProfile::Contraction { profile }
            };
            BoundSet {
                k,
                k1: 0.0,
                k2: (-2.0 * lo).max(0.0),
                k3: (2.0 * hi).max(0.0),
                k4: 0.0,
                ricci_abs: 0.0,
                ricci_min: 0.0,
                region: region_desc,
            }
        }
        ModelKind::StaticHyperbolic { kappa, .. } => BoundSet {
            k: KProfile::constant(n1 * kappa),
            k1: n1 * kappa,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
            ricci_abs: n1 * kappa,
            ricci_min: -n1 * kappa,
            region: region_desc,
        },
    };
    Ok(set)
}

/// Grid-sup constants from sampled metric data (fallback path).
pub fn extract_bounds_numeric(model: &EvolvingModel, grid: &GridSpec) -> Result<BoundSet> {
    let mut k1: f64 = 0.0;
    let mut k2: f64 = 0.0;
    let mut k3: f64 = 0.0;
    let mut k4: f64 = 0.0;
    let mut kr: f64 = 0.0;
    let mut rabs: f64 = 0.0;
    let mut rmin = f64::INFINITY;
    for j in 0..grid.n_times() {
        let t = grid.time(j);
        for x in grid.points() {
            let md = model.metric_data(&x, t)?;
            let ric = relative_eigenvalues(&md.ricci, &md.g);
            let dtg = relative_eigenvalues(&md.dt_g, &md.g);
            let r = relative_eigenvalues(&(&md.ricci + &md.dt_g), &md.g);
            k1 = k1.max(-ric[0]);
            rmin = rmin.min(ric[0]);
            rabs = rabs.max(ric[0].abs()).max(ric[ric.len() - 1].abs());
            k2 = k2.max(-dtg[0]);
            k3 = k3.max(dtg[dtg.len() - 1]);
            k4 = k4.max(md.grad_dt_g_norm);
            kr = kr.max(-r[0]);
        }
    }
    Ok(BoundSet {
        k: KProfile::constant(kr),
        k1,
        k2,
        k3,
        k4,
        ricci_abs: rabs,
        ricci_min: rmin,
        region: BoundRegion::Global {
            t0: grid.t_lo,
            t1: grid.t_hi,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundVerification {
    pub samples: usize,
    pub violations: usize,
    pub min_slack: f64,
}

/// Re-checks every bound at the given chart points over `times`.
pub fn verify_bounds(
    model: &EvolvingModel,
    bounds: &BoundSet,
    points: &[Vec<f64>],
    times: &[f64],
) -> Result<BoundVerification> {
    let mut samples = 0;
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for &t in times {
        for x in points {
            let md = model.metric_data(x, t)?;
            let ric = relative_eigenvalues(&md.ricci, &md.g);
            let dtg = relative_eigenvalues(&md.dt_g, &md.g);
            let r = relative_eigenvalues(&(&md.ricci + &md.dt_g), &md.g);
            let slacks = [
                ric[0] + bounds.k1,
                bounds.ricci_abs - ric[ric.len() - 1].abs().max(ric[0].abs()),
                dtg[0] + bounds.k2,
                bounds.k3 - dtg[dtg.len() - 1],
                bounds.k4 - md.grad_dt_g_norm,
                r[0] + bounds.k.value(t),
            ];
            samples += 1;
            for s in slacks {
                min_slack = min_slack.min(s);
                if s < -VERIFY_SLACK {
                    violations += 1;
                }
            }
        }
    }
    Ok(BoundVerification {
        samples,
        violations,
        min_slack,
    })
}

/// Checks `R_t ≥ −k(t)` at the grid's nodes and times.
pub fn certify_k(model: &EvolvingModel, k: &KProfile, grid: &GridSpec) -> Result<()> {
    let times = grid.times();
    for &t in &times {
        for x in grid.points() {
            let md = model.metric_data(&x, t)?;
            let r = relative_eigenvalues(&(&md.ricci + &md.dt_g), &md.g);
            if r[0] + k.value(t) < -VERIFY_SLACK {
                return Err(Error::MissingCertificate(format!(
                    "R_t has eigenvalue {} < −k(t) = {} at t = {t}",
                    r[0],
                    -k.value(t)
                )));
            }
        }
    }
    Ok(())
}

/// `cos(π min(ρ_t(x₀, x), ρ) / 2ρ)`.
pub fn phi(model: &EvolvingModel, x0: &[f64], rho: f64, x: &[f64], t: f64) -> f64 {
    CutoffKind::Cosine.eval(model.distance(x0, x, t), rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    /// `cos(π ρ_t / 2ρ)`.
    Cosine,
    /// `1 − (ρ_t/ρ)²`.
    Quadratic,
}

impl CutoffKind {
    pub fn eval(self, d: f64, rho: f64) -> f64 {
        if d >= rho {
            return 0.0;
        }
        match self {
            CutoffKind::Cosine => (PI * d / (2.0 * rho)).cos(),
            CutoffKind::Quadratic => 1.0 - (d / rho).powi(2),
        }
    }
}

/// Coefficient variant of `c |∇φ|² − φ (Δ − 2∂_t) φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CPhiVariant {
    Three,
    Seven,
    /// `c = 3 + α² n / (α − 1)`.
    LiYau {
        alpha: f64,
    },
}

impl CPhiVariant {
    pub fn coefficient(self, n: usize) -> Result<f64> {
        Ok(match self {
            CPhiVariant::Three => 3.0,
            CPhiVariant::Seven => 7.0,
            CPhiVariant::LiYau { alpha } => {
                if !(alpha > 1.0) {
                    return Err(Error::param("alpha", "must exceed 1"));
                }
                3.0 + alpha * alpha * n as f64 / (alpha - 1.0)
            }
        })
    }
}

/// `π²(n + c)/(4ρ²) + (π/2)(k₁ + k₂)` for the cosine cutoff.
pub fn c_phi_analytic(n: usize, rho: f64, c: f64, k1: f64, k2: f64) -> f64 {
    PI * PI * (n as f64 + c) / (4.0 * rho * rho) + 0.5 * PI * (k1 + k2)
}

/// Cutoff sampled on a field's grid, with stencil derivatives.
#[derive(Debug, Clone)]
pub struct CutoffProfile {
    pub kind: CutoffKind,
    pub center: Vec<f64>,
    pub radius: f64,
    pub model: EvolvingModel,
    pub grid: GridSpec,
    pub band_cells: usize,
    pub distance: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub grad_sq: Vec<Vec<f64>>,
    /// `(Δ − 2∂_t) φ`.
    pub heat_op: Vec<Vec<f64>>,
    /// Open ball, away from the cut-locus band and the pole band.
    pub mask: Vec<Vec<bool>>,
}

impl CutoffProfile {
    pub fn build(
        model: &EvolvingModel,
        grid: &GridSpec,
        center: &[f64],
        radius: f64,
        kind: CutoffKind,
        band_cells: usize,
    ) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::param("rho", "must be positive"));
        }
        if center.len() != model.dim {
            return Err(Error::param("x0", "dimension mismatch"));
        }
        grid.check_model(model)?;
        if grid.axes.len() < model.dim {
            let at_pole = match model.kind {
                ModelKind::ShrinkingSphere { .. } => center[0].abs() < 1e-12 || (center[0] - PI).abs() < 1e-12,
                ModelKind::StaticHyperbolic { .. } => center[0].abs() < 1e-12,
                _ => false,
            };
            if !at_pole {
                return Err(Error::UnsupportedModel(
                    "on grids without every chart axis the cutoff centre must be the chart pole".into(),
                ));
            }
        }
        let points = grid.points();
        let times = grid.times();
        let distance: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| points.iter().map(|x| model.distance(center, x, t)).collect())
            .collect();
        let phi: Vec<Vec<f64>> = distance
            .iter()
            .map(|r| r.iter().map(|&d| kind.eval(d, radius)).collect())
            .collect();
        // stencils only where every touched node lies in the open ball
        let inside: Vec<Vec<f64>> = distance
            .iter()
            .zip(&phi)
            .map(|(dr, pr)| {
                dr.iter()
                    .zip(pr)
                    .map(|(&d, &p)| if d < radius { p } else { f64::NAN })
                    .collect()
            })
            .collect();
        let grad_sq = map_local(model, grid, &inside, |_, _, _, lq| lq.grad_sq);
        let drift = heat_drift(model, grid, &inside);
        // (Δ − 2∂_t)φ = −2 (∂_t − ½Δ)φ
        let heat_op: Vec<Vec<f64>> = drift.iter().map(|r| r.iter().map(|v| -2.0 * v).collect()).collect();
        let cut: Vec<bool> = points
            .iter()
            .map(|x| near_cut_locus(model, grid, center, x, band_cells))
            .collect();
        let base = base_mask(model, grid, grid.t_lo, grid.t_hi);
        let mask = (0..times.len())
            .map(|j| {
                (0..points.len())
                    .map(|i| {
                        base[j][i]
                            && !cut[i]
                            && distance[j][i] < radius
                            && heat_op[j][i].is_finite()
                            && grad_sq[j][i].is_finite()
                    })
                    .collect()
            })
            .collect();
        Ok(CutoffProfile {
            kind,
            center: center.to_vec(),
            radius,
            model: model.clone(),
            grid: grid.clone(),
            band_cells,
            distance,
            phi,
            grad_sq,
            heat_op,
            mask,
        })
    }

    /// `c |∇φ|² − φ (Δ − 2∂_t) φ` on the mask, NaN elsewhere.
    pub fn functional(&self, c: f64) -> Vec<Vec<f64>> {
        self.masked(|j, i| c * self.grad_sq[j][i] - self.phi[j][i] * self.heat_op[j][i])
    }

    fn masked<F: Fn(usize, usize) -> f64>(&self, f: F) -> Vec<Vec<f64>> {
        self.mask
            .iter()
            .enumerate()
            .map(|(j, r)| {
                r.iter()
                    .enumerate()
                    .map(|(i, &on)| if on { f(j, i) } else { f64::NAN })
                    .collect()
            })
            .collect()
    }

    /// Grid sup of the functional over the mask intersected with `t ≥ t_min`.
    pub fn sup_functional(&self, c: f64, t_min: f64) -> Result<NodeRef> {
        let vals = self.functional(c);
        let mut best: Option<NodeRef> = None;
        for (j, row) in vals.iter().enumerate() {
            if self.grid.time(j) < t_min - 1e-12 {
                continue;
            }
            for (i, &v) in row.iter().enumerate() {
                if v.is_finite() && best.as_ref().is_none_or(|b| v > b.value) {
                    best = Some(NodeRef::new(&self.grid, j, i, v));
                }
            }
        }
        best.ok_or_else(|| Error::EmptyMask("cutoff".into()))
    }

    /// `‖φ ∇φ‖` over the mask.
    pub fn phi_grad_sup(&self) -> Result<f64> {
        let vals = self.masked(|j, i| self.phi[j][i] * self.grad_sq[j][i].max(0.0).sqrt());
        masked_sup_abs(&self.grid, &vals, &self.mask)
            .map(|n| n.value)
            .ok_or_else(|| Error::EmptyMask("cutoff".into()))
    }

    /// Nodes of the closed half ball `B_{ρ/2}` at each time.
    pub fn half_ball(&self) -> Vec<Vec<bool>> {
        self.distance
            .iter()
            .map(|r| r.iter().map(|&d| d <= 0.5 * self.radius * (1.0 + 1e-12)).collect())
            .collect()
    }
}

/// Whether `x` lies within `cells` grid cells of the cut locus of `x₀`
/// (antipode on the sphere, the opposite seam on the torus and circle).
fn near_cut_locus(model: &EvolvingModel, grid: &GridSpec, x0: &[f64], x: &[f64], cells: usize) -> bool {
    let width = cells as f64 * grid.h();
    match model.kind {
        ModelKind::ShrinkingSphere { .. } => {
            let a = sphere_point(x0);
            let anti: Vec<f64> = a.iter().map(|v| -v).collect();
            sphere_angle(&anti, &sphere_point(x)) < width
        }
        ModelKind::ConformalCircle { .. } | ModelKind::ConformalTorus { .. } => {
            x.iter().zip(x0).any(|(a, b)| wrap_angle(a - b).abs() > PI - width)
        }
        ModelKind::StaticHyperbolic { .. } => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradPhiReport {
    pub sup_grad: f64,
    pub bound: f64,
    pub phi_grad_sup: f64,
    pub phi_grad_bound: f64,
    pub half_ball_min_phi: f64,
    pub half_ball_floor: f64,
    pub half_ball_violations: usize,
    pub tolerance: Tolerance,
    pub pass: bool,
}

/// `sup |∇φ| ≤ π/(2ρ) + τ`, `‖φ∇φ‖ ≤ π/(4ρ) + τ` and `φ ≥ 1 − π/4` on
/// `B_{ρ/2}`.
pub fn grad_phi_bound_check(profile: &CutoffProfile, c_tol: f64) -> Result<GradPhiReport> {
    let grid = &profile.grid;
    let tol = Tolerance::for_grid(c_tol, grid, false);
    let grad: Vec<Vec<f64>> = profile
        .grad_sq
        .iter()
        .map(|r| r.iter().map(|v| v.max(0.0).sqrt()).collect())
        .collect();
    let sup_grad = masked_sup_abs(grid, &grad, &profile.mask)
        .map(|n| n.value)
        .ok_or_else(|| Error::EmptyMask("cutoff".into()))?;
    let phi_grad_sup = profile.phi_grad_sup()?;
    let bound = PI / (2.0 * profile.radius);
    let floor = 1.0 - PI / 4.0;
    let half = profile.half_ball();
    let mut min_phi = f64::INFINITY;
    let mut violations = 0;
    for (j, row) in half.iter().enumerate() {
        for (i, &on) in row.iter().enumerate() {
            if on {
                let p = profile.phi[j][i];
                min_phi = min_phi.min(p);
                if p < floor {
                    violations += 1;
                }
            }
        }
    }
    let pass = sup_grad <= bound + tol.value && phi_grad_sup <= 0.5 * bound + tol.value && violations == 0;
    Ok(GradPhiReport {
        sup_grad,
        bound,
        phi_grad_sup,
        phi_grad_bound: 0.5 * bound,
        half_ball_min_phi: min_phi,
        half_ball_floor: floor,
        half_ball_violations: violations,
        tolerance: tol,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CPhiReport {
    pub variant: CPhiVariant,
    pub coefficient: f64,
    pub numeric_sup: f64,
    pub worst: NodeRef,
    pub analytic_bound: Option<f64>,
    pub tolerance: Tolerance,
    pub pass: bool,
}

/// Numeric sup of `c |∇φ|² − φ(Δ − 2∂_t)φ` against the analytic bound
/// (cosine cutoff only).
pub fn c_phi(profile: &CutoffProfile, variant: CPhiVariant, bounds: &BoundSet, c_tol: f64) -> Result<CPhiReport> {
    let n = profile.model.dim;
    let c = variant.coefficient(n)?;
    let worst = profile.sup_functional(c, profile.grid.t_lo)?;
    let tol = Tolerance::for_grid(c_tol, &profile.grid, true);
    let analytic =
        (profile.kind == CutoffKind::Cosine).then(|| c_phi_analytic(n, profile.radius, c, bounds.k1, bounds.k2));
    let pass = analytic.is_none_or(|a| worst.value <= a + tol.value);
    Ok(CPhiReport {
        variant,
        coefficient: c,
        numeric_sup: worst.value,
        worst,
        analytic_bound: analytic,
        tolerance: tol,
        pass,
    })
}

/// Time derivative of the cutoff at a node (exposed for diagnostics).
pub fn phi_time_derivative(profile: &CutoffProfile, j: usize, node: usize) -> Option<f64> {
    time_derivative(&profile.grid, &profile.phi, j, node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::calibrate;
    use proptest::prelude::*;

    fn sphere() -> EvolvingModel {
        EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap()
    }

    #[test]
    fn sphere_constants() {
        let b = extract_bounds(&sphere(), None).unwrap();
        assert_eq!((b.k1, b.k2, b.k3, b.k4), (0.0, 2.0, 0.0, 0.0));
        assert_eq!(b.ricci_abs, 2.0);
        assert_eq!(b.ricci_min, 1.0);
        assert_eq!(b.k.value(0.3), 0.0);
    }

    #[test]
    fn flat_and_hyperbolic_constants() {
        let c = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap();
        let b = extract_bounds(&c, None).unwrap();
        assert_eq!((b.k1, b.k2, b.k3, b.k4, b.k.value(0.5)), (0.0, 0.0, 0.0, 0.0, 0.0));
        let h = EvolvingModel::static_hyperbolic(2, 1.0, 3.0, 1.0).unwrap();
        let b = extract_bounds(&h, None).unwrap();
        assert_eq!((b.k1, b.k2, b.k3, b.k4, b.k.value(0.5)), (1.0, 0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn analytic_bounds_agree_with_grid_sup() {
        let p = ScaleProfile::Sine {
            amplitude: 0.25,
            omega: 1.0,
        };
        let models = vec![
            sphere(),
            EvolvingModel::conformal_torus(2, p, 6.0).unwrap(),
            EvolvingModel::static_hyperbolic(3, 0.5, 2.0, 1.0).unwrap(),
        ];
        for m in models {
            let a = extract_bounds(&m, None).unwrap();
            let g = GridSpec::for_model(&m, 8, m.horizon / 2000.0).unwrap();
            let n = extract_bounds_numeric(&m, &g).unwrap();
            for (x, y) in [
                (a.k1, n.k1),
                (a.k2, n.k2),
                (a.k3, n.k3),
                (a.k4, n.k4),
                (a.ricci_abs, n.ricci_abs),
            ] {
                assert!(y <= x + 1e-12 && x - y < 1e-5, "{}: {x} vs {y}", m.name());
            }
            let v = verify_bounds(&m, &a, &g.points(), &g.times()).unwrap();
            assert_eq!(v.violations, 0);
            assert!(v.min_slack.abs() < 1e-5, "bounds are attained");
        }
    }

    #[test]
    fn oscillating_torus_k_profile() {
        let p = ScaleProfile::Sine {
            amplitude: 0.25,
            omega: 1.0,
        };
        let m = EvolvingModel::conformal_torus(2, p, 7.0).unwrap();
        let b = extract_bounds(&m, None).unwrap();
        let ext = 2.0 * 0.25 / (1.0 - 0.0625f64).sqrt();
        assert!((b.k2 - ext).abs() < 1e-12 && (b.k3 - ext).abs() < 1e-12);
        let g = GridSpec::for_model(&m, 8, 0.01).unwrap();
        assert!(certify_k(&m, &b.k, &g).is_ok());
        assert!(matches!(
            certify_k(&m, &KProfile::constant(0.0), &g),
            Err(Error::MissingCertificate(_))
        ));
    }

    #[test]
    fn forward_weight_closed_forms() {
        assert!((KProfile::constant(0.0).forward_weight(0.8) - 0.8).abs() < 1e-15);
        let w = KProfile::constant(1.0).forward_weight(2.0);
        assert!((w - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        let p = ScaleProfile::Sine {
            amplitude: 0.3,
            omega: 2.0,
        };
        let k = KProfile::Contraction { profile: p };
        // brute-force double integral
        let t = 2.5;
        let n = 4000;
        let h = t / n as f64;
        let mut outer = 0.0;
        for i in 0..n {
            let s = (i as f64 + 0.5) * h;
            let m = 200;
            let hh = (t - s) / m as f64;
            let inner: f64 = (0..m).map(|l| k.value(s + (l as f64 + 0.5) * hh)).sum::<f64>() * hh;
            outer += (-inner).exp() * h;
        }
        assert!((k.forward_weight(t) - outer).abs() < 1e-5);
    }

    #[test]
    fn phi_examples() {
        let c = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap();
        assert_eq!(phi(&c, &[1.0], 0.7, &[1.0], 0.0), 1.0);
        assert!(phi(&c, &[0.0], 1.0, &[1.0], 0.0).abs() < 1e-15);
        let half = phi(&c, &[0.0], 1.0, &[0.5], 0.0);
        assert!((half - (PI / 4.0).cos()).abs() < 1e-15);
        assert!(half >= 1.0 - PI / 4.0);
        assert_eq!(phi(&c, &[0.0], 1.0, &[2.0], 0.0), 0.0);
    }

    #[test]
    fn flat_torus_c_phi_variants() {
        let m = EvolvingModel::conformal_torus(2, ScaleProfile::unit(), 0.5).unwrap();
        let g = GridSpec::for_model(&m, 96, 0.05).unwrap();
        let b = extract_bounds(&m, None).unwrap();
        let p = CutoffProfile::build(&m, &g, &[PI, PI], 1.0, CutoffKind::Cosine, DEFAULT_CUT_BAND_CELLS).unwrap();
        let c_tol = calibrate(&m).unwrap().c_tol;
        let three = c_phi(&p, CPhiVariant::Three, &b, c_tol).unwrap();
        assert!((three.analytic_bound.unwrap() - PI * PI * 5.0 / 4.0).abs() < 1e-12);
        assert!(three.pass, "{three:?}");
        let seven = c_phi(&p, CPhiVariant::Seven, &b, c_tol).unwrap();
        assert!((seven.analytic_bound.unwrap() - PI * PI * 9.0 / 4.0).abs() < 1e-12);
        assert!(seven.pass);
        assert!(c_phi(&p, CPhiVariant::LiYau { alpha: 1.0 }, &b, c_tol).is_err());
        let g = grad_phi_bound_check(&p, c_tol).unwrap();
        assert!(g.pass, "{g:?}");
    }

    #[test]
    fn flat_laplacian_comparison_oracle() {
        // on the flat static torus Δρ = (n−1)/ρ, so
        // −(Δ − 2∂_t)φ = sin(πρ_t/2ρ)(π/2ρ)(n−1)/ρ_t + cos(πρ_t/2ρ) π²/4ρ²
        let m = EvolvingModel::conformal_torus(2, ScaleProfile::unit(), 0.2).unwrap();
        let g = GridSpec::for_model(&m, 128, 0.05).unwrap();
        let rho = 1.5;
        let p = CutoffProfile::build(&m, &g, &[PI, PI], rho, CutoffKind::Cosine, 3).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..g.n_nodes() {
            let d = p.distance[1][i];
            if !p.mask[1][i] || d < 0.2 {
                continue;
            }
            let s = PI * d / (2.0 * rho);
            let exact = s.sin() * PI / (2.0 * rho) / d + s.cos() * PI * PI / (4.0 * rho * rho);
            worst = worst.max((-p.heat_op[1][i] - exact).abs());
        }
        assert!(worst < 5e-3, "{worst}");
    }

    #[test]
    fn sphere_cutoff_at_pole() {
        let m = sphere();
        let g = GridSpec::for_model(&m, 128, 0.005).unwrap();
        let b = extract_bounds(&m, None).unwrap();
        let c_tol = calibrate(&m).unwrap().c_tol;
        let p = CutoffProfile::build(&m, &g, &[0.0, 0.0], 0.6, CutoffKind::Cosine, 3).unwrap();
        for v in [
            CPhiVariant::Three,
            CPhiVariant::Seven,
            CPhiVariant::LiYau { alpha: 2.0 },
        ] {
            let r = c_phi(&p, v, &b, c_tol).unwrap();
            assert!(r.pass, "{r:?}");
        }
        let gr = grad_phi_bound_check(&p, c_tol).unwrap();
        assert!(gr.pass, "{gr:?}");
        // zonal ring around the pole: |∇φ| = (π/2ρ) sin(πρ_t/2ρ)
        let j = 40;
        for i in [20, 40, 60] {
            if !p.mask[j][i] {
                continue;
            }
            let d = p.distance[j][i];
            let exact = PI / 1.2 * (PI * d / 1.2).sin();
            assert!(
                (p.grad_sq[j][i].sqrt() - exact).abs() < 5e-3,
                "{} {exact}",
                p.grad_sq[j][i].sqrt()
            );
        }
        assert!(matches!(
            CutoffProfile::build(&m, &g, &[1.0, 0.0], 0.6, CutoffKind::Cosine, 3),
            Err(Error::UnsupportedModel(_))
        ));
    }

    proptest! {
        #[test]
        fn phi_stays_in_unit_interval(a in 0.0..6.3f64, b in 0.0..6.3f64, rho in 0.1..4.0f64, t in 0.0..1.0f64) {
            let p = ScaleProfile::Sine { amplitude: 0.25, omega: 3.0 };
            let m = EvolvingModel::conformal_circle(p, 1.0).unwrap();
            let v = phi(&m, &[a], rho, &[b], t);
            prop_assert!((0.0..=1.0).contains(&v));
            if m.distance(&[a], &[b], t) >= rho {
                prop_assert_eq!(v, 0.0);
            }
            if m.distance(&[a], &[b], t) <= rho / 2.0 {
                prop_assert!(v >= 1.0 - PI / 4.0);
            }
        }
    }
}
