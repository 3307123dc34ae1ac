//! Semimartingale functionals `Φ(x, t)` of a heat solution and the sign of
//! their drift `(∂_t − ½Δ_{g_t})Φ`.
//!
//! A process `Φ(X_{T−t}, t)` driven by `g_{T−t}`-Brownian motion has drift
//! `(∂_t − ½Δ)Φ` in `t`, so a nonpositive drift field is the pointwise form
//! of the supermartingale property.

use serde::{Deserialize, Serialize};

use crate::bounds::{certify_k, BoundSet, KProfile};
use crate::calculus::{base_mask, heat_drift, map_local, NodeRef, Tolerance};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::geometry::ModelKind;
use crate::inequality::{Curvature, DEFAULT_T_LO_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    /// `h q + u log u` with the forward profile `h = ½∫₀ᵗ e^{−∫ₛᵗ k}`.
    HHamilton,
    /// `h (q − αΔu − nβuỸ)` with `ḣ = hỸ`, `h(T) = 1`.
    STildeLiyau,
    /// `h (q − Δu − nu(c₁/t + c₂k))` on the shrinking sphere.
    SHatRicci,
}

impl FunctionalKind {
    pub fn id(self) -> &'static str {
        match self {
            FunctionalKind::HHamilton => "h_hamilton",
            FunctionalKind::STildeLiyau => "s_tilde_liyau",
            FunctionalKind::SHatRicci => "s_hat_ricci",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [
            FunctionalKind::HHamilton,
            FunctionalKind::STildeLiyau,
            FunctionalKind::SHatRicci,
        ]
        .into_iter()
        .find(|k| k.id() == s)
        .ok_or_else(|| Error::Config(format!("unknown functional `{s}`")))
    }
}

/// Parameters of one functional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalSpec {
    pub kind: FunctionalKind,
    pub alpha: f64,
    pub beta: f64,
    /// `c₁ … c₄` in the order they appear in the rate.
    pub c: [f64; 4],
    /// Lower bound of `R_t` (H) or the Ricci bound `k` as a constant (Ŝ).
    pub k: KProfile,
    pub curvature: Curvature,
    pub horizon: f64,
}

impl FunctionalSpec {
    pub fn hamilton(k: KProfile, horizon: f64) -> Self {
        FunctionalSpec {
            kind: FunctionalKind::HHamilton,
            alpha: 1.0,
            beta: 0.0,
            c: [0.0; 4],
            k,
            curvature: Curvature::default(),
            horizon,
        }
    }

    /// Global Li-Yau functional with `β = α²`, `c₁ = 2`, `c₂ = 1`, `c₃ = √2`.
    pub fn liyau(alpha: f64, bounds: &BoundSet, horizon: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must exceed 1, got {alpha}")));
        }
        Ok(FunctionalSpec {
            kind: FunctionalKind::STildeLiyau,
            alpha,
            beta: alpha * alpha,
            c: [2.0, 1.0, 2f64.sqrt(), 0.0],
            k: KProfile::constant(0.0),
            curvature: Curvature::from(bounds),
            horizon,
        })
    }

    /// Ricci-flow functional with `c₁ = 2`, `c₂ = 1`.
    pub fn ricci(k: f64, horizon: f64) -> Self {
        FunctionalSpec {
            kind: FunctionalKind::SHatRicci,
            alpha: 1.0,
            beta: 1.0,
            c: [2.0, 1.0, 0.0, 0.0],
            k: KProfile::constant(k),
            curvature: Curvature::default(),
            horizon,
        }
    }

    /// Time-independent part of the backward rate `Y(t) = c₁/t + rest`.
    fn rate_constant(&self) -> f64 {
        match self.kind {
            FunctionalKind::HHamilton => 0.0,
            FunctionalKind::STildeLiyau => {
                let cv = &self.curvature;
                self.c[1] * cv.k2.max(cv.k3) + self.c[2] * cv.k4.sqrt() + cv.k3 + (cv.k1 + cv.k4) / (self.alpha - 1.0)
            }
            FunctionalKind::SHatRicci => self.c[1] * self.k.value(0.0),
        }
    }

    /// Backward rate `Y(t)`; unused for the forward H profile.
    pub fn rate(&self, t: f64) -> f64 {
        self.c[0] / t + self.rate_constant()
    }
}

/// `h` and `ḣ` sampled at given times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HProfile {
    pub times: Vec<f64>,
    pub h: Vec<f64>,
    pub h_dot: Vec<f64>,
}

/// Samples the coefficient profile. Backward profiles solve `ḣ = hY`,
/// `h(T) = 1` in closed form `(t/T)^{c₁} e^{−C(T−t)}`; the forward H profile
/// is `½∫₀ᵗ e^{−∫ₛᵗ k}` by quadrature with `ḣ = ½ − k h`.
pub fn h_profile(spec: &FunctionalSpec, times: &[f64]) -> Result<HProfile> {
    let horizon = spec.horizon;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::NonIntegrable(format!("horizon {horizon} must be positive")));
    }
    if let Some(&t) = times.iter().find(|&&t| !(0.0..=horizon * (1.0 + 1e-12)).contains(&t)) {
        return Err(Error::TimeOutOfWindow { t, horizon });
    }
    let (h, h_dot): (Vec<f64>, Vec<f64>) = match spec.kind {
        FunctionalKind::HHamilton => times
            .iter()
            .map(|&t| {
                let h = 0.5 * spec.k.forward_weight(t);
                (h, 0.5 - spec.k.value(t) * h)
            })
            .unzip(),
        FunctionalKind::STildeLiyau | FunctionalKind::SHatRicci => {
            let c1 = spec.c[0];
            let rest = spec.rate_constant();
            if !rest.is_finite() || c1 < 1.0 {
                // c₁ ≥ 1 keeps ḣ = hY bounded at t = 0
                return Err(Error::NonIntegrable(format!("rate c₁/t + {rest} with c₁ = {c1}")));
            }
            times
                .iter()
                .map(|&t| {
                    let h = (t / horizon).powf(c1) * (-rest * (horizon - t)).exp();
                    let h_dot = if t > 0.0 {
                        h * (c1 / t + rest)
                    } else if c1 == 1.0 {
                        (-rest * horizon).exp() / horizon
                    } else {
                        0.0
                    };
                    (h, h_dot)
                })
                .unzip()
        }
    };
    Ok(HProfile {
        times: times.to_vec(),
        h,
        h_dot,
    })
}

fn check_pairing(spec: &FunctionalSpec, field: &ScalarField) -> Result<()> {
    let model = &field.model;
    if spec.horizon < field.grid.t_hi - 1e-12 {
        return Err(Error::param("T", "functional horizon ends before the field's grid"));
    }
    match spec.kind {
        FunctionalKind::HHamilton => certify_k(model, &spec.k, &field.grid),
        FunctionalKind::STildeLiyau => Ok(()),
        FunctionalKind::SHatRicci => {
            let ModelKind::ShrinkingSphere { .. } = model.kind else {
                return Err(Error::UnsupportedModel(format!(
                    "s_hat_ricci needs the shrinking sphere, got {}",
                    model.name()
                )));
            };
            let ric = model.ricci_eigenvalue(field.grid.t_hi);
            let k = spec.k.value(0.0);
            if ric > k * (1.0 + 1e-12) {
                return Err(Error::MissingCertificate(format!("Ric reaches {ric} > k = {k}")));
            }
            Ok(())
        }
    }
}

/// `Φ` on the field's grid (NaN where the spatial stencil is missing).
pub fn functional_field(spec: &FunctionalSpec, field: &ScalarField) -> Result<Vec<Vec<f64>>> {
    check_pairing(spec, field)?;
    if !(field.min_value() > 0.0) {
        return Err(Error::param("field", "must be positive"));
    }
    let prof = h_profile(spec, &field.grid.times())?;
    let n = field.model.dim as f64;
    let kind = spec.kind;
    let (alpha, beta) = (spec.alpha, spec.beta);
    Ok(map_local(&field.model, &field.grid, &field.values, |j, _, _, lq| {
        let (h, hd) = (prof.h[j], prof.h_dot[j]);
        match kind {
            FunctionalKind::HHamilton => h * lq.q + lq.u * lq.u.ln(),
            // h(q − αΔu) − nβu ḣ, i.e. h(q − αΔu − nβuY) without 0·∞ at t = 0
            FunctionalKind::STildeLiyau => h * (lq.q - alpha * lq.laplacian) - n * beta * lq.u * hd,
            FunctionalKind::SHatRicci => h * (lq.q - lq.laplacian) - n * lq.u * hd,
        }
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub kind: FunctionalKind,
    pub masked_sup: f64,
    pub worst_node: NodeRef,
    pub checked: usize,
    pub tolerance: Tolerance,
    pub t_min: f64,
    pub pass: bool,
    #[serde(skip)]
    pub phi: Vec<Vec<f64>>,
    #[serde(skip)]
    pub drift: Vec<Vec<f64>>,
    #[serde(skip)]
    pub mask: Vec<Vec<bool>>,
}

/// Builds `Φ`, differentiates it and checks `sup D[Φ] ≤ τ_drift` over
/// `t ≥ t_min` (default `4δt`) away from the pole band.
pub fn drift_field(spec: &FunctionalSpec, field: &ScalarField, c_tol: f64, t_lo: Option<f64>) -> Result<DriftReport> {
    let phi = functional_field(spec, field)?;
    let grid = &field.grid;
    let drift = heat_drift(&field.model, grid, &phi);
    let t_min = t_lo.unwrap_or(DEFAULT_T_LO_STEPS * grid.dt()).max(grid.t_lo);
    let base = base_mask(&field.model, grid, t_min, grid.t_hi);
    let mask: Vec<Vec<bool>> = base
        .iter()
        .zip(&drift)
        .map(|(m, d)| m.iter().zip(d).map(|(&on, v)| on && v.is_finite()).collect())
        .collect();
    let mut worst: Option<NodeRef> = None;
    let mut checked = 0;
    for (j, (row, mrow)) in drift.iter().zip(&mask).enumerate() {
        for (i, (&v, &on)) in row.iter().zip(mrow).enumerate() {
            if on {
                checked += 1;
                if worst.as_ref().is_none_or(|w| v > w.value) {
                    worst = Some(NodeRef::new(grid, j, i, v));
                }
            }
        }
    }
    let worst = worst.ok_or_else(|| Error::EmptyMask(spec.kind.id().into()))?;
    let tolerance = Tolerance::for_grid(c_tol, grid, true);
    Ok(DriftReport {
        kind: spec.kind,
        masked_sup: worst.value,
        pass: worst.value <= tolerance.value,
        worst_node: worst,
        checked,
        tolerance,
        t_min,
        phi,
        drift,
        mask,
    })
}

/// One inequality of the constant system with its margin `lhs − rhs ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictCondition {
    pub name: &'static str,
    pub margin: f64,
    pub holds: bool,
}

/// The four conditions
/// `(β − α/4a)c₁² ≥ βc₁`, `(β − α/4a)c₂² ≥ βc₂C`, `(β − α/4a)c₃² ≥ α/4b`,
/// `(β − α/4a)c₄² ≥ α²` for `a = b = 1/(2α)`, `β = α²`, `c₁ = 2`,
/// `c₂ = 2C`, `c₃ = 1`, `c₄ = √2`.
pub fn restrict_conditions(alpha: f64, c_phi: f64) -> Result<[RestrictCondition; 4]> {
    if !(alpha > 1.0) {
        return Err(Error::param("alpha", "must exceed 1"));
    }
    let a = 1.0 / (2.0 * alpha);
    let b = a;
    let beta = alpha * alpha;
    let (c1, c2, c3, c4) = (2.0, 2.0 * c_phi, 1.0, 2f64.sqrt());
    let lead = beta - alpha / (4.0 * a);
    let scale = beta * (1.0 + c_phi * c_phi);
    let cond = |name, margin: f64| RestrictCondition {
        name,
        margin,
        holds: margin >= -1e-12 * scale,
    };
    Ok([
        cond("c1", lead * c1 * c1 - beta * c1),
        cond("c2", lead * c2 * c2 - beta * c2 * c_phi),
        cond("c3", lead * c3 * c3 - alpha / (4.0 * b)),
        cond("c4", lead * c4 * c4 - alpha * alpha),
    ])
}
