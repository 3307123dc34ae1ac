//! Closed-form evolving metric models.
//!
//! Every model is a one-parameter family `g_t` on a model manifold whose
//! metric is a time-dependent multiple of a fixed homogeneous metric, so
//! curvature, metric velocity and geodesic distance are all analytic.
//!
//! Charts:
//! - `ShrinkingSphere`: hyperspherical angles `(θ_1, …, θ_n)`, colatitude
//!   first, longitude last.
//! - `ConformalCircle` / `ConformalTorus`: periodic coordinates in `[0, 2π)`.
//! - `StaticHyperbolic`: geodesic polar coordinates `(r, θ_2, …, θ_n)`
//!   around a fixed pole, `r ∈ (0, R]`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default width of the excluded band around chart poles (radians or
/// radial units).
pub const DEFAULT_POLE_BAND: f64 = 0.05;

const TIME_SLACK: f64 = 1e-12;

/// Scale profile `a(t)` of a conformally flat model `g_t = a(t)² δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleProfile {
    /// `a(t) = a0`.
    Constant { a0: f64 },
    /// `a(t) = 1 + amplitude · sin(omega · t)`.
    Sine { amplitude: f64, omega: f64 },
}

impl ScaleProfile {
    pub fn unit() -> Self {
        ScaleProfile::Constant { a0: 1.0 }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ScaleProfile::Constant { a0 } => a0,
            ScaleProfile::Sine { amplitude, omega } => 1.0 + amplitude * (omega * t).sin(),
        }
    }

    /// Time derivative `ȧ(t)`.
    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            ScaleProfile::Constant { .. } => 0.0,
            ScaleProfile::Sine { amplitude, omega } => amplitude * omega * (omega * t).cos(),
        }
    }

    /// `ȧ/a`.
    pub fn log_rate(&self, t: f64) -> f64 {
        self.rate(t) / self.value(t)
    }

    pub fn is_static(&self) -> bool {
        match *self {
            ScaleProfile::Constant { .. } => true,
            ScaleProfile::Sine { amplitude, omega } => amplitude == 0.0 || omega == 0.0,
        }
    }

    /// Times in `(t0, t1)` where `ȧ` vanishes; `ln a` is monotone between them.
    pub fn turning_points(&self, t0: f64, t1: f64) -> Vec<f64> {
        match *self {
            ScaleProfile::Sine { amplitude, omega } if amplitude != 0.0 && omega != 0.0 => {
                // ω t = π/2 + mπ
                let (s0, s1) = ordered(omega * t0, omega * t1);
                let m_lo = ((s0 - PI / 2.0) / PI).ceil() as i64;
                let m_hi = ((s1 - PI / 2.0) / PI).floor() as i64;
                let mut out: Vec<f64> = (m_lo..=m_hi)
                    .map(|m| (PI / 2.0 + m as f64 * PI) / omega)
                    .filter(|&t| t > t0.min(t1) && t < t0.max(t1))
                    .collect();
                out.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out
            }
            _ => Vec::new(),
        }
    }

    /// Range `(min, max)` of `ȧ/a` over `[t0, t1]`.
    pub fn log_rate_range(&self, t0: f64, t1: f64) -> (f64, f64) {
        let mut candidates = vec![t0, t1];
        if let ScaleProfile::Sine { amplitude, omega } = *self {
            if amplitude != 0.0 && omega != 0.0 && amplitude.abs() < 1.0 {
                // d/ds [ε ω cos s / (1 + ε sin s)] = 0  ⇔  sin s = −ε
                let base = (-amplitude).asin();
                let (s0, s1) = ordered(omega * t0, omega * t1);
                for root in [base, PI - base] {
                    let m_lo = ((s0 - root) / (2.0 * PI)).ceil() as i64;
                    let m_hi = ((s1 - root) / (2.0 * PI)).floor() as i64;
                    for m in m_lo..=m_hi {
                        candidates.push((root + 2.0 * PI * m as f64) / omega);
                    }
                }
            }
        }
        candidates
            .into_iter()
            .map(|t| self.log_rate(t))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// `∫_s^t max(0, −2ȧ/a) dr` for `s ≤ t`, in closed form.
    pub fn contraction_integral(&self, s: f64, t: f64) -> f64 {
        if t <= s || self.is_static() {
            return 0.0;
        }
        let mut knots = vec![s];
        knots.extend(self.turning_points(s, t));
        knots.push(t);
        knots
            .windows(2)
            .map(|w| {
                let drop = self.value(w[0]).ln() - self.value(w[1]).ln();
                2.0 * drop.max(0.0)
            })
            .sum()
    }

    /// First time in `[0, horizon]` at which `a(t) ≤ 0`.
    pub fn first_nonpositive(&self, horizon: f64) -> Option<f64> {
        match *self {
            ScaleProfile::Constant { a0 } => (a0 <= 0.0).then_some(0.0),
            ScaleProfile::Sine { amplitude, omega } => {
                if amplitude.abs() < 1.0 || omega == 0.0 {
                    return None;
                }
                // 1 + ε sin(ω t) = 0 first when sin(ω t) = −1/ε
                let target = -1.0 / amplitude;
                let w = omega.abs();
                let sign = omega.signum();
                let base = (sign * target).asin();
                let first = [base, PI - base]
                    .into_iter()
                    .map(|s| if s < 0.0 { s + 2.0 * PI } else { s })
                    .fold(f64::INFINITY, f64::min)
                    / w;
                (first <= horizon).then_some(first)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ScaleProfile::Constant { a0 } if !(a0 > 0.0 && a0.is_finite()) => {
                Err(Error::param("a0", "must be positive and finite"))
            }
            ScaleProfile::Sine { amplitude, omega } if !(amplitude.is_finite() && omega.is_finite()) => {
                Err(Error::param("profile", "amplitude and omega must be finite"))
            }
            _ => Ok(()),
        }
    }
}

fn ordered(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Round sphere under the Ricci flow `∂_t g = −Ric`: `g_t = c(t) g_unit`
    /// with `c(t) = c0 − (n−1) t`.
    ShrinkingSphere { c0: f64 },
    /// `S¹` with `g_t = a(t)² dθ²`.
    ConformalCircle { profile: ScaleProfile },
    /// Flat torus `T^n` with `g_t = a(t)² δ`.
    ConformalTorus { profile: ScaleProfile },
    /// Hyperbolic space of constant curvature `−kappa`, charted on the
    /// geodesic ball of radius `radius` around a pole.
    StaticHyperbolic { kappa: f64, radius: f64 },
}

/// A closed-form metric family `(g_t)_{t ∈ [0, T]}` on a model manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolvingModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub horizon: f64,
    pub pole_band: f64,
}

/// Metric data of `g_t` at a chart point.
#[derive(Debug, Clone)]
pub struct MetricData {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub sqrt_det: f64,
    /// `Γ^i_{jk}` stored at `i·n² + j·n + k`.
    pub christoffel: Vec<f64>,
    pub ricci: DMatrix<f64>,
    pub dt_g: DMatrix<f64>,
    /// `|∇(∂_t g)|` measured in `g_t`.
    pub grad_dt_g_norm: f64,
}

impl MetricData {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    #[inline]
    pub fn gamma(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.dim();
        self.christoffel[i * n * n + j * n + k]
    }

    /// `A(X, X)` for a covariant 2-tensor `A` and a vector given by its
    /// covariant components (raised with `g^{-1}`).
    pub fn eval_on_covector(&self, a: &DMatrix<f64>, w: &[f64]) -> f64 {
        let n = self.dim();
        let raised: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| self.g_inv[(i, j)] * w[j]).sum())
            .collect();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += a[(i, j)] * raised[i] * raised[j];
            }
        }
        acc
    }

    /// `⟨A, B⟩_g = g^{ia} g^{jb} A_ij B_ab` for covariant 2-tensors.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.dim();
        let gi = &self.g_inv;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let aij = a[i * n + j];
                if aij == 0.0 {
                    continue;
                }
                for p in 0..n {
                    let gip = gi[(i, p)];
                    if gip == 0.0 {
                        continue;
                    }
                    for q in 0..n {
                        acc += aij * gip * gi[(j, q)] * b[p * n + q];
                    }
                }
            }
        }
        acc
    }

    /// `g^{ij} w_i w_j`.
    pub fn covector_norm_sq(&self, w: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.g_inv[(i, j)] * w[i] * w[j];
            }
        }
        acc
    }

    /// `g^{ij} A_ij`.
    pub fn trace(&self, a: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.g_inv[(i, j)] * a[i * n + j];
            }
        }
        acc
    }
}

/// Eigenvalues of `A` relative to `g` (roots of `det(A − λ g) = 0`).
pub fn relative_eigenvalues(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Vec<f64> {
    let chol = g.clone().cholesky().expect("metric must be positive definite");
    let l = chol.l();
    let l_inv = l.clone().try_inverse().expect("Cholesky factor is invertible");
    let m = &l_inv * a * l_inv.transpose();
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

/// Result of [`EvolvingModel::validity`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelValidity {
    pub valid: bool,
    pub first_violation: Option<f64>,
    pub message: String,
}

/// Warp function `f` of a metric `dr² + f(r)² g_{S^{n−1}}`.
#[derive(Debug, Clone, Copy)]
enum Warp {
    Sine,
    Sinh { sqrt_kappa: f64 },
}

impl Warp {
    fn value(self, r: f64) -> f64 {
        match self {
            Warp::Sine => r.sin(),
            Warp::Sinh { sqrt_kappa } => (sqrt_kappa * r).sinh() / sqrt_kappa,
        }
    }

    /// `f'/f`.
    fn log_derivative(self, r: f64) -> f64 {
        match self {
            Warp::Sine => r.cos() / r.sin(),
            Warp::Sinh { sqrt_kappa } => sqrt_kappa / (sqrt_kappa * r).tanh(),
        }
    }
}

impl EvolvingModel {
    pub fn shrinking_sphere(n: usize, c0: f64, horizon: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidModel("sphere dimension must be at least 2".into()));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::param("c0", "must be positive"));
        }
        Self::build(ModelKind::ShrinkingSphere { c0 }, n, horizon)
    }

    pub fn conformal_circle(profile: ScaleProfile, horizon: f64) -> Result<Self> {
        profile.validate()?;
        Self::build(ModelKind::ConformalCircle { profile }, 1, horizon)
    }

    pub fn conformal_torus(n: usize, profile: ScaleProfile, horizon: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidModel("torus dimension must be at least 2".into()));
        }
        profile.validate()?;
        Self::build(ModelKind::ConformalTorus { profile }, n, horizon)
    }

    pub fn static_hyperbolic(n: usize, kappa: f64, radius: f64, horizon: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidModel("hyperbolic dimension must be at least 2".into()));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::param("kappa", "must be positive"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::param("radius", "must be positive"));
        }
        Self::build(ModelKind::StaticHyperbolic { kappa, radius }, n, horizon)
    }

    fn build(kind: ModelKind, dim: usize, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("T", "horizon must be positive"));
        }
        Ok(EvolvingModel {
            kind,
            dim,
            horizon,
            pole_band: DEFAULT_POLE_BAND,
        })
    }

    pub fn with_pole_band(mut self, band: f64) -> Self {
        self.pole_band = band;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => "ShrinkingSphere",
            ModelKind::ConformalCircle { .. } => "ConformalCircle",
            ModelKind::ConformalTorus { .. } => "ConformalTorus",
            ModelKind::StaticHyperbolic { .. } => "StaticHyperbolic",
        }
    }

    /// Compact models (the hyperbolic chart is a ball in a complete
    /// noncompact space).
    pub fn is_closed(&self) -> bool {
        !matches!(self.kind, ModelKind::StaticHyperbolic { .. })
    }

    pub fn is_static(&self) -> bool {
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => false,
            ModelKind::ConformalCircle { profile } | ModelKind::ConformalTorus { profile } => profile.is_static(),
            ModelKind::StaticHyperbolic { .. } => true,
        }
    }

    /// Conformal factor `s(t)` with `g_t = s(t) · g_ref`.
    pub fn conformal_factor(&self, t: f64) -> f64 {
        match self.kind {
            ModelKind::ShrinkingSphere { c0 } => c0 - (self.dim as f64 - 1.0) * t,
            ModelKind::ConformalCircle { profile } | ModelKind::ConformalTorus { profile } => {
                let a = profile.value(t);
                a * a
            }
            ModelKind::StaticHyperbolic { .. } => 1.0,
        }
    }

    /// Rate `λ(t)` with `∂_t g_t = λ(t) g_t`.
    pub fn metric_rate(&self, t: f64) -> f64 {
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => -(self.dim as f64 - 1.0) / self.conformal_factor(t),
            ModelKind::ConformalCircle { profile } | ModelKind::ConformalTorus { profile } => 2.0 * profile.log_rate(t),
            ModelKind::StaticHyperbolic { .. } => 0.0,
        }
    }

    /// Sectional curvature of `g_t`.
    pub fn sectional_curvature(&self, t: f64) -> f64 {
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => 1.0 / self.conformal_factor(t),
            ModelKind::ConformalCircle { .. } | ModelKind::ConformalTorus { .. } => 0.0,
            ModelKind::StaticHyperbolic { kappa, .. } => -kappa,
        }
    }

    /// Ricci eigenvalue relative to `g_t` (all models are Einstein).
    pub fn ricci_eigenvalue(&self, t: f64) -> f64 {
        (self.dim as f64 - 1.0) * self.sectional_curvature(t)
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= -TIME_SLACK && t <= self.horizon + TIME_SLACK) {
            return Err(Error::TimeOutOfWindow {
                t,
                horizon: self.horizon,
            });
        }
        if let ModelKind::ShrinkingSphere { .. } = self.kind {
            let c = self.conformal_factor(t);
            if c <= 0.0 {
                return Err(Error::Collapsed { t, factor: c });
            }
        }
        if let ModelKind::ConformalCircle { profile } | ModelKind::ConformalTorus { profile } = self.kind {
            if profile.value(t) <= 0.0 {
                return Err(Error::InvalidModel(format!("scale profile nonpositive at t = {t}")));
            }
        }
        Ok(())
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        let outside = |reason: &str| Error::OutsideChart {
            point: x.to_vec(),
            reason: reason.to_string(),
        };
        if x.len() != self.dim {
            return Err(outside(&format!("expected {} coordinates", self.dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(outside("non-finite coordinate"));
        }
        let polar = |xs: &[f64]| xs.iter().all(|&a| a > 0.0 && a < PI);
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => {
                if !polar(&x[..self.dim - 1]) {
                    return Err(outside("polar angle must lie in (0, π)"));
                }
            }
            ModelKind::StaticHyperbolic { radius, .. } => {
                if !(x[0] > 0.0 && x[0] <= radius * (1.0 + 1e-12)) {
                    return Err(outside("radial coordinate must lie in (0, R]"));
                }
                if self.dim > 2 && !polar(&x[1..self.dim - 1]) {
                    return Err(outside("polar angle must lie in (0, π)"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn warp(&self) -> Option<Warp> {
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => Some(Warp::Sine),
            ModelKind::StaticHyperbolic { kappa, .. } => Some(Warp::Sinh {
                sqrt_kappa: kappa.sqrt(),
            }),
            _ => None,
        }
    }

    /// Diagonal metric components and their chart derivatives
    /// `dg[k][i] = ∂_k g_ii`.
    fn diagonal_metric(&self, x: &[f64], t: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.dim;
        let s = self.conformal_factor(t);
        let mut g = vec![s; n];
        let mut dg = vec![vec![0.0; n]; n];
        if let Some(warp) = self.warp() {
            let f = warp.value(x[0]);
            let mut prod = f * f;
            for i in 1..n {
                if i >= 2 {
                    let sm = x[i - 1].sin();
                    prod *= sm * sm;
                }
                g[i] = s * prod;
            }
            let log_f = warp.log_derivative(x[0]);
            for i in 1..n {
                dg[0][i] = g[i] * 2.0 * log_f;
                for m in 1..i {
                    dg[m][i] = g[i] * 2.0 * x[m].cos() / x[m].sin();
                }
            }
        }
        (g, dg)
    }

    /// Metric, curvature and metric velocity at `(x, t)`.
    pub fn metric_data(&self, x: &[f64], t: f64) -> Result<MetricData> {
        self.check_time(t)?;
        self.check_point(x)?;
        let n = self.dim;
        let (gd, dg) = self.diagonal_metric(x, t);

        let mut christoffel = vec![0.0; n * n * n];
        for i in 0..n {
            let half_inv = 0.5 / gd[i];
            for j in 0..n {
                for k in 0..n {
                    let mut v = 0.0;
                    if i == k {
                        v += dg[j][i];
                    }
                    if i == j {
                        v += dg[k][i];
                    }
                    if j == k {
                        v -= dg[i][j];
                    }
                    christoffel[i * n * n + j * n + k] = half_inv * v;
                }
            }
        }

        let g = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(gd.clone()));
        let g_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, gd.iter().map(|v| 1.0 / v)));
        let sqrt_det = gd.iter().product::<f64>().sqrt();
        let ricci = &g * self.ricci_eigenvalue(t);
        let dt_g = &g * self.metric_rate(t);
        Ok(MetricData {
            g,
            g_inv,
            sqrt_det,
            christoffel,
            ricci,
            dt_g,
            // ∂_t g = λ(t) g is parallel for every model
            grad_dt_g_norm: 0.0,
        })
    }

    /// `Ric_t + ∂_t g_t` in chart components.
    pub fn r_tensor(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let md = self.metric_data(x, t)?;
        Ok(md.ricci + md.dt_g)
    }

    /// Embedding of a chart point: the unit sphere `S^n ⊂ R^{n+1}` for the
    /// sphere, the hyperboloid `⟨X,X⟩_L = −1/κ` for the hyperbolic model.
    /// Flat models return the chart point itself.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => sphere_point(x),
            ModelKind::StaticHyperbolic { kappa, .. } => {
                let sk = kappa.sqrt();
                let u = sphere_point(&x[1..]);
                let mut out = Vec::with_capacity(self.dim + 1);
                out.push((sk * x[0]).cosh() / sk);
                let sh = (sk * x[0]).sinh() / sk;
                out.extend(u.iter().map(|v| v * sh));
                out
            }
            _ => x.to_vec(),
        }
    }

    /// Inverse of [`Self::embed`].
    pub fn chart(&self, y: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => sphere_angles(y),
            ModelKind::StaticHyperbolic { kappa, .. } => {
                let sk = kappa.sqrt();
                let tail = &y[1..];
                let norm = tail.iter().map(|v| v * v).sum::<f64>().sqrt();
                let r = (sk * norm).asinh() / sk;
                let mut out = Vec::with_capacity(self.dim);
                out.push(r);
                out.extend(sphere_angles(tail));
                out
            }
            _ => y.to_vec(),
        }
    }

    /// Geodesic distance `ρ_t(x0, x)`.
    pub fn distance(&self, x0: &[f64], x: &[f64], t: f64) -> f64 {
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => {
                let c = self.conformal_factor(t).max(0.0);
                c.sqrt() * sphere_angle(&sphere_point(x0), &sphere_point(x))
            }
            ModelKind::ConformalCircle { profile } | ModelKind::ConformalTorus { profile } => {
                let flat: f64 = x0
                    .iter()
                    .zip(x)
                    .map(|(a, b)| {
                        let d = wrap_angle(b - a);
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt();
                profile.value(t) * flat
            }
            ModelKind::StaticHyperbolic { kappa, .. } => {
                let a = self.embed(x0);
                let b = self.embed(x);
                let mut q = -(b[0] - a[0]).powi(2);
                for i in 1..a.len() {
                    q += (b[i] - a[i]).powi(2);
                }
                let sk = kappa.sqrt();
                2.0 / sk * (sk * q.max(0.0).sqrt() / 2.0).asinh()
            }
        }
    }

    /// Whether `x` lies in the excluded band around a chart singularity.
    pub fn in_pole_band(&self, x: &[f64]) -> bool {
        let band = self.pole_band;
        let near_pole = |a: f64| a < band || a > PI - band;
        match self.kind {
            ModelKind::ShrinkingSphere { .. } => x[..self.dim - 1].iter().any(|&a| near_pole(a)),
            ModelKind::StaticHyperbolic { .. } => {
                x[0] < band || (self.dim > 2 && x[1..self.dim - 1].iter().any(|&a| near_pole(a)))
            }
            _ => false,
        }
    }

    /// Checks the model invariants over `[0, T]`.
    pub fn validity(&self) -> ModelValidity {
        let ok = |msg: String| ModelValidity {
            valid: true,
            first_violation: None,
            message: msg,
        };
        match self.kind {
            ModelKind::ShrinkingSphere { c0 } => {
                let rate = self.dim as f64 - 1.0;
                let end = self.conformal_factor(self.horizon);
                if end > 0.0 {
                    ok(format!("c(T) = {end} > 0"))
                } else {
                    let t = c0 / rate;
                    ModelValidity {
                        valid: false,
                        first_violation: Some(t),
                        message: format!("sphere collapses at t = {t}"),
                    }
                }
            }
            ModelKind::ConformalCircle { profile } | ModelKind::ConformalTorus { profile } => {
                match profile.first_nonpositive(self.horizon) {
                    None => ok("a(t) > 0 on [0, T]".into()),
                    Some(t) => ModelValidity {
                        valid: false,
                        first_violation: Some(t),
                        message: format!("scale profile vanishes at t = {t}"),
                    },
                }
            }
            ModelKind::StaticHyperbolic { .. } => ok("static metric".into()),
        }
    }
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_angle(d: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = d.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    r
}

/// Hyperspherical angles `(θ_1, …, θ_m)` to a unit vector in `R^{m+1}`.
pub fn sphere_point(angles: &[f64]) -> Vec<f64> {
    let m = angles.len();
    let mut y = vec![0.0; m + 1];
    let mut s = 1.0;
    for (i, &a) in angles.iter().enumerate() {
        y[i] = s * a.cos();
        s *= a.sin();
    }
    y[m] = s;
    y
}

/// Inverse of [`sphere_point`]; the last angle is returned in `[0, 2π)`.
pub fn sphere_angles(y: &[f64]) -> Vec<f64> {
    let m = y.len() - 1;
    let mut out = Vec::with_capacity(m);
    for i in 0..m.saturating_sub(1) {
        let tail = y[i + 1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push(tail.atan2(y[i]));
    }
    if m >= 1 {
        out.push(y[m].atan2(y[m - 1]).rem_euclid(2.0 * PI));
    }
    out
}

/// Angle between two unit vectors, accurate near 0 and π.
pub fn sphere_angle(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x + y).powi(2)).sum::<f64>().sqrt();
    2.0 * diff.atan2(sum)
}
