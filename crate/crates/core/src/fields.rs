//! Positive solutions of `∂_t u = ½ Δ_{g_t} u` on grids, from separable
//! closed forms or from a Crank–Nicolson method-of-lines solver.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EvolvingModel, ModelKind, ScaleProfile};
use crate::grid::{AxisKind, GridSpec};
use crate::quad;

/// Separable eigenmode `Z` of a model; exact solutions are
/// `u = 1 + ε e^{−λ(t)} Z(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// `u ≡ 1`.
    Constant,
    /// `cos(mθ)` on the circle.
    Circle { m: u32 },
    /// `cos(m1 x) cos(m2 y)` on the first two torus coordinates.
    Torus { m1: u32, m2: u32 },
    /// Normalized degree-`l` zonal harmonic on the sphere.
    Zonal { l: u32 },
    /// Radial spherical function `φ_s(√κ r)` on the hyperbolic plane,
    /// `0 < s < 1`.
    Spherical { s: f64 },
}

/// A closed-form solution evaluated pointwise.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub model: EvolvingModel,
    pub mode: Mode,
    pub amplitude: f64,
}

impl ExactSolution {
    pub fn new(model: &EvolvingModel, mode: Mode, amplitude: f64) -> Result<Self> {
        let supported = match (mode, &model.kind) {
            (Mode::Constant, _) => true,
            (Mode::Circle { .. }, ModelKind::ConformalCircle { .. }) => true,
            (Mode::Torus { .. }, ModelKind::ConformalTorus { .. }) => true,
            (Mode::Zonal { .. }, ModelKind::ShrinkingSphere { .. }) => true,
            (Mode::Spherical { .. }, ModelKind::StaticHyperbolic { .. }) => model.dim == 2,
            _ => false,
        };
        if !supported {
            return Err(Error::UnsupportedMode(format!(
                "{mode:?} on {} (n = {})",
                model.name(),
                model.dim
            )));
        }
        if !amplitude.is_finite() {
            return Err(Error::param("amplitude", "must be finite"));
        }
        match mode {
            Mode::Spherical { s } => {
                if !(s > 0.0 && s < 1.0) {
                    return Err(Error::UnsupportedMode(format!(
                        "spherical parameter s = {s} outside (0, 1)"
                    )));
                }
                if amplitude <= -1.0 {
                    return Err(Error::param("amplitude", "positivity requires ε > −1"));
                }
            }
            Mode::Constant => {}
            _ => {
                if amplitude.abs() >= 1.0 {
                    return Err(Error::param("amplitude", "positivity requires |ε| < 1"));
                }
            }
        }
        Ok(ExactSolution {
            model: model.clone(),
            mode,
            amplitude,
        })
    }

    /// Eigenvalue `μ` of `−Δ` on the reference metric.
    pub fn eigenvalue(&self) -> f64 {
        let n = self.model.dim as f64;
        match self.mode {
            Mode::Constant => 0.0,
            Mode::Circle { m } => (m * m) as f64,
            Mode::Torus { m1, m2 } => (m1 * m1 + m2 * m2) as f64,
            Mode::Zonal { l } => {
                let l = l as f64;
                l * (l + n - 1.0)
            }
            Mode::Spherical { s } => match self.model.kind {
                ModelKind::StaticHyperbolic { kappa, .. } => kappa * s * (1.0 - s),
                _ => unreachable!(),
            },
        }
    }

    /// `λ(t) = (μ/2) ∫_0^t s(r)^{-1} dr` with `s` the conformal factor.
    pub fn decay_exponent(&self, t: f64) -> f64 {
        self.decay_between(0.0, t)
    }

    fn decay_between(&self, t0: f64, t1: f64) -> f64 {
        let mu = self.eigenvalue();
        if mu == 0.0 || t1 == t0 {
            return 0.0;
        }
        match self.model.kind {
            ModelKind::ShrinkingSphere { .. } => {
                let rate = self.model.dim as f64 - 1.0;
                let c0 = self.model.conformal_factor(t0);
                let c1 = self.model.conformal_factor(t1);
                mu / (2.0 * rate) * (c0 / c1).ln()
            }
            ModelKind::ConformalCircle { profile } | ModelKind::ConformalTorus { profile } => match profile {
                ScaleProfile::Constant { a0 } => 0.5 * mu * (t1 - t0) / (a0 * a0),
                _ => {
                    let f = |r: f64| profile.value(r).powi(-2);
                    0.5 * mu * quad::integrate(&f, t0, t1, 1e-14)
                }
            },
            ModelKind::StaticHyperbolic { .. } => 0.5 * mu * (t1 - t0),
        }
    }

    /// Spatial profile `Z(x)`.
    pub fn shape(&self, x: &[f64]) -> f64 {
        match self.mode {
            Mode::Constant => 0.0,
            Mode::Circle { m } => (m as f64 * x[0]).cos(),
            Mode::Torus { m1, m2 } => (m1 as f64 * x[0]).cos() * (m2 as f64 * x[1]).cos(),
            Mode::Zonal { l } => zonal_harmonic(l, self.model.dim, x[0].cos()),
            Mode::Spherical { s } => match self.model.kind {
                ModelKind::StaticHyperbolic { kappa, .. } => spherical_function(s, kappa.sqrt() * x[0]),
                _ => unreachable!(),
            },
        }
    }

    pub fn value_with_decay(&self, x: &[f64], decay: f64) -> f64 {
        if let Mode::Constant = self.mode {
            return 1.0;
        }
        1.0 + self.amplitude * decay * self.shape(x)
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        self.value_with_decay(x, (-self.decay_exponent(t)).exp())
    }

    /// `e^{−λ(t)}` at every time of the grid, integrated incrementally.
    pub fn decays(&self, times: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(times.len());
        let mut lambda = self.decay_exponent(times[0]);
        let mut prev = times[0];
        for &t in times {
            lambda += self.decay_between(prev, t);
            prev = t;
            out.push((-lambda).exp());
        }
        out
    }
}

/// `C_l^{(n−1)/2}(z) / C_l^{(n−1)/2}(1)`.
pub fn zonal_harmonic(l: u32, n: usize, z: f64) -> f64 {
    let lam = (n as f64 - 1.0) / 2.0;
    gegenbauer(l, lam, z) / gegenbauer(l, lam, 1.0)
}

fn gegenbauer(l: u32, lam: f64, z: f64) -> f64 {
    let mut prev = 1.0;
    if l == 0 {
        return prev;
    }
    let mut cur = 2.0 * lam * z;
    for k in 1..l {
        let k = k as f64;
        let next = (2.0 * z * (k + lam) * cur - (k + 2.0 * lam - 1.0) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Spherical function of the hyperbolic plane,
/// `φ_s(ρ) = (1/2π) ∫_0^{2π} (cosh ρ − sinh ρ cos θ)^{−s} dθ`,
/// by the periodic trapezoid rule refined to machine precision.
pub fn spherical_function(s: f64, rho: f64) -> f64 {
    let sh = rho.sinh();
    let integrand = |theta: f64| {
        let half = (0.5 * theta).sin();
        let base = (-rho).exp() + 2.0 * sh * half * half;
        (-s * base.ln()).exp()
    };
    let trap = |n: usize| {
        let h = 2.0 * PI / n as f64;
        let vals: Vec<f64> = (0..n).map(|i| integrand(i as f64 * h)).collect();
        quad::pairwise_sum(&vals) / n as f64
    };
    let mut n = 64;
    let mut prev = trap(n);
    while n < 1 << 18 {
        n *= 2;
        let cur = trap(n);
        if (cur - prev).abs() <= 1e-15 * cur.abs() {
            return cur;
        }
        prev = cur;
    }
    prev
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldOrigin {
    Exact {
        mode: Mode,
        amplitude: f64,
    },
    Numeric {
        scheme: String,
        stability_ratio: f64,
        max_principle_violations: usize,
        linear_iterations: usize,
    },
}

/// Values `u(x_i, t_j)` on a space-time grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub model: EvolvingModel,
    pub grid: GridSpec,
    /// `values[j][i]` at time `t_j`, node `i`.
    pub values: Vec<Vec<f64>>,
    pub origin: FieldOrigin,
}

impl ScalarField {
    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn exact_mode(&self) -> Option<(Mode, f64)> {
        match self.origin {
            FieldOrigin::Exact { mode, amplitude } => Some((mode, amplitude)),
            FieldOrigin::Numeric { .. } => None,
        }
    }

    /// Sup-norm distance to another field on the same grid.
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_grid_csv(w, &self.grid, "u", &self.values)
    }

    pub fn to_json(&self) -> serde_json::Value {
        grid_json(&self.grid, "u", &self.values)
    }
}

/// Writes `t, x_0 … x_{n−1}, <name>` rows; undefined (NaN) values are
/// left empty.
pub fn write_grid_csv<W: Write>(w: W, grid: &GridSpec, name: &str, values: &[Vec<f64>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let dim = grid.axes.len() + grid.fixed.len();
    let mut header = vec!["t".to_string()];
    header.extend((0..dim).map(|k| format!("x{k}")));
    header.push(name.to_string());
    wr.write_record(&header)?;
    let points = grid.points();
    for (j, row) in values.iter().enumerate() {
        let t = grid.time(j);
        for (p, v) in points.iter().zip(row) {
            let mut rec = vec![t.to_string()];
            rec.extend(p.iter().map(|c| c.to_string()));
            rec.push(if v.is_nan() { String::new() } else { v.to_string() });
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Compact JSON grid dump: times, node coordinates and a value matrix.
pub fn grid_json(grid: &GridSpec, name: &str, values: &[Vec<f64>]) -> serde_json::Value {
    let rows: Vec<Vec<Option<f64>>> = values
        .iter()
        .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
        .collect();
    serde_json::json!({
        "name": name,
        "grid": grid,
        "times": grid.times(),
        "points": grid.points(),
        "values": rows,
    })
}

/// Samples an exact solution on a grid.
pub fn closed_form_solution(model: &EvolvingModel, mode: Mode, amplitude: f64, grid: &GridSpec) -> Result<ScalarField> {
    grid.check_model(model)?;
    let sol = ExactSolution::new(model, mode, amplitude)?;
    let times = grid.times();
    for &t in &times {
        model.check_time(t)?;
    }
    let points = grid.points();
    let decays = sol.decays(&times);
    let values: Vec<Vec<f64>> = decays
        .iter()
        .map(|&d| points.iter().map(|x| sol.value_with_decay(x, d)).collect())
        .collect();
    if let Some((j, i, v)) = first_nonpositive(&values) {
        return Err(Error::PositivityLoss {
            node: i,
            t: times[j],
            x: points[i].clone(),
            value: v,
        });
    }
    Ok(ScalarField {
        model: model.clone(),
        grid: grid.clone(),
        values,
        origin: FieldOrigin::Exact { mode, amplitude },
    })
}

fn first_nonpositive(values: &[Vec<f64>]) -> Option<(usize, usize, f64)> {
    for (j, row) in values.iter().enumerate() {
        if let Some((i, &v)) = row.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Some((j, i, v));
        }
    }
    None
}

/// Reference Laplacian `L` with `Δ_{g_t} = L / s(t)`, in flux form
/// `L u_i = Σ_j c_ij (u_j − u_i) / w_i` with symmetric `c_ij`.
struct Stencil {
    weight: Vec<f64>,
    links: Vec<Vec<(usize, f64)>>,
}

impl Stencil {
    fn build(model: &EvolvingModel, grid: &GridSpec) -> Result<Self> {
        let nn = grid.n_nodes();
        let mut links = vec![Vec::new(); nn];
        let mut weight = vec![1.0; nn];
        match model.kind {
            ModelKind::ConformalCircle { .. } | ModelKind::ConformalTorus { .. } => {
                if grid.axes.iter().any(|a| a.kind != AxisKind::Periodic) {
                    return Err(Error::param("grid", "flat models need periodic axes"));
                }
                for i in 0..nn {
                    for (k, a) in grid.axes.iter().enumerate() {
                        let c = 1.0 / (a.spacing() * a.spacing());
                        for d in [-1, 1] {
                            let j = grid.neighbor(i, k, d).expect("periodic neighbour");
                            links[i].push((j, c));
                        }
                    }
                }
            }
            ModelKind::ShrinkingSphere { .. } | ModelKind::StaticHyperbolic { .. } => {
                if grid.axes.len() != 1 || grid.axes[0].kind != AxisKind::CellCentered {
                    return Err(Error::UnsupportedModel(
                        "the solver handles zonal/radial fields on a single cell-centred axis".into(),
                    ));
                }
                let axis = &grid.axes[0];
                let h = axis.spacing();
                let p = model.dim as i32 - 1;
                let warp = |r: f64| match model.kind {
                    ModelKind::ShrinkingSphere { .. } => r.sin(),
                    ModelKind::StaticHyperbolic { kappa, .. } => (kappa.sqrt() * r).sinh() / kappa.sqrt(),
                    _ => unreachable!(),
                };
                for i in 0..nn {
                    weight[i] = warp(axis.node(i)).powi(p);
                    // zero flux through the pole, the antipode and the chart rim
                    if i > 0 {
                        let face = axis.lo + i as f64 * h;
                        links[i].push((i - 1, warp(face).powi(p) / (h * h)));
                    }
                    if i + 1 < nn {
                        let face = axis.lo + (i + 1) as f64 * h;
                        links[i].push((i + 1, warp(face).powi(p) / (h * h)));
                    }
                }
            }
        }
        Ok(Stencil { weight, links })
    }

    /// `max_i Σ_j c_ij / w_i`, the diagonal magnitude of `L`.
    fn max_diag(&self) -> f64 {
        self.links
            .iter()
            .zip(&self.weight)
            .map(|(l, w)| l.iter().map(|(_, c)| c).sum::<f64>() / w)
            .fold(0.0, f64::max)
    }

    /// `(W u)_i + σ Σ_j c_ij (u_i − u_j)`, i.e. `W (I − σ L) u`.
    fn apply(&self, sigma: f64, u: &[f64], out: &mut [f64]) {
        for i in 0..u.len() {
            let mut acc = self.weight[i] * u[i];
            for &(j, c) in &self.links[i] {
                acc += sigma * c * (u[i] - u[j]);
            }
            out[i] = acc;
        }
    }
}

/// Preconditioned conjugate gradients for `W (I − σ L) u = b`.
fn solve_shifted(st: &Stencil, sigma: f64, b: &[f64], x: &mut [f64]) -> Result<usize> {
    let n = b.len();
    let diag: Vec<f64> = (0..n)
        .map(|i| st.weight[i] + sigma * st.links[i].iter().map(|(_, c)| c).sum::<f64>())
        .collect();
    let mut ax = vec![0.0; n];
    st.apply(sigma, x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let max_iter = 10 * n + 100;
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= 1e-14 * bnorm {
            return Ok(it);
        }
        st.apply(sigma, &p, &mut ap);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
    Err(Error::SolverDivergence {
        iterations: max_iter,
        residual,
    })
}

/// Stability ratio `δt · max diag|Δ_{g_t}| / 4` of the Crank–Nicolson
/// scheme; the discrete maximum principle holds when it is at most 1.
pub fn stability_ratio(model: &EvolvingModel, grid: &GridSpec) -> Result<f64> {
    let st = Stencil::build(model, grid)?;
    let dt = grid.dt();
    let smin = (0..grid.steps)
        .map(|j| model.conformal_factor(0.5 * (grid.time(j) + grid.time(j + 1))))
        .fold(f64::INFINITY, f64::min);
    Ok(dt * st.max_diag() / (4.0 * smin))
}

/// Crank–Nicolson solve of `∂_t u = ½ Δ_{g_t} u` from `initial` at the
/// first grid time, with metric coefficients frozen at each step midpoint.
pub fn solve_heat<F: Fn(&[f64]) -> f64>(model: &EvolvingModel, initial: F, grid: &GridSpec) -> Result<ScalarField> {
    grid.check_model(model)?;
    for j in 0..grid.n_times() {
        model.check_time(grid.time(j))?;
    }
    let st = Stencil::build(model, grid)?;
    let ratio = stability_ratio(model, grid)?;
    if ratio > 1.0 {
        return Err(Error::StabilityViolation { ratio });
    }
    let points = grid.points();
    let u0: Vec<f64> = points.iter().map(|x| initial(x)).collect();
    if let Some((_, i, v)) = first_nonpositive(std::slice::from_ref(&u0)) {
        return Err(Error::PositivityLoss {
            node: i,
            t: grid.time(0),
            x: points[i].clone(),
            value: v,
        });
    }

    let nn = u0.len();
    let mut values = Vec::with_capacity(grid.n_times());
    values.push(u0);
    let mut violations = 0;
    let mut iterations = 0;
    let mut rhs = vec![0.0; nn];
    for j in 0..grid.steps {
        let (t0, t1) = (grid.time(j), grid.time(j + 1));
        let s = model.conformal_factor(0.5 * (t0 + t1));
        let sigma = (t1 - t0) / (4.0 * s);
        let prev = &values[j];
        // W (I + σL) u^n
        st.apply(-sigma, prev, &mut rhs);
        let mut next = prev.clone();
        iterations += solve_shifted(&st, sigma, &rhs, &mut next)?;
        if let Some((_, i, v)) = first_nonpositive(std::slice::from_ref(&next)) {
            return Err(Error::PositivityLoss {
                node: i,
                t: t1,
                x: points[i].clone(),
                value: v,
            });
        }
        let (lo0, hi0) = min_max(prev);
        let (lo1, hi1) = min_max(&next);
        let slack = 1e-12 * hi0.abs().max(1.0);
        if lo1 < lo0 - slack || hi1 > hi0 + slack {
            violations += 1;
        }
        values.push(next);
    }
    Ok(ScalarField {
        model: model.clone(),
        grid: grid.clone(),
        values,
        origin: FieldOrigin::Numeric {
            scheme: "crank_nicolson_midpoint".into(),
            stability_ratio: ratio,
            max_principle_violations: violations,
            linear_iterations: iterations,
        },
    })
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Geodesic ball `B_ρ(x₀)` measured in `g_t` at each time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn contains(&self, model: &EvolvingModel, x: &[f64], t: f64) -> bool {
        model.distance(&self.center, x, t) <= self.radius * (1.0 + 1e-12)
    }
}

/// Space-time region `{(x, t) : t ∈ [t_min, t_max], x ∈ ball(t)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub t_min: f64,
    pub t_max: f64,
    pub ball: Option<Ball>,
}

impl Region {
    pub fn whole(grid: &GridSpec) -> Self {
        Region {
            t_min: grid.t_lo,
            t_max: grid.t_hi,
            ball: None,
        }
    }

    pub fn at_time(t: f64) -> Self {
        Region {
            t_min: t,
            t_max: t,
            ball: None,
        }
    }

    pub fn contains_time(&self, t: f64) -> bool {
        let eps = 1e-12 * self.t_max.abs().max(1.0);
        t >= self.t_min - eps && t <= self.t_max + eps
    }

    pub fn contains(&self, model: &EvolvingModel, x: &[f64], t: f64) -> bool {
        self.contains_time(t) && self.ball.as_ref().is_none_or(|b| b.contains(model, x, t))
    }
}

/// `‖u‖_region`: the maximum of `|u|` over grid nodes in the region.
pub fn sup_norm(field: &ScalarField, region: &Region) -> Result<f64> {
    let points = field.grid.points();
    let mut best: Option<f64> = None;
    for (j, row) in field.values.iter().enumerate() {
        let t = field.grid.time(j);
        if !region.contains_time(t) {
            continue;
        }
        for (x, v) in points.iter().zip(row) {
            if region.contains(&field.model, x, t) {
                best = Some(best.map_or(v.abs(), |b: f64| b.max(v.abs())));
            }
        }
    }
    best.ok_or_else(|| Error::EmptyRegion(format!("{region:?}")))
}
