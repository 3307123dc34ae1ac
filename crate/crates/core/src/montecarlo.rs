//! Brownian motion of the time-reversed metrics `g_{t*−r}` and statistical
//! checks of semigroup consistency and of the supermartingale property.
//!
//! A path started at model time `t*` runs in path time `r ∈ [0, t*]` with
//! generator `½Δ_{g_{t*−r}}`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{functional_field, FunctionalSpec};
use crate::error::{Error, Result};
use crate::fields::{ExactSolution, Mode, ScalarField};
use crate::geometry::{EvolvingModel, ModelKind};
use crate::grid::{AxisKind, GridSpec};
use crate::inequality::DEFAULT_T_LO_STEPS;
use crate::quad::pairwise_sum;

pub const DEFAULT_DR: f64 = 1e-3;
/// Pole-band steps above this fraction flag a sphere run.
pub const ROTATION_FLAG_FRACTION: f64 = 0.01;
/// Standard errors allowed in every statistical verdict.
pub const SE_MULTIPLIER: f64 = 3.0;
/// `C` in the weak-error allowance `3·SE + C·δr`.
pub const WEAK_ERROR_BIAS: f64 = 1.0;
/// Largest admissible tangential step on the sphere, in radians.
const MAX_SPHERE_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub t_star: f64,
    pub start: Vec<f64>,
    pub n_paths: usize,
    pub dr: f64,
    /// Path times `r`, strictly increasing, within `[0, t*]`.
    pub checkpoints: Vec<f64>,
    pub seed: u64,
}

impl EnsembleSpec {
    fn validate(&self, model: &EvolvingModel) -> Result<()> {
        if !(self.t_star > 0.0) {
            return Err(Error::param("t_star", "must be positive"));
        }
        model.check_time(self.t_star)?;
        if self.start.len() != model.dim || self.start.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutsideChart {
                point: self.start.clone(),
                reason: format!("expected {} finite coordinates", model.dim),
            });
        }
        if self.n_paths == 0 {
            return Err(Error::param("n_paths", "must be positive"));
        }
        if !(self.dr > 0.0 && self.dr.is_finite()) {
            return Err(Error::param("dr", "must be positive"));
        }
        if self.checkpoints.is_empty() {
            return Err(Error::param("checkpoints", "need at least one"));
        }
        let increasing = self.checkpoints.windows(2).all(|w| w[1] > w[0]);
        let inside = self
            .checkpoints
            .iter()
            .all(|&r| r >= 0.0 && r <= self.t_star * (1.0 + 1e-12));
        if !increasing || !inside {
            return Err(Error::param("checkpoints", "must increase strictly within [0, t*]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub model: EvolvingModel,
    pub spec: EnsembleSpec,
    /// `positions[c][p]`: chart point of path `p` at checkpoint `c`
    /// (flat models keep unwrapped angles).
    pub positions: Vec<Vec<Vec<f64>>>,
    pub pole_band_steps: usize,
    pub total_steps: usize,
}

impl PathEnsemble {
    pub fn pole_band_fraction(&self) -> f64 {
        self.pole_band_steps as f64 / self.total_steps.max(1) as f64
    }

    /// Sphere runs spending too many steps in the pole band.
    pub fn flagged(&self) -> bool {
        self.pole_band_fraction() >= ROTATION_FLAG_FRACTION
    }
}

/// State of one path in the coordinates it is integrated in.
enum State {
    /// Chart angles, unwrapped.
    Flat(Vec<f64>),
    /// Unit vector in `R^{n+1}`.
    Sphere(Vec<f64>),
    /// Point of the unit hyperboloid `⟨y,y⟩_L = −1`.
    Hyperboloid(Vec<f64>),
}

struct Stepper<'a> {
    model: &'a EvolvingModel,
    t_star: f64,
}

impl Stepper<'_> {
    fn init(&self, x: &[f64]) -> State {
        match self.model.kind {
            ModelKind::ConformalCircle { .. } | ModelKind::ConformalTorus { .. } => State::Flat(x.to_vec()),
            ModelKind::ShrinkingSphere { .. } => State::Sphere(self.model.embed(x)),
            ModelKind::StaticHyperbolic { kappa, .. } => {
                let sk = kappa.sqrt();
                State::Hyperboloid(self.model.embed(x).iter().map(|v| v * sk).collect())
            }
        }
    }

    fn chart(&self, s: &State) -> Vec<f64> {
        match s {
            State::Flat(x) => x.clone(),
            State::Sphere(y) => self.model.chart(y),
            State::Hyperboloid(y) => {
                let ModelKind::StaticHyperbolic { kappa, .. } = self.model.kind else {
                    unreachable!()
                };
                let sk = kappa.sqrt();
                let scaled: Vec<f64> = y.iter().map(|v| v / sk).collect();
                self.model.chart(&scaled)
            }
        }
    }

    /// Advances from path time `r` to `r + dr`.
    fn step<R: Rng>(&self, s: &mut State, r: f64, dr: f64, rng: &mut R) -> Result<()> {
        let model = self.model;
        match s {
            State::Flat(x) => {
                // dξ = a(t*−r)⁻¹ dW, coefficient frozen at the left end
                let a = model.conformal_factor(self.t_star - r).sqrt();
                let scale = dr.sqrt() / a;
                for v in x.iter_mut() {
                    *v += scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            State::Sphere(y) => {
                let n = model.dim as f64;
                let c0 = model.conformal_factor(self.t_star - r);
                let c1 = model.conformal_factor((self.t_star - r - dr).max(0.0));
                if !(c0 > 0.0) {
                    return Err(Error::Collapsed {
                        t: self.t_star - r,
                        factor: c0,
                    });
                }
                // unit-sphere clock τ = ∫ c(t*−s)⁻¹ ds
                let dtau = (c1 / c0).ln() / (n - 1.0);
                if (n * dtau).sqrt() > MAX_SPHERE_STEP {
                    return Err(Error::StepTooLarge(format!(
                        "sphere step {} exceeds {MAX_SPHERE_STEP}",
                        (n * dtau).sqrt()
                    )));
                }
                let z: Vec<f64> = (0..y.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let dot: f64 = z.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                let sq = dtau.sqrt();
                for (v, zi) in y.iter_mut().zip(&z) {
                    *v += sq * (zi - dot * *v);
                }
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                y.iter_mut().for_each(|v| *v /= norm);
            }
            State::Hyperboloid(y) => {
                let ModelKind::StaticHyperbolic { kappa, .. } = model.kind else {
                    unreachable!()
                };
                // geodesic step of length |w|, w ~ N(0, κ dr I) in the frame
                // boosted from the base point
                let sd = (kappa * dr).sqrt();
                let w: Vec<f64> = (0..model.dim)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let len = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len == 0.0 {
                    return Ok(());
                }
                let y0 = y[0];
                let ybar = &y[1..];
                let yw: f64 = ybar.iter().zip(&w).map(|(a, b)| a * b).sum();
                let mut v = Vec::with_capacity(y.len());
                v.push(yw);
                v.extend(w.iter().zip(ybar).map(|(wi, yi)| wi + yw / (1.0 + y0) * yi));
                let (ch, sh) = (len.cosh(), len.sinh() / len);
                for (yi, vi) in y.iter_mut().zip(&v) {
                    *yi = ch * *yi + sh * vi;
                }
                let tail: f64 = y[1..].iter().map(|v| v * v).sum();
                y[0] = (1.0 + tail).sqrt();
            }
        }
        Ok(())
    }
}

/// Euler–Maruyama ensemble, one ChaCha8 stream per path.
pub fn simulate(model: &EvolvingModel, spec: &EnsembleSpec) -> Result<PathEnsemble> {
    spec.validate(model)?;
    let stepper = Stepper {
        model,
        t_star: spec.t_star,
    };
    // step counts per segment so every checkpoint is hit exactly
    let mut segments = Vec::with_capacity(spec.checkpoints.len());
    let mut prev = 0.0;
    for &c in &spec.checkpoints {
        let len = c - prev;
        let steps = if len > 0.0 {
            (len / spec.dr - 1e-9).ceil().max(1.0) as usize
        } else {
            0
        };
        segments.push((prev, len, steps));
        prev = c;
    }
    let steps_per_path: usize = segments.iter().map(|s| s.2).sum();
    let track_pole = !matches!(
        model.kind,
        ModelKind::ConformalCircle { .. } | ModelKind::ConformalTorus { .. }
    );
    let paths: Vec<(Vec<Vec<f64>>, usize)> = (0..spec.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(p as u64);
            let mut state = stepper.init(&spec.start);
            let mut out = Vec::with_capacity(segments.len());
            let mut pole = 0;
            for &(r0, len, steps) in &segments {
                for k in 0..steps {
                    let h = len / steps as f64;
                    stepper.step(&mut state, r0 + k as f64 * h, h, &mut rng)?;
                    if track_pole && model.in_pole_band(&stepper.chart(&state)) {
                        pole += 1;
                    }
                }
                out.push(stepper.chart(&state));
            }
            Ok((out, pole))
        })
        .collect::<Result<_>>()?;
    let pole_band_steps = paths.iter().map(|p| p.1).sum();
    let positions = (0..spec.checkpoints.len())
        .map(|c| paths.iter().map(|p| p.0[c].clone()).collect())
        .collect();
    Ok(PathEnsemble {
        model: model.clone(),
        spec: spec.clone(),
        positions,
        pole_band_steps,
        total_steps: steps_per_path * spec.n_paths,
    })
}

/// Sample mean and standard error with pairwise summation.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointStat {
    pub r: f64,
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakError {
    pub mean: f64,
    pub se: f64,
    pub reference: f64,
    pub abs_error: f64,
    pub allowance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Monotonicity {
    /// `(mean_i − mean_{i+1}) / √(se_i² + se_{i+1}²)` per consecutive pair.
    pub z_scores: Vec<f64>,
    pub worst_drop: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub test: String,
    pub n_paths: usize,
    pub dr: f64,
    pub seed: u64,
    pub checkpoints: Vec<CheckpointStat>,
    pub weak_error: Option<WeakError>,
    pub monotonicity: Option<Monotonicity>,
    pub pole_band_fraction: f64,
    pub flagged: bool,
    pub pass: bool,
}

impl McReport {
    /// Rows `r, t, mean, se`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "t", "mean", "se"])?;
        for c in &self.checkpoints {
            wr.write_record([c.r, c.t, c.mean, c.se].map(|v| v.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn observable(sol: &ExactSolution, x: &[f64]) -> f64 {
    match sol.mode {
        Mode::Constant => 1.0,
        _ => sol.shape(x),
    }
}

/// `E f(ξ_r) = (heat flow of f from t* − r to t*)(x)` for `f` the mode's
/// eigenfunction (or `f ≡ 1`), checked at every checkpoint; the verdict
/// uses the last one.
pub fn weak_error(ensemble: &PathEnsemble, sol: &ExactSolution) -> Result<McReport> {
    if sol.model != ensemble.model {
        return Err(Error::param("observable", "model differs from the ensemble's"));
    }
    let spec = &ensemble.spec;
    let mut stats = Vec::with_capacity(spec.checkpoints.len());
    for (c, &r) in spec.checkpoints.iter().enumerate() {
        let vals: Vec<f64> = ensemble.positions[c].iter().map(|x| observable(sol, x)).collect();
        let (mean, se) = mean_se(&vals);
        stats.push(CheckpointStat {
            r,
            t: spec.t_star - r,
            mean,
            se,
        });
    }
    let last = stats.last().expect("validated non-empty");
    let decay = sol.decay_exponent(spec.t_star) - sol.decay_exponent(spec.t_star - last.r);
    let reference = observable(sol, &spec.start) * (-decay).exp();
    let abs_error = (last.mean - reference).abs();
    let allowance = SE_MULTIPLIER * last.se + WEAK_ERROR_BIAS * spec.dr;
    let weak = WeakError {
        mean: last.mean,
        se: last.se,
        reference,
        abs_error,
        allowance,
        pass: abs_error <= allowance,
    };
    Ok(McReport {
        test: "weak_error".into(),
        n_paths: spec.n_paths,
        dr: spec.dr,
        seed: spec.seed,
        pass: weak.pass,
        checkpoints: stats,
        weak_error: Some(weak),
        monotonicity: None,
        pole_band_fraction: ensemble.pole_band_fraction(),
        flagged: ensemble.flagged(),
    })
}

/// Multilinear interpolation of a grid function in space and time. Periodic
/// axes wrap; cell-centred axes clamp to their range of defined nodes.
pub struct GridInterpolator<'a> {
    grid: &'a GridSpec,
    values: &'a [Vec<f64>],
    /// Defined index range per axis.
    ranges: Vec<(usize, usize)>,
}

impl<'a> GridInterpolator<'a> {
    pub fn new(grid: &'a GridSpec, values: &'a [Vec<f64>]) -> Result<Self> {
        let ranges = grid
            .axes
            .iter()
            .enumerate()
            .map(|(k, a)| match a.kind {
                AxisKind::Periodic => Ok((0, a.n - 1)),
                AxisKind::CellCentered => {
                    // nodes whose whole line (other indices, all times) is defined
                    let defined = |i: usize| {
                        values.iter().all(|row| {
                            row.iter()
                                .enumerate()
                                .all(|(node, v)| grid.index(node)[k] != i || v.is_finite())
                        })
                    };
                    let lo = (0..a.n).find(|&i| defined(i));
                    let hi = (0..a.n).rev().find(|&i| defined(i));
                    match (lo, hi) {
                        (Some(lo), Some(hi)) => Ok((lo, hi)),
                        _ => Err(Error::EmptyRegion("interpolation axis".into())),
                    }
                }
            })
            .collect::<Result<_>>()?;
        Ok(GridInterpolator { grid, values, ranges })
    }

    /// Corner indices and weights along one axis.
    fn axis_weights(&self, k: usize, x: f64) -> [(usize, f64); 2] {
        let a = &self.grid.axes[k];
        let h = a.spacing();
        match a.kind {
            AxisKind::Periodic => {
                let s = (x - a.lo).rem_euclid(a.hi - a.lo) / h;
                let i0 = (s.floor() as usize) % a.n;
                let w = s - s.floor();
                [(i0, 1.0 - w), ((i0 + 1) % a.n, w)]
            }
            AxisKind::CellCentered => {
                let (lo, hi) = self.ranges[k];
                let s = ((x - a.lo) / h - 0.5).clamp(lo as f64, hi as f64);
                let i0 = (s.floor() as usize).min(hi.saturating_sub(1)).max(lo);
                let i1 = (i0 + 1).min(hi);
                let w = if i1 == i0 { 0.0 } else { s - i0 as f64 };
                [(i0, 1.0 - w), (i1, w)]
            }
        }
    }

    fn spatial(&self, j: usize, x: &[f64]) -> f64 {
        let weights: Vec<[(usize, f64); 2]> = (0..self.grid.axes.len()).map(|k| self.axis_weights(k, x[k])).collect();
        let corners = 1usize << weights.len();
        let mut acc = 0.0;
        let mut idx = vec![0; weights.len()];
        for mask in 0..corners {
            let mut w = 1.0;
            for (k, wk) in weights.iter().enumerate() {
                let (i, wi) = wk[(mask >> k) & 1];
                idx[k] = i;
                w *= wi;
            }
            if w != 0.0 {
                acc += w * self.values[j][self.grid.flat(&idx)];
            }
        }
        acc
    }

    /// Value at chart point `x` (extra fixed coordinates ignored) and time `t`.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        let g = self.grid;
        let s = ((t - g.t_lo) / g.dt()).clamp(0.0, g.steps as f64);
        let j0 = (s.floor() as usize).min(g.steps.saturating_sub(1));
        let w = s - j0 as f64;
        let v0 = self.spatial(j0, x);
        if w == 0.0 {
            return v0;
        }
        (1.0 - w) * v0 + w * self.spatial(j0 + 1, x)
    }
}

/// Sample means of `N_r = Φ(ξ_r, t* − r)` must not decrease in `r` by more
/// than `3·√(se_i² + se_{i+1}²)` between consecutive checkpoints.
pub fn supermartingale_test(spec: &FunctionalSpec, ensemble: &PathEnsemble, field: &ScalarField) -> Result<McReport> {
    if field.model != ensemble.model {
        return Err(Error::param("field", "model differs from the ensemble's"));
    }
    let es = &ensemble.spec;
    let t_lo = DEFAULT_T_LO_STEPS * field.grid.dt();
    if let Some(&r) = es.checkpoints.iter().find(|&&r| es.t_star - r <= t_lo) {
        return Err(Error::param(
            "checkpoints",
            format!("checkpoint r = {r} maps to t = {} ≤ t_lo = {t_lo}", es.t_star - r),
        ));
    }
    if es.t_star > field.grid.t_hi * (1.0 + 1e-12) {
        return Err(Error::param("t_star", "beyond the field's grid"));
    }
    let phi = functional_field(spec, field)?;
    let interp = GridInterpolator::new(&field.grid, &phi)?;
    let stats: Vec<CheckpointStat> = es
        .checkpoints
        .iter()
        .enumerate()
        .map(|(c, &r)| {
            let t = es.t_star - r;
            let vals: Vec<f64> = ensemble.positions[c].iter().map(|x| interp.eval(x, t)).collect();
            let (mean, se) = mean_se(&vals);
            CheckpointStat { r, t, mean, se }
        })
        .collect();
    let mut z_scores = Vec::new();
    let mut worst_drop = f64::NEG_INFINITY;
    let mut pass = true;
    for w in stats.windows(2) {
        let drop = w[0].mean - w[1].mean;
        let se = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
        worst_drop = worst_drop.max(drop);
        let scale = 1e-12 * (1.0 + w[0].mean.abs());
        z_scores.push(if se > 0.0 { drop / se } else { 0.0 });
        if drop > SE_MULTIPLIER * se + scale {
            pass = false;
        }
    }
    let mono = Monotonicity {
        z_scores,
        worst_drop: if stats.len() > 1 { worst_drop } else { 0.0 },
        pass,
    };
    Ok(McReport {
        test: format!("supermartingale_{}", spec.kind.id()),
        n_paths: es.n_paths,
        dr: es.dr,
        seed: es.seed,
        checkpoints: stats,
        weak_error: None,
        pass: mono.pass,
        monotonicity: Some(mono),
        pole_band_fraction: ensemble.pole_band_fraction(),
        flagged: ensemble.flagged(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::KProfile;
    use crate::fields::closed_form_solution;
    use crate::geometry::ScaleProfile;
    use std::f64::consts::PI;

    fn circle() -> EvolvingModel {
        EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap()
    }

    fn spec(start: Vec<f64>, n: usize, checkpoints: Vec<f64>) -> EnsembleSpec {
        EnsembleSpec {
            t_star: 1.0,
            start,
            n_paths: n,
            dr: 1e-2,
            checkpoints,
            seed: 7,
        }
    }

    #[test]
    fn circle_variance_is_path_time() {
        let e = simulate(&circle(), &spec(vec![0.0], 4000, vec![0.5, 1.0])).unwrap();
        for (c, &r) in e.spec.checkpoints.iter().enumerate() {
            let sq: Vec<f64> = e.positions[c].iter().map(|x| x[0] * x[0]).collect();
            let (var, se) = mean_se(&sq);
            assert!((var - r).abs() <= 3.0 * se, "r = {r}: {var} ± {se}");
        }
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let s = spec(vec![0.3], 1, vec![1.0]);
        let a = simulate(&circle(), &s).unwrap();
        let b = simulate(&circle(), &s).unwrap();
        assert_eq!(a.positions, b.positions);
        let other = simulate(&circle(), &EnsembleSpec { seed: 8, ..s }).unwrap();
        assert_ne!(a.positions, other.positions);
    }

    #[test]
    fn constant_observable_is_exact() {
        let m = circle();
        let e = simulate(&m, &spec(vec![0.0], 100, vec![1.0])).unwrap();
        let one = ExactSolution::new(&m, Mode::Constant, 0.0).unwrap();
        let r = weak_error(&e, &one).unwrap();
        let w = r.weak_error.unwrap();
        assert_eq!((w.mean, w.se, w.reference), (1.0, 0.0, 1.0));
        assert!(w.pass);
    }

    #[test]
    fn circle_cosine_weak_error() {
        let m = circle();
        let e = simulate(&m, &spec(vec![0.0], 4000, vec![1.0])).unwrap();
        let sol = ExactSolution::new(&m, Mode::Circle { m: 1 }, 0.5).unwrap();
        let r = weak_error(&e, &sol).unwrap();
        let w = r.weak_error.unwrap();
        assert!((w.reference - (-0.5f64).exp()).abs() < 1e-15);
        assert!(w.pass, "{w:?}");
    }

    #[test]
    fn sphere_and_hyperbolic_weak_error() {
        let s = EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap();
        let e = simulate(
            &s,
            &EnsembleSpec {
                t_star: 0.5,
                start: vec![1.0, 0.0],
                n_paths: 3000,
                dr: 1e-2,
                checkpoints: vec![0.5],
                seed: 1,
            },
        )
        .unwrap();
        let sol = ExactSolution::new(&s, Mode::Zonal { l: 1 }, 0.3).unwrap();
        let r = weak_error(&e, &sol).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(!r.flagged);

        let h = EvolvingModel::static_hyperbolic(2, 1.0, 3.0, 1.0).unwrap();
        let e = simulate(&h, &spec(vec![0.5, 0.0], 3000, vec![1.0])).unwrap();
        let sol = ExactSolution::new(&h, Mode::Spherical { s: 0.5 }, 0.5).unwrap();
        let r = weak_error(&e, &sol).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn interpolation_reproduces_linear_data() {
        let m = EvolvingModel::conformal_torus(2, ScaleProfile::unit(), 1.0).unwrap();
        let g = GridSpec::for_model(&m, 16, 0.25).unwrap();
        let pts = g.points();
        let vals: Vec<Vec<f64>> = g
            .times()
            .iter()
            .map(|&t| pts.iter().map(|x| t + x[0].cos() + x[1].sin()).collect())
            .collect();
        let it = GridInterpolator::new(&g, &vals).unwrap();
        // exact at nodes, wraps periodically
        let x = pts[37].clone();
        assert!((it.eval(&x, 0.5) - vals[2][37]).abs() < 1e-12);
        let shifted = [x[0] + 2.0 * PI, x[1] - 2.0 * PI];
        assert!((it.eval(&shifted, 0.5) - vals[2][37]).abs() < 1e-12);
        // linear in time between layers
        assert!((it.eval(&x, 0.6) - (0.1 + vals[2][37])).abs() < 1e-12);
    }

    #[test]
    fn constant_field_supermartingale_is_flat() {
        let m = circle();
        let grid = GridSpec::for_model(&m, 32, 0.01).unwrap();
        let one = closed_form_solution(&m, Mode::Constant, 0.0, &grid).unwrap();
        let e = simulate(&m, &spec(vec![PI / 2.0], 50, vec![0.0, 0.25, 0.5])).unwrap();
        let r = supermartingale_test(&FunctionalSpec::hamilton(KProfile::constant(0.0), 1.0), &e, &one).unwrap();
        assert!(r.checkpoints.iter().all(|c| c.mean == 0.0));
        assert!(r.pass);
    }

    #[test]
    fn circle_hamilton_means_nondecreasing() {
        let m = circle();
        let grid = GridSpec::for_model(&m, 128, 0.01).unwrap();
        let f = closed_form_solution(&m, Mode::Circle { m: 1 }, 0.5, &grid).unwrap();
        let e = simulate(
            &m,
            &EnsembleSpec {
                dr: 1e-3,
                ..spec(vec![PI / 2.0], 10_000, vec![0.0, 0.25, 0.5, 0.75])
            },
        )
        .unwrap();
        let r = supermartingale_test(&FunctionalSpec::hamilton(KProfile::constant(0.0), 1.0), &e, &f).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn sphere_ricci_means_nondecreasing() {
        let m = EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap();
        let grid = GridSpec::for_model(&m, 64, 0.005).unwrap();
        let f = closed_form_solution(&m, Mode::Zonal { l: 1 }, 0.3, &grid).unwrap();
        let e = simulate(
            &m,
            &EnsembleSpec {
                t_star: 0.5,
                start: vec![1.0, 0.0],
                n_paths: 10_000,
                dr: 1e-3,
                checkpoints: vec![0.0, 0.1, 0.2, 0.3, 0.4],
                seed: 3,
            },
        )
        .unwrap();
        let r = supermartingale_test(&FunctionalSpec::ricci(2.0, 0.5), &e, &f).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(!r.flagged);
    }

    #[test]
    fn late_checkpoint_rejected() {
        let m = circle();
        let grid = GridSpec::for_model(&m, 32, 0.01).unwrap();
        let one = closed_form_solution(&m, Mode::Constant, 0.0, &grid).unwrap();
        let e = simulate(&m, &spec(vec![0.0], 10, vec![1.0])).unwrap();
        assert!(supermartingale_test(&FunctionalSpec::hamilton(KProfile::constant(0.0), 1.0), &e, &one).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let m = circle();
        assert!(simulate(&m, &spec(vec![0.0], 10, vec![0.5, 0.25])).is_err());
        assert!(simulate(&m, &spec(vec![0.0], 10, vec![1.5])).is_err());
        assert!(simulate(
            &m,
            &EnsembleSpec {
                t_star: 2.0,
                ..spec(vec![0.0], 10, vec![1.0])
            }
        )
        .is_err());
    }
}
