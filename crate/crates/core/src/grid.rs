//! Space-time grids over model charts.
//!
//! At most two chart coordinates carry grid axes; the remaining ones are
//! held fixed and fields are assumed invariant along them (zonal fields on
//! the sphere, radial fields on the hyperbolic ball, fields on the first
//! two torus coordinates).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EvolvingModel, ModelKind};

pub const MIN_RESOLUTION: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    /// Nodes `lo + i h`, `h = (hi − lo)/n`, wrapping at the seam.
    Periodic,
    /// Nodes `lo + (i + ½) h`, never touching the endpoints.
    CellCentered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub kind: AxisKind,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn periodic(n: usize) -> Self {
        Axis {
            kind: AxisKind::Periodic,
            lo: 0.0,
            hi: 2.0 * PI,
            n,
        }
    }

    pub fn cell_centered(lo: f64, hi: f64, n: usize) -> Self {
        Axis {
            kind: AxisKind::CellCentered,
            lo,
            hi,
            n,
        }
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        let h = self.spacing();
        match self.kind {
            AxisKind::Periodic => self.lo + i as f64 * h,
            AxisKind::CellCentered => self.lo + (i as f64 + 0.5) * h,
        }
    }

    /// Neighbour index at offset `d`, if it exists.
    pub fn shift(&self, i: usize, d: isize) -> Option<usize> {
        let j = i as isize + d;
        match self.kind {
            AxisKind::Periodic => Some(j.rem_euclid(self.n as isize) as usize),
            AxisKind::CellCentered => (j >= 0 && j < self.n as isize).then_some(j as usize),
        }
    }

    fn refined(&self) -> Self {
        Axis {
            n: self.n * 2,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    /// Values of the chart coordinates that carry no axis.
    pub fixed: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
    pub steps: usize,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>, fixed: Vec<f64>, t_lo: f64, t_hi: f64, steps: usize) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::param("axes", "one or two spatial axes are supported"));
        }
        if let Some(a) = axes.iter().find(|a| a.n < MIN_RESOLUTION) {
            return Err(Error::GridTooCoarse(format!(
                "axis resolution {} is below {MIN_RESOLUTION}",
                a.n
            )));
        }
        if !(t_hi > t_lo) || steps == 0 {
            return Err(Error::param("time", "need t_hi > t_lo and at least one step"));
        }
        Ok(GridSpec {
            axes,
            fixed,
            t_lo,
            t_hi,
            steps,
        })
    }

    /// Default grid for a model on `[0, T]`: `resolution` cells per axis and
    /// the smallest step count with `δt ≤ dt_max`.
    pub fn for_model(model: &EvolvingModel, resolution: usize, dt_max: f64) -> Result<Self> {
        let n = model.dim;
        let (axes, fixed) = match model.kind {
            ModelKind::ConformalCircle { .. } => (vec![Axis::periodic(resolution)], vec![]),
            ModelKind::ConformalTorus { .. } => (
                vec![Axis::periodic(resolution), Axis::periodic(resolution)],
                vec![0.0; n - 2],
            ),
            ModelKind::ShrinkingSphere { .. } => {
                (vec![Axis::cell_centered(0.0, PI, resolution)], hyperspherical_rest(n))
            }
            ModelKind::StaticHyperbolic { radius, .. } => (
                vec![Axis::cell_centered(0.0, radius, resolution)],
                hyperspherical_rest(n),
            ),
        };
        let steps = (model.horizon / dt_max).ceil().max(1.0) as usize;
        GridSpec::new(axes, fixed, 0.0, model.horizon, steps)
    }

    /// The grid with every spatial spacing and the time step halved.
    pub fn refined(&self) -> Self {
        GridSpec {
            axes: self.axes.iter().map(Axis::refined).collect(),
            fixed: self.fixed.clone(),
            t_lo: self.t_lo,
            t_hi: self.t_hi,
            steps: self.steps * 2,
        }
    }

    /// Halves space only, quartering the time step (keeps `δt/h²` fixed).
    pub fn refined_parabolic(&self) -> Self {
        GridSpec {
            steps: self.steps * 4,
            ..self.refined()
        }
    }

    pub fn dt(&self) -> f64 {
        (self.t_hi - self.t_lo) / self.steps as f64
    }

    pub fn n_times(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t_hi
        } else {
            self.t_lo + j as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_times()).map(|j| self.time(j)).collect()
    }

    pub fn n_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    /// Largest chart spacing.
    pub fn h(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(0.0, f64::max)
    }

    /// Multi-index of a flat node index (first axis slowest).
    pub fn index(&self, node: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        let mut rest = node;
        for (k, a) in self.axes.iter().enumerate().rev() {
            out[k] = rest % a.n;
            rest /= a.n;
        }
        out
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.n + i)
    }

    /// Neighbour of `node` shifted by `d` along axis `k`.
    pub fn neighbor(&self, node: usize, k: usize, d: isize) -> Option<usize> {
        let mut idx = self.index(node);
        idx[k] = self.axes[k].shift(idx[k], d)?;
        Some(self.flat(&idx))
    }

    /// Full chart point of a node.
    pub fn point(&self, node: usize) -> Vec<f64> {
        let idx = self.index(node);
        let mut x: Vec<f64> = idx.iter().zip(&self.axes).map(|(&i, a)| a.node(i)).collect();
        x.extend_from_slice(&self.fixed);
        x
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.n_nodes()).map(|i| self.point(i)).collect()
    }

    pub fn check_model(&self, model: &EvolvingModel) -> Result<()> {
        if self.axes.len() + self.fixed.len() != model.dim {
            return Err(Error::param(
                "grid",
                format!(
                    "grid spans {} coordinates, model has {}",
                    self.axes.len() + self.fixed.len(),
                    model.dim
                ),
            ));
        }
        if self.t_lo < 0.0 || self.t_hi > model.horizon + 1e-12 {
            return Err(Error::TimeOutOfWindow {
                t: self.t_hi,
                horizon: model.horizon,
            });
        }
        Ok(())
    }
}

/// Fixed values for the hyperspherical angles beyond the first coordinate:
/// polar angles at the equator, longitude 0.
fn hyperspherical_rest(n: usize) -> Vec<f64> {
    let mut rest = vec![PI / 2.0; n - 1];
    if let Some(last) = rest.last_mut() {
        *last = 0.0;
    }
    rest
}
