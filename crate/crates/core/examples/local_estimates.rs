//! Local Hamilton, Li-Yau and lower-order estimates on the oscillating
//! torus with curvature constants extracted on the ball.

use std::f64::consts::PI;

use harnack_lab::bounds::extract_bounds;
use harnack_lab::fields::{closed_form_solution, Ball, Mode, Region};
use harnack_lab::geometry::{EvolvingModel, ScaleProfile};
use harnack_lab::grid::GridSpec;
use harnack_lab::inequality::{hamilton_local, liyau_local, liyau_lower_order_local, CheckOptions};

fn main() -> harnack_lab::Result<()> {
    let profile = ScaleProfile::Sine {
        amplitude: 0.25,
        omega: 1.0,
    };
    let model = EvolvingModel::conformal_torus(2, profile, 1.0)?;
    let grid = GridSpec::for_model(&model, 48, 0.01)?;
    let field = closed_form_solution(&model, Mode::Torus { m1: 1, m2: 1 }, 0.4, &grid)?;
    let (x0, rho) = ([PI, PI], 1.5);
    let region = Region {
        t_min: 0.0,
        t_max: 1.0,
        ball: Some(Ball {
            center: x0.to_vec(),
            radius: rho,
        }),
    };
    let b = extract_bounds(&model, Some(&region))?;
    println!("bounds k1 {} k2 {:.3} k3 {:.3} k4 {}", b.k1, b.k2, b.k3, b.k4);
    let opts = CheckOptions::new(1.0);
    for r in [
        hamilton_local(&field, &x0, rho, &b, opts)?,
        liyau_local(&field, 2.0, &x0, rho, &b, opts)?,
        liyau_lower_order_local(&field, &x0, rho, &b, opts)?,
    ] {
        println!(
            "{:<26} violations {}/{}  min slack {:.4e}",
            r.theorem.id(),
            r.violations,
            r.checked,
            r.min_slack
        );
    }
    Ok(())
}
