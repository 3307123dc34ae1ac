//! Crank–Nicolson solve on the oscillating torus compared with the
//! closed-form solution.

use harnack_lab::fields::{closed_form_solution, solve_heat, ExactSolution, FieldOrigin, Mode};
use harnack_lab::geometry::{EvolvingModel, ScaleProfile};
use harnack_lab::grid::GridSpec;

fn main() -> harnack_lab::Result<()> {
    let profile = ScaleProfile::Sine {
        amplitude: 0.25,
        omega: 1.0,
    };
    let model = EvolvingModel::conformal_torus(2, profile, 1.0)?;
    let mode = Mode::Torus { m1: 1, m2: 1 };
    let exact = ExactSolution::new(&model, mode, 0.4)?;
    let mut grid = GridSpec::for_model(&model, 16, 0.04)?;
    let mut previous: Option<f64> = None;
    for _ in 0..3 {
        let numeric = solve_heat(&model, |x| exact.value(x, 0.0), &grid)?;
        let reference = closed_form_solution(&model, mode, 0.4, &grid)?;
        let err = numeric.max_abs_diff(&reference);
        let violations = match numeric.origin {
            FieldOrigin::Numeric {
                max_principle_violations,
                ..
            } => max_principle_violations,
            _ => 0,
        };
        let ratio = previous.map_or(String::from("-"), |p| format!("{:.2}", p / err));
        println!(
            "h = {:.4}  dt = {:.4}  max error {err:.3e}  ratio {ratio}  max-principle violations {violations}",
            grid.h(),
            grid.dt()
        );
        previous = Some(err);
        grid = grid.refined_parabolic();
    }
    Ok(())
}
