//! Sign of `(∂_t − ½Δ)Φ` for the three functionals.

use harnack_lab::bounds::{extract_bounds, KProfile};
use harnack_lab::drift::{drift_field, FunctionalSpec};
use harnack_lab::fields::{closed_form_solution, Mode};
use harnack_lab::geometry::{EvolvingModel, ScaleProfile};
use harnack_lab::grid::GridSpec;

fn main() -> harnack_lab::Result<()> {
    let circle = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0)?;
    let torus = EvolvingModel::conformal_torus(
        2,
        ScaleProfile::Sine {
            amplitude: 0.25,
            omega: 1.0,
        },
        1.0,
    )?;
    let sphere = EvolvingModel::shrinking_sphere(2, 1.0, 0.5)?;
    let cases = [
        (
            FunctionalSpec::hamilton(KProfile::constant(0.0), 1.0),
            closed_form_solution(
                &circle,
                Mode::Circle { m: 1 },
                0.5,
                &GridSpec::for_model(&circle, 128, 0.01)?,
            )?,
        ),
        (
            FunctionalSpec::liyau(2.0, &extract_bounds(&torus, None)?, 1.0)?,
            closed_form_solution(
                &torus,
                Mode::Torus { m1: 1, m2: 1 },
                0.4,
                &GridSpec::for_model(&torus, 48, 0.01)?,
            )?,
        ),
        (
            FunctionalSpec::ricci(2.0, 0.5),
            closed_form_solution(
                &sphere,
                Mode::Zonal { l: 1 },
                0.3,
                &GridSpec::for_model(&sphere, 64, 0.005)?,
            )?,
        ),
    ];
    for (spec, field) in &cases {
        let r = drift_field(spec, field, 1.0, None)?;
        println!(
            "{:<14} on {:<16} masked sup {:+.4e}  tau {:.3e}  pass {}",
            r.kind.id(),
            field.model.name(),
            r.masked_sup,
            r.tolerance.value,
            r.pass
        );
    }
    Ok(())
}
