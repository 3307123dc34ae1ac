//! Global Hamilton-type bound on the static circle (k ≡ 0) and on the
//! hyperbolic plane (k ≡ 1).

use harnack_lab::bounds::KProfile;
use harnack_lab::fields::{closed_form_solution, Mode};
use harnack_lab::geometry::{EvolvingModel, ScaleProfile};
use harnack_lab::grid::GridSpec;
use harnack_lab::inequality::{hamilton_global, CheckOptions};

fn main() -> harnack_lab::Result<()> {
    let circle = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0)?;
    let f = closed_form_solution(
        &circle,
        Mode::Circle { m: 1 },
        0.5,
        &GridSpec::for_model(&circle, 128, 0.01)?,
    )?;
    let r = hamilton_global(&f, &KProfile::constant(0.0), CheckOptions::new(1.0))?;
    println!(
        "circle:     violations {}/{}  min slack {:.4e}",
        r.violations, r.checked, r.min_slack
    );

    let hyp = EvolvingModel::static_hyperbolic(2, 1.0, 3.0, 1.0)?;
    let f = closed_form_solution(
        &hyp,
        Mode::Spherical { s: 0.5 },
        0.5,
        &GridSpec::for_model(&hyp, 64, 0.01)?,
    )?;
    let r = hamilton_global(&f, &KProfile::constant(1.0), CheckOptions::new(1.0))?;
    println!(
        "hyperbolic: violations {}/{}  min slack {:.4e}",
        r.violations, r.checked, r.min_slack
    );
    Ok(())
}
