//! Numeric cutoff constants against their analytic bounds, plus the
//! constant table, on the flat torus.

use std::f64::consts::PI;

use harnack_lab::bounds::{
    c_phi, extract_bounds, grad_phi_bound_check, CPhiVariant, CutoffKind, CutoffProfile, DEFAULT_CUT_BAND_CELLS,
};
use harnack_lab::geometry::{EvolvingModel, ScaleProfile};
use harnack_lab::grid::GridSpec;
use harnack_lab::inequality::{constant_table, Curvature};

fn main() -> harnack_lab::Result<()> {
    let model = EvolvingModel::conformal_torus(2, ScaleProfile::unit(), 1.0)?;
    let grid = GridSpec::for_model(&model, 64, 0.01)?;
    let bounds = extract_bounds(&model, None)?;
    let profile = CutoffProfile::build(
        &model,
        &grid,
        &[PI, PI],
        1.0,
        CutoffKind::Cosine,
        DEFAULT_CUT_BAND_CELLS,
    )?;
    for v in [
        CPhiVariant::Three,
        CPhiVariant::Seven,
        CPhiVariant::LiYau { alpha: 2.0 },
    ] {
        let r = c_phi(&profile, v, &bounds, 1.0)?;
        println!(
            "{:?}: numeric {:.4}  analytic {:.4}  pass {}",
            v,
            r.numeric_sup,
            r.analytic_bound.unwrap_or(f64::NAN),
            r.pass
        );
    }
    let g = grad_phi_bound_check(&profile, 1.0)?;
    println!(
        "sup |grad phi| {:.4} <= {:.4}, min phi on half ball {:.4} >= {:.4}",
        g.sup_grad, g.bound, g.half_ball_min_phi, g.half_ball_floor
    );
    for row in constant_table(2, 1.0, 2.0, &Curvature::from(&bounds), 0.0)? {
        println!("{:<30} {:>12.4}  {}", row.theorem, row.value, row.note);
    }
    Ok(())
}
