//! Second-order convergence of the two identity residuals on the circle.

use harnack_lab::calculus::identity_refinement;
use harnack_lab::fields::Mode;
use harnack_lab::geometry::{EvolvingModel, ScaleProfile};
use harnack_lab::grid::GridSpec;

fn main() -> harnack_lab::Result<()> {
    let model = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0)?;
    let grid = GridSpec::for_model(&model, 32, 0.02)?;
    let levels = identity_refinement(&model, Mode::Circle { m: 1 }, 0.5, &grid, 4)?;
    for (i, l) in levels.iter().enumerate() {
        let ratios = if i == 0 {
            String::new()
        } else {
            let p = &levels[i - 1];
            format!(
                "  ratios {:.3} {:.3}",
                p.sup_first / l.sup_first,
                p.sup_second / l.sup_second
            )
        };
        println!(
            "h = {:.5}  first {:.3e}  second {:.3e}{ratios}",
            l.h, l.sup_first, l.sup_second
        );
    }
    Ok(())
}
