//! Estimates for the shrinking sphere under the Ricci flow.

use harnack_lab::fields::{closed_form_solution, Mode};
use harnack_lab::geometry::EvolvingModel;
use harnack_lab::grid::GridSpec;
use harnack_lab::inequality::{bcp_rhs, ricci_compact, ricci_local_pair, CheckOptions};

fn main() -> harnack_lab::Result<()> {
    let model = EvolvingModel::shrinking_sphere(2, 1.0, 0.5)?;
    let grid = GridSpec::for_model(&model, 64, 0.005)?;
    let field = closed_form_solution(&model, Mode::Zonal { l: 1 }, 0.3, &grid)?;
    let opts = CheckOptions {
        c_tol: 1.0,
        t_lo: Some(0.05),
    };
    let r = ricci_compact(&field, 2.0, opts)?;
    println!(
        "ricci_compact: violations {}/{}  min slack {:.4}  rhs(T) {}",
        r.violations,
        r.checked,
        r.min_slack,
        r.rhs_at(grid.steps, 0)
    );
    println!("comparison 2kn + n/t at T: {}", bcp_rhs(2, 2.0, 0.5));
    let (ham, ly) = ricci_local_pair(&field, 2.0, &[0.0, 0.0], 1.0, 2.0, opts)?;
    for r in [ham, ly] {
        println!(
            "{:<22} violations {}/{}  min slack {:.4e}",
            r.theorem.id(),
            r.violations,
            r.checked,
            r.min_slack
        );
    }
    Ok(())
}
