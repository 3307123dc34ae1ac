//! Weak error on the circle and the supermartingale test on the sphere.

use harnack_lab::drift::FunctionalSpec;
use harnack_lab::fields::{closed_form_solution, ExactSolution, Mode};
use harnack_lab::geometry::{EvolvingModel, ScaleProfile};
use harnack_lab::grid::GridSpec;
use harnack_lab::montecarlo::{simulate, supermartingale_test, weak_error, EnsembleSpec};

fn main() -> harnack_lab::Result<()> {
    let circle = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0)?;
    let ens = simulate(
        &circle,
        &EnsembleSpec {
            t_star: 1.0,
            start: vec![0.0],
            n_paths: 10_000,
            dr: 1e-3,
            checkpoints: vec![0.5, 1.0],
            seed: 7,
        },
    )?;
    let r = weak_error(&ens, &ExactSolution::new(&circle, Mode::Circle { m: 1 }, 0.5)?)?;
    if let Some(w) = &r.weak_error {
        println!(
            "E cos(xi_1) = {:.5} +- {:.5}, exact {:.5}, pass {}",
            w.mean, w.se, w.reference, w.pass
        );
    }

    let sphere = EvolvingModel::shrinking_sphere(2, 1.0, 0.5)?;
    let field = closed_form_solution(
        &sphere,
        Mode::Zonal { l: 1 },
        0.3,
        &GridSpec::for_model(&sphere, 64, 0.005)?,
    )?;
    let ens = simulate(
        &sphere,
        &EnsembleSpec {
            t_star: 0.5,
            start: vec![1.0, 0.0],
            n_paths: 10_000,
            dr: 1e-3,
            checkpoints: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            seed: 3,
        },
    )?;
    let r = supermartingale_test(&FunctionalSpec::ricci(2.0, 0.5), &ens, &field)?;
    for c in &r.checkpoints {
        println!("r = {:.1}  mean {:+.5}  se {:.5}", c.r, c.mean, c.se);
    }
    println!("nondecreasing within 3 combined SEs: {}", r.pass);
    Ok(())
}
