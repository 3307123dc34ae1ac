//! Acceptance criteria, one PASS/FAIL line each. Every tolerance and
//! runtime limit is pinned below; the process exits non-zero on any FAIL.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use harnack_lab::bounds::{
    c_phi, extract_bounds, grad_phi_bound_check, CPhiVariant, CutoffKind, CutoffProfile, KProfile,
    DEFAULT_CUT_BAND_CELLS,
};
use harnack_lab::calculus::identity_refinement;
use harnack_lab::drift::{drift_field, h_profile, FunctionalSpec};
use harnack_lab::fields::{closed_form_solution, Ball, ExactSolution, Mode, Region, ScalarField};
use harnack_lab::geometry::{EvolvingModel, ScaleProfile};
use harnack_lab::grid::GridSpec;
use harnack_lab::inequality::{
    hamilton_global, hamilton_local, liyau_local, liyau_lower_order_local, ricci_compact, ricci_compact_rhs,
    ricci_local_pair, CheckOptions, InequalityReport,
};
use harnack_lab::montecarlo::{simulate, supermartingale_test, weak_error, EnsembleSpec};
use harnack_lab::Result;

/// Tolerance constant in `τ = C_tol (h² [+ δt²])` for every check here.
const C_TOL: f64 = 1.0;
/// Criterion 1: `sup residual ≤ C_IDENTITY · h²` on every level.
const C_IDENTITY: f64 = 1.0;
const RATIO_WINDOW: (f64, f64) = (3.5, 4.5);
/// Criterion 4: relative error of `ḣ + k h = ½`.
const H_RELATION_TOL: f64 = 1e-9;
const RICCI_MASK_T_LO: f64 = 0.05;

const LIMIT_IDENTITIES: Duration = Duration::from_secs(10);
const LIMIT_RICCI: Duration = Duration::from_secs(30);
const LIMIT_LOCAL: Duration = Duration::from_secs(120);
const LIMIT_MC: Duration = Duration::from_secs(120);

type Verdict = Result<(bool, String)>;
/// Name, check and optional runtime limit.
type Criterion = (&'static str, fn() -> Verdict, Option<Duration>);

fn opts() -> CheckOptions {
    CheckOptions::new(C_TOL)
}

fn zero_violations(r: &InequalityReport) -> bool {
    r.pass && r.violations == 0 && r.checked > 0
}

fn summary(r: &InequalityReport) -> String {
    format!(
        "{} {}/{} min_slack {:.3e}",
        r.theorem.id(),
        r.violations,
        r.checked,
        r.min_slack
    )
}

fn circle() -> EvolvingModel {
    EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap()
}

fn sphere() -> EvolvingModel {
    EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap()
}

fn hyperbolic() -> EvolvingModel {
    EvolvingModel::static_hyperbolic(2, 1.0, 3.0, 1.0).unwrap()
}

fn oscillating_torus() -> EvolvingModel {
    let profile = ScaleProfile::Sine {
        amplitude: 0.25,
        omega: 1.0,
    };
    EvolvingModel::conformal_torus(2, profile, 1.0).unwrap()
}

fn circle_field(resolution: usize) -> Result<ScalarField> {
    let m = circle();
    closed_form_solution(
        &m,
        Mode::Circle { m: 1 },
        0.5,
        &GridSpec::for_model(&m, resolution, 0.01)?,
    )
}

fn sphere_field() -> Result<ScalarField> {
    let m = sphere();
    closed_form_solution(&m, Mode::Zonal { l: 1 }, 0.3, &GridSpec::for_model(&m, 64, 0.005)?)
}

fn hyperbolic_field() -> Result<ScalarField> {
    let m = hyperbolic();
    closed_form_solution(&m, Mode::Spherical { s: 0.5 }, 0.5, &GridSpec::for_model(&m, 64, 0.01)?)
}

fn torus_field() -> Result<ScalarField> {
    let m = oscillating_torus();
    closed_form_solution(
        &m,
        Mode::Torus { m1: 1, m2: 1 },
        0.4,
        &GridSpec::for_model(&m, 48, 0.01)?,
    )
}

fn identities() -> Verdict {
    let m = circle();
    let grid = GridSpec::for_model(&m, 64, 0.01)?;
    let levels = identity_refinement(&m, Mode::Circle { m: 1 }, 0.5, &grid, 3)?;
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, sups) in [
        ("first", levels.iter().map(|l| l.sup_first).collect::<Vec<_>>()),
        ("second", levels.iter().map(|l| l.sup_second).collect()),
    ] {
        let bounded = levels.iter().zip(&sups).all(|(l, s)| *s <= C_IDENTITY * l.h * l.h);
        let ratios: Vec<f64> = sups.windows(2).map(|w| w[0] / w[1]).collect();
        let in_window = ratios.iter().all(|r| (RATIO_WINDOW.0..=RATIO_WINDOW.1).contains(r));
        ok &= bounded && in_window;
        detail.push(format!("{name}: ratios {:.3}, {:.3}", ratios[0], ratios[1]));
    }
    Ok((ok, detail.join("; ")))
}

fn ricci_compact_sphere() -> Verdict {
    let f = sphere_field()?;
    let r = ricci_compact(
        &f,
        2.0,
        CheckOptions {
            t_lo: Some(RICCI_MASK_T_LO),
            ..opts()
        },
    )?;
    let last = f.grid.steps;
    let rhs_exact = ricci_compact_rhs(2, 2.0, 0.5) == 12.0
        && (0..f.grid.n_nodes()).all(|i| r.rhs_at(last, i) == 12.0)
        && f.grid.time(last) == 0.5;
    let mask_ok = (r.t_min - RICCI_MASK_T_LO).abs() < 1e-15;
    Ok((
        zero_violations(&r) && r.min_slack > 0.0 && rhs_exact && mask_ok,
        format!("{}, rhs(0.5) = 12: {rhs_exact}", summary(&r)),
    ))
}

fn hamilton_global_models() -> Verdict {
    let f = circle_field(128)?;
    let flat = hamilton_global(&f, &KProfile::constant(0.0), opts())?;
    // k ≡ 0 is the classical bound (2/t) log(‖u‖/u)
    let sup = flat.constants["sup_u"];
    let mut classical = true;
    for j in 1..f.grid.n_times() {
        let t = f.grid.time(j);
        for (i, &u) in f.values[j].iter().enumerate() {
            let want = 2.0 / t * (sup / u).ln();
            classical &= (flat.rhs_at(j, i) - want).abs() <= 1e-12 * want.abs().max(1.0);
        }
    }
    let h = hyperbolic_field()?;
    let hyp = hamilton_global(&h, &KProfile::constant(1.0), opts())?;
    let spec = FunctionalSpec::hamilton(KProfile::constant(1.0), 1.0);
    let times = h.grid.times();
    let prof = h_profile(&spec, &times)?;
    let h_closed = times
        .iter()
        .zip(&prof.h)
        .all(|(t, v)| (v - 0.5 * (1.0 - (-t).exp())).abs() <= 1e-12);
    Ok((
        zero_violations(&flat) && classical && zero_violations(&hyp) && h_closed,
        format!(
            "{}; {}; classical form {classical}, h = (1-e^-t)/2 {h_closed}",
            summary(&flat),
            summary(&hyp)
        ),
    ))
}

/// `ḣ` by Richardson-extrapolated central differences of `h`.
fn fd_h_dot(spec: &FunctionalSpec, t: f64) -> Result<f64> {
    let e = 1e-3;
    let h = |s: f64| -> Result<f64> { Ok(h_profile(spec, &[s])?.h[0]) };
    let d1 = (h(t + e)? - h(t - e)?) / (2.0 * e);
    let d2 = (h(t + 2.0 * e)? - h(t - 2.0 * e)?) / (4.0 * e);
    Ok((4.0 * d1 - d2) / 3.0)
}

fn drift_suite() -> Verdict {
    let mut ok = true;
    let mut detail = Vec::new();
    let cases: Vec<(&str, FunctionalSpec, ScalarField)> = vec![
        (
            "H circle",
            FunctionalSpec::hamilton(KProfile::constant(0.0), 1.0),
            circle_field(128)?,
        ),
        (
            "H hyperbolic",
            FunctionalSpec::hamilton(KProfile::constant(1.0), 1.0),
            hyperbolic_field()?,
        ),
        (
            "S~ torus",
            FunctionalSpec::liyau(2.0, &extract_bounds(&oscillating_torus(), None)?, 1.0)?,
            torus_field()?,
        ),
        ("S^ sphere", FunctionalSpec::ricci(2.0, 0.5), sphere_field()?),
    ];
    for (name, spec, field) in &cases {
        let r = drift_field(spec, field, C_TOL, None)?;
        ok &= r.pass && r.masked_sup <= r.tolerance.value;
        detail.push(format!("{name} {:.2e}", r.masked_sup));
    }
    let mut worst: f64 = 0.0;
    for k in [
        KProfile::constant(1.0),
        KProfile::Contraction {
            profile: ScaleProfile::Sine {
                amplitude: 0.25,
                omega: 1.0,
            },
        },
    ] {
        let spec = FunctionalSpec::hamilton(k, 7.0);
        for t in [0.5, 1.7, 3.0, 4.4, 6.5] {
            let lhs = fd_h_dot(&spec, t)? + k.value(t) * h_profile(&spec, &[t])?.h[0];
            worst = worst.max((lhs - 0.5).abs() / 0.5);
        }
    }
    ok &= worst <= H_RELATION_TOL;
    detail.push(format!("h relation rel err {worst:.1e}"));
    Ok((ok, detail.join(", ")))
}

fn cutoff_constants() -> Verdict {
    let flat = EvolvingModel::conformal_torus(2, ScaleProfile::unit(), 1.0)?;
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, model, center, grid) in [
        (
            "torus",
            flat.clone(),
            vec![PI, PI],
            GridSpec::for_model(&flat, 64, 0.01)?,
        ),
        (
            "sphere",
            sphere(),
            vec![0.0, 0.0],
            GridSpec::for_model(&sphere(), 64, 0.005)?,
        ),
    ] {
        let rho = 1.0;
        let region = Region {
            t_min: 0.0,
            t_max: model.horizon,
            ball: Some(Ball {
                center: center.clone(),
                radius: rho,
            }),
        };
        let bounds = extract_bounds(&model, Some(&region))?;
        let profile = CutoffProfile::build(&model, &grid, &center, rho, CutoffKind::Cosine, DEFAULT_CUT_BAND_CELLS)?;
        let c3 = c_phi(&profile, CPhiVariant::Three, &bounds, C_TOL)?;
        let g = grad_phi_bound_check(&profile, C_TOL)?;
        let analytic = c3.analytic_bound.unwrap_or(f64::NEG_INFINITY);
        ok &= c3.numeric_sup <= analytic + c3.tolerance.value
            && g.half_ball_violations == 0
            && g.sup_grad <= g.bound + g.tolerance.value;
        detail.push(format!(
            "{name} c3 {:.3} <= {:.3}, |grad phi| {:.3} <= {:.3}, half-ball min {:.3}",
            c3.numeric_sup, analytic, g.sup_grad, g.bound, g.half_ball_min_phi
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn local_suite() -> Verdict {
    let mut reports = Vec::new();
    for (model, field, x0, rho) in [
        (oscillating_torus(), torus_field()?, vec![PI, PI], 1.5),
        (sphere(), sphere_field()?, vec![0.0, 0.0], 1.0),
    ] {
        let region = Region {
            t_min: 0.0,
            t_max: model.horizon,
            ball: Some(Ball {
                center: x0.clone(),
                radius: rho,
            }),
        };
        let b = extract_bounds(&model, Some(&region))?;
        reports.push(hamilton_local(&field, &x0, rho, &b, opts())?);
        reports.push(liyau_local(&field, 2.0, &x0, rho, &b, opts())?);
        reports.push(liyau_lower_order_local(&field, &x0, rho, &b, opts())?);
    }
    // the Ricci-flow estimates apply to the sphere only
    let (ham, ly) = ricci_local_pair(&sphere_field()?, 2.0, &[0.0, 0.0], 1.0, 2.0, opts())?;
    reports.push(ham);
    reports.push(ly);
    let ok = reports.iter().all(zero_violations);
    let failing: Vec<String> = reports.iter().filter(|r| !zero_violations(r)).map(summary).collect();
    Ok((
        ok,
        if ok {
            format!("{} checks, zero violations", reports.len())
        } else {
            failing.join("; ")
        },
    ))
}

fn monte_carlo() -> Verdict {
    let m = circle();
    let weak = simulate(
        &m,
        &EnsembleSpec {
            t_star: 1.0,
            start: vec![0.0],
            n_paths: 10_000,
            dr: 1e-3,
            checkpoints: vec![1.0],
            seed: 7,
        },
    )?;
    let w = weak_error(&weak, &ExactSolution::new(&m, Mode::Circle { m: 1 }, 0.5)?)?;
    let we = w.weak_error.clone().expect("weak error block");
    let reference_ok = (we.reference - (-0.5f64).exp()).abs() < 1e-12;

    let f = circle_field(128)?;
    let e = simulate(
        &m,
        &EnsembleSpec {
            t_star: 1.0,
            start: vec![PI / 2.0],
            n_paths: 10_000,
            dr: 1e-3,
            checkpoints: vec![0.0, 0.25, 0.5, 0.75],
            seed: 11,
        },
    )?;
    let h = supermartingale_test(&FunctionalSpec::hamilton(KProfile::constant(0.0), 1.0), &e, &f)?;

    let s = sphere();
    let sf = sphere_field()?;
    let es = simulate(
        &s,
        &EnsembleSpec {
            t_star: 0.5,
            start: vec![1.0, 0.0],
            n_paths: 10_000,
            dr: 1e-3,
            checkpoints: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            seed: 3,
        },
    )?;
    let sh = supermartingale_test(&FunctionalSpec::ricci(2.0, 0.5), &es, &sf)?;
    Ok((
        w.pass && reference_ok && h.pass && sh.pass,
        format!(
            "weak |err| {:.2e} <= {:.2e} (ref {:.5}); H worst z {:.2}; S^ worst z {:.2}",
            we.abs_error,
            we.allowance,
            we.reference,
            h.monotonicity.as_ref().map_or(f64::NAN, |m| m.worst_drop),
            sh.monotonicity.as_ref().map_or(f64::NAN, |m| m.worst_drop)
        ),
    ))
}

fn determinism() -> Verdict {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/sphere_ricci.json");
    let dir = tempfile::tempdir()?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_harnack-lab"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()?
            .status;
        if status.code() != Some(0) {
            return Ok((false, format!("run {run} exited with {status}")));
        }
        reports.push(std::fs::read(out.join("report.json"))?);
    }
    Ok((reports[0] == reports[1], format!("{} bytes", reports[0].len())))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 identity suite (circle)", identities, Some(LIMIT_IDENTITIES)),
        ("2 ricci_compact (sphere)", ricci_compact_sphere, Some(LIMIT_RICCI)),
        ("3 hamilton_global", hamilton_global_models, None),
        ("4 drift suite", drift_suite, None),
        ("5 cutoff constants", cutoff_constants, None),
        ("6 local suite", local_suite, Some(LIMIT_LOCAL)),
        ("7 monte carlo", monte_carlo, Some(LIMIT_MC)),
        ("8 determinism", determinism, None),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let (ok, detail) = match run() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = ok && in_time;
        if !pass {
            failed += 1;
        }
        let limit_note = limit.map_or(String::new(), |l| format!(" / limit {:.0}s", l.as_secs_f64()));
        println!(
            "{} {name}: {detail} [{:.2}s{limit_note}]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
