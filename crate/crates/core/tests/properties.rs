//! Cross-module invariants.

use std::f64::consts::PI;

use harnack_lab::bounds::{extract_bounds, CPhiVariant};
use harnack_lab::cli::{CheckConfig, GridConfig, ModelConfig, ModelName, RunConfig, SolutionConfig};
use harnack_lab::fields::{closed_form_solution, Mode};
use harnack_lab::geometry::{EvolvingModel, ScaleProfile};
use harnack_lab::grid::GridSpec;
use harnack_lab::inequality::{
    liyau_global, liyau_global_rhs, liyau_local_rhs, ricci_compact_rhs, CheckOptions, Curvature,
};
use harnack_lab::montecarlo::{simulate, EnsembleSpec, GridInterpolator};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn run_config_round_trips(
        res in 8usize..200,
        dt in 0.001f64..0.1,
        eps in -0.9f64..0.9,
        alpha in 1.01f64..10.0,
        rho in 0.1f64..2.0,
        t in 0.1f64..2.0,
    ) {
        let cfg = RunConfig {
            model: ModelConfig {
                kind: ModelName::Torus,
                n: 2,
                params: serde_json::from_str(r#"{"profile": {"kind": "sine", "amplitude": 0.25, "omega": 1.0}}"#).unwrap(),
                horizon: t,
                pole_band: None,
            },
            solution: Some(SolutionConfig::Numeric { mode: Mode::Torus { m1: 1, m2: 2 }, epsilon: eps }),
            grid: GridConfig { resolution: res, dt: Some(dt) },
            tolerance: Default::default(),
            checks: vec![CheckConfig {
                theorem: "liyau_local".into(),
                alpha: Some(alpha),
                x0: Some(vec![1.0, 2.0]),
                rho: Some(rho),
                k: None,
                cutoff: None,
                t_lo: None,
            }],
            drift: vec![],
            mc: None,
            output: Default::default(),
        };
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(&cfg, &back);
        prop_assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
    }

    #[test]
    fn right_hand_sides_decrease_in_time(
        alpha in 1.01f64..5.0,
        rho in 0.2f64..3.0,
        k1 in 0.0f64..3.0,
        k2 in 0.0f64..3.0,
        k3 in 0.0f64..3.0,
        k4 in 0.0f64..3.0,
        t in 0.01f64..5.0,
        dt in 0.001f64..1.0,
    ) {
        let c = Curvature { k1, k2, k3, k4 };
        prop_assert!(liyau_local_rhs(2, alpha, rho, &c, t + dt) <= liyau_local_rhs(2, alpha, rho, &c, t));
        prop_assert!(liyau_global_rhs(3, alpha, &c, t + dt) <= liyau_global_rhs(3, alpha, &c, t));
        prop_assert!(ricci_compact_rhs(2, k1, t + dt) <= ricci_compact_rhs(2, k1, t));
    }

    #[test]
    fn liyau_cutoff_coefficient_exceeds_three(alpha in 1.001f64..50.0, n in 1usize..6) {
        let c = CPhiVariant::LiYau { alpha }.coefficient(n).unwrap();
        prop_assert!(c > 3.0);
        prop_assert!(c >= 3.0 + 4.0 * n as f64 - 1e-9); // α²/(α−1) ≥ 4
    }

    #[test]
    fn constant_field_slack_is_rhs(alpha in 1.01f64..5.0, a0 in 0.5f64..2.0) {
        let m = EvolvingModel::conformal_torus(2, ScaleProfile::Constant { a0 }, 1.0).unwrap();
        let grid = GridSpec::for_model(&m, 8, 0.25).unwrap();
        let f = closed_form_solution(&m, Mode::Constant, 0.0, &grid).unwrap();
        let b = extract_bounds(&m, None).unwrap();
        let r = liyau_global(&f, alpha, &b, CheckOptions::new(1.0)).unwrap();
        for j in 0..grid.n_times() {
            for i in 0..grid.n_nodes() {
                if r.mask[j][i] {
                    prop_assert_eq!(r.slack[j][i], r.rhs[j][i]);
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_nodes(j in 0usize..5, i in 0usize..16) {
        let m = EvolvingModel::conformal_circle(ScaleProfile::unit(), 1.0).unwrap();
        let grid = GridSpec::for_model(&m, 16, 0.25).unwrap();
        let f = closed_form_solution(&m, Mode::Circle { m: 1 }, 0.5, &grid).unwrap();
        let it = GridInterpolator::new(&grid, &f.values).unwrap();
        let x = grid.point(i);
        prop_assert!((it.eval(&x, grid.time(j)) - f.values[j][i]).abs() < 1e-12);
        // periodic wrap
        let shifted = [x[0] + 2.0 * PI];
        prop_assert!((it.eval(&shifted, grid.time(j)) - f.values[j][i]).abs() < 1e-12);
    }

    #[test]
    fn ensembles_depend_only_on_the_seed(seed in any::<u64>()) {
        let m = EvolvingModel::shrinking_sphere(2, 1.0, 0.5).unwrap();
        let spec = EnsembleSpec {
            t_star: 0.5,
            start: vec![1.0, 0.5],
            n_paths: 16,
            dr: 0.01,
            checkpoints: vec![0.0, 0.2, 0.4],
            seed,
        };
        let a = simulate(&m, &spec).unwrap();
        let b = simulate(&m, &spec).unwrap();
        prop_assert_eq!(a.positions, b.positions);
    }
}
