mod common;

use common::{fd_gradient, objective_oracle};
use nalgebra::DMatrix;
use num_complex::Complex64;
use prbfn::fas::{make_target_correlation, CorrelationMatrix, FasParams};
use prbfn::optimizer::{
    gradient, multi_restart, objective, pgd_solve, project_columns, random_beam_matrix,
    relative_error, select_restart, BeamMatrix, CMatrix, PgdOptions, RestartSummary, SolveReport,
    FD_SCALE,
};
use prbfn::seed::rng_from_seed;
use proptest::prelude::*;

fn target(w: f64, n: usize) -> CorrelationMatrix {
    make_target_correlation(&FasParams::new(w, n).unwrap()).unwrap()
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    CMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

#[test]
fn objective_matches_loop_oracle() {
    for seed in 0..10 {
        let c = target(1.0, 7);
        let b = gaussian_matrix(3, 7, seed);
        let got = objective(&b, &c).unwrap();
        let want = objective_oracle(&b, c.as_matrix());
        assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..20 {
        let n = 4 + (seed as usize % 5);
        let n_a = 2 + (seed as usize % 3);
        let c = target(0.3 + 0.1 * seed as f64, n);
        let b = gaussian_matrix(n_a, n, 100 + seed);
        let g = gradient(&b, &c).unwrap();
        let fd = fd_gradient(&b, c.as_matrix(), 1e-6) * Complex64::new(FD_SCALE, 0.0);
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let err = (&g - &fd).iter().fold(0.0f64, |m, v| m.max(v.norm())) / scale;
        assert!(err < 1e-6, "seed {seed}: relative error {err}");
    }
}

#[test]
fn gradient_vanishes_at_exact_fit() {
    let c = target(0.5, 2);
    let rho = c.get(0, 1);
    let b = CMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(1.0, 0.0),
            Complex64::new(rho, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, (1.0 - rho * rho).sqrt()),
        ],
    );
    assert!(gradient(&b, &c).unwrap().norm() < 1e-10);
}

#[test]
fn two_port_problem_is_solved_exactly() {
    let c = target(0.5, 2);
    let opts = PgdOptions {
        restarts: 4,
        ..PgdOptions::default()
    };
    let report = multi_restart(&c, 2, &opts).unwrap();
    assert!(report.epsilon < 1e-6, "epsilon {}", report.epsilon);
}

#[test]
fn single_output_gives_unit_error() {
    let c = target(1.0, 10);
    let report = pgd_solve(
        &c,
        1,
        &PgdOptions {
            max_iter: 50,
            ..PgdOptions::default()
        },
        None,
    )
    .unwrap();
    assert!((report.epsilon - 1.0).abs() < 1e-12);
}

#[test]
fn identical_seed_gives_identical_result() {
    let c = target(0.5, 8);
    let opts = PgdOptions {
        restarts: 3,
        max_iter: 500,
        seed: 42,
        ..PgdOptions::default()
    };
    let a = multi_restart(&c, 2, &opts).unwrap();
    let b = multi_restart(&c, 2, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn objective_never_increases_with_small_steps() {
    let c = target(1.0, 10);
    let mut rng = rng_from_seed(3);
    let mut b = random_beam_matrix(4, 10, &mut rng);
    let mut f = objective(b.as_matrix(), &c).unwrap();
    let opts = PgdOptions {
        step: 0.01,
        max_iter: 1,
        ..PgdOptions::default()
    };
    for _ in 0..200 {
        let r = pgd_solve(&c, 4, &opts, Some(&b)).unwrap();
        assert!(r.objective <= f + 1e-12);
        f = r.objective;
        b = r.best;
    }
}

#[test]
fn restart_selection_prefers_small_spread_among_accepted() {
    let s = |objective: f64, epsilon: f64, spread: f64| RestartSummary {
        objective,
        epsilon,
        iterations: 1,
        phase_spread_rad: spread,
    };
    let c = [s(0.1, 0.009, 1.0), s(0.05, 0.005, 2.0), s(0.01, 0.02, 0.1)];
    assert_eq!(select_restart(&c, 0.01), Some(0));
    let none_ok = [s(0.3, 0.5, 0.1), s(0.2, 0.4, 3.0)];
    assert_eq!(select_restart(&none_ok, 0.01), Some(1));
    assert_eq!(select_restart(&[], 0.01), None);
}

#[test]
fn rejects_bad_options_and_shapes() {
    let c = target(1.0, 5);
    let bad = [
        PgdOptions {
            step: 0.0,
            ..PgdOptions::default()
        },
        PgdOptions {
            max_iter: 0,
            ..PgdOptions::default()
        },
        PgdOptions {
            restarts: 0,
            ..PgdOptions::default()
        },
        PgdOptions {
            accept_epsilon: f64::NAN,
            ..PgdOptions::default()
        },
    ];
    for opts in bad {
        assert!(pgd_solve(&c, 2, &opts, None).is_err());
    }
    assert!(pgd_solve(&c, 0, &PgdOptions::default(), None).is_err());
    let mut rng = rng_from_seed(0);
    let wrong = random_beam_matrix(2, 4, &mut rng);
    assert!(pgd_solve(&c, 2, &PgdOptions::default(), Some(&wrong)).is_err());
    assert!(BeamMatrix::new(CMatrix::zeros(2, 3)).is_err());
}

#[test]
fn report_document_round_trips() {
    let c = target(0.5, 6);
    let opts = PgdOptions {
        restarts: 2,
        max_iter: 300,
        ..PgdOptions::default()
    };
    let report = multi_restart(&c, 2, &opts).unwrap();
    let text = serde_json::to_string(&report.to_doc()).unwrap();
    let back = SolveReport::from_doc(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, report);
}

proptest! {
    #[test]
    fn projection_gives_unit_columns(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..12) {
        let mut m = gaussian_matrix(rows, cols, seed);
        if seed % 3 == 0 {
            m.column_mut(0).fill(Complex64::new(0.0, 0.0));
        }
        let mut rng = rng_from_seed(seed);
        let b = project_columns(m, &mut rng);
        for col in b.as_matrix().column_iter() {
            prop_assert!((col.norm() - 1.0).abs() < 1e-12);
        }
        for i in 0..cols {
            prop_assert!((b.gram_magnitude()[(i, i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..10) {
        let mut rng = rng_from_seed(seed);
        let b = random_beam_matrix(rows, cols, &mut rng);
        let again = project_columns(b.as_matrix().clone(), &mut rng);
        prop_assert!((again.as_matrix() - b.as_matrix()).norm() < 1e-12);
    }

    #[test]
    fn objective_is_invariant_to_column_phases(seed in any::<u64>(), phases in prop::collection::vec(-3.2f64..3.2, 6)) {
        let c = target(1.0, 6);
        let b = gaussian_matrix(3, 6, seed);
        let mut rotated = b.clone();
        for (k, p) in phases.iter().enumerate() {
            let r = Complex64::from_polar(1.0, *p);
            rotated.column_mut(k).iter_mut().for_each(|v| *v *= r);
        }
        let f0 = objective(&b, &c).unwrap();
        let f1 = objective(&rotated, &c).unwrap();
        prop_assert!((f0 - f1).abs() <= 1e-12 * f0.max(1.0));
    }

    #[test]
    fn relative_error_is_zero_at_target(w in 0.1f64..3.0, n in 2usize..20) {
        let c = target(w, n);
        let achieved: DMatrix<f64> = c.as_matrix().clone();
        prop_assert_eq!(relative_error(&achieved, &c).unwrap(), 0.0);
    }
}
