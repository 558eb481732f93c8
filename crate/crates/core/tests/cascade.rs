use nalgebra::DVector;
use num_complex::Complex64;
use prbfn::cascade::{
    backward_reduce, forward_compose, mirror_split, stage_targets, synthesize_plan, CascadePlan,
    UnitState, MIRROR_FLAG_TOL,
};
use prbfn::optimizer::{random_beam_matrix, BeamMatrix, CMatrix};
use prbfn::seed::rng_from_seed;
use prbfn::Error;
use proptest::prelude::*;

/// Output currents rebuilt from the plan with explicit binary-tree indexing.
fn tree_compose(plan: &CascadePlan) -> CMatrix {
    let rows = plan.output_ports();
    CMatrix::from_fn(rows, plan.n_states, |r, s| {
        let mut value = Complex64::new(1.0, 0.0);
        for stage in 1..=plan.stages {
            let unit = (r >> (plan.stages - stage + 1)) + (1 << (stage - 1)) - 1;
            let branch = (r >> (plan.stages - stage)) & 1;
            let u = &plan.units[unit].states[s];
            value *= if branch == 0 {
                Complex64::from_polar(u.amp1, u.dphase)
            } else {
                Complex64::new(u.amp2, 0.0)
            };
        }
        value
    })
}

fn aligned_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..a.ncols() {
        let mut inner = Complex64::new(0.0, 0.0);
        for r in 0..a.nrows() {
            inner += a[(r, s)].conj() * b[(r, s)];
        }
        let rot = inner / inner.norm();
        let mut d = 0.0;
        for r in 0..a.nrows() {
            d += (a[(r, s)] * rot - b[(r, s)]).norm_sqr();
        }
        worst = worst.max(d.sqrt());
    }
    worst
}

fn gram_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let ga = a.adjoint() * a;
    let gb = b.adjoint() * b;
    ga.iter()
        .zip(gb.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x.norm() - y.norm()).abs()))
}

#[test]
fn round_trip_reproduces_random_designs() {
    let mut rng = rng_from_seed(11);
    for n_a in [2, 4, 8] {
        for _ in 0..20 {
            let b = random_beam_matrix(n_a, 9, &mut rng);
            let plan = synthesize_plan(&b).unwrap();
            let composed = forward_compose(&plan).unwrap();
            assert!(aligned_distance(composed.as_matrix(), b.as_matrix()) < 1e-9);
            assert!(gram_distance(composed.as_matrix(), b.as_matrix()) < 1e-9);
            assert!((tree_compose(&plan) - composed.as_matrix()).norm() < 1e-12);
        }
    }
}

#[test]
fn global_phases_restore_exact_columns() {
    let mut rng = rng_from_seed(5);
    let b = random_beam_matrix(4, 6, &mut rng);
    let plan = synthesize_plan(&b).unwrap();
    let mut composed = forward_compose(&plan).unwrap().into_matrix();
    for (s, phase) in plan.global_phases.iter().enumerate() {
        let r = Complex64::from_polar(1.0, *phase);
        composed.column_mut(s).iter_mut().for_each(|v| *v *= r);
    }
    assert!((composed - b.as_matrix()).norm() < 1e-12);
}

#[test]
fn plan_layout_for_four_ports() {
    let mut rng = rng_from_seed(2);
    let b = random_beam_matrix(4, 5, &mut rng);
    let plan = synthesize_plan(&b).unwrap();
    assert_eq!(plan.stages, 2);
    assert_eq!(plan.units.len(), 3);
    assert_eq!(plan.stage_units(1).len(), 1);
    assert_eq!(plan.stage_units(2).len(), 2);
    for unit in &plan.units {
        for s in &unit.states {
            assert!((s.amp1.hypot(s.amp2) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_sub_vector_names_stage_unit_and_state() {
    let mut m = random_beam_matrix(4, 3, &mut rng_from_seed(1)).into_matrix();
    m[(2, 1)] = Complex64::new(0.0, 0.0);
    m[(3, 1)] = Complex64::new(0.0, 0.0);
    let norm = m.column(1).norm();
    m.column_mut(1).iter_mut().for_each(|v| *v /= norm);
    let b = BeamMatrix::new(m).unwrap();
    match synthesize_plan(&b) {
        Err(Error::ZeroSubVector { stage, unit, state }) => {
            assert_eq!((stage, unit, state), (2, 2, 2))
        }
        other => panic!("expected ZeroSubVector, got {other:?}"),
    }
}

#[test]
fn non_power_of_two_rejected() {
    let b = random_beam_matrix(3, 4, &mut rng_from_seed(0));
    assert!(synthesize_plan(&b).is_err());
    assert!(stage_targets(b.as_matrix()).is_err());
}

#[test]
fn backward_reduce_checks_blocks() {
    let v = DVector::from_element(2, Complex64::new(1.0, 0.0));
    let h = CMatrix::from_element(2, 1, Complex64::new(1.0, 0.0));
    assert!(matches!(
        backward_reduce(&v, &h),
        Err(Error::NonUnitBlock { block: 1, .. })
    ));
    let short = DVector::from_element(3, Complex64::new(1.0, 0.0));
    assert!(backward_reduce(&short, &h).is_err());
}

#[test]
fn exact_mirror_is_not_flagged() {
    let mut rng = rng_from_seed(8);
    let half = random_beam_matrix(2, 6, &mut rng).into_matrix();
    let n = 6;
    let m = CMatrix::from_fn(4, n, |r, s| if r < 2 { half[(r, s)] } else { half[(r - 2, n - 1 - s)] } * 0.5f64.sqrt());
    let b = BeamMatrix::new(m).unwrap();
    let split = mirror_split(&b, 0.7).unwrap();
    assert!(split.check.residual < MIRROR_FLAG_TOL);
    assert!(!split.check.flagged);
    assert_eq!(split.routing.routes.len(), n);
    assert!((split.routing.path_loss_db - 1.4).abs() < 1e-12);
    assert_eq!(split.first.ncols() + split.second.ncols(), n);
}

#[test]
fn broken_mirror_is_flagged() {
    let b = random_beam_matrix(4, 6, &mut rng_from_seed(9));
    assert!(mirror_split(&b, 0.7).unwrap().check.flagged);
    assert!(mirror_split(&random_beam_matrix(4, 5, &mut rng_from_seed(9)), 0.7).is_err());
    assert!(mirror_split(&random_beam_matrix(2, 6, &mut rng_from_seed(9)), 0.7).is_err());
}

#[test]
fn plan_document_round_trips() {
    let b = random_beam_matrix(4, 6, &mut rng_from_seed(4));
    let plan = synthesize_plan(&b)
        .unwrap()
        .with_mirror_split(&b, 0.7)
        .unwrap();
    let text = serde_json::to_string(&plan.to_doc()).unwrap();
    let back = CascadePlan::from_doc(serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, plan);
}

proptest! {
    #[test]
    fn round_trip_property(seed in any::<u64>(), m in 1usize..4, n in 1usize..12) {
        let b = random_beam_matrix(1 << m, n, &mut rng_from_seed(seed));
        let plan = synthesize_plan(&b).unwrap();
        let composed = forward_compose(&plan).unwrap();
        prop_assert!(aligned_distance(composed.as_matrix(), b.as_matrix()) < 1e-9);
        prop_assert!(gram_distance(composed.as_matrix(), b.as_matrix()) < 1e-9);
    }

    #[test]
    fn backward_reduction_preserves_norm(seed in any::<u64>(), m in 1usize..4) {
        let b = random_beam_matrix(1 << m, 1, &mut rng_from_seed(seed));
        let col = b.as_matrix().column(0).into_owned();
        let units = stage_targets(b.as_matrix()).unwrap();
        let h = prbfn::cascade::stage_transmission(&units, 0);
        let reduced = backward_reduce(&col, &h).unwrap();
        prop_assert!((reduced.norm() - 1.0).abs() < 1e-12);
        prop_assert!((&h * reduced - col).norm() < 1e-12);
    }

    #[test]
    fn unit_state_swap_is_involution(a in 0.0f64..1.0, p in -3.1f64..3.1) {
        let u = UnitState::from_pair(Complex64::from_polar(a, p), Complex64::new((1.0 - a * a).sqrt(), 0.0));
        prop_assume!(u.is_some());
        let u = u.unwrap();
        let back = u.swapped().swapped();
        prop_assert!((back.amp1 - u.amp1).abs() < 1e-15);
        prop_assert!((back.amp2 - u.amp2).abs() < 1e-15);
        prop_assert!((back.dphase - u.dphase).abs() < 1e-12);
    }
}
