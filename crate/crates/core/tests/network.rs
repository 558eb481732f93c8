mod common;

use common::{full_solve_oracle, rel_err};
use num_complex::Complex64;
use prbfn::network::{
    frequency_grid, max_singular_value, reduce_network, reduce_with_loads, reduced_scattering,
    s_to_z, surrogate_cell, z_to_s, PixelNetwork, SeriesCircuit, SurrogateParams, SwitchModel,
    SwitchState, DEFAULT_Z0,
};
use prbfn::optimizer::CMatrix;
use prbfn::seed::rng_from_seed;
use prbfn::Error;
use proptest::prelude::*;
use rand::Rng;

fn grid() -> Vec<f64> {
    frequency_grid(2.6e9, 0.05, 5).unwrap()
}

#[test]
fn reduction_matches_full_solve() {
    let sw = SwitchModel::default();
    let freqs = grid();
    let mut rng = rng_from_seed(77);
    for case in 0..100u64 {
        let q = 1 + (case as usize % 16);
        let net = surrogate_cell(&SurrogateParams::new(q), &freqs, DEFAULT_Z0, case).unwrap();
        let x = SwitchState::from_code(rng.random::<u64>(), q);
        for k in 0..freqs.len() {
            let z = reduce_network(&net, &x, &sw, k).unwrap();
            let oracle = full_solve_oracle(&net, &x, &sw, k);
            assert!(
                rel_err(&z, &oracle) < 1e-10,
                "case {case}, f {k}: {}",
                rel_err(&z, &oracle)
            );
            assert!((&z - z.transpose()).norm() <= 1e-10 * z.norm());
            let s = z_to_s(&z, DEFAULT_Z0).unwrap();
            assert!(max_singular_value(&s) <= 1.0 + 1e-10);
        }
    }
}

#[test]
fn surrogate_is_reciprocal_and_passive() {
    let net = surrogate_cell(&SurrogateParams::new(12), &grid(), DEFAULT_Z0, 3).unwrap();
    assert!(net.reciprocity_error() < 1e-12);
    net.check_reciprocal(1e-9).unwrap();
    for k in 0..net.freqs_hz().len() {
        let s = z_to_s(net.z(k), DEFAULT_Z0).unwrap();
        assert!(max_singular_value(&s) <= 0.9 + 1e-9);
    }
}

#[test]
fn surrogate_is_deterministic_and_seed_sensitive() {
    let p = SurrogateParams::new(6);
    let a = surrogate_cell(&p, &grid(), DEFAULT_Z0, 1).unwrap();
    let b = surrogate_cell(&p, &grid(), DEFAULT_Z0, 1).unwrap();
    let c = surrogate_cell(&p, &grid(), DEFAULT_Z0, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.z(0), c.z(0));
    assert!(a.source().contains("seed=1"));
}

#[test]
fn no_internal_ports_returns_feed_block() {
    let net = surrogate_cell(&SurrogateParams::new(4), &grid(), DEFAULT_Z0, 0).unwrap();
    let z = reduce_with_loads(&net, &[Complex64::new(50.0, 0.0); 4], 0, "x").unwrap();
    assert_eq!(z.shape(), (3, 3));
    assert!(reduce_with_loads(&net, &[Complex64::new(50.0, 0.0); 3], 0, "x").is_err());
    assert!(reduce_with_loads(&net, &[Complex64::new(50.0, 0.0); 4], 99, "x").is_err());
}

#[test]
fn singular_internal_block_reports_frequency_and_state() {
    let freqs = vec![1e9];
    let mut z = CMatrix::identity(4, 4) * Complex64::new(10.0, 0.0);
    z[(3, 3)] = Complex64::new(-5.0, 0.0);
    let net = PixelNetwork::new(3, freqs, vec![z], DEFAULT_Z0, "test").unwrap();
    let sw = SwitchModel {
        on: SeriesCircuit {
            resistance_ohm: 5.0,
            inductance_h: None,
            capacitance_f: None,
        },
        off: SeriesCircuit {
            resistance_ohm: 5.0,
            inductance_h: None,
            capacitance_f: None,
        },
    };
    match reduce_network(&net, &SwitchState::from_code(1, 1), &sw, 0) {
        Err(Error::SingularReduction { freq_hz, state, .. }) => {
            assert_eq!(freq_hz, 1e9);
            assert_eq!(state, "1");
        }
        other => panic!("expected SingularReduction, got {other:?}"),
    }
}

#[test]
fn network_constructor_rejects_bad_input() {
    let z = CMatrix::identity(4, 4);
    assert!(PixelNetwork::new(3, vec![2e9, 1e9], vec![z.clone(), z.clone()], 50.0, "t").is_err());
    assert!(PixelNetwork::new(3, vec![1e9], vec![z.clone(), z.clone()], 50.0, "t").is_err());
    assert!(PixelNetwork::new(3, vec![1e9], vec![CMatrix::identity(2, 2)], 50.0, "t").is_err());
    assert!(PixelNetwork::new(3, vec![1e9], vec![z], -1.0, "t").is_err());
}

#[test]
fn switch_model_values() {
    let sw = SwitchModel::default();
    let f = 2.6e9;
    let on = sw.impedance(true, f);
    let off = sw.impedance(false, f);
    assert!((on.re - 1.5).abs() < 1e-12);
    assert!((on.im - std::f64::consts::TAU * f * 0.7e-9).abs() < 1e-9);
    assert!((off.im + 1.0 / (std::f64::consts::TAU * f * 0.15e-12)).abs() < 1e-9);
    let bad = SeriesCircuit {
        resistance_ohm: -1.0,
        inductance_h: None,
        capacitance_f: None,
    };
    assert!(bad.validate().is_err());
}

#[test]
fn switch_state_text_round_trip() {
    let x: SwitchState = "1010 1011 0011 1001 0010".parse().unwrap();
    assert_eq!(x.len(), 20);
    assert!(x.get(0) && !x.get(1));
    assert_eq!(x.to_string(), "1010 1011 0011 1001 0010");
    assert_eq!(SwitchState::from_code(x.code(), 20), x);
    assert!("10x1".parse::<SwitchState>().is_err());
    let json = serde_json::to_string(&x).unwrap();
    assert_eq!(json, "\"1010 1011 0011 1001 0010\"");
}

#[test]
fn reduced_scattering_is_reciprocal() {
    let net = surrogate_cell(&SurrogateParams::new(8), &grid(), DEFAULT_Z0, 21).unwrap();
    let s = reduced_scattering(
        &net,
        &SwitchState::from_code(0b1011_0110, 8),
        &SwitchModel::default(),
        2,
    )
    .unwrap();
    assert!((&s - s.transpose()).norm() < 1e-12);
}

proptest! {
    #[test]
    fn z_s_round_trip(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = rng_from_seed(seed);
        let s = CMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
        let z = s_to_z(&s, 50.0).unwrap();
        let back = z_to_s(&z, 50.0).unwrap();
        prop_assert!((back - &s).norm() < 1e-12);
    }

    #[test]
    fn random_states_reduce_passively(seed in any::<u64>(), q in 1usize..10, code in any::<u64>()) {
        let net = surrogate_cell(&SurrogateParams::new(q), &[2.6e9], DEFAULT_Z0, seed).unwrap();
        let s = reduced_scattering(&net, &SwitchState::from_code(code, q), &SwitchModel::default(), 0).unwrap();
        prop_assert!(max_singular_value(&s) <= 1.0 + 1e-10);
    }
}
