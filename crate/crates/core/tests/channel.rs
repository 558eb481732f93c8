mod common;

use common::j0_oracle;
use num_complex::Complex64;
use prbfn::channel::{
    covariance_factor, empirical_correlation, empirical_covariance, fama_select, fama_summary,
    fixed_port_sir_db, generate_channels, mean_diagonal_magnitude, measured_correlation,
    measured_correlation_at, pattern_correlation, port_covariance, spatial_corr_mc,
    AntennaCorrelation, ChannelEnsemble, FamaPick, LagOptions,
};
use prbfn::optimizer::{random_beam_matrix, BeamMatrix, CMatrix};
use prbfn::seed::rng_from_seed;
use prbfn::Error;
use proptest::prelude::*;

fn max_entry(m: &CMatrix) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.norm()))
}

#[test]
fn identity_covariance_is_reproduced() {
    let b = BeamMatrix::new(CMatrix::identity(4, 4)).unwrap();
    let ens = generate_channels(&b, &AntennaCorrelation::identity(4), 20_000, 1, 1, 3).unwrap();
    let r = empirical_covariance(ens.get(0, 0));
    assert!(max_entry(&(r - CMatrix::identity(4, 4))) < 0.03);
}

#[test]
fn rank_one_design_gives_fully_correlated_ports() {
    let col = CMatrix::from_element(1, 5, Complex64::new(1.0, 0.0));
    let b = BeamMatrix::new(col).unwrap();
    let ens = generate_channels(&b, &AntennaCorrelation::identity(1), 1000, 1, 1, 0).unwrap();
    let c = empirical_correlation(ens.get(0, 0));
    assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn nontrivial_antenna_correlation_enters_the_covariance() {
    let rho = Complex64::new(0.3, 0.4);
    let k = CMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(1.0, 0.0),
            rho,
            rho.conj(),
            Complex64::new(1.0, 0.0),
        ],
    );
    let k = AntennaCorrelation::new(k).unwrap();
    let b = random_beam_matrix(2, 4, &mut rng_from_seed(6));
    let sigma = port_covariance(&b, &k).unwrap();
    let ens = generate_channels(&b, &k, 40_000, 1, 1, 8).unwrap();
    let r = empirical_covariance(ens.get(0, 0));
    assert!(max_entry(&(r - &sigma)) < 0.03);
    let iid = port_covariance(&b, &AntennaCorrelation::identity(2)).unwrap();
    assert!(max_entry(&(sigma - iid)) > 0.05);
}

#[test]
fn covariance_factor_reconstructs_sigma() {
    let b = random_beam_matrix(3, 6, &mut rng_from_seed(1));
    let sigma = port_covariance(&b, &AntennaCorrelation::identity(3)).unwrap();
    let l = covariance_factor(&sigma).unwrap();
    assert!(max_entry(&(&l * l.adjoint() - &sigma)) < 1e-12);
}

#[test]
fn invalid_antenna_correlations_rejected() {
    let mut k = CMatrix::identity(2, 2);
    k[(0, 1)] = Complex64::new(0.5, 0.0);
    assert!(matches!(
        AntennaCorrelation::new(k),
        Err(Error::NotHermitian(_))
    ));
    let mut k = CMatrix::identity(2, 2);
    k[(0, 1)] = Complex64::new(2.0, 0.0);
    k[(1, 0)] = Complex64::new(2.0, 0.0);
    assert!(matches!(AntennaCorrelation::new(k), Err(Error::NotPsd(_))));
    let b = random_beam_matrix(3, 4, &mut rng_from_seed(0));
    assert!(port_covariance(&b, &AntennaCorrelation::identity(2)).is_err());
    assert!(generate_channels(&b, &AntennaCorrelation::identity(3), 0, 1, 1, 0).is_err());
}

#[test]
fn spatial_correlation_examples() {
    let first_root_over_2pi = 0.382_739_6;
    let v = spatial_corr_mc(first_root_over_2pi, 1_000_000, 1).unwrap();
    assert!(v.norm() < 0.02);
    let v = spatial_corr_mc(0.05, 1_000_000, 2).unwrap();
    assert!((v.re - j0_oracle(std::f64::consts::PI / 10.0)).abs() < 0.01);
    assert_eq!(
        spatial_corr_mc(0.0, 10, 0).unwrap(),
        Complex64::new(1.0, 0.0)
    );
    assert!(spatial_corr_mc(0.3, 0, 0).is_err());
    assert!(spatial_corr_mc(f64::NAN, 10, 0).is_err());
}

#[test]
fn channels_are_reproducible() {
    let b = random_beam_matrix(2, 5, &mut rng_from_seed(0));
    let k = AntennaCorrelation::identity(2);
    let a = generate_channels(&b, &k, 5000, 2, 2, 9).unwrap();
    let c = generate_channels(&b, &k, 5000, 2, 2, 9).unwrap();
    assert_eq!(a, c);
    assert_ne!(a.get(0, 0), a.get(0, 1));
    assert_ne!(a.get(0, 0), a.get(1, 0));
}

#[test]
fn fama_pick_dominates_fixed_ports() {
    let b = random_beam_matrix(4, 8, &mut rng_from_seed(2));
    let ens = generate_channels(&b, &AntennaCorrelation::identity(4), 2000, 3, 1, 4).unwrap();
    let desired = ens.get(0, 0);
    let interferers = [ens.get(0, 1), ens.get(0, 2)];
    let picks = fama_select(desired, &interferers).unwrap();
    for port in 1..=8 {
        let fixed = fixed_port_sir_db(desired, &interferers, port).unwrap();
        for (p, f) in picks.iter().zip(&fixed) {
            assert!(p.sir_db >= *f);
        }
    }
}

#[test]
fn fama_ties_and_zero_interference() {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let desired = CMatrix::from_row_slice(2, 3, &[one, one, one, one, one, one]);
    let interferer = CMatrix::from_row_slice(2, 3, &[one, one, one, one, zero, one]);
    let picks = fama_select(&desired, &[&interferer]).unwrap();
    assert_eq!(
        picks[0],
        FamaPick {
            port: 1,
            sir_db: 0.0
        }
    );
    assert_eq!(picks[1].port, 2);
    assert!(picks[1].sir_db.is_infinite());
    let s = fama_summary(&picks).unwrap();
    assert_eq!(s.infinite_sir, 1);
    assert!(fama_select(&desired, &[]).is_err());
    assert!(fixed_port_sir_db(&desired, &[&interferer], 0).is_err());
    assert!(fama_summary(&[]).is_err());
}

#[test]
fn independent_ports_show_small_lag_correlation() {
    let b = BeamMatrix::new(CMatrix::identity(6, 6)).unwrap();
    let ens = generate_channels(&b, &AntennaCorrelation::identity(6), 10_000, 1, 1, 5).unwrap();
    let lags = measured_correlation(&ens, LagOptions::default()).unwrap();
    assert_eq!(lags[0], 1.0);
    assert!(lags[1..].iter().all(|&v| v < 0.1));
    assert!(measured_correlation_at(&ens, 6, LagOptions::default()).is_err());
}

#[test]
fn lag_curve_tracks_covariance_diagonals() {
    let b = random_beam_matrix(3, 8, &mut rng_from_seed(12));
    let k = AntennaCorrelation::identity(3);
    let sigma = port_covariance(&b, &k).unwrap();
    let ens = generate_channels(&b, &k, 10_000, 1, 1, 1).unwrap();
    let lags = measured_correlation(&ens, LagOptions::default()).unwrap();
    for (lag, v) in lags.iter().enumerate() {
        assert!(
            (v - mean_diagonal_magnitude(&sigma, lag)).abs() < 0.05,
            "lag {lag}"
        );
    }
}

#[test]
fn ensemble_from_blocks_checks_shapes() {
    let a = CMatrix::zeros(3, 2);
    let b = CMatrix::zeros(4, 2);
    assert!(ChannelEnsemble::from_blocks(2, 1, 0, vec![a.clone(), b]).is_err());
    assert!(ChannelEnsemble::from_blocks(2, 2, 0, vec![a.clone(), a.clone()]).is_err());
    let mut bad = a.clone();
    bad[(0, 0)] = Complex64::new(f64::NAN, 0.0);
    assert!(ChannelEnsemble::from_blocks(1, 1, 0, vec![bad]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fama_is_invariant_to_common_scaling(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let b = random_beam_matrix(2, 5, &mut rng_from_seed(seed));
        let ens = generate_channels(&b, &AntennaCorrelation::identity(2), 200, 2, 1, seed).unwrap();
        let s = Complex64::new(scale, 0.0);
        let d = ens.get(0, 0) * s;
        let i = ens.get(0, 1) * s;
        let base = fama_select(ens.get(0, 0), &[ens.get(0, 1)]).unwrap();
        let scaled = fama_select(&d, &[&i]).unwrap();
        for (a, c) in base.iter().zip(&scaled) {
            prop_assert_eq!(a.port, c.port);
            prop_assert!((a.sir_db - c.sir_db).abs() < 1e-9);
        }
    }

    #[test]
    fn pattern_correlation_is_a_valid_correlation(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..8) {
        let b = random_beam_matrix(rows, cols, &mut rng_from_seed(seed));
        let c = pattern_correlation(&b, &AntennaCorrelation::identity(rows)).unwrap();
        let g = b.gram_magnitude();
        for i in 0..cols {
            for j in 0..cols {
                prop_assert!((c.get(i, j) - g[(i, j)]).abs() < 1e-12);
            }
        }
    }
}
