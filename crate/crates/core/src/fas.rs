//! Fluid-antenna design parameters and the Bessel target correlation.
//!
//! Port indices are 0-based in this API; reports and file outputs number
//! ports from 1.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Port density below which a [`ParamWarning::LowDensity`] is raised.
pub const RECOMMENDED_DENSITY: f64 = 10.0;

/// Apertures above this (in wavelengths) are accepted with a warning.
pub const APERTURE_SOFT_CAP: f64 = 5.0;

/// Zeroth-order Bessel function of the first kind.
///
/// Power series below |x| = 8, Miller backward recurrence normalized by
/// `J0 + 2 * sum J_2k = 1` above. Absolute error stays below 1e-12 on |x| <= 100.
pub fn bessel_j0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite(x));
    }
    let ax = x.abs();
    if ax < 8.0 {
        Ok(j0_series(ax))
    } else {
        Ok(j0_miller(ax))
    }
}

fn j0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..80 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-3) {
            break;
        }
    }
    sum
}

fn j0_miller(x: f64) -> f64 {
    const BIG: f64 = 1e250;
    let start = x + 60.0 + 8.0 * x.cbrt();
    let mut m = start.ceil() as usize;
    if m % 2 == 1 {
        m += 1;
    }
    let two_over_x = 2.0 / x;
    let mut j_next = 0.0; // J_{k+1}
    let mut j_k = 1e-30; // J_k, arbitrary seed at k = m
    let mut norm = 0.0; // J_0 + 2 * sum_{k even >= 2} J_k, accumulated
    for k in (1..=m).rev() {
        let j_prev = k as f64 * two_over_x * j_k - j_next;
        j_next = j_k;
        j_k = j_prev;
        // j_k now holds J_{k-1}
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            norm += 2.0 * j_k;
        }
        if j_k.abs() > BIG {
            j_k /= BIG;
            j_next /= BIG;
            norm /= BIG;
        }
    }
    norm += j_k;
    j_k / norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FasParams {
    /// Aperture W in wavelengths.
    aperture: f64,
    /// Number of FAS ports N.
    ports: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamWarning {
    /// N/W below the recommended density of 10.
    LowDensity { density: f64 },
    /// W above the validated range.
    LargeAperture { aperture: f64 },
}

impl std::fmt::Display for ParamWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamWarning::LowDensity { density } => {
                write!(
                    f,
                    "port density N/W = {density} is below {RECOMMENDED_DENSITY}"
                )
            }
            ParamWarning::LargeAperture { aperture } => {
                write!(
                    f,
                    "aperture W = {aperture} exceeds the validated range W <= {APERTURE_SOFT_CAP}"
                )
            }
        }
    }
}

impl FasParams {
    pub fn new(aperture: f64, ports: usize) -> Result<Self> {
        if !aperture.is_finite() || aperture <= 0.0 {
            return Err(Error::param(
                "W",
                format!("aperture must be finite and > 0, got {aperture}"),
            ));
        }
        if ports < 2 {
            return Err(Error::param(
                "N",
                format!("need at least 2 ports, got {ports}"),
            ));
        }
        Ok(Self { aperture, ports })
    }

    pub fn aperture(&self) -> f64 {
        self.aperture
    }

    pub fn ports(&self) -> usize {
        self.ports
    }

    pub fn density(&self) -> f64 {
        self.ports as f64 / self.aperture
    }

    /// Advisory checks; none of these make the parameters unusable.
    pub fn warnings(&self) -> Vec<ParamWarning> {
        let mut out = Vec::new();
        if self.density() < RECOMMENDED_DENSITY {
            out.push(ParamWarning::LowDensity {
                density: self.density(),
            });
        }
        if self.aperture > APERTURE_SOFT_CAP {
            out.push(ParamWarning::LargeAperture {
                aperture: self.aperture,
            });
        }
        out
    }

    /// Bessel argument 2*pi*|i-j|*W/(N-1) for a port separation `lag`.
    pub fn bessel_argument(&self, lag: usize) -> f64 {
        2.0 * PI * lag as f64 * self.aperture / (self.ports - 1) as f64
    }
}

/// Real symmetric correlation-magnitude matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    m: DMatrix<f64>,
}

const CORR_TOL: f64 = 1e-9;

impl CorrelationMatrix {
    /// Validates symmetry, unit diagonal and entries in [0, 1] (tolerance 1e-9).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidCorrelation(format!(
                "not square: {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        if n == 0 {
            return Err(Error::InvalidCorrelation("empty".into()));
        }
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > CORR_TOL {
                return Err(Error::InvalidCorrelation(format!(
                    "diagonal entry {i} is {}",
                    m[(i, i)]
                )));
            }
            for j in 0..n {
                let v = m[(i, j)];
                if !v.is_finite() || !(-CORR_TOL..=1.0 + CORR_TOL).contains(&v) {
                    return Err(Error::InvalidCorrelation(format!(
                        "entry ({i},{j}) = {v} outside [0,1]"
                    )));
                }
                if (v - m[(j, i)]).abs() > CORR_TOL {
                    return Err(Error::InvalidCorrelation(format!(
                        "asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { m })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn all_ones(n: usize) -> Self {
        Self {
            m: DMatrix::from_element(n, n, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| self.m[(i, j)])
            .collect()
    }
}

/// Target correlation: entry (i, j) = |J0(2*pi*|i-j|*W/(N-1))|.
pub fn make_target_correlation(p: &FasParams) -> Result<CorrelationMatrix> {
    let n = p.ports();
    let lags = (0..n)
        .map(|lag| bessel_j0(p.bessel_argument(lag)).map(f64::abs))
        .collect::<Result<Vec<_>>>()?;
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { lags[i.abs_diff(j)] });
    Ok(CorrelationMatrix { m })
}

/// Smallest power of two not below floor(W / 0.5) + 1.
pub fn min_output_ports(aperture: f64) -> Result<usize> {
    if !aperture.is_finite() || aperture <= 0.0 {
        return Err(Error::param(
            "W",
            format!("aperture must be finite and > 0, got {aperture}"),
        ));
    }
    let spaced = (aperture / 0.5).floor() as usize + 1;
    Ok(spaced.next_power_of_two())
}
