//! Rich-scattering channel simulation for designed beamforming matrices.
//!
//! Port voltages of one realization are `g ~ CN(0, Sigma)` with
//! `Sigma = B^H K B`, where `K` is the pattern correlation of the antenna
//! elements. All ports share one draw per realization (quasi-static sweep).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fas::CorrelationMatrix;
use crate::optimizer::{BeamMatrix, CMatrix};
use crate::seed::{stream_rng, Rng};

const HERMITIAN_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
/// Realizations drawn from one RNG stream.
const BLOCK_ROWS: usize = 4096;

fn min_hermitian_eigenvalue(m: &CMatrix) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

fn hermitian_error(m: &CMatrix) -> f64 {
    (m - m.adjoint())
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max)
}

/// Pattern correlation `K_M` of the antenna elements.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaCorrelation(CMatrix);

impl AntennaCorrelation {
    pub fn new(k: CMatrix) -> Result<Self> {
        if k.nrows() != k.ncols() || k.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "K must be square and non-empty, got {:?}",
                k.shape()
            )));
        }
        let herm = hermitian_error(&k);
        if herm.is_nan() || herm > HERMITIAN_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let min = min_hermitian_eigenvalue(&k);
        if min < -PSD_TOL {
            return Err(Error::NotPsd(min));
        }
        Ok(Self(k))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }
}

/// Complex port covariance `B^H K B`.
pub fn port_covariance(b: &BeamMatrix, k: &AntennaCorrelation) -> Result<CMatrix> {
    if k.dim() != b.rows() {
        return Err(Error::DimensionMismatch(format!(
            "K is {0}x{0}, B has {1} rows",
            k.dim(),
            b.rows()
        )));
    }
    let bm = b.as_matrix();
    Ok(bm.adjoint() * k.as_matrix() * bm)
}

/// `|B^H K B|` normalized to a unit diagonal.
pub fn pattern_correlation(b: &BeamMatrix, k: &AntennaCorrelation) -> Result<CorrelationMatrix> {
    let sigma = port_covariance(b, k)?;
    let n = sigma.nrows();
    let diag: Vec<f64> = (0..n).map(|i| sigma[(i, i)].norm()).collect();
    if let Some(i) = diag.iter().position(|&d| d == 0.0) {
        return Err(Error::InvalidCorrelation(format!(
            "port {} has zero power",
            i + 1
        )));
    }
    let mut c = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = sigma[(i, j)].norm() / (diag[i] * diag[j]).sqrt();
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    CorrelationMatrix::new(c)
}

/// Monte-Carlo estimate of `E[exp(-j 2 pi (d / lambda) cos phi)]` with `phi`
/// uniform, which converges to `J0(2 pi d / lambda)`.
pub fn spatial_corr_mc(d_over_lambda: f64, samples: usize, seed: u64) -> Result<Complex64> {
    if samples == 0 {
        return Err(Error::param("samples", "must be at least 1"));
    }
    if !d_over_lambda.is_finite() {
        return Err(Error::NonFinite(d_over_lambda));
    }
    let blocks = samples.div_ceil(BLOCK_ROWS);
    let sum: Complex64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let count = BLOCK_ROWS.min(samples - b * BLOCK_ROWS);
            (0..count)
                .map(|_| {
                    let phi = rng.random::<f64>() * std::f64::consts::TAU;
                    Complex64::from_polar(1.0, -std::f64::consts::TAU * d_over_lambda * phi.cos())
                })
                .sum::<Complex64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(sum / samples as f64)
}

/// Realizations of every (location, user) pair: `T x N` matrices whose rows
/// are independent port-voltage vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEnsemble {
    pub ports: usize,
    pub realizations: usize,
    pub users: usize,
    pub locations: usize,
    pub seed: u64,
    blocks: Vec<CMatrix>,
}

impl ChannelEnsemble {
    /// Builds an ensemble from explicit realizations, ordered by location
    /// and then user.
    pub fn from_blocks(
        users: usize,
        locations: usize,
        seed: u64,
        blocks: Vec<CMatrix>,
    ) -> Result<Self> {
        if users == 0 || locations == 0 || blocks.len() != users * locations {
            return Err(Error::DimensionMismatch(format!(
                "{} blocks for {users} users x {locations} locations",
                blocks.len()
            )));
        }
        let (t, n) = blocks[0].shape();
        if blocks.iter().any(|b| b.shape() != (t, n)) {
            return Err(Error::DimensionMismatch(
                "realization blocks differ in shape".into(),
            ));
        }
        if blocks
            .iter()
            .flat_map(|b| b.iter())
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::param("channels", "non-finite entry"));
        }
        Ok(Self {
            ports: n,
            realizations: t,
            users,
            locations,
            seed,
            blocks,
        })
    }

    pub fn get(&self, location: usize, user: usize) -> &CMatrix {
        &self.blocks[location * self.users + user]
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }
}

fn complex_normal(rng: &mut Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Square-root factor `L` with `L L^H = sigma`, from the Hermitian
/// eigendecomposition (clipping round-off negatives to zero).
pub fn covariance_factor(sigma: &CMatrix) -> Result<CMatrix> {
    let herm = hermitian_error(sigma);
    let scale = sigma.iter().map(|v| v.norm()).fold(1.0, f64::max);
    if herm > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian(herm));
    }
    let eig = sigma.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL {
        return Err(Error::NotPsd(min));
    }
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&l| Complex64::new(l.max(0.0).sqrt(), 0.0)),
    );
    Ok(eig.eigenvectors * CMatrix::from_diagonal(&roots))
}

/// Draws `realizations` port-voltage vectors with covariance `B^H K B` for
/// every user at every location.
pub fn generate_channels(
    b: &BeamMatrix,
    k: &AntennaCorrelation,
    realizations: usize,
    users: usize,
    locations: usize,
    seed: u64,
) -> Result<ChannelEnsemble> {
    if realizations == 0 || users == 0 || locations == 0 {
        return Err(Error::param("T/users/locations", "must all be positive"));
    }
    let factor = covariance_factor(&port_covariance(b, k)?)?;
    let lt = factor.transpose();
    let n = factor.nrows();
    let chunks = realizations.div_ceil(BLOCK_ROWS);
    let blocks = (0..users * locations)
        .map(|stream| {
            let parts: Vec<CMatrix> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = stream_rng(seed, ((stream as u64) << 32) | c as u64);
                    let rows = BLOCK_ROWS.min(realizations - c * BLOCK_ROWS);
                    let w = CMatrix::from_fn(rows, n, |_, _| complex_normal(&mut rng));
                    w * &lt
                })
                .collect();
            let mut out = CMatrix::zeros(realizations, n);
            for (c, part) in parts.iter().enumerate() {
                out.rows_mut(c * BLOCK_ROWS, part.nrows()).copy_from(part);
            }
            out
        })
        .collect();
    ChannelEnsemble::from_blocks(users, locations, seed, blocks)
}

/// Sample covariance `E[h_i conj(h_j)]` of a `T x N` realization block,
/// i.e. `H^T conj(H) / T`, which estimates `B^H K B`.
pub fn empirical_covariance(h: &CMatrix) -> CMatrix {
    h.transpose() * h.conjugate() / Complex64::new(h.nrows() as f64, 0.0)
}

/// Magnitude of the sample correlation coefficients.
pub fn empirical_correlation(h: &CMatrix) -> DMatrix<f64> {
    let r = empirical_covariance(h);
    let n = r.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            r[(i, j)].norm() / (r[(i, i)].re * r[(j, j)].re).sqrt()
        }
    })
}

/// Port chosen for one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamaPick {
    /// 1-based port index.
    pub port: usize,
    /// `+inf` when the interference at the chosen port is exactly zero.
    pub sir_db: f64,
}

fn sir(signal: f64, interference: f64) -> f64 {
    if interference == 0.0 {
        f64::INFINITY
    } else {
        signal / interference
    }
}

fn interference_power(interferers: &[&CMatrix], t: usize, n: usize) -> f64 {
    interferers.iter().map(|h| h[(t, n)].norm_sqr()).sum()
}

fn check_fama_dims(desired: &CMatrix, interferers: &[&CMatrix]) -> Result<()> {
    if interferers.is_empty() {
        return Err(Error::param(
            "interferers",
            "need at least one interfering user",
        ));
    }
    if desired.ncols() == 0 || interferers.iter().any(|h| h.shape() != desired.shape()) {
        return Err(Error::DimensionMismatch(
            "desired and interfering channels differ in shape".into(),
        ));
    }
    Ok(())
}

/// Per realization, the port maximizing `|h_d|^2 / sum |h_i|^2`; ties go to
/// the lowest port.
pub fn fama_select(desired: &CMatrix, interferers: &[&CMatrix]) -> Result<Vec<FamaPick>> {
    check_fama_dims(desired, interferers)?;
    Ok((0..desired.nrows())
        .map(|t| {
            let mut best = (0, f64::NEG_INFINITY);
            for n in 0..desired.ncols() {
                let s = sir(
                    desired[(t, n)].norm_sqr(),
                    interference_power(interferers, t, n),
                );
                if s > best.1 {
                    best = (n, s);
                }
            }
            FamaPick {
                port: best.0 + 1,
                sir_db: 10.0 * best.1.log10(),
            }
        })
        .collect())
}

/// SIR in dB at a fixed 1-based port for every realization.
pub fn fixed_port_sir_db(
    desired: &CMatrix,
    interferers: &[&CMatrix],
    port: usize,
) -> Result<Vec<f64>> {
    check_fama_dims(desired, interferers)?;
    if port == 0 || port > desired.ncols() {
        return Err(Error::param(
            "port",
            format!("{port} outside 1..={}", desired.ncols()),
        ));
    }
    Ok((0..desired.nrows())
        .map(|t| {
            10.0 * sir(
                desired[(t, port - 1)].norm_sqr(),
                interference_power(interferers, t, port - 1),
            )
            .log10()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamaSummary {
    pub realizations: usize,
    pub median_sir_db: f64,
    pub p_sir_above_10db: f64,
    pub infinite_sir: usize,
}

pub fn fama_summary(picks: &[FamaPick]) -> Result<FamaSummary> {
    if picks.is_empty() {
        return Err(Error::param("picks", "no realizations"));
    }
    let mut sir: Vec<f64> = picks.iter().map(|p| p.sir_db).collect();
    sir.sort_by(f64::total_cmp);
    let m = sir.len();
    let median = if m % 2 == 1 {
        sir[m / 2]
    } else {
        0.5 * (sir[m / 2 - 1] + sir[m / 2])
    };
    Ok(FamaSummary {
        realizations: m,
        median_sir_db: median,
        p_sir_above_10db: sir.iter().filter(|&&s| s > 10.0).count() as f64 / m as f64,
        infinite_sir: sir.iter().filter(|s| s.is_infinite()).count(),
    })
}

/// How [`measured_correlation`] combines the port pairs of one lag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagOptions {
    /// Remove each port's time mean before correlating.
    #[serde(default)]
    pub centered: bool,
    /// Take the magnitude of the summed complex products instead of summing
    /// per-pair magnitudes. Phase differences along a diagonal then cancel.
    #[serde(default)]
    pub coherent: bool,
}

/// Lag-`i` correlation averaged over users and locations:
/// `sum_j |<h(j), h(j+i)>| / sum_j ||h(j)|| ||h(j+i)||`, where `h(j)` is the
/// time series of port `j`. Lag 0 is 1 by construction.
pub fn measured_correlation(ens: &ChannelEnsemble, opts: LagOptions) -> Result<Vec<f64>> {
    let n = ens.ports;
    let mut acc = vec![0.0; n];
    for block in ens.blocks() {
        let h = if opts.centered {
            let mut h = block.clone();
            for mut col in h.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
            h
        } else {
            block.clone()
        };
        let norms: Vec<f64> = h.column_iter().map(|c| c.norm()).collect();
        acc[0] += 1.0;
        for (lag, slot) in acc.iter_mut().enumerate().skip(1) {
            let mut coherent = Complex64::new(0.0, 0.0);
            let mut per_pair = 0.0;
            let mut s = 0.0;
            for j in 0..n - lag {
                let r = h.column(j + lag).dotc(&h.column(j));
                coherent += r;
                per_pair += r.norm();
                s += norms[j] * norms[j + lag];
            }
            if s == 0.0 {
                return Err(Error::InvalidCorrelation(format!(
                    "lag {lag} has zero normalization"
                )));
            }
            *slot += if opts.coherent {
                coherent.norm()
            } else {
                per_pair
            } / s;
        }
    }
    let count = ens.blocks().len() as f64;
    Ok(acc.into_iter().map(|v| v / count).collect())
}

/// Single lag of [`measured_correlation`]; lags at or beyond `N` are rejected.
pub fn measured_correlation_at(ens: &ChannelEnsemble, lag: usize, opts: LagOptions) -> Result<f64> {
    if lag >= ens.ports {
        return Err(Error::param(
            "lag",
            format!("{lag} must be below N = {}", ens.ports),
        ));
    }
    Ok(measured_correlation(ens, opts)?[lag])
}

/// Mean magnitude of the `lag`-th superdiagonal of `sigma`, normalized by
/// its diagonal.
pub fn mean_diagonal_magnitude(sigma: &CMatrix, lag: usize) -> f64 {
    let n = sigma.nrows();
    let total: f64 = (0..n - lag)
        .map(|j| {
            sigma[(j, j + lag)].norm()
                / (sigma[(j, j)].norm() * sigma[(j + lag, j + lag)].norm()).sqrt()
        })
        .sum();
    total / (n - lag) as f64
}
