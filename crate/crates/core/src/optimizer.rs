//! Projected gradient descent for the beamforming current matrix.
//!
//! The objective is `f(B) = || |B^H B| - C ||_F^2` subject to every column of
//! `B` having unit norm. Each iteration takes a step along the closed-form
//! complex gradient and renormalizes the columns.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fas::{make_target_correlation, CorrelationMatrix, FasParams};
use crate::seed::{derive_seed, rng_from_seed, Rng};

pub type CMatrix = DMatrix<Complex64>;

/// Below this Gram magnitude the sign factor is taken as zero.
pub const SGN_GUARD: f64 = 1e-12;

/// Factor relating [`gradient`] to the real partial derivatives:
/// `Re(grad) = FD_SCALE * df/dRe(B)` and `Im(grad) = FD_SCALE * df/dIm(B)`.
///
/// The returned gradient is the Wirtinger derivative `df/dconj(B)`, which
/// equals `(df/dRe + j*df/dIm) / 2`.
pub const FD_SCALE: f64 = 0.5;

const UNIT_TOL: f64 = 1e-9;

/// Complex `N_A x N` matrix whose columns are unit-norm current vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamMatrix {
    m: CMatrix,
}

impl BeamMatrix {
    /// Wraps `m` after checking every column has unit norm (tolerance 1e-9).
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::param("B", "empty matrix"));
        }
        for (n, col) in m.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(Error::param("B", format!("column {n} has norm {norm}")));
            }
        }
        Ok(Self { m })
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn gram(&self) -> CMatrix {
        self.m.adjoint() * &self.m
    }

    pub fn gram_magnitude(&self) -> DMatrix<f64> {
        self.gram().map(|z| z.norm())
    }

    /// Row-major real and imaginary parts.
    pub fn to_row_major_parts(&self) -> (Vec<f64>, Vec<f64>) {
        let mut re = Vec::with_capacity(self.m.len());
        let mut im = Vec::with_capacity(self.m.len());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                re.push(self.m[(i, j)].re);
                im.push(self.m[(i, j)].im);
            }
        }
        (re, im)
    }

    pub fn from_row_major_parts(rows: usize, cols: usize, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for {rows}x{cols}, got {} real / {} imaginary",
                rows * cols,
                re.len(),
                im.len()
            )));
        }
        Self::new(CMatrix::from_fn(rows, cols, |i, j| {
            Complex64::new(re[i * cols + j], im[i * cols + j])
        }))
    }
}

fn check_dims(b: &CMatrix, target: &CorrelationMatrix) -> Result<()> {
    if b.ncols() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "B has {} columns but target is {}x{}",
            b.ncols(),
            target.dim(),
            target.dim()
        )));
    }
    Ok(())
}

fn misfit(gram: &CMatrix, target: &CorrelationMatrix) -> f64 {
    gram.iter()
        .zip(target.as_matrix().iter())
        .map(|(g, c)| {
            let d = g.norm() - c;
            d * d
        })
        .sum()
}

/// `|| |B^H B| - C ||_F^2`, summed over every entry including the diagonal.
pub fn objective(b: &CMatrix, target: &CorrelationMatrix) -> Result<f64> {
    check_dims(b, target)?;
    Ok(misfit(&(b.adjoint() * b), target))
}

fn gradient_from_gram(b: &CMatrix, gram: &CMatrix, target: &CorrelationMatrix) -> CMatrix {
    let c = target.as_matrix();
    let weights = CMatrix::from_fn(gram.nrows(), gram.ncols(), |i, j| {
        let g = gram[(i, j)];
        let mag = g.norm();
        if mag < SGN_GUARD {
            Complex64::new(0.0, 0.0)
        } else {
            g * ((mag - c[(i, j)]) / mag)
        }
    });
    (b * weights) * Complex64::new(2.0, 0.0)
}

/// `2 B [(|G| - C) o sgn(G)]` with `G = B^H B`.
///
/// `sgn(G) = G^H / |G|` taken as a whole-matrix conjugate transpose, which
/// for Hermitian `G` is `G_ij / |G_ij|` entrywise. Entries with
/// `|G_ij| < SGN_GUARD` contribute zero.
pub fn gradient(b: &CMatrix, target: &CorrelationMatrix) -> Result<CMatrix> {
    check_dims(b, target)?;
    let gram = b.adjoint() * b;
    Ok(gradient_from_gram(b, &gram, target))
}

fn random_unit_vector(len: usize, rng: &mut Rng) -> nalgebra::DVector<Complex64> {
    loop {
        let v = nalgebra::DVector::from_fn(len, |_, _| {
            Complex64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
        });
        let norm = v.norm();
        if norm > 1e-8 {
            return v.unscale(norm);
        }
    }
}

/// Scales every column to unit norm; zero (or non-finite) columns are
/// replaced by a random unit vector drawn from `rng`.
pub fn project_columns(mut m: CMatrix, rng: &mut Rng) -> BeamMatrix {
    let rows = m.nrows();
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 && norm.is_finite() {
            col.unscale_mut(norm);
        } else {
            col.copy_from(&random_unit_vector(rows, rng));
        }
    }
    BeamMatrix { m }
}

/// Uniform entries on [-1, 1] + j[-1, 1], column-normalized.
pub fn random_beam_matrix(rows: usize, cols: usize, rng: &mut Rng) -> BeamMatrix {
    let m = CMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
    });
    project_columns(m, rng)
}

/// `||C - C_obj||_F^2 / ||1 - C_obj||_F^2`.
pub fn relative_error(achieved: &DMatrix<f64>, target: &CorrelationMatrix) -> Result<f64> {
    let t = target.as_matrix();
    if achieved.shape() != t.shape() {
        return Err(Error::DimensionMismatch(format!(
            "achieved {:?} vs target {:?}",
            achieved.shape(),
            t.shape()
        )));
    }
    let num: f64 = achieved
        .iter()
        .zip(t.iter())
        .map(|(a, c)| (a - c) * (a - c))
        .sum();
    let den = single_port_misfit(target);
    if den == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    Ok(num / den)
}

/// Misfit of a single-antenna design, `||1 - C_obj||_F^2`.
pub fn single_port_misfit(target: &CorrelationMatrix) -> f64 {
    target
        .as_matrix()
        .iter()
        .map(|c| (1.0 - c) * (1.0 - c))
        .sum()
}

/// Mean over states of the spread (max - min) of output-port phases
/// relative to port 1, each wrapped to (-pi, pi].
pub fn phase_spread(b: &CMatrix) -> f64 {
    if b.ncols() == 0 {
        return 0.0;
    }
    let total: f64 = b
        .column_iter()
        .map(|col| {
            let reference = col[0].conj();
            let (lo, hi) = col.iter().fold((0.0f64, 0.0f64), |(lo, hi), z| {
                let p = wrap_phase((z * reference).arg());
                (lo.min(p), hi.max(p))
            });
            hi - lo
        })
        .sum();
    total / b.ncols() as f64
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_phase(p: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = p % TAU;
    if w <= -PI {
        w += TAU;
    } else if w > PI {
        w -= TAU;
    }
    w
}

/// Stopping tolerance on the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    /// Stop once `f` drops below this value.
    Absolute(f64),
    /// Stop once the relative error drops below this value.
    Relative(f64),
}

impl Tolerance {
    pub fn resolve(&self, target: &CorrelationMatrix) -> f64 {
        match *self {
            Tolerance::Absolute(t) => t,
            Tolerance::Relative(r) => r * single_port_misfit(target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdOptions {
    pub step: f64,
    pub tolerance: Tolerance,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Relative-error threshold a restart must meet to enter the
    /// phase-spread selection.
    pub accept_epsilon: f64,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self {
            step: 0.05,
            tolerance: Tolerance::Relative(1e-7),
            max_iter: 20_000,
            restarts: 30,
            seed: 0,
            accept_epsilon: 0.01,
        }
    }
}

impl PgdOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::param(
                "eta",
                format!("step must be > 0, got {}", self.step),
            ));
        }
        let tol = match self.tolerance {
            Tolerance::Absolute(t) | Tolerance::Relative(t) => t,
        };
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::param("tolerance", format!("must be > 0, got {tol}")));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::param("restarts", "need at least one restart"));
        }
        if !(self.accept_epsilon.is_finite() && self.accept_epsilon > 0.0) {
            return Err(Error::param(
                "epsilon0",
                format!("must be > 0, got {}", self.accept_epsilon),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub objective: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub phase_spread_rad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub best: BeamMatrix,
    pub objective: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub phase_spread: f64,
    pub selected_restart: usize,
    pub per_restart: Vec<RestartSummary>,
}

/// Runs projected gradient descent from `initial` (or a random start drawn
/// from `opts.seed`) until `f` falls below the tolerance or `max_iter` steps.
pub fn pgd_solve(
    target: &CorrelationMatrix,
    n_a: usize,
    opts: &PgdOptions,
    initial: Option<&BeamMatrix>,
) -> Result<SolveReport> {
    opts.validate()?;
    if n_a == 0 {
        return Err(Error::param("N_A", "need at least one output port"));
    }
    let n = target.dim();
    let mut rng = rng_from_seed(opts.seed);
    let mut b = match initial {
        Some(b0) => {
            if b0.rows() != n_a || b0.cols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "initial B is {}x{}, expected {n_a}x{n}",
                    b0.rows(),
                    b0.cols()
                )));
            }
            b0.clone()
        }
        None => random_beam_matrix(n_a, n, &mut rng),
    };
    let tol = opts.tolerance.resolve(target);
    let step = Complex64::new(opts.step, 0.0);

    let mut gram = b.gram();
    let mut f = misfit(&gram, target);
    let mut iterations = 0;
    while f >= tol && iterations < opts.max_iter {
        let grad = gradient_from_gram(&b.m, &gram, target);
        let stepped = &b.m - grad * step;
        b = project_columns(stepped, &mut rng);
        gram = b.gram();
        f = misfit(&gram, target);
        iterations += 1;
    }
    let denom = single_port_misfit(target);
    let epsilon = if denom > 0.0 { f / denom } else { f64::NAN };
    let phase = phase_spread(&b.m);
    Ok(SolveReport {
        objective: f,
        epsilon,
        iterations,
        converged: f < tol,
        phase_spread: phase,
        selected_restart: 0,
        per_restart: vec![RestartSummary {
            objective: f,
            epsilon,
            iterations,
            phase_spread_rad: phase,
        }],
        best: b,
    })
}

/// Index of the restart to keep: among restarts whose relative error is at
/// most `accept_epsilon`, the one with the smallest phase spread (ties:
/// lower objective, then lower index); if none qualifies, the lowest objective.
pub fn select_restart(candidates: &[RestartSummary], accept_epsilon: f64) -> Option<usize> {
    let by = |a: &(usize, &RestartSummary), b: &(usize, &RestartSummary), spread_first: bool| {
        let primary = if spread_first {
            a.1.phase_spread_rad.total_cmp(&b.1.phase_spread_rad)
        } else {
            std::cmp::Ordering::Equal
        };
        primary
            .then(a.1.objective.total_cmp(&b.1.objective))
            .then(a.0.cmp(&b.0))
    };
    let qualified = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.epsilon <= accept_epsilon)
        .min_by(|a, b| by(a, b, true));
    qualified
        .or_else(|| candidates.iter().enumerate().min_by(|a, b| by(a, b, false)))
        .map(|(i, _)| i)
}

/// Runs `opts.restarts` independent solves (restart `r` uses seed
/// `derive_seed(opts.seed, r)`) and keeps one per [`select_restart`].
pub fn multi_restart(
    target: &CorrelationMatrix,
    n_a: usize,
    opts: &PgdOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    let reports = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let sub = PgdOptions {
                seed: derive_seed(opts.seed, r as u64),
                ..opts.clone()
            };
            pgd_solve(target, n_a, &sub, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries: Vec<RestartSummary> = reports.iter().map(|r| r.per_restart[0]).collect();
    let chosen = select_restart(&summaries, opts.accept_epsilon).expect("at least one restart");
    let mut report = reports
        .into_iter()
        .nth(chosen)
        .expect("chosen index in range");
    report.selected_restart = chosen;
    report.per_restart = summaries;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_a: usize,
    pub epsilon: f64,
}

/// Lowest relative error over all restarts for each output-port count.
///
/// A single output port always yields the all-one Gram magnitude, so
/// `N_A = 1` reports exactly 1 without running the optimizer.
pub fn na_sweep(
    aperture: f64,
    ports: usize,
    na_range: &[usize],
    opts: &PgdOptions,
) -> Result<Vec<SweepPoint>> {
    if na_range.is_empty() {
        return Err(Error::param("na_range", "empty"));
    }
    let target = make_target_correlation(&FasParams::new(aperture, ports)?)?;
    na_range
        .iter()
        .map(|&n_a| {
            let epsilon = match n_a {
                0 => return Err(Error::param("N_A", "need at least one output port")),
                1 => {
                    if single_port_misfit(&target) == 0.0 {
                        return Err(Error::DegenerateTarget);
                    }
                    1.0
                }
                _ => multi_restart(&target, n_a, opts)?
                    .per_restart
                    .iter()
                    .map(|r| r.epsilon)
                    .fold(f64::INFINITY, f64::min),
            };
            Ok(SweepPoint { n_a, epsilon })
        })
        .collect()
}

/// Allowed growth of the relative error from one sweep point to the next.
pub const SWEEP_SLACK: f64 = 1.1;

/// Whether `points` is non-increasing up to [`SWEEP_SLACK`]. Values below
/// `floor` (the relative stopping tolerance) are compared as `floor`.
pub fn sweep_is_monotone(points: &[SweepPoint], floor: f64) -> bool {
    points
        .windows(2)
        .all(|w| w[1].epsilon <= SWEEP_SLACK * w[0].epsilon.max(floor))
}

/// JSON form of a [`SolveReport`]; `B_real`/`B_imag` are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReportDoc {
    pub rows: usize,
    pub cols: usize,
    pub objective: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub phase_spread_rad: f64,
    pub selected_restart: usize,
    pub per_restart: Vec<RestartSummary>,
    #[serde(rename = "B_real")]
    pub b_real: Vec<f64>,
    #[serde(rename = "B_imag")]
    pub b_imag: Vec<f64>,
}

impl SolveReport {
    pub fn to_doc(&self) -> SolveReportDoc {
        let (b_real, b_imag) = self.best.to_row_major_parts();
        SolveReportDoc {
            rows: self.best.rows(),
            cols: self.best.cols(),
            objective: self.objective,
            epsilon: self.epsilon,
            iterations: self.iterations,
            converged: self.converged,
            phase_spread_rad: self.phase_spread,
            selected_restart: self.selected_restart,
            per_restart: self.per_restart.clone(),
            b_real,
            b_imag,
        }
    }

    pub fn from_doc(doc: &SolveReportDoc) -> Result<Self> {
        Ok(Self {
            best: BeamMatrix::from_row_major_parts(doc.rows, doc.cols, &doc.b_real, &doc.b_imag)?,
            objective: doc.objective,
            epsilon: doc.epsilon,
            iterations: doc.iterations,
            converged: doc.converged,
            phase_spread: doc.phase_spread_rad,
            selected_restart: doc.selected_restart,
            per_restart: doc.per_restart.clone(),
        })
    }
}
