//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{ToPrimitive, Zero};
use prbfn::network::{PixelNetwork, SwitchModel, SwitchState};
use prbfn::optimizer::CMatrix;

const FIXED_BITS: u32 = 400;

/// J0 by its power series in exact fixed-point arithmetic (2^-400 scale).
pub fn j0_oracle(x: f64) -> f64 {
    let one = BigInt::from(1) << FIXED_BITS;
    let (mantissa, exponent) = decompose(x.abs());
    // x scaled by 2^FIXED_BITS, exact for any f64 in range.
    let xs = shift(BigInt::from(mantissa), exponent + FIXED_BITS as i32);
    let q = (&xs * &xs) >> FIXED_BITS; // x^2 at scale 2^FIXED_BITS
    let mut term = one.clone();
    let mut sum = one.clone();
    let mut k: u64 = 1;
    loop {
        term = -(&term * &q) / (BigInt::from(4 * k * k) << FIXED_BITS);
        if term.is_zero() {
            break;
        }
        sum += &term;
        k += 1;
    }
    let top = &sum >> (FIXED_BITS - 60);
    top.to_f64().unwrap() / (1u64 << 60) as f64
}

fn decompose(x: f64) -> (u64, i32) {
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    }
}

fn shift(v: BigInt, by: i32) -> BigInt {
    if by >= 0 {
        v << by as u32
    } else {
        v >> (-by) as u32
    }
}

/// First positive zero of J0 by bisection on the oracle.
pub fn j0_first_root() -> f64 {
    let (mut lo, mut hi) = (2.0, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if j0_oracle(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Bessel target entry straight from the definition.
pub fn target_entry(aperture: f64, ports: usize, i: usize, j: usize) -> f64 {
    let lag = i.abs_diff(j) as f64;
    j0_oracle(2.0 * std::f64::consts::PI * lag * aperture / (ports - 1) as f64).abs()
}

/// `|| |B^H B| - C ||_F^2` with explicit loops.
pub fn objective_oracle(b: &CMatrix, c: &DMatrix<f64>) -> f64 {
    let n = b.ncols();
    let mut f = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut g = Complex64::new(0.0, 0.0);
            for r in 0..b.nrows() {
                g += b[(r, i)].conj() * b[(r, j)];
            }
            f += (g.norm() - c[(i, j)]).powi(2);
        }
    }
    f
}

/// Central differences of `objective_oracle` packed as `d/dRe + j d/dIm`.
pub fn fd_gradient(b: &CMatrix, c: &DMatrix<f64>, h: f64) -> CMatrix {
    let mut out = CMatrix::zeros(b.nrows(), b.ncols());
    for r in 0..b.nrows() {
        for k in 0..b.ncols() {
            let mut d = [0.0; 2];
            for (slot, dir) in d
                .iter_mut()
                .zip([Complex64::new(h, 0.0), Complex64::new(0.0, h)])
            {
                let mut plus = b.clone();
                plus[(r, k)] += dir;
                let mut minus = b.clone();
                minus[(r, k)] -= dir;
                *slot = (objective_oracle(&plus, c) - objective_oracle(&minus, c)) / (2.0 * h);
            }
            out[(r, k)] = Complex64::new(d[0], d[1]);
        }
    }
    out
}

/// Feed impedance from the full port system: drive each feed with a unit
/// voltage, solve for all currents with the loaded internal ports, and
/// invert the resulting feed admittance.
pub fn full_solve_oracle(
    net: &PixelNetwork,
    x: &SwitchState,
    sw: &SwitchModel,
    f_index: usize,
) -> CMatrix {
    let p = net.n_feed();
    let n = net.ports();
    let f = net.freqs_hz()[f_index];
    let mut a = net.z(f_index).clone();
    for (k, l) in x.loads(sw, f).into_iter().enumerate() {
        a[(p + k, p + k)] += l;
    }
    let mut rhs = CMatrix::zeros(n, p);
    for k in 0..p {
        rhs[(k, k)] = Complex64::new(1.0, 0.0);
    }
    let currents = a.lu().solve(&rhs).expect("nonsingular full system");
    let y = currents.rows(0, p).into_owned();
    y.try_inverse().expect("invertible feed admittance")
}

pub fn rel_err(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
