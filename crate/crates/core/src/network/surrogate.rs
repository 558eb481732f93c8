//! Seeded stand-in for an EM-simulated pixel cell.
//!
//! A symmetric unitary `S0(f) = U D(f) U^T` is built from the unitary factor
//! of `I + coupling * G` (complex Gaussian `G`) and per-mode phases that
//! drift linearly with frequency. Scaling by `1 - loss` makes it strictly
//! passive, after which it is converted to impedances.

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{reduce_with_loads, s_to_z, PixelNetwork, SwitchModel, SwitchState, UNIT_FEED_PORTS};
use crate::cascade::UnitState;
use crate::error::{Error, Result};
use crate::optimizer::CMatrix;
use crate::seed::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateParams {
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(default = "default_coupling")]
    pub coupling_scale: f64,
    #[serde(default = "default_loss")]
    pub loss_scale: f64,
}

fn default_coupling() -> f64 {
    1.0
}

fn default_loss() -> f64 {
    0.1
}

impl SurrogateParams {
    pub fn new(q: usize) -> Self {
        Self {
            q,
            coupling_scale: default_coupling(),
            loss_scale: default_loss(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coupling_scale.is_finite() && self.coupling_scale >= 0.0) {
            return Err(Error::param(
                "coupling_scale",
                format!("must be finite and >= 0, got {}", self.coupling_scale),
            ));
        }
        if !(self.loss_scale > 0.0 && self.loss_scale < 1.0) {
            return Err(Error::param(
                "loss_scale",
                format!("must lie in (0, 1), got {}", self.loss_scale),
            ));
        }
        Ok(())
    }
}

fn complex_normal(rng: &mut Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Lossless symmetric scattering matrices for every frequency.
fn lossless_family(ports: usize, coupling: f64, freqs_hz: &[f64], rng: &mut Rng) -> Vec<CMatrix> {
    let g = CMatrix::from_fn(ports, ports, |_, _| complex_normal(rng));
    let a = CMatrix::identity(ports, ports) + g * Complex64::new(coupling, 0.0);
    let u = a.qr().q();
    let phase0: Vec<f64> = (0..ports)
        .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
        .collect();
    let drift: Vec<f64> = (0..ports).map(|_| rng.random::<f64>()).collect();
    let f_ref = freqs_hz.iter().sum::<f64>() / freqs_hz.len() as f64;
    freqs_hz
        .iter()
        .map(|&f| {
            let t = if f_ref > 0.0 {
                (f - f_ref) / f_ref
            } else {
                0.0
            };
            let d = CMatrix::from_diagonal(&nalgebra::DVector::from_fn(ports, |k, _| {
                Complex64::from_polar(1.0, phase0[k] + std::f64::consts::TAU * drift[k] * t)
            }));
            &u * d * u.transpose()
        })
        .collect()
}

fn symmetrize(z: &CMatrix) -> CMatrix {
    (z + z.transpose()) * Complex64::new(0.5, 0.0)
}

fn validate_freqs(freqs_hz: &[f64]) -> Result<()> {
    if freqs_hz.is_empty() {
        return Err(Error::param("freqs", "need at least one frequency"));
    }
    Ok(())
}

/// Random reciprocal, strictly passive `(3 + Q)`-port cell.
pub fn surrogate_cell(
    params: &SurrogateParams,
    freqs_hz: &[f64],
    z0: f64,
    seed: u64,
) -> Result<PixelNetwork> {
    params.validate()?;
    validate_freqs(freqs_hz)?;
    let ports = UNIT_FEED_PORTS + params.q;
    let mut rng = rng_from_seed(seed);
    let scale = Complex64::new(1.0 - params.loss_scale, 0.0);
    let z = lossless_family(ports, params.coupling_scale, freqs_hz, &mut rng)
        .into_iter()
        .map(|s| s_to_z(&(s * scale), z0).map(|z| symmetrize(&z)))
        .collect::<Result<Vec<_>>>()?;
    let source = format!(
        "surrogate(Q={}, coupling_scale={}, loss_scale={}, seed={seed})",
        params.q, params.coupling_scale, params.loss_scale
    );
    PixelNetwork::new(UNIT_FEED_PORTS, freqs_hz.to_vec(), z, z0, source)
}

/// Full-port permutation: feed port 1 fixed, feeds 2 and 3 swapped,
/// internal port `q` sent to `perm[q]`.
fn port_permutation(perm: &[usize]) -> Vec<usize> {
    let mut p = vec![0, 2, 1];
    p.extend(perm.iter().map(|&k| k + UNIT_FEED_PORTS));
    p
}

fn permute(m: &CMatrix, p: &[usize]) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(p[i], p[j])])
}

pub(crate) fn check_involution(perm: &[usize]) -> Result<()> {
    let q = perm.len();
    if perm
        .iter()
        .enumerate()
        .any(|(i, &k)| k >= q || perm[k] != i)
    {
        return Err(Error::NotInvolution(q));
    }
    Ok(())
}

/// Cell that is invariant under swapping the two output ports together with
/// the internal-port involution `perm`, so that `mirror_state` maps a
/// design for `(amp1, amp2, dphase)` onto one for `(amp2, amp1, -dphase)`.
pub fn symmetric_surrogate_cell(
    params: &SurrogateParams,
    perm: &[usize],
    freqs_hz: &[f64],
    z0: f64,
    seed: u64,
) -> Result<PixelNetwork> {
    params.validate()?;
    validate_freqs(freqs_hz)?;
    if perm.len() != params.q {
        return Err(Error::DimensionMismatch(format!(
            "permutation of length {} for Q = {}",
            perm.len(),
            params.q
        )));
    }
    check_involution(perm)?;
    let ports = UNIT_FEED_PORTS + params.q;
    let p = port_permutation(perm);
    let mut rng = rng_from_seed(seed);
    let scale = Complex64::new(0.5 * (1.0 - params.loss_scale), 0.0);
    let z = lossless_family(ports, params.coupling_scale, freqs_hz, &mut rng)
        .into_iter()
        .map(|s0| {
            let s = (&s0 + permute(&s0, &p)) * scale;
            let z = s_to_z(&s, z0)?;
            Ok(symmetrize(
                &((&z + permute(&z, &p)) * Complex64::new(0.5, 0.0)),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let source = format!(
        "symmetric_surrogate(Q={}, coupling_scale={}, loss_scale={}, seed={seed})",
        params.q, params.coupling_scale, params.loss_scale
    );
    PixelNetwork::new(UNIT_FEED_PORTS, freqs_hz.to_vec(), z, z0, source)
}

/// Matched three-port with `S21 = gain * u1`, `S31 = gain * u2` and no
/// output coupling, where `(u1, u2)` is the unit output of `target`.
pub fn ideal_unit_scattering(target: &UnitState, gain: f64) -> CMatrix {
    let [u1, u2] = target.output();
    let z = Complex64::new(0.0, 0.0);
    let g = Complex64::new(gain, 0.0);
    CMatrix::from_row_slice(3, 3, &[z, g * u1, g * u2, g * u1, z, z, g * u2, z, z])
}

/// Surrogate whose feed block is rewritten so that switch vector `x_star`
/// reduces exactly to [`ideal_unit_scattering`] of `target` at every
/// frequency. The internal blocks come from [`surrogate_cell`]; the full
/// network stays reciprocal but is not guaranteed to be passive.
#[allow(clippy::too_many_arguments)]
pub fn planted_cell(
    params: &SurrogateParams,
    x_star: &SwitchState,
    target: &UnitState,
    gain: f64,
    sw: &SwitchModel,
    freqs_hz: &[f64],
    z0: f64,
    seed: u64,
) -> Result<PixelNetwork> {
    if !(gain > 0.0 && gain < 1.0) {
        return Err(Error::param(
            "gain",
            format!("must lie in (0, 1), got {gain}"),
        ));
    }
    if x_star.len() != params.q {
        return Err(Error::DimensionMismatch(format!(
            "planted state has {} bits for Q = {}",
            x_star.len(),
            params.q
        )));
    }
    let base = surrogate_cell(params, freqs_hz, z0, seed)?;
    let z_target = s_to_z(&ideal_unit_scattering(target, gain), z0)?;
    let mut z = Vec::with_capacity(freqs_hz.len());
    for (k, &f) in freqs_hz.iter().enumerate() {
        let reduced = reduce_with_loads(&base, &x_star.loads(sw, f), k, &x_star.to_string())?;
        let mut m = base.z(k).clone();
        let p = UNIT_FEED_PORTS;
        let feed = m.view((0, 0), (p, p)).into_owned() - reduced + &z_target;
        m.view_mut((0, 0), (p, p)).copy_from(&symmetrize(&feed));
        z.push(m);
    }
    let source = format!(
        "planted_surrogate(Q={}, coupling_scale={}, loss_scale={}, seed={seed}, x_star={x_star})",
        params.q, params.coupling_scale, params.loss_scale
    );
    PixelNetwork::new(UNIT_FEED_PORTS, freqs_hz.to_vec(), z, z0, source)
}
