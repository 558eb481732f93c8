//! Multiport impedance networks of a pixel unit cell.
//!
//! Ports are ordered feed ports first, then the `Q` internal pixel ports
//! that carry switches. With internal ports terminated in `Z^L(x)`, the feed
//! impedance is `Z_PR = Z_FF - Z_FI (Z_II + Z^L)^-1 Z_IF`.

mod surrogate;
pub mod touchstone;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::optimizer::CMatrix;

pub(crate) use surrogate::check_involution;
pub use surrogate::{
    ideal_unit_scattering, planted_cell, surrogate_cell, symmetric_surrogate_cell, SurrogateParams,
};

pub const DEFAULT_Z0: f64 = 50.0;
/// Condition number above which `Z_II + Z^L` is treated as singular.
pub const SINGULAR_COND: f64 = 1e12;

/// Feed ports of a one-input/two-output unit cell.
pub const UNIT_FEED_PORTS: usize = 3;

/// `points` frequencies evenly spread over `center * (1 +- fractional_bw / 2)`.
pub fn frequency_grid(center_hz: f64, fractional_bw: f64, points: usize) -> Result<Vec<f64>> {
    if !(center_hz.is_finite() && center_hz > 0.0) {
        return Err(Error::param(
            "center_hz",
            format!("must be positive, got {center_hz}"),
        ));
    }
    if !(fractional_bw.is_finite() && (0.0..2.0).contains(&fractional_bw)) {
        return Err(Error::param(
            "fractional_bw",
            format!("must lie in [0, 2), got {fractional_bw}"),
        ));
    }
    match points {
        0 => Err(Error::param("points", "need at least one frequency")),
        1 => Ok(vec![center_hz]),
        _ if fractional_bw == 0.0 => Err(Error::param(
            "fractional_bw",
            "zero bandwidth with several points",
        )),
        _ => {
            let lo = center_hz * (1.0 - fractional_bw / 2.0);
            let step = center_hz * fractional_bw / (points - 1) as f64;
            Ok((0..points).map(|k| lo + step * k as f64).collect())
        }
    }
}

/// Impedance matrices of a `(n_feed + Q)`-port network over a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelNetwork {
    n_feed: usize,
    freqs_hz: Vec<f64>,
    z: Vec<CMatrix>,
    z0: f64,
    source: String,
}

impl PixelNetwork {
    pub fn new(
        n_feed: usize,
        freqs_hz: Vec<f64>,
        z: Vec<CMatrix>,
        z0: f64,
        source: impl Into<String>,
    ) -> Result<Self> {
        if freqs_hz.is_empty() || freqs_hz.len() != z.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} frequencies, {} matrices",
                freqs_hz.len(),
                z.len()
            )));
        }
        if freqs_hz.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::param(
                "freqs",
                "frequencies must be finite and non-negative",
            ));
        }
        if freqs_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param(
                "freqs",
                "frequencies must be strictly increasing",
            ));
        }
        if !(z0.is_finite() && z0 > 0.0) {
            return Err(Error::param("z0", format!("must be positive, got {z0}")));
        }
        let ports = z[0].nrows();
        if ports < n_feed || n_feed == 0 {
            return Err(Error::param(
                "n_feed",
                format!("{n_feed} feed ports in a {ports}-port network"),
            ));
        }
        for m in &z {
            if m.shape() != (ports, ports) {
                return Err(Error::DimensionMismatch(format!(
                    "expected {ports}x{ports}, got {:?}",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::param("Z", "non-finite entry"));
            }
        }
        Ok(Self {
            n_feed,
            freqs_hz,
            z,
            z0,
            source: source.into(),
        })
    }

    pub fn n_feed(&self) -> usize {
        self.n_feed
    }

    /// Internal (switch) port count.
    pub fn q(&self) -> usize {
        self.ports() - self.n_feed
    }

    pub fn ports(&self) -> usize {
        self.z[0].nrows()
    }

    pub fn freqs_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn z(&self, f_index: usize) -> &CMatrix {
        &self.z[f_index]
    }

    /// Largest `|Z - Z^T|` entry over all frequencies.
    pub fn reciprocity_error(&self) -> f64 {
        self.z
            .iter()
            .map(|m| {
                (m - m.transpose())
                    .iter()
                    .map(|v| v.norm())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn check_reciprocal(&self, tol: f64) -> Result<()> {
        let err = self.reciprocity_error();
        if err > tol {
            return Err(Error::param(
                "Z",
                format!("network is not reciprocal (|Z - Z^T| = {err:e})"),
            ));
        }
        Ok(())
    }

    pub fn to_doc(&self) -> NetworkDoc {
        NetworkDoc {
            source: self.source.clone(),
            n_feed: self.n_feed,
            q: self.q(),
            z0: self.z0,
            freqs_hz: self.freqs_hz.clone(),
            z: self
                .z
                .iter()
                .map(|m| {
                    (0..m.nrows())
                        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
                        .map(|(i, j)| [m[(i, j)].re, m[(i, j)].im])
                        .collect()
                })
                .collect(),
        }
    }
}

/// JSON dump of a [`PixelNetwork`]; each `z` entry is one frequency in
/// row-major order with `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub source: String,
    pub n_feed: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub z0: f64,
    pub freqs_hz: Vec<f64>,
    pub z: Vec<Vec<[f64; 2]>>,
}

/// Series R-L-C two-terminal element. Absent reactive parts are shorted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesCircuit {
    pub resistance_ohm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inductance_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacitance_f: Option<f64>,
}

impl SeriesCircuit {
    pub fn validate(&self) -> Result<()> {
        if !(self.resistance_ohm.is_finite() && self.resistance_ohm >= 0.0) {
            return Err(Error::param(
                "resistance_ohm",
                format!("must be finite and >= 0, got {}", self.resistance_ohm),
            ));
        }
        if let Some(l) = self.inductance_h {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::param(
                    "inductance_h",
                    format!("must be finite and >= 0, got {l}"),
                ));
            }
        }
        if let Some(c) = self.capacitance_f {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::param(
                    "capacitance_f",
                    format!("must be finite and > 0, got {c}"),
                ));
            }
        }
        Ok(())
    }

    pub fn impedance(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz;
        let mut x = 0.0;
        if let Some(l) = self.inductance_h {
            x += w * l;
        }
        if let Some(c) = self.capacitance_f {
            x -= 1.0 / (w * c);
        }
        Complex64::new(self.resistance_ohm, x)
    }
}

/// Equivalent circuits of a PIN switch in its two states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchModel {
    pub on: SeriesCircuit,
    pub off: SeriesCircuit,
}

impl Default for SwitchModel {
    fn default() -> Self {
        Self {
            on: SeriesCircuit {
                resistance_ohm: 1.5,
                inductance_h: Some(0.7e-9),
                capacitance_f: None,
            },
            off: SeriesCircuit {
                resistance_ohm: 1.5,
                inductance_h: None,
                capacitance_f: Some(0.15e-12),
            },
        }
    }
}

impl SwitchModel {
    pub fn validate(&self) -> Result<()> {
        self.on.validate()?;
        self.off.validate()
    }

    pub fn impedance(&self, on: bool, freq_hz: f64) -> Complex64 {
        if on {
            self.on.impedance(freq_hz)
        } else {
            self.off.impedance(freq_hz)
        }
    }
}

/// Binary switch vector `x`; bit `q` set means switch `q` conducts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SwitchState {
    bits: Vec<bool>,
}

impl SwitchState {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(q: usize) -> Self {
        Self {
            bits: vec![false; q],
        }
    }

    /// Bit `q` is bit `q` of `code` (bit 0 first).
    pub fn from_code(code: u64, q: usize) -> Self {
        Self {
            bits: (0..q).map(|k| (code >> k) & 1 == 1).collect(),
        }
    }

    pub fn code(&self) -> u64 {
        self.bits
            .iter()
            .enumerate()
            .fold(0, |acc, (k, &b)| acc | (u64::from(b) << k))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, q: usize) -> bool {
        self.bits[q]
    }

    pub fn flip(&mut self, q: usize) {
        self.bits[q] = !self.bits[q];
    }

    pub fn loads(&self, sw: &SwitchModel, freq_hz: f64) -> Vec<Complex64> {
        self.bits
            .iter()
            .map(|&b| sw.impedance(b, freq_hz))
            .collect()
    }
}

impl fmt::Display for SwitchState {
    /// Bits grouped in nibbles, e.g. `1010 1011 0010`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, &b) in self.bits.iter().enumerate() {
            if k > 0 && k % 4 == 0 {
                f.write_str(" ")?;
            }
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for SwitchState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::param(
                    "switch_state",
                    format!("unexpected character {other:?}"),
                )),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }
}

impl Serialize for SwitchState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SwitchState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn one_norm(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse of `a` together with its 1-norm condition number.
fn inverse_with_cond(a: &CMatrix) -> Option<(CMatrix, f64)> {
    let inv = a.clone().lu().try_inverse()?;
    let cond = one_norm(a) * one_norm(&inv);
    (cond.is_finite() && inv.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
        .then_some((inv, cond))
}

/// Feed-port impedance with internal ports terminated in `loads`.
pub fn reduce_with_loads(
    net: &PixelNetwork,
    loads: &[Complex64],
    f_index: usize,
    state_label: &str,
) -> Result<CMatrix> {
    let p = net.n_feed;
    let q = net.q();
    if loads.len() != q {
        return Err(Error::DimensionMismatch(format!(
            "{} loads for {q} internal ports",
            loads.len()
        )));
    }
    if f_index >= net.freqs_hz.len() {
        return Err(Error::param(
            "f_index",
            format!(
                "{f_index} out of range ({} frequencies)",
                net.freqs_hz.len()
            ),
        ));
    }
    let z = &net.z[f_index];
    let z_ff = z.view((0, 0), (p, p)).into_owned();
    if q == 0 {
        return Ok(z_ff);
    }
    let mut inner = z.view((p, p), (q, q)).into_owned();
    for (k, l) in loads.iter().enumerate() {
        inner[(k, k)] += l;
    }
    let singular = |cond: f64| Error::SingularReduction {
        freq_hz: net.freqs_hz[f_index],
        state: state_label.to_string(),
        cond,
    };
    let (inv, cond) = inverse_with_cond(&inner).ok_or_else(|| singular(f64::INFINITY))?;
    if cond > SINGULAR_COND {
        return Err(singular(cond));
    }
    let z_fi = z.view((0, p), (p, q));
    let z_if = z.view((p, 0), (q, p));
    Ok(z_ff - z_fi * (inv * z_if))
}

/// `Z_PR` for switch vector `x` at frequency index `f_index`.
pub fn reduce_network(
    net: &PixelNetwork,
    x: &SwitchState,
    sw: &SwitchModel,
    f_index: usize,
) -> Result<CMatrix> {
    if x.len() != net.q() {
        return Err(Error::DimensionMismatch(format!(
            "switch state has {} bits, network has Q = {}",
            x.len(),
            net.q()
        )));
    }
    let f = *net
        .freqs_hz
        .get(f_index)
        .ok_or_else(|| Error::param("f_index", format!("{f_index} out of range")))?;
    reduce_with_loads(net, &x.loads(sw, f), f_index, &x.to_string())
}

/// Reduced scattering matrix of the feed ports.
pub fn reduced_scattering(
    net: &PixelNetwork,
    x: &SwitchState,
    sw: &SwitchModel,
    f_index: usize,
) -> Result<CMatrix> {
    z_to_s(&reduce_network(net, x, sw, f_index)?, net.z0)
}

fn check_square(m: &CMatrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {:?}",
            m.shape()
        )));
    }
    Ok(())
}

/// `S = (Z - Z0 I)(Z + Z0 I)^-1`.
pub fn z_to_s(z: &CMatrix, z0: f64) -> Result<CMatrix> {
    check_square(z, "Z")?;
    let id = CMatrix::identity(z.nrows(), z.nrows()) * Complex64::new(z0, 0.0);
    let (inv, cond) =
        inverse_with_cond(&(z + &id)).ok_or_else(|| Error::Singular("Z + Z0 I".into()))?;
    if cond > SINGULAR_COND {
        return Err(Error::Singular(format!(
            "Z + Z0 I (condition number {cond:e})"
        )));
    }
    Ok((z - id) * inv)
}

/// `Z = Z0 (I + S)(I - S)^-1`.
pub fn s_to_z(s: &CMatrix, z0: f64) -> Result<CMatrix> {
    check_square(s, "S")?;
    let id = CMatrix::identity(s.nrows(), s.nrows());
    let (inv, cond) =
        inverse_with_cond(&(&id - s)).ok_or_else(|| Error::Singular("I - S".into()))?;
    if cond > SINGULAR_COND {
        return Err(Error::Singular(format!(
            "I - S (condition number {cond:e})"
        )));
    }
    Ok((id + s) * inv * Complex64::new(z0, 0.0))
}

/// `(S21, S31)`: output current ratios of a matched one-to-two unit.
pub fn transmissions(s: &CMatrix) -> Result<(Complex64, Complex64)> {
    if s.shape() != (3, 3) {
        return Err(Error::DimensionMismatch(format!(
            "expected a 3x3 scattering matrix, got {:?}",
            s.shape()
        )));
    }
    Ok((s[(1, 0)], s[(2, 0)]))
}

pub fn max_singular_value(m: &CMatrix) -> f64 {
    m.clone().singular_values().max()
}

/// Real matrix of magnitudes, used in reports.
pub fn magnitudes(m: &CMatrix) -> DMatrix<f64> {
    m.map(|v| v.norm())
}
