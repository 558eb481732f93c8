//! Touchstone v1 (`.sNp`) reader and writer for S and Z data.
//!
//! Z data in v1 files are normalized to the reference resistance `R`.
//! Frequency records start on a line with an odd token count (frequency plus
//! value pairs); the port count follows from the record length `1 + 2 n^2`.
//! Two-port records are ordered `N11 N21 N12 N22`, larger networks row by
//! row with at most four pairs per line.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;

use super::{s_to_z, z_to_s, PixelNetwork};
use crate::error::{Error, Result};
use crate::optimizer::CMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreqUnit {
    Hz,
    KHz,
    MHz,
    GHz,
}

impl FreqUnit {
    pub fn scale(self) -> f64 {
        match self {
            FreqUnit::Hz => 1.0,
            FreqUnit::KHz => 1e3,
            FreqUnit::MHz => 1e6,
            FreqUnit::GHz => 1e9,
        }
    }
}

impl fmt::Display for FreqUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FreqUnit::Hz => "Hz",
            FreqUnit::KHz => "kHz",
            FreqUnit::MHz => "MHz",
            FreqUnit::GHz => "GHz",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameter {
    S,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// Real and imaginary parts.
    Ri,
    /// Magnitude and angle in degrees.
    Ma,
    /// Magnitude in dB and angle in degrees.
    Db,
}

impl Format {
    fn decode(self, a: f64, b: f64) -> Complex64 {
        match self {
            Format::Ri => Complex64::new(a, b),
            Format::Ma => Complex64::from_polar(a, b.to_radians()),
            Format::Db => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
        }
    }

    fn encode(self, v: Complex64) -> (f64, f64) {
        match self {
            Format::Ri => (v.re, v.im),
            Format::Ma => (v.norm(), v.arg().to_degrees()),
            Format::Db => (
                20.0 * v.norm().max(f64::MIN_POSITIVE).log10(),
                v.arg().to_degrees(),
            ),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Ri => "RI",
            Format::Ma => "MA",
            Format::Db => "DB",
        })
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RI" => Ok(Format::Ri),
            "MA" => Ok(Format::Ma),
            "DB" => Ok(Format::Db),
            _ => Err(Error::Touchstone(format!("unknown number format {s:?}"))),
        }
    }
}

/// Parsed option line. Defaults follow the v1 convention `# GHz S MA R 50`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionLine {
    pub unit: FreqUnit,
    pub parameter: Parameter,
    pub format: Format,
    pub r: f64,
}

impl Default for OptionLine {
    fn default() -> Self {
        Self {
            unit: FreqUnit::GHz,
            parameter: Parameter::S,
            format: Format::Ma,
            r: 50.0,
        }
    }
}

impl OptionLine {
    fn parse(line: &str) -> Result<Self> {
        let mut opt = Self::default();
        let mut tokens = line.trim_start_matches('#').split_whitespace();
        while let Some(tok) = tokens.next() {
            match tok.to_ascii_uppercase().as_str() {
                "HZ" => opt.unit = FreqUnit::Hz,
                "KHZ" => opt.unit = FreqUnit::KHz,
                "MHZ" => opt.unit = FreqUnit::MHz,
                "GHZ" => opt.unit = FreqUnit::GHz,
                "S" => opt.parameter = Parameter::S,
                "Z" => opt.parameter = Parameter::Z,
                "Y" | "H" | "G" => {
                    return Err(Error::Touchstone(format!(
                        "unsupported parameter type {tok:?}"
                    )))
                }
                "RI" | "MA" | "DB" => opt.format = tok.parse()?,
                "R" => {
                    let v = tokens.next().ok_or_else(|| {
                        Error::Touchstone("option line: R without a value".into())
                    })?;
                    opt.r = v
                        .parse::<f64>()
                        .ok()
                        .filter(|r| r.is_finite() && *r > 0.0)
                        .ok_or_else(|| {
                            Error::Touchstone(format!(
                                "option line: bad reference resistance {v:?}"
                            ))
                        })?;
                }
                _ => {
                    return Err(Error::Touchstone(format!(
                        "option line: unexpected token {tok:?}"
                    )))
                }
            }
        }
        Ok(opt)
    }
}

impl fmt::Display for OptionLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.parameter {
            Parameter::S => "S",
            Parameter::Z => "Z",
        };
        write!(f, "# {} {p} {} R {}", self.unit, self.format, self.r)
    }
}

/// Network data in canonical form: frequencies in Hz, matrices in ohms (Z)
/// or dimensionless (S).
#[derive(Debug, Clone, PartialEq)]
pub struct TouchstoneData {
    pub parameter: Parameter,
    pub z0: f64,
    pub freqs_hz: Vec<f64>,
    pub matrices: Vec<CMatrix>,
}

impl TouchstoneData {
    pub fn ports(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.nrows())
    }

    pub fn into_network(self, n_feed: usize, source: impl Into<String>) -> Result<PixelNetwork> {
        let z = match self.parameter {
            Parameter::Z => self.matrices,
            Parameter::S => self
                .matrices
                .iter()
                .map(|s| s_to_z(s, self.z0))
                .collect::<Result<_>>()?,
        };
        PixelNetwork::new(n_feed, self.freqs_hz, z, self.z0, source)
    }

    pub fn from_network(net: &PixelNetwork, parameter: Parameter) -> Result<Self> {
        let matrices = (0..net.freqs_hz().len())
            .map(|k| match parameter {
                Parameter::Z => Ok(net.z(k).clone()),
                Parameter::S => z_to_s(net.z(k), net.z0()),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            parameter,
            z0: net.z0(),
            freqs_hz: net.freqs_hz().to_vec(),
            matrices,
        })
    }
}

fn strip_comment(line: &str) -> &str {
    line.split('!').next().unwrap_or("").trim()
}

fn port_count(tokens: usize) -> Option<usize> {
    if tokens < 3 || !(tokens - 1).is_multiple_of(2) {
        return None;
    }
    let n2 = (tokens - 1) / 2;
    let n = (n2 as f64).sqrt().round() as usize;
    (n * n == n2).then_some(n)
}

/// Parses Touchstone v1 text. `expected_ports` (from a `.sNp` extension)
/// is checked against the record length when given.
pub fn parse_touchstone(text: &str, expected_ports: Option<usize>) -> Result<TouchstoneData> {
    let mut option: Option<OptionLine> = None;
    let mut records: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if option.is_none() {
                option = Some(OptionLine::parse(line)?);
            }
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::Touchstone(format!("line {}: bad number {t:?}", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() % 2 == 1 {
            records.push(values);
        } else {
            records
                .last_mut()
                .ok_or_else(|| {
                    Error::Touchstone(format!(
                        "line {}: data before the first frequency",
                        lineno + 1
                    ))
                })?
                .extend(values);
        }
    }
    let opt = option.unwrap_or_default();
    let first = records
        .first()
        .ok_or_else(|| Error::Touchstone("no data records".into()))?;
    let n = port_count(first.len()).ok_or_else(|| {
        Error::Touchstone(format!(
            "record of {} numbers is not 1 + 2 n^2",
            first.len()
        ))
    })?;
    if let Some(expected) = expected_ports {
        if expected != n {
            return Err(Error::Touchstone(format!(
                "file holds {n}-port data, expected {expected}"
            )));
        }
    }
    let norm = match opt.parameter {
        Parameter::S => 1.0,
        Parameter::Z => opt.r,
    };
    let mut freqs_hz = Vec::with_capacity(records.len());
    let mut matrices = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        if rec.len() != first.len() {
            return Err(Error::Touchstone(format!(
                "record {} has {} numbers, expected {}",
                k + 1,
                rec.len(),
                first.len()
            )));
        }
        let f = rec[0] * opt.unit.scale();
        if let Some(&prev) = freqs_hz.last() {
            if f <= prev {
                return Err(Error::Touchstone(format!(
                    "frequency {f} Hz does not increase (previous {prev} Hz)"
                )));
            }
        }
        freqs_hz.push(f);
        let mut m = CMatrix::zeros(n, n);
        for (idx, pair) in rec[1..].chunks_exact(2).enumerate() {
            let (i, j) = if n == 2 {
                (idx % 2, idx / 2)
            } else {
                (idx / n, idx % n)
            };
            m[(i, j)] = opt.format.decode(pair[0], pair[1]) * norm;
        }
        matrices.push(m);
    }
    Ok(TouchstoneData {
        parameter: opt.parameter,
        z0: opt.r,
        freqs_hz,
        matrices,
    })
}

/// Port count from a `.sNp` / `.zNp` extension.
pub fn ports_from_extension(path: &Path) -> Option<usize> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    let digits = ext.strip_prefix(['s', 'z'])?.strip_suffix('p')?;
    digits.parse().ok()
}

pub fn read_touchstone(path: &Path) -> Result<TouchstoneData> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Touchstone(format!("cannot read {}: {e}", path.display())))?;
    parse_touchstone(&text, ports_from_extension(path))
}

/// Renders `data` as Touchstone v1 text.
pub fn write_touchstone(data: &TouchstoneData, unit: FreqUnit, format: Format) -> Result<String> {
    let n = data.ports();
    if n == 0 || data.freqs_hz.len() != data.matrices.len() {
        return Err(Error::Touchstone("nothing to write".into()));
    }
    let opt = OptionLine {
        unit,
        parameter: data.parameter,
        format,
        r: data.z0,
    };
    let norm = match data.parameter {
        Parameter::S => 1.0,
        Parameter::Z => data.z0,
    };
    let mut out = String::new();
    let kind = match data.parameter {
        Parameter::S => "S",
        Parameter::Z => "Z",
    };
    writeln!(out, "! {n}-port {kind} parameters written by prbfn").unwrap();
    writeln!(out, "{opt}").unwrap();
    for (f, m) in data.freqs_hz.iter().zip(&data.matrices) {
        if m.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "expected {n}x{n}, got {:?}",
                m.shape()
            )));
        }
        let pair = |i: usize, j: usize| {
            let (a, b) = format.encode(m[(i, j)] / norm);
            format!("{a} {b}")
        };
        let mut line = format!("{}", f / unit.scale());
        if n == 2 {
            for (i, j) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                line.push(' ');
                line.push_str(&pair(i, j));
            }
            writeln!(out, "{line}").unwrap();
            continue;
        }
        for i in 0..n {
            for (c, j) in (0..n).enumerate() {
                if c > 0 && c % 4 == 0 {
                    writeln!(out, "{line}").unwrap();
                    line = String::new();
                }
                if !line.is_empty() {
                    line.push(' ');
                }
                line.push_str(&pair(i, j));
            }
            writeln!(out, "{line}").unwrap();
            line = String::new();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_port_zero() {
        let d = parse_touchstone("# GHz S RI R 50\n2.6 0 0\n", None).unwrap();
        assert_eq!(d.freqs_hz, vec![2.6e9]);
        assert_eq!(d.matrices[0][(0, 0)], Complex64::new(0.0, 0.0));
        assert_eq!(d.parameter, Parameter::S);
    }

    #[test]
    fn ma_angle_180() {
        let d = parse_touchstone("# MHz S MA R 50\n100 1 180\n", None).unwrap();
        assert!((d.matrices[0][(0, 0)] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(d.freqs_hz, vec![1e8]);
    }

    #[test]
    fn two_port_ordering() {
        let d = parse_touchstone("# Hz S RI R 50\n1 11 0 21 0 12 0 22 0\n", None).unwrap();
        let m = &d.matrices[0];
        assert_eq!(
            (m[(0, 0)].re, m[(1, 0)].re, m[(0, 1)].re, m[(1, 1)].re),
            (11.0, 21.0, 12.0, 22.0)
        );
    }

    #[test]
    fn three_port_rows_and_comments() {
        let text = "! header\n# GHz S RI R 50\n1 1 0 2 0 3 0 ! row 1\n 4 0 5 0 6 0\n 7 0 8 0 9 0\n";
        let m = &parse_touchstone(text, Some(3)).unwrap().matrices[0];
        assert_eq!(m[(0, 2)].re, 3.0);
        assert_eq!(m[(2, 0)].re, 7.0);
    }

    #[test]
    fn z_data_is_normalized() {
        let d = parse_touchstone("# Hz Z RI R 50\n1 1 0\n", None).unwrap();
        assert_eq!(d.matrices[0][(0, 0)].re, 50.0);
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_touchstone("# GHz Y RI R 50\n1 0 0\n", None).is_err());
        assert!(parse_touchstone("# GHz S RI R\n1 0 0\n", None).is_err());
        assert!(parse_touchstone("# GHz S XX R 50\n1 0 0\n", None).is_err());
        assert!(parse_touchstone("# GHz S RI R 50\n1 0 0\n2 0 0 0 0 0 0 0 0\n", None).is_err());
        assert!(parse_touchstone("# GHz S RI R 50\n2 0 0\n1 0 0\n", None).is_err());
        assert!(parse_touchstone("# GHz S RI R 50\n2 0 0\n2 0 0\n", None).is_err());
        assert!(parse_touchstone("# GHz S RI R 50\n1 0 0\n", Some(3)).is_err());
        assert!(parse_touchstone("# GHz S RI R 50\n1 0 0 0 0\n", None).is_err());
        assert!(parse_touchstone("", None).is_err());
        assert!(parse_touchstone("# GHz S RI R 50\n1 0 x\n", None).is_err());
    }

    #[test]
    fn extension_ports() {
        assert_eq!(ports_from_extension(Path::new("cell.s23p")), Some(23));
        assert_eq!(ports_from_extension(Path::new("cell.Z3P")), Some(3));
        assert_eq!(ports_from_extension(Path::new("cell.txt")), None);
    }

    #[test]
    fn written_lines_wrap_at_four_pairs() {
        let m = CMatrix::from_fn(5, 5, |i, j| Complex64::new(i as f64, j as f64));
        let d = TouchstoneData {
            parameter: Parameter::S,
            z0: 50.0,
            freqs_hz: vec![1e9],
            matrices: vec![m],
        };
        let text = write_touchstone(&d, FreqUnit::GHz, Format::Ri).unwrap();
        assert!(text.starts_with('!'));
        let data: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with(['!', '#']))
            .collect();
        assert_eq!(data.len(), 10);
        assert_eq!(data[0].split_whitespace().count(), 9);
        assert_eq!(data[1].split_whitespace().count(), 2);
        assert_eq!(parse_touchstone(&text, Some(5)).unwrap(), d);
    }
}
