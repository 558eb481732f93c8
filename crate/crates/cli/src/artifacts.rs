//! Reading and writing run artifacts. JSON is pretty-printed, CSV uses the
//! shortest round-trip decimal form of every number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;
use crate::Failure;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const C_OBJ: &str = "c_obj.csv";
pub const SOLVE_REPORT: &str = "solve_report.json";
pub const NA_SWEEP: &str = "na_sweep.csv";
pub const CASCADE_PLAN: &str = "cascade_plan.json";
pub const VERIFY_SUMMARY: &str = "verify_summary.json";
pub const FAMA: &str = "fama.csv";
pub const CORR_LAG: &str = "corr_lag.csv";
pub const ACHIEVED_CORR: &str = "achieved_corr.csv";

pub fn stateset_name(unit: usize) -> String {
    format!("stateset_unit{unit}.json")
}

pub fn path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.out_dir.join(name)
}

fn io_error(path: &Path, err: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {err}", path.display()))
}

/// Creates the output directory and writes the resolved configuration.
pub fn prepare_out_dir(cfg: &RunConfig) -> Result<(), Failure> {
    let dir = &cfg.paths.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    write_json(cfg, RESOLVED_CONFIG, cfg)
}

pub fn write_json<T: Serialize>(cfg: &RunConfig, name: &str, value: &T) -> Result<(), Failure> {
    let p = path(cfg, name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error(&p, e))?;
    text.push('\n');
    std::fs::write(&p, text).map_err(|e| io_error(&p, e))
}

pub fn read_json<T: DeserializeOwned>(cfg: &RunConfig, name: &str) -> Result<T, Failure> {
    let p = path(cfg, name);
    let text = std::fs::read_to_string(&p).map_err(|e| Failure::missing(&p, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Missing(format!("{}: unreadable artifact: {e}", p.display())))
}

/// CSV table with a mandatory header row.
pub struct Csv {
    text: String,
    columns: usize,
}

/// A CSV cell.
pub enum Cell {
    Int(usize),
    Num(f64),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: impl IntoIterator<Item = Cell>) {
        let mut n = 0;
        for (k, cell) in cells.into_iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            match cell {
                Cell::Int(v) => write!(self.text, "{v}").unwrap(),
                Cell::Num(v) => write!(self.text, "{v}").unwrap(),
            }
            n += 1;
        }
        debug_assert_eq!(n, self.columns, "row width must match the header");
        self.text.push('\n');
    }

    pub fn write(&self, cfg: &RunConfig, name: &str) -> Result<(), Failure> {
        let p = path(cfg, name);
        std::fs::write(&p, &self.text).map_err(|e| io_error(&p, e))
    }
}
