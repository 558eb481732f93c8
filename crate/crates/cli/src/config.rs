//! Run configuration: one JSON document, unknown keys rejected, every
//! default written back out in `resolved_config.json`.

use std::path::{Path, PathBuf};

use prbfn::cell::{CellObjective, SearchMethod, MAX_EXHAUSTIVE_Q, MAX_Q};
use prbfn::channel::LagOptions;
use prbfn::fas::{min_output_ports, FasParams};
use prbfn::network::{frequency_grid, SurrogateParams, SwitchModel};
use prbfn::optimizer::{PgdOptions, Tolerance};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub fas: FasConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub cascade: CascadeConfig,
    #[serde(default)]
    pub cell: CellConfig,
    #[serde(default)]
    pub switch: SwitchModel,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FasConfig {
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "N")]
    pub n: usize,
    /// Output ports of the network; defaults to the smallest power of two
    /// covering the aperture (at least 2).
    #[serde(rename = "N_A", default)]
    pub n_a: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    pub epsilon0: f64,
    /// Stopping tolerance on the relative error.
    pub rel_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = PgdOptions::default();
        let rel_tol = match d.tolerance {
            Tolerance::Relative(r) => r,
            Tolerance::Absolute(_) => 1e-7,
        };
        Self {
            eta: d.step,
            max_iter: d.max_iter,
            restarts: d.restarts,
            seed: d.seed,
            epsilon0: d.accept_epsilon,
            rel_tol,
        }
    }
}

impl OptimizerConfig {
    pub fn pgd(&self) -> PgdOptions {
        PgdOptions {
            step: self.eta,
            tolerance: Tolerance::Relative(self.rel_tol),
            max_iter: self.max_iter,
            restarts: self.restarts,
            seed: self.seed,
            accept_epsilon: self.epsilon0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeConfig {
    pub spdt_loss_db: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            spdt_loss_db: prbfn::cascade::DEFAULT_SPDT_LOSS_DB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellConfig {
    #[serde(rename = "Q")]
    pub q: usize,
    pub c1: f64,
    pub c2: f64,
    pub t_s_db: f64,
    pub t_m_db: f64,
    pub t_loss: f64,
    pub method: SearchMethod,
    pub budget: usize,
    pub seed: u64,
    pub center_freq_hz: f64,
    pub band_fraction: f64,
    pub n_freq: usize,
    /// Swap bits `1..=g` with `g+1..=2g` to derive the second half of the
    /// states; only meaningful for mirror-symmetric cells.
    pub mirror_group: Option<usize>,
    pub surrogate: SurrogateConfig,
}

impl Default for CellConfig {
    fn default() -> Self {
        let obj = CellObjective::default();
        Self {
            q: 20,
            c1: obj.c1,
            c2: obj.c2,
            t_s_db: obj.t_s_db,
            t_m_db: obj.t_m_db,
            t_loss: obj.t_loss,
            method: SearchMethod::Annealing,
            budget: 2000,
            seed: 0,
            center_freq_hz: 2.6e9,
            band_fraction: 0.05,
            n_freq: 21,
            mirror_group: None,
            surrogate: SurrogateConfig::default(),
        }
    }
}

impl CellConfig {
    pub fn objective(&self) -> CellObjective {
        CellObjective {
            c1: self.c1,
            c2: self.c2,
            t_s_db: self.t_s_db,
            t_m_db: self.t_m_db,
            t_loss: self.t_loss,
        }
    }

    pub fn surrogate_params(&self) -> SurrogateParams {
        SurrogateParams {
            q: self.q,
            coupling_scale: self.surrogate.coupling_scale,
            loss_scale: self.surrogate.loss_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub coupling_scale: f64,
    pub loss_scale: f64,
    /// Seed of the stand-in network; `--seed` leaves it alone so the same
    /// cell is searched under every run seed.
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        let p = SurrogateParams::new(1);
        Self {
            coupling_scale: p.coupling_scale,
            loss_scale: p.loss_scale,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub users: usize,
    pub locations: usize,
    pub seed: u64,
    /// Spacing of the radiating elements in wavelengths; `null` means
    /// uncorrelated elements (K = I).
    pub antenna_spacing: Option<f64>,
    pub lag: LagOptions,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            t: 10_000,
            users: 2,
            locations: 1,
            seed: 0,
            antenna_spacing: None,
            lag: LagOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamSource {
    /// The optimized current matrix from `design`.
    #[default]
    Designed,
    /// Currents composed from the realized switch states at the center frequency.
    Realized,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub b_source: BeamSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub touchstone_in: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            touchstone_in: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{field}: {reason}"))
}

fn check(ok: bool, field: &str, reason: impl std::fmt::Display) -> Result<(), Failure> {
    if ok {
        Ok(())
    } else {
        Err(invalid(field, reason))
    }
}

/// Maps an error from a module validator onto a config field path.
fn module_error(section: &str, err: prbfn::Error) -> Failure {
    match err {
        prbfn::Error::InvalidParameter { name, reason } => {
            let field = match name {
                "tolerance" => "rel_tol",
                other => other,
            };
            invalid(&format!("{section}.{field}"), reason)
        }
        other => invalid(section, other),
    }
}

impl RunConfig {
    /// Parses `text`, applies command-line overrides and fills in derived
    /// defaults.
    pub fn parse(text: &str, out: Option<&Path>, seed: Option<u64>) -> Result<Self, Failure> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Failure::Config(format!("config: {e}")))?;
        if let Some(dir) = out {
            cfg.paths.out_dir = dir.to_path_buf();
        }
        if let Some(s) = seed {
            cfg.optimizer.seed = s;
            cfg.cell.seed = s;
            cfg.channel.seed = s;
        }
        cfg.validate()?;
        if cfg.fas.n_a.is_none() {
            let ports = min_output_ports(cfg.fas.w).map_err(|e| invalid("fas.W", e))?;
            cfg.fas.n_a = Some(ports.max(2));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::missing(path, e))?;
        Self::parse(&text, out, seed)
    }

    pub fn n_a(&self) -> usize {
        self.fas.n_a.expect("resolved at load time")
    }

    pub fn freqs_hz(&self) -> Vec<f64> {
        frequency_grid(
            self.cell.center_freq_hz,
            self.cell.band_fraction,
            self.cell.n_freq,
        )
        .expect("validated grid")
    }

    fn validate(&self) -> Result<(), Failure> {
        FasParams::new(self.fas.w, self.fas.n).map_err(|e| module_error("fas", e))?;
        if let Some(n_a) = self.fas.n_a {
            check(
                n_a >= 2 && n_a.is_power_of_two(),
                "fas.N_A",
                format!("must be a power of two >= 2, got {n_a}"),
            )?;
        }

        let opt = &self.optimizer;
        opt.pgd()
            .validate()
            .map_err(|e| module_error("optimizer", e))?;

        let c = &self.cascade;
        check(
            c.spdt_loss_db.is_finite() && c.spdt_loss_db >= 0.0,
            "cascade.spdt_loss_db",
            "must be finite and >= 0",
        )?;

        let cell = &self.cell;
        check(
            (1..=MAX_Q).contains(&cell.q),
            "cell.Q",
            format!("must lie in 1..={MAX_Q}, got {}", cell.q),
        )?;
        if cell.method == SearchMethod::Exhaustive {
            check(
                cell.q <= MAX_EXHAUSTIVE_Q,
                "cell.Q",
                format!(
                    "exhaustive search supports Q <= {MAX_EXHAUSTIVE_Q}, got {}",
                    cell.q
                ),
            )?;
        } else {
            check(
                cell.budget > 0,
                "cell.budget",
                "must be positive for stochastic search",
            )?;
        }
        cell.objective()
            .validate()
            .map_err(|e| module_error("cell", e))?;
        frequency_grid(cell.center_freq_hz, cell.band_fraction, cell.n_freq).map_err(
            |e| match e {
                prbfn::Error::InvalidParameter { name, reason } => {
                    let field = match name {
                        "center_hz" => "center_freq_hz",
                        "fractional_bw" => "band_fraction",
                        _ => "n_freq",
                    };
                    invalid(&format!("cell.{field}"), reason)
                }
                other => invalid("cell", other),
            },
        )?;
        if let Some(g) = cell.mirror_group {
            check(
                g >= 1 && 2 * g <= cell.q,
                "cell.mirror_group",
                format!("two groups of {g} must fit in Q = {}", cell.q),
            )?;
        }
        cell.surrogate_params()
            .validate()
            .map_err(|e| module_error("cell.surrogate", e))?;

        self.switch
            .on
            .validate()
            .map_err(|e| module_error("switch.on", e))?;
        self.switch
            .off
            .validate()
            .map_err(|e| module_error("switch.off", e))?;

        let ch = &self.channel;
        check(ch.t >= 1, "channel.T", "must be positive")?;
        check(
            ch.users >= 2,
            "channel.users",
            format!("port selection needs at least 2 users, got {}", ch.users),
        )?;
        check(ch.locations >= 1, "channel.locations", "must be positive")?;
        if let Some(d) = ch.antenna_spacing {
            check(
                d.is_finite() && d >= 0.0,
                "channel.antenna_spacing",
                format!("must be finite and >= 0, got {d}"),
            )?;
        }
        check(
            !self.paths.out_dir.as_os_str().is_empty(),
            "paths.out_dir",
            "must not be empty",
        )?;
        Ok(())
    }
}
