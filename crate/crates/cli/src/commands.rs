//! The four pipeline stages. Each reads the artifacts of the previous one
//! from the output directory.

use num_complex::Complex64;
use prbfn::cascade::{
    forward_compose, phase_aligned_residual, synthesize_plan, CascadePlan, CascadePlanDoc,
};
use prbfn::cell::{
    group_swap_permutation, prune_switches, search_states, state_outputs, PruneReport,
    SearchOptions, StateSet,
};
use prbfn::channel::{
    fama_select, fama_summary, generate_channels, mean_diagonal_magnitude, measured_correlation,
    pattern_correlation, port_covariance, AntennaCorrelation, FamaSummary, LagOptions,
};
use prbfn::fas::{bessel_j0, make_target_correlation, CorrelationMatrix, FasParams};
use prbfn::network::touchstone::read_touchstone;
use prbfn::network::{surrogate_cell, PixelNetwork, DEFAULT_Z0, UNIT_FEED_PORTS};
use prbfn::optimizer::{
    multi_restart, relative_error, sweep_is_monotone, BeamMatrix, CMatrix, SolveReport,
    SolveReportDoc, SweepPoint,
};
use prbfn::seed::derive_seed;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, Cell, Csv};
use crate::config::{BeamSource, RunConfig};
use crate::Failure;

/// Largest forward-composition residual accepted from `synthesize`.
const COMPOSITION_TOL: f64 = 1e-9;

const FABRICATION_NOTE: &str = "The plan lists one target per unit position in the binary tree. \
Hardware built with SPDT branches duplicates second-stage units per branch, so fabricated unit counts \
can exceed the number of plan units.";

fn internal(err: prbfn::Error) -> Failure {
    Failure::Io(format!("unexpected failure: {err}"))
}

fn target(cfg: &RunConfig) -> Result<CorrelationMatrix, Failure> {
    let params =
        FasParams::new(cfg.fas.w, cfg.fas.n).map_err(|e| Failure::Config(format!("fas: {e}")))?;
    make_target_correlation(&params).map_err(internal)
}

/// The pixel-cell network: the configured Touchstone file when given,
/// otherwise the seeded surrogate.
fn network(cfg: &RunConfig) -> Result<PixelNetwork, Failure> {
    let net = match &cfg.paths.touchstone_in {
        Some(p) => {
            if !p.is_file() {
                return Err(Failure::missing(p, "touchstone file not found"));
            }
            let data = read_touchstone(p)
                .map_err(|e| Failure::Config(format!("paths.touchstone_in: {e}")))?;
            data.into_network(UNIT_FEED_PORTS, format!("touchstone({})", p.display()))
                .map_err(|e| Failure::Config(format!("paths.touchstone_in: {e}")))?
        }
        None => surrogate_cell(
            &cfg.cell.surrogate_params(),
            &cfg.freqs_hz(),
            DEFAULT_Z0,
            cfg.cell.surrogate.seed,
        )
        .map_err(internal)?,
    };
    if net.q() != cfg.cell.q {
        return Err(Failure::Config(format!(
            "cell.Q: network {} has {} internal ports, config says {}",
            net.source(),
            net.q(),
            cfg.cell.q
        )));
    }
    Ok(net)
}

fn network_source(cfg: &RunConfig) -> Result<String, Failure> {
    match &cfg.paths.touchstone_in {
        Some(p) => Ok(format!("touchstone({})", p.display())),
        None => Ok(network(cfg)?.source().to_string()),
    }
}

#[derive(Serialize, Deserialize)]
struct DesignReport {
    network_source: String,
    #[serde(rename = "W")]
    w: f64,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "N_A")]
    n_a: usize,
    epsilon0: f64,
    accepted: bool,
    sweep: Vec<SweepPoint>,
    sweep_non_increasing: bool,
    report: SolveReportDoc,
}

pub fn design(cfg: &RunConfig) -> Result<(), Failure> {
    let target = target(cfg)?;
    let n = cfg.fas.n;
    let mut c_obj = Csv::new(&["i", "j", "value"]);
    for i in 0..n {
        for j in 0..n {
            c_obj.row([
                Cell::from(i + 1),
                Cell::from(j + 1),
                Cell::from(target.get(i, j)),
            ]);
        }
    }
    c_obj.write(cfg, artifacts::C_OBJ)?;

    let opts = cfg.optimizer.pgd();
    let n_a = cfg.n_a();
    let mut sweep = vec![SweepPoint {
        n_a: 1,
        epsilon: 1.0,
    }];
    let mut chosen = None;
    for k in 2..=n_a {
        let report = multi_restart(&target, k, &opts).map_err(internal)?;
        let best = report
            .per_restart
            .iter()
            .map(|r| r.epsilon)
            .fold(f64::INFINITY, f64::min);
        sweep.push(SweepPoint {
            n_a: k,
            epsilon: best,
        });
        if k == n_a {
            chosen = Some(report);
        }
    }
    let report = chosen.expect("N_A >= 2");
    let mut csv = Csv::new(&["n_a", "epsilon"]);
    for p in &sweep {
        csv.row([Cell::from(p.n_a), Cell::from(p.epsilon)]);
    }
    csv.write(cfg, artifacts::NA_SWEEP)?;

    let accepted = report.epsilon <= cfg.optimizer.epsilon0;
    let doc = DesignReport {
        network_source: network_source(cfg)?,
        w: cfg.fas.w,
        n,
        n_a,
        epsilon0: cfg.optimizer.epsilon0,
        accepted,
        sweep_non_increasing: sweep_is_monotone(&sweep, cfg.optimizer.rel_tol),
        sweep,
        report: report.to_doc(),
    };
    artifacts::write_json(cfg, artifacts::SOLVE_REPORT, &doc)?;
    println!(
        "design: N_A={n_a} epsilon={} (threshold {}), restart {} of {}",
        report.epsilon,
        cfg.optimizer.epsilon0,
        report.selected_restart + 1,
        report.per_restart.len()
    );
    if accepted {
        Ok(())
    } else {
        Err(Failure::Quality(format!(
            "epsilon {} exceeds epsilon0 {}",
            report.epsilon, cfg.optimizer.epsilon0
        )))
    }
}

fn designed_beams(cfg: &RunConfig) -> Result<BeamMatrix, Failure> {
    let doc: DesignReport = artifacts::read_json(cfg, artifacts::SOLVE_REPORT)?;
    if doc.n != cfg.fas.n {
        return Err(Failure::Config(format!(
            "fas.N: {} holds a design for N = {}, config says {}",
            artifacts::SOLVE_REPORT,
            doc.n,
            cfg.fas.n
        )));
    }
    SolveReport::from_doc(&doc.report)
        .map(|r| r.best)
        .map_err(|e| Failure::Missing(format!("{}: {e}", artifacts::SOLVE_REPORT)))
}

#[derive(Serialize, Deserialize)]
struct PlanReport {
    network_source: String,
    composition_residual: f64,
    gram_residual: f64,
    plan_units: usize,
    note: String,
    plan: CascadePlanDoc,
}

pub fn synthesize(cfg: &RunConfig) -> Result<(), Failure> {
    let b = designed_beams(cfg)?;
    let mut plan = synthesize_plan(&b).map_err(|e| Failure::Synthesis(e.to_string()))?;
    if b.rows() == 4 && b.cols() % 2 == 0 {
        plan = plan
            .with_mirror_split(&b, cfg.cascade.spdt_loss_db)
            .map_err(internal)?;
    }
    let composed = forward_compose(&plan).map_err(|e| Failure::Synthesis(e.to_string()))?;
    let residual = phase_aligned_residual(composed.as_matrix(), b.as_matrix()).map_err(internal)?;
    let gram_residual = (composed.gram_magnitude() - b.gram_magnitude()).abs().max();

    println!(
        "synthesize: {} stages, {} unit targets",
        plan.stages,
        plan.units.len()
    );
    println!("composition residual: {residual:e} (Gram magnitude {gram_residual:e})");
    if let Some(routing) = &plan.spdt_routing {
        println!(
            "mirror split: {} SPDTs per path at {} dB each, path loss {} dB",
            routing.spdt_per_path, routing.spdt_loss_db, routing.path_loss_db
        );
        for r in &routing.routes {
            println!(
                "  state {:>3} -> {:?} column {}",
                r.state, r.branch, r.half_column
            );
        }
    }
    if let Some(m) = &plan.mirror {
        println!(
            "mirror residual {:e}, half-norm mismatch {:e}{}",
            m.residual,
            m.half_amplitude_mismatch,
            if m.flagged {
                " (flagged: design is not mirror-symmetric)"
            } else {
                ""
            }
        );
    }
    let doc = PlanReport {
        network_source: network_source(cfg)?,
        composition_residual: residual,
        gram_residual,
        plan_units: plan.units.len(),
        note: FABRICATION_NOTE.to_string(),
        plan: plan.to_doc(),
    };
    artifacts::write_json(cfg, artifacts::CASCADE_PLAN, &doc)?;
    if residual > COMPOSITION_TOL || gram_residual > COMPOSITION_TOL {
        return Err(Failure::Synthesis(format!(
            "composition residual {residual:e} exceeds {COMPOSITION_TOL:e}"
        )));
    }
    Ok(())
}

fn read_plan(cfg: &RunConfig) -> Result<CascadePlan, Failure> {
    let doc: PlanReport = artifacts::read_json(cfg, artifacts::CASCADE_PLAN)?;
    CascadePlan::from_doc(doc.plan)
        .map_err(|e| Failure::Missing(format!("{}: {e}", artifacts::CASCADE_PLAN)))
}

#[derive(Serialize, Deserialize)]
struct Thresholds {
    t_s_db: f64,
    t_m_db: f64,
    t_loss: f64,
    c1: f64,
    c2: f64,
}

#[derive(Serialize, Deserialize)]
struct StatesetReport {
    network_source: String,
    unit: usize,
    stage: usize,
    position: usize,
    method: prbfn::cell::SearchMethod,
    budget: usize,
    seed: u64,
    thresholds: Thresholds,
    all_feasible: bool,
    worst_total: f64,
    states: StateSet,
    prune: PruneReport,
}

pub fn realize(cfg: &RunConfig) -> Result<(), Failure> {
    let plan = read_plan(cfg)?;
    let net = network(cfg)?;
    let obj = cfg.cell.objective();
    let mirror = cfg
        .cell
        .mirror_group
        .map(|g| group_swap_permutation(cfg.cell.q, g))
        .transpose()
        .map_err(|e| Failure::Config(format!("cell.mirror_group: {e}")))?;
    let mut infeasible = Vec::new();
    for (k, unit) in plan.units.iter().enumerate() {
        let seed = derive_seed(cfg.cell.seed, k as u64);
        let opts = SearchOptions {
            method: cfg.cell.method,
            budget: cfg.cell.budget,
            seed,
            mirror: mirror.clone(),
        };
        let set = search_states(&net, unit, &cfg.switch, &obj, &opts).map_err(|e| match e {
            prbfn::Error::SingularReduction { .. } => Failure::Synthesis(format!(
                "unit {} (stage {}, position {}): {e}",
                k + 1,
                unit.stage,
                unit.index
            )),
            other => internal(other),
        })?;
        let feasible = set.states.iter().filter(|s| s.record.feasible).count();
        println!(
            "unit {} (stage {}, position {}): {feasible}/{} states feasible, worst objective {}",
            k + 1,
            unit.stage,
            unit.index,
            set.states.len(),
            set.worst_total()
        );
        if !set.all_feasible() {
            infeasible.push(k + 1);
        }
        let report = StatesetReport {
            network_source: net.source().to_string(),
            unit: k + 1,
            stage: unit.stage,
            position: unit.index,
            method: cfg.cell.method,
            budget: cfg.cell.budget,
            seed,
            thresholds: Thresholds {
                t_s_db: obj.t_s_db,
                t_m_db: obj.t_m_db,
                t_loss: obj.t_loss,
                c1: obj.c1,
                c2: obj.c2,
            },
            all_feasible: set.all_feasible(),
            worst_total: set.worst_total(),
            prune: prune_switches(&set).map_err(internal)?,
            states: set,
        };
        artifacts::write_json(cfg, &artifacts::stateset_name(k + 1), &report)?;
    }
    if infeasible.is_empty() {
        Ok(())
    } else {
        Err(Failure::Quality(format!(
            "units {infeasible:?} have states violating the matching or loss thresholds"
        )))
    }
}

/// Currents produced by the realized switch states at the grid point
/// nearest the center frequency, normalized per state.
fn realized_beams(cfg: &RunConfig) -> Result<(BeamMatrix, String), Failure> {
    let plan = read_plan(cfg)?;
    let net = network(cfg)?;
    let f_index = net
        .freqs_hz()
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1 - cfg.cell.center_freq_hz)
                .abs()
                .total_cmp(&(b.1 - cfg.cell.center_freq_hz).abs())
        })
        .map(|(k, _)| k)
        .expect("network has frequencies");
    let mut sets = Vec::with_capacity(plan.units.len());
    for k in 1..=plan.units.len() {
        let report: StatesetReport = artifacts::read_json(cfg, &artifacts::stateset_name(k))?;
        if report.network_source != net.source() {
            return Err(Failure::Config(format!(
                "{} was realized on {}, but the configured network is {}",
                artifacts::stateset_name(k),
                report.network_source,
                net.source()
            )));
        }
        sets.push(report.states);
    }
    let rows = plan.output_ports();
    let mut m = CMatrix::zeros(rows, plan.n_states);
    for s in 0..plan.n_states {
        let mut v = vec![Complex64::new(1.0, 0.0)];
        for stage in 1..=plan.stages {
            let first = (1usize << (stage - 1)) - 1;
            let mut next = Vec::with_capacity(2 * v.len());
            for (offset, input) in v.iter().enumerate() {
                let bits = &sets[first + offset].states[s].bits;
                let (a, b) = state_outputs(&net, bits, &cfg.switch, f_index)
                    .map_err(|e| Failure::Synthesis(format!("unit {}: {e}", first + offset + 1)))?;
                next.push(input * a);
                next.push(input * b);
            }
            v = next;
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Failure::Synthesis(format!(
                "state {} delivers no current to the outputs",
                s + 1
            )));
        }
        for (r, z) in v.iter().enumerate() {
            m[(r, s)] = z / norm;
        }
    }
    let b = BeamMatrix::new(m).map_err(internal)?;
    Ok((b, net.source().to_string()))
}

/// `K_ij = J0(2 pi d |i - j|)` for elements spaced `d` wavelengths apart.
fn antenna_correlation(n_a: usize, spacing: Option<f64>) -> Result<AntennaCorrelation, Failure> {
    let Some(d) = spacing else {
        return Ok(AntennaCorrelation::identity(n_a));
    };
    let mut k = CMatrix::zeros(n_a, n_a);
    for i in 0..n_a {
        for j in 0..n_a {
            let x = 2.0 * std::f64::consts::PI * d * i.abs_diff(j) as f64;
            k[(i, j)] = Complex64::new(bessel_j0(x).map_err(internal)?, 0.0);
        }
    }
    AntennaCorrelation::new(k).map_err(|e| Failure::Config(format!("channel.antenna_spacing: {e}")))
}

#[derive(Serialize)]
struct UserFama {
    user: usize,
    #[serde(flatten)]
    summary: FamaSummary,
}

#[derive(Serialize)]
struct LagReport {
    options: LagOptions,
    measured: Vec<f64>,
    predicted: Vec<f64>,
    max_deviation: f64,
}

#[derive(Serialize)]
struct VerifySummary {
    network_source: String,
    b_source: BeamSource,
    epsilon: f64,
    epsilon0: f64,
    accepted: bool,
    antenna_spacing: Option<f64>,
    #[serde(rename = "T")]
    t: usize,
    users: usize,
    locations: usize,
    seed: u64,
    effective_samples: usize,
    fama: Vec<UserFama>,
    lag: LagReport,
}

pub fn verify(cfg: &RunConfig) -> Result<(), Failure> {
    let target = target(cfg)?;
    let designed = designed_beams(cfg)?;
    let (b, source) = match cfg.verify.b_source {
        BeamSource::Designed => (designed, network_source(cfg)?),
        BeamSource::Realized => realized_beams(cfg)?,
    };
    let k = antenna_correlation(b.rows(), cfg.channel.antenna_spacing)?;
    let achieved = pattern_correlation(&b, &k).map_err(internal)?;
    let epsilon = relative_error(achieved.as_matrix(), &target).map_err(internal)?;
    let n = b.cols();
    let mut csv = Csv::new(&["i", "j", "achieved", "target"]);
    for i in 0..n {
        for j in 0..n {
            csv.row(
                [i + 1, j + 1]
                    .map(Cell::from)
                    .into_iter()
                    .chain([achieved.get(i, j), target.get(i, j)].map(Cell::from)),
            );
        }
    }
    csv.write(cfg, artifacts::ACHIEVED_CORR)?;

    let ch = &cfg.channel;
    let ens = generate_channels(&b, &k, ch.t, ch.users, ch.locations, ch.seed).map_err(internal)?;
    let mut fama_csv = Csv::new(&["t", "user", "best_port", "sir_db"]);
    let mut per_user = vec![Vec::with_capacity(ch.t * ch.locations); ch.users];
    for loc in 0..ch.locations {
        for (u, picks_u) in per_user.iter_mut().enumerate() {
            let interferers: Vec<&CMatrix> = (0..ch.users)
                .filter(|&v| v != u)
                .map(|v| ens.get(loc, v))
                .collect();
            let picks = fama_select(ens.get(loc, u), &interferers).map_err(internal)?;
            for (r, p) in picks.iter().enumerate() {
                fama_csv.row([
                    Cell::from(loc * ch.t + r),
                    Cell::from(u + 1),
                    Cell::from(p.port),
                    Cell::from(p.sir_db),
                ]);
            }
            picks_u.extend(picks);
        }
    }
    fama_csv.write(cfg, artifacts::FAMA)?;
    let fama = per_user
        .iter()
        .enumerate()
        .map(|(u, picks)| {
            Ok(UserFama {
                user: u + 1,
                summary: fama_summary(picks).map_err(internal)?,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;

    let measured = measured_correlation(&ens, ch.lag).map_err(internal)?;
    let sigma = port_covariance(&b, &k).map_err(internal)?;
    let predicted: Vec<f64> = (0..n)
        .map(|lag| mean_diagonal_magnitude(&sigma, lag))
        .collect();
    let max_deviation = measured
        .iter()
        .zip(&predicted)
        .fold(0.0f64, |m, (a, p)| m.max((a - p).abs()));
    let mut lag_csv = Csv::new(&["lag", "value"]);
    for (lag, v) in measured.iter().enumerate() {
        lag_csv.row([Cell::from(lag), Cell::from(*v)]);
    }
    lag_csv.write(cfg, artifacts::CORR_LAG)?;

    let accepted = epsilon <= cfg.optimizer.epsilon0;
    let summary = VerifySummary {
        network_source: source,
        b_source: cfg.verify.b_source,
        epsilon,
        epsilon0: cfg.optimizer.epsilon0,
        accepted,
        antenna_spacing: ch.antenna_spacing,
        t: ch.t,
        users: ch.users,
        locations: ch.locations,
        seed: ch.seed,
        effective_samples: ch.t * ch.users * ch.locations,
        fama,
        lag: LagReport {
            options: ch.lag,
            measured,
            predicted,
            max_deviation,
        },
    };
    artifacts::write_json(cfg, artifacts::VERIFY_SUMMARY, &summary)?;
    println!(
        "verify: epsilon={epsilon} (threshold {}), lag-curve deviation {max_deviation}",
        cfg.optimizer.epsilon0
    );
    for u in &summary.fama {
        println!(
            "  user {}: median SIR {} dB, P(SIR > 10 dB) = {}",
            u.user, u.summary.median_sir_db, u.summary.p_sir_above_10db
        );
    }
    if accepted {
        Ok(())
    } else {
        Err(Failure::Quality(format!(
            "achieved epsilon {epsilon} exceeds epsilon0 {}",
            cfg.optimizer.epsilon0
        )))
    }
}
