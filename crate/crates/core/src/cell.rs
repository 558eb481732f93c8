//! Switch-state search for a pixel unit cell.
//!
//! For each reconfigurable state the cell must split power with amplitudes
//! `(amp1, amp2)` and phase difference `dphase`. A candidate switch vector is
//! scored by the worst frequency of `c1 G1 + c2 G2`, where
//!
//! * `G1 = || [|S21|, |S31|] / sqrt(G3) - [amp1, amp2] ||^2`
//! * `G2 = wrap(arg S21 - arg S31 - dphase)^2`
//! * `G3 = |S21|^2 + |S31|^2`
//!
//! plus a penalty for violated matching, isolation and loss constraints.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{UnitState, UnitTarget};
use crate::error::{Error, Result};
use crate::network::{reduced_scattering, PixelNetwork, SwitchModel, SwitchState};
use crate::optimizer::{wrap_phase, CMatrix};
use crate::seed::{stream_rng, Rng};

/// Multiplier applied to every unit (dB or linear) of constraint violation.
pub const PENALTY: f64 = 1e3;
/// Largest switch count a search accepts.
pub const MAX_Q: usize = 64;
/// Largest switch count the exhaustive method accepts.
pub const MAX_EXHAUSTIVE_Q: usize = 20;

const DB_FLOOR: f64 = 1e-15;

fn db(mag: f64) -> f64 {
    20.0 * mag.max(DB_FLOOR).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellObjective {
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
    /// Reflection threshold on every feed port, dB.
    #[serde(default = "default_t_s")]
    pub t_s_db: f64,
    /// Output-to-output coupling threshold, dB.
    #[serde(default = "default_t_m")]
    pub t_m_db: f64,
    /// Largest allowed `1 - G3`.
    #[serde(default = "default_t_loss")]
    pub t_loss: f64,
}

fn default_c1() -> f64 {
    1.0
}
fn default_c2() -> f64 {
    0.5
}
fn default_t_s() -> f64 {
    -10.0
}
fn default_t_m() -> f64 {
    -15.0
}
fn default_t_loss() -> f64 {
    0.37
}

impl Default for CellObjective {
    fn default() -> Self {
        Self {
            c1: default_c1(),
            c2: default_c2(),
            t_s_db: default_t_s(),
            t_m_db: default_t_m(),
            t_loss: default_t_loss(),
        }
    }
}

impl CellObjective {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        for (name, v) in [
            ("t_s_db", self.t_s_db),
            ("t_m_db", self.t_m_db),
            ("t_loss", self.t_loss),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, format!("must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Worst-case constraint slack; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// `t_s` minus the largest feed-port reflection, dB.
    pub reflection_db: f64,
    /// `t_m` minus the largest `|S23|`, dB.
    pub coupling_db: f64,
    /// `t_loss` minus the largest `1 - G3`.
    pub loss: f64,
}

impl Margins {
    pub fn violation(&self) -> f64 {
        (-self.reflection_db).max(0.0) + (-self.coupling_db).max(0.0) + (-self.loss).max(0.0)
    }

    pub fn feasible(&self) -> bool {
        self.reflection_db >= 0.0 && self.coupling_db >= 0.0 && self.loss >= 0.0
    }
}

/// Evaluation of one switch vector against one state target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    /// Terms at the worst frequency.
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub worst_freq_hz: f64,
    /// `max_f (c1 G1 + c2 G2)`.
    pub objective: f64,
    pub penalty: f64,
    /// `objective + penalty`, the quantity searches minimize.
    pub total: f64,
    pub margins: Margins,
    pub feasible: bool,
}

/// Scores per-frequency 3x3 scattering matrices against `target`.
pub fn eval_scattering(
    s: &[CMatrix],
    freqs_hz: &[f64],
    target: &UnitState,
    obj: &CellObjective,
) -> Result<StateRecord> {
    if s.is_empty() || s.len() != freqs_hz.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} matrices for {} frequencies",
            s.len(),
            freqs_hz.len()
        )));
    }
    let mut worst: Option<(f64, f64, f64, f64, f64)> = None;
    let mut max_refl = f64::NEG_INFINITY;
    let mut max_couple = f64::NEG_INFINITY;
    let mut max_loss = f64::NEG_INFINITY;
    for (m, &f) in s.iter().zip(freqs_hz) {
        if m.shape() != (3, 3) {
            return Err(Error::DimensionMismatch(format!(
                "expected 3x3 scattering, got {:?}",
                m.shape()
            )));
        }
        let (s21, s31) = (m[(1, 0)], m[(2, 0)]);
        let g3 = s21.norm_sqr() + s31.norm_sqr();
        let g1 = if g3 > 0.0 {
            let r = g3.sqrt();
            (s21.norm() / r - target.amp1).powi(2) + (s31.norm() / r - target.amp2).powi(2)
        } else {
            target.amp1.powi(2) + target.amp2.powi(2)
        };
        let g2 = wrap_phase(s21.arg() - s31.arg() - target.dphase).powi(2);
        let value = obj.c1 * g1 + obj.c2 * g2;
        if worst.is_none_or(|w| value > w.0) {
            worst = Some((value, g1, g2, g3, f));
        }
        max_refl = max_refl.max(
            (0..3)
                .map(|k| db(m[(k, k)].norm()))
                .fold(f64::NEG_INFINITY, f64::max),
        );
        max_couple = max_couple.max(db(m[(1, 2)].norm()));
        max_loss = max_loss.max(1.0 - g3);
    }
    let (objective, g1, g2, g3, worst_freq_hz) = worst.expect("at least one frequency");
    let margins = Margins {
        reflection_db: obj.t_s_db - max_refl,
        coupling_db: obj.t_m_db - max_couple,
        loss: obj.t_loss - max_loss,
    };
    let penalty = PENALTY * margins.violation();
    Ok(StateRecord {
        g1,
        g2,
        g3,
        worst_freq_hz,
        objective,
        penalty,
        total: objective + penalty,
        margins,
        feasible: margins.feasible(),
    })
}

/// Reduced scattering matrices of `x` over the network's frequency grid.
pub fn state_scattering(
    net: &PixelNetwork,
    x: &SwitchState,
    sw: &SwitchModel,
) -> Result<Vec<CMatrix>> {
    (0..net.freqs_hz().len())
        .map(|k| reduced_scattering(net, x, sw, k))
        .collect()
}

pub fn eval_state(
    net: &PixelNetwork,
    x: &SwitchState,
    target: &UnitState,
    sw: &SwitchModel,
    obj: &CellObjective,
) -> Result<StateRecord> {
    if net.n_feed() != 3 {
        return Err(Error::param(
            "n_feed",
            format!("unit cells have 3 feed ports, got {}", net.n_feed()),
        ));
    }
    eval_scattering(&state_scattering(net, x, sw)?, net.freqs_hz(), target, obj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Exhaustive,
    Annealing,
    Genetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub method: SearchMethod,
    /// Candidate evaluations per state for the stochastic methods
    /// (memoized repeats included); ignored by the exhaustive method.
    pub budget: usize,
    pub seed: u64,
    /// Internal-port involution. When set, only states `1..=ceil(N/2)` are
    /// searched and state `n` above that reuses the mirror of state `N-n+1`.
    pub mirror: Option<Vec<usize>>,
}

impl SearchOptions {
    pub fn new(method: SearchMethod, budget: usize, seed: u64) -> Self {
        Self {
            method,
            budget,
            seed,
            mirror: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    /// 1-based state number.
    pub state: usize,
    pub bits: SwitchState,
    #[serde(flatten)]
    pub record: StateRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mirrored_from: Option<usize>,
}

/// Chosen switch vectors for every state of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSet {
    #[serde(rename = "Q")]
    pub q: usize,
    pub states: Vec<StateEntry>,
}

impl StateSet {
    pub fn all_feasible(&self) -> bool {
        self.states.iter().all(|s| s.record.feasible)
    }

    pub fn worst_total(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.record.total)
            .fold(0.0, f64::max)
    }
}

fn mask(q: usize) -> u64 {
    if q == 64 {
        u64::MAX
    } else {
        (1u64 << q) - 1
    }
}

/// Memoized `code -> total` for one state target.
struct Scorer<'a> {
    net: &'a PixelNetwork,
    sw: &'a SwitchModel,
    obj: &'a CellObjective,
    target: UnitState,
    q: usize,
    cache: HashMap<u64, f64>,
}

impl Scorer<'_> {
    fn total(&mut self, code: u64) -> Result<f64> {
        if let Some(&v) = self.cache.get(&code) {
            return Ok(v);
        }
        let x = SwitchState::from_code(code, self.q);
        let v = eval_state(self.net, &x, &self.target, self.sw, self.obj)?.total;
        self.cache.insert(code, v);
        Ok(v)
    }
}

fn better(a: (f64, u64), b: (f64, u64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Steepest single-bit descent from `start`.
fn polish(scorer: &mut Scorer, start: (f64, u64)) -> Result<(f64, u64)> {
    let mut cur = start;
    loop {
        let mut next = cur;
        for k in 0..scorer.q {
            let y = cur.1 ^ (1u64 << k);
            let cand = (scorer.total(y)?, y);
            if better(cand, next) {
                next = cand;
            }
        }
        if next == cur {
            return Ok(cur);
        }
        cur = next;
    }
}

const ANNEAL_CHAINS: usize = 4;

/// Mask flipping one random bit, or two distinct bits half of the time.
fn flip_move(q: usize, rng: &mut Rng) -> u64 {
    let a = rng.random_range(0..q);
    if q < 2 || rng.random::<bool>() {
        return 1u64 << a;
    }
    let b = (a + rng.random_range(1..q)) % q;
    (1u64 << a) | (1u64 << b)
}

fn anneal(scorer: &mut Scorer, budget: usize, rng: &mut Rng) -> Result<u64> {
    let q = scorer.q;
    let m = mask(q);
    let mut best: Option<(f64, u64)> = None;
    let steps = (budget / ANNEAL_CHAINS).max(1);
    for _ in 0..ANNEAL_CHAINS {
        let mut x = rng.random::<u64>() & m;
        let mut fx = scorer.total(x)?;
        let mut chain_best = (fx, x);
        if q == 0 {
            best = Some(chain_best);
            break;
        }
        let mut probe = 0.0;
        for _ in 0..8 {
            let y = x ^ (1u64 << rng.random_range(0..q));
            probe += (scorer.total(y)? - fx).abs();
        }
        let t0 = (probe / 8.0).max(1e-9);
        let t_end = t0 * 1e-3;
        let alpha = (t_end / t0).powf(1.0 / steps as f64);
        let mut t = t0;
        for _ in 0..steps {
            let y = x ^ flip_move(q, rng);
            let fy = scorer.total(y)?;
            let delta = fy - fx;
            if delta <= 0.0 || rng.random::<f64>() < (-delta / t).exp() {
                x = y;
                fx = fy;
                if better((fx, x), chain_best) {
                    chain_best = (fx, x);
                }
            }
            t *= alpha;
        }
        let local = polish(scorer, chain_best)?;
        if best.is_none_or(|b| better(local, b)) {
            best = Some(local);
        }
    }
    Ok(best.expect("at least one chain").1)
}

const POPULATION: usize = 32;
const ELITE: usize = 2;
/// Random newcomers injected every generation.
const IMMIGRANTS: usize = 4;
const TOURNAMENT: usize = 3;
/// Generations without improvement before the non-elite population is
/// re-seeded at random.
const STAGNATION: usize = 40;

fn genetic(scorer: &mut Scorer, budget: usize, rng: &mut Rng) -> Result<u64> {
    let q = scorer.q;
    let m = mask(q);
    let mut pop: Vec<(f64, u64)> = Vec::with_capacity(POPULATION);
    for _ in 0..POPULATION {
        let x = rng.random::<u64>() & m;
        pop.push((scorer.total(x)?, x));
    }
    let sort = |p: &mut Vec<(f64, u64)>| p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    sort(&mut pop);
    let mut best = pop[0];
    let generations = (budget / POPULATION).max(1);
    let mutation = if q == 0 { 0.0 } else { 1.0 / q as f64 };
    let mut stale = 0;
    for _ in 0..generations {
        if stale >= STAGNATION {
            let local = polish(scorer, best)?;
            if better(local, best) {
                best = local;
            }
            for slot in pop.iter_mut().skip(ELITE) {
                let x = rng.random::<u64>() & m;
                *slot = (scorer.total(x)?, x);
            }
            sort(&mut pop);
            stale = 0;
        }
        let mut next: Vec<(f64, u64)> = pop[..ELITE].to_vec();
        for _ in 0..IMMIGRANTS {
            let x = rng.random::<u64>() & m;
            next.push((scorer.total(x)?, x));
        }
        while next.len() < POPULATION {
            let pick = |rng: &mut Rng| {
                (0..TOURNAMENT)
                    .map(|_| pop[rng.random_range(0..POPULATION)])
                    .reduce(|a, b| if better(b, a) { b } else { a })
                    .expect("tournament size > 0")
                    .1
            };
            let a = pick(rng);
            let b = pick(rng);
            let cross = rng.random::<u64>();
            let mut child = (a & cross) | (b & !cross);
            for k in 0..q {
                if rng.random::<f64>() < mutation {
                    child ^= 1u64 << k;
                }
            }
            child &= m;
            next.push((scorer.total(child)?, child));
        }
        sort(&mut next);
        if better(next[0], best) {
            best = next[0];
            stale = 0;
        } else {
            stale += 1;
        }
        pop = next;
    }
    Ok(polish(scorer, best)?.1)
}

/// Exhaustive optimum for every target; ties go to the lowest code.
fn exhaustive(
    net: &PixelNetwork,
    targets: &[UnitState],
    sw: &SwitchModel,
    obj: &CellObjective,
) -> Result<Vec<u64>> {
    let q = net.q();
    if q > MAX_EXHAUSTIVE_Q {
        return Err(Error::param(
            "Q",
            format!("exhaustive search supports Q <= {MAX_EXHAUSTIVE_Q}, got {q}"),
        ));
    }
    let n = targets.len();
    let init = || vec![(f64::INFINITY, u64::MAX); n];
    let merge = |mut a: Vec<(f64, u64)>, b: Vec<(f64, u64)>| {
        for (x, y) in a.iter_mut().zip(b) {
            if better(y, *x) {
                *x = y;
            }
        }
        a
    };
    let best = (0..(1u64 << q))
        .into_par_iter()
        .try_fold(init, |mut acc, code| -> Result<_> {
            let s = state_scattering(net, &SwitchState::from_code(code, q), sw)?;
            for (slot, t) in acc.iter_mut().zip(targets) {
                let total = eval_scattering(&s, net.freqs_hz(), t, obj)?.total;
                if better((total, code), *slot) {
                    *slot = (total, code);
                }
            }
            Ok(acc)
        })
        .try_reduce(init, |a, b| Ok(merge(a, b)))?;
    Ok(best.into_iter().map(|(_, code)| code).collect())
}

fn stochastic(
    net: &PixelNetwork,
    targets: &[UnitState],
    sw: &SwitchModel,
    obj: &CellObjective,
    opts: &SearchOptions,
) -> Result<Vec<u64>> {
    targets
        .par_iter()
        .enumerate()
        .map(|(n, t)| {
            let mut rng = stream_rng(opts.seed, n as u64);
            let mut scorer = Scorer {
                net,
                sw,
                obj,
                target: *t,
                q: net.q(),
                cache: HashMap::new(),
            };
            match opts.method {
                SearchMethod::Annealing => anneal(&mut scorer, opts.budget, &mut rng),
                SearchMethod::Genetic => genetic(&mut scorer, opts.budget, &mut rng),
                SearchMethod::Exhaustive => unreachable!("handled by the caller"),
            }
        })
        .collect()
}

/// Finds a switch vector for every state of `targets`.
pub fn search_states(
    net: &PixelNetwork,
    targets: &UnitTarget,
    sw: &SwitchModel,
    obj: &CellObjective,
    opts: &SearchOptions,
) -> Result<StateSet> {
    obj.validate()?;
    sw.validate()?;
    let q = net.q();
    if q > MAX_Q {
        return Err(Error::param(
            "Q",
            format!("at most {MAX_Q} switches supported, got {q}"),
        ));
    }
    if net.n_feed() != 3 {
        return Err(Error::param(
            "n_feed",
            format!("unit cells have 3 feed ports, got {}", net.n_feed()),
        ));
    }
    let n = targets.n_states();
    if n == 0 {
        return Err(Error::param("targets", "no states"));
    }
    if opts.method != SearchMethod::Exhaustive && opts.budget == 0 {
        return Err(Error::param("budget", "must be positive"));
    }
    if let Some(perm) = &opts.mirror {
        if perm.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "mirror permutation of length {} for Q = {q}",
                perm.len()
            )));
        }
        crate::network::check_involution(perm)?;
    }
    let searched = if opts.mirror.is_some() {
        n.div_ceil(2)
    } else {
        n
    };
    let codes = match opts.method {
        SearchMethod::Exhaustive => exhaustive(net, &targets.states[..searched], sw, obj)?,
        _ => stochastic(net, &targets.states[..searched], sw, obj, opts)?,
    };
    let mut states = Vec::with_capacity(n);
    for s in 0..n {
        let (bits, mirrored_from) = if s < searched {
            (SwitchState::from_code(codes[s], q), None)
        } else {
            let src = n - 1 - s;
            let perm = opts
                .mirror
                .as_ref()
                .expect("mirror set when states are skipped");
            (
                mirror_state(&SwitchState::from_code(codes[src], q), perm)?,
                Some(src + 1),
            )
        };
        let record = eval_state(net, &bits, &targets.states[s], sw, obj)?;
        states.push(StateEntry {
            state: s + 1,
            bits,
            record,
            mirrored_from,
        });
    }
    Ok(StateSet { q, states })
}

/// Applies the involution `perm`: bit `q` moves to position `perm[q]`.
pub fn mirror_state(x: &SwitchState, perm: &[usize]) -> Result<SwitchState> {
    if perm.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "permutation of length {} for {} bits",
            perm.len(),
            x.len()
        )));
    }
    crate::network::check_involution(perm)?;
    let mut bits = vec![false; x.len()];
    for (q, &p) in perm.iter().enumerate() {
        bits[p] = x.get(q);
    }
    Ok(SwitchState::new(bits))
}

/// Involution swapping bits `0..group` with `group..2*group`, others fixed.
/// `group = 8` on 20 switches is the layout of the fabricated 4-port cell.
pub fn group_swap_permutation(q: usize, group: usize) -> Result<Vec<usize>> {
    if 2 * group > q {
        return Err(Error::param(
            "group",
            format!("two groups of {group} do not fit in {q} bits"),
        ));
    }
    Ok((0..q)
        .map(|k| match k {
            k if k < group => k + group,
            k if k < 2 * group => k - group,
            k => k,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    /// 1-based switches that are off in every state.
    pub removable_open: Vec<usize>,
    /// 1-based switches that are on in every state.
    pub replace_with_wire: Vec<usize>,
    /// Set when wires replace switches, since matching must be rechecked.
    pub needs_reverification: bool,
}

pub fn prune_switches(set: &StateSet) -> Result<PruneReport> {
    if set.states.is_empty() {
        return Err(Error::param("states", "empty state set"));
    }
    let mut removable_open = Vec::new();
    let mut replace_with_wire = Vec::new();
    for q in 0..set.q {
        if set.states.iter().all(|s| !s.bits.get(q)) {
            removable_open.push(q + 1);
        } else if set.states.iter().all(|s| s.bits.get(q)) {
            replace_with_wire.push(q + 1);
        }
    }
    let needs_reverification = !replace_with_wire.is_empty();
    Ok(PruneReport {
        removable_open,
        replace_with_wire,
        needs_reverification,
    })
}

/// Complex output pair `(S21, S31)` of a state at frequency index `f_index`.
pub fn state_outputs(
    net: &PixelNetwork,
    x: &SwitchState,
    sw: &SwitchModel,
    f_index: usize,
) -> Result<(Complex64, Complex64)> {
    let s = reduced_scattering(net, x, sw, f_index)?;
    crate::network::transmissions(&s)
}
