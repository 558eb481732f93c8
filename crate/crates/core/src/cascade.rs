//! Backward synthesis of the binary-tree unit-cell cascade.
//!
//! Stage `m` (1-based) holds `2^(m-1)` one-input/two-output units. For state
//! `n`, unit `k` of stage `m` emits the unit-norm 2-vector `u_k`, and the stage
//! acts as `H_m = blkdiag(u_1, ..., u_K)`. Output currents are
//! `i_n = H_M ... H_1`. Because `H_m^H H_m = I`, applying `H_m^H` recovers the
//! input currents of stage `m`, which is how the targets are peeled off from
//! the last stage back to the first.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{wrap_phase, BeamMatrix, CMatrix};

/// Insertion loss of one SPDT switch in dB.
pub const DEFAULT_SPDT_LOSS_DB: f64 = 0.7;

/// SPDT hops on every RF path of the mirror-split four-port network.
pub const SPDT_PER_PATH: usize = 2;

/// Mirror mismatch above which a plan is flagged.
pub const MIRROR_FLAG_TOL: f64 = 1e-6;

const BLOCK_NORM_TOL: f64 = 1e-9;

/// Amplitude pair and phase difference one unit must produce in one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitState {
    pub amp1: f64,
    pub amp2: f64,
    /// Required `arg(i1) - arg(i2)`, wrapped to (-pi, pi].
    #[serde(rename = "dphase_rad")]
    pub dphase: f64,
}

impl UnitState {
    /// Normalized targets of the 2-vector `[a, b]`; `None` if it is exactly zero.
    pub fn from_pair(a: Complex64, b: Complex64) -> Option<Self> {
        let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self {
            amp1: a.norm() / norm,
            amp2: b.norm() / norm,
            dphase: wrap_phase(a.arg() - b.arg()),
        })
    }

    /// Unit output vector with the convention `arg(i2) = 0`.
    pub fn output(&self) -> [Complex64; 2] {
        [
            Complex64::from_polar(self.amp1, self.dphase),
            Complex64::new(self.amp2, 0.0),
        ]
    }

    /// Same targets with the two outputs interchanged.
    pub fn swapped(&self) -> Self {
        Self {
            amp1: self.amp2,
            amp2: self.amp1,
            dphase: wrap_phase(-self.dphase),
        }
    }
}

/// Per-state targets of one unit cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTarget {
    /// 1-based stage number.
    pub stage: usize,
    /// 1-based position within the stage.
    pub index: usize,
    pub states: Vec<UnitState>,
}

impl UnitTarget {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }
}

fn log2_exact(rows: usize) -> Option<usize> {
    (rows >= 2 && rows.is_power_of_two()).then(|| rows.trailing_zeros() as usize)
}

/// Unit targets for the last stage feeding the `2^m` rows of `currents`.
///
/// Unit `k` takes rows `2k` and `2k+1` (0-based); its amplitudes are those
/// rows divided by the sub-vector norm and its phase difference is
/// `arg(row 2k) - arg(row 2k+1)`.
pub fn stage_targets(currents: &CMatrix) -> Result<Vec<UnitTarget>> {
    let stage = log2_exact(currents.nrows()).ok_or_else(|| {
        Error::param(
            "B",
            format!(
                "row count must be a power of two >= 2, got {}",
                currents.nrows()
            ),
        )
    })?;
    let units = currents.nrows() / 2;
    (0..units)
        .map(|k| {
            let states = (0..currents.ncols())
                .map(|n| {
                    UnitState::from_pair(currents[(2 * k, n)], currents[(2 * k + 1, n)]).ok_or(
                        Error::ZeroSubVector {
                            stage,
                            unit: k + 1,
                            state: n + 1,
                        },
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(UnitTarget {
                stage,
                index: k + 1,
                states,
            })
        })
        .collect()
}

/// Stage transmission `H = blkdiag(u_1, ..., u_K)` (size `2K x K`) for one state.
pub fn stage_transmission(units: &[UnitTarget], state: usize) -> CMatrix {
    let k = units.len();
    let mut h = CMatrix::zeros(2 * k, k);
    for (j, unit) in units.iter().enumerate() {
        let [a, b] = unit.states[state].output();
        h[(2 * j, j)] = a;
        h[(2 * j + 1, j)] = b;
    }
    h
}

/// Returns `H^H i` for a block-diagonal stage transmission of unit-norm
/// 2-vectors. This is the input current vector of that stage.
pub fn backward_reduce(currents: &DVector<Complex64>, h: &CMatrix) -> Result<DVector<Complex64>> {
    let k = h.ncols();
    if h.nrows() != 2 * k || currents.len() != h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{}, currents have length {}",
            h.nrows(),
            h.ncols(),
            currents.len()
        )));
    }
    for j in 0..k {
        for i in 0..h.nrows() {
            if i / 2 != j && h[(i, j)] != Complex64::new(0.0, 0.0) {
                return Err(Error::param(
                    "H",
                    format!("entry ({i},{j}) lies outside the block diagonal"),
                ));
            }
        }
        let norm = (h[(2 * j, j)].norm_sqr() + h[(2 * j + 1, j)].norm_sqr()).sqrt();
        if (norm - 1.0).abs() > BLOCK_NORM_TOL {
            return Err(Error::NonUnitBlock { block: j + 1, norm });
        }
    }
    Ok(h.adjoint() * currents)
}

/// Routing of states onto the two mirror-half unit sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// States `1..=N/2`, realized by the first-half units.
    FirstHalf,
    /// States `N/2+1..=N`, realized by the second-half units.
    SecondHalf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdtRoute {
    /// 1-based state number.
    pub state: usize,
    pub branch: Branch,
    /// 1-based column inside the branch's half of the target matrix.
    pub half_column: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdtRouting {
    pub spdt_loss_db: f64,
    pub spdt_per_path: usize,
    /// Fixed loss every output path sees, `spdt_per_path * spdt_loss_db`.
    pub path_loss_db: f64,
    pub routes: Vec<SpdtRoute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorCheck {
    /// Largest deviation from `i^1_{2,n} = i^2_{2,N-n+1}` over all states,
    /// measured on normalized amplitudes and wrapped phase differences.
    pub residual: f64,
    /// Largest norm mismatch between paired columns of the two halves.
    pub half_amplitude_mismatch: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MirrorSplit {
    pub first: CMatrix,
    pub second: CMatrix,
    pub routing: SpdtRouting,
    pub check: MirrorCheck,
}

/// Splits a four-row target into the state halves served by the two SPDT
/// branches and checks the mirror relation between the upper and lower
/// second-stage units.
pub fn mirror_split(bhat: &BeamMatrix, spdt_loss_db: f64) -> Result<MirrorSplit> {
    let b = bhat.as_matrix();
    let n = b.ncols();
    if bhat.rows() != 4 {
        return Err(Error::param(
            "N_A",
            format!("mirror split needs 4 output ports, got {}", bhat.rows()),
        ));
    }
    if !n.is_multiple_of(2) {
        return Err(Error::param(
            "N",
            format!("mirror split needs an even state count, got {n}"),
        ));
    }
    let half = n / 2;
    let first = b.columns(0, half).into_owned();
    let second = b.columns(half, half).into_owned();

    let mut residual = 0.0f64;
    let mut mismatch = 0.0f64;
    for s in 0..n {
        let mirror = n - 1 - s;
        let upper = UnitState::from_pair(b[(0, s)], b[(1, s)]);
        let lower = UnitState::from_pair(b[(2, mirror)], b[(3, mirror)]);
        match (upper, lower) {
            (Some(u), Some(l)) => {
                let d = (u.amp1 - l.amp1)
                    .abs()
                    .max((u.amp2 - l.amp2).abs())
                    .max(wrap_phase(u.dphase - l.dphase).abs());
                residual = residual.max(d);
            }
            _ => residual = f64::INFINITY,
        }
        let upper_norm = (b[(0, s)].norm_sqr() + b[(1, s)].norm_sqr()).sqrt();
        let lower_norm = (b[(2, mirror)].norm_sqr() + b[(3, mirror)].norm_sqr()).sqrt();
        mismatch = mismatch.max((upper_norm - lower_norm).abs());
    }

    let routes = (0..n)
        .map(|s| {
            let (branch, col) = if s < half {
                (Branch::FirstHalf, s)
            } else {
                (Branch::SecondHalf, s - half)
            };
            SpdtRoute {
                state: s + 1,
                branch,
                half_column: col + 1,
            }
        })
        .collect();
    Ok(MirrorSplit {
        first,
        second,
        routing: SpdtRouting {
            spdt_loss_db,
            spdt_per_path: SPDT_PER_PATH,
            path_loss_db: SPDT_PER_PATH as f64 * spdt_loss_db,
            routes,
        },
        check: MirrorCheck {
            residual,
            half_amplitude_mismatch: mismatch,
            flagged: residual > MIRROR_FLAG_TOL || mismatch > MIRROR_FLAG_TOL,
        },
    })
}

/// Complete set of unit targets for a cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadePlan {
    /// Number of stages M (`N_A = 2^M`).
    pub stages: usize,
    pub n_states: usize,
    /// Equal power-divider output vector `p = [1, 1] / sqrt(2)`.
    pub splitter: [Complex64; 2],
    /// Units ordered by stage, then position.
    pub units: Vec<UnitTarget>,
    pub spdt_routing: Option<SpdtRouting>,
    pub mirror: Option<MirrorCheck>,
    /// Per-state phase discarded by the `arg(i2) = 0` convention.
    pub global_phases: Vec<f64>,
}

impl CascadePlan {
    pub fn output_ports(&self) -> usize {
        1 << self.stages
    }

    pub fn stage_units(&self, stage: usize) -> &[UnitTarget] {
        let start = (1usize << (stage - 1)) - 1;
        &self.units[start..start + (1 << (stage - 1))]
    }

    fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::param("plan", "no stages"));
        }
        if self.units.len() != (1 << self.stages) - 1 {
            return Err(Error::param(
                "plan",
                format!("{} units for {} stages", self.units.len(), self.stages),
            ));
        }
        for stage in 1..=self.stages {
            for (k, unit) in self.stage_units(stage).iter().enumerate() {
                if unit.stage != stage || unit.index != k + 1 {
                    return Err(Error::param(
                        "plan",
                        format!("unit ordering broken at stage {stage}, position {}", k + 1),
                    ));
                }
                if unit.n_states() != self.n_states {
                    return Err(Error::param(
                        "plan",
                        format!("unit ({stage},{}) has {} states", k + 1, unit.n_states()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Attaches the SPDT routing table and mirror check for a four-port,
    /// even-state design.
    pub fn with_mirror_split(mut self, bhat: &BeamMatrix, spdt_loss_db: f64) -> Result<Self> {
        let split = mirror_split(bhat, spdt_loss_db)?;
        self.spdt_routing = Some(split.routing);
        self.mirror = Some(split.check);
        Ok(self)
    }
}

/// Peels unit targets off `bhat` from the last stage back to the first.
pub fn synthesize_plan(bhat: &BeamMatrix) -> Result<CascadePlan> {
    let stages = log2_exact(bhat.rows()).ok_or_else(|| {
        Error::param(
            "N_A",
            format!(
                "output port count must be a power of two >= 2, got {}",
                bhat.rows()
            ),
        )
    })?;
    let n_states = bhat.cols();
    let mut per_stage: Vec<Vec<UnitTarget>> = Vec::with_capacity(stages);
    let mut currents = bhat.as_matrix().clone();
    for _ in (1..=stages).rev() {
        let units = stage_targets(&currents)?;
        let mut reduced = CMatrix::zeros(currents.nrows() / 2, n_states);
        for s in 0..n_states {
            let h = stage_transmission(&units, s);
            let col = backward_reduce(&currents.column(s).into_owned(), &h)?;
            reduced.set_column(s, &col);
        }
        per_stage.push(units);
        currents = reduced;
    }
    per_stage.reverse();
    let global_phases = (0..n_states).map(|s| currents[(0, s)].arg()).collect();
    Ok(CascadePlan {
        stages,
        n_states,
        splitter: [Complex64::new(FRAC_1_SQRT_2, 0.0); 2],
        units: per_stage.into_iter().flatten().collect(),
        spdt_routing: None,
        mirror: None,
        global_phases,
    })
}

/// Output currents `H_M ... H_1` for every state, each unit built from its
/// targets with `arg(i2) = 0`.
pub fn forward_compose(plan: &CascadePlan) -> Result<BeamMatrix> {
    plan.validate()?;
    let rows = plan.output_ports();
    let mut out = CMatrix::zeros(rows, plan.n_states);
    for s in 0..plan.n_states {
        let mut v = vec![Complex64::new(1.0, 0.0)];
        for stage in 1..=plan.stages {
            let units = plan.stage_units(stage);
            v = units
                .iter()
                .zip(&v)
                .flat_map(|(unit, &input)| unit.states[s].output().map(|u| u * input))
                .collect();
        }
        out.set_column(s, &DVector::from_vec(v));
    }
    BeamMatrix::new(out)
}

/// Largest per-column distance between `composed` and `reference` after
/// aligning each column's global phase.
pub fn phase_aligned_residual(composed: &CMatrix, reference: &CMatrix) -> Result<f64> {
    if composed.shape() != reference.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            composed.shape(),
            reference.shape()
        )));
    }
    let mut worst = 0.0f64;
    for (c, r) in composed.column_iter().zip(reference.column_iter()) {
        let inner = c.dotc(&r);
        let align = if inner.norm() > 0.0 {
            inner / inner.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let d = (c * align - r).norm();
        worst = worst.max(d);
    }
    Ok(worst)
}

/// JSON form of a [`CascadePlan`]; complex numbers are `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadePlanDoc {
    #[serde(rename = "M")]
    pub stages: usize,
    pub n_states: usize,
    pub splitter: Vec<[f64; 2]>,
    pub units: Vec<UnitTarget>,
    pub spdt_routing: Option<SpdtRouting>,
    pub mirror: Option<MirrorCheck>,
    pub global_phases: Vec<f64>,
}

impl CascadePlan {
    pub fn to_doc(&self) -> CascadePlanDoc {
        CascadePlanDoc {
            stages: self.stages,
            n_states: self.n_states,
            splitter: self.splitter.iter().map(|z| [z.re, z.im]).collect(),
            units: self.units.clone(),
            spdt_routing: self.spdt_routing.clone(),
            mirror: self.mirror.clone(),
            global_phases: self.global_phases.clone(),
        }
    }

    pub fn from_doc(doc: CascadePlanDoc) -> Result<Self> {
        if doc.splitter.len() != 2 {
            return Err(Error::param("splitter", "expected two entries"));
        }
        let plan = Self {
            stages: doc.stages,
            n_states: doc.n_states,
            splitter: [
                Complex64::new(doc.splitter[0][0], doc.splitter[0][1]),
                Complex64::new(doc.splitter[1][0], doc.splitter[1][1]),
            ],
            units: doc.units,
            spdt_routing: doc.spdt_routing,
            mirror: doc.mirror,
            global_phases: doc.global_phases,
        };
        plan.validate()?;
        Ok(plan)
    }
}
