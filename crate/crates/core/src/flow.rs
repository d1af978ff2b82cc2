//! Exact-time engine for rank-one flows built with real spacers.
//!
//! Durations are integer ticks over a common denominator, so segment sums and
//! correlation sweeps are exact. The base column `[0, h_{j0})` is split into
//! `L` equal slabs; every spacer maps to the extra symbol `*`.

use std::io::{self, Write};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::construction::{lcm_u128, rational_string, RealizedSchedule, ScheduleError, ScheduleKind};
use crate::matrix::Matrix;

pub const DEFAULT_SLABS: usize = 16;
pub const SEGMENT_BUDGET: u64 = 10_000_000;
pub const QUADRATURE_TOLERANCE: f64 = 1e-4;
pub const MAX_HALVINGS: u32 = 12;
const INITIAL_INTERVALS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("schedule is not a flow")]
    NotAFlow,
    #[error("stage {stage} outside 1..={depth}")]
    StageOutOfRange { stage: usize, depth: usize },
    #[error("{count} segments exceed the budget of {budget}")]
    SegmentBudgetExceeded { count: u64, budget: u64 },
    #[error("time {t} outside the column of height {height}")]
    TimeOutOfRange { t: String, height: String },
    #[error("quadrature did not converge after {halvings} halvings (last change {last_change:e})")]
    NoConvergence { halvings: u32, last_change: f64 },
    #[error("tick arithmetic overflow")]
    Overflow,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

fn big(v: i128) -> BigInt {
    BigInt::from(v)
}

/// `h_1, ..., h_depth` of a flow realization.
pub fn flow_heights(realized: &RealizedSchedule, depth: usize) -> Result<Vec<BigRational>, FlowError> {
    if realized.kind != ScheduleKind::Flow {
        return Err(FlowError::NotAFlow);
    }
    if depth == 0 || depth > realized.depth() {
        return Err(FlowError::StageOutOfRange {
            stage: depth,
            depth: realized.depth(),
        });
    }
    let mut h = realized.h1.clone();
    let mut out = vec![h.clone()];
    for st in &realized.stages[..depth - 1] {
        h = h * BigRational::from_integer(st.cut.into()) + st.spacer_time_sum();
        out.push(h.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentLabel {
    Base,
    Spacer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub label: SegmentLabel,
    pub ticks: i64,
}

/// The depth-`J` column as base copies of the stage-`j0` column and
/// nonzero spacers, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentList {
    pub base: usize,
    pub depth: usize,
    pub ticks_per_unit: i128,
    pub base_ticks: i64,
    total_ticks: i128,
    segments: Vec<Segment>,
}

impl SegmentList {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_ticks(&self) -> i128 {
        self.total_ticks
    }

    pub fn to_time(&self, ticks: i128) -> BigRational {
        BigRational::new(big(ticks), big(self.ticks_per_unit))
    }

    pub fn total_height(&self) -> BigRational {
        self.to_time(self.total_ticks)
    }

    pub fn base_height(&self) -> BigRational {
        self.to_time(self.base_ticks as i128)
    }

    pub fn base_copies(&self) -> usize {
        self.segments.iter().filter(|s| s.label == SegmentLabel::Base).count()
    }

    /// CSV rows `label,numerator,denominator` with reduced durations.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "label,numerator,denominator")?;
        for s in &self.segments {
            let d = self.to_time(s.ticks as i128);
            let label = match s.label {
                SegmentLabel::Base => "base",
                SegmentLabel::Spacer => "spacer",
            };
            writeln!(out, "{label},{},{}", d.numer(), d.denom())?;
        }
        Ok(())
    }
}

/// Segment decomposition of the depth-`depth` column over base stage `base`.
pub fn flow_segments(
    realized: &RealizedSchedule,
    depth: usize,
    base: usize,
    budget: u64,
) -> Result<SegmentList, FlowError> {
    let heights = flow_heights(realized, depth)?;
    if base == 0 || base > depth {
        return Err(FlowError::StageOutOfRange { stage: base, depth });
    }
    let stages = &realized.stages[base - 1..depth - 1];
    let mut count: u64 = 1;
    for st in stages {
        let nonzero = st.spacers.iter().filter(|&&s| s > 0).count() as u64;
        count = count
            .checked_mul(st.cut)
            .and_then(|c| c.checked_add(nonzero))
            .filter(|&c| c <= budget)
            .ok_or(FlowError::SegmentBudgetExceeded {
                count: count.saturating_mul(st.cut),
                budget,
            })?;
    }

    let base_height = &heights[base - 1];
    let mut unit: u128 = base_height.denom().to_u128().ok_or(FlowError::Overflow)?;
    for st in stages {
        unit = lcm_u128(unit, st.denominator as u128);
    }
    let unit = i128::try_from(unit).map_err(|_| FlowError::Overflow)?;
    let base_ticks = (base_height * BigRational::from_integer(big(unit)))
        .to_integer()
        .to_i64()
        .ok_or(FlowError::Overflow)?;

    let mut segments = vec![Segment {
        label: SegmentLabel::Base,
        ticks: base_ticks,
    }];
    segments.reserve(count as usize);
    let mut total = base_ticks as i128;
    for st in stages {
        let block = std::mem::take(&mut segments);
        let scale = unit / st.denominator as i128;
        for &s in &st.spacers {
            segments.extend_from_slice(&block);
            if s > 0 {
                let ticks = i64::try_from(s as i128 * scale).map_err(|_| FlowError::Overflow)?;
                segments.push(Segment {
                    label: SegmentLabel::Spacer,
                    ticks,
                });
            }
        }
        total = total
            .checked_mul(st.cut as i128)
            .and_then(|t| t.checked_add(st.spacers.iter().map(|&s| s as i128 * scale).sum()))
            .ok_or(FlowError::Overflow)?;
    }
    Ok(SegmentList {
        base,
        depth,
        ticks_per_unit: unit,
        base_ticks,
        total_ticks: total,
        segments,
    })
}

/// `L` equal slabs of the base column plus the spacer symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlabAlgebra {
    pub slabs: usize,
}

impl SlabAlgebra {
    pub fn new(slabs: usize) -> Result<SlabAlgebra, FlowError> {
        if slabs < 2 {
            return Err(FlowError::InvalidInput("at least two slabs are required".into()));
        }
        Ok(SlabAlgebra { slabs })
    }

    pub fn size(&self) -> usize {
        self.slabs + 1
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.slabs)
            .map(|i| format!("s{i}"))
            .chain(std::iter::once("*".to_string()))
            .collect()
    }
}

impl Default for SlabAlgebra {
    fn default() -> Self {
        SlabAlgebra { slabs: DEFAULT_SLABS }
    }
}

/// Reader over the slab/spacer pieces of a column in scaled ticks.
struct PieceCursor<'a> {
    segments: &'a [Segment],
    mult: i128,
    slab: i128,
    slabs: usize,
    index: usize,
    symbol: usize,
    left: i128,
}

impl<'a> PieceCursor<'a> {
    fn new(list: &'a SegmentList, mult: i128, slabs: usize, pos: i128) -> Self {
        let mut c = PieceCursor {
            segments: &list.segments,
            mult,
            slab: list.base_ticks as i128 * mult / slabs as i128,
            slabs,
            index: 0,
            symbol: 0,
            left: 0,
        };
        let mut offset = pos;
        while c.index < c.segments.len() {
            let len = c.segments[c.index].ticks as i128 * mult;
            if offset < len {
                break;
            }
            offset -= len;
            c.index += 1;
        }
        if c.index < c.segments.len() {
            match c.segments[c.index].label {
                SegmentLabel::Spacer => {
                    c.symbol = slabs;
                    c.left = c.segments[c.index].ticks as i128 * mult - offset;
                }
                SegmentLabel::Base => {
                    let k = offset / c.slab;
                    c.symbol = k as usize;
                    c.left = (k + 1) * c.slab - offset;
                }
            }
        }
        c
    }

    /// Consumes `step <= self.left` ticks.
    #[inline]
    fn advance(&mut self, step: i128) {
        self.left -= step;
        if self.left > 0 {
            return;
        }
        if self.symbol + 1 < self.slabs {
            self.symbol += 1;
            self.left = self.slab;
            return;
        }
        self.index += 1;
        if let Some(seg) = self.segments.get(self.index) {
            match seg.label {
                SegmentLabel::Spacer => {
                    self.symbol = self.slabs;
                    self.left = seg.ticks as i128 * self.mult;
                }
                SegmentLabel::Base => {
                    self.symbol = 0;
                    self.left = self.slab;
                }
            }
        }
    }
}

/// `D(t)` with exact entries `numerators / denominator`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowCorr {
    #[serde(with = "rational_string")]
    pub t: BigRational,
    pub labels: Vec<String>,
    #[serde(skip)]
    pub numerators: Vec<i128>,
    #[serde(skip)]
    pub denominator: i128,
    pub matrix: Matrix,
}

impl FlowCorr {
    pub fn exact(&self, a: usize, b: usize) -> BigRational {
        let dim = self.labels.len();
        BigRational::new(big(self.numerators[a * dim + b]), big(self.denominator))
    }
}

/// `D(t)[a][b] = Leb{u : phi(u) = a, phi(u + t) = b} / H_J` by one sweep.
/// Negative `t` is swept directly with the roles of the cursors exchanged.
pub fn flow_corr(list: &SegmentList, slabs: SlabAlgebra, t: &BigRational) -> Result<FlowCorr, FlowError> {
    let height = list.total_height();
    if t.abs() >= height {
        return Err(FlowError::TimeOutOfRange {
            t: t.to_string(),
            height: height.to_string(),
        });
    }
    let l = slabs.slabs as i128;
    let scaled = t * BigRational::from_integer(big(list.ticks_per_unit));
    let slab_mult = l / (list.base_ticks as i128).gcd(&l);
    let t_mult = scaled.denom().to_i128().ok_or(FlowError::Overflow)?;
    let mult = slab_mult.lcm(&t_mult);
    let shift = (scaled * BigRational::from_integer(big(mult)))
        .to_integer()
        .to_i128()
        .ok_or(FlowError::Overflow)?;
    let total = list.total_ticks.checked_mul(mult).ok_or(FlowError::Overflow)?;

    let dim = slabs.size();
    let mut counts = vec![0i128; dim * dim];
    let lag = shift.abs();
    let mut early = PieceCursor::new(list, mult, slabs.slabs, 0);
    let mut late = PieceCursor::new(list, mult, slabs.slabs, lag);
    let mut remaining = total - lag;
    while remaining > 0 {
        let (se, sl) = (early.symbol, late.symbol);
        let step = early.left.min(late.left).min(remaining);
        let idx = if shift >= 0 { se * dim + sl } else { sl * dim + se };
        counts[idx] += step;
        early.advance(step);
        late.advance(step);
        remaining -= step;
    }
    let denom = total as f64;
    Ok(FlowCorr {
        t: t.clone(),
        labels: slabs.labels(),
        matrix: Matrix::from_vec(dim, counts.iter().map(|&c| c as f64 / denom).collect()),
        numerators: counts,
        denominator: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `int_{-m}^0 T_t dt`.
    Backward,
    /// `int_0^m T_t dt`.
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmMatrix {
    #[serde(with = "rational_string")]
    pub m: BigRational,
    pub orientation: Orientation,
    /// `int D(t) dt` over the interval.
    pub integral: Matrix,
    /// `integral / m`; `D(0)` when `m = 0`.
    pub average: Matrix,
    pub intervals: usize,
    pub halvings: u32,
    /// Max-abs change of the average at each halving.
    pub changes: Vec<f64>,
    /// Richardson estimate `|T_2n - T_n| / 3` of the final average.
    pub error_estimate: f64,
}

fn trapezoid(values: &[Matrix], width: f64) -> Matrix {
    let n = values.len() - 1;
    let mut acc = values[0].scale(0.5);
    acc.axpy(0.5, &values[n]);
    for v in &values[1..n] {
        acc.axpy(1.0, v);
    }
    acc.scale(width)
}

/// Composite trapezoid of `t -> D(t)` with halving until successive averages
/// differ by less than `tol` in max-abs.
pub fn flow_pm_matrix(
    list: &SegmentList,
    slabs: SlabAlgebra,
    m: &BigRational,
    orientation: Orientation,
    tol: f64,
) -> Result<PmMatrix, FlowError> {
    if m.is_negative() {
        return Err(FlowError::InvalidInput("m must be nonnegative".into()));
    }
    let sign = match orientation {
        Orientation::Backward => -BigRational::one(),
        Orientation::Forward => BigRational::one(),
    };
    if m.is_zero() {
        let d0 = flow_corr(list, slabs, m)?.matrix;
        return Ok(PmMatrix {
            m: m.clone(),
            orientation,
            integral: Matrix::zeros(slabs.size()),
            average: d0,
            intervals: 0,
            halvings: 0,
            changes: Vec::new(),
            error_estimate: 0.0,
        });
    }
    let eval = |k: usize, n: usize| -> Result<Matrix, FlowError> {
        let t = &sign * m * BigRational::new(big(k as i128), big(n as i128));
        Ok(flow_corr(list, slabs, &t)?.matrix)
    };
    let mf = m.to_f64().unwrap_or(f64::NAN);
    let mut n = INITIAL_INTERVALS;
    let mut values: Vec<Matrix> = (0..=n)
        .into_par_iter()
        .map(|k| eval(k, n))
        .collect::<Result<_, _>>()?;
    let mut estimate = trapezoid(&values, mf / n as f64);
    let mut changes = Vec::new();
    for halving in 1..=MAX_HALVINGS {
        let fresh: Vec<Matrix> = (0..n)
            .into_par_iter()
            .map(|k| eval(2 * k + 1, 2 * n))
            .collect::<Result<_, _>>()?;
        let mut merged = Vec::with_capacity(2 * n + 1);
        for (k, v) in values.into_iter().enumerate() {
            merged.push(v);
            if k < n {
                merged.push(fresh[k].clone());
            }
        }
        values = merged;
        n *= 2;
        let next = trapezoid(&values, mf / n as f64);
        let change = next.max_abs_diff(&estimate) / mf;
        changes.push(change);
        estimate = next;
        if change < tol {
            let integral = estimate;
            return Ok(PmMatrix {
                m: m.clone(),
                orientation,
                average: integral.scale(1.0 / mf),
                integral,
                intervals: n,
                halvings: halving,
                changes,
                error_estimate: change / 3.0,
            });
        }
    }
    Err(FlowError::NoConvergence {
        halvings: MAX_HALVINGS,
        last_change: changes.last().copied().unwrap_or(f64::NAN),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub slabs: SlabAlgebra,
    pub tolerance: f64,
    pub budget: u64,
    /// Spacing of the cached grid used for the family fit.
    pub grid_step: BigRational,
    /// Candidate shifts `a` for `T_a prod P_{m_i}`.
    pub shifts: Vec<BigRational>,
    /// Candidate index multisets `{m_i}`.
    pub index_sets: Vec<Vec<u32>>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let half = BigRational::new(big(1), big(2));
        FlowConfig {
            slabs: SlabAlgebra::default(),
            tolerance: QUADRATURE_TOLERANCE,
            budget: SEGMENT_BUDGET,
            grid_step: BigRational::new(big(1), big(16)),
            shifts: (-4..=4).map(|k| &half * BigRational::from_integer(big(k))).collect(),
            index_sets: vec![vec![], vec![1], vec![2], vec![1, 1], vec![1, 2]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowFamilyFit {
    /// `theta` or `T_a P_{m_1} ... P_{m_k}`.
    pub name: String,
    #[serde(with = "rational_string")]
    pub shift: BigRational,
    pub indices: Vec<u32>,
    pub distance_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowLimitReport {
    pub depth: usize,
    pub base: usize,
    pub stage: usize,
    pub q: u32,
    #[serde(with = "rational_string")]
    pub h_stage: BigRational,
    #[serde(with = "rational_string")]
    pub lag: BigRational,
    pub segments: usize,
    pub slabs: usize,
    pub boundary_bound: f64,
    /// `|D(q h_j) - J(int_{-q}^0) / q|_max`.
    pub residual_backward: f64,
    /// `|D(q h_j) - J(int_0^q) / q|_max`.
    pub residual_forward: f64,
    pub matched_orientation: Orientation,
    pub residual: f64,
    pub distance_to_product: f64,
    pub quadrature_error: f64,
    /// `|J(int_{-q}^0) - J(T_{-q} int_0^q)|_max`, routes through the
    /// transpose law and through direct negative-time sweeps.
    pub identity_gap: f64,
    pub best_fit: FlowFamilyFit,
}

fn uniform_kernel(steps: usize) -> Vec<f64> {
    let mut w = vec![1.0 / steps as f64; steps + 1];
    w[0] *= 0.5;
    w[steps] *= 0.5;
    w
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Compares `D(q h_j)` with `P_q / q` in both orientations and fits the
/// family `T_a prod P_{m_i}` on a cached grid.
pub fn flow_limit_check(
    realized: &RealizedSchedule,
    depth: usize,
    base: usize,
    q: u32,
    stage: usize,
    config: &FlowConfig,
) -> Result<FlowLimitReport, FlowError> {
    if stage < base || stage >= depth {
        return Err(FlowError::StageOutOfRange { stage, depth });
    }
    if q == 0 {
        return Err(FlowError::InvalidInput("q must be positive".into()));
    }
    let heights = flow_heights(realized, depth)?;
    let list = flow_segments(realized, depth, base, config.budget)?;
    let slabs = config.slabs;
    let h_stage = heights[stage - 1].clone();
    let qr = BigRational::from_integer(big(q as i128));
    let lag = &h_stage * &qr;
    let target = flow_corr(&list, slabs, &lag)?;

    let backward = flow_pm_matrix(&list, slabs, &qr, Orientation::Backward, config.tolerance)?;
    let forward = flow_pm_matrix(&list, slabs, &qr, Orientation::Forward, config.tolerance)?;
    let residual_backward = target.matrix.max_abs_diff(&backward.average);
    let residual_forward = target.matrix.max_abs_diff(&forward.average);
    // int_{-q}^0 D(t) dt = (int_0^q D(t) dt)^T by the transpose law.
    let identity_gap = backward.integral.max_abs_diff(&forward.integral.transpose());

    let product = {
        let mu = flow_corr(&list, slabs, &BigRational::zero())?.matrix.row_sums();
        Matrix::outer(&mu, &mu)
    };

    let best_fit = fit_family(&list, slabs, config, &target.matrix, &product)?;
    let (matched_orientation, residual) = if residual_backward <= residual_forward {
        (Orientation::Backward, residual_backward)
    } else {
        (Orientation::Forward, residual_forward)
    };
    let height = list.total_height().to_f64().unwrap_or(f64::NAN);
    Ok(FlowLimitReport {
        depth,
        base,
        stage,
        q,
        boundary_bound: lag.to_f64().unwrap_or(f64::NAN) / height,
        h_stage,
        lag,
        segments: list.len(),
        slabs: slabs.slabs,
        residual_backward,
        residual_forward,
        matched_orientation,
        residual,
        distance_to_product: target.matrix.max_abs_diff(&product),
        quadrature_error: backward.error_estimate.max(forward.error_estimate),
        identity_gap,
        best_fit,
    })
}

fn fit_family(
    list: &SegmentList,
    slabs: SlabAlgebra,
    config: &FlowConfig,
    target: &Matrix,
    product: &Matrix,
) -> Result<FlowFamilyFit, FlowError> {
    let g = &config.grid_step;
    if !g.is_positive() {
        return Err(FlowError::InvalidInput("grid step must be positive".into()));
    }
    let steps_of = |x: &BigRational| -> Result<i64, FlowError> {
        let k = x / g;
        if !k.is_integer() {
            return Err(FlowError::InvalidInput(format!("{x} is not a multiple of the grid step {g}")));
        }
        k.to_integer().to_i64().ok_or(FlowError::Overflow)
    };
    let kernels: Vec<Vec<f64>> = config
        .index_sets
        .iter()
        .map(|set| {
            set.iter().try_fold(vec![1.0], |acc, &m| {
                let steps = steps_of(&BigRational::from_integer(big(m as i128)))? as usize;
                Ok::<_, FlowError>(if steps == 0 { acc } else { convolve(&acc, &uniform_kernel(steps)) })
            })
        })
        .collect::<Result<_, _>>()?;
    let shifts: Vec<i64> = config.shifts.iter().map(steps_of).collect::<Result<_, _>>()?;
    let reach = kernels.iter().map(|k| k.len() as i64 - 1).max().unwrap_or(0);
    let lo = shifts.iter().min().copied().unwrap_or(0) - reach;
    let hi = shifts.iter().max().copied().unwrap_or(0);
    let grid: Vec<Matrix> = (lo..=hi)
        .into_par_iter()
        .map(|k| {
            let t = g * BigRational::from_integer(big(k as i128));
            flow_corr(list, slabs, &t).map(|c| c.matrix)
        })
        .collect::<Result<_, _>>()?;

    let mut best = FlowFamilyFit {
        name: "theta".into(),
        shift: BigRational::zero(),
        indices: Vec::new(),
        distance_max: target.max_abs_diff(product),
    };
    for (shift, &a) in config.shifts.iter().zip(&shifts) {
        for (set, kernel) in config.index_sets.iter().zip(&kernels) {
            // Kernel index i sits at time a - i g.
            let mut m = Matrix::zeros(slabs.size());
            for (i, w) in kernel.iter().enumerate() {
                m.axpy(*w, &grid[(a - i as i64 - lo) as usize]);
            }
            let d = target.max_abs_diff(&m);
            if d < best.distance_max {
                let mut name = format!("T_{shift}");
                for idx in set {
                    name += &format!(" P_{idx}");
                }
                best = FlowFamilyFit {
                    name,
                    shift: shift.clone(),
                    indices: set.clone(),
                    distance_max: d,
                };
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{catalog, ConstructionSchedule, CutRule, SpacerRule};

    fn r(p: i64, q: i64) -> BigRational {
        BigRational::new(big(p as i128), big(q as i128))
    }

    fn staircase(depth: usize) -> RealizedSchedule {
        catalog("staircase-flow").unwrap().realize(depth).unwrap()
    }

    fn flow_with_cuts(cuts: Vec<i64>, spacers: SpacerRule, depth: usize) -> RealizedSchedule {
        let s = ConstructionSchedule::flow(BigRational::one(), CutRule::List(cuts), spacers);
        crate::construction::validate_schedule(s).unwrap().realize(depth).unwrap()
    }

    #[test]
    fn heights_examples() {
        let s = flow_with_cuts(vec![2, 3], SpacerRule::Staircase, 3);
        assert_eq!(flow_heights(&s, 3).unwrap(), vec![r(1, 1), r(5, 2), r(17, 2)]);
        let s = flow_with_cuts(vec![2, 2, 2], SpacerRule::Staircase, 4);
        let h = flow_heights(&s, 4).unwrap();
        for w in h.windows(2) {
            assert_eq!(w[1], &w[0] * r(2, 1) + r(1, 2));
        }
        let s = flow_with_cuts(vec![3, 4], SpacerRule::Lists(vec![vec![0; 3], vec![0; 4]]), 3);
        assert_eq!(flow_heights(&s, 3).unwrap(), vec![r(1, 1), r(3, 1), r(12, 1)]);
    }

    #[test]
    fn segment_examples() {
        let s = staircase(6);
        let one = flow_segments(&s, 3, 3, SEGMENT_BUDGET).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.total_height(), r(17, 2));
        let s2 = flow_with_cuts(vec![2], SpacerRule::Staircase, 2);
        let two = flow_segments(&s2, 2, 1, SEGMENT_BUDGET).unwrap();
        let labels: Vec<SegmentLabel> = two.segments().iter().map(|s| s.label).collect();
        assert_eq!(labels, [SegmentLabel::Base, SegmentLabel::Base, SegmentLabel::Spacer]);
        assert_eq!(two.to_time(two.segments()[2].ticks as i128), r(1, 2));
        for depth in 3..=6 {
            let list = flow_segments(&s, depth, 2, SEGMENT_BUDGET).unwrap();
            assert_eq!(list.total_height(), flow_heights(&s, depth).unwrap()[depth - 1]);
            let copies: u64 = (2..depth).map(|j| j as u64 + 1).product();
            assert_eq!(list.base_copies() as u64, copies);
        }
        assert!(matches!(
            flow_segments(&s, 6, 1, 100),
            Err(FlowError::SegmentBudgetExceeded { .. })
        ));
        let mut csv = Vec::new();
        two.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "label,numerator,denominator\nbase,1,1\nbase,1,1\nspacer,1,2\n");
    }

    #[test]
    fn corr_single_copy() {
        let s = staircase(3);
        let list = flow_segments(&s, 3, 3, SEGMENT_BUDGET).unwrap();
        let slabs = SlabAlgebra::new(4).unwrap();
        let d0 = flow_corr(&list, slabs, &BigRational::zero()).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let want = if a == b && a < 4 { r(1, 4) } else { r(0, 1) };
                assert_eq!(d0.exact(a, b), want);
            }
        }
        // One slab: a -> a + 1 within the single copy, the top slab is lost.
        let d = flow_corr(&list, slabs, &r(17, 8)).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let want = if b == a + 1 && b < 4 { r(1, 4) } else { r(0, 1) };
                assert_eq!(d.exact(a, b), want, "{a} {b}");
            }
        }
        assert!(flow_corr(&list, slabs, &r(17, 2)).is_err());
    }

    /// Direct evaluation of `phi` at sample points of a fine grid.
    fn phi(list: &SegmentList, slabs: usize, u: &BigRational) -> usize {
        let mut start = BigRational::zero();
        for s in list.segments() {
            let len = list.to_time(s.ticks as i128);
            if u < &(&start + &len) {
                return match s.label {
                    SegmentLabel::Spacer => slabs,
                    SegmentLabel::Base => {
                        let off = (u - &start) * BigRational::from_integer(big(slabs as i128)) / &len;
                        off.to_integer().to_usize().unwrap()
                    }
                };
            }
            start += len;
        }
        unreachable!()
    }

    #[test]
    fn sweep_matches_sampling_oracle() {
        let s = staircase(5);
        let list = flow_segments(&s, 4, 2, SEGMENT_BUDGET).unwrap();
        let slabs = SlabAlgebra::new(3).unwrap();
        // phi is constant on cells of width 1/(unit * 3 * t-den); midpoint
        // sampling on that grid is exact.
        for t in [r(0, 1), r(7, 5), r(-13, 4), r(5, 2), r(-1, 3)] {
            let d = flow_corr(&list, slabs, &t).unwrap();
            let fine = list.ticks_per_unit * 3 * t.denom().to_i128().unwrap() * 2;
            let h = list.total_height();
            let cells = (&h * BigRational::from_integer(big(fine))).to_integer().to_i128().unwrap();
            let mut counts = vec![0i128; 16];
            for c in 0..cells {
                let u = BigRational::new(big(2 * c + 1), big(2 * fine));
                let v = &u + &t;
                if v.is_negative() || v >= h {
                    continue;
                }
                counts[phi(&list, 3, &u) * 4 + phi(&list, 3, &v)] += 1;
            }
            for a in 0..4 {
                for b in 0..4 {
                    let want = BigRational::new(big(counts[a * 4 + b]), big(cells));
                    assert_eq!(d.exact(a, b), want, "t={t} {a} {b}");
                }
            }
        }
    }

    #[test]
    fn transpose_law_and_mass() {
        let s = staircase(6);
        let list = flow_segments(&s, 6, 3, SEGMENT_BUDGET).unwrap();
        let slabs = SlabAlgebra::default();
        let h = list.total_height();
        for t in [r(1, 3), r(35, 2), r(1001, 7)] {
            let pos = flow_corr(&list, slabs, &t).unwrap();
            let neg = flow_corr(&list, slabs, &-t.clone()).unwrap();
            assert_eq!(neg.matrix, pos.matrix.transpose());
            let total: BigRational = (0..17).flat_map(|a| (0..17).map(move |b| (a, b))).map(|(a, b)| pos.exact(a, b)).sum();
            assert_eq!(total, (&h - &t) / &h);
        }
    }

    #[test]
    fn quadrature_identity() {
        let s = staircase(6);
        let list = flow_segments(&s, 6, 3, SEGMENT_BUDGET).unwrap();
        let slabs = SlabAlgebra::default();
        let m = r(1, 1);
        let back = flow_pm_matrix(&list, slabs, &m, Orientation::Backward, 1e-4).unwrap();
        let fwd = flow_pm_matrix(&list, slabs, &m, Orientation::Forward, 1e-4).unwrap();
        assert!(back.integral.max_abs_diff(&fwd.integral.transpose()) < 1e-12);
        let zero = flow_pm_matrix(&list, slabs, &r(0, 1), Orientation::Backward, 1e-4).unwrap();
        assert_eq!(zero.integral, Matrix::zeros(17));
        let small = flow_pm_matrix(&list, slabs, &r(1, 1000), Orientation::Forward, 1e-4).unwrap();
        assert!(small.average.max_abs_diff(&zero.average) < 1e-3);
    }

    #[test]
    fn zero_spacer_flow_is_rigid() {
        let s = flow_with_cuts(vec![2], SpacerRule::Pattern(vec![0, 0]), 12);
        let list = flow_segments(&s, 12, 3, SEGMENT_BUDGET).unwrap();
        let slabs = SlabAlgebra::default();
        let d0 = flow_corr(&list, slabs, &BigRational::zero()).unwrap().matrix;
        let h = flow_heights(&s, 12).unwrap();
        let dh = flow_corr(&list, slabs, &h[8]).unwrap().matrix;
        let bound = (&h[8] / &h[11]).to_f64().unwrap();
        assert!(dh.l1_diff(&d0) <= bound + 1e-12);
    }
}
