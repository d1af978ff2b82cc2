//! Construction schedules for rank-one cutting and stacking.
//!
//! A schedule is the recipe `(h1, r_j, s_j)`: start from a tower with
//! `h1 + 1` levels, cut it into `r_j` columns of equal width, put `s_j(i)`
//! spacer levels over column `i` and restack. Level counts obey
//! `l_{j+1} = l_j * r_j + sum_i s_j(i)` for transformations and
//! `h_{j+1} = r_j * h_j + sum_i s_j(i)` for flows.
//!
//! Stages are 1-based throughout: stage `j` is the tower before the `j`-th
//! cut, so the cut and spacer vector of stage `j` produce stage `j + 1`.

use std::fmt;

use num_bigint::BigUint;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of stages checked eagerly by [`validate_schedule`].
pub const VALIDATION_STAGES: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("cut count at stage {stage} is {value}, must be at least 2")]
    NonPositiveCut { stage: usize, value: i128 },
    #[error("negative spacer {value} at stage {stage}, column {column}")]
    NegativeSpacer {
        stage: usize,
        column: usize,
        value: i64,
    },
    #[error("malformed rule: {0}")]
    MalformedRule(String),
    #[error("declared bound violated at stage {stage}: {detail}")]
    BoundViolated { stage: usize, detail: String },
    #[error("stochastic schedule must be realized with a seed before use")]
    UnrealizedStochastic,
    #[error("unknown catalog entry {0:?}")]
    UnknownName(String),
    #[error("stage {stage} level count {value} does not fit in 64 bits")]
    Overflow { stage: usize, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Transformation,
    Flow,
}

/// Per-stage cut counts `r_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutRule {
    Constant(i64),
    /// Explicit `r_1, r_2, ...`; the final value repeats forever.
    List(Vec<i64>),
    /// `r_j = slope * j + intercept`.
    Affine { slope: i64, intercept: i64 },
}

impl CutRule {
    pub fn cut(&self, stage: usize) -> i128 {
        match self {
            CutRule::Constant(r) => *r as i128,
            CutRule::List(values) => values
                .get(stage - 1)
                .or_else(|| values.last())
                .copied()
                .unwrap_or(0) as i128,
            CutRule::Affine { slope, intercept } => {
                *slope as i128 * stage as i128 + *intercept as i128
            }
        }
    }
}

/// Per-stage spacer vectors `s_j = (s_j(1), ..., s_j(r_j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacerRule {
    /// The same vector at every stage.
    Pattern(Vec<i64>),
    /// Explicit vectors per stage; the final vector repeats.
    Lists(Vec<Vec<i64>>),
    /// Independent `{0, 1}` spacers with `Prob(s = 0) = a`.
    Bernoulli { a: f64 },
    /// Flow spacers `s_j(i) = (i - 1) / r_j`.
    Staircase,
    /// Flow spacers `s_j(i) = (i - 1) / (j r_j)`.
    RigidStaircase,
}

/// Declared bounds of a bounded construction: `s_j(i) < spacer`,
/// `2 < r_j < cut`, and optionally `|s_j(i+1) - s_j(i)| < derivative`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub spacer: u64,
    pub cut: u64,
    pub derivative: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstructionSchedule {
    pub kind: ScheduleKind,
    /// Integer for transformations, positive rational for flows.
    pub h1: BigRational,
    pub cut_rule: CutRule,
    pub spacer_rule: SpacerRule,
    pub bounds: Option<Bounds>,
}

impl ConstructionSchedule {
    pub fn transformation(h1: u64, cut_rule: CutRule, spacer_rule: SpacerRule) -> Self {
        ConstructionSchedule {
            kind: ScheduleKind::Transformation,
            h1: BigRational::from_integer(h1.into()),
            cut_rule,
            spacer_rule,
            bounds: None,
        }
    }

    pub fn flow(h1: BigRational, cut_rule: CutRule, spacer_rule: SpacerRule) -> Self {
        ConstructionSchedule {
            kind: ScheduleKind::Flow,
            h1,
            cut_rule,
            spacer_rule,
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = Some(bounds);
        self
    }
}

/// A schedule whose rules passed validation. Construct with
/// [`validate_schedule`] or [`catalog`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSchedule {
    schedule: ConstructionSchedule,
    name: Option<String>,
}

impl ValidatedSchedule {
    pub fn schedule(&self) -> &ConstructionSchedule {
        &self.schedule
    }

    pub fn kind(&self) -> ScheduleKind {
        self.schedule.kind
    }

    /// Catalog name, if the schedule came from the catalog.
    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self.schedule.spacer_rule, SpacerRule::Bernoulli { .. })
    }

    /// `Prob(s = 0)` for Bernoulli schedules.
    pub fn bernoulli_a(&self) -> Option<f64> {
        match self.schedule.spacer_rule {
            SpacerRule::Bernoulli { a } => Some(a),
            _ => None,
        }
    }

    pub fn cut(&self, stage: usize) -> u64 {
        self.schedule.cut_rule.cut(stage) as u64
    }

    fn deterministic_stage(&self, stage: usize) -> RealizedStage {
        let cut = self.cut(stage);
        match &self.schedule.spacer_rule {
            SpacerRule::Pattern(p) => RealizedStage::integral(cut, to_u64(p)),
            SpacerRule::Lists(lists) => {
                let v = lists.get(stage - 1).or_else(|| lists.last()).unwrap();
                RealizedStage::integral(cut, to_u64(v))
            }
            SpacerRule::Staircase => RealizedStage {
                cut,
                spacers: (0..cut).collect(),
                denominator: cut,
            },
            SpacerRule::RigidStaircase => RealizedStage {
                cut,
                spacers: (0..cut).collect(),
                denominator: cut * stage as u64,
            },
            SpacerRule::Bernoulli { .. } => unreachable!("stochastic stages need a seed"),
        }
    }

    /// Materializes stages `1..depth`. Fails for stochastic schedules.
    pub fn realize(&self, depth: usize) -> Result<RealizedSchedule, ScheduleError> {
        if self.is_stochastic() {
            return Err(ScheduleError::UnrealizedStochastic);
        }
        let stages = (1..depth.max(1))
            .map(|j| self.deterministic_stage(j))
            .collect();
        Ok(RealizedSchedule {
            kind: self.schedule.kind,
            h1: self.schedule.h1.clone(),
            stages,
            provenance: Provenance::Deterministic,
        })
    }

    /// Materializes stages `1..depth`, drawing Bernoulli spacers from `seed`.
    /// Deterministic schedules ignore the seed.
    pub fn realize_seeded(
        &self,
        seed: u64,
        depth: usize,
    ) -> Result<RealizedSchedule, ScheduleError> {
        match self.schedule.spacer_rule {
            SpacerRule::Bernoulli { a } => {
                let mut source = SpacerSource::new(seed, a);
                let stages = (1..depth.max(1))
                    .map(|j| {
                        let cut = self.cut(j);
                        let spacers = (0..cut).map(|_| source.draw()).collect();
                        RealizedStage::integral(cut, spacers)
                    })
                    .collect();
                Ok(RealizedSchedule {
                    kind: self.schedule.kind,
                    h1: self.schedule.h1.clone(),
                    stages,
                    provenance: Provenance::Seeded { seed },
                })
            }
            _ => self.realize(depth),
        }
    }

    /// Realizes with `seed` when the schedule needs one.
    pub fn realize_with(
        &self,
        seed: Option<u64>,
        depth: usize,
    ) -> Result<RealizedSchedule, ScheduleError> {
        match (self.is_stochastic(), seed) {
            (true, Some(seed)) => self.realize_seeded(seed, depth),
            (true, None) => Err(ScheduleError::UnrealizedStochastic),
            (false, _) => self.realize(depth),
        }
    }
}

fn to_u64(values: &[i64]) -> Vec<u64> {
    values.iter().map(|&v| v as u64).collect()
}

/// Bernoulli spacer source.
///
/// ChaCha8 seeded with `seed_from_u64(seed)`. Each spacer consumes one
/// `next_u64` word `x`, stages in increasing order and columns left to right;
/// the spacer is `0` iff `(x >> 11) * 2^-53 < a`.
struct SpacerSource {
    rng: ChaCha8Rng,
    a: f64,
}

impl SpacerSource {
    fn new(seed: u64, a: f64) -> Self {
        SpacerSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            a,
        }
    }

    fn draw(&mut self) -> u64 {
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        u64::from(u >= self.a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source")]
pub enum Provenance {
    Deterministic,
    Seeded { seed: u64 },
}

/// Cut count and spacer vector of one stage. Spacer `i` has duration
/// `spacers[i] / denominator`; transformations always have denominator 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedStage {
    pub cut: u64,
    pub spacers: Vec<u64>,
    pub denominator: u64,
}

impl RealizedStage {
    pub fn integral(cut: u64, spacers: Vec<u64>) -> Self {
        RealizedStage {
            cut,
            spacers,
            denominator: 1,
        }
    }

    pub fn spacer_sum(&self) -> u64 {
        self.spacers.iter().sum()
    }

    pub fn spacer_time(&self, column: usize) -> BigRational {
        BigRational::new(
            self.spacers[column].into(),
            self.denominator.into(),
        )
    }

    pub fn spacer_time_sum(&self) -> BigRational {
        BigRational::new(self.spacer_sum().into(), self.denominator.into())
    }
}

/// Per-stage `(r_j, s_j)` for stages `1..depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedSchedule {
    pub kind: ScheduleKind,
    #[serde(with = "rational_string")]
    pub h1: BigRational,
    /// `stages[j - 1]` maps stage `j` to stage `j + 1`.
    pub stages: Vec<RealizedStage>,
    pub provenance: Provenance,
}

impl RealizedSchedule {
    /// Deepest stage this realization describes.
    pub fn depth(&self) -> usize {
        self.stages.len() + 1
    }

    pub fn stage(&self, j: usize) -> &RealizedStage {
        &self.stages[j - 1]
    }

    pub fn heights(&self) -> HeightsTable {
        match self.kind {
            ScheduleKind::Transformation => {
                let mut levels = Vec::with_capacity(self.depth());
                let mut l = self.h1.to_integer().to_biguint().unwrap() + 1u32;
                levels.push(l.clone());
                for st in &self.stages {
                    l = l * st.cut + st.spacer_sum();
                    levels.push(l.clone());
                }
                HeightsTable::Levels(levels)
            }
            ScheduleKind::Flow => {
                let mut heights = Vec::with_capacity(self.depth());
                let mut h = self.h1.clone();
                heights.push(h.clone());
                for st in &self.stages {
                    h = h * BigRational::from_integer(st.cut.into()) + st.spacer_time_sum();
                    heights.push(h.clone());
                }
                HeightsTable::Flow(heights)
            }
        }
    }

    /// Level counts `l_1..l_depth` as machine integers.
    pub fn level_counts_u64(&self) -> Result<Vec<u64>, ScheduleError> {
        let mut out = Vec::with_capacity(self.depth());
        let mut l = (self.h1.to_integer().to_u64().unwrap() as u128) + 1;
        out.push(l as u64);
        for (idx, st) in self.stages.iter().enumerate() {
            l = l
                .checked_mul(st.cut as u128)
                .and_then(|v| v.checked_add(st.spacer_sum() as u128))
                .filter(|&v| v <= i64::MAX as u128)
                .ok_or_else(|| ScheduleError::Overflow {
                    stage: idx + 2,
                    value: "> 2^63".into(),
                })?;
            out.push(l as u64);
        }
        Ok(out)
    }

    /// Product `r_{from} * ... * r_{to - 1}`.
    pub fn cut_product(&self, from: usize, to: usize) -> BigUint {
        (from..to).fold(BigUint::one(), |acc, j| acc * self.stage(j).cut)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeightsTable {
    /// `l_j = h_j + 1` for a transformation, index `j - 1`.
    Levels(Vec<BigUint>),
    /// `h_j` for a flow, index `j - 1`.
    Flow(Vec<BigRational>),
}

impl HeightsTable {
    pub fn len(&self) -> usize {
        match self {
            HeightsTable::Levels(v) => v.len(),
            HeightsTable::Flow(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn levels(&self) -> Option<&[BigUint]> {
        match self {
            HeightsTable::Levels(v) => Some(v),
            HeightsTable::Flow(_) => None,
        }
    }

    pub fn flow_heights(&self) -> Option<&[BigRational]> {
        match self {
            HeightsTable::Flow(v) => Some(v),
            HeightsTable::Levels(_) => None,
        }
    }
}

/// Checks rule shapes and declared bounds on the first
/// [`VALIDATION_STAGES`] stages.
pub fn validate_schedule(
    schedule: ConstructionSchedule,
) -> Result<ValidatedSchedule, ScheduleError> {
    match schedule.kind {
        ScheduleKind::Transformation => {
            if !schedule.h1.is_integer() || schedule.h1.is_negative() {
                return Err(ScheduleError::MalformedRule(format!(
                    "transformation h1 must be a nonnegative integer, got {}",
                    schedule.h1
                )));
            }
            if matches!(
                schedule.spacer_rule,
                SpacerRule::Staircase | SpacerRule::RigidStaircase
            ) {
                return Err(ScheduleError::MalformedRule(
                    "staircase spacers are only defined for flows".into(),
                ));
            }
        }
        ScheduleKind::Flow => {
            if !schedule.h1.is_positive() {
                return Err(ScheduleError::MalformedRule(format!(
                    "flow h1 must be positive, got {}",
                    schedule.h1
                )));
            }
            if matches!(schedule.spacer_rule, SpacerRule::Bernoulli { .. }) {
                return Err(ScheduleError::MalformedRule(
                    "bernoulli spacers are only defined for transformations".into(),
                ));
            }
        }
    }

    match &schedule.cut_rule {
        CutRule::List(v) if v.is_empty() => {
            return Err(ScheduleError::MalformedRule("empty cut list".into()))
        }
        CutRule::Affine { slope, .. } if *slope < 0 => {
            // Eventually falls below 2.
            let stage = (1..).find(|&j| schedule.cut_rule.cut(j) < 2).unwrap();
            return Err(ScheduleError::NonPositiveCut {
                stage,
                value: schedule.cut_rule.cut(stage),
            });
        }
        _ => {}
    }

    match &schedule.spacer_rule {
        SpacerRule::Bernoulli { a } => {
            if !(a.is_finite() && *a > 0.0 && *a < 1.0) {
                return Err(ScheduleError::MalformedRule(format!(
                    "bernoulli parameter must satisfy 0 < a < 1, got {a}"
                )));
            }
        }
        SpacerRule::Lists(lists) if lists.is_empty() => {
            return Err(ScheduleError::MalformedRule("empty spacer lists".into()))
        }
        _ => {}
    }

    for stage in 1..=VALIDATION_STAGES {
        let r = schedule.cut_rule.cut(stage);
        if r < 2 {
            return Err(ScheduleError::NonPositiveCut { stage, value: r });
        }
        let explicit = match &schedule.spacer_rule {
            SpacerRule::Pattern(p) => Some(p.as_slice()),
            SpacerRule::Lists(lists) => Some(
                lists
                    .get(stage - 1)
                    .or_else(|| lists.last())
                    .unwrap()
                    .as_slice(),
            ),
            _ => None,
        };
        if let Some(spacers) = explicit {
            if spacers.len() as i128 != r {
                return Err(ScheduleError::MalformedRule(format!(
                    "stage {stage}: spacer vector has {} entries but r_{stage} = {r}",
                    spacers.len()
                )));
            }
            if let Some((column, &value)) = spacers.iter().enumerate().find(|(_, &v)| v < 0) {
                return Err(ScheduleError::NegativeSpacer {
                    stage,
                    column: column + 1,
                    value,
                });
            }
        }
        if let Some(bounds) = &schedule.bounds {
            check_bounds(bounds, stage, r, &schedule)?;
        }
    }

    Ok(ValidatedSchedule {
        schedule,
        name: None,
    })
}

fn check_bounds(
    bounds: &Bounds,
    stage: usize,
    r: i128,
    schedule: &ConstructionSchedule,
) -> Result<(), ScheduleError> {
    if !(2 < r && r < bounds.cut as i128) {
        return Err(ScheduleError::BoundViolated {
            stage,
            detail: format!("r_{stage} = {r} outside 2 < r < {}", bounds.cut),
        });
    }
    // Spacers as exact rationals num/den.
    let (nums, den): (Vec<i64>, i64) = match &schedule.spacer_rule {
        SpacerRule::Pattern(p) => (p.clone(), 1),
        SpacerRule::Lists(lists) => (
            lists.get(stage - 1).or_else(|| lists.last()).unwrap().clone(),
            1,
        ),
        SpacerRule::Bernoulli { .. } => (vec![0, 1], 1),
        SpacerRule::Staircase => ((0..r as i64).collect(), r as i64),
        SpacerRule::RigidStaircase => ((0..r as i64).collect(), r as i64 * stage as i64),
    };
    let s = bounds.spacer as i128 * den as i128;
    if let Some(v) = nums.iter().find(|&&v| v as i128 >= s) {
        return Err(ScheduleError::BoundViolated {
            stage,
            detail: format!("spacer {v}/{den} not below {}", bounds.spacer),
        });
    }
    if let Some(d) = bounds.derivative {
        let limit = d as i128 * den as i128;
        if nums
            .windows(2)
            .any(|w| (w[1] as i128 - w[0] as i128).abs() >= limit)
        {
            return Err(ScheduleError::BoundViolated {
                stage,
                detail: format!("spacer increment not below {d}"),
            });
        }
    }
    Ok(())
}

/// Level counts `l_1..l_depth` (or flow heights) of a deterministic schedule.
pub fn heights(schedule: &ValidatedSchedule, depth: usize) -> Result<HeightsTable, ScheduleError> {
    Ok(schedule.realize(depth)?.heights())
}

/// Draws the Bernoulli spacers of stages `1..depth` from `seed`.
pub fn realize_stochastic(
    schedule: &ValidatedSchedule,
    seed: u64,
    depth: usize,
) -> Result<RealizedSchedule, ScheduleError> {
    if !schedule.is_stochastic() {
        return Err(ScheduleError::MalformedRule(
            "realize_stochastic needs a bernoulli spacer rule".into(),
        ));
    }
    schedule.realize_seeded(seed, depth)
}

/// Names accepted by [`catalog`]. `stochastic-chacon` takes an optional
/// parameter, e.g. `stochastic-chacon(1/3)`.
pub const CATALOG_NAMES: &[&str] = &[
    "chacon",
    "modified-chacon",
    "odometer5",
    "dyadic-odometer",
    "spaced-odometer5",
    "stochastic-chacon",
    "staircase-flow",
];

pub fn catalog(name: &str) -> Result<ValidatedSchedule, ScheduleError> {
    let name = name.trim();
    let (base, arg) = match name.find('(') {
        Some(open) if name.ends_with(')') => (&name[..open], Some(&name[open + 1..name.len() - 1])),
        _ => (name, None),
    };
    let unknown = || ScheduleError::UnknownName(name.to_string());
    if arg.is_some() && base != "stochastic-chacon" {
        return Err(unknown());
    }
    let pattern = |r: i64, s: &[i64]| {
        ConstructionSchedule::transformation(0, CutRule::Constant(r), SpacerRule::Pattern(s.to_vec()))
    };
    let schedule = match base {
        "chacon" => pattern(2, &[0, 1]),
        "modified-chacon" => pattern(3, &[0, 1, 0]),
        "odometer5" => pattern(5, &[0, 0, 0, 0, 0]),
        "dyadic-odometer" => pattern(2, &[0, 0]),
        "spaced-odometer5" => pattern(5, &[2, 2, 2, 2, 0]),
        "stochastic-chacon" => {
            let a = match arg {
                None => 0.5,
                Some(text) => parse_probability(text).ok_or_else(unknown)?,
            };
            ConstructionSchedule::transformation(
                0,
                CutRule::Affine {
                    slope: 1,
                    intercept: 1,
                },
                SpacerRule::Bernoulli { a },
            )
        }
        "staircase-flow" => ConstructionSchedule::flow(
            BigRational::one(),
            CutRule::Affine {
                slope: 1,
                intercept: 1,
            },
            SpacerRule::Staircase,
        ),
        _ => return Err(unknown()),
    };
    let mut validated = validate_schedule(schedule)?;
    validated.name = Some(match arg {
        Some(_) => name.to_string(),
        None => base.to_string(),
    });
    Ok(validated)
}

/// Parses `0.25` or `1/4`.
pub fn parse_probability(text: &str) -> Option<f64> {
    let text = text.trim();
    if let Some((p, q)) = text.split_once('/') {
        let p: f64 = p.trim().parse().ok()?;
        let q: f64 = q.trim().parse().ok()?;
        (q != 0.0).then(|| p / q)
    } else {
        text.parse().ok()
    }
}

/// Word length at depth `J` and the column width ratio `w_J / w_j0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservableMass {
    pub word_length: BigUint,
    pub width_ratio: BigRational,
}

pub fn observable_mass(
    realized: &RealizedSchedule,
    depth: usize,
    base: usize,
) -> ObservableMass {
    assert!(base <= depth && depth <= realized.depth());
    let levels = match realized.heights() {
        HeightsTable::Levels(v) => v,
        HeightsTable::Flow(_) => panic!("observable mass is defined for transformations"),
    };
    let product = realized.cut_product(base, depth);
    ObservableMass {
        word_length: levels[depth - 1].clone(),
        width_ratio: BigRational::new(1.into(), product.into()),
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Transformation => "transformation",
            ScheduleKind::Flow => "flow",
        })
    }
}

/// Least common multiple helper shared with the flow engine.
pub(crate) fn lcm_u128(a: u128, b: u128) -> u128 {
    a / a.gcd(&b) * b
}

pub(crate) mod rational_string {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&value.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn levels(name: &str, depth: usize) -> Vec<u64> {
        let s = catalog(name).unwrap();
        s.realize(depth).unwrap().level_counts_u64().unwrap()
    }

    #[test]
    fn catalog_entries_match_published_parameters() {
        let m = catalog("modified-chacon").unwrap();
        assert_eq!(m.schedule().cut_rule, CutRule::Constant(3));
        assert_eq!(m.schedule().spacer_rule, SpacerRule::Pattern(vec![0, 1, 0]));
        let c = catalog("chacon").unwrap();
        assert_eq!(c.schedule().spacer_rule, SpacerRule::Pattern(vec![0, 1]));
        let s = catalog("spaced-odometer5").unwrap();
        assert_eq!(s.schedule().cut_rule, CutRule::Constant(5));
        assert_eq!(s.schedule().spacer_rule, SpacerRule::Pattern(vec![2, 2, 2, 2, 0]));
        let d = catalog("dyadic-odometer").unwrap();
        assert_eq!(d.schedule().spacer_rule, SpacerRule::Pattern(vec![0, 0]));
        assert!(matches!(catalog("nope"), Err(ScheduleError::UnknownName(_))));
        assert!(matches!(catalog("chacon(3)"), Err(ScheduleError::UnknownName(_))));
    }

    #[test]
    fn heights_follow_recursion() {
        assert_eq!(levels("chacon", 5), vec![1, 3, 7, 15, 31]);
        assert_eq!(levels("modified-chacon", 4), vec![1, 4, 13, 40]);
        assert_eq!(levels("spaced-odometer5", 3), vec![1, 13, 73]);
    }

    #[test]
    fn staircase_flow_heights() {
        let flow = validate_schedule(ConstructionSchedule::flow(
            BigRational::one(),
            CutRule::List(vec![2, 3]),
            SpacerRule::Staircase,
        ))
        .unwrap();
        let h = heights(&flow, 3).unwrap();
        let expected: Vec<BigRational> = ["1", "5/2", "17/2"].iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(h.flow_heights().unwrap(), expected.as_slice());
    }

    #[test]
    fn rejects_bad_rules() {
        let r1 = ConstructionSchedule::transformation(0, CutRule::Constant(1), SpacerRule::Pattern(vec![0]));
        assert!(matches!(validate_schedule(r1), Err(ScheduleError::NonPositiveCut { stage: 1, value: 1 })));
        let neg = ConstructionSchedule::transformation(0, CutRule::Constant(2), SpacerRule::Pattern(vec![0, -1]));
        assert!(matches!(validate_schedule(neg), Err(ScheduleError::NegativeSpacer { .. })));
        let len = ConstructionSchedule::transformation(0, CutRule::Constant(3), SpacerRule::Pattern(vec![0, 1]));
        assert!(matches!(validate_schedule(len), Err(ScheduleError::MalformedRule(_))));
        let degenerate = ConstructionSchedule::transformation(0, CutRule::Constant(3), SpacerRule::Bernoulli { a: 1.0 });
        assert!(matches!(validate_schedule(degenerate), Err(ScheduleError::MalformedRule(_))));
        let falling = ConstructionSchedule::transformation(
            0,
            CutRule::Affine { slope: -1, intercept: 10 },
            SpacerRule::Bernoulli { a: 0.5 },
        );
        assert!(matches!(validate_schedule(falling), Err(ScheduleError::NonPositiveCut { stage: 9, .. })));
    }

    #[test]
    fn bounds_are_checked() {
        let ok = ConstructionSchedule::transformation(0, CutRule::Constant(3), SpacerRule::Pattern(vec![0, 1, 0]))
            .with_bounds(Bounds { spacer: 2, cut: 4, derivative: None });
        assert!(validate_schedule(ok).is_ok());
        let chacon = ConstructionSchedule::transformation(0, CutRule::Constant(2), SpacerRule::Pattern(vec![0, 1]))
            .with_bounds(Bounds { spacer: 2, cut: 4, derivative: None });
        assert!(matches!(validate_schedule(chacon), Err(ScheduleError::BoundViolated { .. })));
        let deriv = ConstructionSchedule::transformation(0, CutRule::Constant(3), SpacerRule::Pattern(vec![0, 3, 0]))
            .with_bounds(Bounds { spacer: 5, cut: 4, derivative: Some(2) });
        assert!(matches!(validate_schedule(deriv), Err(ScheduleError::BoundViolated { .. })));
    }

    #[test]
    fn stochastic_needs_seed() {
        let s = catalog("stochastic-chacon").unwrap();
        assert_eq!(heights(&s, 4), Err(ScheduleError::UnrealizedStochastic));
        let a = realize_stochastic(&s, 42, 8).unwrap();
        let b = realize_stochastic(&s, 42, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance, Provenance::Seeded { seed: 42 });
        // default cut rule r_j = j + 1
        assert_eq!(a.stages.iter().map(|s| s.cut).collect::<Vec<_>>(), vec![2, 3, 4, 5, 6, 7, 8]);
        assert!(a.stages.iter().all(|s| s.spacers.iter().all(|&x| x <= 1)));
        let other = realize_stochastic(&s, 43, 8).unwrap();
        assert_ne!(a, other);
        assert_eq!(catalog("stochastic-chacon(1/4)").unwrap().bernoulli_a(), Some(0.25));
    }

    #[test]
    fn bernoulli_fraction_concentrates() {
        let s = catalog("stochastic-chacon").unwrap();
        let r = realize_stochastic(&s, 7, 10).unwrap();
        let draws: Vec<u64> = r.stages.iter().flat_map(|s| s.spacers.iter().copied()).collect();
        let n = draws.len() as f64;
        let ones = draws.iter().sum::<u64>() as f64;
        let sigma = (n * 0.25).sqrt();
        assert!((ones - n / 2.0).abs() <= 5.0 * sigma, "{ones} of {n}");
    }

    #[test]
    fn observable_mass_examples() {
        let c = catalog("chacon").unwrap().realize(3).unwrap();
        let m = observable_mass(&c, 3, 1);
        assert_eq!(m.word_length, 7u32.into());
        assert_eq!(m.width_ratio, BigRational::new(1.into(), 4.into()));
        let m = observable_mass(&c, 3, 3);
        assert_eq!(m.width_ratio, BigRational::one());
        let mc = catalog("modified-chacon").unwrap().realize(3).unwrap();
        let m = observable_mass(&mc, 3, 1);
        assert_eq!(m.word_length, 13u32.into());
        assert_eq!(m.width_ratio, BigRational::new(1.into(), 9.into()));
    }

    #[test]
    fn overflow_reported_for_deep_words() {
        let c = catalog("chacon").unwrap().realize(80).unwrap();
        assert!(matches!(c.level_counts_u64(), Err(ScheduleError::Overflow { .. })));
    }
}
