//! Validated experiment plans.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rankone_core::construction::{Bounds, CATALOG_NAMES};
use rankone_core::correlation::COUNTER_NAMES;
use rankone_core::{
    catalog, validate_schedule, ConstructionSchedule, CutRule, HeightsTable, RealizedSchedule,
    ScheduleKind, SpacerRule, ValidatedSchedule,
};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{parse_lines, parse_rational, Entry, ParseError};
use crate::experiments::{self, PreparedExperiment, KIND_NAMES};

/// Symbol budget used when a plan names neither depth nor budget.
pub const DEFAULT_SYMBOL_BUDGET: u64 = 10_000_000;
/// Segment budget for flows under the same condition.
pub const DEFAULT_SEGMENT_BUDGET: u64 = 200_000;
/// Stages realized beyond which plans are refused.
pub const MAX_STAGES: usize = 256;
const AUTO_BASE_RANGE: (u64, u64) = (8, 64);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{}", match .line { Some(l) => format!("line {l}: {message}"), None => message.clone() })]
    Validation { line: Option<usize>, message: String },
}

impl ConfigError {
    pub fn validation(message: impl Into<String>) -> Self {
        ConfigError::Validation { line: None, message: message.into() }
    }

    pub fn at(entry: &Entry, message: impl Into<String>) -> Self {
        ConfigError::Validation { line: Some(entry.line), message: message.into() }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
    Both,
}

impl OutputFormat {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "json" => Some(OutputFormat::Json),
            "csv" => Some(OutputFormat::Csv),
            "both" => Some(OutputFormat::Both),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
            OutputFormat::Both => "both",
        }
    }

    pub fn json(self) -> bool {
        self != OutputFormat::Csv
    }

    pub fn csv(self) -> bool {
        self != OutputFormat::Json
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthMode {
    Fixed,
    Budget(u64),
}

/// Realized construction plus the stage geometry every experiment shares.
#[derive(Debug, Clone)]
pub struct PlanContext {
    pub schedule: ValidatedSchedule,
    /// Realization through the deepest usable stage.
    pub realized: RealizedSchedule,
    pub seed: Option<u64>,
    /// `l_j` for transformations, `h_j` rounded for flows, `j = 1..`.
    pub levels: Vec<u64>,
    pub flow_heights: Vec<BigRational>,
    pub base: usize,
    pub depth: usize,
    pub engine: String,
    /// Bernoulli parameter as an exact rational.
    pub bernoulli_a: Option<BigRational>,
}

impl PlanContext {
    pub fn kind(&self) -> ScheduleKind {
        self.schedule.kind()
    }

    /// Deepest stage a tower may use.
    pub fn max_depth(&self) -> usize {
        self.realized.depth()
    }

    /// The realization cut back to `depth` stages.
    pub fn realized_to(&self, depth: usize) -> RealizedSchedule {
        let mut r = self.realized.clone();
        r.stages.truncate(depth.saturating_sub(1));
        r
    }

    pub fn level(&self, stage: usize) -> u64 {
        self.levels[stage - 1]
    }

    /// `|n| <= l_J / 4` at depth `depth`.
    pub fn lag_cap(&self, depth: usize) -> u64 {
        self.level(depth) / 4
    }
}

pub struct PlannedExperiment {
    pub name: String,
    pub kind: &'static str,
    pub prepared: Box<dyn PreparedExperiment>,
}

impl std::fmt::Debug for PlannedExperiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlannedExperiment")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("params", &self.prepared.echo())
            .finish()
    }
}

#[derive(Debug)]
pub struct ExperimentPlan {
    pub context: PlanContext,
    pub base_mode_auto: bool,
    pub depth_mode: DepthMode,
    pub construction_echo: Value,
    pub output_dir: PathBuf,
    pub output_format: OutputFormat,
    pub experiments: Vec<PlannedExperiment>,
}

impl ExperimentPlan {
    /// Every resolved parameter, defaults included.
    pub fn echo(&self) -> Value {
        let ctx = &self.context;
        let (depth_mode, budget) = match self.depth_mode {
            DepthMode::Fixed => ("fixed", Value::Null),
            DepthMode::Budget(b) => ("budget", json!(b)),
        };
        let heights: Value = match ctx.kind() {
            ScheduleKind::Transformation => json!(ctx.levels[..ctx.depth].to_vec()),
            ScheduleKind::Flow => json!(ctx.flow_heights[..ctx.depth]
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()),
        };
        json!({
            "construction": self.construction_echo,
            "base": ctx.base,
            "base_mode": if self.base_mode_auto { "auto" } else { "fixed" },
            "depth": ctx.depth,
            "depth_mode": depth_mode,
            "budget": budget,
            "heights": heights,
            "seed": ctx.seed,
            "engine": ctx.engine,
            "output": { "dir": self.output_dir.display().to_string(), "format": self.output_format.name() },
            "experiments": self.experiments.iter().map(|e| json!({
                "name": e.name,
                "kind": e.kind,
                "params": e.prepared.echo(),
            })).collect::<Vec<_>>(),
        })
    }
}

/// Parameters of one experiment, keyed by the part after `experiment.<name>.`.
#[derive(Debug, Clone, Default)]
pub struct Params {
    pub name: String,
    pub entries: BTreeMap<String, Entry>,
}

impl Params {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn require(&self, key: &str) -> Result<&Entry, ConfigError> {
        self.get(key).ok_or_else(|| {
            ConfigError::validation(format!("experiment {} needs `experiment.{}.{key}`", self.name, self.name))
        })
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        self.get(key).map_or(Ok(default), |e| Ok(e.u64()?))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.get(key).map_or(Ok(default), |e| Ok(e.f64()?))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                other => Err(e.error(format!("expected true or false, found {other:?}")).into()),
            },
        }
    }

    /// Rejects keys the experiment kind does not read.
    pub fn only(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for (key, entry) in &self.entries {
            if key != "kind" && !allowed.contains(&key.as_str()) {
                return Err(ConfigError::at(
                    entry,
                    format!("unknown parameter {key:?} for experiment {}; expected one of {allowed:?}", self.name),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct Sections<'a> {
    construction: BTreeMap<&'a str, &'a Entry>,
    plan: BTreeMap<&'a str, &'a Entry>,
    output: BTreeMap<&'a str, &'a Entry>,
    experiments: Vec<Params>,
}

fn sort_sections(entries: &[Entry]) -> Result<Sections<'_>, ConfigError> {
    let mut s = Sections::default();
    for e in entries {
        let (section, rest) = e.key.split_once('.').unwrap();
        match section {
            "construction" | "plan" | "output" if rest.contains('.') => {
                return Err(ConfigError::at(e, format!("unknown key {}", e.key)));
            }
            "construction" => {
                s.construction.insert(rest, e);
            }
            "plan" => {
                s.plan.insert(rest, e);
            }
            "output" => {
                s.output.insert(rest, e);
            }
            "experiment" => {
                let Some((name, key)) = rest.split_once('.') else {
                    return Err(ConfigError::at(e, "experiment keys look like `experiment.<name>.<param>`"));
                };
                if key.contains('.') {
                    return Err(ConfigError::at(e, format!("unknown key {}", e.key)));
                }
                let params = match s.experiments.iter_mut().position(|p| p.name == name) {
                    Some(i) => &mut s.experiments[i],
                    None => {
                        s.experiments.push(Params { name: name.to_string(), ..Params::default() });
                        s.experiments.last_mut().unwrap()
                    }
                };
                params.entries.insert(key.to_string(), e.clone());
            }
            _ => return Err(ConfigError::at(e, format!("unknown section {section:?}"))),
        }
    }
    Ok(s)
}

fn check_keys(map: &BTreeMap<&str, &Entry>, section: &str, allowed: &[&str]) -> Result<(), ConfigError> {
    for (key, e) in map {
        if !allowed.contains(key) {
            return Err(ConfigError::at(e, format!("unknown key {section}.{key}")));
        }
    }
    Ok(())
}

const CONSTRUCTION_KEYS: &[&str] = &[
    "catalog",
    "kind",
    "h1",
    "cut_rule",
    "cuts",
    "spacer_rule",
    "spacers",
    "bernoulli_a",
    "bound_spacer",
    "bound_cut",
    "bound_derivative",
];

/// Schedule plus the exact Bernoulli parameter when there is one.
fn build_construction(
    c: &BTreeMap<&str, &Entry>,
) -> Result<(ValidatedSchedule, Option<BigRational>), ConfigError> {
    check_keys(c, "construction", CONSTRUCTION_KEYS)?;
    if let Some(name) = c.get("catalog") {
        if let Some((key, e)) = c.iter().find(|(k, _)| **k != "catalog") {
            return Err(ConfigError::at(e, format!("construction.{key} cannot be combined with a catalog entry")));
        }
        let schedule = catalog(&name.value).map_err(|err| {
            ConfigError::at(name, format!("{err}; known entries: {}", CATALOG_NAMES.join(", ")))
        })?;
        let a = schedule.bernoulli_a().map(|a| {
            name.value
                .split_once('(')
                .and_then(|(_, arg)| parse_rational(arg.trim_end_matches(')')))
                .unwrap_or_else(|| rational_from_f64(a))
        });
        return Ok((schedule, a));
    }

    let need = |key: &str| {
        c.get(key)
            .copied()
            .ok_or_else(|| ConfigError::validation(format!("construction needs `construction.catalog` or `construction.{key}`")))
    };
    let kind = match c.get("kind").map(|e| e.value.as_str()) {
        None | Some("transformation") => ScheduleKind::Transformation,
        Some("flow") => ScheduleKind::Flow,
        Some(other) => return Err(ConfigError::at(c["kind"], format!("unknown kind {other:?}; use transformation or flow"))),
    };

    let cuts = need("cuts")?;
    let cut_rule = match c.get("cut_rule").map_or("constant", |e| e.value.as_str()) {
        "constant" => CutRule::Constant(cuts.i64()?),
        "list" => CutRule::List(cuts.i64_list()?),
        "affine" => match cuts.i64_list()?.as_slice() {
            [slope, intercept] => CutRule::Affine { slope: *slope, intercept: *intercept },
            _ => return Err(ConfigError::at(cuts, "affine cuts are `slope, intercept`")),
        },
        other => {
            return Err(ConfigError::at(c["cut_rule"], format!("unknown cut rule {other:?}; use constant, list or affine")))
        }
    };

    let rule_entry = need("spacer_rule")?;
    let mut bernoulli = None;
    let spacer_rule = match rule_entry.value.as_str() {
        "pattern" => SpacerRule::Pattern(need("spacers")?.i64_list()?),
        "lists" => {
            let e = need("spacers")?;
            let lists = e
                .value
                .split(';')
                .map(|chunk| {
                    crate::config::split_list(chunk)
                        .into_iter()
                        .map(|t| t.parse::<i64>().map_err(|_| e.error(format!("expected an integer, found {t:?}"))))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            SpacerRule::Lists(lists)
        }
        "bernoulli" => {
            let e = need("bernoulli_a")?;
            let a = e.rational()?;
            let af = a.to_f64().unwrap_or(f64::NAN);
            if !(0.0..=1.0).contains(&af) {
                return Err(ConfigError::at(e, "bernoulli_a must lie in [0, 1]"));
            }
            bernoulli = Some(a);
            SpacerRule::Bernoulli { a: af }
        }
        "staircase" => SpacerRule::Staircase,
        "rigid-staircase" => SpacerRule::RigidStaircase,
        other => {
            return Err(ConfigError::at(
                rule_entry,
                format!("unknown spacer rule {other:?}; use pattern, lists, bernoulli, staircase or rigid-staircase"),
            ))
        }
    };
    if bernoulli.is_none() {
        if let Some(e) = c.get("bernoulli_a") {
            return Err(ConfigError::at(e, "bernoulli_a needs spacer_rule = bernoulli"));
        }
    }
    if matches!(spacer_rule, SpacerRule::Staircase | SpacerRule::RigidStaircase) {
        if let Some(e) = c.get("spacers") {
            return Err(ConfigError::at(e, "staircase rules take no explicit spacers"));
        }
    }

    let h1 = match c.get("h1") {
        Some(e) => e.rational()?,
        None if kind == ScheduleKind::Flow => BigRational::from_integer(1.into()),
        None => BigRational::zero(),
    };
    let mut schedule = match kind {
        ScheduleKind::Transformation => {
            if !h1.is_integer() || h1 < BigRational::zero() {
                return Err(ConfigError::at(c["h1"], "h1 of a transformation is a nonnegative integer"));
            }
            ConstructionSchedule::transformation(h1.to_integer().to_u64().unwrap_or(0), cut_rule, spacer_rule)
        }
        ScheduleKind::Flow => {
            if h1 <= BigRational::zero() {
                return Err(ConfigError::at(c["h1"], "h1 of a flow must be positive"));
            }
            ConstructionSchedule::flow(h1, cut_rule, spacer_rule)
        }
    };
    match (c.get("bound_spacer"), c.get("bound_cut")) {
        (Some(s), Some(r)) => {
            schedule = schedule.with_bounds(Bounds {
                spacer: s.u64()?,
                cut: r.u64()?,
                derivative: c.get("bound_derivative").map(|e| e.u64()).transpose()?,
            });
        }
        (None, None) => {
            if let Some(e) = c.get("bound_derivative") {
                return Err(ConfigError::at(e, "bound_derivative needs bound_spacer and bound_cut"));
            }
        }
        (Some(e), None) | (None, Some(e)) => {
            return Err(ConfigError::at(e, "bound_spacer and bound_cut go together"));
        }
    }
    let validated = validate_schedule(schedule).map_err(|err| ConfigError::validation(format!("construction: {err}")))?;
    Ok((validated, bernoulli))
}

/// Small-denominator rational equal to `a` when one exists.
pub fn rational_from_f64(a: f64) -> BigRational {
    for d in 1..=1000i64 {
        let n = (a * d as f64).round();
        if (n / d as f64 - a).abs() < 1e-12 {
            return BigRational::new((n as i64).into(), d.into());
        }
    }
    BigRational::from_float(a).unwrap_or_else(BigRational::zero)
}

/// Config lines describing `schedule`; [`parse_config`] reads them back.
pub fn construction_lines(schedule: &ValidatedSchedule, bernoulli_a: Option<&BigRational>) -> String {
    if let Some(name) = schedule.name() {
        return format!("construction.catalog = {name}\n");
    }
    let s = schedule.schedule();
    let join = |v: &[i64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
    let mut out = String::new();
    let kind = match s.kind {
        ScheduleKind::Transformation => "transformation",
        ScheduleKind::Flow => "flow",
    };
    out += &format!("construction.kind = {kind}\nconstruction.h1 = {}\n", s.h1);
    let (rule, cuts) = match &s.cut_rule {
        CutRule::Constant(r) => ("constant", r.to_string()),
        CutRule::List(v) => ("list", join(v)),
        CutRule::Affine { slope, intercept } => ("affine", format!("{slope}, {intercept}")),
    };
    out += &format!("construction.cut_rule = {rule}\nconstruction.cuts = {cuts}\n");
    match &s.spacer_rule {
        SpacerRule::Pattern(p) => out += &format!("construction.spacer_rule = pattern\nconstruction.spacers = {}\n", join(p)),
        SpacerRule::Lists(l) => {
            let lists: Vec<String> = l.iter().map(|v| join(v)).collect();
            out += &format!("construction.spacer_rule = lists\nconstruction.spacers = {}\n", lists.join("; "));
        }
        SpacerRule::Bernoulli { a } => {
            let a = bernoulli_a.cloned().unwrap_or_else(|| rational_from_f64(*a));
            out += &format!("construction.spacer_rule = bernoulli\nconstruction.bernoulli_a = {a}\n");
        }
        SpacerRule::Staircase => out += "construction.spacer_rule = staircase\n",
        SpacerRule::RigidStaircase => out += "construction.spacer_rule = rigid-staircase\n",
    }
    if let Some(b) = &s.bounds {
        out += &format!("construction.bound_spacer = {}\nconstruction.bound_cut = {}\n", b.spacer, b.cut);
        if let Some(d) = b.derivative {
            out += &format!("construction.bound_derivative = {d}\n");
        }
    }
    out
}

fn construction_echo(schedule: &ValidatedSchedule, bernoulli_a: Option<&BigRational>) -> Value {
    let s = schedule.schedule();
    json!({
        "catalog": schedule.name(),
        "kind": s.kind,
        "h1": s.h1.to_string(),
        "cut_rule": s.cut_rule,
        "spacer_rule": s.spacer_rule,
        "bernoulli_a": bernoulli_a.map(|a| a.to_string()),
        "bounds": s.bounds,
        "config": construction_lines(schedule, bernoulli_a),
    })
}

/// Realizes as deep as 64-bit level counts (or the flow segment budget) allow.
fn realize_deep(
    schedule: &ValidatedSchedule,
    seed: Option<u64>,
) -> Result<(RealizedSchedule, Vec<u64>, Vec<BigRational>), ConfigError> {
    let full = schedule
        .realize_with(seed, MAX_STAGES)
        .map_err(|e| ConfigError::validation(format!("construction: {e}")))?;
    let limit = BigUint::from(i64::MAX as u64);
    match full.heights() {
        HeightsTable::Levels(levels) => {
            let usable: Vec<u64> = levels.iter().take_while(|l| **l <= limit).map(|l| l.to_u64().unwrap()).collect();
            let mut realized = full;
            realized.stages.truncate(usable.len().saturating_sub(1));
            Ok((realized, usable, Vec::new()))
        }
        HeightsTable::Flow(heights) => {
            // Deep enough for any segment budget that fits in memory.
            let mut count: u128 = 1;
            let mut depth = 1;
            for st in &full.stages {
                count = count * st.cut as u128 + st.spacers.len() as u128;
                if count > 1u128 << 40 {
                    break;
                }
                depth += 1;
            }
            let mut realized = full;
            realized.stages.truncate(depth - 1);
            let heights = heights[..depth].to_vec();
            let rounded = heights.iter().map(|h| h.to_integer().to_u64().unwrap_or(u64::MAX)).collect();
            Ok((realized, rounded, heights))
        }
    }
}

fn auto_base(kind: ScheduleKind, levels: &[u64], flow_heights: &[BigRational]) -> Option<usize> {
    let (lo, hi) = AUTO_BASE_RANGE;
    match kind {
        ScheduleKind::Transformation => levels.iter().position(|&l| (lo..=hi).contains(&l)).map(|i| i + 1),
        ScheduleKind::Flow => {
            let (lo, hi) = (BigRational::from_integer(lo.into()), BigRational::from_integer(hi.into()));
            flow_heights.iter().position(|h| *h >= lo && *h <= hi).map(|i| i + 1)
        }
    }
}

/// Segments of the depth-`J` flow column over base stage `base`, per `J`.
fn segment_counts(realized: &RealizedSchedule, base: usize) -> Vec<u128> {
    let mut counts = vec![0u128; base - 1];
    let mut count = 1u128;
    counts.push(count);
    for st in &realized.stages[base - 1..] {
        count = count * st.cut as u128 + st.spacers.iter().filter(|&&s| s > 0).count() as u128;
        counts.push(count);
    }
    counts
}

pub fn parse_config(text: &str) -> Result<ExperimentPlan, ConfigError> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<ExperimentPlan, ConfigError> {
    let entries = parse_lines(text)?;
    let sections = sort_sections(&entries)?;
    check_keys(&sections.plan, "plan", &["j0", "depth", "budget", "seed", "engine"])?;
    check_keys(&sections.output, "output", &["dir", "format"])?;
    if sections.construction.is_empty() {
        return Err(ConfigError::validation("missing construction section"));
    }
    let (schedule, bernoulli_a) = build_construction(&sections.construction)?;
    let plan = &sections.plan;

    let seed = match overrides.seed {
        Some(s) => Some(s),
        None => plan.get("seed").map(|e| e.u64()).transpose()?,
    };
    if schedule.is_stochastic() && seed.is_none() {
        return Err(ConfigError::validation(
            "stochastic schedule needs a seed: set `plan.seed` or pass --seed",
        ));
    }

    let engine = plan.get("engine").map_or("auto".to_string(), |e| e.value.clone());
    if !COUNTER_NAMES.contains(&engine.as_str()) {
        let e = plan["engine"];
        return Err(ConfigError::at(e, format!("unknown engine {engine:?}; use one of {COUNTER_NAMES:?}")));
    }

    let (realized, levels, flow_heights) = realize_deep(&schedule, seed)?;
    let kind = schedule.kind();

    let (base, base_mode_auto) = match plan.get("j0").map(|e| (e, e.value.as_str())) {
        None | Some((_, "auto")) => {
            let j = auto_base(kind, &levels, &flow_heights).ok_or_else(|| {
                ConfigError::validation("no stage has a base height in [8, 64]; set plan.j0 explicitly")
            })?;
            (j, true)
        }
        Some((e, _)) => {
            let j = e.u64()? as usize;
            if j == 0 || j >= levels.len() {
                return Err(ConfigError::at(e, format!("j0 must lie in 1..{}", levels.len())));
            }
            (j, false)
        }
    };

    let budget = overrides.budget.or(plan.get("budget").map(|e| e.u64()).transpose()?);
    let (depth, depth_mode) = match (plan.get("depth"), budget) {
        (Some(e), _) if overrides.budget.is_none() => {
            if plan.contains_key("budget") {
                return Err(ConfigError::at(e, "set either plan.depth or plan.budget, not both"));
            }
            let d = e.u64()? as usize;
            if d <= base || d > levels.len() {
                return Err(ConfigError::at(
                    e,
                    format!("depth must lie in {}..={} (above j0, within 64-bit level counts)", base + 1, levels.len()),
                ));
            }
            (d, DepthMode::Fixed)
        }
        (_, budget) => {
            let budget = budget.unwrap_or(match kind {
                ScheduleKind::Transformation => DEFAULT_SYMBOL_BUDGET,
                ScheduleKind::Flow => DEFAULT_SEGMENT_BUDGET,
            });
            let sizes: Vec<u128> = match kind {
                ScheduleKind::Transformation => levels.iter().map(|&l| l as u128).collect(),
                ScheduleKind::Flow => segment_counts(&realized, base),
            };
            let d = (base + 1..=sizes.len())
                .take_while(|&j| sizes[j - 1] <= budget as u128)
                .last()
                .ok_or_else(|| {
                    ConfigError::validation(format!(
                        "budget {budget} is below the size of stage {} ({}); raise it or lower j0",
                        base + 1,
                        sizes.get(base).copied().unwrap_or(0)
                    ))
                })?;
            (d, DepthMode::Budget(budget))
        }
    };

    let output_dir = overrides.out.clone().unwrap_or_else(|| {
        PathBuf::from(sections.output.get("dir").map_or("rankone-out", |e| e.value.as_str()))
    });
    let output_format = match overrides.format {
        Some(f) => f,
        None => match sections.output.get("format") {
            None => OutputFormat::Json,
            Some(e) => OutputFormat::parse(&e.value)
                .ok_or_else(|| ConfigError::at(e, "output.format is json, csv or both"))?,
        },
    };

    let context = PlanContext {
        schedule,
        realized,
        seed,
        levels,
        flow_heights,
        base,
        depth,
        engine,
        bernoulli_a,
    };
    let mut experiments = Vec::with_capacity(sections.experiments.len());
    for params in &sections.experiments {
        let kind_entry = params.require("kind")?;
        let k = experiments::kind(&kind_entry.value).ok_or_else(|| {
            ConfigError::at(kind_entry, format!("unknown experiment kind {:?}; use one of {KIND_NAMES:?}", kind_entry.value))
        })?;
        if !k.accepts(context.kind()) {
            return Err(ConfigError::at(
                kind_entry,
                format!("experiment kind {} does not apply to a {:?} schedule", k.name(), context.kind()),
            ));
        }
        let prepared = k.prepare(params, &context)?;
        experiments.push(PlannedExperiment {
            name: params.name.clone(),
            kind: k.name(),
            prepared,
        });
    }
    let construction_echo = construction_echo(&context.schedule, context.bernoulli_a.as_ref());
    Ok(ExperimentPlan {
        context,
        base_mode_auto,
        depth_mode,
        construction_echo,
        output_dir,
        output_format,
        experiments,
    })
}
