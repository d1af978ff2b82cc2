//! Experiment kinds, looked up by name from a static registry.

use num_rational::BigRational;
use rankone_core::correlation::{corr_sequence, counter, CorrelationError, PairCounter};
use rankone_core::flow::{flow_limit_check, FlowConfig, FlowError, SlabAlgebra, QUADRATURE_TOLERANCE, SEGMENT_BUDGET};
use rankone_core::operator::{
    cesaro_disjointness_probe, limit_scan, mixing_diagnostics, rigidity_scan, triple_corr_probe,
    LimitScanReport, OperatorError, ScanConfig, DEFAULT_TOLERANCE, DEFAULT_WINDOW,
};
use rankone_core::symbolic::SymbolicError;
use rankone_core::{ScheduleKind, Tower};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::Entry;
use crate::lags::{parse_stage, LagList, ResolvedLag, StageRef};
use crate::plan::{ConfigError, Params, PlanContext};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("serializing result: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// One `D(n)` for CSV export. `table` separates depths within an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixRecord {
    pub table: String,
    pub lag: String,
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationRecord {
    pub table: String,
    pub lag: String,
    pub coefficients: Vec<(i64, f64)>,
    pub theta: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub result: Value,
    pub matrices: Vec<MatrixRecord>,
    pub classifications: Vec<ClassificationRecord>,
}

pub trait ExperimentKind: Sync {
    fn name(&self) -> &'static str;

    fn accepts(&self, kind: ScheduleKind) -> bool {
        kind == ScheduleKind::Transformation
    }

    /// Resolves and validates parameters against the realized construction.
    fn prepare(&self, params: &Params, ctx: &PlanContext) -> Result<Box<dyn PreparedExperiment>, ConfigError>;
}

pub trait PreparedExperiment: Send + Sync {
    /// Resolved parameters, defaults filled in.
    fn echo(&self) -> Value;

    fn run(&self, ctx: &PlanContext) -> Result<ExperimentOutput, ExperimentError>;
}

static KINDS: &[&dyn ExperimentKind] = &[
    &LimitScanKind,
    &ConvergeKind,
    &RigidityKind,
    &MixingKind,
    &DisjointnessKind,
    &TripleKind,
    &FlowLimitKind,
];

pub const KIND_NAMES: &[&str] = &[
    "limit-scan",
    "converge",
    "rigidity",
    "mixing",
    "disjointness",
    "triple",
    "flow-limit",
];

pub fn kind(name: &str) -> Option<&'static dyn ExperimentKind> {
    KINDS.iter().copied().find(|k| k.name() == name)
}

fn lag_list(entry: &Entry) -> Result<LagList, ConfigError> {
    LagList::parse(&entry.list()).map_err(|m| entry.error(m).into())
}

/// Resolves lags at `depth` and enforces `|n| <= l_J / 4`.
fn resolve_capped(
    list: &LagList,
    entry: &Entry,
    ctx: &PlanContext,
    depth: usize,
) -> Result<Vec<ResolvedLag>, ConfigError> {
    let lags = list.resolve(&ctx.levels, depth).map_err(|m| ConfigError::at(entry, m))?;
    let cap = ctx.lag_cap(depth);
    if let Some(bad) = lags.iter().find(|r| r.lag.unsigned_abs() > cap) {
        return Err(ConfigError::at(
            entry,
            format!(
                "lag {} from {:?} exceeds the engine cap l_J/4 = {cap} (l_J = {} at J = {depth})",
                bad.lag,
                bad.source,
                ctx.level(depth)
            ),
        ));
    }
    Ok(lags)
}

fn check_cap(entry: &Entry, what: &str, reach: u64, ctx: &PlanContext, depth: usize) -> Result<(), ConfigError> {
    let cap = ctx.lag_cap(depth);
    if reach > cap {
        return Err(ConfigError::at(
            entry,
            format!("{what} reaches {reach}, beyond the engine cap l_J/4 = {cap} (l_J = {})", ctx.level(depth)),
        ));
    }
    Ok(())
}

fn lags_json(lags: &[ResolvedLag]) -> Value {
    lags.iter().map(|r| json!({ "lag": r.lag, "source": r.source })).collect()
}

fn tower(ctx: &PlanContext, depth: usize) -> Result<Tower, ExperimentError> {
    Ok(Tower::new(&ctx.realized, ctx.base, depth)?)
}

fn engine(ctx: &PlanContext) -> Result<Box<dyn PairCounter>, ExperimentError> {
    Ok(counter(&ctx.engine)?)
}

fn matrix_records(
    tower: &Tower,
    lags: &[i64],
    engine: &dyn PairCounter,
    table: &str,
) -> Result<Vec<MatrixRecord>, ExperimentError> {
    Ok(corr_sequence(tower, lags, engine)?
        .into_iter()
        .map(|c| MatrixRecord {
            table: table.to_string(),
            lag: c.lag.to_string(),
            labels: c.labels,
            rows: c.matrix.to_rows(),
        })
        .collect())
}

fn classification_records(report: &LimitScanReport, table: &str) -> Vec<ClassificationRecord> {
    report
        .lags
        .iter()
        .map(|l| ClassificationRecord {
            table: table.to_string(),
            lag: l.lag.to_string(),
            coefficients: l.classification.coefficients.clone(),
            theta: l.classification.theta,
            residual: l.classification.residual_max,
        })
        .collect()
}

/// Shared classifier settings of `limit-scan` and `converge`.
#[derive(Debug, Clone)]
struct ScanSettings {
    config: ScanConfig,
}

impl ScanSettings {
    fn read(params: &Params, ctx: &PlanContext) -> Result<Self, ConfigError> {
        let window = params.u64_or("window", DEFAULT_WINDOW as u64)? as usize;
        let tolerance = params.f64_or("tolerance", DEFAULT_TOLERANCE)?;
        let truncation = params.u64_or("truncation", 20)? as u32;
        let stochastic_order = params.u64_or("stochastic_order", 6)? as u32;
        if window == 0 {
            return Err(ConfigError::validation(format!("experiment {}: window must be positive", params.name)));
        }
        Ok(ScanSettings {
            config: ScanConfig {
                window,
                tolerance,
                truncation,
                stochastic_a: ctx.bernoulli_a.clone(),
                stochastic_order,
            },
        })
    }

    fn radius(&self) -> u64 {
        self.config.window.max(self.config.truncation as usize) as u64
    }

    fn echo(&self) -> Value {
        json!({
            "window": self.config.window,
            "tolerance": self.config.tolerance,
            "truncation": self.config.truncation,
            "stochastic_a": self.config.stochastic_a.as_ref().map(BigRational::to_string),
            "stochastic_order": self.config.stochastic_order,
        })
    }
}

struct LimitScanKind;

struct LimitScan {
    lags: Vec<ResolvedLag>,
    settings: ScanSettings,
    matrices: bool,
}

impl ExperimentKind for LimitScanKind {
    fn name(&self) -> &'static str {
        "limit-scan"
    }

    fn prepare(&self, params: &Params, ctx: &PlanContext) -> Result<Box<dyn PreparedExperiment>, ConfigError> {
        params.only(&["lags", "window", "tolerance", "truncation", "stochastic_order", "matrices"])?;
        let entry = params.require("lags")?;
        let lags = resolve_capped(&lag_list(entry)?, entry, ctx, ctx.depth)?;
        let settings = ScanSettings::read(params, ctx)?;
        check_cap(entry, "the classification basis", settings.radius(), ctx, ctx.depth)?;
        Ok(Box::new(LimitScan {
            lags,
            settings,
            matrices: params.bool_or("matrices", true)?,
        }))
    }
}

impl PreparedExperiment for LimitScan {
    fn echo(&self) -> Value {
        let mut v = self.settings.echo();
        v["lags"] = lags_json(&self.lags);
        v["matrices"] = json!(self.matrices);
        v
    }

    fn run(&self, ctx: &PlanContext) -> Result<ExperimentOutput, ExperimentError> {
        let tower = tower(ctx, ctx.depth)?;
        let engine = engine(ctx)?;
        let lags: Vec<i64> = self.lags.iter().map(|r| r.lag).collect();
        let report = limit_scan(&tower, &lags, &self.settings.config, engine.as_ref())?;
        let matrices = if self.matrices {
            matrix_records(&tower, &lags, engine.as_ref(), "")?
        } else {
            Vec::new()
        };
        Ok(ExperimentOutput {
            classifications: classification_records(&report, ""),
            result: serde_json::to_value(&report)?,
            matrices,
        })
    }
}

struct ConvergeKind;

struct Converge {
    depths: Vec<usize>,
    lags: Vec<Vec<ResolvedLag>>,
    settings: ScanSettings,
}

impl ExperimentKind for ConvergeKind {
    fn name(&self) -> &'static str {
        "converge"
    }

    fn prepare(&self, params: &Params, ctx: &PlanContext) -> Result<Box<dyn PreparedExperiment>, ConfigError> {
        params.only(&["depths", "lags", "window", "tolerance", "truncation", "stochastic_order"])?;
        let depth_entry = params.require("depths")?;
        let depths: Vec<usize> = depth_entry.u64_list()?.into_iter().map(|d| d as usize).collect();
        if depths.is_empty() {
            return Err(ConfigError::at(depth_entry, "depths must not be empty"));
        }
        for &d in &depths {
            if d <= ctx.base || d > ctx.max_depth() {
                return Err(ConfigError::at(
                    depth_entry,
                    format!("depth {d} outside {}..={}", ctx.base + 1, ctx.max_depth()),
                ));
            }
        }
        let entry = params.require("lags")?;
        let list = lag_list(entry)?;
        let settings = ScanSettings::read(params, ctx)?;
        let lags = depths
            .iter()
            .map(|&d| {
                check_cap(entry, "the classification basis", settings.radius(), ctx, d)?;
                resolve_capped(&list, entry, ctx, d)
            })
            .collect::<Result<_, _>>()?;
        Ok(Box::new(Converge { depths, lags, settings }))
    }
}

impl PreparedExperiment for Converge {
    fn echo(&self) -> Value {
        let mut v = self.settings.echo();
        v["depths"] = json!(self.depths);
        v["lags"] = self.lags.iter().map(|l| lags_json(l)).collect();
        v
    }

    fn run(&self, ctx: &PlanContext) -> Result<ExperimentOutput, ExperimentError> {
        let engine = engine(ctx)?;
        let mut out = ExperimentOutput::default();
        let mut runs = Vec::new();
        let mut trend = Vec::new();
        for (&depth, lags) in self.depths.iter().zip(&self.lags) {
            let tower = tower(ctx, depth)?;
            let values: Vec<i64> = lags.iter().map(|r| r.lag).collect();
            let report = limit_scan(&tower, &values, &self.settings.config, engine.as_ref())?;
            let table = format!("J{depth}");
            out.classifications.extend(classification_records(&report, &table));
            out.matrices.extend(matrix_records(&tower, &values, engine.as_ref(), &table)?);
            for (r, l) in lags.iter().zip(&report.lags) {
                trend.push(json!({
                    "source": r.source,
                    "depth": depth,
                    "lag": l.lag,
                    "residual_max": l.classification.residual_max,
                    "theta": l.classification.theta,
                    "distance_to_product": l.distance_to_product,
                    "best_family": l.best_family.name,
                    "best_distance": l.best_family.distance_max,
                }));
            }
            runs.push(serde_json::to_value(&report)?);
        }
        out.result = json!({ "runs": runs, "trend": trend });
        Ok(out)
    }
}

struct RigidityKind;

struct Rigidity {
    lags: Vec<ResolvedLag>,
    vanishing_tolerance: f64,
    matrices: bool,
}

impl ExperimentKind for RigidityKind {
    fn name(&self) -> &'static str {
        "rigidity"
    }

    fn prepare(&self, params: &Params, ctx: &PlanContext) -> Result<Box<dyn PreparedExperiment>, ConfigError> {
        params.only(&["lags", "vanishing_tolerance", "matrices"])?;
        let entry = params.require("lags")?;
        Ok(Box::new(Rigidity {
            lags: resolve_capped(&lag_list(entry)?, entry, ctx, ctx.depth)?,
            vanishing_tolerance: params.f64_or("vanishing_tolerance", 0.05)?,
            matrices: params.bool_or("matrices", false)?,
        }))
    }
}

impl PreparedExperiment for Rigidity {
    fn echo(&self) -> Value {
        json!({
            "lags": lags_json(&self.lags),
            "vanishing_tolerance": self.vanishing_tolerance,
            "matrices": self.matrices,
        })
    }

    fn run(&self, ctx: &PlanContext) -> Result<ExperimentOutput, ExperimentError> {
        let tower = tower(ctx, ctx.depth)?;
        let engine = engine(ctx)?;
        let lags: Vec<i64> = self.lags.iter().map(|r| r.lag).collect();
        let report = rigidity_scan(&tower, &lags, self.vanishing_tolerance, engine.as_ref())?;
        Ok(ExperimentOutput {
            result: serde_json::to_value(&report)?,
            matrices: if self.matrices {
                matrix_records(&tower, &lags, engine.as_ref(), "")?
            } else {
                Vec::new()
            },
            classifications: Vec::new(),
        })
    }
}

struct MixingKind;

struct Mixing {
    tail: Vec<ResolvedLag>,
}

impl ExperimentKind for MixingKind {
    fn name(&self) -> &'static str {
        "mixing"
    }

    fn prepare(&self, params: &Params, ctx: &PlanContext) -> Result<Box<dyn PreparedExperiment>, ConfigError> {
        params.only(&["tail"])?;
        let entry = params.require("tail")?;
        Ok(Box::new(Mixing {
            tail: resolve_capped(&lag_list(entry)?, entry, ctx, ctx.depth)?,
        }))
    }
}

impl PreparedExperiment for Mixing {
    fn echo(&self) -> Value {
        json!({ "tail": lags_json(&self.tail) })
    }

    fn run(&self, ctx: &PlanContext) -> Result<ExperimentOutput, ExperimentError> {
        let tower = tower(ctx, ctx.depth)?;
        let tail: Vec<i64> = self.tail.iter().map(|r| r.lag).collect();
        let report = mixing_diagnostics(&tower, &tail, engine(ctx)?.as_ref())?;
        Ok(ExperimentOutput {
            result: serde_json::to_value(&report)?,
            ..ExperimentOutput::default()
        })
    }
}

struct DisjointnessKind;

struct Disjointness {
    p: u64,
    q: u64,
    n: u64,
}

impl ExperimentKind for DisjointnessKind {
    fn name(&self) -> &'static str {
        "disjointness"
    }

    fn prepare(&self, params: &Params, ctx: &PlanContext) -> Result<Box<dyn PreparedExperiment>, ConfigError> {
        params.only(&["p", "q", "n"])?;
        let (pe, qe, ne) = (params.require("p")?, params.require("q")?, params.require("n")?);
        let (p, q, n) = (pe.u64()?, qe.u64()?, ne.u64()?);
        for (e, v) in [(pe, p), (qe, q), (ne, n)] {
            if v == 0 {
                return Err(ConfigError::at(e, "p, q and n must be positive"));
            }
        }
        check_cap(ne, "max(p, q) * n", p.max(q).saturating_mul(n), ctx, ctx.depth)?;
        Ok(Box::new(Disjointness { p, q, n }))
    }
}

impl PreparedExperiment for Disjointness {
    fn echo(&self) -> Value {
        json!({ "p": self.p, "q": self.q, "n": self.n })
    }

    fn run(&self, ctx: &PlanContext) -> Result<ExperimentOutput, ExperimentError> {
        let tower = tower(ctx, ctx.depth)?;
        let report = cesaro_disjointness_probe(&tower, self.p, self.q, self.n, engine(ctx)?.as_ref())?;
        Ok(ExperimentOutput {
            result: serde_json::to_value(&report)?,
            ..ExperimentOutput::default()
        })
    }
}

struct TripleKind;

struct Triple {
    pairs: Vec<(u64, u64)>,
}

impl ExperimentKind for TripleKind {
    fn name(&self) -> &'static str {
        "triple"
    }

    fn prepare(&self, params: &Params, ctx: &PlanContext) -> Result<Box<dyn PreparedExperiment>, ConfigError> {
        params.only(&["pairs"])?;
        let entry = params.require("pairs")?;
        let one = |text: &str| -> Result<u64, ConfigError> {
            let lags = LagList::parse(&[text])
                .and_then(|l| l.resolve(&ctx.levels, ctx.depth))
                .map_err(|m| ConfigError::at(entry, m))?;
            match lags.as_slice() {
                [r] if r.lag >= 0 => Ok(r.lag as u64),
                _ => Err(ConfigError::at(entry, format!("{text:?} must name one nonnegative offset"))),
            }
        };
        let mut pairs = Vec::new();
        for item in entry.list() {
            let (m, n) = item
                .split_once(':')
                .ok_or_else(|| ConfigError::at(entry, format!("pairs look like `m:n`, found {item:?}")))?;
            let (m, n) = (one(m)?, one(n)?);
            check_cap(entry, &format!("offset pair {item}"), m.max(n), ctx, ctx.depth)?;
            pairs.push((m, n));
        }
        if pairs.is_empty() {
            return Err(ConfigError::at(entry, "no pairs given"));
        }
        Ok(Box::new(Triple { pairs }))
    }
}

impl PreparedExperiment for Triple {
    fn echo(&self) -> Value {
        json!({ "pairs": self.pairs.iter().map(|(m, n)| format!("{m}:{n}")).collect::<Vec<_>>() })
    }

    fn run(&self, ctx: &PlanContext) -> Result<ExperimentOutput, ExperimentError> {
        let tower = tower(ctx, ctx.depth)?;
        let report = triple_corr_probe(&tower, &self.pairs)?;
        Ok(ExperimentOutput {
            result: serde_json::to_value(&report)?,
            ..ExperimentOutput::default()
        })
    }
}

struct FlowLimitKind;

struct FlowLimit {
    q: u32,
    stage: usize,
    slabs: usize,
    tolerance: f64,
    budget: u64,
}

impl ExperimentKind for FlowLimitKind {
    fn name(&self) -> &'static str {
        "flow-limit"
    }

    fn accepts(&self, kind: ScheduleKind) -> bool {
        kind == ScheduleKind::Flow
    }

    fn prepare(&self, params: &Params, ctx: &PlanContext) -> Result<Box<dyn PreparedExperiment>, ConfigError> {
        params.only(&["q", "stage", "slabs", "tolerance", "budget"])?;
        let q = params.u64_or("q", 1)?;
        if q == 0 || q > u32::MAX as u64 {
            return Err(ConfigError::validation(format!("experiment {}: q must be a positive 32-bit integer", params.name)));
        }
        let stage_ref = match params.get("stage") {
            None => StageRef::FromTop(1),
            Some(e) => parse_stage(&e.value).map_err(|m| ConfigError::at(e, m))?,
        };
        let stage = stage_ref
            .resolve(ctx.depth)
            .filter(|&j| j >= ctx.base && j < ctx.depth)
            .ok_or_else(|| {
                ConfigError::validation(format!(
                    "experiment {}: stage {stage_ref} must lie in {}..{} (j0 to J-1)",
                    params.name, ctx.base, ctx.depth
                ))
            })?;
        let slabs = params.u64_or("slabs", SlabAlgebra::default().slabs as u64)? as usize;
        SlabAlgebra::new(slabs).map_err(|e| ConfigError::validation(format!("experiment {}: {e}", params.name)))?;
        Ok(Box::new(FlowLimit {
            q: q as u32,
            stage,
            slabs,
            tolerance: params.f64_or("tolerance", QUADRATURE_TOLERANCE)?,
            budget: params.u64_or("budget", SEGMENT_BUDGET)?,
        }))
    }
}

impl PreparedExperiment for FlowLimit {
    fn echo(&self) -> Value {
        json!({
            "q": self.q,
            "stage": self.stage,
            "slabs": self.slabs,
            "tolerance": self.tolerance,
            "budget": self.budget,
        })
    }

    fn run(&self, ctx: &PlanContext) -> Result<ExperimentOutput, ExperimentError> {
        let config = FlowConfig {
            slabs: SlabAlgebra::new(self.slabs)?,
            tolerance: self.tolerance,
            budget: self.budget,
            ..FlowConfig::default()
        };
        let report = flow_limit_check(&ctx.realized, ctx.depth, ctx.base, self.q, self.stage, &config)?;
        Ok(ExperimentOutput {
            result: serde_json::to_value(&report)?,
            ..ExperimentOutput::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_matches_names() {
        let names: Vec<&str> = KINDS.iter().map(|k| k.name()).collect();
        assert_eq!(names, KIND_NAMES);
        assert!(kind("flow-limit").unwrap().accepts(ScheduleKind::Flow));
        assert!(!kind("limit-scan").unwrap().accepts(ScheduleKind::Flow));
        assert!(kind("bogus").is_none());
    }
}
