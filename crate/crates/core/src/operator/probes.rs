//! Diagnostic experiments built on the correlation engine.

use std::collections::BTreeMap;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;

use super::{
    build_family, classify_limit, joining_matrix, Basis, Classification, FamilyParams,
    OperatorError, OperatorExpression, DEFAULT_TOLERANCE, DEFAULT_WINDOW,
};
use crate::correlation::{corr_sequence, PairCounter};
use crate::matrix::Matrix;
use crate::symbolic::{level_measures, Symbol, Tower};

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub window: usize,
    pub tolerance: f64,
    /// Truncation index of the geometric family; the basis extends to it.
    pub truncation: u32,
    /// Bernoulli parameter when the schedule is stochastic.
    pub stochastic_a: Option<BigRational>,
    /// Largest `m + n` searched in the stochastic family.
    pub stochastic_order: u32,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            window: DEFAULT_WINDOW,
            tolerance: DEFAULT_TOLERANCE,
            truncation: 20,
            stochastic_a: None,
            stochastic_order: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyMatch {
    pub name: String,
    pub expression: OperatorExpression,
    pub distance_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagClassification {
    pub lag: i64,
    pub boundary_bound: f64,
    pub classification: Classification,
    pub best_family: FamilyMatch,
    pub distance_to_product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitScanReport {
    pub depth: usize,
    pub base: usize,
    pub word_len: u64,
    pub window: usize,
    pub tolerance: f64,
    pub lags: Vec<LagClassification>,
    pub fraction_identified: f64,
    pub worst_residual: f64,
    /// Named family with the smallest mean distance over all lags.
    pub best_family: Option<String>,
}

fn candidates(config: &ScanConfig, radius: usize) -> Result<Vec<(String, OperatorExpression)>, OperatorError> {
    let k = config.window as i64;
    let defaults = FamilyParams {
        truncation: config.truncation,
        ..FamilyParams::default()
    };
    let mut out = Vec::new();
    out.push(("theta".to_string(), build_family("theta", &defaults)?));
    for shift in -k..=k {
        let p = FamilyParams { k: shift, ..defaults.clone() };
        out.push((format!("power(k={shift})"), build_family("power", &p)?));
    }
    let mc = build_family("modified-chacon-limit", &defaults)?;
    out.push(("modified-chacon-limit*".to_string(), mc.adjoint()));
    out.push(("modified-chacon-limit".to_string(), mc));
    let geo = build_family("chacon-geometric", &defaults)?;
    let name = format!("chacon-geometric(M={})", config.truncation);
    out.push((format!("{name}*"), geo.adjoint()));
    out.push((name, geo));
    if let Some(a) = &config.stochastic_a {
        for total in 1..=config.stochastic_order {
            for m in 0..=total {
                for shift in -k..=k {
                    let p = FamilyParams { m, n: total - m, k: shift, a: a.clone(), ..defaults.clone() };
                    let e = build_family("stochastic", &p)?;
                    out.push((format!("stochastic(m={m},n={},k={shift},a={a})", total - m), e));
                }
            }
        }
    }
    out.retain(|(_, e)| e.radius() as usize <= radius);
    Ok(out)
}

/// Classifies `D(n)` for every lag and matches it against the named families.
pub fn limit_scan(
    tower: &Tower,
    lags: &[i64],
    config: &ScanConfig,
    engine: &dyn PairCounter,
) -> Result<LimitScanReport, OperatorError> {
    let radius = config.window.max(config.truncation as usize);
    let basis = Basis::build(tower, radius, engine, "")?;
    let targets = corr_sequence(tower, lags, engine)?;
    let families = candidates(config, radius)?;
    let joinings: Vec<Matrix> = families
        .iter()
        .map(|(_, e)| joining_matrix(e, &basis).map(|j| j.matrix))
        .collect::<Result<_, _>>()?;

    let mut totals = vec![0.0; families.len()];
    let mut results = Vec::with_capacity(targets.len());
    for target in targets {
        let classification = classify_limit(&target.matrix, &basis, config.window, config.tolerance)?;
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, j) in joinings.iter().enumerate() {
            let d = j.max_abs_diff(&target.matrix);
            totals[i] += d;
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        results.push(LagClassification {
            lag: target.lag,
            boundary_bound: target.boundary_bound,
            classification,
            best_family: FamilyMatch {
                name: families[best].0.clone(),
                expression: families[best].1.clone(),
                distance_max: best_dist,
            },
            distance_to_product: basis.product.max_abs_diff(&target.matrix),
        });
    }
    let identified = results.iter().filter(|r| r.classification.is_identified()).count();
    let best_family = totals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .filter(|_| !results.is_empty())
        .map(|(i, _)| families[i].0.clone());
    Ok(LimitScanReport {
        depth: tower.depth(),
        base: tower.base(),
        word_len: tower.len(),
        window: config.window,
        tolerance: config.tolerance,
        fraction_identified: if results.is_empty() {
            0.0
        } else {
            identified as f64 / results.len() as f64
        },
        worst_residual: results
            .iter()
            .map(|r| r.classification.residual_max)
            .fold(0.0, f64::max),
        lags: results,
        best_family,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RigidityEntry {
    pub lag: i64,
    /// Entrywise L1 distance to `D(0)`.
    pub distance_l1: f64,
    pub distance_max: f64,
    pub boundary_bound: f64,
    /// `distance_l1` minus the boundary bound, floored at zero.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RigidityReport {
    pub depth: usize,
    pub entries: Vec<RigidityEntry>,
    pub vanishing_tolerance: f64,
    /// Excess distances are non-increasing and end within the tolerance.
    pub rigid: bool,
}

/// Distances of `D(n)` from the identity pattern `D(0)`.
pub fn rigidity_scan(
    tower: &Tower,
    lags: &[i64],
    vanishing_tolerance: f64,
    engine: &dyn PairCounter,
) -> Result<RigidityReport, OperatorError> {
    let mut all = vec![0];
    all.extend_from_slice(lags);
    let seq = corr_sequence(tower, &all, engine)?;
    let identity = seq[0].matrix.clone();
    let entries: Vec<RigidityEntry> = lags
        .iter()
        .map(|&lag| {
            let d = seq.iter().find(|c| c.lag == lag).expect("lag in sequence");
            let l1 = d.matrix.l1_diff(&identity);
            RigidityEntry {
                lag,
                distance_l1: l1,
                distance_max: d.matrix.max_abs_diff(&identity),
                boundary_bound: d.boundary_bound,
                excess: (l1 - d.boundary_bound).max(0.0),
            }
        })
        .collect();
    let rigid = !entries.is_empty()
        && entries.windows(2).all(|w| w[1].excess <= w[0].excess + 1e-12)
        && entries.last().unwrap().excess <= vanishing_tolerance;
    Ok(RigidityReport {
        depth: tower.depth(),
        entries,
        vanishing_tolerance,
        rigid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolMixing {
    pub symbol: String,
    pub measure: f64,
    /// `max_n mu(A ∩ T^-n A)` over the tail.
    pub max_return: f64,
    pub max_return_lag: i64,
    /// `max_return / mu(A)`; near 1 signals a rigid revisit.
    pub return_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMixing {
    pub a: String,
    pub b: String,
    /// `min_n mu(A ∩ T^-n B) / (mu(A) mu(B))` over the tail.
    pub min_ratio: f64,
    pub min_ratio_lag: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub depth: usize,
    pub tail: Vec<i64>,
    pub symbols: Vec<SymbolMixing>,
    pub pairs: Vec<PairMixing>,
    /// Smallest pair ratio; a descriptive partial-mixing constant.
    pub alpha_hat: f64,
}

/// Return and pair-intersection statistics over a tail of lags. Only level
/// sets with `0 < mu < 1` take part.
pub fn mixing_diagnostics(
    tower: &Tower,
    tail: &[i64],
    engine: &dyn PairCounter,
) -> Result<MixingReport, OperatorError> {
    if tail.is_empty() {
        return Err(OperatorError::InvalidInput("empty tail window".into()));
    }
    let seq = corr_sequence(tower, tail, engine)?;
    let mu = level_measures(tower).measures();
    let labels = tower.alphabet().labels();
    let proper: Vec<usize> = (0..mu.len()).filter(|&a| mu[a] > 0.0 && mu[a] < 1.0).collect();

    let symbols = proper
        .iter()
        .map(|&a| {
            let (lag, value) = seq
                .iter()
                .map(|c| (c.lag, c.matrix[(a, a)]))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            SymbolMixing {
                symbol: labels[a].clone(),
                measure: mu[a],
                max_return: value,
                max_return_lag: lag,
                return_ratio: value / mu[a],
            }
        })
        .collect();
    let mut pairs = Vec::new();
    for &a in &proper {
        for &b in &proper {
            let (lag, ratio) = seq
                .iter()
                .map(|c| (c.lag, c.matrix[(a, b)] / (mu[a] * mu[b])))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            pairs.push(PairMixing {
                a: labels[a].clone(),
                b: labels[b].clone(),
                min_ratio: ratio,
                min_ratio_lag: lag,
            });
        }
    }
    let alpha_hat = pairs.iter().map(|p| p.min_ratio).fold(f64::INFINITY, f64::min);
    Ok(MixingReport {
        depth: tower.depth(),
        tail: tail.to_vec(),
        symbols,
        pairs,
        alpha_hat: if alpha_hat.is_finite() { alpha_hat } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CesaroPoint {
    pub n: u64,
    /// Largest `|avg - mu(A) mu(B) mu(C) mu(D)|` over the probed quadruples.
    pub max_deviation: f64,
    /// Same over quadruples with `A = B` and `C = D`.
    pub diagonal_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CesaroReport {
    pub depth: usize,
    pub p: u64,
    pub q: u64,
    /// `p == q`: a degenerate control run.
    pub control: bool,
    /// Every quadruple was probed, not only the diagonal ones.
    pub full_quadruples: bool,
    pub curve: Vec<CesaroPoint>,
    pub note: &'static str,
}

/// Alphabets up to this size probe every quadruple of symbols.
const FULL_QUADRUPLE_DIM: usize = 12;

/// Ergodic averages of `T^p x T^q` on products of level sets, reported along
/// a doubling ladder of `N`.
pub fn cesaro_disjointness_probe(
    tower: &Tower,
    p: u64,
    q: u64,
    n_max: u64,
    engine: &dyn PairCounter,
) -> Result<CesaroReport, OperatorError> {
    if p == 0 || q == 0 || n_max == 0 {
        return Err(OperatorError::InvalidInput("p, q and N must be positive".into()));
    }
    let lags: Vec<i64> = (1..=n_max)
        .flat_map(|n| [(p * n) as i64, (q * n) as i64])
        .collect();
    let seq = corr_sequence(tower, &lags, engine)?;
    let by_lag: BTreeMap<i64, &Matrix> = seq.iter().map(|c| (c.lag, &c.matrix)).collect();
    let mu = level_measures(tower).measures();
    let dim = mu.len();
    let full = dim <= FULL_QUADRUPLE_DIM;

    let mut ladder: Vec<u64> = std::iter::successors(Some(1u64), |&n| n.checked_mul(2))
        .take_while(|&n| n < n_max)
        .collect();
    ladder.push(n_max);

    // sums[((a * dim + b) * dim + c) * dim + d] accumulates X[b][a] Y[d][c].
    let size = if full { dim.pow(4) } else { dim * dim };
    let mut sums = vec![0.0f64; size];
    let mut curve = Vec::new();
    let mut next = 0;
    for n in 1..=n_max {
        let x = by_lag[&((p * n) as i64)];
        let y = by_lag[&((q * n) as i64)];
        if full {
            for a in 0..dim {
                for b in 0..dim {
                    let xv = x[(b, a)];
                    let base = (a * dim + b) * dim * dim;
                    for c in 0..dim {
                        for d in 0..dim {
                            sums[base + c * dim + d] += xv * y[(d, c)];
                        }
                    }
                }
            }
        } else {
            for a in 0..dim {
                for c in 0..dim {
                    sums[a * dim + c] += x[(a, a)] * y[(c, c)];
                }
            }
        }
        if n == ladder[next] {
            let nf = n as f64;
            let (mut worst, mut diag) = (0.0f64, 0.0f64);
            if full {
                for a in 0..dim {
                    for b in 0..dim {
                        for c in 0..dim {
                            for d in 0..dim {
                                let idx = ((a * dim + b) * dim + c) * dim + d;
                                let dev = (sums[idx] / nf - mu[a] * mu[b] * mu[c] * mu[d]).abs();
                                worst = worst.max(dev);
                                if a == b && c == d {
                                    diag = diag.max(dev);
                                }
                            }
                        }
                    }
                }
            } else {
                for a in 0..dim {
                    for c in 0..dim {
                        let dev = (sums[a * dim + c] / nf - mu[a] * mu[a] * mu[c] * mu[c]).abs();
                        diag = diag.max(dev);
                    }
                }
                worst = diag;
            }
            curve.push(CesaroPoint {
                n,
                max_deviation: worst,
                diagonal_deviation: diag,
            });
            next += 1;
        }
    }
    Ok(CesaroReport {
        depth: tower.depth(),
        p,
        q,
        control: p == q,
        full_quadruples: full,
        curve,
        note: "necessary-condition evidence from finite-depth averages; not a proof",
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripleEntry {
    pub m: u64,
    pub n: u64,
    /// `mu(A ∩ T^-m B ∩ T^-n C)` indexed `[(a * dim + b) * dim + c]`.
    pub joint: Vec<f64>,
    /// Largest `|joint - mu(A) mu(B) mu(C)|`.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripleReport {
    pub depth: usize,
    pub labels: Vec<String>,
    pub entries: Vec<TripleEntry>,
}

const TRIPLE_CHUNK: usize = 1 << 14;
const TRIPLE_GRAIN: u64 = 1 << 22;

/// Counts `(W[p], W[p + m], W[p + n])` for `p` in `from..to`.
fn triple_counts(tower: &Tower, m: u64, n: u64, from: u64, to: u64) -> Vec<u64> {
    let dim = tower.alphabet().size();
    let mut counts = vec![0u64; dim * dim * dim];
    let mut cur = [tower.cursor(from), tower.cursor(from + m), tower.cursor(from + n)];
    let mut bufs: [Vec<Symbol>; 3] = [vec![0; TRIPLE_CHUNK], vec![0; TRIPLE_CHUNK], vec![0; TRIPLE_CHUNK]];
    let mut remaining = to.saturating_sub(from);
    while remaining > 0 {
        let want = (remaining as usize).min(TRIPLE_CHUNK);
        let mut got = want;
        for (c, b) in cur.iter_mut().zip(bufs.iter_mut()) {
            got = got.min(c.fill(&mut b[..want]));
        }
        for ((&a, &b), &c) in bufs[0][..got].iter().zip(&bufs[1][..got]).zip(&bufs[2][..got]) {
            let (a, b, c) = (a as usize, b as usize, c as usize);
            counts[(a * dim + b) * dim + c] += 1;
        }
        remaining -= got as u64;
    }
    counts
}

/// Streams symbol triples at offsets `(0, m, n)` for each pair.
pub fn triple_corr_probe(tower: &Tower, pairs: &[(u64, u64)]) -> Result<TripleReport, OperatorError> {
    let total = tower.len();
    let dim = tower.alphabet().size();
    let mu = level_measures(tower).measures();
    let mut entries = Vec::with_capacity(pairs.len());
    for &(m, n) in pairs {
        let reach = m.max(n);
        if reach >= total {
            return Err(OperatorError::InvalidInput(format!(
                "offsets ({m}, {n}) exceed the word length {total}"
            )));
        }
        let span = total - reach;
        let grain = TRIPLE_GRAIN.min(span.max(1));
        let chunks: Vec<(u64, u64)> = (0..span)
            .step_by(grain as usize)
            .map(|a| (a, (a + grain).min(span)))
            .collect();
        let counts = chunks
            .into_par_iter()
            .map(|(a, b)| triple_counts(tower, m, n, a, b))
            .reduce(
                || vec![0u64; dim * dim * dim],
                |mut x, y| {
                    x.iter_mut().zip(&y).for_each(|(u, v)| *u += v);
                    x
                },
            );
        let joint: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let mut worst = 0.0f64;
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    let dev = (joint[(a * dim + b) * dim + c] - mu[a] * mu[b] * mu[c]).abs();
                    worst = worst.max(dev);
                }
            }
        }
        entries.push(TripleEntry {
            m,
            n,
            joint,
            max_deviation: worst,
        });
    }
    Ok(TripleReport {
        depth: tower.depth(),
        labels: tower.alphabet().labels(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::catalog;
    use crate::correlation::{AutoCounter, BlockCounter};
    use crate::operator::ratio;

    fn tower(name: &str, base: usize, depth: usize) -> Tower {
        let s = catalog(name).unwrap().realize(depth).unwrap();
        Tower::new(&s, base, depth).unwrap()
    }

    #[test]
    fn triple_matches_brute_force() {
        let t = tower("chacon", 2, 7);
        let w = t.materialize(7).symbols;
        let dim = t.alphabet().size();
        let report = triple_corr_probe(&t, &[(0, 0), (3, 7), (10, 4)]).unwrap();
        for e in &report.entries {
            let mut want = vec![0u64; dim * dim * dim];
            let reach = e.m.max(e.n) as usize;
            for p in 0..w.len() - reach {
                let (a, b, c) = (w[p] as usize, w[p + e.m as usize] as usize, w[p + e.n as usize] as usize);
                want[(a * dim + b) * dim + c] += 1;
            }
            let want: Vec<f64> = want.iter().map(|&c| c as f64 / w.len() as f64).collect();
            assert_eq!(e.joint, want);
        }
        // m = n = 0: only the diagonal a = b = c carries mass, equal to mu(a).
        let mu = level_measures(&t).measures();
        for (a, m) in mu.iter().enumerate() {
            assert_eq!(report.entries[0].joint[(a * dim + a) * dim + a], *m);
        }
    }

    #[test]
    fn rigidity_contrast() {
        let odo = tower("dyadic-odometer", 3, 16);
        let lags: Vec<i64> = (4..=13).map(|j| odo.level(j) as i64).collect();
        let r = rigidity_scan(&odo, &lags, 1e-9, &AutoCounter).unwrap();
        for e in &r.entries {
            assert!(e.distance_l1 <= e.boundary_bound + 1e-12);
        }
        assert!(r.rigid);
        assert_eq!(rigidity_scan(&odo, &[0], 1e-9, &AutoCounter).unwrap().entries[0].distance_l1, 0.0);

        let mc = tower("modified-chacon", 3, 12);
        let lags: Vec<i64> = (4..=9).map(|j| mc.level(j) as i64).collect();
        let r = rigidity_scan(&mc, &lags, 1e-9, &AutoCounter).unwrap();
        assert!(!r.rigid);
        assert!(r.entries.iter().all(|e| e.distance_l1 >= 0.2));
    }

    #[test]
    fn modified_chacon_scan() {
        let t = tower("modified-chacon", 3, 16);
        let lags: Vec<i64> = (6..=11).map(|j| -(t.level(j) as i64)).collect();
        let r = limit_scan(&t, &lags, &ScanConfig::default(), &BlockCounter).unwrap();
        assert_eq!(r.fraction_identified, 1.0);
        for l in &r.lags {
            assert_eq!(l.best_family.name, "modified-chacon-limit");
            assert!((l.classification.coeff(0) - 0.5).abs() < 0.03);
            assert!((l.classification.coeff(1) - 0.5).abs() < 0.03);
        }
        assert_eq!(r.best_family.as_deref(), Some("modified-chacon-limit"));
    }

    #[test]
    fn stochastic_square_orientation() {
        let s = catalog("stochastic-chacon").unwrap().realize_seeded(11, 14).unwrap();
        let t = Tower::new(&s, 3, 14).unwrap();
        let lag = 2 * t.level(11) as i64;
        let config = ScanConfig {
            stochastic_a: Some(ratio(1, 2)),
            ..ScanConfig::default()
        };
        let r = limit_scan(&t, &[lag], &config, &BlockCounter).unwrap();
        assert!(r.lags[0].best_family.name.starts_with("stochastic("));
        let basis = Basis::build(&t, 4, &BlockCounter, "").unwrap();
        let target = &corr_sequence(&t, &[lag], &BlockCounter).unwrap()[0].matrix;
        let p2 = build_family("stochastic", &FamilyParams { m: 2, ..FamilyParams::default() }).unwrap();
        let forward = joining_matrix(&p2, &basis).unwrap().matrix.max_abs_diff(target);
        let backward = joining_matrix(&p2.adjoint(), &basis).unwrap().matrix.max_abs_diff(target);
        assert!(forward <= 0.05 && forward < backward, "{forward} {backward}");
    }

    #[test]
    fn odometer_keeps_cesaro_deviation() {
        let odo = tower("dyadic-odometer", 3, 14);
        let r = cesaro_disjointness_probe(&odo, 1, 2, 64, &AutoCounter).unwrap();
        assert!(r.full_quadruples && !r.control);
        assert_eq!(r.curve.last().unwrap().n, 64);
        assert!(r.curve.last().unwrap().diagonal_deviation > 1e-3);
        let mc = tower("modified-chacon", 3, 10);
        let m = mixing_diagnostics(&mc, &(1..40).collect::<Vec<_>>(), &AutoCounter).unwrap();
        assert!(m.alpha_hat >= 0.0);
        let lag = odo.level(8);
        let m = mixing_diagnostics(&odo, &[lag as i64], &AutoCounter).unwrap();
        let bound = lag as f64 / odo.len() as f64;
        assert!(m.symbols.iter().all(|s| s.return_ratio >= 1.0 - bound / s.measure - 1e-12));
    }
}
