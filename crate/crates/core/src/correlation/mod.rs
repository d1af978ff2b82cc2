//! Exact lagged pair counts over depth-`J` words.
//!
//! `C(n)[a][b] = #{p : W[p] = a, W[p + n] = b}`, and the normalized matrix
//! `D(n) = C(n) / l_J` estimates `mu(level_a ∩ T^{-n} level_b)`. Negative lags
//! are served through `C(-n) = C(n)^T`.
//!
//! Counting engines implement [`PairCounter`] and are looked up by name with
//! [`counter`]; every engine must produce identical integers.

mod block;
mod naive;

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::matrix::{CountMatrix, Matrix};
use crate::symbolic::{stream_word, Alphabet, SymbolicError, Tower, DEFAULT_CHUNK};

pub use block::{lag_counts_block, OverlapEngine};
pub use naive::{count_pairs_range, lag_counts_naive, lag_counts_parallel};

/// Largest `|n| / l_J` accepted for reported matrices.
pub const LAG_CAP_FRACTION: f64 = 0.25;

/// `auto` uses the streaming counter up to this word length.
pub const AUTO_NAIVE_LIMIT: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelationError {
    #[error("lag {lag} out of range for a word of length {length}")]
    LagOutOfRange { lag: i64, length: u64 },
    #[error("lag {0} is not present in the count table")]
    MissingLag(i64),
    #[error("unknown counting engine {0:?}")]
    UnknownEngine(String),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

/// Pair counts for a set of nonnegative lags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagCountTable {
    #[serde(skip)]
    alphabet: Alphabet,
    pub word_len: u64,
    pub base: usize,
    pub depth: usize,
    counts: BTreeMap<u64, CountMatrix>,
}

impl LagCountTable {
    pub fn new(tower: &Tower) -> Self {
        LagCountTable {
            alphabet: tower.alphabet(),
            word_len: tower.len(),
            base: tower.base(),
            depth: tower.depth(),
            counts: BTreeMap::new(),
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn insert(&mut self, lag: u64, counts: CountMatrix) {
        self.counts.insert(lag, counts);
    }

    /// Counts at lag `n`; negative lags come back transposed.
    pub fn get(&self, lag: i64) -> Option<Cow<'_, CountMatrix>> {
        let m = self.counts.get(&lag.unsigned_abs())?;
        Some(if lag >= 0 {
            Cow::Borrowed(m)
        } else {
            Cow::Owned(m.transpose())
        })
    }

    pub fn lags(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts.keys().copied()
    }

    pub fn merge(&mut self, other: LagCountTable) {
        self.counts.extend(other.counts);
    }

    /// CSV rows `lag,a,b,count` for every stored lag.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "lag,a,b,count")?;
        let labels = self.alphabet.labels();
        for (lag, m) in &self.counts {
            for (a, la) in labels.iter().enumerate() {
                for (b, lb) in labels.iter().enumerate() {
                    writeln!(out, "{lag},{la},{lb},{}", m[(a, b)])?;
                }
            }
        }
        Ok(())
    }
}

/// `D(n) = C(n) / l_J` with its boundary-loss bound `|n| / l_J`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrMatrix {
    pub lag: i64,
    pub depth: usize,
    pub word_len: u64,
    pub boundary_bound: f64,
    pub labels: Vec<String>,
    pub matrix: Matrix,
}

pub fn corr_matrix(table: &LagCountTable, lag: i64) -> Result<CorrMatrix, CorrelationError> {
    let counts = table.get(lag).ok_or(CorrelationError::MissingLag(lag))?;
    let len = table.word_len as f64;
    Ok(CorrMatrix {
        lag,
        depth: table.depth,
        word_len: table.word_len,
        boundary_bound: lag.unsigned_abs() as f64 / len,
        labels: table.alphabet.labels(),
        matrix: Matrix::from_counts(&counts, len),
    })
}

/// A pair-counting strategy.
pub trait PairCounter: Send + Sync {
    fn name(&self) -> &'static str;

    /// Counts for every lag in `lags`; each must be below `l_J`.
    fn count(&self, tower: &Tower, lags: &[u64]) -> Result<LagCountTable, CorrelationError>;
}

fn check_lags(tower: &Tower, lags: &[u64]) -> Result<(), CorrelationError> {
    match lags.iter().find(|&&n| n >= tower.len()) {
        Some(&n) => Err(CorrelationError::LagOutOfRange {
            lag: n as i64,
            length: tower.len(),
        }),
        None => Ok(()),
    }
}

/// One streaming pass with a ring window.
pub struct NaiveCounter;

impl PairCounter for NaiveCounter {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn count(&self, tower: &Tower, lags: &[u64]) -> Result<LagCountTable, CorrelationError> {
        check_lags(tower, lags)?;
        lag_counts_naive(stream_word(tower, u64::MAX, DEFAULT_CHUNK)?, lags)
    }
}

/// Position range split across threads, merged by addition.
pub struct ParallelCounter;

impl PairCounter for ParallelCounter {
    fn name(&self) -> &'static str {
        "parallel"
    }

    fn count(&self, tower: &Tower, lags: &[u64]) -> Result<LagCountTable, CorrelationError> {
        check_lags(tower, lags)?;
        lag_counts_parallel(tower, lags)
    }
}

/// Hierarchical block decomposition; cost independent of `l_J`.
pub struct BlockCounter;

impl PairCounter for BlockCounter {
    fn name(&self) -> &'static str {
        "block"
    }

    fn count(&self, tower: &Tower, lags: &[u64]) -> Result<LagCountTable, CorrelationError> {
        check_lags(tower, lags)?;
        let mut engine = OverlapEngine::new(tower);
        let mut table = LagCountTable::new(tower);
        for &n in lags {
            if table.counts.contains_key(&n) {
                continue;
            }
            let counts = engine.lag_counts(n)?;
            table.insert(n, counts);
        }
        Ok(table)
    }
}

/// Streaming for short words, block decomposition otherwise.
pub struct AutoCounter;

impl PairCounter for AutoCounter {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn count(&self, tower: &Tower, lags: &[u64]) -> Result<LagCountTable, CorrelationError> {
        if tower.len() <= AUTO_NAIVE_LIMIT {
            NaiveCounter.count(tower, lags)
        } else {
            BlockCounter.count(tower, lags)
        }
    }
}

pub const COUNTER_NAMES: &[&str] = &["auto", "naive", "parallel", "block"];

pub fn counter(name: &str) -> Result<Box<dyn PairCounter>, CorrelationError> {
    Ok(match name {
        "auto" => Box::new(AutoCounter),
        "naive" => Box::new(NaiveCounter),
        "parallel" => Box::new(ParallelCounter),
        "block" => Box::new(BlockCounter),
        other => return Err(CorrelationError::UnknownEngine(other.to_string())),
    })
}

/// One matrix per distinct lag, in first-appearance order.
pub fn corr_sequence(
    tower: &Tower,
    lags: &[i64],
    engine: &dyn PairCounter,
) -> Result<Vec<CorrMatrix>, CorrelationError> {
    let mut seen = std::collections::HashSet::new();
    let ordered: Vec<i64> = lags.iter().copied().filter(|l| seen.insert(*l)).collect();
    if let Some(&bad) = ordered
        .iter()
        .find(|l| l.unsigned_abs() >= tower.len())
    {
        return Err(CorrelationError::LagOutOfRange {
            lag: bad,
            length: tower.len(),
        });
    }
    let mut magnitudes: Vec<u64> = ordered.iter().map(|l| l.unsigned_abs()).collect();
    magnitudes.sort_unstable();
    magnitudes.dedup();
    let table = engine.count(tower, &magnitudes)?;
    ordered.iter().map(|&l| corr_matrix(&table, l)).collect()
}

/// Product matrix `Pi[a][b] = mu(a) mu(b)` of the depth-`J` measures.
pub fn product_matrix(tower: &Tower) -> Matrix {
    let mu = crate::symbolic::level_measures(tower).measures();
    Matrix::outer(&mu, &mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::catalog;

    fn tower(name: &str, base: usize, depth: usize) -> Tower {
        let s = catalog(name).unwrap().realize(depth).unwrap();
        Tower::new(&s, base, depth).unwrap()
    }

    /// Position-by-position scan of a materialized word.
    fn brute(word: &[u16], dim: usize, n: usize) -> CountMatrix {
        let mut m = CountMatrix::zeros(dim);
        for p in 0..word.len().saturating_sub(n) {
            m[(word[p] as usize, word[p + n] as usize)] += 1;
        }
        m
    }

    #[test]
    fn chacon_depth3_counts() {
        // W = 0 0 * 0 0 * *
        let t = tower("chacon", 1, 3);
        let table = NaiveCounter.count(&t, &[0, 1, 3]).unwrap();
        let c1 = table.get(1).unwrap();
        assert_eq!(c1.as_slice(), &[2, 2, 1, 1]);
        assert_eq!(c1.total(), 6);
        let c3 = table.get(3).unwrap();
        // pairs (0,3),(1,4),(2,5),(3,6) = (0,0),(0,0),(*,*),(0,*)
        assert_eq!(c3.as_slice(), &[2, 1, 0, 1]);
        assert_eq!(*c3, brute(&t.materialize(3).symbols, 2, 3));
        assert_eq!(table.get(0).unwrap().as_slice(), &[4, 0, 0, 3]);
    }

    #[test]
    fn normalized_matrices() {
        let t = tower("chacon", 1, 3);
        let table = NaiveCounter.count(&t, &[0, 1]).unwrap();
        let d1 = corr_matrix(&table, 1).unwrap();
        assert_eq!(d1.matrix.as_slice(), &[2.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0]);
        assert_eq!(d1.boundary_bound, 1.0 / 7.0);
        let d0 = corr_matrix(&table, 0).unwrap();
        assert_eq!(d0.matrix, Matrix::diagonal(&[4.0 / 7.0, 3.0 / 7.0]));
        let dm1 = corr_matrix(&table, -1).unwrap();
        assert_eq!(dm1.matrix, d1.matrix.transpose());
        assert_eq!(corr_matrix(&table, 5), Err(CorrelationError::MissingLag(5)));
    }

    #[test]
    fn engines_agree_on_small_words() {
        for name in ["chacon", "modified-chacon", "spaced-odometer5", "dyadic-odometer"] {
            let t = tower(name, 2, 6);
            let word = t.materialize(6).symbols;
            let lags: Vec<u64> = (0..t.len()).step_by(3).collect();
            let naive = NaiveCounter.count(&t, &lags).unwrap();
            let par = ParallelCounter.count(&t, &lags).unwrap();
            let block = BlockCounter.count(&t, &lags).unwrap();
            for &n in &lags {
                let expect = brute(&word, t.alphabet().size(), n as usize);
                assert_eq!(*naive.get(n as i64).unwrap(), expect, "{name} naive lag {n}");
                assert_eq!(*par.get(n as i64).unwrap(), expect, "{name} parallel lag {n}");
                assert_eq!(*block.get(n as i64).unwrap(), expect, "{name} block lag {n}");
            }
        }
    }

    #[test]
    fn sequence_dedups_in_order() {
        let t = tower("chacon", 1, 5);
        let seq = corr_sequence(&t, &[3, 0, 3, -3], &NaiveCounter).unwrap();
        assert_eq!(seq.iter().map(|c| c.lag).collect::<Vec<_>>(), vec![3, 0, -3]);
        assert_eq!(seq[2].matrix, seq[0].matrix.transpose());
        let zero = corr_sequence(&t, &[0], &AutoCounter).unwrap();
        assert_eq!(zero[0].matrix, Matrix::diagonal(&crate::symbolic::level_measures(&t).measures()));
        assert!(matches!(
            corr_sequence(&t, &[31], &NaiveCounter),
            Err(CorrelationError::LagOutOfRange { lag: 31, length: 31 })
        ));
    }

    #[test]
    fn registry_lookup() {
        for name in COUNTER_NAMES {
            assert_eq!(counter(name).unwrap().name(), *name);
        }
        assert!(counter("fft").is_err());
    }

    #[test]
    fn csv_rows() {
        let t = tower("chacon", 1, 3);
        let table = NaiveCounter.count(&t, &[1, 2]).unwrap();
        let mut out = Vec::new();
        table.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 4);
        assert!(text.contains("1,0,*,2"));
    }
}
