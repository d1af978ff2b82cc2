use rayon::prelude::*;

use super::{CorrelationError, LagCountTable};
use crate::matrix::CountMatrix;
use crate::symbolic::{Symbol, SymbolStream, Tower};

/// Largest lag served from the ring window; longer lags read the word
/// through a second cursor instead.
const RING_LIMIT: u64 = 1 << 22;
const READ_CHUNK: usize = 1 << 15;
const PARALLEL_GRAIN: u64 = 1 << 22;

/// Definitional counter: one pass over the stream, holding the last
/// `max lag` symbols in a ring.
pub fn lag_counts_naive(
    mut stream: SymbolStream<'_>,
    lags: &[u64],
) -> Result<LagCountTable, CorrelationError> {
    let tower = stream.tower();
    let total = stream.total_len();
    if let Some(&n) = lags.iter().find(|&&n| n >= total) {
        return Err(CorrelationError::LagOutOfRange {
            lag: n as i64,
            length: total,
        });
    }
    let mut lags: Vec<u64> = lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    let mut table = LagCountTable::new(tower);
    let (short, long): (Vec<u64>, Vec<u64>) = lags.iter().partition(|&&n| n <= RING_LIMIT);
    for &n in &long {
        table.insert(n, count_pairs_range(tower, n, 0, total - n));
    }
    if short.is_empty() {
        return Ok(table);
    }

    let dim = stream.alphabet().size();
    let max_lag = *short.last().unwrap();
    let size = (max_lag + 1).next_power_of_two() as usize;
    let mask = size - 1;
    let mut ring: Vec<Symbol> = vec![0; size];
    let mut counts: Vec<Vec<u64>> = vec![vec![0; dim * dim]; short.len()];
    let mut buf = vec![0; READ_CHUNK];
    let mut pos: u64 = 0;
    loop {
        let got = stream.read(&mut buf);
        if got == 0 {
            break;
        }
        for &s in &buf[..got] {
            ring[pos as usize & mask] = s;
            for (n, c) in short.iter().zip(counts.iter_mut()) {
                if pos >= *n {
                    let a = ring[(pos - n) as usize & mask];
                    c[a as usize * dim + s as usize] += 1;
                }
            }
            pos += 1;
        }
    }
    for (n, c) in short.into_iter().zip(counts) {
        let mut m = CountMatrix::zeros(dim);
        m.as_mut_slice().copy_from_slice(&c);
        table.insert(n, m);
    }
    Ok(table)
}

/// Pair counts at lag `n` for left positions `from..to`, reading the word
/// through two cursors.
pub fn count_pairs_range(tower: &Tower, n: u64, from: u64, to: u64) -> CountMatrix {
    let dim = tower.alphabet().size();
    let mut counts = vec![0u64; dim * dim];
    let mut left = tower.cursor(from);
    let mut right = tower.cursor(from + n);
    let mut lbuf = vec![0; READ_CHUNK];
    let mut rbuf = vec![0; READ_CHUNK];
    let mut remaining = to.saturating_sub(from);
    while remaining > 0 {
        let want = (remaining as usize).min(READ_CHUNK);
        let got = left.fill(&mut lbuf[..want]);
        let got_r = right.fill(&mut rbuf[..got]);
        debug_assert_eq!(got, got_r);
        for (&a, &b) in lbuf[..got].iter().zip(&rbuf[..got]) {
            counts[a as usize * dim + b as usize] += 1;
        }
        remaining -= got as u64;
    }
    let mut m = CountMatrix::zeros(dim);
    m.as_mut_slice().copy_from_slice(&counts);
    m
}

/// Chunked counting across threads. Chunk tables are merged by addition,
/// so the result does not depend on the split.
pub fn lag_counts_parallel(tower: &Tower, lags: &[u64]) -> Result<LagCountTable, CorrelationError> {
    let total = tower.len();
    let dim = tower.alphabet().size();
    let mut table = LagCountTable::new(tower);
    for &n in lags {
        if n >= total {
            return Err(CorrelationError::LagOutOfRange {
                lag: n as i64,
                length: total,
            });
        }
        let span = total - n;
        let threads = rayon::current_num_threads() as u64;
        let grain = (span / (4 * threads)).max(PARALLEL_GRAIN.min(span.max(1)));
        let chunks: Vec<(u64, u64)> = (0..span)
            .step_by(grain.max(1) as usize)
            .map(|a| (a, (a + grain).min(span)))
            .collect();
        let merged = chunks
            .into_par_iter()
            .map(|(a, b)| count_pairs_range(tower, n, a, b))
            .reduce(
                || CountMatrix::zeros(dim),
                |mut x, y| {
                    x += &y;
                    x
                },
            );
        table.insert(n, merged);
    }
    Ok(table)
}
