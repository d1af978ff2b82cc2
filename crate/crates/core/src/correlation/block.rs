//! Hierarchical pair counting.
//!
//! For a lag `n`, let `p` be the least stage with `l_p >= n`. `C_{W_p}(n)` is
//! counted directly; above `p` a pair can straddle at most one junction
//! `W_j *^s W_j`, so
//!
//! ```text
//! C_{W_{j+1}}(n) = r_j C_{W_j}(n) + sum_{i < r_j} X(s_j(i)) + tail(s_j(r_j))
//! ```
//!
//! where the junction term `X(s)` depends only on the spacer value and is
//! computed once per distinct value. Junction terms need the alignment counts
//! of one copy of `W_j` against another at an offset; those come from
//! [`OverlapEngine`], which splits the longer word into its children and
//! memoizes on `(stage, stage, offset)`. The recursion only touches the
//! boundary children of each alignment, so its cost grows with depth, not with
//! `l_J`.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use super::{CorrelationError, LagCountTable};
use crate::matrix::CountMatrix;
use crate::symbolic::Tower;

/// Stages up to this length are counted by a direct scan.
const DIRECT_SCAN_LIMIT: u64 = 1 << 16;
/// Memo budget in bytes of stored matrices.
const MEMO_BYTES: usize = 256 << 20;

/// Alignment counts between stage words, memoized per tower.
pub struct OverlapEngine<'a> {
    tower: &'a Tower,
    dim: usize,
    memo: HashMap<(usize, usize, i64), Rc<CountMatrix>>,
    memo_cap: usize,
}

impl<'a> OverlapEngine<'a> {
    pub fn new(tower: &'a Tower) -> Self {
        let dim = tower.alphabet().size();
        OverlapEngine {
            tower,
            dim,
            memo: HashMap::new(),
            memo_cap: (MEMO_BYTES / (dim * dim * 8)).max(64),
        }
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }

    fn level(&self, k: usize) -> i64 {
        self.tower.level_rel(k) as i64
    }

    /// Adds `#{x : X[x] = a, Y[x - delta] = b}` for `X = W_kx` placed at 0 and
    /// `Y = W_ky` placed at `delta` (relative stage indices).
    fn add_words(&mut self, kx: usize, ky: usize, delta: i64, acc: &mut CountMatrix) {
        if delta >= self.level(kx) || delta + self.level(ky) <= 0 {
            return;
        }
        if kx < ky {
            let m = self.canonical(ky, kx, -delta);
            acc.add_transposed(&m);
        } else {
            let m = self.canonical(kx, ky, delta);
            *acc += &m;
        }
    }

    fn canonical(&mut self, kx: usize, ky: usize, delta: i64) -> Rc<CountMatrix> {
        if let Some(m) = self.memo.get(&(kx, ky, delta)) {
            return Rc::clone(m);
        }
        let lx = self.level(kx);
        let ly = self.level(ky);
        let mut m = CountMatrix::zeros(self.dim);
        if kx == ky && delta == 0 {
            m = CountMatrix::diagonal(&self.tower.occurrences_rel(kx));
        } else if kx == 0 {
            for x in delta.max(0)..lx.min(delta + ly) {
                m[(x as usize, (x - delta) as usize)] += 1;
            }
        } else {
            let star = self.dim - 1;
            let child_len = self.level(kx - 1);
            let hi = lx.min(delta + ly);
            let (first, cut) = {
                let layout = self.tower.layout_rel(kx);
                (layout.child_at(delta.max(0) as u64), layout.cut as usize)
            };
            let mut window = vec![0u64; self.dim];
            for i in first..cut {
                let (start, spacer) = {
                    let layout = self.tower.layout_rel(kx);
                    (layout.starts[i] as i64, layout.spacers[i] as i64)
                };
                if start >= hi {
                    break;
                }
                self.add_words(kx - 1, ky, delta - start, &mut m);
                let run_lo = start + child_len;
                if spacer > 0 && run_lo < hi {
                    window.iter_mut().for_each(|w| *w = 0);
                    self.tower
                        .window_counts_rel(ky, run_lo - delta, run_lo + spacer - delta, &mut window);
                    for (b, &w) in window.iter().enumerate() {
                        m[(star, b)] += w;
                    }
                }
            }
        }
        let m = Rc::new(m);
        if kx > 0 {
            if self.memo.len() >= self.memo_cap {
                self.memo.clear();
            }
            self.memo.insert((kx, ky, delta), Rc::clone(&m));
        }
        m
    }

    /// Pairs `(x, x + n)` with `x` in `W_k` placed at 0 and `x + n` inside a
    /// spacer run `[run_at, run_at + len)`.
    fn add_word_run(&self, k: usize, n: i64, run_at: i64, len: i64, acc: &mut CountMatrix) {
        let mut window = vec![0u64; self.dim];
        self.tower
            .window_counts_rel(k, run_at - n, run_at - n + len, &mut window);
        let star = self.dim - 1;
        for (a, &w) in window.iter().enumerate() {
            acc[(a, star)] += w;
        }
    }

    /// Pairs `(x, x + n)` with `x` in a spacer run `[0, len)` and `x + n`
    /// inside `W_k` placed at `word_at`.
    fn add_run_word(&self, k: usize, n: i64, len: i64, word_at: i64, acc: &mut CountMatrix) {
        let mut window = vec![0u64; self.dim];
        self.tower
            .window_counts_rel(k, n - word_at, len + n - word_at, &mut window);
        let star = self.dim - 1;
        for (b, &w) in window.iter().enumerate() {
            acc[(star, b)] += w;
        }
    }

    /// Cross pairs of `W_k *^s W_k` not inside either copy of `W_k`.
    fn junction(&mut self, k: usize, s: u64, n: u64) -> CountMatrix {
        let l = self.level(k);
        let (s, n) = (s as i64, n as i64);
        let mut m = self.tail(k, s as u64, n as u64);
        self.add_words(k, k, l + s - n, &mut m);
        self.add_run_word(k, n, s, s, &mut m);
        m
    }

    /// Pairs of `W_k *^s` involving the run.
    fn tail(&mut self, k: usize, s: u64, n: u64) -> CountMatrix {
        let l = self.level(k);
        let (s, n) = (s as i64, n as i64);
        let mut m = CountMatrix::zeros(self.dim);
        self.add_word_run(k, n, l, s, &mut m);
        m[(self.dim - 1, self.dim - 1)] += (s - n).max(0) as u64;
        m
    }

    /// `C_{W_J}(n)` by stage combination.
    pub fn lag_counts(&mut self, n: u64) -> Result<CountMatrix, CorrelationError> {
        let tower = self.tower;
        let top = tower.levels().len() - 1;
        if n >= tower.len() {
            return Err(CorrelationError::LagOutOfRange {
                lag: n as i64,
                length: tower.len(),
            });
        }
        if n == 0 {
            return Ok(CountMatrix::diagonal(&tower.occurrences_rel(top)));
        }
        let p = (0..=top).find(|&k| tower.level_rel(k) >= n).unwrap();
        let mut counts = if tower.level_rel(p) <= DIRECT_SCAN_LIMIT {
            let word = tower.materialize(tower.base() + p).symbols;
            let mut m = CountMatrix::zeros(self.dim);
            for (a, b) in word.iter().zip(&word[n as usize..]) {
                m[(*a as usize, *b as usize)] += 1;
            }
            m
        } else {
            let mut m = CountMatrix::zeros(self.dim);
            self.add_words(p, p, -(n as i64), &mut m);
            m
        };
        for k in p..top {
            let (cut, spacers) = {
                let layout = tower.layout_rel(k + 1);
                (layout.cut, layout.spacers.clone())
            };
            let mut next = CountMatrix::zeros(self.dim);
            next.add_scaled(&counts, cut);
            let mut groups: BTreeMap<u64, u64> = BTreeMap::new();
            for &s in &spacers[..spacers.len() - 1] {
                *groups.entry(s).or_default() += 1;
            }
            for (s, mult) in groups {
                let x = self.junction(k, s, n);
                next.add_scaled(&x, mult);
            }
            let t = self.tail(k, *spacers.last().unwrap(), n);
            next += &t;
            counts = next;
        }
        Ok(counts)
    }
}

/// Block-decomposition counts for a single lag.
pub fn lag_counts_block(tower: &Tower, n: u64) -> Result<LagCountTable, CorrelationError> {
    let mut engine = OverlapEngine::new(tower);
    let counts = engine.lag_counts(n)?;
    let mut table = LagCountTable::new(tower);
    table.insert(n, counts);
    Ok(table)
}
