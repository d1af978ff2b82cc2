//! The depth-`J` tower read as a word over the base-tower alphabet.
//!
//! Symbol `k < l_{j0}` names level `T^k E_{j0}`; the spacer symbol `*` is the
//! largest code and stands for every level added after stage `j0`. The word
//! of stage `j + 1` is `W_j *^{s_j(1)} W_j *^{s_j(2)} ... W_j *^{s_j(r_j)}`.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::construction::{RealizedSchedule, ScheduleError, ScheduleKind};

pub type Symbol = u16;

/// Default chunk length for streams.
pub const DEFAULT_CHUNK: usize = 1 << 16;
/// Stages up to this length are kept materialized inside a [`Tower`].
const BLOCK_LIMIT: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymbolicError {
    #[error("word length {length} exceeds the symbol budget {budget}")]
    DepthOverBudget { length: u64, budget: u64 },
    #[error("window of {requested} symbols is longer than the word ({length})")]
    WindowTooLong { requested: u64, length: u64 },
    #[error("symbolic words are only defined for transformations")]
    NotATransformation,
    #[error("stage {stage} outside {base}..={depth}")]
    StageOutOfRange {
        stage: usize,
        base: usize,
        depth: usize,
    },
    #[error("base alphabet of {0} levels does not fit 16-bit symbols")]
    AlphabetTooLarge(u64),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Base levels `0..base_len` plus the spacer symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet {
    base_len: usize,
}

impl Alphabet {
    pub fn new(base_len: usize) -> Self {
        Alphabet { base_len }
    }

    /// Number of symbols including the spacer, `l_{j0} + 1`.
    pub fn size(&self) -> usize {
        self.base_len + 1
    }

    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn spacer(&self) -> Symbol {
        self.base_len as Symbol
    }

    pub fn is_spacer(&self, s: Symbol) -> bool {
        s as usize == self.base_len
    }

    pub fn label(&self, s: usize) -> String {
        if s == self.base_len {
            "*".to_string()
        } else {
            s.to_string()
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.size()).map(|s| self.label(s)).collect()
    }
}

/// A materialized stage word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolWord {
    pub symbols: Vec<Symbol>,
    pub stage: usize,
    pub base: usize,
    pub alphabet: Alphabet,
}

impl SymbolWord {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Digits for small alphabets, `*` for the spacer; space-separated codes
    /// once the base alphabet has more than ten levels.
    pub fn render(&self) -> String {
        render_symbols(&self.symbols, self.alphabet)
    }
}

impl fmt::Display for SymbolWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn render_symbols(symbols: &[Symbol], alphabet: Alphabet) -> String {
    let compact = alphabet.base_len() <= 10;
    let parts: Vec<String> = symbols.iter().map(|&s| alphabet.label(s as usize)).collect();
    if compact {
        parts.concat()
    } else {
        parts.join(" ")
    }
}

/// The identity word `0 1 ... h_{j0}` of `base_len` levels.
pub fn base_word(base_len: usize, base: usize) -> SymbolWord {
    SymbolWord {
        symbols: (0..base_len as Symbol).collect(),
        stage: base,
        base,
        alphabet: Alphabet::new(base_len),
    }
}

/// One substitution step `W -> W *^{s(1)} W *^{s(2)} ... W *^{s(r)}`.
pub fn expand_once(word: &SymbolWord, cut: u64, spacers: &[u64]) -> SymbolWord {
    assert_eq!(spacers.len() as u64, cut, "spacer vector length must equal the cut");
    let star = word.alphabet.spacer();
    let total = word.len() * cut as usize + spacers.iter().sum::<u64>() as usize;
    let mut symbols = Vec::with_capacity(total);
    for &s in spacers {
        symbols.extend_from_slice(&word.symbols);
        symbols.extend(std::iter::repeat_n(star, s as usize));
    }
    SymbolWord {
        symbols,
        stage: word.stage + 1,
        base: word.base,
        alphabet: word.alphabet,
    }
}

/// Children layout of one stage transition `k -> k + 1`.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub cut: u64,
    pub spacers: Vec<u64>,
    /// Start offset of the `i`-th copy of the lower word.
    pub starts: Vec<u64>,
}

impl Layout {
    /// Index of the last child whose copy starts at or before `offset`.
    pub fn child_at(&self, offset: u64) -> usize {
        self.starts.partition_point(|&s| s <= offset).saturating_sub(1)
    }
}

/// Hierarchical description of the words `W_{j0}, ..., W_J`, with random
/// access, window counts and streaming cursors. Nothing beyond a small
/// block is materialized.
#[derive(Debug, Clone)]
pub struct Tower {
    base: usize,
    depth: usize,
    alphabet: Alphabet,
    /// `levels[k] = l_{base + k}`.
    levels: Vec<u64>,
    /// `copies[k]` = copies of the base word inside `W_{base + k}`.
    copies: Vec<u64>,
    /// `layouts[k]` builds `W_{base + k + 1}` from `W_{base + k}`.
    layouts: Vec<Layout>,
    block_rel: usize,
    block: Vec<Symbol>,
}

impl Tower {
    pub fn new(
        realized: &RealizedSchedule,
        base: usize,
        depth: usize,
    ) -> Result<Self, SymbolicError> {
        if realized.kind != ScheduleKind::Transformation {
            return Err(SymbolicError::NotATransformation);
        }
        if base == 0 || base > depth || depth > realized.depth() {
            return Err(SymbolicError::StageOutOfRange {
                stage: depth,
                base,
                depth: realized.depth(),
            });
        }
        let all = realized.level_counts_u64()?;
        let base_len = all[base - 1];
        if base_len >= Symbol::MAX as u64 {
            return Err(SymbolicError::AlphabetTooLarge(base_len));
        }
        let levels = all[base - 1..depth].to_vec();
        let mut copies = vec![1u64];
        let mut layouts = Vec::with_capacity(depth - base);
        for (k, j) in (base..depth).enumerate() {
            let st = realized.stage(j);
            let mut starts = Vec::with_capacity(st.cut as usize);
            let mut at = 0u64;
            for &s in &st.spacers {
                starts.push(at);
                at += levels[k] + s;
            }
            debug_assert_eq!(at, levels[k + 1]);
            copies.push(copies[k] * st.cut);
            layouts.push(Layout {
                cut: st.cut,
                spacers: st.spacers.clone(),
                starts,
            });
        }
        let mut tower = Tower {
            base,
            depth,
            alphabet: Alphabet::new(base_len as usize),
            levels,
            copies,
            layouts,
            block_rel: 0,
            block: Vec::new(),
        };
        let block_rel = (0..tower.levels.len())
            .take_while(|&k| tower.levels[k] <= BLOCK_LIMIT)
            .last()
            .unwrap_or(0);
        tower.block = tower.materialize_rel(block_rel).symbols;
        tower.block_rel = block_rel;
        Ok(tower)
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    /// `l_J`, the length of the deepest word.
    pub fn len(&self) -> u64 {
        *self.levels.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn rel(&self, stage: usize) -> usize {
        assert!(
            stage >= self.base && stage <= self.depth,
            "stage {stage} outside {}..={}",
            self.base,
            self.depth
        );
        stage - self.base
    }

    /// `l_stage`.
    pub fn level(&self, stage: usize) -> u64 {
        self.levels[self.rel(stage)]
    }

    pub fn levels(&self) -> &[u64] {
        &self.levels
    }

    /// Copies of the base word inside `W_stage`, `prod_{k=j0}^{stage-1} r_k`.
    pub fn copies(&self, stage: usize) -> u64 {
        self.copies[self.rel(stage)]
    }

    /// Occurrences of every symbol in `W_stage`.
    pub fn occurrences(&self, stage: usize) -> Vec<u64> {
        self.occurrences_rel(self.rel(stage))
    }

    pub(crate) fn occurrences_rel(&self, k: usize) -> Vec<u64> {
        let base_len = self.alphabet.base_len() as u64;
        let mut occ = vec![self.copies[k]; self.alphabet.size()];
        occ[self.alphabet.size() - 1] = self.levels[k] - base_len * self.copies[k];
        occ
    }

    pub(crate) fn level_rel(&self, k: usize) -> u64 {
        self.levels[k]
    }

    pub(crate) fn layout_rel(&self, k: usize) -> &Layout {
        &self.layouts[k - 1]
    }

    /// Stage cut and spacer vector building `W_{stage+1}` from `W_stage`.
    pub fn stage_layout(&self, stage: usize) -> (u64, &[u64]) {
        let l = &self.layouts[self.rel(stage)];
        (l.cut, &l.spacers)
    }

    pub fn materialize(&self, stage: usize) -> SymbolWord {
        self.materialize_rel(self.rel(stage))
    }

    fn materialize_rel(&self, k: usize) -> SymbolWord {
        let mut word = if k >= self.block_rel && !self.block.is_empty() {
            SymbolWord {
                symbols: self.block.clone(),
                stage: self.base + self.block_rel,
                base: self.base,
                alphabet: self.alphabet,
            }
        } else {
            base_word(self.alphabet.base_len(), self.base)
        };
        while word.stage - self.base < k {
            let l = &self.layouts[word.stage - self.base];
            word = expand_once(&word, l.cut, &l.spacers);
        }
        word
    }

    pub fn symbol_at(&self, pos: u64) -> Symbol {
        assert!(pos < self.len());
        let mut k = self.levels.len() - 1;
        let mut off = pos;
        while k > 0 {
            let layout = &self.layouts[k - 1];
            let i = layout.child_at(off);
            let rel = off - layout.starts[i];
            if rel >= self.levels[k - 1] {
                return self.alphabet.spacer();
            }
            off = rel;
            k -= 1;
        }
        off as Symbol
    }

    /// Adds the symbol counts of `W_{base+k}[lo..hi)` (clipped) into `acc`.
    pub(crate) fn window_counts_rel(&self, k: usize, lo: i64, hi: i64, acc: &mut [u64]) {
        let len = self.levels[k] as i64;
        let lo = lo.max(0);
        let hi = hi.min(len);
        if lo >= hi {
            return;
        }
        if lo == 0 && hi == len {
            for (a, o) in acc.iter_mut().zip(self.occurrences_rel(k)) {
                *a += o;
            }
            return;
        }
        if k == 0 {
            for s in lo..hi {
                acc[s as usize] += 1;
            }
            return;
        }
        let layout = &self.layouts[k - 1];
        let child_len = self.levels[k - 1] as i64;
        let star = self.alphabet.size() - 1;
        let first = layout.child_at(lo as u64);
        for i in first..layout.cut as usize {
            let start = layout.starts[i] as i64;
            if start >= hi {
                break;
            }
            self.window_counts_rel(k - 1, lo - start, hi - start, acc);
            let run_lo = (start + child_len).max(lo);
            let run_hi = (start + child_len + layout.spacers[i] as i64).min(hi);
            if run_hi > run_lo {
                acc[star] += (run_hi - run_lo) as u64;
            }
        }
    }

    /// Symbol counts of `W_stage[lo..hi)`.
    pub fn window_counts(&self, stage: usize, lo: u64, hi: u64) -> Vec<u64> {
        let mut acc = vec![0; self.alphabet.size()];
        self.window_counts_rel(self.rel(stage), lo as i64, hi as i64, &mut acc);
        acc
    }

    /// Cursor over `W_J` starting at `pos`.
    pub fn cursor(&self, pos: u64) -> Cursor<'_> {
        Cursor::new(self, pos)
    }
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    k: usize,
    child: usize,
    in_run: bool,
}

/// Left-to-right reader over `W_J` from an arbitrary position.
#[derive(Debug, Clone)]
pub struct Cursor<'a> {
    tower: &'a Tower,
    frames: Vec<Frame>,
    leaf_run: bool,
    leaf_pos: u64,
    leaf_len: u64,
    remaining: u64,
}

impl<'a> Cursor<'a> {
    fn new(tower: &'a Tower, pos: u64) -> Self {
        let mut cursor = Cursor {
            tower,
            frames: Vec::new(),
            leaf_run: false,
            leaf_pos: 0,
            leaf_len: 0,
            remaining: tower.len().saturating_sub(pos),
        };
        if cursor.remaining == 0 {
            return cursor;
        }
        let m = tower.block_rel;
        let mut k = tower.levels.len() - 1;
        let mut off = pos;
        while k > m {
            let layout = &tower.layouts[k - 1];
            let i = layout.child_at(off);
            let rel = off - layout.starts[i];
            let child_len = tower.levels[k - 1];
            if rel >= child_len {
                cursor.frames.push(Frame {
                    k,
                    child: i,
                    in_run: true,
                });
                cursor.leaf_run = true;
                cursor.leaf_pos = rel - child_len;
                cursor.leaf_len = layout.spacers[i];
                return cursor;
            }
            cursor.frames.push(Frame {
                k,
                child: i,
                in_run: false,
            });
            off = rel;
            k -= 1;
        }
        cursor.leaf_run = false;
        cursor.leaf_pos = off;
        cursor.leaf_len = tower.block.len() as u64;
        cursor
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    fn descend_first(&mut self, mut k: usize) {
        let m = self.tower.block_rel;
        while k > m {
            self.frames.push(Frame {
                k,
                child: 0,
                in_run: false,
            });
            k -= 1;
        }
        self.leaf_run = false;
        self.leaf_pos = 0;
        self.leaf_len = self.tower.block.len() as u64;
    }

    fn advance_leaf(&mut self) -> bool {
        while let Some(frame) = self.frames.pop() {
            let layout = &self.tower.layouts[frame.k - 1];
            if !frame.in_run && layout.spacers[frame.child] > 0 {
                self.frames.push(Frame {
                    in_run: true,
                    ..frame
                });
                self.leaf_run = true;
                self.leaf_pos = 0;
                self.leaf_len = layout.spacers[frame.child];
                return true;
            }
            if frame.child + 1 < layout.cut as usize {
                self.frames.push(Frame {
                    k: frame.k,
                    child: frame.child + 1,
                    in_run: false,
                });
                self.descend_first(frame.k - 1);
                return true;
            }
        }
        false
    }

    /// Copies the next symbols into `buf`; returns how many were written.
    pub fn fill(&mut self, buf: &mut [Symbol]) -> usize {
        let mut written = 0;
        let star = self.tower.alphabet.spacer();
        while written < buf.len() && self.remaining > 0 {
            if self.leaf_pos == self.leaf_len {
                if !self.advance_leaf() {
                    break;
                }
                continue;
            }
            let take = ((self.leaf_len - self.leaf_pos) as usize).min(buf.len() - written);
            let out = &mut buf[written..written + take];
            if self.leaf_run {
                out.fill(star);
            } else {
                let p = self.leaf_pos as usize;
                out.copy_from_slice(&self.tower.block[p..p + take]);
            }
            self.leaf_pos += take as u64;
            self.remaining -= take as u64;
            written += take;
        }
        written
    }
}

/// Chunked producer of `W_J`. Chunk boundaries carry no structure.
#[derive(Debug, Clone)]
pub struct SymbolStream<'a> {
    cursor: Cursor<'a>,
    chunk: usize,
    total: u64,
}

impl<'a> SymbolStream<'a> {
    pub fn total_len(&self) -> u64 {
        self.total
    }

    pub fn alphabet(&self) -> Alphabet {
        self.cursor.tower.alphabet
    }

    pub fn tower(&self) -> &'a Tower {
        self.cursor.tower
    }

    /// Fills `buf` with the next symbols; 0 at the end.
    pub fn read(&mut self, buf: &mut [Symbol]) -> usize {
        self.cursor.fill(buf)
    }

    pub fn collect_symbols(self) -> Vec<Symbol> {
        let mut out = Vec::with_capacity(self.total as usize);
        for chunk in self {
            out.extend_from_slice(&chunk);
        }
        out
    }
}

impl Iterator for SymbolStream<'_> {
    type Item = Vec<Symbol>;

    fn next(&mut self) -> Option<Vec<Symbol>> {
        let mut buf = vec![0; self.chunk];
        let n = self.cursor.fill(&mut buf);
        (n > 0).then(|| {
            buf.truncate(n);
            buf
        })
    }
}

/// Streams `W_J` in chunks of `chunk` symbols.
pub fn stream_word(
    tower: &Tower,
    budget: u64,
    chunk: usize,
) -> Result<SymbolStream<'_>, SymbolicError> {
    if tower.len() > budget {
        return Err(SymbolicError::DepthOverBudget {
            length: tower.len(),
            budget,
        });
    }
    Ok(SymbolStream {
        cursor: tower.cursor(0),
        chunk: chunk.max(1),
        total: tower.len(),
    })
}

/// First and last `window` symbols of `W_stage`.
///
/// Both are read from the least stage at least `window` long and carried up:
/// the prefix never changes after that, and the suffix of stage `j + 1` is the
/// tail of `suffix_j *^{s_j(r_j)}`.
pub fn prefix_suffix(
    tower: &Tower,
    stage: usize,
    window: u64,
) -> Result<(Vec<Symbol>, Vec<Symbol>), SymbolicError> {
    let len = tower.level(stage);
    if window > len {
        return Err(SymbolicError::WindowTooLong {
            requested: window,
            length: len,
        });
    }
    let w = window as usize;
    let start = (tower.base..=stage)
        .find(|&j| tower.level(j) >= window)
        .unwrap();
    let word = tower.materialize(start);
    let prefix = word.symbols[..w].to_vec();
    let mut suffix = word.symbols[word.len() - w..].to_vec();
    let star = tower.alphabet.spacer();
    for j in start..stage {
        let (_, spacers) = tower.stage_layout(j);
        let tail = *spacers.last().unwrap() as usize;
        suffix.extend(std::iter::repeat_n(star, tail.min(w)));
        let cut = suffix.len() - w;
        suffix.drain(..cut);
    }
    Ok((prefix, suffix))
}

/// Empirical symbol measures of `W_J`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMeasures {
    pub counts: Vec<u64>,
    pub length: u64,
}

impl LevelMeasures {
    pub fn measures(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.length as f64)
            .collect()
    }
}

pub fn level_measures(tower: &Tower) -> LevelMeasures {
    LevelMeasures {
        counts: tower.occurrences(tower.depth()),
        length: tower.len(),
    }
}

/// Writes one symbol code per line.
pub fn write_word_dump<W: Write>(stream: SymbolStream<'_>, out: &mut W) -> io::Result<()> {
    let mut w = io::BufWriter::new(out);
    for chunk in stream {
        for s in chunk {
            writeln!(w, "{s}")?;
        }
    }
    w.flush()
}
