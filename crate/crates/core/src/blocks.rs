//! Empirical `(k+1)`-block distributions of three aligned symbol series.
//!
//! A block table has `3(k+1)` single-symbol axes laid out as
//! `x_0..x_k, y_0..y_k, z_0..z_k`, where index `k` is the newest symbol of
//! each window. A series of length `L` yields `n = L - k` windows; the
//! first `k` symbols only ever appear as context.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{self, JointPmf};

/// Refuse block tables larger than this many cells unless the caller raises
/// the budget explicitly.
pub const DEFAULT_CELL_BUDGET: usize = 100_000_000;

/// Alphabet sizes of the three processes. `z = 1` means no confounder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlphabetSpec {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl AlphabetSpec {
    pub fn new(x: usize, y: usize, z: usize) -> Result<Self> {
        if x < 2 || y < 2 {
            return Err(Error::Config(format!(
                "source and target alphabets need at least two symbols (got {x} and {y})"
            )));
        }
        if z < 1 {
            return Err(Error::Config("confounder alphabet must be nonempty".into()));
        }
        Ok(Self { x, y, z })
    }

    pub fn unconditional(x: usize, y: usize) -> Result<Self> {
        Self::new(x, y, 1)
    }

    /// Size of the joint alphabet `A × B × C`.
    pub fn joint(&self) -> usize {
        self.x * self.y * self.z
    }

    /// Index of the joint symbol `(a, b, c)`; `c` varies fastest.
    pub fn encode(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.y + b) * self.z + c
    }

    pub fn decode(&self, s: usize) -> (usize, usize, usize) {
        (s / (self.y * self.z), (s / self.z) % self.y, s % self.z)
    }
}

/// A finite-alphabet time series.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolSeries {
    values: Vec<u32>,
    cardinality: usize,
}

impl SymbolSeries {
    pub fn new(values: Vec<u32>, cardinality: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Series("series is empty".into()));
        }
        if cardinality == 0 {
            return Err(Error::Series("alphabet must be nonempty".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| v as usize >= cardinality)
        {
            return Err(Error::Series(format!(
                "symbol {v} at position {i} outside alphabet 0..{cardinality}"
            )));
        }
        Ok(Self { values, cardinality })
    }

    /// `len` copies of symbol 0 over a one-letter alphabet: the stand-in
    /// confounder of an unconditional test.
    pub fn constant(len: usize) -> Result<Self> {
        Self::new(vec![0; len], 1)
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    /// A contiguous sub-range as a new series over the same alphabet.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let values = self
            .values
            .get(range.clone())
            .ok_or_else(|| Error::Series(format!("range {range:?} outside series of length {}", self.len())))?;
        Self::new(values.to_vec(), self.cardinality)
    }

    pub fn into_values(self) -> Vec<u32> {
        self.values
    }
}

/// Shape of a `(k+1)`-block table and the position of each axis in it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub k: usize,
    pub alphabet: AlphabetSpec,
}

impl BlockLayout {
    pub fn new(k: usize, alphabet: AlphabetSpec) -> Self {
        Self { k, alphabet }
    }

    pub fn width(&self) -> usize {
        self.k + 1
    }

    pub fn axes(&self) -> Vec<usize> {
        let w = self.width();
        std::iter::repeat_n(self.alphabet.x, w)
            .chain(std::iter::repeat_n(self.alphabet.y, w))
            .chain(std::iter::repeat_n(self.alphabet.z, w))
            .collect()
    }

    /// Number of cells, or `None` on overflow.
    pub fn cells(&self) -> Option<usize> {
        let w = self.width() as u32;
        let a = &self.alphabet;
        a.x.checked_pow(w)?
            .checked_mul(a.y.checked_pow(w)?)?
            .checked_mul(a.z.checked_pow(w)?)
    }

    pub fn x_axis(&self, j: usize) -> usize {
        j
    }

    pub fn y_axis(&self, j: usize) -> usize {
        self.width() + j
    }

    pub fn z_axis(&self, j: usize) -> usize {
        2 * self.width() + j
    }

    pub fn x_axes(&self) -> Vec<usize> {
        (0..self.width()).map(|j| self.x_axis(j)).collect()
    }

    pub fn y_axes(&self) -> Vec<usize> {
        (0..self.width()).map(|j| self.y_axis(j)).collect()
    }

    pub fn z_axes(&self) -> Vec<usize> {
        (0..self.width()).map(|j| self.z_axis(j)).collect()
    }

    /// `y_0..y_{k-1}`: the target's past within a window.
    pub fn y_past_axes(&self) -> Vec<usize> {
        (0..self.k).map(|j| self.y_axis(j)).collect()
    }

    /// `y_k`: the target's present.
    pub fn y_now_axis(&self) -> usize {
        self.y_axis(self.k)
    }

    /// Conditioning set of the plug-in functional: target past and all of
    /// the confounder window.
    pub fn context_axes(&self) -> Vec<usize> {
        let mut c = self.y_past_axes();
        c.extend(self.z_axes());
        c
    }

    /// Splits a flat cell index into per-axis symbols.
    pub fn unflatten(&self, index: usize) -> Vec<usize> {
        info::unflatten(&self.axes(), index)
    }
}

/// Sliding-window cell indices of three aligned series, one per window end
/// `i = k..L`. Each step is O(1): the three window codes roll in mixed
/// radix and the cell index is their concatenation.
pub struct WindowIndices<'a> {
    x: &'a [u32],
    y: &'a [u32],
    z: &'a [u32],
    radix: (usize, usize, usize),
    modulus: (usize, usize, usize),
    codes: (usize, usize, usize),
    next: usize,
}

impl<'a> WindowIndices<'a> {
    pub fn new(x: &'a SymbolSeries, y: &'a SymbolSeries, z: &'a SymbolSeries, k: usize) -> Result<Self> {
        let layout = check_inputs(x, y, z, k)?;
        let a = layout.alphabet;
        let w = layout.width() as u32;
        let mut it = Self {
            x: x.values(),
            y: y.values(),
            z: z.values(),
            radix: (a.x, a.y, a.z),
            modulus: (a.x.pow(w), a.y.pow(w), a.z.pow(w)),
            codes: (0, 0, 0),
            next: 0,
        };
        for _ in 0..k {
            it.roll();
        }
        Ok(it)
    }

    #[inline]
    fn roll(&mut self) {
        let i = self.next;
        let (rx, ry, rz) = self.radix;
        let (mx, my, mz) = self.modulus;
        self.codes.0 = (self.codes.0 * rx + self.x[i] as usize) % mx;
        self.codes.1 = (self.codes.1 * ry + self.y[i] as usize) % my;
        self.codes.2 = (self.codes.2 * rz + self.z[i] as usize) % mz;
        self.next += 1;
    }

    /// Index (into the series) of the newest symbol of the next window.
    pub fn position(&self) -> usize {
        self.next
    }
}

impl Iterator for WindowIndices<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.next >= self.x.len() {
            return None;
        }
        self.roll();
        let (_, my, mz) = self.modulus;
        Some((self.codes.0 * my + self.codes.1) * mz + self.codes.2)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.x.len() - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for WindowIndices<'_> {}

fn check_inputs(x: &SymbolSeries, y: &SymbolSeries, z: &SymbolSeries, k: usize) -> Result<BlockLayout> {
    let alphabet = AlphabetSpec::new(x.cardinality(), y.cardinality(), z.cardinality())?;
    if x.len() != y.len() || x.len() != z.len() {
        return Err(Error::Series(format!(
            "series lengths differ: x {}, y {}, z {}",
            x.len(),
            y.len(),
            z.len()
        )));
    }
    if x.len() <= k {
        return Err(Error::Series(format!(
            "series of length {} has no windows at order {k}",
            x.len()
        )));
    }
    Ok(BlockLayout::new(k, alphabet))
}

/// Joint counts of `(k+1)`-blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCounts {
    layout: BlockLayout,
    n: u64,
    counts: Vec<u64>,
}

impl BlockCounts {
    /// An all-zero table, for callers that feed windows themselves.
    pub fn empty(layout: BlockLayout, cell_budget: usize) -> Result<Self> {
        let cells = layout
            .cells()
            .filter(|&c| c <= cell_budget)
            .ok_or_else(|| {
                Error::Config(format!(
                    "block table for k = {} over alphabets {:?} exceeds the budget of {cell_budget} cells",
                    layout.k, layout.alphabet
                ))
            })?;
        Ok(Self {
            layout,
            n: 0,
            counts: vec![0; cells],
        })
    }

    /// Builds a table from raw counts laid out as [`BlockLayout::axes`].
    pub fn from_raw(layout: BlockLayout, counts: Vec<u64>) -> Result<Self> {
        if Some(counts.len()) != layout.cells() {
            return Err(Error::Config(format!(
                "{} counts for a layout of {:?} cells",
                counts.len(),
                layout.cells()
            )));
        }
        let n = counts.iter().sum();
        Ok(Self { layout, n, counts })
    }

    #[inline]
    pub fn record(&mut self, cell: usize) {
        self.counts[cell] += 1;
        self.n += 1;
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn k(&self) -> usize {
        self.layout.k
    }

    pub fn alphabet(&self) -> AlphabetSpec {
        self.layout.alphabet
    }

    /// Number of windows counted.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// The empirical block distribution `counts / n`.
    pub fn to_pmf(&self) -> Result<JointPmf> {
        if self.n == 0 {
            return Err(Error::Series("no windows counted".into()));
        }
        JointPmf::from_counts(self.layout.axes(), &self.counts)
    }

    /// Integer marginal over the axes in `keep` (in that order).
    pub fn marginal_counts(&self, keep: &[usize]) -> Result<(Vec<usize>, Vec<u64>)> {
        if keep.is_empty() {
            return Err(Error::Axes("empty axis selector".into()));
        }
        let axes = self.layout.axes();
        info::check_axes(axes.len(), &[keep])?;
        Ok(info::marginal_sums(&axes, &self.counts, keep))
    }

    /// Empirical marginal distribution over the axes in `keep`.
    pub fn marginalize(&self, keep: &[usize]) -> Result<JointPmf> {
        if self.n == 0 {
            return Err(Error::Series("no windows counted".into()));
        }
        let (axes, counts) = self.marginal_counts(keep)?;
        JointPmf::from_counts(axes, &counts)
    }
}

/// Single-pass block counter with a configurable table-size budget.
#[derive(Clone, Copy, Debug)]
pub struct BlockCounter {
    pub cell_budget: usize,
}

impl Default for BlockCounter {
    fn default() -> Self {
        Self {
            cell_budget: DEFAULT_CELL_BUDGET,
        }
    }
}

impl BlockCounter {
    pub fn count(&self, x: &SymbolSeries, y: &SymbolSeries, z: &SymbolSeries, k: usize) -> Result<BlockCounts> {
        let mut counts = BlockCounts::empty(check_inputs(x, y, z, k)?, self.cell_budget)?;
        for cell in WindowIndices::new(x, y, z, k)? {
            counts.record(cell);
        }
        Ok(counts)
    }

    /// Counts only windows that lie inside one segment. `boundaries` are the
    /// start indices of every segment after the first (as produced by trial
    /// concatenation); a window ending at `i` is dropped when some boundary
    /// `b` satisfies `i - k < b <= i`.
    pub fn count_segmented(
        &self,
        x: &SymbolSeries,
        y: &SymbolSeries,
        z: &SymbolSeries,
        k: usize,
        boundaries: &[usize],
    ) -> Result<BlockCounts> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Series("segment boundaries must be strictly increasing".into()));
        }
        let mut counts = BlockCounts::empty(check_inputs(x, y, z, k)?, self.cell_budget)?;
        let mut windows = WindowIndices::new(x, y, z, k)?;
        let mut upcoming = boundaries.iter().copied().peekable();
        loop {
            let end = windows.position();
            let Some(cell) = windows.next() else { break };
            while upcoming.peek().is_some_and(|&b| b + k <= end) {
                upcoming.next();
            }
            let straddles = upcoming.peek().is_some_and(|&b| b + k > end && b <= end);
            if !straddles {
                counts.record(cell);
            }
        }
        Ok(counts)
    }
}

/// Counts every `(k+1)`-window of the aligned series with the default cell
/// budget.
pub fn count_blocks(x: &SymbolSeries, y: &SymbolSeries, z: &SymbolSeries, k: usize) -> Result<BlockCounts> {
    BlockCounter::default().count(x, y, z, k)
}
