//! Exact information functionals over dense joint probability tables.
//!
//! Every quantity is in nats. Tables are stored row-major: the last axis
//! varies fastest. Axis subsets are passed as slices of axis indices and
//! must be pairwise disjoint where more than one is involved.

use std::ops::AddAssign;

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of a [`JointPmf`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Negative conditional mutual information down to this value is treated as
/// rounding noise and clipped to zero; anything lower is a bug upstream.
pub const CMI_NOISE_FLOOR: f64 = -1e-12;

/// A probability mass function over a finite product space.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPmf {
    axes: Vec<usize>,
    probs: Vec<f64>,
}

impl JointPmf {
    pub fn new(axes: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        let cells = cell_count(&axes)?;
        if probs.len() != cells {
            return Err(Error::InvalidPmf(format!(
                "{} entries for axes {:?} ({} cells expected)",
                probs.len(),
                axes,
                cells
            )));
        }
        if let Some((i, &p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::InvalidPmf(format!("entry {i} is {p}")));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidPmf(format!("entries sum to {total:.17}")));
        }
        Ok(Self { axes, probs })
    }

    /// Normalizes a nonnegative count table.
    pub fn from_counts(axes: Vec<usize>, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidPmf("all counts are zero".into()));
        }
        let n = total as f64;
        Self::new(axes, counts.iter().map(|&c| c as f64 / n).collect())
    }

    /// Normalizes nonnegative weights. Used where mass is accumulated
    /// numerically (stationary laws) and only needs a final rescale.
    pub fn from_weights(axes: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let total = compensated_sum(weights.iter().copied());
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidPmf(format!("weights sum to {total}")));
        }
        Self::new(axes, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(axes: Vec<usize>) -> Result<Self> {
        let cells = cell_count(&axes)?;
        Self::new(axes, vec![1.0 / cells as f64; cells])
    }

    pub fn point_mass(axes: Vec<usize>, at: &[usize]) -> Result<Self> {
        let cells = cell_count(&axes)?;
        let index = flat_index(&axes, at)?;
        let mut probs = vec![0.0; cells];
        probs[index] = 1.0;
        Self::new(axes, probs)
    }

    pub fn axes(&self) -> &[usize] {
        &self.axes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    pub fn get(&self, at: &[usize]) -> Result<f64> {
        Ok(self.probs[flat_index(&self.axes, at)?])
    }

    /// Sums out every axis not listed in `keep`. The result's axes appear in
    /// the order given by `keep`.
    pub fn marginal(&self, keep: &[usize]) -> Result<JointPmf> {
        check_axes(self.rank(), &[keep])?;
        let (axes, probs) = marginal_sums(&self.axes, &self.probs, keep);
        Ok(JointPmf { axes, probs })
    }

    /// Largest absolute cellwise difference. Axes must match.
    pub fn max_abs_diff(&self, other: &JointPmf) -> Result<f64> {
        if self.axes != other.axes {
            return Err(Error::Axes(format!(
                "axes differ: {:?} vs {:?}",
                self.axes, other.axes
            )));
        }
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Shannon entropy `-Σ p log p`, with `0 log 0 = 0`.
pub fn entropy(p: &JointPmf) -> f64 {
    entropy_of(&p.probs)
}

/// `H(target | given) = H(target ∪ given) - H(given)`.
pub fn conditional_entropy(p: &JointPmf, target: &[usize], given: &[usize]) -> Result<f64> {
    check_axes(p.rank(), &[target, given])?;
    let joint: Vec<usize> = target.iter().chain(given).copied().collect();
    let h = subset_entropy(p, &joint) - subset_entropy(p, given);
    Ok(h.max(0.0))
}

/// `I(A; B | C) = H(A|C) + H(B|C) - H(A,B|C)`. With `c` empty this is plain
/// mutual information.
pub fn conditional_mutual_information(
    p: &JointPmf,
    a: &[usize],
    b: &[usize],
    c: &[usize],
) -> Result<f64> {
    check_axes(p.rank(), &[a, b, c])?;
    let ac: Vec<usize> = a.iter().chain(c).copied().collect();
    let bc: Vec<usize> = b.iter().chain(c).copied().collect();
    let abc: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
    let raw = subset_entropy(p, &ac) + subset_entropy(p, &bc)
        - subset_entropy(p, &abc)
        - subset_entropy(p, c);
    clip_cmi(raw)
}

/// Relative entropy `D(p || q) = Σ p log(p / q)`.
pub fn relative_entropy(p: &JointPmf, q: &JointPmf) -> Result<f64> {
    if p.axes != q.axes {
        return Err(Error::Axes(format!(
            "relative entropy needs identical axes, got {:?} and {:?}",
            p.axes, q.axes
        )));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::SupportMismatch {
                cell: unflatten(&p.axes, i),
                p: pi,
            });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total.max(0.0))
}

pub(crate) fn clip_cmi(raw: f64) -> Result<f64> {
    if raw < CMI_NOISE_FLOOR {
        return Err(Error::Internal(format!(
            "conditional mutual information evaluated to {raw:e}"
        )));
    }
    Ok(raw.max(0.0))
}

fn subset_entropy(p: &JointPmf, keep: &[usize]) -> f64 {
    if keep.is_empty() {
        return 0.0;
    }
    if keep.len() == p.rank() && keep.iter().enumerate().all(|(i, &a)| i == a) {
        return entropy(p);
    }
    let (_, probs) = marginal_sums(&p.axes, &p.probs, keep);
    entropy_of(&probs)
}

pub(crate) fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Each listed axis set must be in range, and the sets pairwise disjoint
/// (and free of repeats).
pub(crate) fn check_axes(rank: usize, sets: &[&[usize]]) -> Result<()> {
    let mut seen = vec![false; rank];
    for set in sets {
        for &axis in *set {
            if axis >= rank {
                return Err(Error::Axes(format!(
                    "axis {axis} out of range for a rank-{rank} table"
                )));
            }
            if seen[axis] {
                return Err(Error::Axes(format!("axis {axis} selected more than once")));
            }
            seen[axis] = true;
        }
    }
    Ok(())
}

pub(crate) fn cell_count(axes: &[usize]) -> Result<usize> {
    axes.iter().try_fold(1usize, |acc, &card| {
        if card == 0 {
            return Err(Error::InvalidPmf("zero-cardinality axis".into()));
        }
        acc.checked_mul(card)
            .ok_or_else(|| Error::InvalidPmf(format!("table with axes {axes:?} is too large")))
    })
}

fn flat_index(axes: &[usize], at: &[usize]) -> Result<usize> {
    if at.len() != axes.len() {
        return Err(Error::Axes(format!(
            "index of length {} for a rank-{} table",
            at.len(),
            axes.len()
        )));
    }
    let mut index = 0;
    for (&card, &i) in axes.iter().zip(at) {
        if i >= card {
            return Err(Error::Axes(format!("symbol {i} out of range 0..{card}")));
        }
        index = index * card + i;
    }
    Ok(index)
}

pub(crate) fn unflatten(axes: &[usize], mut index: usize) -> Vec<usize> {
    let mut out = vec![0; axes.len()];
    for (slot, &card) in out.iter_mut().zip(axes).rev() {
        *slot = index % card;
        index /= card;
    }
    out
}

/// Sums a row-major table down to the axes in `keep` (in that order).
pub(crate) fn marginal_sums<T>(axes: &[usize], values: &[T], keep: &[usize]) -> (Vec<usize>, Vec<T>)
where
    T: Copy + Default + AddAssign,
{
    let kept: Vec<usize> = keep.iter().map(|&a| axes[a]).collect();
    let mut out = vec![T::default(); kept.iter().product()];
    for (&v, dest) in values.iter().zip(projection(axes, keep)) {
        out[dest] += v;
    }
    (kept, out)
}

/// For every cell of a row-major table, the flat index of its image in the
/// marginal over `keep`. Walks the source once with an odometer, updating
/// the destination index incrementally.
pub(crate) fn projection(axes: &[usize], keep: &[usize]) -> Vec<usize> {
    let mut dest_stride = vec![0usize; axes.len()];
    let mut stride = 1;
    for &axis in keep.iter().rev() {
        dest_stride[axis] = stride;
        stride *= axes[axis];
    }
    let total: usize = axes.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut digits = vec![0usize; axes.len()];
    let mut dest = 0usize;
    for _ in 0..total {
        map.push(dest);
        for axis in (0..axes.len()).rev() {
            digits[axis] += 1;
            if digits[axis] < axes[axis] {
                dest += dest_stride[axis];
                break;
            }
            digits[axis] = 0;
            dest -= (axes[axis] - 1) * dest_stride[axis];
        }
    }
    map
}

fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
