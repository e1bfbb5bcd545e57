//! Purely random binary partitions of the unit cube ("binary histograms").
//!
//! The tree is complete: every node at depth `< p` is split on one coordinate
//! and cells are half-open, `[lo, t)` to the left and `[t, hi)` to the right.
//! Nodes are stored in heap order, so node `i` has children `2i+1`, `2i+2`
//! and the `j`-th node of level `q` sits at index `2^q - 1 + j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{MeanAccumulator, Rows};
use crate::random::RngStream;

use super::{check_clip_bound, clip, EMPTY_CELL_VALUE};

/// Deepest tree this crate will build (2^24 leaves).
pub const MAX_DEPTH: u32 = 24;

/// How a node's threshold is placed inside its cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    /// Coordinate uniform over `0..d`, threshold uniform inside the cell.
    #[default]
    Uniform,
    /// Coordinate uniform over `0..d`, threshold at the cell midpoint.
    Midpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub coordinate: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPartition", into = "RawPartition")]
pub struct BinaryPartition {
    dim: usize,
    depth: u32,
    splits: Vec<Split>,
}

#[derive(Serialize, Deserialize)]
struct RawPartition {
    dim: usize,
    depth: u32,
    splits: Vec<Split>,
}

impl TryFrom<RawPartition> for BinaryPartition {
    type Error = Error;

    fn try_from(raw: RawPartition) -> Result<Self> {
        BinaryPartition::from_splits(raw.dim, raw.depth, raw.splits)
    }
}

impl From<BinaryPartition> for RawPartition {
    fn from(p: BinaryPartition) -> Self {
        RawPartition {
            dim: p.dim,
            depth: p.depth,
            splits: p.splits,
        }
    }
}

fn check_depth(depth: u32) -> Result<()> {
    if depth > MAX_DEPTH {
        return Err(Error::InvalidParameter(format!(
            "binary partition depth {depth} exceeds {MAX_DEPTH}"
        )));
    }
    Ok(())
}

impl BinaryPartition {
    /// Builds a partition from explicit splits listed in heap order,
    /// checking every threshold lies strictly inside its node's cell.
    pub fn from_splits(dim: usize, depth: u32, splits: Vec<Split>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        check_depth(depth)?;
        let internal = (1usize << depth) - 1;
        if splits.len() != internal {
            return Err(Error::InvalidInput(format!(
                "depth {depth} needs {internal} splits, got {}",
                splits.len()
            )));
        }
        let p = Self { dim, depth, splits };
        for node in 0..internal {
            let s = p.splits[node];
            if s.coordinate >= dim {
                return Err(Error::InvalidInput(format!(
                    "node {node} splits coordinate {} of a {dim}-dimensional cube",
                    s.coordinate
                )));
            }
            let (lo, hi) = p.node_box(node);
            if !(s.threshold > lo[s.coordinate] && s.threshold < hi[s.coordinate]) {
                return Err(Error::InvalidInput(format!(
                    "node {node} threshold {} outside ({}, {})",
                    s.threshold, lo[s.coordinate], hi[s.coordinate]
                )));
            }
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn num_leaves(&self) -> usize {
        1 << self.depth
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Leaf id in `0..2^depth` of the cell containing `x`.
    #[inline]
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        self.node_at_level(x, self.depth)
    }

    /// Index within level `level` (`0..2^level`) of the node containing `x`.
    #[inline]
    pub fn node_at_level(&self, x: &[f64], level: u32) -> usize {
        debug_assert!(level <= self.depth);
        let mut node = 0usize;
        for _ in 0..level {
            let s = self.splits[node];
            node = if x[s.coordinate] < s.threshold {
                2 * node + 1
            } else {
                2 * node + 2
            };
        }
        node + 1 - (1 << level)
    }

    /// Bounds `(lo, hi)` of a leaf cell.
    pub fn leaf_box(&self, leaf: usize) -> (Vec<f64>, Vec<f64>) {
        self.node_box((1 << self.depth) - 1 + leaf)
    }

    /// Bounds of the node at heap index `node`.
    pub fn node_box(&self, node: usize) -> (Vec<f64>, Vec<f64>) {
        let mut path = Vec::new();
        let mut n = node;
        while n > 0 {
            let parent = (n - 1) / 2;
            path.push((parent, n == 2 * parent + 1));
            n = parent;
        }
        let mut lo = vec![0.0; self.dim];
        let mut hi = vec![1.0; self.dim];
        for &(parent, left) in path.iter().rev() {
            let s = self.splits[parent];
            if left {
                hi[s.coordinate] = s.threshold;
            } else {
                lo[s.coordinate] = s.threshold;
            }
        }
        (lo, hi)
    }
}

/// Draws a complete random binary partition of `[0,1]^d` of depth `depth`.
pub fn sample_binary_partition(
    d: usize,
    depth: u32,
    rule: SplitRule,
    rng: &mut RngStream,
) -> Result<BinaryPartition> {
    if d == 0 {
        return Err(Error::InvalidDimension(d));
    }
    check_depth(depth)?;
    let internal = (1usize << depth) - 1;
    let mut splits = Vec::with_capacity(internal);
    // boxes of the current level, in heap order
    let mut level = vec![(vec![0.0; d], vec![1.0; d])];
    while splits.len() < internal {
        let mut next = Vec::with_capacity(level.len() * 2);
        for (lo, hi) in level {
            let coordinate = rng.random_range(0..d);
            let (a, b) = (lo[coordinate], hi[coordinate]);
            let threshold = match rule {
                SplitRule::Midpoint => 0.5 * (a + b),
                SplitRule::Uniform => {
                    let mut t = a + (b - a) * rng.random::<f64>();
                    // keep the threshold strictly interior
                    while !(t > a && t < b) {
                        t = a + (b - a) * rng.random::<f64>();
                    }
                    t
                }
            };
            splits.push(Split {
                coordinate,
                threshold,
            });
            let mut left_hi = hi.clone();
            left_hi[coordinate] = threshold;
            let mut right_lo = lo.clone();
            right_lo[coordinate] = threshold;
            next.push((lo, left_hi));
            next.push((right_lo, hi));
        }
        level = next;
    }
    Ok(BinaryPartition {
        dim: d,
        depth,
        splits,
    })
}

/// Piecewise-constant regressor on the leaves of a [`BinaryPartition`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryHistRegressor {
    partition: BinaryPartition,
    values: Vec<Option<f64>>,
    clip_bound: f64,
    default_value: f64,
}

impl BinaryHistRegressor {
    pub fn partition(&self) -> &BinaryPartition {
        &self.partition
    }

    /// Value of each leaf; `None` for leaves without training data.
    pub fn leaf_values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.values[self.partition.leaf_of(x)].unwrap_or(self.default_value)
    }
}

pub fn fit_binary(
    xs: &Rows<'_>,
    ys: &[f64],
    partition: BinaryPartition,
    clip_bound: f64,
) -> Result<BinaryHistRegressor> {
    fit_binary_with_fitted(xs, ys, partition, clip_bound).map(|(m, _)| m)
}

pub(crate) fn fit_binary_with_fitted(
    xs: &Rows<'_>,
    ys: &[f64],
    partition: BinaryPartition,
    clip_bound: f64,
) -> Result<(BinaryHistRegressor, Vec<f64>)> {
    check_clip_bound(clip_bound)?;
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} targets",
            xs.len(),
            ys.len()
        )));
    }
    if xs.dim() != partition.dim() {
        return Err(Error::InvalidInput(format!(
            "data has {} features, partition expects {}",
            xs.dim(),
            partition.dim()
        )));
    }
    let mut acc = vec![MeanAccumulator::default(); partition.num_leaves()];
    let leaves: Vec<usize> = xs.iter().map(|x| partition.leaf_of(x)).collect();
    for (&leaf, &y) in leaves.iter().zip(ys) {
        acc[leaf].add(y);
    }
    let values: Vec<Option<f64>> = acc
        .iter()
        .map(|a| a.mean().map(|m| clip(m, clip_bound)))
        .collect();
    let fitted = leaves.iter().map(|&l| values[l].unwrap()).collect();
    Ok((
        BinaryHistRegressor {
            partition,
            values,
            clip_bound,
            default_value: EMPTY_CELL_VALUE,
        },
        fitted,
    ))
}
