//! Piecewise-constant base learners.

mod binary;
mod histogram;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use binary::{
    fit_binary, sample_binary_partition, BinaryHistRegressor, BinaryPartition, Split, SplitRule,
    MAX_DEPTH,
};
pub use histogram::{fit_ht, HtRegressor};

use crate::error::{Error, Result};
use crate::points::Rows;
use crate::random::RngStream;
use crate::transform::sample_transform;

/// Prediction of a cell that received no training data.
pub const EMPTY_CELL_VALUE: f64 = 0.0;

#[inline]
pub(crate) fn clip(v: f64, bound: f64) -> f64 {
    v.clamp(-bound, bound)
}

pub(crate) fn check_clip_bound(bound: f64) -> Result<()> {
    if !(bound >= 0.0 && bound.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "clip bound must be finite and non-negative, got {bound}"
        )));
    }
    Ok(())
}

/// Default clip bound: the largest absolute training target.
pub fn default_clip_bound(ys: &[f64]) -> f64 {
    ys.iter().fold(0.0, |m, y| m.max(y.abs()))
}

/// Family and resolution of a random partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseSpec {
    /// Rotated, shifted equal-width histogram with bin width `bin_width`.
    Histogram { bin_width: f64 },
    /// Random binary partition of depth `depth`.
    Binary { depth: u32, split_rule: SplitRule },
}

impl BaseSpec {
    pub fn histogram(bin_width: f64) -> Self {
        BaseSpec::Histogram { bin_width }
    }

    pub fn binary(depth: u32) -> Self {
        BaseSpec::Binary {
            depth,
            split_rule: SplitRule::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseSpec::Histogram { bin_width } if !(bin_width > 0.0 && bin_width.is_finite()) => {
                Err(Error::InvalidParameter(format!(
                    "bin width must be positive, got {bin_width}"
                )))
            }
            BaseSpec::Binary { depth, .. } if depth > MAX_DEPTH => Err(Error::InvalidParameter(
                format!("depth {depth} exceeds {MAX_DEPTH}"),
            )),
            _ => Ok(()),
        }
    }

    /// Orders specs by cell size: `Greater` means `self` has larger cells
    /// (wider bins or a shallower tree). Mixed families compare as equal.
    pub fn coarseness_cmp(&self, other: &BaseSpec) -> Ordering {
        match (self, other) {
            (BaseSpec::Histogram { bin_width: a }, BaseSpec::Histogram { bin_width: b }) => {
                a.total_cmp(b)
            }
            (BaseSpec::Binary { depth: a, .. }, BaseSpec::Binary { depth: b, .. }) => b.cmp(a),
            _ => Ordering::Equal,
        }
    }

    /// Samples a fresh partition from `rng` and fits cell means of `ys`.
    pub fn fit(
        &self,
        xs: &Rows<'_>,
        ys: &[f64],
        clip_bound: f64,
        rng: &mut RngStream,
    ) -> Result<BaseLearner> {
        self.fit_with_fitted(xs, ys, clip_bound, rng).map(|(m, _)| m)
    }

    pub(crate) fn fit_with_fitted(
        &self,
        xs: &Rows<'_>,
        ys: &[f64],
        clip_bound: f64,
        rng: &mut RngStream,
    ) -> Result<(BaseLearner, Vec<f64>)> {
        match *self {
            BaseSpec::Histogram { bin_width } => {
                let t = sample_transform(bin_width, xs.dim(), rng)?;
                let (m, fitted) = histogram::fit_ht_with_fitted(xs, ys, t, clip_bound)?;
                Ok((BaseLearner::Histogram(m), fitted))
            }
            BaseSpec::Binary { depth, split_rule } => {
                let p = sample_binary_partition(xs.dim(), depth, split_rule, rng)?;
                let (m, fitted) = binary::fit_binary_with_fitted(xs, ys, p, clip_bound)?;
                Ok((BaseLearner::Binary(m), fitted))
            }
        }
    }
}

impl fmt::Display for BaseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseSpec::Histogram { bin_width } => write!(f, "h={bin_width}"),
            BaseSpec::Binary { depth, .. } => write!(f, "p={depth}"),
        }
    }
}

/// A fitted base learner of either family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "lowercase")]
pub enum BaseLearner {
    Histogram(HtRegressor),
    Binary(BinaryHistRegressor),
}

impl BaseLearner {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            BaseLearner::Histogram(m) => m.predict(x),
            BaseLearner::Binary(m) => m.predict(x),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseLearner::Histogram(m) => m.transform().dim(),
            BaseLearner::Binary(m) => m.partition().dim(),
        }
    }

    pub fn clip_bound(&self) -> f64 {
        match self {
            BaseLearner::Histogram(m) => m.clip_bound(),
            BaseLearner::Binary(m) => m.clip_bound(),
        }
    }
}
