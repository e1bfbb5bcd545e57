//! Parallel ensembles (PEHT): the plain average of independently drawn
//! piecewise-constant regressors, each fit on the full sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{BaseLearner, BaseSpec};
use crate::points::{CompensatedSum, Rows};
use crate::random::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PehtModel {
    learners: Vec<BaseLearner>,
    /// One entry per learner.
    specs: Vec<BaseSpec>,
    clip_bound: f64,
}

impl PehtModel {
    pub fn learners(&self) -> &[BaseLearner] {
        &self.learners
    }

    pub fn specs(&self) -> &[BaseSpec] {
        &self.specs
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = CompensatedSum::default();
        for l in &self.learners {
            acc.add(l.predict(x));
        }
        // the mean of clipped values can round just past the bound
        (acc.value() / self.learners.len() as f64).clamp(-self.clip_bound, self.clip_bound)
    }

    /// The ensemble of the first `n` learners.
    pub fn prefix(&self, n: usize) -> PehtModel {
        let n = n.clamp(1, self.learners.len());
        PehtModel {
            learners: self.learners[..n].to_vec(),
            specs: self.specs[..n].to_vec(),
            clip_bound: self.clip_bound,
        }
    }

    pub fn predict_rows(&self, xs: &Rows<'_>) -> Vec<f64> {
        let rows: Vec<&[f64]> = xs.iter().collect();
        rows.par_iter().map(|x| self.predict(x)).collect()
    }
}

/// Fits `num_learners` regressors of one spec. Learner `t` draws its
/// partition from `rng.split(t)`.
pub fn fit_peht(
    xs: &Rows<'_>,
    ys: &[f64],
    base: BaseSpec,
    num_learners: usize,
    clip_bound: f64,
    rng: &RngStream,
) -> Result<PehtModel> {
    fit_peht_mixed(xs, ys, &[(base, num_learners)], clip_bound, rng)
}

/// Fits an ensemble mixing several specs; `counts` lists `(spec, T_l)` and the
/// ensemble has `Σ T_l` learners.
pub fn fit_peht_mixed(
    xs: &Rows<'_>,
    ys: &[f64],
    counts: &[(BaseSpec, usize)],
    clip_bound: f64,
    rng: &RngStream,
) -> Result<PehtModel> {
    let specs: Vec<BaseSpec> = counts
        .iter()
        .flat_map(|&(s, n)| std::iter::repeat_n(s, n))
        .collect();
    if specs.is_empty() {
        return Err(Error::InvalidParameter(
            "an ensemble needs at least one learner".into(),
        ));
    }
    for s in &specs {
        s.validate()?;
    }
    let learners = specs
        .par_iter()
        .enumerate()
        .map(|(t, s)| s.fit(xs, ys, clip_bound, &mut rng.split(t as u64)))
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(learners.len(), counts.iter().map(|c| c.1).sum::<usize>());
    Ok(PehtModel {
        learners,
        specs,
        clip_bound,
    })
}
