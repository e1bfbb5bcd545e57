//! Gradient boosting of random-partition regressors under squared loss.
//!
//! Each iteration draws a fresh random partition, fits cell means of the
//! current residuals and subtracts `ρ` times the fit. A candidate that raises
//! the training MSE is discarded. Under the default [`RejectPolicy::Retry`] the
//! same slot is refilled with a new random partition, at most `max_rejects`
//! times; after that the fit stops early and is flagged as truncated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{check_clip_bound, BaseLearner, BaseSpec};
use crate::points::{CompensatedSum, Rows};
use crate::random::RngStream;

pub const DEFAULT_MAX_REJECTS: usize = 10;

/// What to do with a slot whose candidate learner increased the training MSE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectPolicy {
    /// Redraw a partition for the same slot.
    #[default]
    Retry,
    /// Leave the slot empty and move on.
    Skip,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhtParams {
    pub base: BaseSpec,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub clip_bound: f64,
    pub max_rejects: usize,
    pub reject_policy: RejectPolicy,
}

impl BhtParams {
    pub fn new(base: BaseSpec, learning_rate: f64, max_iters: usize, clip_bound: f64) -> Self {
        Self {
            base,
            learning_rate,
            max_iters,
            clip_bound,
            max_rejects: DEFAULT_MAX_REJECTS,
            reject_policy: RejectPolicy::Retry,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "number of iterations must be at least 1".into(),
            ));
        }
        check_clip_bound(self.clip_bound)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhtModel {
    learners: Vec<BaseLearner>,
    base: BaseSpec,
    learning_rate: f64,
    clip_bound: f64,
    initial_mse: f64,
    mse_trace: Vec<f64>,
    truncated: bool,
}

impl BhtModel {
    /// Model with no learners; predicts 0 everywhere.
    pub fn empty(base: BaseSpec, learning_rate: f64, clip_bound: f64) -> Self {
        Self {
            learners: Vec::new(),
            base,
            learning_rate,
            clip_bound,
            initial_mse: 0.0,
            mse_trace: Vec::new(),
            truncated: false,
        }
    }

    pub fn learners(&self) -> &[BaseLearner] {
        &self.learners
    }

    pub fn base(&self) -> BaseSpec {
        self.base
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    /// Mean of the squared targets before any learner was added.
    pub fn initial_mse(&self) -> f64 {
        self.initial_mse
    }

    /// Training MSE after each accepted learner.
    pub fn mse_trace(&self) -> &[f64] {
        &self.mse_trace
    }

    /// True when a slot ran out of retries before `max_iters` was reached.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = CompensatedSum::default();
        for l in &self.learners {
            acc.add(l.predict(x));
        }
        self.learning_rate * acc.value()
    }

    /// The model made of the first `n` learners.
    pub fn prefix(&self, n: usize) -> BhtModel {
        let n = n.min(self.learners.len());
        BhtModel {
            learners: self.learners[..n].to_vec(),
            mse_trace: self.mse_trace[..n].to_vec(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> BhtModel {
        BhtModel {
            learners: Vec::new(),
            base: self.base,
            learning_rate: self.learning_rate,
            clip_bound: self.clip_bound,
            initial_mse: self.initial_mse,
            mse_trace: Vec::new(),
            truncated: self.truncated,
        }
    }

    /// Builds a model from parts, for tests and deserialization helpers.
    pub fn from_learners(learners: Vec<BaseLearner>, base: BaseSpec, learning_rate: f64) -> Self {
        let clip_bound = learners
            .iter()
            .map(BaseLearner::clip_bound)
            .fold(0.0, f64::max);
        Self {
            learners,
            ..Self::empty(base, learning_rate, clip_bound)
        }
    }
}

#[derive(Clone, Debug)]
pub struct BhtFit {
    pub model: BhtModel,
    /// Final residuals `y - f(x)` at the training rows.
    pub residuals: Vec<f64>,
}

/// Predictions on an evaluation set after a given number of iterations.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub iterations: usize,
    /// Learners accepted within those iterations (the model prefix length).
    pub learners: usize,
    pub predictions: Vec<f64>,
}

pub fn fit_bht(xs: &Rows<'_>, ys: &[f64], params: &BhtParams, rng: &mut RngStream) -> Result<BhtFit> {
    let empty = Rows::new_empty(xs.dim());
    fit_bht_tracked(xs, ys, params, rng, &empty, &[]).map(|(f, _)| f)
}

/// [`fit_bht`] that also records predictions on `eval` after each iteration
/// count in `checkpoints`. Counts above `max_iters` are ignored.
pub fn fit_bht_tracked(
    xs: &Rows<'_>,
    ys: &[f64],
    params: &BhtParams,
    rng: &mut RngStream,
    eval: &Rows<'_>,
    checkpoints: &[usize],
) -> Result<(BhtFit, Vec<Checkpoint>)> {
    params.validate()?;
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
    if !eval.is_empty() && eval.dim() != xs.dim() {
        return Err(Error::InvalidInput(
            "evaluation rows have a different dimension".into(),
        ));
    }
    let rho = params.learning_rate;
    let mut residuals = ys.to_vec();
    let mut eval_sum = vec![CompensatedSum::default(); eval.len()];
    let mut wanted: Vec<usize> = checkpoints
        .iter()
        .copied()
        .filter(|&t| t <= params.max_iters)
        .collect();
    wanted.sort_unstable();
    wanted.dedup();
    let mut snaps = Vec::with_capacity(wanted.len());
    let mut next_snap = 0;

    let initial_mse = mean_square(&residuals);
    let mut model = BhtModel {
        initial_mse,
        ..BhtModel::empty(params.base, rho, params.clip_bound)
    };
    let mut prev = initial_mse;

    let mut take_snapshots = |iteration: usize, learners: usize, eval_sum: &[CompensatedSum]| {
        while next_snap < wanted.len() && wanted[next_snap] <= iteration {
            snaps.push(Checkpoint {
                iterations: wanted[next_snap],
                learners,
                predictions: eval_sum.iter().map(|s| rho * s.value()).collect(),
            });
            next_snap += 1;
        }
    };
    take_snapshots(0, 0, &eval_sum);

    let mut iteration = 0;
    let mut rejects = 0;
    while iteration < params.max_iters {
        let (learner, fitted) = params
            .base
            .fit_with_fitted(xs, &residuals, params.clip_bound, rng)?;
        let candidate: Vec<f64> = residuals
            .iter()
            .zip(&fitted)
            .map(|(u, f)| u - rho * f)
            .collect();
        let mse = mean_square(&candidate);
        if mse > prev {
            rejects += 1;
            match params.reject_policy {
                RejectPolicy::Retry if rejects > params.max_rejects => {
                    model.truncated = true;
                    break;
                }
                RejectPolicy::Retry => continue,
                RejectPolicy::Skip => {
                    rejects = 0;
                    iteration += 1;
                    take_snapshots(iteration, model.learners.len(), &eval_sum);
                    continue;
                }
            }
        }
        for (s, x) in eval_sum.iter_mut().zip(eval.iter()) {
            s.add(learner.predict(x));
        }
        residuals = candidate;
        prev = mse;
        rejects = 0;
        model.learners.push(learner);
        model.mse_trace.push(mse);
        iteration += 1;
        take_snapshots(iteration, model.learners.len(), &eval_sum);
    }
    // truncated runs: remaining checkpoints see the final model
    take_snapshots(usize::MAX, model.learners.len(), &eval_sum);
    Ok((BhtFit { model, residuals }, snaps))
}

fn mean_square(v: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for x in v {
        acc.add(x * x);
    }
    acc.value() / v.len() as f64
}
