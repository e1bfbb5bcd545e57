//! Staged adaptive boosting (ABHT).
//!
//! Stage `l` boosts on the residual region `X_l` with every base spec left in
//! the grid and every learning rate, then scores all candidates per cell of
//! the current region partition on validation data. The coarsest per-cell
//! winner fixes the stage resolution; the working region is re-gridded at
//! that resolution, cells that still prefer it are frozen, and the rest carry
//! over to the next stage with a finer grid.
//!
//! The stage models are chained: `c_l = s_l·c_{l-1} + b_l`, where `b_l` is the
//! boosted model of stage `l`, and a point is predicted by `c_l` at the stage
//! that froze it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{fit_bht_tracked, BhtModel, BhtParams, RejectPolicy, DEFAULT_MAX_REJECTS};
use crate::error::{Error, Result};
use crate::learners::{default_clip_bound, sample_binary_partition, BaseSpec, SplitRule};
use crate::points::{CompensatedSum, Rows};
use crate::random::RngStream;
use crate::regions::{initial_partition, CellId, Region, TreeRegion};

pub const DEFAULT_MIN_VAL_POINTS: usize = 10;
pub const DEFAULT_STAGE_SHRINKAGE: f64 = 0.5;
pub const DEFAULT_WIDTH_TOLERANCE: f64 = 0.1;

/// Relative tolerance under which two validation errors count as tied.
const TIE_TOL: f64 = 1e-12;

/// How the domain is cut into cells for region selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegionSpec {
    /// Axis-aligned grid, first stage at width `initial_width`.
    Grid { initial_width: f64 },
    /// Levels of one random binary tree as deep as the deepest base spec.
    Tree { initial_depth: u32, split_rule: SplitRule },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbhtConfig {
    pub bases: Vec<BaseSpec>,
    pub learning_rates: Vec<f64>,
    pub iterations: Vec<usize>,
    pub region: RegionSpec,
    pub max_stages: usize,
    pub min_val_points: usize,
    /// Clip bound of every base learner; `None` uses the largest |y| in training.
    pub clip_bound: Option<f64>,
    /// Weight on the previous stage's model. `None` reuses each candidate's
    /// learning rate.
    pub stage_shrinkage: Option<f64>,
    /// A cell takes the coarsest width whose best validation error is within
    /// this relative margin of the cell's overall best. Zero is a plain argmin.
    pub width_tolerance: f64,
    pub max_rejects: usize,
    pub reject_policy: RejectPolicy,
}

impl AbhtConfig {
    pub fn new(
        bases: Vec<BaseSpec>,
        learning_rates: Vec<f64>,
        iterations: Vec<usize>,
        region: RegionSpec,
    ) -> Self {
        Self {
            bases,
            learning_rates,
            iterations,
            region,
            max_stages: usize::MAX,
            min_val_points: DEFAULT_MIN_VAL_POINTS,
            clip_bound: None,
            stage_shrinkage: Some(DEFAULT_STAGE_SHRINKAGE),
            width_tolerance: DEFAULT_WIDTH_TOLERANCE,
            max_rejects: DEFAULT_MAX_REJECTS,
            reject_policy: RejectPolicy::Retry,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bases.is_empty() || self.learning_rates.is_empty() || self.iterations.is_empty() {
            return Err(Error::InvalidParameter("parameter grids must be nonempty".into()));
        }
        for b in &self.bases {
            b.validate()?;
            let family_ok = matches!(
                (b, &self.region),
                (BaseSpec::Histogram { .. }, RegionSpec::Grid { .. })
                    | (BaseSpec::Binary { .. }, RegionSpec::Tree { .. })
            );
            if !family_ok {
                return Err(Error::InvalidParameter(
                    "base specs and region spec must use the same partition family".into(),
                ));
            }
        }
        for &r in &self.learning_rates {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "learning rate must lie in (0, 1], got {r}"
                )));
            }
        }
        if self.iterations.contains(&0) {
            return Err(Error::InvalidParameter("iteration counts must be at least 1".into()));
        }
        if self.max_stages == 0 {
            return Err(Error::InvalidParameter("max_stages must be at least 1".into()));
        }
        if let Some(s) = self.stage_shrinkage {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidParameter(format!(
                    "stage shrinkage must lie in [0, 1], got {s}"
                )));
            }
        }
        if !(self.width_tolerance >= 0.0 && self.width_tolerance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "width tolerance must be finite and nonnegative, got {}",
                self.width_tolerance
            )));
        }
        if let Some(m) = self.clip_bound {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::InvalidParameter(format!("bad clip bound {m}")));
            }
        }
        match self.region {
            RegionSpec::Grid { initial_width } if !(initial_width > 0.0 && initial_width <= 1.0) => {
                Err(Error::InvalidParameter(format!(
                    "initial region width must lie in (0, 1], got {initial_width}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Why a point's region left the working set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    /// Its cell had fewer validation points than `min_val_points`.
    Sparse,
    /// Its cell still preferred the stage resolution after refinement.
    Selected,
    /// Still working when the stage loop ended.
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRegions {
    /// Cells of the working partition at the start of the stage.
    pub partition: Region,
    /// Cells of `partition` stopped for lack of validation points.
    pub sparse: BTreeSet<CellId>,
    /// Remaining cells re-gridded at the stage resolution.
    pub refined: Region,
    /// Cells of `refined` stopped for lack of validation points.
    pub refined_sparse: BTreeSet<CellId>,
    /// Cells of `refined` that continue to the next stage.
    pub carried: Region,
}

impl StageRegions {
    fn fate(&self, x: &[f64]) -> Option<StopReason> {
        if self.sparse.contains(&self.partition.cell_of(x)) {
            return Some(StopReason::Sparse);
        }
        if self.refined_sparse.contains(&self.refined.cell_of(x)) {
            return Some(StopReason::Sparse);
        }
        if !self.carried.contains(x) {
            return Some(StopReason::Selected);
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub chosen_base: BaseSpec,
    pub chosen_iters: usize,
    pub chosen_rate: f64,
    /// Weight on the previous stage's cumulative model.
    pub shrinkage: f64,
    pub boosted: BhtModel,
    /// Validation MSE of the committed candidate on the cells that chose
    /// the stage resolution.
    pub validation_mse: f64,
    pub train_points: usize,
    pub score_points: usize,
    pub regions: StageRegions,
    /// Best base spec per rich cell of the starting partition.
    pub per_cell_choice: Vec<(CellId, BaseSpec)>,
    /// Best base spec per rich refined cell.
    pub refined_choice: Vec<(CellId, BaseSpec)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbhtModel {
    dim: usize,
    stages: Vec<StageRecord>,
    clip_bound: f64,
    scored_on_training: bool,
}

impl AbhtModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    /// True when no validation data was given and candidates were scored on
    /// the training set.
    pub fn scored_on_training(&self) -> bool {
        self.scored_on_training
    }

    /// Zero-based index of the stage whose model predicts `x`, and why.
    pub fn stage_of(&self, x: &[f64]) -> (usize, StopReason) {
        for (i, st) in self.stages.iter().enumerate() {
            if let Some(reason) = st.regions.fate(x) {
                return (i, reason);
            }
        }
        (self.stages.len() - 1, StopReason::Unresolved)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "expected {} features, got {}",
                self.dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.predict_stages(x, self.stages.len())
    }

    /// Prediction of the model truncated to its first `k` stages.
    pub fn predict_stages(&self, x: &[f64], k: usize) -> Result<f64> {
        self.check_point(x)?;
        if k == 0 {
            return Ok(0.0);
        }
        let last = self.stage_of(x).0.min(k - 1);
        let mut c = 0.0;
        for st in &self.stages[..=last] {
            c = st.shrinkage * c + st.boosted.predict(x);
        }
        Ok(c)
    }

    pub fn predict_rows(&self, xs: &Rows<'_>) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

/// Random stream used for the candidates of `base_index` at `stage`; every
/// learning rate of that base shares it.
pub fn candidate_stream(root: &RngStream, stage: usize, base_index: usize) -> RngStream {
    root.split(stage as u64).split(base_index as u64)
}

struct CandidateFit {
    base_index: usize,
    rate: f64,
    shrinkage: f64,
    model: BhtModel,
    /// (iterations, learners, squared errors at the scoring points)
    snaps: Vec<(usize, usize, Vec<f64>)>,
}

/// A (candidate, checkpoint) pair.
#[derive(Clone, Copy)]
struct Option_ {
    cand: usize,
    snap: usize,
}

fn is_tie(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= TIE_TOL * a.abs().max(b.abs())
}

/// Fits the staged model. The root stream is only split, never advanced.
pub fn fit_abht(
    train_x: &Rows<'_>,
    train_y: &[f64],
    val_x: &Rows<'_>,
    val_y: &[f64],
    config: &AbhtConfig,
    rng: &RngStream,
) -> Result<AbhtModel> {
    config.validate()?;
    if train_x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::InvalidInput("row and target counts differ".into()));
    }
    let d = train_x.dim();
    if !val_x.is_empty() && val_x.dim() != d {
        return Err(Error::InvalidInput(
            "validation rows have a different dimension".into(),
        ));
    }
    for x in train_x.iter().chain(val_x.iter()) {
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
    }

    // coarsest first
    let mut bases = config.bases.clone();
    bases.sort_by(|a, b| b.coarseness_cmp(a));
    bases.dedup_by(|a, b| a.coarseness_cmp(b) == Ordering::Equal);
    let mut iterations = config.iterations.clone();
    iterations.sort_unstable();
    iterations.dedup();
    let t_max = *iterations.last().unwrap();
    let clip = config.clip_bound.unwrap_or_else(|| default_clip_bound(train_y));

    let scored_on_training = val_x.is_empty();
    let (score_x, score_y) = if scored_on_training {
        (train_x, train_y)
    } else {
        (val_x, val_y)
    };

    let mut partition = match config.region {
        RegionSpec::Grid { initial_width } => Region::Grid(initial_partition(d, initial_width)?),
        RegionSpec::Tree {
            initial_depth,
            split_rule,
        } => {
            let depth = bases
                .iter()
                .map(|b| match b {
                    BaseSpec::Binary { depth, .. } => *depth,
                    BaseSpec::Histogram { .. } => 0,
                })
                .max()
                .unwrap();
            let tree = sample_binary_partition(d, depth, split_rule, &mut rng.split(0))?;
            Region::Tree(TreeRegion::full(Arc::new(tree), initial_depth.min(depth))?)
        }
    };

    let mut grid: Vec<usize> = (0..bases.len()).collect();
    let mut c_train = vec![0.0; train_x.len()];
    let mut c_score = vec![0.0; score_x.len()];
    let mut in_train = vec![true; train_x.len()];
    let mut in_score = vec![true; score_x.len()];
    let mut stages: Vec<StageRecord> = Vec::new();

    for stage in 1..=config.max_stages {
        let train_idx: Vec<usize> = (0..train_x.len()).filter(|&i| in_train[i]).collect();
        if train_idx.is_empty() {
            break;
        }
        let score_idx: Vec<usize> = (0..score_x.len()).filter(|&i| in_score[i]).collect();
        let xs_l = train_x.select(&in_train);
        let xs_s = score_x.select(&in_score);

        let jobs: Vec<(usize, f64)> = grid
            .iter()
            .flat_map(|&b| config.learning_rates.iter().map(move |&r| (b, r)))
            .collect();
        let cands: Vec<CandidateFit> = jobs
            .par_iter()
            .map(|&(b, rate)| -> Result<CandidateFit> {
                let s = config.stage_shrinkage.unwrap_or(rate);
                let targets: Vec<f64> = train_idx.iter().map(|&i| train_y[i] - s * c_train[i]).collect();
                let params = BhtParams {
                    base: bases[b],
                    learning_rate: rate,
                    max_iters: t_max,
                    clip_bound: clip,
                    max_rejects: config.max_rejects,
                    reject_policy: config.reject_policy,
                };
                let mut stream = candidate_stream(rng, stage, b);
                let (fit, snaps) = fit_bht_tracked(&xs_l, &targets, &params, &mut stream, &xs_s, &iterations)?;
                let snaps = snaps
                    .into_iter()
                    .map(|cp| {
                        let errs = score_idx
                            .iter()
                            .zip(&cp.predictions)
                            .map(|(&i, p)| {
                                let e = score_y[i] - s * c_score[i] - p;
                                e * e
                            })
                            .collect();
                        (cp.iterations, cp.learners, errs)
                    })
                    .collect();
                Ok(CandidateFit {
                    base_index: b,
                    rate,
                    shrinkage: s,
                    model: fit.model,
                    snaps,
                })
            })
            .collect::<Result<_>>()?;
        let options: Vec<Option_> = cands
            .iter()
            .enumerate()
            .flat_map(|(c, f)| (0..f.snaps.len()).map(move |snap| Option_ { cand: c, snap }))
            .collect();

        // true when option a beats option b at equal or tied error
        let prefer = |a: &Option_, ea: f64, b: &Option_, eb: f64| -> bool {
            if !is_tie(ea, eb) {
                return ea < eb;
            }
            let (ca, cb) = (&cands[a.cand], &cands[b.cand]);
            match bases[ca.base_index].coarseness_cmp(&bases[cb.base_index]) {
                Ordering::Greater => return true,
                Ordering::Less => return false,
                Ordering::Equal => {}
            }
            let (ta, tb) = (ca.snaps[a.snap].0, cb.snaps[b.snap].0);
            if ta != tb {
                return ta < tb;
            }
            ca.rate < cb.rate
        };
        let best_of = |members: &[usize]| -> (Option_, f64) {
            let mut best: Option<(Option_, f64)> = None;
            for o in &options {
                let errs = &cands[o.cand].snaps[o.snap].2;
                let mut acc = CompensatedSum::default();
                for &j in members {
                    acc.add(errs[j]);
                }
                let e = acc.value() / members.len() as f64;
                if best.is_none_or(|(bo, be)| prefer(o, e, &bo, be)) {
                    best = Some((*o, e));
                }
            }
            best.unwrap()
        };
        let base_of = |o: &Option_| bases[cands[o.cand].base_index];
        // coarsest width whose best error is near the cell's best
        let cell_choice = |members: &[usize]| -> BaseSpec {
            let mut per_base: BTreeMap<usize, f64> = BTreeMap::new();
            for o in &options {
                let errs = &cands[o.cand].snaps[o.snap].2;
                let mut acc = CompensatedSum::default();
                for &j in members {
                    acc.add(errs[j]);
                }
                let e = acc.value() / members.len() as f64;
                let slot = per_base.entry(cands[o.cand].base_index).or_insert(f64::INFINITY);
                *slot = slot.min(e);
            }
            let best = per_base.values().copied().fold(f64::INFINITY, f64::min);
            let limit = best * (1.0 + config.width_tolerance);
            // base indices run coarsest first
            per_base
                .iter()
                .find(|(_, &e)| e <= limit || is_tie(e, best))
                .map(|(&b, _)| bases[b])
                .unwrap()
        };

        // per-cell choice on the starting partition
        let mut cell_members: BTreeMap<CellId, Vec<usize>> =
            partition.cells().into_iter().map(|c| (c, Vec::new())).collect();
        for (j, x) in xs_s.iter().enumerate() {
            if let Some(m) = cell_members.get_mut(&partition.cell_of(x)) {
                m.push(j);
            }
        }
        let mut sparse = BTreeSet::new();
        let mut per_cell_choice = Vec::new();
        let mut stage_base: Option<BaseSpec> = None;
        for (cell, members) in &cell_members {
            if members.len() < config.min_val_points.max(1) {
                sparse.insert(cell.clone());
                continue;
            }
            let choice = cell_choice(members);
            per_cell_choice.push((cell.clone(), choice));
            if stage_base.is_none_or(|s| choice.coarseness_cmp(&s) == Ordering::Greater) {
                stage_base = Some(choice);
            }
        }
        let all_points: Vec<usize> = (0..xs_s.len()).collect();
        let stage_base = match stage_base {
            Some(b) => b,
            None if !all_points.is_empty() => base_of(&best_of(&all_points).0),
            None => bases[grid[0]],
        };

        // commit the candidate at the stage resolution that does best on the
        // cells that chose it; the whole region when no cell was rich
        let mut deciding: Vec<usize> = per_cell_choice
            .iter()
            .filter(|(_, b)| b.coarseness_cmp(&stage_base) == Ordering::Equal)
            .flat_map(|(c, _)| cell_members[c].iter().copied())
            .collect();
        deciding.sort_unstable();
        if deciding.is_empty() {
            deciding = all_points.clone();
        }
        let mut committed: Option<(Option_, f64)> = None;
        for o in options
            .iter()
            .filter(|o| base_of(o).coarseness_cmp(&stage_base) == Ordering::Equal)
        {
            let e = if deciding.is_empty() {
                0.0
            } else {
                let errs = &cands[o.cand].snaps[o.snap].2;
                let mut acc = CompensatedSum::default();
                for &j in &deciding {
                    acc.add(errs[j]);
                }
                acc.value() / deciding.len() as f64
            };
            if committed.is_none_or(|(bo, be)| prefer(o, e, &bo, be)) {
                committed = Some((*o, e));
            }
        }
        let (chosen, validation_mse) = committed.unwrap();
        let cand = &cands[chosen.cand];
        let (chosen_iters, n_learners, _) = cand.snaps[chosen.snap];
        let boosted = cand.model.prefix(n_learners);
        let shrinkage = cand.shrinkage;
        let chosen_rate = cand.rate;

        // re-grid the rich cells and re-score
        let refined = partition
            .retain(|c| !sparse.contains(c))
            .refine_to(&stage_base)?;
        let mut refined_members: BTreeMap<CellId, Vec<usize>> =
            refined.cells().into_iter().map(|c| (c, Vec::new())).collect();
        for (j, x) in xs_s.iter().enumerate() {
            if sparse.contains(&partition.cell_of(x)) {
                continue;
            }
            if let Some(m) = refined_members.get_mut(&refined.cell_of(x)) {
                m.push(j);
            }
        }
        let mut refined_sparse = BTreeSet::new();
        let mut refined_choice = Vec::new();
        let mut carry = BTreeSet::new();
        for (cell, members) in &refined_members {
            if members.len() < config.min_val_points.max(1) {
                refined_sparse.insert(cell.clone());
                continue;
            }
            let choice = cell_choice(members);
            refined_choice.push((cell.clone(), choice));
            if choice.coarseness_cmp(&stage_base) == Ordering::Less {
                carry.insert(cell.clone());
            }
        }
        let carried = refined.retain(|c| carry.contains(c));
        let regions = StageRegions {
            partition: partition.clone(),
            sparse,
            refined,
            refined_sparse,
            carried: carried.clone(),
        };

        for &i in &train_idx {
            let x = train_x.row(i);
            c_train[i] = shrinkage * c_train[i] + boosted.predict(x);
            in_train[i] = regions.fate(x).is_none();
        }
        for &i in &score_idx {
            let x = score_x.row(i);
            c_score[i] = shrinkage * c_score[i] + boosted.predict(x);
            in_score[i] = regions.fate(x).is_none();
        }

        stages.push(StageRecord {
            stage,
            chosen_base: stage_base,
            chosen_iters,
            chosen_rate,
            shrinkage,
            boosted,
            validation_mse,
            train_points: train_idx.len(),
            score_points: score_idx.len(),
            regions,
            per_cell_choice,
            refined_choice,
        });

        grid.retain(|&b| bases[b].coarseness_cmp(&stage_base) != Ordering::Greater);
        partition = carried;
        if partition.is_empty() {
            break;
        }
    }

    Ok(AbhtModel {
        dim: d,
        stages,
        clip_bound: clip,
        scored_on_training,
    })
}

/// Maximal boxes of `[0,1]^d` on which the stage assignment is constant, as
/// `(lo, hi, stage, reason)`. Adjacent boxes along the first axis with equal
/// labels are merged, so in one dimension these are the stopped intervals of
/// each stage.
pub fn stage_map(model: &AbhtModel) -> Vec<(Vec<f64>, Vec<f64>, usize, StopReason)> {
    let d = model.dim;
    let mut cuts: Vec<Vec<f64>> = vec![vec![0.0, 1.0]; d];
    for st in &model.stages {
        let r = &st.regions;
        for region in [&r.partition, &r.refined] {
            for cell in region.cells() {
                let (lo, hi) = region.cell_bounds(&cell);
                for k in 0..d {
                    cuts[k].push(lo[k]);
                    cuts[k].push(hi[k]);
                }
            }
        }
    }
    for c in &mut cuts {
        c.retain(|v| (0.0..=1.0).contains(v));
        c.sort_by(f64::total_cmp);
        c.dedup();
    }
    let mut out: Vec<(Vec<f64>, Vec<f64>, usize, StopReason)> = Vec::new();
    let mut idx = vec![0usize; d];
    'cells: loop {
        let lo: Vec<f64> = (0..d).map(|k| cuts[k][idx[k]]).collect();
        let hi: Vec<f64> = (0..d).map(|k| cuts[k][idx[k] + 1]).collect();
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let (stage, reason) = model.stage_of(&mid);
        let merged = match out.last_mut() {
            Some(prev)
                if idx[0] > 0
                    && prev.2 == stage
                    && prev.3 == reason
                    && prev.1[0] == lo[0]
                    && prev.0[1..] == lo[1..]
                    && prev.1[1..] == hi[1..] =>
            {
                prev.1[0] = hi[0];
                true
            }
            _ => false,
        };
        if !merged {
            out.push((lo, hi, stage, reason));
        }
        for k in 0..d {
            idx[k] += 1;
            if idx[k] + 1 < cuts[k].len() {
                continue 'cells;
            }
            idx[k] = 0;
        }
        break;
    }
    out
}
