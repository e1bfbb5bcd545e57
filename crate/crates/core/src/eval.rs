//! Metrics, grid search and the repeated-experiment runner.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{
    fit_abht, stage_map, AbhtConfig, AbhtModel, StopReason, RegionSpec, DEFAULT_MIN_VAL_POINTS, DEFAULT_STAGE_SHRINKAGE,
    DEFAULT_WIDTH_TOLERANCE,
};
use crate::boosting::{fit_bht_tracked, BhtModel, BhtParams, RejectPolicy, DEFAULT_MAX_REJECTS};
use crate::data::{
    format_f64, gen_case_a, gen_case_b, gen_tabular, load_csv, split, LabeledDataset, ScaleParams,
    SplitSpec, DEFAULT_NOISE_SD,
};
use crate::error::{Error, Result};
use crate::learners::{default_clip_bound, BaseSpec, SplitRule};
use crate::parallel::{fit_peht, PehtModel};
use crate::points::{CompensatedSum, Rows};
use crate::random::RngStream;

/// Relative tolerance under which two validation errors count as tied.
const TIE_TOL: f64 = 1e-12;

pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = CompensatedSum::default();
    for (p, t) in preds.iter().zip(targets) {
        acc.add((p - t) * (p - t));
    }
    Ok(acc.value() / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region: u8,
    pub name: String,
    pub mse: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMseReport {
    pub overall_mse: f64,
    pub count: usize,
    /// Regions with at least one point, by label.
    pub per_region: Vec<RegionScore>,
}

impl RegionMseReport {
    /// Count-weighted mean of the per-region MSEs.
    pub fn weighted_mean(&self) -> f64 {
        let total: usize = self.per_region.iter().map(|r| r.count).sum();
        let mut acc = CompensatedSum::default();
        for r in &self.per_region {
            acc.add(r.mse * r.count as f64);
        }
        acc.value() / total as f64
    }
}

pub fn region_mse(
    preds: &[f64],
    targets: &[f64],
    labels: Option<&[u8]>,
    names: &[String],
) -> Result<RegionMseReport> {
    let overall_mse = mse(preds, targets)?;
    let mut per_region = Vec::new();
    if let Some(labels) = labels {
        if labels.len() != preds.len() {
            return Err(Error::InvalidInput("one label per prediction is required".into()));
        }
        let k = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        let mut sums = vec![CompensatedSum::default(); k];
        let mut counts = vec![0usize; k];
        for ((p, t), &l) in preds.iter().zip(targets).zip(labels) {
            sums[l as usize].add((p - t) * (p - t));
            counts[l as usize] += 1;
        }
        for l in 0..k {
            if counts[l] > 0 {
                per_region.push(RegionScore {
                    region: l as u8,
                    name: names.get(l).cloned().unwrap_or_else(|| l.to_string()),
                    mse: sums[l].value() / counts[l] as f64,
                    count: counts[l],
                });
            }
        }
    }
    Ok(RegionMseReport {
        overall_mse,
        count: preds.len(),
        per_region,
    })
}

/// One point of a hyperparameter grid with its validation error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub base: BaseSpec,
    pub iters: usize,
    /// Learning rate; 0 for methods without one.
    pub rate: f64,
    pub val_mse: f64,
}

/// Orders candidates best first: lower validation MSE, then coarser spec,
/// then fewer iterations, then smaller learning rate.
pub fn candidate_cmp(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    let tie = a.val_mse == b.val_mse
        || (a.val_mse - b.val_mse).abs() <= TIE_TOL * a.val_mse.abs().max(b.val_mse.abs());
    if !tie {
        return a.val_mse.total_cmp(&b.val_mse);
    }
    b.base
        .coarseness_cmp(&a.base)
        .then(a.iters.cmp(&b.iters))
        .then(a.rate.total_cmp(&b.rate))
}

/// Index of the best candidate, or `None` for an empty slice.
pub fn select_best(cands: &[ScoredCandidate]) -> Option<usize> {
    (0..cands.len()).min_by(|&i, &j| candidate_cmp(&cands[i], &cands[j]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Peht,
    Bht,
    Abht,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Peht => "peht",
            Method::Bht => "bht",
            Method::Abht => "abht",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_lowercase().as_str() {
            "peht" => Some(Method::Peht),
            "bht" => Some(Method::Bht),
            "abht" => Some(Method::Abht),
            _ => None,
        }
    }
}

/// Hyperparameter grids shared by all methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub bases: Vec<BaseSpec>,
    pub learning_rates: Vec<f64>,
    /// Boosting iteration counts.
    pub iterations: Vec<usize>,
    /// Ensemble sizes searched for PEHT.
    pub ensemble_sizes: Vec<usize>,
}

impl Grids {
    pub fn validate(&self) -> Result<()> {
        if self.bases.is_empty()
            || self.learning_rates.is_empty()
            || self.iterations.is_empty()
            || self.ensemble_sizes.is_empty()
        {
            return Err(Error::InvalidParameter("parameter grids must be nonempty".into()));
        }
        if self.iterations.contains(&0) || self.ensemble_sizes.contains(&0) {
            return Err(Error::InvalidParameter("grid counts must be at least 1".into()));
        }
        for b in &self.bases {
            b.validate()?;
        }
        for &r in &self.learning_rates {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "learning rate must lie in (0, 1], got {r}"
                )));
            }
        }
        Ok(())
    }

    fn t_max(&self) -> usize {
        *self.iterations.iter().max().unwrap()
    }
}

/// ABHT settings beyond the shared grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbhtSettings {
    pub region: RegionSpec,
    pub max_stages: usize,
    pub min_val_points: usize,
    pub stage_shrinkage: Option<f64>,
    pub width_tolerance: f64,
}

impl Default for AbhtSettings {
    fn default() -> Self {
        Self {
            region: RegionSpec::Grid { initial_width: 0.2 },
            max_stages: usize::MAX,
            min_val_points: DEFAULT_MIN_VAL_POINTS,
            stage_shrinkage: Some(DEFAULT_STAGE_SHRINKAGE),
            width_tolerance: DEFAULT_WIDTH_TOLERANCE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticCase {
    A,
    B,
    Tabular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Fresh draws for every repetition.
    Synthetic {
        case: SyntheticCase,
        n_train: usize,
        n_val: usize,
        n_test: usize,
        noise_sd: f64,
    },
    /// One file, reshuffled into train/validation/test for every repetition;
    /// features min-max scaled and the target standardized on the training part.
    Csv {
        path: PathBuf,
        target: String,
        fractions: (f64, f64, f64),
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub grids: Grids,
    pub abht: AbhtSettings,
    pub data: DataSource,
    pub repetitions: usize,
    pub seed: u64,
    /// Clip bound; `None` uses the largest |y| in each training set.
    pub clip_bound: Option<f64>,
}

impl ExperimentConfig {
    /// The grids used in the synthetic Case A study.
    pub fn case_a(n_train: usize, n_val: usize, n_test: usize, repetitions: usize, seed: u64) -> Self {
        Self {
            methods: vec![Method::Peht, Method::Bht, Method::Abht],
            grids: Grids {
                bases: [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1]
                    .iter()
                    .map(|&h| BaseSpec::histogram(h))
                    .collect(),
                learning_rates: vec![0.01, 0.02, 0.05, 0.1, 0.2],
                iterations: vec![20, 50, 100, 200],
                ensemble_sizes: vec![20, 50, 100, 200],
            },
            abht: AbhtSettings::default(),
            data: DataSource::Synthetic {
                case: SyntheticCase::A,
                n_train,
                n_val,
                n_test,
                noise_sd: DEFAULT_NOISE_SD,
            },
            repetitions,
            seed,
            clip_bound: None,
        }
    }

    /// The grids used in the synthetic Case B study.
    pub fn case_b(n_train: usize, n_val: usize, n_test: usize, repetitions: usize, seed: u64) -> Self {
        let mut c = Self::case_a(n_train, n_val, n_test, repetitions, seed);
        c.grids.bases = [0.02, 0.05, 0.1].iter().map(|&h| BaseSpec::histogram(h)).collect();
        c.data = DataSource::Synthetic {
            case: SyntheticCase::B,
            n_train,
            n_val,
            n_test,
            noise_sd: DEFAULT_NOISE_SD,
        };
        c
    }

    /// Binary-histogram grids on a CSV file split 40/40/20.
    pub fn tabular(path: PathBuf, target: &str, repetitions: usize, seed: u64) -> Self {
        let mut c = Self::case_a(0, 0, 0, repetitions, seed);
        c.grids.bases = [4, 6, 8].iter().map(|&k| BaseSpec::binary(k)).collect();
        c.abht.region = RegionSpec::Tree {
            initial_depth: 2,
            split_rule: SplitRule::Uniform,
        };
        c.data = DataSource::Csv {
            path,
            target: target.to_string(),
            fractions: (0.4, 0.4, 0.2),
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no methods selected".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidParameter("repetitions must be at least 1".into()));
        }
        self.grids.validate()?;
        self.abht_config().validate()?;
        match &self.data {
            DataSource::Synthetic {
                n_train,
                n_val,
                n_test,
                noise_sd,
                ..
            } => {
                if *n_train == 0 || *n_test == 0 {
                    return Err(Error::InvalidParameter(
                        "training and test sizes must be positive".into(),
                    ));
                }
                let _ = n_val;
                if !(*noise_sd >= 0.0) {
                    return Err(Error::InvalidParameter("noise sd must be non-negative".into()));
                }
            }
            DataSource::Csv { fractions, .. } => {
                SplitSpec::new(fractions.0, fractions.1, fractions.2, 0)?;
            }
        }
        Ok(())
    }

    pub fn abht_config(&self) -> AbhtConfig {
        AbhtConfig {
            bases: self.grids.bases.clone(),
            learning_rates: self.grids.learning_rates.clone(),
            iterations: self.grids.iterations.clone(),
            region: self.abht.region,
            max_stages: self.abht.max_stages,
            min_val_points: self.abht.min_val_points,
            clip_bound: self.clip_bound,
            stage_shrinkage: self.abht.stage_shrinkage,
            width_tolerance: self.abht.width_tolerance,
            max_rejects: DEFAULT_MAX_REJECTS,
            reject_policy: RejectPolicy::Retry,
        }
    }
}

/// A fitted model of any method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "model", rename_all = "lowercase")]
pub enum FittedModel {
    Peht(PehtModel),
    Bht(BhtModel),
    Abht(AbhtModel),
}

impl FittedModel {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::Peht(_) => Method::Peht,
            FittedModel::Bht(_) => Method::Bht,
            FittedModel::Abht(_) => Method::Abht,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FittedModel::Peht(m) => m.learners()[0].dim(),
            FittedModel::Bht(m) => m.learners().first().map_or(0, |l| l.dim()),
            FittedModel::Abht(m) => m.dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Peht(m) => Ok(m.predict(x)),
            FittedModel::Bht(m) => Ok(m.predict(x)),
            FittedModel::Abht(m) => m.predict(x),
        }
    }

    pub fn predict_rows(&self, xs: &Rows<'_>) -> Result<Vec<f64>> {
        match self {
            FittedModel::Peht(m) => Ok(m.predict_rows(xs)),
            FittedModel::Bht(m) => Ok(xs.iter().map(|x| m.predict(x)).collect()),
            FittedModel::Abht(m) => m.predict_rows(xs),
        }
    }
}

/// Result of a grid search: the model and a description of what was chosen.
#[derive(Clone, Debug)]
pub struct Selection {
    pub model: FittedModel,
    pub params: String,
    pub val_mse: f64,
}

fn clip_for(config: &ExperimentConfig, train: &LabeledDataset) -> f64 {
    config.clip_bound.unwrap_or_else(|| default_clip_bound(&train.ys))
}

/// Fits `method` on `train`, choosing hyperparameters on `val`.
pub fn grid_search(
    method: Method,
    train: &LabeledDataset,
    val: &LabeledDataset,
    config: &ExperimentConfig,
    rng: &RngStream,
) -> Result<Selection> {
    config.grids.validate()?;
    if val.is_empty() {
        return Err(Error::InvalidInput("grid search needs validation data".into()));
    }
    let clip = clip_for(config, train);
    let grids = &config.grids;
    let (tx, vx) = (train.rows(), val.rows());
    match method {
        Method::Bht => {
            let jobs: Vec<(usize, f64)> = (0..grids.bases.len())
                .flat_map(|b| grids.learning_rates.iter().map(move |&r| (b, r)))
                .collect();
            let fits = jobs
                .par_iter()
                .map(|&(b, rate)| {
                    let params = BhtParams::new(grids.bases[b], rate, grids.t_max(), clip);
                    let (fit, snaps) = fit_bht_tracked(
                        &tx,
                        &train.ys,
                        &params,
                        &mut rng.split(b as u64),
                        &vx,
                        &grids.iterations,
                    )?;
                    let scored: Vec<(ScoredCandidate, usize)> = snaps
                        .iter()
                        .map(|cp| {
                            let c = ScoredCandidate {
                                base: grids.bases[b],
                                iters: cp.iterations,
                                rate,
                                val_mse: mse(&cp.predictions, &val.ys)?,
                            };
                            Ok((c, cp.learners))
                        })
                        .collect::<Result<_>>()?;
                    Ok((fit.model, scored))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut flat = Vec::new();
            let mut origin = Vec::new();
            for (f, (_, scored)) in fits.iter().enumerate() {
                for (c, learners) in scored {
                    flat.push(*c);
                    origin.push((f, *learners));
                }
            }
            let best = select_best(&flat).unwrap();
            let (f, learners) = origin[best];
            let c = flat[best];
            Ok(Selection {
                model: FittedModel::Bht(fits[f].0.prefix(learners)),
                params: format!("{} rho={} T={}", c.base, c.rate, c.iters),
                val_mse: c.val_mse,
            })
        }
        Method::Peht => {
            let t_max = *grids.ensemble_sizes.iter().max().unwrap();
            let mut sizes = grids.ensemble_sizes.clone();
            sizes.sort_unstable();
            sizes.dedup();
            let fits = (0..grids.bases.len())
                .into_par_iter()
                .map(|b| {
                    let m = fit_peht(&tx, &train.ys, grids.bases[b], t_max, clip, &rng.split(b as u64))?;
                    // running sums over learners give every prefix ensemble
                    let mut sums = vec![CompensatedSum::default(); val.len()];
                    let mut scored = Vec::new();
                    let mut next = 0;
                    for (t, l) in m.learners().iter().enumerate() {
                        for (s, x) in sums.iter_mut().zip(vx.iter()) {
                            s.add(l.predict(x));
                        }
                        if next < sizes.len() && sizes[next] == t + 1 {
                            let preds: Vec<f64> = sums
                                .iter()
                                .map(|s| (s.value() / (t + 1) as f64).clamp(-clip, clip))
                                .collect();
                            scored.push(ScoredCandidate {
                                base: grids.bases[b],
                                iters: t + 1,
                                rate: 0.0,
                                val_mse: mse(&preds, &val.ys)?,
                            });
                            next += 1;
                        }
                    }
                    Ok((m, scored))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut flat = Vec::new();
            let mut origin = Vec::new();
            for (f, (_, scored)) in fits.iter().enumerate() {
                for c in scored {
                    flat.push(*c);
                    origin.push(f);
                }
            }
            let best = select_best(&flat).unwrap();
            let c = flat[best];
            Ok(Selection {
                model: FittedModel::Peht(fits[origin[best]].0.prefix(c.iters)),
                params: format!("{} T={}", c.base, c.iters),
                val_mse: c.val_mse,
            })
        }
        Method::Abht => {
            let m = fit_abht(&tx, &train.ys, &vx, &val.ys, &config.abht_config(), rng)?;
            let params = m
                .stages()
                .iter()
                .map(|s| format!("{} rho={} T={}", s.chosen_base, s.chosen_rate, s.chosen_iters))
                .collect::<Vec<_>>()
                .join("; ");
            let preds = m.predict_rows(&vx)?;
            Ok(Selection {
                val_mse: mse(&preds, &val.ys)?,
                model: FittedModel::Abht(m),
                params,
            })
        }
    }
}

/// Train, validation and test parts for one repetition.
pub fn repetition_data(
    config: &ExperimentConfig,
    rep: usize,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let mut rng = RngStream::new(config.seed, rep as u64).split(0);
    match &config.data {
        DataSource::Synthetic {
            case,
            n_train,
            n_val,
            n_test,
            noise_sd,
        } => {
            let mut draw = |n: usize| -> Result<Option<LabeledDataset>> {
                if n == 0 {
                    return Ok(None);
                }
                Ok(Some(match case {
                    SyntheticCase::A => gen_case_a(n, *noise_sd, &mut rng)?,
                    SyntheticCase::B => gen_case_b(n, *noise_sd, &mut rng)?,
                    SyntheticCase::Tabular => gen_tabular(n, &mut rng)?,
                }))
            };
            let train = draw(*n_train)?.unwrap();
            let val = draw(*n_val)?.unwrap_or_else(|| train.subset(&[]));
            let test = draw(*n_test)?.unwrap();
            if matches!(case, SyntheticCase::Tabular) {
                scale_parts(train, val, test)
            } else {
                Ok((train, val, test))
            }
        }
        DataSource::Csv {
            path,
            target,
            fractions,
        } => {
            let ds = load_csv(path, target)?;
            let spec = SplitSpec::new(fractions.0, fractions.1, fractions.2, rng.next_u64())?;
            let (train, val, test) = split(&ds, &spec)?;
            scale_parts(train, val, test)
        }
    }
}

fn scale_parts(
    train: LabeledDataset,
    val: LabeledDataset,
    test: LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let p = ScaleParams::fit(&train, true)?;
    Ok((p.apply(&train)?, p.apply(&val)?, p.apply(&test)?))
}

/// Outcome of one method on one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub rep: usize,
    pub report: Option<RegionMseReport>,
    pub params: String,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub region: String,
    pub mean: f64,
    pub sd: f64,
    pub mean_count: f64,
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub repetitions: Vec<RepetitionResult>,
    /// `overall` first, then one row per region.
    pub summary: Vec<SummaryRow>,
}

impl MethodReport {
    pub fn row(&self, region: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.region == region)
    }

    pub fn overall(&self) -> &SummaryRow {
        &self.summary[0]
    }

    pub fn failures(&self) -> usize {
        self.repetitions.iter().filter(|r| r.error.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub methods: Vec<MethodReport>,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

fn summarize(reps: &[RepetitionResult]) -> Vec<SummaryRow> {
    let ok: Vec<&RegionMseReport> = reps.iter().filter_map(|r| r.report.as_ref()).collect();
    let mut rows = Vec::new();
    let overall: Vec<f64> = ok.iter().map(|r| r.overall_mse).collect();
    let (mean, sd) = mean_sd(&overall);
    rows.push(SummaryRow {
        region: "overall".into(),
        mean,
        sd,
        mean_count: ok.iter().map(|r| r.count as f64).sum::<f64>() / ok.len().max(1) as f64,
        repetitions: ok.len(),
    });
    let mut names: Vec<(u8, String)> = ok
        .iter()
        .flat_map(|r| r.per_region.iter().map(|s| (s.region, s.name.clone())))
        .collect();
    names.sort();
    names.dedup();
    for (id, name) in names {
        let scores: Vec<&RegionScore> = ok
            .iter()
            .filter_map(|r| r.per_region.iter().find(|s| s.region == id))
            .collect();
        let values: Vec<f64> = scores.iter().map(|s| s.mse).collect();
        let (mean, sd) = mean_sd(&values);
        rows.push(SummaryRow {
            region: name,
            mean,
            sd,
            mean_count: scores.iter().map(|s| s.count as f64).sum::<f64>() / scores.len() as f64,
            repetitions: scores.len(),
        });
    }
    rows
}

/// The stream a method uses on repetition `rep`.
pub fn method_stream(config: &ExperimentConfig, rep: usize, method: Method) -> RngStream {
    RngStream::new(config.seed, rep as u64).split(1 + method as u64)
}

fn run_one(
    method: Method,
    config: &ExperimentConfig,
    rep: usize,
    data: &Result<(LabeledDataset, LabeledDataset, LabeledDataset)>,
) -> RepetitionResult {
    let outcome = (|| -> Result<(RegionMseReport, String)> {
        let (train, val, test) = data.as_ref().map_err(|e| Error::InvalidInput(e.to_string()))?;
        let rng = method_stream(config, rep, method);
        let sel = grid_search(method, train, val, config, &rng)?;
        let preds = sel.model.predict_rows(&test.rows())?;
        let report = region_mse(
            &preds,
            &test.ys,
            test.region_labels.as_deref(),
            &test.region_names,
        )?;
        Ok((report, sel.params))
    })();
    match outcome {
        Ok((report, params)) => RepetitionResult {
            rep,
            report: Some(report),
            params,
            error: None,
        },
        Err(e) => RepetitionResult {
            rep,
            report: None,
            params: String::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Runs every method on `repetitions` independent draws. Repetition `r`
/// draws its data from stream `(seed, r)`, so methods see identical data.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let per_rep: Vec<Vec<RepetitionResult>> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let data = repetition_data(config, rep);
            config
                .methods
                .iter()
                .map(|&m| run_one(m, config, rep, &data))
                .collect()
        })
        .collect();
    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let reps: Vec<RepetitionResult> = per_rep.iter().map(|r| r[k].clone()).collect();
            MethodReport {
                method,
                summary: summarize(&reps),
                repetitions: reps,
            }
        })
        .collect();
    Ok(ExperimentReport { methods })
}

/// Summary CSV: one row per region.
pub fn summary_csv(report: &MethodReport) -> String {
    let mut s = String::from("method,region,mean_mse,sd_mse,mean_count,repetitions,failures\n");
    for r in &report.summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            report.method.name(),
            r.region,
            format_f64(r.mean),
            format_f64(r.sd),
            format_f64(r.mean_count),
            r.repetitions,
            report.failures()
        );
    }
    s
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Per-repetition CSV: one row per repetition and region.
pub fn raw_csv(report: &MethodReport) -> String {
    let mut s = String::from("method,rep,region,mse,count,params,error\n");
    for r in &report.repetitions {
        match &r.report {
            Some(rep) => {
                let _ = writeln!(
                    s,
                    "{},{},overall,{},{},{},",
                    report.method.name(),
                    r.rep,
                    format_f64(rep.overall_mse),
                    rep.count,
                    quote(&r.params)
                );
                for g in &rep.per_region {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},",
                        report.method.name(),
                        r.rep,
                        g.name,
                        format_f64(g.mse),
                        g.count,
                        quote(&r.params)
                    );
                }
            }
            None => {
                let _ = writeln!(
                    s,
                    "{},{},overall,,,,{}",
                    report.method.name(),
                    r.rep,
                    quote(r.error.as_deref().unwrap_or(""))
                );
            }
        }
    }
    s
}

/// Fixed-width text table of mean (sd) per region and method.
pub fn text_table(report: &ExperimentReport) -> String {
    let mut regions: Vec<String> = Vec::new();
    for m in &report.methods {
        for r in &m.summary {
            if !regions.contains(&r.region) {
                regions.push(r.region.clone());
            }
        }
    }
    let mut s = format!("{:<18}", "region");
    for m in &report.methods {
        let _ = write!(s, "{:>26}", m.method.name().to_uppercase());
    }
    s.push('\n');
    for region in &regions {
        let _ = write!(s, "{region:<18}");
        for m in &report.methods {
            match m.row(region) {
                Some(r) => {
                    let _ = write!(s, "{:>26}", format!("{:.3e} ({:.3e})", r.mean, r.sd));
                }
                None => {
                    let _ = write!(s, "{:>26}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

/// One point of a training-size sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub method: Method,
    pub mean: f64,
    pub sd: f64,
}

/// Repeats the experiment with `n_train = n_val = n` for each `n`.
pub fn training_size_sweep(config: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &n in sizes {
        let mut c = config.clone();
        match &mut c.data {
            DataSource::Synthetic { n_train, n_val, .. } => {
                *n_train = n;
                *n_val = n;
            }
            DataSource::Csv { .. } => {
                return Err(Error::InvalidParameter(
                    "training-size sweeps need a synthetic data source".into(),
                ))
            }
        }
        let report = run_experiment(&c)?;
        for m in &report.methods {
            let o = m.overall();
            out.push(SweepPoint {
                n,
                method: m.method,
                mean: o.mean,
                sd: o.sd,
            });
        }
    }
    Ok(out)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("n,method,mean_mse,sd_mse\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.n, p.method.name(), format_f64(p.mean), format_f64(p.sd));
    }
    s
}

/// A box stopped at some stage, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppedBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub reason: StopReason,
}

/// One line of a stage trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: usize,
    pub base: BaseSpec,
    pub rho: f64,
    pub iterations: usize,
    pub shrinkage: f64,
    pub validation_mse: f64,
    pub train_points: usize,
    pub stopped: Vec<StoppedBox>,
    /// Test MSE of the model truncated after this stage.
    pub overall_mse: f64,
    pub region_mse: Vec<RegionScore>,
}

/// Fits ABHT on repetition `rep` and reports each stage: what it chose, the
/// boxes it stopped and the test error of the model cut after it.
pub fn stage_trace(config: &ExperimentConfig, rep: usize) -> Result<(AbhtModel, Vec<StageTrace>)> {
    config.validate()?;
    let (train, val, test) = repetition_data(config, rep)?;
    let rng = method_stream(config, rep, Method::Abht);
    let model = fit_abht(&train.rows(), &train.ys, &val.rows(), &val.ys, &config.abht_config(), &rng)?;
    let map = stage_map(&model);
    let mut out = Vec::with_capacity(model.num_stages());
    for (k, st) in model.stages().iter().enumerate() {
        let preds = test
            .rows()
            .iter()
            .map(|x| model.predict_stages(x, k + 1))
            .collect::<Result<Vec<_>>>()?;
        let r = region_mse(&preds, &test.ys, test.region_labels.as_deref(), &test.region_names)?;
        out.push(StageTrace {
            stage: st.stage,
            base: st.chosen_base,
            rho: st.chosen_rate,
            iterations: st.chosen_iters,
            shrinkage: st.shrinkage,
            validation_mse: st.validation_mse,
            train_points: st.train_points,
            stopped: map
                .iter()
                .filter(|b| b.2 == k)
                .map(|b| StoppedBox {
                    lo: b.0.clone(),
                    hi: b.1.clone(),
                    reason: b.3,
                })
                .collect(),
            overall_mse: r.overall_mse,
            region_mse: r.per_region,
        });
    }
    Ok((model, out))
}
