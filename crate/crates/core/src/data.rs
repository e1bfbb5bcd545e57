//! Datasets: synthetic generators, CSV input/output, scaling and splits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Rows;
use crate::random::RngStream;

/// Name of the optional label column in CSV files.
pub const REGION_COLUMN: &str = "region";
pub const TARGET_COLUMN: &str = "y";

pub const DEFAULT_NOISE_SD: f64 = 0.01;

/// Stream id used to shuffle rows in [`split`].
const SPLIT_STREAM: u64 = 0x5917;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub xs: Array2<f64>,
    pub ys: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Ground-truth region of each row, indexing `region_names`.
    pub region_labels: Option<Vec<u8>>,
    pub region_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(xs: Array2<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.nrows() != ys.len() {
            return Err(Error::InvalidInput(format!(
                "{} rows but {} targets",
                xs.nrows(),
                ys.len()
            )));
        }
        let feature_names = (1..=xs.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            xs,
            ys,
            feature_names,
            region_labels: None,
            region_names: Vec::new(),
        })
    }

    pub fn with_regions(mut self, labels: Vec<u8>, names: Vec<String>) -> Result<Self> {
        if labels.len() != self.ys.len() {
            return Err(Error::InvalidInput("one region label per row is required".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= names.len()) {
            return Err(Error::InvalidInput(format!(
                "region label {bad} has no entry in a table of {}",
                names.len()
            )));
        }
        self.region_labels = Some(labels);
        self.region_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }

    pub fn rows(&self) -> Rows<'_> {
        Rows::new(&self.xs)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            xs: self.xs.select(Axis(0), indices),
            ys: indices.iter().map(|&i| self.ys[i]).collect(),
            feature_names: self.feature_names.clone(),
            region_labels: self
                .region_labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            region_names: self.region_names.clone(),
        }
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn sawtooth(t: f64) -> f64 {
    // (-1)^(floor(t) + 1)
    if (t.floor() as i64).rem_euclid(2) == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Noiseless Case A target on `[0, 1]`.
pub fn case_a_target(x: f64) -> f64 {
    let f1 = |x: f64| 0.05 * sawtooth(x / 0.01) + 0.05;
    let f2 = |x: f64| 3.0 * x.cbrt();
    let f3 = |x: f64| x;
    if x <= 0.125 {
        f1(x)
    } else if x <= 0.5 {
        f2(x) + f1(0.125) - f2(0.125)
    } else {
        -f3(x) + f2(0.5) - f2(0.125) + f3(0.5)
    }
}

pub fn case_a_region(x: f64) -> u8 {
    if x <= 0.125 {
        0
    } else if x <= 0.5 {
        1
    } else {
        2
    }
}

pub fn case_a_region_names() -> Vec<String> {
    names(&["[0,1/8)", "[1/8,1/2)", "[1/2,1]"])
}

/// Noiseless Case B target on `[0, 1]^2`.
pub fn case_b_target(x1: f64, x2: f64) -> f64 {
    let third = 1.0 / 3.0;
    match (x1 <= third, x2 <= third) {
        (true, true) => {
            let h = 0.05 * sawtooth((x1 + x2) / 0.1) + 0.45;
            h + (x1 + x2) / 3.0
        }
        (false, false) => (x1 + x2) / 6.0 + 0.6,
        _ => (x1.cbrt() + x2.cbrt()) / 2.0,
    }
}

pub fn case_b_region(x1: f64, x2: f64) -> u8 {
    let third = 1.0 / 3.0;
    match (x1 <= third, x2 <= third) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

pub fn case_b_region_names() -> Vec<String> {
    names(&[
        "[0,1/3]x[0,1/3]",
        "[0,1/3]x(1/3,1]",
        "(1/3,1]x[0,1/3]",
        "(1/3,1]x(1/3,1]",
    ])
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sd must be non-negative, got {sd}")));
    }
    Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    Ok(())
}

/// `n` draws of Case A: `x ~ U[0,1]`, `y = f(x) + N(0, noise_sd²)`.
pub fn gen_case_a(n: usize, noise_sd: f64, rng: &mut RngStream) -> Result<LabeledDataset> {
    check_n(n)?;
    let noise = normal(noise_sd)?;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        xs.push(x);
        ys.push(case_a_target(x) + noise.sample(rng));
        labels.push(case_a_region(x));
    }
    LabeledDataset::new(Array2::from_shape_vec((n, 1), xs).unwrap(), ys)?
        .with_regions(labels, case_a_region_names())
}

/// `n` draws of Case B on the unit square.
pub fn gen_case_b(n: usize, noise_sd: f64, rng: &mut RngStream) -> Result<LabeledDataset> {
    check_n(n)?;
    let noise = normal(noise_sd)?;
    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (x1, x2): (f64, f64) = (rng.random(), rng.random());
        xs.extend([x1, x2]);
        ys.push(case_b_target(x1, x2) + noise.sample(rng));
        labels.push(case_b_region(x1, x2));
    }
    LabeledDataset::new(Array2::from_shape_vec((n, 2), xs).unwrap(), ys)?
        .with_regions(labels, case_b_region_names())
}

/// Offsets and scales giving the raw columns of the tabular generator
/// different units.
const TABULAR_COLUMNS: [(f64, f64); 8] = [
    (0.0, 1.0),
    (-5.0, 10.0),
    (100.0, 250.0),
    (0.0, 0.01),
    (3.0, 2.0),
    (-1000.0, 5000.0),
    (0.5, 0.1),
    (20.0, 40.0),
];

/// Eight-feature tabular data: an additive-plus-interaction signal in the
/// first five features, three pure-noise features, raw columns on mixed
/// scales, unit Gaussian noise.
pub fn gen_tabular(n: usize, rng: &mut RngStream) -> Result<LabeledDataset> {
    check_n(n)?;
    let noise = normal(1.0)?;
    let d = TABULAR_COLUMNS.len();
    let mut xs = Vec::with_capacity(d * n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let u: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let signal = 10.0 * (std::f64::consts::PI * u[0] * u[1]).sin()
            + 20.0 * (u[2] - 0.5).powi(2)
            + 10.0 * u[3]
            + 5.0 * u[4];
        ys.push(signal + noise.sample(rng));
        xs.extend(u.iter().zip(&TABULAR_COLUMNS).map(|(v, (a, b))| a + b * v));
    }
    let mut ds = LabeledDataset::new(Array2::from_shape_vec((n, d), xs).unwrap(), ys)?;
    ds.feature_names = (1..=d).map(|j| format!("f{j}")).collect();
    Ok(ds)
}

/// Reads a headed CSV file. `target_column` holds the response; a column
/// named [`REGION_COLUMN`] is read as integer region labels; every other
/// column is a feature.
pub fn load_csv(path: &Path, target_column: &str) -> Result<LabeledDataset> {
    read_csv(path, target_column, true).map(|(ds, _)| ds)
}

/// Like [`load_csv`], but a missing target column is allowed: the targets
/// are then zero and the flag is false.
pub fn load_features(path: &Path, target_column: &str) -> Result<(LabeledDataset, bool)> {
    read_csv(path, target_column, false)
}

fn read_csv(path: &Path, target_column: &str, require_target: bool) -> Result<(LabeledDataset, bool)> {
    let shown = path.to_path_buf();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let target = header.iter().position(|h| h == target_column);
    if target.is_none() && require_target {
        return Err(parse_err(1, format!("no column named {target_column:?}")));
    }
    let region = header
        .iter()
        .position(|h| h == REGION_COLUMN)
        .filter(|&r| Some(r) != target);
    let features: Vec<usize> = (0..header.len())
        .filter(|&j| Some(j) != target && Some(j) != region)
        .collect();
    if features.is_empty() {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let num = |j: usize| -> Result<f64> {
            record[j].parse::<f64>().map_err(|_| {
                parse_err(line, format!("column {:?}: not a number: {:?}", header[j], &record[j]))
            })
        };
        for &j in &features {
            xs.push(num(j)?);
        }
        ys.push(match target {
            Some(t) => num(t)?,
            None => 0.0,
        });
        if let Some(r) = region {
            let v = record[r].parse::<u8>().map_err(|_| {
                parse_err(line, format!("region label {:?} is not a small integer", &record[r]))
            })?;
            labels.push(v);
        }
    }
    if ys.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ys.len();
    let mut ds = LabeledDataset::new(Array2::from_shape_vec((n, features.len()), xs).unwrap(), ys)?;
    ds.feature_names = features.iter().map(|&j| header[j].clone()).collect();
    if region.is_some() {
        let k = labels.iter().copied().max().unwrap_or(0) as usize + 1;
        ds = ds.with_regions(labels, (0..k).map(|i| i.to_string()).collect())?;
    }
    Ok((ds, target.is_some()))
}

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(ds: &LabeledDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = ds.feature_names.clone();
    header.push(TARGET_COLUMN.into());
    if ds.region_labels.is_some() {
        header.push(REGION_COLUMN.into());
    }
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.xs.row(i).iter().map(|&v| format_f64(v)).collect();
        rec.push(format_f64(ds.ys[i]));
        if let Some(l) = &ds.region_labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    write_csv(ds, BufWriter::new(File::create(path)?))
}

/// Per-feature min-max scaling, optionally with a z-scored target, fit on
/// one dataset and applied to others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    /// `(mean, sd)` of the target, when standardizing it.
    pub target: Option<(f64, f64)>,
}

impl ScaleParams {
    pub fn fit(ds: &LabeledDataset, standardize_target: bool) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut mins = vec![f64::INFINITY; ds.dim()];
        let mut maxs = vec![f64::NEG_INFINITY; ds.dim()];
        for row in ds.xs.rows() {
            for (j, &v) in row.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        let target = standardize_target.then(|| {
            let n = ds.len() as f64;
            let mean = ds.ys.iter().sum::<f64>() / n;
            let var = ds.ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 0.0 { sd } else { 1.0 })
        });
        Ok(Self { mins, maxs, target })
    }

    /// Maps features into `[0, 1]`: constant features go to 0.5 and values
    /// outside the fitted range are clamped.
    pub fn apply(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        if ds.dim() != self.mins.len() {
            return Err(Error::InvalidInput(format!(
                "scaler fit on {} features, data has {}",
                self.mins.len(),
                ds.dim()
            )));
        }
        let mut out = ds.clone();
        for mut row in out.xs.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let (lo, hi) = (self.mins[j], self.maxs[j]);
                *v = if hi > lo {
                    ((*v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.5
                };
            }
        }
        if let Some((mean, sd)) = self.target {
            for y in &mut out.ys {
                *y = (*y - mean) / sd;
            }
        }
        Ok(out)
    }
}

impl ScaleParams {
    /// Scales one raw feature row the way `apply` does.
    pub fn scale_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(&v, (&lo, &hi))| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 })
            .collect()
    }

    /// Maps a prediction on the standardized scale back to target units.
    pub fn unscale_target(&self, y: f64) -> f64 {
        match self.target {
            Some((mean, sd)) => mean + sd * y,
            None => y,
        }
    }
}

/// Min-max scales the features of `ds` using its own ranges.
pub fn scale_features(ds: &LabeledDataset) -> Result<(LabeledDataset, ScaleParams)> {
    let params = ScaleParams::fit(ds, false)?;
    Ok((params.apply(ds)?, params))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let s = Self { train, val, test, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        // the test part may be empty
        let signs_ok = self.train > 0.0 && self.val > 0.0 && self.test >= 0.0;
        if !signs_ok || ((f.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split fractions must sum to 1 with positive train and validation parts, got {f:?}"
            )));
        }
        Ok(())
    }

    /// Sizes of the three parts for `n` rows.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let a = ((n as f64 * self.train).round() as usize).min(n);
        let b = ((n as f64 * self.val).round() as usize).min(n - a);
        (a, b, n - a - b)
    }
}

/// Seeded shuffle into disjoint train, validation and test parts.
pub fn split(
    ds: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut RngStream::new(spec.seed, SPLIT_STREAM));
    let (a, b, _) = spec.sizes(ds.len());
    Ok((
        ds.subset(&idx[..a]),
        ds.subset(&idx[a..a + b]),
        ds.subset(&idx[a + b..]),
    ))
}

/// Expected shape of a benchmark dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: &'static str,
    pub rows: usize,
    pub features: usize,
    pub source: &'static str,
    /// Columns dropped before use.
    pub dropped: &'static [&'static str],
}

/// Real benchmark datasets. They are not bundled; users supply the files.
pub const DATASET_MANIFEST: &[ManifestEntry] = &[
    ManifestEntry { name: "EGS", rows: 10000, features: 12, source: "UCI: Electrical Grid Stability Simulated Data", dropped: &[] },
    ManifestEntry { name: "AEP", rows: 19735, features: 27, source: "UCI: Appliances Energy Prediction", dropped: &["date"] },
    ManifestEntry { name: "CAD", rows: 20640, features: 8, source: "LIBSVM: cadata (California housing)", dropped: &[] },
    ManifestEntry { name: "SCD", rows: 21263, features: 81, source: "UCI: Superconductivity Data", dropped: &[] },
    ManifestEntry { name: "HPP", rows: 22784, features: 8, source: "DELVE: census-house, house-price-8H", dropped: &[] },
    ManifestEntry { name: "ONP", rows: 39644, features: 58, source: "UCI: Online News Popularity", dropped: &[] },
    ManifestEntry { name: "PTS", rows: 45730, features: 9, source: "UCI: Physicochemical Properties of Protein Tertiary Structure", dropped: &[] },
];

/// Checks a loaded dataset against its manifest entry, if it has one.
pub fn check_manifest(name: &str, ds: &LabeledDataset) -> Result<()> {
    match DATASET_MANIFEST.iter().find(|e| e.name.eq_ignore_ascii_case(name)) {
        Some(e) if (e.rows, e.features) != (ds.len(), ds.dim()) => Err(Error::InvalidInput(format!(
            "{} should be {}x{}, got {}x{}",
            e.name,
            e.rows,
            e.features,
            ds.len(),
            ds.dim()
        ))),
        _ => Ok(()),
    }
}
