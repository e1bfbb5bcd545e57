use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{MeanAccumulator, Rows};
use crate::transform::{BinKey, HistogramTransform};

use super::{check_clip_bound, clip, EMPTY_CELL_VALUE};

/// Piecewise-constant regressor on the bins of one histogram transform.
///
/// Each nonempty bin stores the clipped mean of the training targets that
/// fell into it; bins without training data predict `default_value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HtRegressor {
    transform: HistogramTransform,
    #[serde(with = "sorted_map")]
    values: FxHashMap<BinKey, f64>,
    clip_bound: f64,
    default_value: f64,
}

impl HtRegressor {
    pub fn transform(&self) -> &HistogramTransform {
        &self.transform
    }

    pub fn values(&self) -> &FxHashMap<BinKey, f64> {
        &self.values
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    pub fn num_cells(&self) -> usize {
        self.values.len()
    }

    /// Prediction at `x`; `x` must have the transform's dimension.
    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.transform.dim());
        let key = self.transform.bin_key_unchecked(x);
        self.values.get(&key).copied().unwrap_or(self.default_value)
    }

    pub fn try_predict(&self, x: &[f64]) -> Result<f64> {
        let key = self.transform.bin_key(x)?;
        Ok(self.values.get(&key).copied().unwrap_or(self.default_value))
    }
}

/// Fits cell means of `ys` on the bins of `transform`, clipped to `±clip_bound`.
pub fn fit_ht(
    xs: &Rows<'_>,
    ys: &[f64],
    transform: HistogramTransform,
    clip_bound: f64,
) -> Result<HtRegressor> {
    fit_ht_with_fitted(xs, ys, transform, clip_bound).map(|(m, _)| m)
}

/// Like [`fit_ht`], also returning the fitted value at every training row.
pub(crate) fn fit_ht_with_fitted(
    xs: &Rows<'_>,
    ys: &[f64],
    transform: HistogramTransform,
    clip_bound: f64,
) -> Result<(HtRegressor, Vec<f64>)> {
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
    if xs.dim() != transform.dim() {
        return Err(Error::InvalidInput(format!(
            "data has {} features, transform expects {}",
            xs.dim(),
            transform.dim()
        )));
    }

    let mut slot_of: FxHashMap<BinKey, usize> = FxHashMap::default();
    let mut acc: Vec<MeanAccumulator> = Vec::new();
    let mut slots = Vec::with_capacity(ys.len());
    for (x, &y) in xs.iter().zip(ys) {
        let key = transform.bin_key_unchecked(x);
        let next = acc.len();
        let slot = *slot_of.entry(key).or_insert(next);
        if slot == next {
            acc.push(MeanAccumulator::default());
        }
        acc[slot].add(y);
        slots.push(slot);
    }

    let cell_values: Vec<f64> = acc
        .iter()
        .map(|a| clip(a.mean().unwrap(), clip_bound))
        .collect();
    let fitted = slots.iter().map(|&s| cell_values[s]).collect();
    let values = slot_of
        .into_iter()
        .map(|(k, s)| (k, cell_values[s]))
        .collect();
    Ok((
        HtRegressor {
            transform,
            values,
            clip_bound,
            default_value: EMPTY_CELL_VALUE,
        },
        fitted,
    ))
}

mod sorted_map {
    use rustc_hash::FxHashMap;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::transform::BinKey;

    pub fn serialize<S: Serializer>(map: &FxHashMap<BinKey, f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut entries: Vec<(&BinKey, &f64)> = map.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FxHashMap<BinKey, f64>, D::Error> {
        let entries: Vec<(BinKey, f64)> = Vec::deserialize(d)?;
        Ok(entries.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::RngStream;
    use crate::transform::sample_transform;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn rows(xs: &[f64], d: usize) -> Array2<f64> {
        Array2::from_shape_vec((xs.len() / d, d), xs.to_vec()).unwrap()
    }

    #[test]
    fn group_mean_then_clip() {
        let t = HistogramTransform::axis_aligned(1, 0.5).unwrap();
        let xs = rows(&[0.1, 0.2, 0.9], 1);
        let m = fit_ht(&Rows::new(&xs), &[1.0, 3.0, 10.0], t, 5.0).unwrap();
        assert_eq!(m.num_cells(), 2);
        assert_eq!(m.predict(&[0.15]), 2.0);
        assert_eq!(m.predict(&[0.7]), 5.0);
        // bin (2) never saw data
        assert_eq!(m.predict(&[1.2]), 0.0);
        assert_eq!(m.try_predict(&[0.15]).unwrap(), 2.0);
    }

    #[test]
    fn constant_targets_fit_exactly() {
        let mut rng = RngStream::new(2, 0);
        let t = sample_transform(0.1, 2, &mut rng).unwrap();
        let xs = Array2::from_shape_simple_fn((200, 2), || rng.random::<f64>());
        let ys = vec![0.7; 200];
        let (m, fitted) = fit_ht_with_fitted(&Rows::new(&xs), &ys, t, 1.0).unwrap();
        assert!(m.values().values().all(|&v| v == 0.7));
        assert!(fitted.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn singleton_bin_returns_its_target() {
        let t = HistogramTransform::axis_aligned(1, 0.1).unwrap();
        let xs = rows(&[0.33], 1);
        let m = fit_ht(&Rows::new(&xs), &[-0.4], t, 1.0).unwrap();
        assert_eq!(m.predict(&[0.33]), -0.4);
    }

    #[test]
    fn fit_errors() {
        let t = HistogramTransform::axis_aligned(1, 0.1).unwrap();
        let empty = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            fit_ht(&Rows::new(&empty), &[], t.clone(), 1.0),
            Err(Error::EmptyDataset)
        ));
        let xs = rows(&[0.1, 0.2], 1);
        assert!(fit_ht(&Rows::new(&xs), &[1.0], t.clone(), 1.0).is_err());
        assert!(fit_ht(&Rows::new(&xs), &[1.0, 2.0], t.clone(), -1.0).is_err());
        let xs2 = rows(&[0.1, 0.2], 2);
        assert!(fit_ht(&Rows::new(&xs2), &[1.0], t, 1.0).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let mut rng = RngStream::new(9, 0);
        let t = sample_transform(0.2, 2, &mut rng).unwrap();
        let xs = Array2::from_shape_simple_fn((50, 2), || rng.random::<f64>());
        let ys: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let m = fit_ht(&Rows::new(&xs), &ys, t, 1.0).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: HtRegressor = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
    }

    proptest! {
        #[test]
        fn predictions_bounded_by_clip(seed in any::<u64>(), clip_bound in 0.1f64..3.0) {
            let mut rng = RngStream::new(seed, 1);
            let t = sample_transform(0.15, 2, &mut rng).unwrap();
            let xs = Array2::from_shape_simple_fn((60, 2), || rng.random::<f64>());
            let ys: Vec<f64> = (0..60).map(|_| rng.random_range(-5.0..5.0)).collect();
            let m = fit_ht(&Rows::new(&xs), &ys, t, clip_bound).unwrap();
            for i in 0..60 {
                let p = m.predict(&[xs[[i, 0]], xs[[i, 1]]]);
                prop_assert!(p.abs() <= clip_bound);
            }
        }
    }
}
