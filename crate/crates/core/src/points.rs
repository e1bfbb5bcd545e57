//! Row access for feature matrices.

use std::borrow::Cow;

use ndarray::Array2;

/// Row-major view of an n×d matrix.
#[derive(Clone, Debug)]
pub struct Rows<'a> {
    data: Cow<'a, [f64]>,
    dim: usize,
}

impl<'a> Rows<'a> {
    pub fn new(xs: &'a Array2<f64>) -> Self {
        let dim = xs.ncols();
        let data = match xs.as_slice() {
            Some(s) => Cow::Borrowed(s),
            None => Cow::Owned(xs.iter().copied().collect()),
        };
        Self { data, dim }
    }

    pub fn new_empty(dim: usize) -> Rows<'static> {
        Rows {
            data: Cow::Owned(Vec::new()),
            dim,
        }
    }

    /// Owned rows from a flat row-major buffer.
    pub fn from_vec(data: Vec<f64>, dim: usize) -> Rows<'static> {
        assert!(dim > 0 && data.len() % dim == 0, "ragged row buffer");
        Rows {
            data: Cow::Owned(data),
            dim,
        }
    }

    /// Copies the rows selected by `keep`.
    pub fn select(&self, keep: &[bool]) -> Rows<'static> {
        let mut data = Vec::new();
        for (row, &k) in self.iter().zip(keep) {
            if k {
                data.extend_from_slice(row);
            }
        }
        Rows {
            data: Cow::Owned(data),
            dim: self.dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// Kahan–Babuška compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated mean accumulated around the first value seen, so a constant
/// sequence averages back to exactly that constant.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanAccumulator {
    pivot: f64,
    offsets: CompensatedSum,
    count: usize,
}

impl MeanAccumulator {
    #[inline]
    pub fn add(&mut self, v: f64) {
        if self.count == 0 {
            self.pivot = v;
        } else {
            self.offsets.add(v - self.pivot);
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.pivot + self.offsets.value() / self.count as f64)
    }
}

pub fn compensated_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut acc = MeanAccumulator::default();
    for v in values {
        acc.add(v);
    }
    acc.mean()
}
