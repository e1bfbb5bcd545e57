//! The histogram transform `H(x) = s·R·x + b` and the bins it induces.
//!
//! Two inputs share a bin exactly when `⌊H(x)⌋ = ⌊H(x')⌋` componentwise. The
//! preimage of a unit cube under `H` is a rotated cube of side `h = 1/s`, so
//! each bin is convex with diameter at most `√d · h`. Points with an exactly
//! integral coordinate of `H(x)` belong to the bin with the larger index.

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::random::RngStream;
use crate::rotation::{sample_rotation, RotationMatrix};

/// Integer bin coordinates `⌊H(x)⌋`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinKey(pub SmallVec<[i64; 4]>);

impl BinKey {
    pub fn indices(&self) -> &[i64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramTransform {
    rotation: RotationMatrix,
    bin_width: f64,
    stretch: f64,
    translation: Vec<f64>,
}

impl HistogramTransform {
    pub fn new(rotation: RotationMatrix, bin_width: f64, translation: Vec<f64>) -> Result<Self> {
        check_bin_width(bin_width)?;
        if translation.len() != rotation.dim() {
            return Err(Error::InvalidInput(format!(
                "translation has {} components, rotation is {}-dimensional",
                translation.len(),
                rotation.dim()
            )));
        }
        if let Some(b) = translation.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::InvalidParameter(format!(
                "translation component {b} outside [0, 1)"
            )));
        }
        Ok(Self {
            rotation,
            bin_width,
            stretch: 1.0 / bin_width,
            translation,
        })
    }

    /// Axis-aligned transform `x / h` (identity rotation, zero translation).
    pub fn axis_aligned(d: usize, bin_width: f64) -> Result<Self> {
        Self::new(RotationMatrix::identity(d)?, bin_width, vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn rotation(&self) -> &RotationMatrix {
        &self.rotation
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn stretch(&self) -> f64 {
        self.stretch
    }

    pub fn translation(&self) -> &[f64] {
        &self.translation
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.dim()];
        self.apply_unchecked(x, &mut out);
        Ok(out)
    }

    pub fn bin_key(&self, x: &[f64]) -> Result<BinKey> {
        self.check_dim(x)?;
        Ok(self.bin_key_unchecked(x))
    }

    pub(crate) fn bin_key_unchecked(&self, x: &[f64]) -> BinKey {
        let mut z: SmallVec<[f64; 4]> = SmallVec::from_elem(0.0, self.dim());
        self.apply_unchecked(x, &mut z);
        BinKey(z.iter().map(|v| v.floor() as i64).collect())
    }

    #[inline]
    fn apply_unchecked(&self, x: &[f64], out: &mut [f64]) {
        self.rotation.mul_vec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.translation) {
            *o = self.stretch * *o + b;
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "point has {} coordinates, transform expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

fn check_bin_width(bin_width: f64) -> Result<()> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "bin width must be positive and finite, got {bin_width}"
        )));
    }
    Ok(())
}

/// Draws a transform with a uniform random rotation and a translation
/// uniform on `[0,1)^d`.
pub fn sample_transform(bin_width: f64, d: usize, rng: &mut RngStream) -> Result<HistogramTransform> {
    check_bin_width(bin_width)?;
    let rotation = sample_rotation(d, rng)?;
    let translation = (0..d).map(|_| rng.random::<f64>()).collect();
    HistogramTransform::new(rotation, bin_width, translation)
}
