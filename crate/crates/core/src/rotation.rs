//! Uniformly distributed rotation matrices.
//!
//! A d×d matrix of independent standard normals is factored with a
//! Householder QR decomposition whose triangular factor is sign-normalized to
//! a positive diagonal. The orthogonal factor is then Haar distributed on
//! O(d); flipping the first column when the determinant is negative moves it
//! onto SO(d).

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resample budget for `sample_rotation` when a draw is rank deficient.
pub const MAX_ROTATION_ATTEMPTS: usize = 16;

const ORTHOGONALITY_TOL: f64 = 1e-10;

/// A proper rotation: orthogonal with determinant +1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct RotationMatrix {
    entries: Array2<f64>,
}

impl RotationMatrix {
    pub fn identity(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension(d));
        }
        Ok(Self {
            entries: Array2::eye(d),
        })
    }

    /// Wraps an explicit matrix after checking it is a rotation to 1e-10.
    pub fn from_entries(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows == 0 || rows != cols {
            return Err(Error::InvalidDimension(rows.max(cols)));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("rotation has non-finite entries".into()));
        }
        let err = orthogonality_error(&entries);
        if err > ORTHOGONALITY_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not orthogonal (max |RᵀR - I| = {err:e})"
            )));
        }
        let det = determinant(&entries);
        if (det - 1.0).abs() > ORTHOGONALITY_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix has determinant {det}, expected +1"
            )));
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Writes `R x` into `out`.
    #[inline]
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.entries.rows()) {
            *o = row.iter().zip(x).map(|(r, v)| r * v).sum();
        }
    }
}

impl TryFrom<Array2<f64>> for RotationMatrix {
    type Error = Error;

    fn try_from(value: Array2<f64>) -> Result<Self> {
        Self::from_entries(value)
    }
}

impl From<RotationMatrix> for Array2<f64> {
    fn from(value: RotationMatrix) -> Self {
        value.entries
    }
}

/// d×d matrix of i.i.d. standard normal draws, filled row by row.
pub fn gaussian_matrix<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Array2<f64>> {
    if d == 0 {
        return Err(Error::InvalidDimension(d));
    }
    Ok(Array2::from_shape_simple_fn((d, d), || rng.sample(StandardNormal)))
}

/// Householder QR of a square matrix: `m = q · w` with `q` orthogonal and `w`
/// upper triangular with a strictly positive diagonal.
///
/// A column whose sub-diagonal part vanishes (relative to the matrix scale)
/// makes the factorization non-unique and is reported as
/// [`Error::DegenerateMatrix`].
pub fn householder_qr(m: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let (rows, cols) = m.dim();
    if rows == 0 || rows != cols {
        return Err(Error::InvalidDimension(rows.max(cols)));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let d = rows;
    let scale = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let pivot_floor = scale * 1e-14;

    let mut w = m.clone();
    let mut q = Array2::<f64>::eye(d);
    let mut v = vec![0.0; d];

    for k in 0..d {
        let norm = (k..d).map(|i| w[[i, k]] * w[[i, k]]).sum::<f64>().sqrt();
        if norm <= pivot_floor || norm == 0.0 {
            return Err(Error::DegenerateMatrix { column: k });
        }
        let below = (k + 1..d).map(|i| w[[i, k]] * w[[i, k]]).sum::<f64>();
        if below == 0.0 {
            // already triangular in this column
            continue;
        }
        let x0 = w[[k, k]];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        for i in k..d {
            v[i] = w[[i, k]];
        }
        v[k] -= alpha;
        let vnorm2: f64 = (k..d).map(|i| v[i] * v[i]).sum();

        // w <- (I - 2 v vᵀ / vᵀv) w, rows k..d
        for j in k..d {
            let dot: f64 = (k..d).map(|i| v[i] * w[[i, j]]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..d {
                w[[i, j]] -= f * v[i];
            }
        }
        for i in k + 1..d {
            w[[i, k]] = 0.0;
        }
        // q <- q (I - 2 v vᵀ / vᵀv), columns k..d
        for r in 0..d {
            let dot: f64 = (k..d).map(|i| q[[r, i]] * v[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..d {
                q[[r, i]] -= f * v[i];
            }
        }
    }

    for k in 0..d {
        if w[[k, k]] < 0.0 {
            for j in k..d {
                w[[k, j]] = -w[[k, j]];
            }
            for r in 0..d {
                q[[r, k]] = -q[[r, k]];
            }
        }
    }
    Ok((q, w))
}

/// Draws a Haar-uniform rotation of dimension `d`.
pub fn sample_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<RotationMatrix> {
    if d == 0 {
        return Err(Error::InvalidDimension(d));
    }
    for _ in 0..MAX_ROTATION_ATTEMPTS {
        let m = gaussian_matrix(d, rng)?;
        let mut q = match householder_qr(&m) {
            Ok((q, _)) => q,
            Err(Error::DegenerateMatrix { .. }) => continue,
            Err(e) => return Err(e),
        };
        if determinant(&q) < 0.0 {
            q.column_mut(0).mapv_inplace(|v| -v);
        }
        return Ok(RotationMatrix { entries: q });
    }
    Err(Error::RngDegeneracy {
        attempts: MAX_ROTATION_ATTEMPTS,
    })
}

/// Determinant by LU factorization with partial pivoting.
pub fn determinant(m: &Array2<f64>) -> f64 {
    let d = m.nrows();
    let mut a = m.clone();
    let mut det = 1.0;
    for k in 0..d {
        let (p, pivot) = (k..d)
            .map(|i| (i, a[[i, k]]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .unwrap();
        if pivot == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..d {
                a.swap([k, j], [p, j]);
            }
            det = -det;
        }
        det *= pivot;
        for i in k + 1..d {
            let f = a[[i, k]] / pivot;
            for j in k + 1..d {
                a[[i, j]] -= f * a[[k, j]];
            }
        }
    }
    det
}

/// max |QᵀQ - I| over all entries.
pub fn orthogonality_error(q: &Array2<f64>) -> f64 {
    let qtq = q.t().dot(q);
    qtq.indexed_iter()
        .map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}
