//! Dense third-order tensors and the t-product algebra.
//!
//! Entries are stored in a single `Vec<f64>` with the frontal slice index as
//! the slowest axis and the row index as the fastest:
//!
//! ```text
//! offset(j, k, l) = j + d1 * (k + d2 * l)
//! ```
//!
//! so every frontal slice `T(:, :, l)` is a contiguous column-major `d1 x d2`
//! block. All indices in the Rust API are zero-based.

use std::ops::{Add, Index, Mul, Sub};

use faer::Mat;

use crate::error::{Error, Result};
use crate::spectral::{dft3, idft3, SpectralTensor};

/// Largest row or column count allowed for [`bcirc`].
pub const BCIRC_LIMIT: usize = 4096;

/// A dense real `d1 x d2 x d3` array with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "tensor dimensions must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

impl Tensor3 {
    /// Builds a tensor from data in canonical order.
    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "expected {len} entries for dims {dims:?}, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("entry at offset {pos}")));
        }
        Ok(Self { dims, data })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn zeros(dims: [usize; 3]) -> Self {
        check_dims(dims).expect("zero-sized tensor");
        Self {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    /// # Panics
    /// If any dimension is zero or `f` returns a non-finite value.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        let [d1, d2, d3] = dims;
        for l in 0..d3 {
            for k in 0..d2 {
                for j in 0..d1 {
                    let v = f(j, k, l);
                    assert!(v.is_finite(), "non-finite entry at ({j},{k},{l})");
                    t.data[j + d1 * (k + d2 * l)] = v;
                }
            }
        }
        t
    }

    /// The identity tensor: `I_d` in the first frontal slice, zeros elsewhere.
    pub fn identity(d: usize, d3: usize) -> Self {
        Self::from_fn([d, d, d3], |j, k, l| if l == 0 && j == k { 1.0 } else { 0.0 })
    }

    /// Stacks `d1 x d2` matrices as frontal slices.
    pub fn from_frontal_slices(slices: &[Mat<f64>]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidArgument("no frontal slices".into()))?;
        let (d1, d2) = (first.nrows(), first.ncols());
        let mut data = Vec::with_capacity(d1 * d2 * slices.len());
        for (l, s) in slices.iter().enumerate() {
            if s.nrows() != d1 || s.ncols() != d2 {
                return Err(Error::DimensionMismatch(format!(
                    "slice {l} is {}x{}, expected {d1}x{d2}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            for k in 0..d2 {
                for j in 0..d1 {
                    data.push(s[(j, k)]);
                }
            }
        }
        Self::from_vec([d1, d2, slices.len()], data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// `d1 * d2 * d3`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, j: usize, k: usize, l: usize) -> usize {
        debug_assert!(j < self.dims[0] && k < self.dims[1] && l < self.dims[2]);
        j + self.dims[0] * (k + self.dims[1] * l)
    }

    /// Inverse of [`Tensor3::offset`].
    #[inline]
    pub fn index_of(&self, offset: usize) -> [usize; 3] {
        let [d1, d2, _] = self.dims;
        [offset % d1, (offset / d1) % d2, offset / (d1 * d2)]
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.offset(j, k, l)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frontal_slice(&self, l: usize) -> Mat<f64> {
        let [d1, d2, _] = self.dims;
        Mat::from_fn(d1, d2, |j, k| self.get(j, k, l))
    }

    /// The `(j, k)` tube `T(j, k, :)`.
    pub fn tube(&self, j: usize, k: usize) -> Vec<f64> {
        (0..self.dims[2]).map(|l| self.get(j, k, l)).collect()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Tensor3) -> Result<Self> {
        self.same_dims(other)?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims, other.dims, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Root mean squared entry difference.
    pub fn rmse(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims, other.dims, "dimension mismatch");
        let ss: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (ss / self.len() as f64).sqrt()
    }

    fn same_dims(&self, other: &Tensor3) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

impl Index<[usize; 3]> for Tensor3 {
    type Output = f64;

    fn index(&self, [j, k, l]: [usize; 3]) -> &f64 {
        &self.data[self.offset(j, k, l)]
    }
}

impl Add for &Tensor3 {
    type Output = Tensor3;

    fn add(self, rhs: &Tensor3) -> Tensor3 {
        self.axpy(1.0, rhs).expect("dimension mismatch in tensor addition")
    }
}

impl Sub for &Tensor3 {
    type Output = Tensor3;

    fn sub(self, rhs: &Tensor3) -> Tensor3 {
        self.axpy(-1.0, rhs)
            .expect("dimension mismatch in tensor subtraction")
    }
}

impl Mul<f64> for &Tensor3 {
    type Output = Tensor3;

    fn mul(self, c: f64) -> Tensor3 {
        self.scale(c)
    }
}

/// Stacks the frontal slices vertically into a `(d1 * d3) x d2` matrix.
pub fn unfold(a: &Tensor3) -> Mat<f64> {
    let [d1, d2, _] = a.dims();
    Mat::from_fn(d1 * a.dims()[2], d2, |row, k| a.get(row % d1, k, row / d1))
}

/// Inverse of [`unfold`]; `dims` is the target tensor shape.
pub fn fold(m: &Mat<f64>, dims: [usize; 3]) -> Result<Tensor3> {
    check_dims(dims)?;
    let [d1, d2, d3] = dims;
    if m.nrows() != d1 * d3 || m.ncols() != d2 {
        return Err(Error::DimensionMismatch(format!(
            "cannot fold a {}x{} matrix into {dims:?}",
            m.nrows(),
            m.ncols()
        )));
    }
    let data = (0..d1 * d2 * d3)
        .map(|off| {
            let (j, k, l) = (off % d1, (off / d1) % d2, off / (d1 * d2));
            m[(j + d1 * l, k)]
        })
        .collect();
    Tensor3::from_vec(dims, data)
}

/// Block-circulant lifting: block `(p, q)` is frontal slice `(p - q) mod d3`.
///
/// Quadratic in `d3`; meant as a brute-force reference and capped at
/// [`BCIRC_LIMIT`] rows and columns.
pub fn bcirc(a: &Tensor3) -> Result<Mat<f64>> {
    let [d1, d2, d3] = a.dims();
    let (rows, cols) = (d1 * d3, d2 * d3);
    if rows > BCIRC_LIMIT || cols > BCIRC_LIMIT {
        return Err(Error::TooLarge { rows, cols });
    }
    Ok(Mat::from_fn(rows, cols, |row, col| {
        let (p, j) = (row / d1, row % d1);
        let (q, k) = (col / d2, col % d2);
        a.get(j, k, (p + d3 - q) % d3)
    }))
}

/// The t-product `A * B`, evaluated slice-wise in the Fourier domain.
pub fn tprod(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    let [d1, da, d3a] = a.dims();
    let [db, d2, d3b] = b.dims();
    if da != db || d3a != d3b {
        return Err(Error::DimensionMismatch(format!(
            "t-product of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let ah = dft3(a);
    let bh = dft3(b);
    let prod = ah.slice_product(&bh)?;
    debug_assert_eq!(prod.dims(), [d1, d2, d3a]);
    idft3(&prod)
}

/// `A^dagger`: transpose every frontal slice and reverse slices `2..d3`.
pub fn conj_transpose(a: &Tensor3) -> Tensor3 {
    let [d1, d2, d3] = a.dims();
    Tensor3::from_fn([d2, d1, d3], |k, j, l| a.get(j, k, (d3 - l) % d3))
}

/// The norms used throughout the estimator analysis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub fro: f64,
    /// Largest singular value over all frequency slices.
    pub spectral: f64,
    pub max: f64,
    /// Sum of absolute entries.
    pub l1: f64,
}

pub fn norms(a: &Tensor3) -> Result<Norms> {
    let data = a.as_slice();
    Ok(Norms {
        fro: a.fro_norm(),
        spectral: spectral_norm(&dft3(a))?,
        max: data.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
        l1: data.iter().map(|v| v.abs()).sum(),
    })
}

/// `max_t ||A^(t)||_2` over the frequency slices.
pub fn spectral_norm(a: &SpectralTensor) -> Result<f64> {
    let mut best = 0.0f64;
    for (t, slice) in a.slices().iter().enumerate() {
        let sv = slice.singular_values().map_err(|_| Error::SvdFailure(t))?;
        best = best.max(sv.first().copied().unwrap_or(0.0));
    }
    Ok(best)
}

/// Entrywise inner product `<A, B>`.
pub fn inner(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    a.same_dims(b)?;
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum())
}

/// Canonical basis tensors used to extract rows and tubes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TubeBasis {
    /// `e_j`: a `d x 1 x d3` tensor with a one at `(j, 0, 0)`.
    Column { d: usize, index: usize },
    /// `e_k` for tubes: a `1 x 1 x d3` tensor with a one at `(0, 0, k)`.
    Tube { index: usize },
}

impl TubeBasis {
    pub fn to_tensor(self, d3: usize) -> Result<Tensor3> {
        match self {
            TubeBasis::Column { d, index } => {
                if index >= d {
                    return Err(Error::InvalidArgument(format!(
                        "column basis index {index} out of range for d = {d}"
                    )));
                }
                Ok(Tensor3::from_fn([d, 1, d3], |j, _, l| {
                    if j == index && l == 0 {
                        1.0
                    } else {
                        0.0
                    }
                }))
            }
            TubeBasis::Tube { index } => {
                if index >= d3 {
                    return Err(Error::InvalidArgument(format!(
                        "tube basis index {index} out of range for d3 = {d3}"
                    )));
                }
                Ok(Tensor3::from_fn([1, 1, d3], |_, _, l| {
                    if l == index {
                        1.0
                    } else {
                        0.0
                    }
                }))
            }
        }
    }
}
