//! Mode-3 discrete Fourier transform and the frequency-domain view of a
//! tensor.
//!
//! The forward transform applies the unnormalized DFT matrix
//! `F[l, s] = w^(l s)`, `w = exp(-2 pi i / d3)`, to every tube; the inverse
//! applies `F^-1 = F^H / d3`. Under this scaling
//! `||A||_F = ||bdiag(A_hat)||_F / sqrt(d3)`.

use faer::{c64, Mat};
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Relative bound on the imaginary residue that [`idft3`] silently discards.
pub const REAL_OUTPUT_TOL: f64 = 1e-10;

/// Index of the frequency slice paired with `t` under conjugate symmetry.
#[inline]
pub fn mirror(t: usize, d3: usize) -> usize {
    (d3 - t) % d3
}

/// Frequency slices `0..=d3/2`; the rest are conjugates of these for real data.
#[inline]
pub fn half_spectrum(d3: usize) -> usize {
    d3 / 2 + 1
}

/// Complex `d1 x d2` frequency slices of a tensor.
#[derive(Clone, Debug)]
pub struct SpectralTensor {
    dims: [usize; 3],
    slices: Vec<Mat<c64>>,
}

impl SpectralTensor {
    pub fn from_slices(slices: Vec<Mat<c64>>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidArgument("no frequency slices".into()))?;
        let (d1, d2) = (first.nrows(), first.ncols());
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidArgument("empty frequency slice".into()));
        }
        if let Some(t) = slices
            .iter()
            .position(|s| s.nrows() != d1 || s.ncols() != d2)
        {
            return Err(Error::DimensionMismatch(format!(
                "frequency slice {t} does not match {d1}x{d2}"
            )));
        }
        Ok(Self {
            dims: [d1, d2, slices.len()],
            slices,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn slices(&self) -> &[Mat<c64>] {
        &self.slices
    }

    pub fn slice(&self, t: usize) -> &Mat<c64> {
        &self.slices[t]
    }

    pub fn into_slices(self) -> Vec<Mat<c64>> {
        self.slices
    }

    /// Slice-wise matrix products, i.e. the t-product in the Fourier domain.
    pub fn slice_product(&self, rhs: &SpectralTensor) -> Result<SpectralTensor> {
        let [_, da, d3] = self.dims;
        let [db, _, d3b] = rhs.dims;
        if da != db || d3 != d3b {
            return Err(Error::DimensionMismatch(format!(
                "slice product of {:?} and {:?}",
                self.dims, rhs.dims
            )));
        }
        let slices = self
            .slices
            .iter()
            .zip(&rhs.slices)
            .map(|(a, b)| a * b)
            .collect();
        SpectralTensor::from_slices(slices)
    }

    /// Slice-wise conjugate transpose; the Fourier image of `A^dagger`.
    pub fn adjoint(&self) -> SpectralTensor {
        let slices = self.slices.iter().map(|s| s.adjoint().to_owned()).collect();
        SpectralTensor::from_slices(slices).expect("non-empty")
    }

    /// `(1/d3) * sum_t Re tr(A^(t)^H B^(t))`, equal to the original-domain
    /// inner product for real tensors.
    pub fn inner(&self, rhs: &SpectralTensor) -> Result<f64> {
        if self.dims != rhs.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, rhs.dims
            )));
        }
        let [d1, d2, d3] = self.dims;
        let mut acc = 0.0;
        for (a, b) in self.slices.iter().zip(&rhs.slices) {
            for k in 0..d2 {
                for j in 0..d1 {
                    acc += (a[(j, k)].conj() * b[(j, k)]).re;
                }
            }
        }
        Ok(acc / d3 as f64)
    }

    /// `||bdiag(A_hat)||_F`.
    pub fn bdiag_fro(&self) -> f64 {
        self.slices
            .iter()
            .map(|s| s.norm_l2().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Explicit block-diagonal matrix; only for brute-force checks.
    pub fn bdiag(&self) -> Mat<c64> {
        let [d1, d2, d3] = self.dims;
        let mut m = Mat::<c64>::zeros(d1 * d3, d2 * d3);
        for (t, s) in self.slices.iter().enumerate() {
            for k in 0..d2 {
                for j in 0..d1 {
                    m[(t * d1 + j, t * d2 + k)] = s[(j, k)];
                }
            }
        }
        m
    }

    /// Largest entrywise deviation from `A^(t) = conj(A^(d3 - t))`.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let [d1, d2, d3] = self.dims;
        let mut worst = 0.0f64;
        for t in 0..d3 {
            let (a, b) = (&self.slices[t], &self.slices[mirror(t, d3)]);
            for k in 0..d2 {
                for j in 0..d1 {
                    worst = worst.max((a[(j, k)] - b[(j, k)].conj()).norm());
                }
            }
        }
        worst
    }
}

/// Forward mode-3 DFT of every tube.
pub fn dft3(a: &Tensor3) -> SpectralTensor {
    let [d1, d2, d3] = a.dims();
    let plane = d1 * d2;
    let data = a.as_slice();
    let mut buf: Vec<c64> = Vec::with_capacity(plane * d3);
    for p in 0..plane {
        buf.extend((0..d3).map(|l| c64::new(data[p + plane * l], 0.0)));
    }
    let fft = FftPlanner::<f64>::new().plan_fft(d3, FftDirection::Forward);
    fft.process(&mut buf);
    let slices = (0..d3)
        .map(|t| Mat::from_fn(d1, d2, |j, k| buf[(j + d1 * k) * d3 + t]))
        .collect();
    SpectralTensor { dims: [d1, d2, d3], slices }
}

/// Inverse mode-3 DFT returning a real tensor.
///
/// Imaginary parts up to `REAL_OUTPUT_TOL * ||A||_F` are discarded; anything
/// larger means the input was not the transform of a real tensor.
pub fn idft3(a: &SpectralTensor) -> Result<Tensor3> {
    let (re, residue) = idft3_parts(a);
    let fro = re.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tolerance = REAL_OUTPUT_TOL * fro.max(f64::MIN_POSITIVE);
    if residue > tolerance {
        return Err(Error::ConjugateSymmetry { residue, tolerance });
    }
    Tensor3::from_vec(a.dims(), re)
}

/// Real parts in canonical order plus the largest absolute imaginary part.
fn idft3_parts(a: &SpectralTensor) -> (Vec<f64>, f64) {
    let [d1, d2, d3] = a.dims();
    let plane = d1 * d2;
    let mut buf = vec![c64::new(0.0, 0.0); plane * d3];
    for (t, s) in a.slices().iter().enumerate() {
        for k in 0..d2 {
            for j in 0..d1 {
                buf[(j + d1 * k) * d3 + t] = s[(j, k)];
            }
        }
    }
    let fft = FftPlanner::<f64>::new().plan_fft(d3, FftDirection::Inverse);
    fft.process(&mut buf);
    let scale = 1.0 / d3 as f64;
    let mut out = vec![0.0; plane * d3];
    let mut residue = 0.0f64;
    for p in 0..plane {
        for l in 0..d3 {
            let z = buf[p * d3 + l] * scale;
            out[p + plane * l] = z.re;
            residue = residue.max(z.im.abs());
        }
    }
    (out, residue)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_tube_transforms_to_dc() {
        let t = Tensor3::from_fn([1, 1, 5], |_, _, _| 2.0);
        let f = dft3(&t);
        assert!((f.slice(0)[(0, 0)] - c64::new(10.0, 0.0)).norm() < 1e-12);
        for s in 1..5 {
            assert!(f.slice(s)[(0, 0)].norm() < 1e-12);
        }
    }

    #[test]
    fn impulse_transforms_to_ones() {
        let t = Tensor3::from_vec([1, 1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let f = dft3(&t);
        for s in 0..4 {
            assert!((f.slice(s)[(0, 0)] - c64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn forward_uses_negative_exponent() {
        // tube (0, 1, 0, 0) -> w^s with w = exp(-2 pi i / 4) = -i
        let t = Tensor3::from_vec([1, 1, 4], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let f = dft3(&t);
        let expected = [
            c64::new(1.0, 0.0),
            c64::new(0.0, -1.0),
            c64::new(-1.0, 0.0),
            c64::new(0.0, 1.0),
        ];
        for (s, e) in expected.iter().enumerate() {
            assert!((f.slice(s)[(0, 0)] - e).norm() < 1e-12);
        }
    }

    #[test]
    fn real_input_is_conjugate_symmetric() {
        let t = Tensor3::from_fn([2, 3, 6], |j, k, l| ((j * 7 + k * 3 + l * l) as f64).sin());
        let f = dft3(&t);
        assert!(f.conjugate_symmetry_defect() < 1e-12);
        let back = idft3(&f).unwrap();
        assert!(back.max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn idft_rejects_broken_symmetry() {
        let t = Tensor3::from_fn([2, 2, 4], |j, k, l| (j + k + l) as f64);
        let mut slices = dft3(&t).into_slices();
        slices[1][(0, 0)] += c64::new(0.0, 1.0);
        let bad = SpectralTensor::from_slices(slices).unwrap();
        assert!(matches!(idft3(&bad), Err(Error::ConjugateSymmetry { .. })));
    }

    #[test]
    fn mirror_pairs() {
        assert_eq!(mirror(0, 5), 0);
        assert_eq!(mirror(1, 5), 4);
        assert_eq!(mirror(2, 4), 2);
        assert_eq!(half_spectrum(4), 3);
        assert_eq!(half_spectrum(5), 3);
    }
}
