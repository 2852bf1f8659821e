//! Tensor SVD computed slice-by-slice in the Fourier domain, tubal rank,
//! rank-r retraction and the spectral diagnostics used to judge whether an
//! instance is in the regime where the inference procedure applies.
//!
//! Only the slices `0..=d3/2` are decomposed; the remaining ones are the
//! complex conjugates of their mirror slice. Self-conjugate slices (`t = 0`,
//! and `t = d3/2` for even `d3`) are real matrices and go through a real SVD,
//! which keeps the inverse transform of the factors exactly real.

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::LinearFunctionalMask;
use crate::spectral::{dft3, half_spectrum, idft3, mirror, SpectralTensor};
use crate::tensor::{conj_transpose, tprod, Tensor3};

/// Default relative threshold on `sigma_max` below which a singular value
/// counts as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Thin SVD of each frequency slice, truncated to a common number of columns.
#[derive(Clone, Debug)]
pub struct SpectralFactors {
    pub u: Vec<Mat<c64>>,
    pub s: Vec<Vec<f64>>,
    pub v: Vec<Mat<c64>>,
}

/// The skinny t-SVD `T = U * S * V^dagger`.
#[derive(Clone, Debug)]
pub struct TsvdFactors {
    /// `d1 x r x d3`
    pub u: Tensor3,
    /// `r x r x d3`, f-diagonal
    pub s: Tensor3,
    /// `d2 x r x d3`
    pub v: Tensor3,
    pub rank: usize,
    spectral: SpectralFactors,
}

fn is_self_conjugate(t: usize, d3: usize) -> bool {
    mirror(t, d3) == t
}

fn svd_slice(a: &Mat<c64>, real: bool, t: usize) -> Result<(Mat<c64>, Vec<f64>, Mat<c64>)> {
    if real {
        let re = Mat::from_fn(a.nrows(), a.ncols(), |j, k| a[(j, k)].re);
        let svd = re.thin_svd().map_err(|_| Error::SvdFailure(t))?;
        let u = svd.U();
        let v = svd.V();
        let s = svd.S().column_vector();
        Ok((
            Mat::from_fn(u.nrows(), u.ncols(), |j, k| c64::new(u[(j, k)], 0.0)),
            (0..s.nrows()).map(|i| s[i]).collect(),
            Mat::from_fn(v.nrows(), v.ncols(), |j, k| c64::new(v[(j, k)], 0.0)),
        ))
    } else {
        let svd = a.thin_svd().map_err(|_| Error::SvdFailure(t))?;
        let s = svd.S().column_vector();
        Ok((
            svd.U().to_owned(),
            (0..s.nrows()).map(|i| s[i].re).collect(),
            svd.V().to_owned(),
        ))
    }
}

fn leading_columns(m: &Mat<c64>, r: usize) -> Mat<c64> {
    m.as_ref().subcols(0, r).to_owned()
}

fn conj_mat(m: &Mat<c64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |j, k| m[(j, k)].conj())
}

/// Thin SVD of every frequency slice, keeping `keep` leading triplets
/// (all `min(d1, d2)` when `None`).
pub fn spectral_svd(a: &SpectralTensor, keep: Option<usize>) -> Result<SpectralFactors> {
    let [d1, d2, d3] = a.dims();
    let full = d1.min(d2);
    let r = keep.unwrap_or(full);
    if r > full {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {r} singular triplets of {d1}x{d2} slices"
        )));
    }
    let half = half_spectrum(d3);
    let mut u = Vec::with_capacity(d3);
    let mut s = Vec::with_capacity(d3);
    let mut v = Vec::with_capacity(d3);
    for t in 0..half {
        let (su, ss, sv) = svd_slice(a.slice(t), is_self_conjugate(t, d3), t)?;
        u.push(leading_columns(&su, r));
        s.push(ss[..r].to_vec());
        v.push(leading_columns(&sv, r));
    }
    for t in half..d3 {
        let m = mirror(t, d3);
        u.push(conj_mat(&u[m]));
        s.push(s[m].clone());
        v.push(conj_mat(&v[m]));
    }
    Ok(SpectralFactors { u, s, v })
}

impl SpectralFactors {
    pub fn rank(&self) -> usize {
        self.s.first().map_or(0, Vec::len)
    }

    pub fn d3(&self) -> usize {
        self.s.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.u[0].nrows(), self.v[0].nrows(), self.d3()]
    }

    /// `U diag(s) V^H` in every slice.
    pub fn reconstruct(&self) -> SpectralTensor {
        let slices = (0..self.d3())
            .map(|t| {
                let (u, s, v) = (&self.u[t], &self.s[t], &self.v[t]);
                let us = Mat::from_fn(u.nrows(), u.ncols(), |j, c| u[(j, c)] * s[c]);
                &us * v.adjoint()
            })
            .collect();
        SpectralTensor::from_slices(slices).expect("non-empty")
    }

    /// Transforms the factors back to the original domain.
    pub fn to_tsvd(&self) -> Result<TsvdFactors> {
        let r = self.rank();
        if r == 0 {
            return Err(Error::InvalidArgument("rank-zero factorization".into()));
        }
        let d3 = self.d3();
        let u = idft3(&SpectralTensor::from_slices(self.u.clone())?)?;
        let v = idft3(&SpectralTensor::from_slices(self.v.clone())?)?;
        let s_slices = (0..d3)
            .map(|t| {
                Mat::from_fn(r, r, |i, k| {
                    if i == k {
                        c64::new(self.s[t][i], 0.0)
                    } else {
                        c64::new(0.0, 0.0)
                    }
                })
            })
            .collect();
        let s = idft3(&SpectralTensor::from_slices(s_slices)?)?;
        Ok(TsvdFactors {
            u,
            s,
            v,
            rank: r,
            spectral: self.clone(),
        })
    }

    /// All retained singular values across slices, i.e. the spectrum of
    /// `bdiag(T_hat)` restricted to the kept triplets.
    pub fn singular_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.s.iter().flatten().copied()
    }

    /// `||e_j^dagger U||_F^2` for every row `j`.
    pub fn u_row_energy(&self) -> Vec<f64> {
        row_energy(&self.u)
    }

    /// `||e_j^dagger V||_F^2` for every row `j`.
    pub fn v_row_energy(&self) -> Vec<f64> {
        row_energy(&self.v)
    }

    /// `||e_j^dagger U||` (tensor spectral norm) for every row `j`.
    pub fn u_row_spectral(&self) -> Vec<f64> {
        row_spectral(&self.u)
    }

    pub fn v_row_spectral(&self) -> Vec<f64> {
        row_spectral(&self.v)
    }
}

fn row_sq(m: &Mat<c64>, j: usize) -> f64 {
    (0..m.ncols()).map(|c| m[(j, c)].norm_sqr()).sum()
}

fn row_energy(slices: &[Mat<c64>]) -> Vec<f64> {
    let d = slices[0].nrows();
    let d3 = slices.len() as f64;
    (0..d)
        .map(|j| slices.iter().map(|m| row_sq(m, j)).sum::<f64>() / d3)
        .collect()
}

fn row_spectral(slices: &[Mat<c64>]) -> Vec<f64> {
    let d = slices[0].nrows();
    (0..d)
        .map(|j| {
            slices
                .iter()
                .map(|m| row_sq(m, j))
                .fold(0.0, f64::max)
                .sqrt()
        })
        .collect()
}

impl TsvdFactors {
    pub fn spectral(&self) -> &SpectralFactors {
        &self.spectral
    }

    /// `U * S * V^dagger` via original-domain t-products.
    pub fn reconstruct(&self) -> Result<Tensor3> {
        tprod(&self.u, &tprod(&self.s, &conj_transpose(&self.v))?)
    }

    /// Smallest and largest nonzero singular values of `bdiag(T_hat)`.
    pub fn lambda_range(&self) -> (f64, f64) {
        lambda_range(&self.spectral, DEFAULT_RANK_TOL)
    }
}

fn lambda_range(f: &SpectralFactors, tol: f64) -> (f64, f64) {
    let max = f.singular_values().fold(0.0, f64::max);
    let min = f
        .singular_values()
        .filter(|&s| s > tol * max)
        .fold(f64::INFINITY, f64::min);
    (if min.is_finite() { min } else { 0.0 }, max)
}

fn rank_from_spectrum(f: &SpectralFactors, tol: f64) -> usize {
    let smax = f.singular_values().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    f.s.iter()
        .map(|s| s.iter().filter(|&&x| x > tol * smax).count())
        .max()
        .unwrap_or(0)
}

/// Largest frequency-slice rank, counting singular values above
/// `tol * sigma_max`.
pub fn tubal_rank(t: &Tensor3, tol: f64) -> Result<usize> {
    check_tol(tol)?;
    let f = spectral_svd(&dft3(t), None)?;
    Ok(rank_from_spectrum(&f, tol))
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!("rank tolerance {tol}")));
    }
    Ok(())
}

/// Skinny t-SVD with `r` equal to the tubal rank at `tol`.
pub fn tsvd(t: &Tensor3, tol: f64) -> Result<TsvdFactors> {
    check_tol(tol)?;
    let mut f = spectral_svd(&dft3(t), None)?;
    let r = rank_from_spectrum(&f, tol);
    if r == 0 {
        return Err(Error::InvalidArgument(
            "the zero tensor has no skinny t-SVD".into(),
        ));
    }
    for t in 0..f.d3() {
        f.u[t] = leading_columns(&f.u[t], r);
        f.v[t] = leading_columns(&f.v[t], r);
        f.s[t].truncate(r);
    }
    f.to_tsvd()
}

fn check_rank(dims: [usize; 3], r: usize) -> Result<()> {
    if r == 0 || r > dims[0].min(dims[1]) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={} for dims {dims:?}",
            dims[0].min(dims[1])
        )));
    }
    Ok(())
}

/// Keeps the top `r` singular triplets of every frequency slice.
pub fn truncate_spectral(a: &SpectralTensor, r: usize) -> Result<(SpectralTensor, SpectralFactors)> {
    check_rank(a.dims(), r)?;
    let f = spectral_svd(a, Some(r))?;
    Ok((f.reconstruct(), f))
}

/// Best tubal-rank-`r` approximation in Frobenius norm, with its factors.
pub fn truncate_rank(t: &Tensor3, r: usize) -> Result<(Tensor3, TsvdFactors)> {
    let (low, f) = truncate_spectral(&dft3(t), r)?;
    Ok((idft3(&low)?, f.to_tsvd()?))
}

/// Approximate rank-`r` projection `Q Q^H A` per frequency slice, where `Q`
/// comes from `power_iters` block power steps started at `start`.
///
/// Returns the projected spectrum and the new bases. Used as a cheap
/// retraction inside iterative solvers.
pub fn subspace_project(
    a: &SpectralTensor,
    start: &[Mat<c64>],
    power_iters: usize,
) -> Result<(SpectralTensor, Vec<Mat<c64>>)> {
    let [d1, d2, d3] = a.dims();
    if start.len() != d3 || start.iter().any(|q| q.nrows() != d1) {
        return Err(Error::DimensionMismatch(format!(
            "{} starting bases for dims {:?}",
            start.len(),
            a.dims()
        )));
    }
    let half = half_spectrum(d3);
    let mut low = Vec::with_capacity(d3);
    let mut bases = Vec::with_capacity(d3);
    for t in 0..half {
        let s = a.slice(t);
        let mut q = start[t].clone();
        for _ in 0..power_iters {
            let z = s * (s.adjoint() * &q);
            q = z.qr().compute_thin_Q();
        }
        low.push(&q * (q.adjoint() * s));
        bases.push(q);
    }
    for t in half..d3 {
        let m = mirror(t, d3);
        low.push(conj_mat(&low[m]));
        bases.push(conj_mat(&bases[m]));
    }
    debug_assert_eq!(low[0].ncols(), d2);
    Ok((SpectralTensor::from_slices(low)?, bases))
}

/// Spectral quantities that govern the regime of the estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDiagnostics {
    pub rank: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa0: f64,
    /// Smallest constant satisfying both row-norm incoherence bounds.
    pub mu_max: f64,
    /// Largest constant satisfying both mask alignment bounds.
    pub alpha_m: Option<f64>,
    /// `max_j ||e_j^dagger (U_hat U_hat^dagger - U U^dagger)||`.
    pub row_dist_u: Option<f64>,
    pub row_dist_v: Option<f64>,
    /// `lambda_min / sigma` when a noise level is supplied.
    pub snr: Option<f64>,
}

/// `mu_max = max(max_j ||e_j^dagger U|| sqrt(d1/r), max_j ||e_j^dagger V|| sqrt(d2/r))`.
pub fn incoherence(f: &SpectralFactors) -> f64 {
    let [d1, d2, _] = f.dims();
    let r = f.rank() as f64;
    let mu_u = f.u_row_spectral().into_iter().fold(0.0, f64::max) * (d1 as f64 / r).sqrt();
    let mu_v = f.v_row_spectral().into_iter().fold(0.0, f64::max) * (d2 as f64 / r).sqrt();
    mu_u.max(mu_v)
}

/// `alpha_M = min(||U^dagger M||_F sqrt(d1/r), ||M V||_F sqrt(d2/r)) / ||M||_F`.
pub fn alignment(f: &SpectralFactors, mask: &LinearFunctionalMask) -> Result<f64> {
    if mask.fro() == 0.0 {
        return Err(Error::InvalidArgument(
            "alignment is undefined for an all-zero mask".into(),
        ));
    }
    let [d1, d2, _] = f.dims();
    let r = f.rank() as f64;
    let (left, right) = mask.projection_energy(f)?;
    let a_u = left.sqrt() * (d1 as f64 / r).sqrt();
    let a_v = right.sqrt() * (d2 as f64 / r).sqrt();
    Ok(a_u.min(a_v) / mask.fro())
}

fn projector_row_distance(est: &[Mat<c64>], reference: &[Mat<c64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a, b) in est.iter().zip(reference) {
        let diff = a * a.adjoint() - b * b.adjoint();
        for j in 0..diff.nrows() {
            worst = worst.max(row_sq(&diff, j).sqrt());
        }
    }
    worst
}

/// Row-wise projector distances `(U side, V side)` between two factorizations.
pub fn row_distances(est: &SpectralFactors, reference: &SpectralFactors) -> Result<(f64, f64)> {
    if est.dims() != reference.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            est.dims(),
            reference.dims()
        )));
    }
    Ok((
        projector_row_distance(&est.u, &reference.u),
        projector_row_distance(&est.v, &reference.v),
    ))
}

/// Spectral diagnostics of `t` at rank `r`.
///
/// `mask` enables `alpha_m`; `reference` (typically the true factors) enables
/// the projector row distances; `sigma` enables the SNR.
pub fn diagnostics(
    t: &Tensor3,
    r: usize,
    mask: Option<&LinearFunctionalMask>,
    reference: Option<&SpectralFactors>,
    sigma: Option<f64>,
) -> Result<SpectrumDiagnostics> {
    check_rank(t.dims(), r)?;
    let f = spectral_svd(&dft3(t), Some(r))?;
    let (lambda_min, lambda_max) = lambda_range(&f, DEFAULT_RANK_TOL);
    let alpha_m = mask.map(|m| alignment(&f, m)).transpose()?;
    let dists = reference.map(|rf| row_distances(&f, rf)).transpose()?;
    Ok(SpectrumDiagnostics {
        rank: r,
        lambda_min,
        lambda_max,
        kappa0: if lambda_min > 0.0 {
            lambda_max / lambda_min
        } else {
            f64::INFINITY
        },
        mu_max: incoherence(&f),
        alpha_m,
        row_dist_u: dists.map(|d| d.0),
        row_dist_v: dists.map(|d| d.1),
        snr: sigma.filter(|s| *s > 0.0).map(|s| lambda_min / s),
    })
}
