//! Synthetic ground truth, uniform sampling with replacement and noise.

use faer::{c64, Mat};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Purpose};
use crate::spectral::{half_spectrum, idft3, mirror, SpectralTensor};
use crate::tensor::Tensor3;

/// Distribution of the additive noise, always scaled to variance `sigma^2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]`.
    UniformBounded,
    /// `+-sigma` with equal probability.
    Rademacher,
}

impl NoiseFamily {
    pub fn sample<R: Rng + ?Sized>(self, sigma: f64, rng: &mut R) -> f64 {
        match self {
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            NoiseFamily::UniformBounded => {
                let a = 3f64.sqrt() * sigma;
                rng.gen_range(-1.0..=1.0) * a
            }
            NoiseFamily::Rademacher => {
                if rng.gen::<bool>() {
                    sigma
                } else {
                    -sigma
                }
            }
        }
    }

    /// Upper bound on `log E exp(s xi)` for noise of scale `sigma`.
    ///
    /// Gaussian: exact `s^2 sigma^2 / 2`. Uniform on `[-a, a]`: `sinh(sa)/(sa)
    /// <= exp(s^2 a^2 / 6)` with `a^2 = 3 sigma^2`. Rademacher: `cosh(s sigma)
    /// <= exp(s^2 sigma^2 / 2)`. All three are sub-Gaussian with parameter
    /// `sigma^2`.
    pub fn log_mgf_bound(self, s: f64, sigma: f64) -> f64 {
        0.5 * s * s * sigma * sigma
    }

    /// Exact `log E exp(s xi)`.
    pub fn log_mgf(self, s: f64, sigma: f64) -> f64 {
        match self {
            NoiseFamily::Gaussian => 0.5 * s * s * sigma * sigma,
            NoiseFamily::UniformBounded => {
                let x = s * 3f64.sqrt() * sigma;
                if x.abs() < 1e-8 {
                    x * x / 6.0
                } else {
                    (x.sinh() / x).ln()
                }
            }
            NoiseFamily::Rademacher => (s * sigma).cosh().ln(),
        }
    }
}

/// Row factor `U` of the generated frequency slices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowLoading {
    /// [`group_indicator`], shared by every frequency.
    #[default]
    GroupIndicator,
    /// Independent complex Gaussian `U_t` per frequency. Every entry of the
    /// result is then recoverable from a random sample; with the group
    /// indicator, a (group, column, slice) cell is lost when none of the
    /// group's rows is sampled there.
    Gaussian,
}

/// Per-slice amplitude and phase variation of the loading matrices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    /// Loadings of frequency `t` are scaled by `1 + amplitude * u_t`,
    /// `u_t ~ U[-1, 1]`.
    pub amplitude: f64,
    /// Loadings of frequency `t` are rotated by `phase_drift * t` radians.
    pub phase_drift: f64,
}

impl Default for Modulation {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            phase_drift: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub dims: [usize; 3],
    pub rank: usize,
    pub sigma: f64,
    /// `n / d*`; values above 1 are allowed.
    pub fraction: f64,
    #[serde(default)]
    pub noise: NoiseFamily,
    pub seed: u64,
    #[serde(default)]
    pub modulation: Modulation,
    #[serde(default)]
    pub row_loading: RowLoading,
}

impl GeneratorConfig {
    pub fn new(dims: [usize; 3], rank: usize, sigma: f64, fraction: f64, seed: u64) -> Self {
        Self {
            dims,
            rank,
            sigma,
            fraction,
            noise: NoiseFamily::Gaussian,
            seed,
            modulation: Modulation::default(),
            row_loading: RowLoading::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("dims {:?}", self.dims)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma {}", self.sigma)));
        }
        if !(self.fraction > 0.0 && self.fraction.is_finite()) {
            return Err(Error::InvalidArgument(format!("fraction {}", self.fraction)));
        }
        Ok(())
    }

    /// `round(fraction * d*)`.
    pub fn sample_size(&self) -> usize {
        (self.fraction * self.dims.iter().product::<usize>() as f64).round() as usize
    }
}

/// One noisy entry `y = T(index) + xi` (zero-based index).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub index: [usize; 3],
    pub y: f64,
}

/// Sampled triples; duplicates allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub dims: [usize; 3],
    pub entries: Vec<Observation>,
    pub sigma_xi: f64,
    pub seed: u64,
    pub truth_ref: Option<String>,
}

impl ObservationSet {
    pub fn new(dims: [usize; 3], entries: Vec<Observation>, sigma_xi: f64, seed: u64) -> Result<Self> {
        for o in &entries {
            if o.index.iter().zip(&dims).any(|(i, d)| i >= d) {
                return Err(Error::InvalidArgument(format!(
                    "observation index {:?} out of range for {dims:?}",
                    o.index
                )));
            }
            if !o.y.is_finite() {
                return Err(Error::NonFinite(format!("observation at {:?}", o.index)));
            }
        }
        Ok(Self {
            dims,
            entries,
            sigma_xi,
            seed,
            truth_ref: None,
        })
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `d1 d2 d3`.
    pub fn d_star(&self) -> usize {
        self.dims.iter().product()
    }

    /// Same metadata, entries picked by position.
    pub fn subset(&self, positions: &[usize]) -> ObservationSet {
        ObservationSet {
            dims: self.dims,
            entries: positions.iter().map(|&p| self.entries[p]).collect(),
            sigma_xi: self.sigma_xi,
            seed: self.seed,
            truth_ref: self.truth_ref.clone(),
        }
    }

    /// Canonical offsets of the sampled entries.
    pub fn offsets(&self) -> Vec<usize> {
        let [d1, d2, _] = self.dims;
        self.entries
            .iter()
            .map(|o| o.index[0] + d1 * (o.index[1] + d2 * o.index[2]))
            .collect()
    }

    /// `sum_i c_i X_i` for per-observation coefficients `c_i`, duplicates
    /// summed.
    pub fn scatter(&self, coef: impl Fn(usize, &Observation) -> f64) -> Tensor3 {
        let mut out = Tensor3::zeros(self.dims);
        let [d1, d2, _] = self.dims;
        let data = out.data_mut();
        for (i, o) in self.entries.iter().enumerate() {
            data[o.index[0] + d1 * (o.index[1] + d2 * o.index[2])] += coef(i, o);
        }
        out
    }
}

/// Group-indicator left factor with `r` groups of size `floor(d1 / r)`; the
/// last group absorbs the remainder.
pub fn group_indicator(d1: usize, r: usize) -> Mat<f64> {
    let size = d1 / r;
    Mat::from_fn(d1, r, |j, c| if (j / size).min(r - 1) == c { 1.0 } else { 0.0 })
}

/// Tubal-rank-`r` real tensor with frequency slices `U V_t^H`, normalized to
/// unit entry standard deviation.
///
/// `U` is [`group_indicator`] or, with [`RowLoading::Gaussian`], drawn like
/// `V_t` without modulation; `V_t` has independent standard complex
/// Gaussian entries (real on self-conjugate frequencies) with the configured
/// amplitude and phase modulation. Slices above `d3 / 2` are conjugates of
/// their mirrors so the result is real.
pub fn generate_ground_truth(cfg: &GeneratorConfig) -> Result<Tensor3> {
    cfg.validate()?;
    let [d1, d2, d3] = cfg.dims;
    let r = cfg.rank;
    if r == 0 || r > d1.min(d2) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={} for dims {:?}",
            d1.min(d2),
            cfg.dims
        )));
    }
    let mut rng = rng_for(cfg.seed, Purpose::Truth, 0);
    let ind = group_indicator(d1, r);
    let u = Mat::from_fn(d1, r, |j, c| c64::new(ind[(j, c)], 0.0));
    let mut slices: Vec<Mat<c64>> = Vec::with_capacity(d3);
    for t in 0..half_spectrum(d3) {
        let real = mirror(t, d3) == t;
        let amp = 1.0 + cfg.modulation.amplitude * rng.gen_range(-1.0..=1.0);
        let rot = if real {
            c64::new(amp, 0.0)
        } else {
            c64::from_polar(amp, cfg.modulation.phase_drift * t as f64)
        };
        let mut gauss = || {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = if real { 0.0 } else { StandardNormal.sample(&mut rng) };
            if real {
                c64::new(re, 0.0)
            } else {
                c64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            }
        };
        let v = Mat::from_fn(d2, r, |_, _| rot * gauss());
        match cfg.row_loading {
            RowLoading::GroupIndicator => slices.push(&u * v.adjoint()),
            RowLoading::Gaussian => {
                let ut = Mat::from_fn(d1, r, |_, _| gauss());
                slices.push(&ut * v.adjoint());
            }
        }
    }
    for t in half_spectrum(d3)..d3 {
        let m = &slices[mirror(t, d3)];
        slices.push(Mat::from_fn(d1, d2, |j, k| m[(j, k)].conj()));
    }
    let t = idft3(&SpectralTensor::from_slices(slices)?)?;
    let n = t.len() as f64;
    let mean = t.as_slice().iter().sum::<f64>() / n;
    let sd = (t.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    if sd == 0.0 {
        return Ok(t);
    }
    Ok(t.scale(1.0 / sd))
}

/// `round(fraction * d*)` uniform draws with replacement plus noise.
pub fn sample_observations(t: &Tensor3, cfg: &GeneratorConfig) -> Result<ObservationSet> {
    cfg.validate()?;
    if t.dims() != cfg.dims {
        return Err(Error::DimensionMismatch(format!(
            "tensor {:?} vs config {:?}",
            t.dims(),
            cfg.dims
        )));
    }
    let [d1, d2, d3] = cfg.dims;
    let n = cfg.sample_size();
    let mut idx_rng = rng_for(cfg.seed, Purpose::Sampling, 0);
    let mut noise_rng = rng_for(cfg.seed, Purpose::Noise, 0);
    let entries = (0..n)
        .map(|_| {
            let index = [
                idx_rng.gen_range(0..d1),
                idx_rng.gen_range(0..d2),
                idx_rng.gen_range(0..d3),
            ];
            let xi = cfg.noise.sample(cfg.sigma, &mut noise_rng);
            Observation {
                index,
                y: t.get(index[0], index[1], index[2]) + xi,
            }
        })
        .collect();
    Ok(ObservationSet {
        dims: cfg.dims,
        entries,
        sigma_xi: cfg.sigma,
        seed: cfg.seed,
        truth_ref: None,
    })
}

/// Last observed value per entry plus an observed-flag channel.
#[derive(Clone, Debug)]
pub struct ObservedMask {
    /// Last observed value, 0 where unobserved.
    pub values: Tensor3,
    /// Canonical-order flags.
    pub observed: Vec<bool>,
    /// Observations that overwrote an earlier one at the same index.
    pub duplicates: usize,
}

impl ObservedMask {
    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }
}

pub fn observed_mask_tensor(obs: &ObservationSet) -> ObservedMask {
    let mut values = Tensor3::zeros(obs.dims);
    let mut observed = vec![false; values.len()];
    let mut duplicates = 0;
    let data = values.data_mut();
    for (o, off) in obs.entries.iter().zip(obs.offsets()) {
        if observed[off] {
            duplicates += 1;
        }
        observed[off] = true;
        data[off] = o.y;
    }
    ObservedMask {
        values,
        observed,
        duplicates,
    }
}
