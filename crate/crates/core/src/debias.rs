//! Sample-splitting debiasing and retraction, plug-in variance estimates and
//! confidence intervals for linear functionals.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::mask::{linear_form, LinearFunctionalMask};
use crate::rng::{rng_for, Purpose};
use crate::sampling::ObservationSet;
use crate::tensor::Tensor3;
use crate::tsvd::{truncate_rank, tsvd, SpectralFactors, TsvdFactors, DEFAULT_RANK_TOL};

/// Seeded uniform split into `ceil(n/2)` and `floor(n/2)` observations.
pub fn split(obs: &ObservationSet, seed: u64) -> Result<(ObservationSet, ObservationSet)> {
    let n = obs.n();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "sample splitting needs at least 2 observations, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_for(seed, Purpose::Split, 0));
    let n0 = n.div_ceil(2);
    Ok((obs.subset(&perm[..n0]), obs.subset(&perm[n0..])))
}

/// `T_init + (d*/|heldout|) sum_i (y_i - <T_init, X_i>) X_i`.
pub fn debias(t_init: &Tensor3, heldout: &ObservationSet) -> Result<Tensor3> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("empty held-out sample".into()));
    }
    if t_init.dims() != heldout.dims {
        return Err(Error::DimensionMismatch(format!(
            "initial estimate {:?} vs observations {:?}",
            t_init.dims(),
            heldout.dims
        )));
    }
    let scale = heldout.d_star() as f64 / heldout.n() as f64;
    let data = t_init.as_slice();
    let offsets = heldout.offsets();
    let correction = heldout.scatter(|i, o| scale * (o.y - data[offsets[i]]));
    t_init.axpy(1.0, &correction)
}

/// Every intermediate of the cross-fitted estimator.
#[derive(Clone, Debug)]
pub struct DebiasState {
    pub t_init: [Tensor3; 2],
    pub t_unbs: [Tensor3; 2],
    pub factors: [TsvdFactors; 2],
    pub t_proj: [Tensor3; 2],
    /// `(t_proj[0] + t_proj[1]) / 2`.
    pub t_hat: Tensor3,
    /// `[D1, D2]`.
    pub halves: [ObservationSet; 2],
    /// `|D1| = ceil(n/2)`.
    pub n0: usize,
    pub n: usize,
    pub rank: usize,
}

impl DebiasState {
    pub fn dims(&self) -> [usize; 3] {
        self.t_hat.dims()
    }

    pub fn d_star(&self) -> usize {
        self.dims().iter().product()
    }
}

/// Cross-fitted estimator: split, initialize on each half, debias with the other half,
/// retract to tubal rank `r` and average.
pub fn run_algorithm1(
    obs: &ObservationSet,
    init: &dyn Initializer,
    r: usize,
    seed: u64,
) -> Result<DebiasState> {
    let (d1, d2) = split(obs, seed)?;
    let (i1, i2) = rayon::join(|| init.initialize(&d1), || init.initialize(&d2));
    let (i1, i2) = (i1?, i2?);
    let branch = |t_init: &Tensor3, heldout: &ObservationSet| -> Result<(Tensor3, Tensor3, TsvdFactors)> {
        let unbs = debias(t_init, heldout)?;
        let (proj, f) = truncate_rank(&unbs, r)?;
        Ok((unbs, proj, f))
    };
    let (b1, b2) = rayon::join(|| branch(&i1, &d2), || branch(&i2, &d1));
    let ((u1, p1, f1), (u2, p2, f2)) = (b1?, b2?);
    let t_hat = (&p1 + &p2).scale(0.5);
    Ok(DebiasState {
        n0: d1.n(),
        n: obs.n(),
        rank: r,
        t_init: [i1, i2],
        t_unbs: [u1, u2],
        factors: [f1, f2],
        t_proj: [p1, p2],
        t_hat,
        halves: [d1, d2],
    })
}

fn sum_sq_residuals(t: &Tensor3, obs: &ObservationSet) -> f64 {
    let data = t.as_slice();
    obs.entries
        .iter()
        .zip(obs.offsets())
        .map(|(o, off)| (o.y - data[off]).powi(2))
        .sum()
}

/// Cross-fitted noise level: residuals of `T_init,1` on `D2` and of
/// `T_init,2` on `D1`, both divided by the full `n`.
pub fn estimate_sigma(state: &DebiasState) -> f64 {
    let rss = sum_sq_residuals(&state.t_init[0], &state.halves[1])
        + sum_sq_residuals(&state.t_init[1], &state.halves[0]);
    (rss / state.n as f64).sqrt()
}

/// `sqrt(||M V||_F^2 + ||U^dagger M||_F^2)`.
pub fn s_m(f: &SpectralFactors, mask: &LinearFunctionalMask) -> Result<f64> {
    if mask.fro() == 0.0 {
        return Err(Error::InvalidArgument("mask has zero norm".into()));
    }
    let (left, right) = mask.projection_energy(f)?;
    Ok((left + right).sqrt())
}

/// Plug-in `s_M`: the two branch factors averaged in squares.
pub fn estimate_s_m(state: &DebiasState, mask: &LinearFunctionalMask) -> Result<f64> {
    let a = s_m(state.factors[0].spectral(), mask)?;
    let b = s_m(state.factors[1].spectral(), mask)?;
    Ok((0.5 * (a * a + b * b)).sqrt())
}

/// `Phi^-1(p)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("probability {p} outside (0, 1)")));
    }
    Ok(Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p))
}

/// `z_{1 - alpha/2}`.
pub fn z_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    normal_quantile(1.0 - alpha / 2.0)
}

/// `sigma_hat s_hat sqrt(d*/n)`.
pub fn standard_error(sigma_hat: f64, s_hat: f64, d_star: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    Ok(sigma_hat * s_hat * (d_star as f64 / n as f64).sqrt())
}

/// Interval for the parameter `<T, M>`.
pub fn confidence_interval(
    estimate: f64,
    sigma_hat: f64,
    s_hat: f64,
    d_star: usize,
    n: usize,
    alpha: f64,
) -> Result<(f64, f64)> {
    let half = z_value(alpha)? * standard_error(sigma_hat, s_hat, d_star, n)?;
    Ok((estimate - half, estimate + half))
}

/// Interval for a fresh noisy observation of `<T, M>`: the standard error is
/// inflated by `sigma_hat`.
pub fn observation_interval(
    estimate: f64,
    sigma_hat: f64,
    s_hat: f64,
    d_star: usize,
    n: usize,
    alpha: f64,
) -> Result<(f64, f64)> {
    let half = z_value(alpha)? * (standard_error(sigma_hat, s_hat, d_star, n)? + sigma_hat);
    Ok((estimate - half, estimate + half))
}

/// `(<T_hat, M> - <T, M>) / (sigma_hat s_hat sqrt(d*/n))`.
pub fn standardized_stat(state: &DebiasState, mask: &LinearFunctionalMask, truth: &Tensor3) -> Result<f64> {
    let se = standard_error(
        estimate_sigma(state),
        estimate_s_m(state, mask)?,
        state.d_star(),
        state.n,
    )?;
    if se == 0.0 {
        return Err(Error::InvalidArgument("zero standard error".into()));
    }
    Ok((linear_form(&state.t_hat, mask)? - linear_form(truth, mask)?) / se)
}

/// Quantities that need the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthDiagnostics {
    pub truth: f64,
    /// `s_M` from the true singular factors.
    pub oracle_s_m: f64,
    pub standardized: f64,
    pub covered: bool,
    pub covered_obs: bool,
    /// `<E_rn, M>` and `<E_init, M>` of the debiased tensors, averaged over
    /// the two branches.
    pub noise_term: f64,
    pub init_term: f64,
}

/// Point estimate, plug-in variance pieces and both intervals for one mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub mask: String,
    pub estimate: f64,
    pub sigma_hat: f64,
    pub s_hat: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_obs_low: f64,
    pub ci_obs_high: f64,
    pub alpha: f64,
    pub z: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthDiagnostics>,
}

pub fn infer(
    state: &DebiasState,
    name: &str,
    mask: &LinearFunctionalMask,
    alpha: f64,
    truth: Option<&Tensor3>,
) -> Result<InferenceReport> {
    if mask.dims() != state.dims() {
        return Err(Error::DimensionMismatch(format!(
            "mask {:?} vs estimate {:?}",
            mask.dims(),
            state.dims()
        )));
    }
    let z = z_value(alpha)?;
    let estimate = linear_form(&state.t_hat, mask)?;
    let sigma_hat = estimate_sigma(state);
    let s_hat = estimate_s_m(state, mask)?;
    let d_star = state.d_star();
    let std_error = standard_error(sigma_hat, s_hat, d_star, state.n)?;
    let (ci_low, ci_high) = confidence_interval(estimate, sigma_hat, s_hat, d_star, state.n, alpha)?;
    let (ci_obs_low, ci_obs_high) =
        observation_interval(estimate, sigma_hat, s_hat, d_star, state.n, alpha)?;
    let truth = truth
        .map(|t| truth_diagnostics(state, mask, t, std_error, (ci_low, ci_high), (ci_obs_low, ci_obs_high)))
        .transpose()?;
    Ok(InferenceReport {
        mask: name.to_string(),
        estimate,
        sigma_hat,
        s_hat,
        std_error,
        ci_low,
        ci_high,
        ci_obs_low,
        ci_obs_high,
        alpha,
        z,
        n: state.n,
        truth,
    })
}

fn truth_diagnostics(
    state: &DebiasState,
    mask: &LinearFunctionalMask,
    t: &Tensor3,
    std_error: f64,
    ci: (f64, f64),
    ci_obs: (f64, f64),
) -> Result<TruthDiagnostics> {
    let value = linear_form(t, mask)?;
    let oracle = s_m(tsvd(t, DEFAULT_RANK_TOL)?.spectral(), mask)?;
    let estimate = linear_form(&state.t_hat, mask)?;
    let standardized = if std_error > 0.0 {
        (estimate - value) / std_error
    } else {
        f64::NAN
    };
    // branch a was initialized on half a and debiased with the other half
    let mut noise = 0.0;
    let mut total = 0.0;
    for a in 0..2 {
        let heldout = &state.halves[1 - a];
        let scale = heldout.d_star() as f64 / heldout.n() as f64;
        let data = t.as_slice();
        let offsets = heldout.offsets();
        let e_rn = heldout.scatter(|i, o| scale * (o.y - data[offsets[i]]));
        noise += 0.5 * linear_form(&e_rn, mask)?;
        total += 0.5 * (linear_form(&state.t_unbs[a], mask)? - value);
    }
    Ok(TruthDiagnostics {
        truth: value,
        oracle_s_m: oracle,
        standardized,
        covered: ci.0 <= value && value <= ci.1,
        covered_obs: ci_obs.0 <= value && value <= ci_obs.1,
        noise_term: noise,
        init_term: total - noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::FixedInit;
    use crate::sampling::{generate_ground_truth, sample_observations, GeneratorConfig, Observation};

    #[test]
    fn split_sizes_and_determinism() {
        let obs = |n: usize| {
            ObservationSet::new(
                [3, 3, 3],
                (0..n).map(|i| Observation { index: [i % 3, 0, 0], y: i as f64 }).collect(),
                0.0,
                0,
            )
            .unwrap()
        };
        let (a, b) = split(&obs(4), 1).unwrap();
        assert_eq!((a.n(), b.n()), (2, 2));
        let (a, b) = split(&obs(5), 1).unwrap();
        assert_eq!((a.n(), b.n()), (3, 2));
        assert_eq!(split(&obs(9), 3).unwrap(), split(&obs(9), 3).unwrap());
        assert!(split(&obs(1), 0).is_err());
        // a partition of the sample
        let (a, b) = split(&obs(9), 5).unwrap();
        let mut ys: Vec<f64> = a.entries.iter().chain(&b.entries).map(|o| o.y).collect();
        ys.sort_by(f64::total_cmp);
        assert_eq!(ys, (0..9).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn debias_single_observation() {
        let t_init = Tensor3::from_fn([2, 2, 2], |j, k, l| (j + 2 * k + 4 * l) as f64);
        let rho = 0.75;
        let held = ObservationSet::new(
            [2, 2, 2],
            vec![Observation { index: [0, 0, 0], y: t_init.get(0, 0, 0) + rho }],
            0.0,
            0,
        )
        .unwrap();
        let out = debias(&t_init, &held).unwrap();
        assert_eq!(out.get(0, 0, 0), t_init.get(0, 0, 0) + 8.0 * rho);
        for off in 1..8 {
            assert_eq!(out.as_slice()[off], t_init.as_slice()[off]);
        }
        let empty = ObservationSet::new([2, 2, 2], vec![], 0.0, 0).unwrap();
        assert!(debias(&t_init, &empty).is_err());
    }

    #[test]
    fn exact_inputs_give_exact_output() {
        let cfg = GeneratorConfig::new([10, 9, 6], 2, 0.0, 0.5, 8);
        let t = generate_ground_truth(&cfg).unwrap();
        let obs = sample_observations(&t, &cfg).unwrap();
        let state = run_algorithm1(&obs, &FixedInit(t.clone()), 2, 1).unwrap();
        assert!(state.t_hat.max_abs_diff(&t) < 1e-10);
        assert_eq!(estimate_sigma(&state), 0.0);
        let avg = (&state.t_proj[0] + &state.t_proj[1]).scale(0.5);
        assert_eq!(avg, state.t_hat);
        let mask = LinearFunctionalMask::single(t.dims(), [0, 0, 0]).unwrap();
        let z = standardized_stat(&state, &mask, &t);
        assert!(z.is_err() || z.unwrap().abs() < 1e-6);
    }

    #[test]
    fn z_for_95_percent() {
        assert!((z_value(0.05).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!((normal_quantile(0.5).unwrap()).abs() < 1e-12);
        assert!(z_value(0.0).is_err());
        assert!(z_value(1.0).is_err());
    }

    #[test]
    fn intervals_are_nested_and_symmetric() {
        let (lo, hi) = confidence_interval(1.0, 0.5, 0.3, 1000, 400, 0.05).unwrap();
        let (olo, ohi) = observation_interval(1.0, 0.5, 0.3, 1000, 400, 0.05).unwrap();
        assert!((1.0 - lo - (hi - 1.0)).abs() < 1e-14);
        assert!(olo < lo && hi < ohi);
        let half = 1.959963984540054 * (0.5 * 0.3 * 2.5f64.sqrt() + 0.5);
        assert!((ohi - 1.0 - half).abs() < 1e-9);
        assert_eq!(confidence_interval(2.0, 0.0, 0.3, 10, 5, 0.1).unwrap(), (2.0, 2.0));
    }

    #[test]
    fn s_m_with_full_rank_factors() {
        let t = Tensor3::identity(4, 3);
        let f = tsvd(&t, DEFAULT_RANK_TOL).unwrap();
        let mask = LinearFunctionalMask::parse([4, 4, 3], "1,2,1:2;3,3,2:-1").unwrap();
        let s = s_m(f.spectral(), &mask).unwrap();
        assert!((s - 2f64.sqrt() * mask.fro()).abs() < 1e-12);
    }
}
