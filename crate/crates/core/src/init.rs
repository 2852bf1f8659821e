//! Initial estimators: spectral initialization followed by projected
//! gradient refinement with t-SVD retraction.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::ObservationSet;
use crate::spectral::{dft3, idft3, SpectralTensor};
use crate::tensor::{conj_transpose, tprod, Tensor3};
use crate::tsvd::{spectral_svd, truncate_rank, SpectralFactors};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    Fixed { eta: f64 },
    /// Start every iteration at the last accepted step (at most `eta0`) and
    /// halve until the objective does not increase.
    Backtracking { eta0: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Retraction {
    /// Full per-slice SVD.
    Exact,
    /// Block power iterations warm-started from the previous column space.
    /// The returned estimate is always retracted exactly.
    Subspace { power_iters: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rank: usize,
    pub max_iters: usize,
    pub step: StepRule,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    pub seed: u64,
    pub retraction: Retraction,
    /// Ridge alternating-least-squares stage run before projected gradient.
    #[serde(default)]
    pub ridge: Option<RidgeConfig>,
    /// Run projected gradient after the ridge stage as well.
    #[serde(default)]
    pub polish: bool,
}

/// Penalty of the ridge stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    /// See [`auto_penalty`].
    Auto,
    Fixed { lambda: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub penalty: Penalty,
    pub sweeps: usize,
    pub tol: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            penalty: Penalty::Auto,
            sweeps: 50,
            tol: 1e-4,
        }
    }
}

impl SolverConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_iters: 300,
            step: StepRule::Backtracking { eta0: 1.0 },
            tol: 1e-7,
            seed: 0,
            retraction: Retraction::Subspace { power_iters: 2 },
            ridge: Some(RidgeConfig::default()),
            polish: false,
        }
    }

    /// Projected gradient only.
    pub fn projected_gradient(rank: usize) -> Self {
        Self {
            ridge: None,
            ..Self::new(rank)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol {}", self.tol)));
        }
        let eta = match self.step {
            StepRule::Fixed { eta } => eta,
            StepRule::Backtracking { eta0 } => eta0,
        };
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size {eta}")));
        }
        if let Some(ridge) = self.ridge {
            if let Penalty::Fixed { lambda } = ridge.penalty {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidArgument(format!("ridge penalty {lambda}")));
                }
            }
            if ridge.sweeps == 0 || !(ridge.tol > 0.0) {
                return Err(Error::InvalidArgument("ridge stage needs sweeps >= 1 and tol > 0".into()));
            }
        }
        if let Retraction::Subspace { power_iters: 0 } = self.retraction {
            return Err(Error::InvalidArgument("power_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub estimate: Tensor3,
    /// Accepted steps.
    pub iterations: usize,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
}

/// Accuracy of an initial estimate against the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitQualityReport {
    pub max_abs_error: f64,
    pub fro_error: f64,
    /// `max_abs_error / sigma`; infinite when `sigma = 0` and the error is not.
    pub gamma_hat: f64,
    pub iterations: Option<usize>,
    pub final_objective: Option<f64>,
}

/// `sum_i (<T, X_i> - y_i)^2`.
pub fn objective(t: &Tensor3, obs: &ObservationSet) -> f64 {
    let data = t.as_slice();
    obs.entries
        .iter()
        .zip(obs.offsets())
        .map(|(o, off)| (data[off] - o.y).powi(2))
        .sum()
}

fn check_obs(t_dims: Option<[usize; 3]>, obs: &ObservationSet) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    if let Some(d) = t_dims {
        if d != obs.dims {
            return Err(Error::DimensionMismatch(format!(
                "tensor {d:?} vs observations {:?}",
                obs.dims
            )));
        }
    }
    Ok(())
}

/// `truncate_rank((d*/n) sum_i y_i X_i, r)`.
pub fn spectral_init(obs: &ObservationSet, r: usize) -> Result<Tensor3> {
    check_obs(None, obs)?;
    let scale = obs.d_star() as f64 / obs.n() as f64;
    let z = obs.scatter(|_, o| scale * o.y);
    Ok(truncate_rank(&z, r)?.0)
}

/// Least-squares fit of the rows of `A` in `T = A * B`, `B` fixed
/// (`r x d2 x d3`), from observations grouped by row.
///
/// Row `j` of `A` is `r * d3` unknowns; the observation `(j, k, l)` reads
/// `sum_{c, m} A(j, c, m) B(c, k, (l - m) mod d3)`.
fn solve_rows(b: &Tensor3, rows: &[Vec<(usize, usize, f64)>], lambda: f64) -> Result<Tensor3> {
    let [r, _, d3] = b.dims();
    let p = r * d3;
    let d1 = rows.len();
    let mut out = vec![0.0; d1 * p];
    for (j, row) in rows.iter().enumerate() {
        if row.is_empty() {
            continue;
        }
        let design = Mat::from_fn(row.len(), p, |i, q| {
            let (k, l, _) = row[i];
            let (c, m) = (q % r, q / r);
            b.get(c, k, (l + d3 - m) % d3)
        });
        let y = Mat::from_fn(row.len(), 1, |i, _| row[i].2);
        let mut gram = design.transpose() * &design;
        let trace: f64 = (0..p).map(|q| gram[(q, q)]).sum();
        let shift = lambda + 1e-12 * trace / p as f64 + f64::MIN_POSITIVE;
        for q in 0..p {
            gram[(q, q)] += shift;
        }
        let sol = gram
            .llt(Side::Lower)
            .map_err(|_| Error::Divergence(0))?
            .solve(design.transpose() * &y);
        for q in 0..p {
            // q = c + r m  ->  A(j, c, m)
            let (c, m) = (q % r, q / r);
            out[j + d1 * (c + r * m)] = sol[(q, 0)];
        }
    }
    Tensor3::from_vec([d1, r, d3], out)
}

/// Alternating ridge regression over the factorization `T = A * B`
/// (`A: d1 x r x d3`, `B: r x d2 x d3`), started from the balanced t-SVD
/// factors of `start`.
///
/// Minimizes `sum_i (<A * B, X_i> - y_i)^2 + lambda (||A||_F^2 + ||B||_F^2)`,
/// the factored form of a tensor-nuclear-norm penalty. Runs at most `sweeps`
/// sweeps, stopping early once the relative decrease of the penalized
/// objective drops below `tol`. The result has tubal rank at most `r`.
pub fn alt_min(
    start: &Tensor3,
    obs: &ObservationSet,
    r: usize,
    lambda: f64,
    sweeps: usize,
    tol: f64,
) -> Result<Tensor3> {
    check_obs(Some(start.dims()), obs)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge penalty {lambda}")));
    }
    let [d1, d2, d3] = obs.dims;
    let (mut a, mut b) = balanced_factors(start, r)?;
    let mut by_row = vec![Vec::new(); d1];
    let mut by_col = vec![Vec::new(); d2];
    for o in &obs.entries {
        let [j, k, l] = o.index;
        by_row[j].push((k, l, o.y));
        by_col[k].push((j, (d3 - l) % d3, o.y));
    }
    let penalized = |a: &Tensor3, b: &Tensor3, t: &Tensor3| {
        objective(t, obs) + lambda * (a.fro_norm().powi(2) + b.fro_norm().powi(2))
    };
    let mut t = tprod(&a, &b)?;
    let mut obj = penalized(&a, &b, &t);
    for _ in 0..sweeps {
        a = solve_rows(&b, &by_row, lambda)?;
        // T^dagger = B^dagger * A^dagger: the same row problem for B^dagger
        b = conj_transpose(&solve_rows(&conj_transpose(&a), &by_col, lambda)?);
        t = tprod(&a, &b)?;
        let next = penalized(&a, &b, &t);
        if !next.is_finite() {
            return Err(Error::Divergence(0));
        }
        let decrease = (obj - next) / obj.max(f64::MIN_POSITIVE);
        obj = next;
        if decrease.abs() < tol {
            break;
        }
    }
    Ok(t)
}

/// `(U S^1/2, S^1/2 V^dagger)` from the rank-`r` t-SVD.
fn balanced_factors(t: &Tensor3, r: usize) -> Result<(Tensor3, Tensor3)> {
    let f = spectral_svd(&dft3(t), Some(r))?;
    let (a, b): (Vec<_>, Vec<_>) = (0..f.d3())
        .map(|s| {
            let root: Vec<f64> = f.s[s].iter().map(|x| x.sqrt()).collect();
            let a = Mat::from_fn(f.u[s].nrows(), r, |j, c| f.u[s][(j, c)] * root[c]);
            let b = Mat::from_fn(r, f.v[s].nrows(), |c, k| f.v[s][(k, c)].conj() * root[c]);
            (a, b)
        })
        .unzip();
    Ok((
        idft3(&SpectralTensor::from_slices(a)?)?,
        idft3(&SpectralTensor::from_slices(b)?)?,
    ))
}

/// Rank-`r` retraction, optionally warm-started from previous left factors.
struct Retractor {
    rank: usize,
    mode: Retraction,
    basis: Option<SpectralFactors>,
}

impl Retractor {
    fn exact(&mut self, t: &Tensor3) -> Result<Tensor3> {
        let s = dft3(t);
        let f = spectral_svd(&s, Some(self.rank))?;
        let out = idft3(&f.reconstruct())?;
        self.basis = Some(f);
        Ok(out)
    }

    fn apply(&mut self, t: &Tensor3) -> Result<Tensor3> {
        match (self.mode, &self.basis) {
            (Retraction::Subspace { power_iters }, Some(basis)) => {
                let s = dft3(t);
                let (low, q) = crate::tsvd::subspace_project(&s, &basis.u, power_iters)?;
                let out = idft3(&low)?;
                if let Some(b) = self.basis.as_mut() {
                    b.u = q;
                }
                Ok(out)
            }
            _ => self.exact(t),
        }
    }
}

/// Projected gradient `T <- truncate_rank(T - eta G, r)` with
/// `G = (d*/n) sum_i (<T, X_i> - y_i) X_i`.
pub fn refine(init: &Tensor3, obs: &ObservationSet, cfg: &SolverConfig) -> Result<RefineOutcome> {
    cfg.validate()?;
    check_obs(Some(init.dims()), obs)?;
    let scale = obs.d_star() as f64 / obs.n() as f64;
    let offsets = obs.offsets();
    let mut retractor = Retractor {
        rank: cfg.rank,
        mode: cfg.retraction,
        basis: None,
    };
    let mut t = retractor.exact(init)?;
    let mut obj = objective(&t, obs);
    let mut trace = vec![TraceRow {
        iteration: 0,
        objective: obj,
        step: 0.0,
    }];
    let mut eta = match cfg.step {
        StepRule::Fixed { eta } => eta,
        StepRule::Backtracking { eta0 } => eta0,
    };
    // residuals at rounding level of the data count as an exact fit
    let floor = 1e-26 * obs.entries.iter().map(|o| o.y * o.y).sum::<f64>();
    let mut iterations = 0;
    while iterations < cfg.max_iters && obj > floor {
        let data = t.as_slice();
        let grad = obs.scatter(|i, o| scale * (data[offsets[i]] - o.y));
        let step = loop {
            let cand = retractor.apply(&t.axpy(-eta, &grad)?)?;
            let cand_obj = objective(&cand, obs);
            let fixed = matches!(cfg.step, StepRule::Fixed { .. });
            if !cand_obj.is_finite() && fixed {
                return Err(Error::Divergence(iterations + 1));
            }
            if cand_obj <= obj || (fixed && cand_obj.is_finite()) {
                break Some((cand, cand_obj));
            }
            eta *= 0.5;
            if eta < 1e-12 {
                // no descent left at rounding level
                break None;
            }
        };
        let Some((next, next_obj)) = step else {
            break;
        };
        iterations += 1;
        let decrease = (obj - next_obj) / obj;
        t = next;
        obj = next_obj;
        trace.push(TraceRow {
            iteration: iterations,
            objective: obj,
            step: eta,
        });
        if decrease.abs() < cfg.tol {
            break;
        }
        if let StepRule::Backtracking { eta0 } = cfg.step {
            eta = (eta * 2.0).min(eta0);
        }
    }
    // the warm-started iterate is only approximately rank r
    let estimate = truncate_rank(&t, cfg.rank)?.0;
    let objective = objective(&estimate, obs);
    if !objective.is_finite() {
        return Err(Error::Divergence(iterations));
    }
    Ok(RefineOutcome {
        estimate,
        iterations,
        objective,
        trace,
    })
}

pub fn quality_report(est: &Tensor3, truth: &Tensor3, sigma: f64) -> Result<InitQualityReport> {
    if est.dims() != truth.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            est.dims(),
            truth.dims()
        )));
    }
    let max_abs_error = est.max_abs_diff(truth);
    let gamma_hat = if max_abs_error == 0.0 {
        0.0
    } else if sigma > 0.0 {
        max_abs_error / sigma
    } else {
        f64::INFINITY
    };
    Ok(InitQualityReport {
        max_abs_error,
        fro_error: (est - truth).fro_norm(),
        gamma_hat,
        iterations: None,
        final_objective: None,
    })
}

impl InitQualityReport {
    pub fn with_outcome(mut self, outcome: &RefineOutcome) -> Self {
        self.iterations = Some(outcome.iterations);
        self.final_objective = Some(outcome.objective);
        self
    }
}

/// Produces `T_init` from one half of the sample.
pub trait Initializer: Sync {
    fn initialize(&self, obs: &ObservationSet) -> Result<Tensor3>;
}

/// [`spectral_init`] followed by [`refine`].
#[derive(Clone, Debug)]
pub struct SpectralRefine(pub SolverConfig);

impl Initializer for SpectralRefine {
    fn initialize(&self, obs: &ObservationSet) -> Result<Tensor3> {
        let cfg = &self.0;
        cfg.validate()?;
        let mut est = spectral_init(obs, cfg.rank)?;
        if let Some(ridge) = cfg.ridge {
            let lambda = match ridge.penalty {
                Penalty::Fixed { lambda } => lambda,
                Penalty::Auto => auto_penalty(&est, obs, cfg.rank)?,
            };
            est = alt_min(&est, obs, cfg.rank, lambda, ridge.sweeps, ridge.tol)?;
            if !cfg.polish {
                return Ok(est);
            }
        }
        Ok(refine(&est, obs, cfg)?.estimate)
    }
}

/// Noise variance from repeated draws of the same entry, if at least
/// `min_df` degrees of freedom are available.
pub fn duplicate_noise_variance(obs: &ObservationSet, min_df: usize) -> Option<f64> {
    let mut groups: std::collections::BTreeMap<usize, (usize, f64, f64)> = Default::default();
    for (o, off) in obs.entries.iter().zip(obs.offsets()) {
        let g = groups.entry(off).or_insert((0, 0.0, 0.0));
        g.0 += 1;
        g.1 += o.y;
        g.2 += o.y * o.y;
    }
    let (mut ss, mut df) = (0.0, 0usize);
    for &(m, sum, sq) in groups.values() {
        if m > 1 {
            ss += sq - sum * sum / m as f64;
            df += m - 1;
        }
    }
    (df >= min_df).then(|| (ss / df as f64).max(0.0))
}

/// Multiplier of the empirical-Bayes ridge level. `tau_hat^2` is taken from
/// a noisy spectral start and overstates the signal, so the plain ratio
/// under-regularizes.
pub const AUTO_PENALTY_SCALE: f64 = 3.0;

/// Empirical-Bayes ridge level `3 sigma_hat^2 / tau_hat^2` for [`alt_min`].
///
/// `sigma_hat^2` comes from duplicate draws when there are enough of them,
/// otherwise from the residuals of an unpenalized fit corrected for the
/// model dimension.
pub fn auto_penalty(start: &Tensor3, obs: &ObservationSet, r: usize) -> Result<f64> {
    let (a, b) = balanced_factors(start, r)?;
    let tau2 = (a.fro_norm().powi(2) + b.fro_norm().powi(2)) / (a.len() + b.len()) as f64;
    if tau2 == 0.0 {
        return Ok(0.0);
    }
    let sigma2 = match duplicate_noise_variance(obs, 30) {
        Some(v) => v,
        None => {
            let [d1, d2, d3] = obs.dims;
            let dof = (r * (d1 + d2 - r) * d3).min(obs.n().saturating_sub(1));
            let fit = alt_min(start, obs, r, 0.0, 20, 1e-4)?;
            objective(&fit, obs) / (obs.n() - dof).max(1) as f64
        }
    };
    Ok(AUTO_PENALTY_SCALE * sigma2 / tau2)
}

/// Ignores the data and returns a fixed tensor (e.g. the truth).
#[derive(Clone, Debug)]
pub struct FixedInit(pub Tensor3);

impl Initializer for FixedInit {
    fn initialize(&self, obs: &ObservationSet) -> Result<Tensor3> {
        check_obs(Some(self.0.dims()), obs)?;
        Ok(self.0.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{generate_ground_truth, sample_observations, GeneratorConfig, Observation};
    use crate::tsvd::tubal_rank;

    fn full_grid(t: &Tensor3) -> ObservationSet {
        let entries = (0..t.len())
            .map(|off| Observation {
                index: t.index_of(off),
                y: t.as_slice()[off],
            })
            .collect();
        ObservationSet::new(t.dims(), entries, 0.0, 0).unwrap()
    }

    #[test]
    fn spectral_init_recovers_fully_observed_tensor() {
        let t = generate_ground_truth(&GeneratorConfig::new([8, 7, 5], 2, 0.0, 1.0, 4)).unwrap();
        let est = spectral_init(&full_grid(&t), 2).unwrap();
        assert!(est.max_abs_diff(&t) < 1e-8);
    }

    #[test]
    fn spectral_init_single_observation() {
        let obs = ObservationSet::new(
            [3, 3, 2],
            vec![Observation { index: [1, 2, 0], y: 1.0 }],
            0.0,
            0,
        )
        .unwrap();
        let est = spectral_init(&obs, 1).unwrap();
        assert!((est.get(1, 2, 0) - 18.0).abs() < 1e-9);
        assert!(est.fro_norm() - 18.0 < 1e-9);
        let empty = ObservationSet::new([3, 3, 2], vec![], 0.0, 0).unwrap();
        assert!(spectral_init(&empty, 1).is_err());
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let cfg = GeneratorConfig::new([10, 10, 4], 2, 0.0, 0.6, 9);
        let t = generate_ground_truth(&cfg).unwrap();
        let obs = sample_observations(&t, &cfg).unwrap();
        let out = refine(&t, &obs, &SolverConfig::new(2)).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.estimate.max_abs_diff(&t) < 1e-10);
    }

    #[test]
    fn backtracking_is_monotone_and_keeps_rank() {
        let cfg = GeneratorConfig::new([16, 14, 6], 2, 0.1, 0.5, 21);
        let t = generate_ground_truth(&cfg).unwrap();
        let obs = sample_observations(&t, &cfg).unwrap();
        let start = spectral_init(&obs, 2).unwrap();
        for retraction in [Retraction::Exact, Retraction::Subspace { power_iters: 2 }] {
            let solver = SolverConfig {
                retraction,
                max_iters: 60,
                ..SolverConfig::new(2)
            };
            let out = refine(&start, &obs, &solver).unwrap();
            for w in out.trace.windows(2) {
                assert!(w[1].objective <= w[0].objective);
            }
            assert!(tubal_rank(&out.estimate, 1e-9).unwrap() <= 2);
            assert!(out.estimate.rmse(&t) < start.rmse(&t));
        }
    }

    #[test]
    fn quality_report_basics() {
        let t = Tensor3::from_fn([3, 3, 3], |j, k, l| (j + k + l) as f64);
        let r = quality_report(&t, &t, 0.5).unwrap();
        assert_eq!((r.max_abs_error, r.fro_error, r.gamma_hat), (0.0, 0.0, 0.0));
        let mut bumped = t.clone().into_vec();
        bumped[5] += 0.5 * 3.0;
        let est = Tensor3::from_vec([3, 3, 3], bumped).unwrap();
        let r = quality_report(&est, &t, 0.5).unwrap();
        assert!((r.max_abs_error - 1.5).abs() < 1e-15);
        assert!((r.gamma_hat - 3.0).abs() < 1e-12);
        assert_eq!(quality_report(&est, &t, 0.0).unwrap().gamma_hat, f64::INFINITY);
    }
}
