use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normality::{normality_check, NormalityReport};
use crate::debias::{infer, run_algorithm1, InferenceReport};
use crate::error::{Error, Result};
use crate::init::{Initializer, SolverConfig, SpectralRefine};
use crate::io::csv_table;
use crate::mask::{linear_form, reference_masks, LinearFunctionalMask, MaskSpec};
use crate::rng::{derive_seed, rng_for, Purpose};
use crate::sampling::{generate_ground_truth, sample_observations, GeneratorConfig, Modulation, NoiseFamily, RowLoading};
use crate::tensor::Tensor3;

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.05;

fn default_alpha() -> f64 {
    0.05
}

fn default_gain_locations() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dims: [usize; 3],
    pub rank: usize,
    pub sigma: f64,
    pub fraction: f64,
    pub replicates: usize,
    /// Empty means the four reference masks.
    #[serde(default)]
    pub masks: Vec<MaskSpec>,
    /// Defaults to `SolverConfig::new(rank)`.
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub noise: NoiseFamily,
    #[serde(default)]
    pub modulation: Modulation,
    #[serde(default)]
    pub row_loading: RowLoading,
    /// Also fit the initializer on the full sample of every replicate.
    #[serde(default)]
    pub full_refine: bool,
    /// Number of fixed entries tracked for the pixel-wise gains.
    #[serde(default = "default_gain_locations")]
    pub gain_locations: usize,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(dims: [usize; 3], rank: usize, sigma: f64, fraction: f64, replicates: usize, seed: u64) -> Self {
        Self {
            dims,
            rank,
            sigma,
            fraction,
            replicates,
            masks: Vec::new(),
            solver: None,
            seed,
            alpha: default_alpha(),
            noise: NoiseFamily::Gaussian,
            modulation: Modulation::default(),
            row_loading: RowLoading::default(),
            full_refine: false,
            gain_locations: default_gain_locations(),
            threads: None,
        }
    }

    /// 60 x 60 x 30, rank 3, sigma 0.5, 40% sampling, 300 replicates.
    pub fn desk(seed: u64) -> Self {
        Self::new([60, 60, 30], 3, 0.5, 0.4, 300, seed)
    }

    pub fn solver(&self) -> SolverConfig {
        self.solver.clone().unwrap_or_else(|| SolverConfig::new(self.rank))
    }

    pub fn mask_specs(&self) -> Vec<MaskSpec> {
        if self.masks.is_empty() {
            reference_masks(self.dims)
        } else {
            self.masks.clone()
        }
    }

    pub fn truth_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            dims: self.dims,
            rank: self.rank,
            sigma: self.sigma,
            fraction: self.fraction,
            noise: self.noise,
            seed: self.seed,
            modulation: self.modulation,
            row_loading: self.row_loading,
        }
    }

    /// Sampling configuration of replicate `i`.
    pub fn replicate_config(&self, i: usize) -> GeneratorConfig {
        GeneratorConfig {
            seed: derive_seed(self.seed, i as u64),
            ..self.truth_config()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.truth_config().validate()?;
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {}", self.alpha)));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        let solver = self.solver();
        solver.validate()?;
        if solver.rank != self.rank {
            return Err(Error::InvalidArgument(format!(
                "solver rank {} differs from experiment rank {}",
                solver.rank, self.rank
            )));
        }
        let names: BTreeSet<_> = self.mask_specs().iter().map(|m| m.name.clone()).collect();
        if names.len() != self.mask_specs().len() {
            return Err(Error::InvalidArgument("mask names must be distinct".into()));
        }
        for m in self.mask_specs() {
            m.to_mask(self.dims)?;
        }
        Ok(())
    }
}

/// Estimator stages tracked by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "Init-1")]
    Init1,
    #[serde(rename = "Init-2")]
    Init2,
    #[serde(rename = "Unbs-1")]
    Unbs1,
    #[serde(rename = "Unbs-2")]
    Unbs2,
    #[serde(rename = "Proj-1")]
    Proj1,
    #[serde(rename = "Proj-2")]
    Proj2,
    Final,
    /// Initializer fit on the whole sample, no splitting.
    FullRefine,
}

impl Stage {
    pub const SPLIT: [Stage; 7] = [
        Stage::Init1,
        Stage::Init2,
        Stage::Unbs1,
        Stage::Unbs2,
        Stage::Proj1,
        Stage::Proj2,
        Stage::Final,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Init1 => "Init-1",
            Stage::Init2 => "Init-2",
            Stage::Unbs1 => "Unbs-1",
            Stage::Unbs2 => "Unbs-2",
            Stage::Proj1 => "Proj-1",
            Stage::Proj2 => "Proj-2",
            Stage::Final => "Final",
            Stage::FullRefine => "FullRefine",
        }
    }
}

/// Bias, SD and MSE of `<stage estimate, M>` over replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMetric {
    pub mask: String,
    pub stage: Stage,
    /// `mean <T_stage - T, M>`.
    pub bias: f64,
    /// Population standard deviation of `<T_stage, M>`.
    pub sd: f64,
    /// `mean <T_stage - T, M>^2`, equal to `bias^2 + sd^2`.
    pub mse: f64,
    /// Median over replicates of the squared error.
    pub median_sq_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    /// Interval for `<T, M>`.
    Parameter,
    /// Observation interval, scored against a fresh `<T, M> + xi`.
    Observation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub mask: String,
    pub interval: IntervalKind,
    pub width_mean: f64,
    /// Monte-Carlo standard error of `width_mean`.
    pub width_se: f64,
    pub coverage: f64,
    /// `sqrt(p (1 - p) / R)`.
    pub coverage_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskInference {
    pub mask: String,
    pub truth: f64,
    pub oracle_s_m: f64,
    pub mean_s_hat: f64,
    pub standardized: Vec<f64>,
    pub normality: Option<NormalityReport>,
}

/// Quantiles of pixel-wise reductions of one error metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    /// `init-proj`, `proj-final` or `full-final`.
    pub comparison: String,
    /// `abs_bias`, `variance` or `mse`.
    pub metric: String,
    pub count: usize,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub spec: ExperimentSpec,
    pub n: usize,
    pub completed: usize,
    pub failed: usize,
    pub stages: Vec<Stage>,
    pub stage_metrics: Vec<StageMetric>,
    /// `sqrt(mean ||T_stage - T||_F^2 / d*)`, aligned with `stages`.
    pub tensor_rmse: Vec<f64>,
    /// Per completed replicate, aligned with `stages`.
    pub replicate_rmse: Vec<Vec<f64>>,
    pub coverage: Vec<CoverageRow>,
    pub inference: Vec<MaskInference>,
    pub sigma_hat_mean: f64,
    pub gains: Vec<GainRow>,
    /// Share of tracked entries with `Var[Proj-a] <= Var[Unbs-a]`, both
    /// branches pooled.
    pub retraction_variance_share: f64,
    /// Offsets of the tracked entries.
    pub gain_locations: Vec<usize>,
}

impl McSummary {
    pub fn stage_index(&self, stage: Stage) -> Option<usize> {
        self.stages.iter().position(|&s| s == stage)
    }

    pub fn metric(&self, mask: &str, stage: Stage) -> Option<&StageMetric> {
        self.stage_metrics
            .iter()
            .find(|m| m.mask == mask && m.stage == stage)
    }

    pub fn coverage_row(&self, mask: &str, interval: IntervalKind) -> Option<&CoverageRow> {
        self.coverage
            .iter()
            .find(|c| c.mask == mask && c.interval == interval)
    }

    /// Writes `table1.csv`, `table2.csv`, `gains.csv`, `hist_<mask>.csv`
    /// and `summary.json` into `dir`.
    pub fn write_tables(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;

        let mut t1 = csv_table(
            BufWriter::new(File::create(dir.join("table1.csv"))?),
            &["mask", "stage", "bias", "sd", "mse", "median_sq_error"],
        )?;
        for m in &self.stage_metrics {
            t1.serialize((&m.mask, m.stage.label(), m.bias, m.sd, m.mse, m.median_sq_error))?;
        }
        for (s, rmse) in self.stages.iter().zip(&self.tensor_rmse) {
            t1.serialize(("tensor_rmse", s.label(), "", "", rmse * rmse, ""))?;
        }
        t1.flush()?;

        let mut t2 = csv_table(
            BufWriter::new(File::create(dir.join("table2.csv"))?),
            &["mask", "interval", "width_mean", "width_se", "coverage", "coverage_se"],
        )?;
        for c in &self.coverage {
            let kind = match c.interval {
                IntervalKind::Parameter => "parameter",
                IntervalKind::Observation => "observation",
            };
            t2.serialize((&c.mask, kind, c.width_mean, c.width_se, c.coverage, c.coverage_se))?;
        }
        t2.flush()?;

        let mut g = csv_table(
            BufWriter::new(File::create(dir.join("gains.csv"))?),
            &["comparison", "metric", "count", "q05", "q25", "q50", "q75", "q95"],
        )?;
        for row in &self.gains {
            g.serialize((&row.comparison, &row.metric, row.count, row.q05, row.q25, row.q50, row.q75, row.q95))?;
        }
        g.flush()?;

        for inf in &self.inference {
            if let Some(rep) = &inf.normality {
                let mut h = csv_table(
                    BufWriter::new(File::create(dir.join(format!("hist_{}.csv", inf.mask)))?),
                    &["bin_low", "bin_high", "count", "density", "normal_density"],
                )?;
                for b in &rep.bins {
                    h.serialize((b.low, b.high, b.count, b.density, b.normal_density))?;
                }
                h.flush()?;
            }
        }

        let json = serde_json::json!({
            "schema_version": crate::io::CSV_SCHEMA_VERSION,
            "generator": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
            "summary": self,
        });
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&json)?)?;
        Ok(())
    }
}

struct Replicate {
    /// `[mask][stage]` errors `<T_stage - T, M>`.
    mask_err: Vec<Vec<f64>>,
    /// `||T_stage - T||_F^2` per stage.
    sq_err: Vec<f64>,
    /// `[location][stage]` entry errors.
    loc_err: Vec<Vec<f64>>,
    reports: Vec<InferenceReport>,
    /// Whether the observation interval of each mask holds a fresh noisy
    /// value `<T, M> + xi`.
    covered_noisy: Vec<bool>,
    sigma_hat: f64,
}

fn run_replicate(
    spec: &ExperimentSpec,
    truth: &Tensor3,
    masks: &[(String, LinearFunctionalMask)],
    locations: &[usize],
    init: &dyn Initializer,
    i: usize,
) -> Result<Replicate> {
    let cfg = spec.replicate_config(i);
    let obs = sample_observations(truth, &cfg)?;
    let state = run_algorithm1(&obs, init, spec.rank, derive_seed(cfg.seed, 0))?;
    let full = if spec.full_refine {
        Some(init.initialize(&obs)?)
    } else {
        None
    };
    let mut tensors = vec![
        &state.t_init[0],
        &state.t_init[1],
        &state.t_unbs[0],
        &state.t_unbs[1],
        &state.t_proj[0],
        &state.t_proj[1],
        &state.t_hat,
    ];
    if let Some(f) = &full {
        tensors.push(f);
    }
    let truth_data = truth.as_slice();
    let sq_err = tensors
        .iter()
        .map(|t| {
            let d = (*t - truth).fro_norm();
            d * d
        })
        .collect::<Vec<_>>();
    if sq_err.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("replicate {i} estimate")));
    }
    let mut mask_err = Vec::with_capacity(masks.len());
    let mut reports = Vec::with_capacity(masks.len());
    let mut covered_noisy = Vec::with_capacity(masks.len());
    let mut fresh = rng_for(cfg.seed, Purpose::Noise, 1);
    for (name, m) in masks {
        let value = linear_form(truth, m)?;
        mask_err.push(
            tensors
                .iter()
                .map(|t| linear_form(t, m).map(|v| v - value))
                .collect::<Result<Vec<_>>>()?,
        );
        let report = infer(&state, name, m, spec.alpha, Some(truth))?;
        let y = value + spec.noise.sample(spec.sigma, &mut fresh);
        covered_noisy.push(report.ci_obs_low <= y && y <= report.ci_obs_high);
        reports.push(report);
    }
    let loc_err = locations
        .iter()
        .map(|&off| tensors.iter().map(|t| t.as_slice()[off] - truth_data[off]).collect())
        .collect();
    Ok(Replicate {
        mask_err,
        sq_err,
        loc_err,
        sigma_hat: reports.first().map_or(0.0, |r| r.sigma_hat),
        reports,
        covered_noisy,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance.
fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile(&s, 0.5)
}

fn gain_row(comparison: &str, metric: &str, mut values: Vec<f64>) -> GainRow {
    values.sort_by(f64::total_cmp);
    GainRow {
        comparison: comparison.into(),
        metric: metric.into(),
        count: values.len(),
        q05: quantile(&values, 0.05),
        q25: quantile(&values, 0.25),
        q50: quantile(&values, 0.5),
        q75: quantile(&values, 0.75),
        q95: quantile(&values, 0.95),
    }
}

fn pick_locations(spec: &ExperimentSpec) -> Vec<usize> {
    let d_star: usize = spec.dims.iter().product();
    let want = spec.gain_locations.min(d_star);
    let mut rng = rng_for(spec.seed, Purpose::Mask, 0);
    let mut chosen = BTreeSet::new();
    while chosen.len() < want {
        chosen.insert(rng.gen_range(0..d_star));
    }
    chosen.into_iter().collect()
}

/// Runs the experiment with the spec's solver.
pub fn run_monte_carlo(spec: &ExperimentSpec) -> Result<McSummary> {
    spec.validate()?;
    run_monte_carlo_with(spec, &SpectralRefine(spec.solver()))
}

/// Runs the experiment with an arbitrary initializer.
pub fn run_monte_carlo_with(spec: &ExperimentSpec, init: &dyn Initializer) -> Result<McSummary> {
    spec.validate()?;
    let truth = generate_ground_truth(&spec.truth_config())?;
    let masks = spec
        .mask_specs()
        .iter()
        .map(|m| Ok((m.name.clone(), m.to_mask(spec.dims)?)))
        .collect::<Result<Vec<_>>>()?;
    let locations = pick_locations(spec);
    let job = || -> Vec<Result<Replicate>> {
        (0..spec.replicates)
            .into_par_iter()
            .map(|i| run_replicate(spec, &truth, &masks, &locations, init, i))
            .collect()
    };
    let results = match spec.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    };
    let mut failed = 0;
    let mut reps = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(r) => reps.push(r),
            Err(e) => {
                failed += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if reps.is_empty() || failed as f64 > MAX_FAILURE_RATE * spec.replicates as f64 {
        return Err(first_error.unwrap_or_else(|| Error::InvalidArgument("no replicates".into())));
    }
    summarize(spec, &truth, &masks, locations, reps, failed)
}

fn summarize(
    spec: &ExperimentSpec,
    truth: &Tensor3,
    masks: &[(String, LinearFunctionalMask)],
    locations: Vec<usize>,
    reps: Vec<Replicate>,
    failed: usize,
) -> Result<McSummary> {
    let mut stages = Stage::SPLIT.to_vec();
    if spec.full_refine {
        stages.push(Stage::FullRefine);
    }
    let r = reps.len();
    let d_star = truth.len() as f64;

    let mut stage_metrics = Vec::new();
    for (mi, (name, _)) in masks.iter().enumerate() {
        for (si, &stage) in stages.iter().enumerate() {
            let errs: Vec<f64> = reps.iter().map(|rep| rep.mask_err[mi][si]).collect();
            let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
            stage_metrics.push(StageMetric {
                mask: name.clone(),
                stage,
                bias: mean(&errs),
                sd: variance(&errs).sqrt(),
                mse: mean(&sq),
                median_sq_error: median(&sq),
            });
        }
    }

    let replicate_rmse: Vec<Vec<f64>> = reps
        .iter()
        .map(|rep| rep.sq_err.iter().map(|s| (s / d_star).sqrt()).collect())
        .collect();
    let tensor_rmse = (0..stages.len())
        .map(|si| (reps.iter().map(|rep| rep.sq_err[si]).sum::<f64>() / (r as f64 * d_star)).sqrt())
        .collect();

    let mut coverage = Vec::new();
    let mut inference = Vec::new();
    for (mi, (name, _)) in masks.iter().enumerate() {
        let reports: Vec<&InferenceReport> = reps.iter().map(|rep| &rep.reports[mi]).collect();
        for kind in [IntervalKind::Parameter, IntervalKind::Observation] {
            let (widths, hits): (Vec<f64>, Vec<bool>) = reps
                .iter()
                .map(|rep| {
                    let r = &rep.reports[mi];
                    match kind {
                        IntervalKind::Parameter => {
                            (r.ci_high - r.ci_low, r.truth.as_ref().expect("truth supplied").covered)
                        }
                        IntervalKind::Observation => (r.ci_obs_high - r.ci_obs_low, rep.covered_noisy[mi]),
                    }
                })
                .unzip();
            let p = hits.iter().filter(|&&h| h).count() as f64 / r as f64;
            let width_se = if r > 1 {
                (variance(&widths) * r as f64 / (r - 1) as f64 / r as f64).sqrt()
            } else {
                0.0
            };
            coverage.push(CoverageRow {
                mask: name.clone(),
                interval: kind,
                width_mean: mean(&widths),
                width_se,
                coverage: p,
                coverage_se: (p * (1.0 - p) / r as f64).sqrt(),
            });
        }
        let diag = reports[0].truth.as_ref().expect("truth supplied");
        let standardized: Vec<f64> = reports
            .iter()
            .map(|rep| rep.truth.as_ref().expect("truth supplied").standardized)
            .collect();
        let normality = if standardized.iter().all(|z| z.is_finite()) {
            normality_check(&standardized).ok()
        } else {
            None
        };
        inference.push(MaskInference {
            mask: name.clone(),
            truth: diag.truth,
            oracle_s_m: diag.oracle_s_m,
            mean_s_hat: mean(&reports.iter().map(|rep| rep.s_hat).collect::<Vec<_>>()),
            standardized,
            normality,
        });
    }

    // Per-location bias, variance and MSE of every stage.
    let loc_stats: Vec<Vec<[f64; 3]>> = (0..locations.len())
        .map(|li| {
            (0..stages.len())
                .map(|si| {
                    let errs: Vec<f64> = reps.iter().map(|rep| rep.loc_err[li][si]).collect();
                    let b = mean(&errs);
                    let v = variance(&errs);
                    [b.abs(), v, b * b + v]
                })
                .collect()
        })
        .collect();
    let idx = |s: Stage| stages.iter().position(|&x| x == s).expect("stage present");
    let mut pairs = vec![
        ("init-proj", vec![(idx(Stage::Init1), idx(Stage::Proj1)), (idx(Stage::Init2), idx(Stage::Proj2))]),
        ("proj-final", vec![(idx(Stage::Proj1), idx(Stage::Final)), (idx(Stage::Proj2), idx(Stage::Final))]),
    ];
    if spec.full_refine {
        pairs.push(("full-final", vec![(idx(Stage::FullRefine), idx(Stage::Final))]));
    }
    let mut gains = Vec::new();
    for (label, pair) in &pairs {
        for (k, metric) in ["abs_bias", "variance", "mse"].iter().enumerate() {
            let values = loc_stats
                .iter()
                .flat_map(|st| pair.iter().map(move |&(a, b)| st[a][k] - st[b][k]))
                .collect();
            gains.push(gain_row(label, metric, values));
        }
    }
    let retraction_pairs = [(idx(Stage::Unbs1), idx(Stage::Proj1)), (idx(Stage::Unbs2), idx(Stage::Proj2))];
    let total = loc_stats.len() * retraction_pairs.len();
    let kept = loc_stats
        .iter()
        .flat_map(|st| retraction_pairs.iter().map(move |&(u, p)| st[p][1] <= st[u][1]))
        .filter(|&b| b)
        .count();

    Ok(McSummary {
        spec: spec.clone(),
        n: spec.truth_config().sample_size(),
        completed: r,
        failed,
        stages,
        stage_metrics,
        tensor_rmse,
        replicate_rmse,
        coverage,
        inference,
        sigma_hat_mean: mean(&reps.iter().map(|rep| rep.sigma_hat).collect::<Vec<_>>()),
        gains,
        retraction_variance_share: if total > 0 { kept as f64 / total as f64 } else { f64::NAN },
        gain_locations: locations,
    })
}
