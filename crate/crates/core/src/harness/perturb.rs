use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mc::median;
use crate::debias::run_algorithm1;
use crate::error::{Error, Result};
use crate::init::{FixedInit, Initializer, SolverConfig, SpectralRefine};
use crate::io::csv_table;
use crate::rng::derive_seed;
use crate::sampling::{generate_ground_truth, sample_observations, GeneratorConfig, Modulation, NoiseFamily, RowLoading};
use crate::tsvd::{row_distances, truncate_rank};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub dims: [usize; 3],
    pub rank: usize,
    pub sigma: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Start both branches at the truth so only the sampling noise of the
    /// debiasing step perturbs the subspaces.
    #[serde(default = "oracle_default")]
    pub oracle_init: bool,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub noise: NoiseFamily,
    #[serde(default)]
    pub modulation: Modulation,
    #[serde(default)]
    pub row_loading: RowLoading,
}

fn oracle_default() -> bool {
    true
}

impl PerturbSpec {
    pub fn new(dims: [usize; 3], rank: usize, sigma: f64, replicates: usize, seed: u64) -> Self {
        Self {
            dims,
            rank,
            sigma,
            replicates,
            seed,
            oracle_init: true,
            solver: None,
            noise: NoiseFamily::Gaussian,
            modulation: Modulation::default(),
            row_loading: RowLoading::default(),
        }
    }

    fn generator(&self, fraction: f64, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            dims: self.dims,
            rank: self.rank,
            sigma: self.sigma,
            fraction,
            noise: self.noise,
            seed,
            modulation: self.modulation,
            row_loading: self.row_loading,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbRow {
    pub fraction: f64,
    pub n: usize,
    /// Median over replicates of `max_j ||e_j^dagger (U_hat U_hat^dagger - U U^dagger)||`.
    pub median_u: f64,
    pub median_v: f64,
    /// Ratio to the previous row, if any.
    pub ratio_u: Option<f64>,
    pub ratio_v: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbTable {
    pub rows: Vec<PerturbRow>,
    /// Least-squares slope of `log median` against `log n`.
    pub slope_u: f64,
    pub slope_v: f64,
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Row-wise projector distances of the branch-1 factors against the true
/// factors, for every sampling fraction in `fractions`. Each replicate
/// reports the larger of the two branches.
pub fn perturbation_scaling(spec: &PerturbSpec, fractions: &[f64]) -> Result<PerturbTable> {
    if fractions.is_empty() || spec.replicates == 0 {
        return Err(Error::InvalidArgument("need at least one fraction and one replicate".into()));
    }
    let truth_cfg = spec.generator(fractions[0], spec.seed);
    let truth = generate_ground_truth(&truth_cfg)?;
    let reference = truncate_rank(&truth, spec.rank)?.1;
    let init: Box<dyn Initializer> = if spec.oracle_init {
        Box::new(FixedInit(truth.clone()))
    } else {
        Box::new(SpectralRefine(
            spec.solver.clone().unwrap_or_else(|| SolverConfig::new(spec.rank)),
        ))
    };
    let mut rows: Vec<PerturbRow> = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        let dists = (0..spec.replicates)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let seed = derive_seed(spec.seed, ((fi as u64) << 32) | i as u64);
                let obs = sample_observations(&truth, &spec.generator(fraction, seed))?;
                let state = run_algorithm1(&obs, init.as_ref(), spec.rank, seed)?;
                let (u1, v1) = row_distances(state.factors[0].spectral(), reference.spectral())?;
                let (u2, v2) = row_distances(state.factors[1].spectral(), reference.spectral())?;
                Ok((u1.max(u2), v1.max(v2)))
            })
            .collect::<Result<Vec<_>>>()?;
        let (us, vs): (Vec<f64>, Vec<f64>) = dists.into_iter().unzip();
        let (median_u, median_v) = (median(&us), median(&vs));
        let prev = rows.last();
        rows.push(PerturbRow {
            fraction,
            n: spec.generator(fraction, 0).sample_size(),
            median_u,
            median_v,
            ratio_u: prev.map(|p| median_u / p.median_u),
            ratio_v: prev.map(|p| median_v / p.median_v),
        });
    }
    let log_n: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let fit = |f: fn(&PerturbRow) -> f64| {
        if rows.len() < 2 {
            f64::NAN
        } else {
            slope(&log_n, &rows.iter().map(|r| f(r).ln()).collect::<Vec<_>>())
        }
    };
    Ok(PerturbTable {
        slope_u: fit(|r| r.median_u),
        slope_v: fit(|r| r.median_v),
        rows,
    })
}

impl PerturbTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv_table(
            BufWriter::new(File::create(path)?),
            &["fraction", "n", "median_u", "median_v", "ratio_u", "ratio_v"],
        )?;
        for r in &self.rows {
            w.serialize((r.fraction, r.n, r.median_u, r.median_v, r.ratio_u, r.ratio_v))?;
        }
        w.flush()?;
        Ok(())
    }
}
