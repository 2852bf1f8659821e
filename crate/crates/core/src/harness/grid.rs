use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::debias::{estimate_sigma, run_algorithm1, z_value, DebiasState};
use crate::error::{Error, Result};
use crate::init::{SolverConfig, SpectralRefine};
use crate::io::{read_tns3, write_tns3, CSV_SCHEMA_VERSION};
use crate::rng::{rng_for, Purpose};
use crate::sampling::{Observation, ObservationSet};
use crate::tensor::Tensor3;

/// Which entries of the input count as observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GridMask {
    /// Hide each entry independently with probability `missing`.
    Fraction { missing: f64 },
    /// TNS3 tensor of the input's shape; nonzero entries are observed.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
}

impl GridConfig {
    pub fn new(rank: usize, alpha: f64, seed: u64) -> Self {
        Self {
            rank,
            alpha,
            seed,
            solver: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub schema_version: u32,
    pub generator: String,
    pub dims: [usize; 3],
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
    pub n_observed: usize,
    pub observed_fraction: f64,
    pub sigma_hat: f64,
    /// RMSE of the imputed tensor against the input on hidden entries.
    pub rmse_hidden: f64,
    /// Same for the per-slice observed-mean fill.
    pub rmse_baseline: f64,
    pub width_min: f64,
    pub width_max: f64,
    pub width_mean: f64,
    /// Pearson correlation between CI width and `|input|` over all entries.
    pub width_abs_value_corr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub imputed: Tensor3,
    pub ci_low: Tensor3,
    pub ci_high: Tensor3,
    pub ci_obs_low: Tensor3,
    pub ci_obs_high: Tensor3,
    pub width: Tensor3,
    pub observed: Vec<bool>,
    pub summary: GridSummary,
}

/// Per-entry `s_hat` of every single-entry mask:
/// `s_hat(j,k,l)^2 = 1/2 sum_a (||e_j^dagger U_a||^2 + ||e_k^dagger V_a||^2)`,
/// which does not depend on `l`.
pub fn entry_s_hat(state: &DebiasState) -> Tensor3 {
    let energies: Vec<(Vec<f64>, Vec<f64>)> = state
        .factors
        .iter()
        .map(|f| (f.spectral().u_row_energy(), f.spectral().v_row_energy()))
        .collect();
    Tensor3::from_fn(state.dims(), |j, k, _| {
        (0.5 * energies.iter().map(|(u, v)| u[j] + v[k]).sum::<f64>()).sqrt()
    })
}

pub fn random_observed(dims: [usize; 3], missing: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&missing) {
        return Err(Error::InvalidArgument(format!("missing fraction {missing}")));
    }
    let mut rng = rng_for(seed, Purpose::Mask, 0);
    Ok((0..dims.iter().product::<usize>())
        .map(|_| rng.gen::<f64>() >= missing)
        .collect())
}

fn slice_mean_fill(data: &Tensor3, observed: &[bool]) -> Tensor3 {
    let [d1, d2, d3] = data.dims();
    let v = data.as_slice();
    let global = {
        let (s, c) = v
            .iter()
            .zip(observed)
            .filter(|(_, &o)| o)
            .fold((0.0, 0usize), |(s, c), (x, _)| (s + x, c + 1));
        s / c.max(1) as f64
    };
    let per_slice: Vec<f64> = (0..d3)
        .map(|l| {
            let range = l * d1 * d2..(l + 1) * d1 * d2;
            let (s, c) = v[range.clone()]
                .iter()
                .zip(&observed[range])
                .filter(|(_, &o)| o)
                .fold((0.0, 0usize), |(s, c), (x, _)| (s + x, c + 1));
            if c == 0 {
                global
            } else {
                s / c as f64
            }
        })
        .collect();
    Tensor3::from_fn(data.dims(), |_, _, l| per_slice[l])
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        f64::NAN
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn hidden_rmse(a: &Tensor3, b: &Tensor3, observed: &[bool]) -> f64 {
    let (s, c) = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(observed)
        .filter(|(_, &o)| !o)
        .fold((0.0, 0usize), |(s, c), ((x, y), _)| (s + (x - y).powi(2), c + 1));
    if c == 0 {
        0.0
    } else {
        (s / c as f64).sqrt()
    }
}

/// Imputes the hidden entries of `data` and attaches per-entry intervals.
pub fn grid_impute(data: &Tensor3, observed: &[bool], cfg: &GridConfig) -> Result<GridResult> {
    let dims = data.dims();
    if observed.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} entries, tensor {}",
            observed.len(),
            data.len()
        )));
    }
    if cfg.rank == 0 || cfg.rank > dims[0].min(dims[1]) {
        return Err(Error::InvalidArgument(format!("rank {} for dims {dims:?}", cfg.rank)));
    }
    let z = z_value(cfg.alpha)?;
    let entries: Vec<Observation> = observed
        .iter()
        .enumerate()
        .filter(|(_, &o)| o)
        .map(|(off, _)| Observation {
            index: data.index_of(off),
            y: data.as_slice()[off],
        })
        .collect();
    let obs = ObservationSet::new(dims, entries, 0.0, cfg.seed)?;
    let solver = cfg.solver.clone().unwrap_or_else(|| SolverConfig::new(cfg.rank));
    let state = run_algorithm1(&obs, &SpectralRefine(solver), cfg.rank, cfg.seed)?;
    let sigma_hat = estimate_sigma(&state);
    let scale = (data.len() as f64 / obs.n() as f64).sqrt();
    let s_hat = entry_s_hat(&state);
    let half = Tensor3::from_fn(dims, |j, k, l| z * sigma_hat * s_hat.get(j, k, l) * scale);
    let est = &state.t_hat;
    let ci_low = est - &half;
    let ci_high = est + &half;
    let obs_half = Tensor3::from_fn(dims, |j, k, l| half.get(j, k, l) + z * sigma_hat);
    let ci_obs_low = est - &obs_half;
    let ci_obs_high = est + &obs_half;
    let width = half.clone().scale(2.0);
    let abs_data: Vec<f64> = data.as_slice().iter().map(|v| v.abs()).collect();
    let w = width.as_slice();
    let summary = GridSummary {
        schema_version: CSV_SCHEMA_VERSION,
        generator: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
        dims,
        rank: cfg.rank,
        alpha: cfg.alpha,
        seed: cfg.seed,
        n_observed: obs.n(),
        observed_fraction: obs.n() as f64 / data.len() as f64,
        sigma_hat,
        rmse_hidden: hidden_rmse(est, data, observed),
        rmse_baseline: hidden_rmse(&slice_mean_fill(data, observed), data, observed),
        width_min: w.iter().copied().fold(f64::INFINITY, f64::min),
        width_max: w.iter().copied().fold(0.0, f64::max),
        width_mean: w.iter().sum::<f64>() / w.len() as f64,
        width_abs_value_corr: correlation(w, &abs_data),
        input: None,
    };
    Ok(GridResult {
        imputed: state.t_hat.clone(),
        ci_low,
        ci_high,
        ci_obs_low,
        ci_obs_high,
        width,
        observed: observed.to_vec(),
        summary,
    })
}

impl GridResult {
    /// Writes the tensors as TNS3 files and `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_tns3(dir.join("imputed.tns3"), &self.imputed)?;
        write_tns3(dir.join("ci_low.tns3"), &self.ci_low)?;
        write_tns3(dir.join("ci_high.tns3"), &self.ci_high)?;
        write_tns3(dir.join("ci_obs_low.tns3"), &self.ci_obs_low)?;
        write_tns3(dir.join("ci_obs_high.tns3"), &self.ci_obs_high)?;
        write_tns3(dir.join("ci_width.tns3"), &self.width)?;
        let mask = Tensor3::from_vec(
            self.imputed.dims(),
            self.observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
        )?;
        write_tns3(dir.join("observed.tns3"), &mask)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        Ok(())
    }
}

/// File-based pipeline: read `input`, hide entries per `mask`, impute,
/// write every artifact into `out_dir`.
pub fn grid_pipeline(input: &Path, mask: &GridMask, cfg: &GridConfig, out_dir: &Path) -> Result<GridSummary> {
    let data = read_tns3(input)?;
    let observed = match mask {
        GridMask::Fraction { missing } => random_observed(data.dims(), *missing, cfg.seed)?,
        GridMask::File { path } => {
            let m = read_tns3(path)?;
            if m.dims() != data.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "mask {:?} vs input {:?}",
                    m.dims(),
                    data.dims()
                )));
            }
            m.as_slice().iter().map(|&v| v != 0.0).collect()
        }
    };
    let mut result = grid_impute(&data, &observed, cfg)?;
    result.summary.input = Some(input.display().to_string());
    result.write(out_dir)?;
    Ok(result.summary)
}
