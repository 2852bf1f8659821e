use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tubal::debias::{infer, run_algorithm1, InferenceReport};
use tubal::harness::{
    grid_pipeline, perturbation_scaling, run_monte_carlo, ExperimentSpec, GridConfig, GridMask, PerturbSpec,
};
use tubal::init::{
    refine, spectral_init, Penalty, Retraction, RidgeConfig, SolverConfig, SpectralRefine, StepRule,
};
use tubal::io::{
    csv_table, read_observations, read_tns3, write_factors, write_observations, write_tns3, write_trace_csv,
};
use tubal::mask::{LinearFunctionalMask, MaskSpec};
use tubal::sampling::{generate_ground_truth, sample_observations, GeneratorConfig, Modulation, NoiseFamily, RowLoading};
use tubal::tsvd::{diagnostics, truncate_rank, DEFAULT_RANK_TOL};

/// Low-tubal-rank tensor completion with confidence intervals.
///
/// Exit status: 0 on success, 1 on runtime failure, 2 on usage errors.
/// Every output file is written under `--out`.
#[derive(Debug, Parser)]
#[command(name = "tubal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Format of report files.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Size of the worker pool (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a ground-truth tensor and a noisy sample of its entries.
    Simulate(SimulateArgs),
    /// Run the cross-fitted estimator on an observation file.
    Complete(CompleteArgs),
    /// Confidence intervals for linear functionals of the estimate.
    Infer(InferArgs),
    /// Monte-Carlo study of bias, variance and coverage.
    Mc(McArgs),
    /// Spectral diagnostics of a tensor at a given rank.
    Diagnose(DiagnoseArgs),
    /// Impute a tensor file with per-entry confidence bounds.
    Grid(GridArgs),
    /// Row-wise subspace error against the sample size.
    Perturb(PerturbArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Noise {
    Gaussian,
    UniformBounded,
    Rademacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Rows {
    GroupIndicator,
    Gaussian,
}

impl From<Rows> for RowLoading {
    fn from(r: Rows) -> Self {
        match r {
            Rows::GroupIndicator => RowLoading::GroupIndicator,
            Rows::Gaussian => RowLoading::Gaussian,
        }
    }
}

impl From<Noise> for NoiseFamily {
    fn from(n: Noise) -> Self {
        match n {
            Noise::Gaussian => NoiseFamily::Gaussian,
            Noise::UniformBounded => NoiseFamily::UniformBounded,
            Noise::Rademacher => NoiseFamily::Rademacher,
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    d1: usize,
    #[arg(long)]
    d2: usize,
    #[arg(long)]
    d3: usize,
    /// Tubal rank.
    #[arg(long, default_value_t = 3)]
    rank: usize,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, value_enum, default_value_t = Noise::Gaussian)]
    noise: Noise,
    /// Random modulation of the singular tubes across frequencies.
    #[arg(long, default_value_t = 0.1)]
    amplitude: f64,
    /// Phase rotation per frequency, in radians.
    #[arg(long, default_value_t = 0.2)]
    phase_drift: f64,
    /// Row factor of the truth: shared 0/1 groups or Gaussian per frequency.
    #[arg(long, value_enum, default_value_t = Rows::GroupIndicator)]
    rows: Rows,
}

impl ModelArgs {
    fn dims(&self) -> [usize; 3] {
        [self.d1, self.d2, self.d3]
    }

    fn modulation(&self) -> Modulation {
        Modulation {
            amplitude: self.amplitude,
            phase_drift: self.phase_drift,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.dims().contains(&0) {
            return usage("dimensions must be positive");
        }
        check_rank(self.rank, self.dims())?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return usage("--sigma must be a nonnegative number");
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite() && self.phase_drift.is_finite()) {
            return usage("--amplitude must be nonnegative and --phase-drift finite");
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Projected-gradient iteration cap.
    #[arg(long, default_value_t = 300)]
    max_iters: usize,
    /// Relative objective decrease that stops projected gradient.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Ridge level of the alternating-least-squares stage, or `auto`.
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// Skip the ridge stage and use projected gradient only.
    #[arg(long)]
    no_ridge: bool,
    /// Run projected gradient after the ridge stage.
    #[arg(long)]
    polish: bool,
    /// Power iterations of the subspace retraction; 0 uses exact t-SVD.
    #[arg(long, default_value_t = 2)]
    power_iters: usize,
}

impl SolverArgs {
    fn config(&self, rank: usize, seed: u64) -> Result<SolverConfig, CliError> {
        let penalty = if self.lambda == "auto" {
            Penalty::Auto
        } else {
            match self.lambda.parse::<f64>() {
                Ok(lambda) if lambda >= 0.0 && lambda.is_finite() => Penalty::Fixed { lambda },
                _ => return usage("--lambda must be `auto` or a nonnegative number"),
            }
        };
        let cfg = SolverConfig {
            rank,
            max_iters: self.max_iters,
            step: StepRule::Backtracking { eta0: 1.0 },
            tol: self.tol,
            seed,
            retraction: if self.power_iters == 0 {
                Retraction::Exact
            } else {
                Retraction::Subspace {
                    power_iters: self.power_iters,
                }
            },
            ridge: (!self.no_ridge).then_some(RidgeConfig {
                penalty,
                ..RidgeConfig::default()
            }),
            polish: self.polish,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of draws as a fraction of d1 d2 d3.
    #[arg(long, default_value_t = 0.4)]
    frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    /// Observation file (JSON lines).
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the projected-gradient trace of a full-sample fit.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    rank: usize,
    /// Mask items `j,k,l:w` joined by `;` (one-based, weight defaults to 1).
    #[arg(long, conflicts_with = "mask_file", required_unless_present = "mask_file")]
    mask: Option<String>,
    /// JSON array of `{name, entries: [{j, k, l, w}]}`.
    #[arg(long)]
    mask_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Ground-truth tensor; adds coverage diagnostics to the report.
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct McArgs {
    /// Experiment spec (JSON). Overrides every other model flag.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    d1: usize,
    #[arg(long, default_value_t = 60)]
    d2: usize,
    #[arg(long, default_value_t = 30)]
    d3: usize,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0.4)]
    frac: f64,
    #[arg(long, default_value_t = 300)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add a full-sample fit of every replicate as a baseline stage.
    #[arg(long)]
    full_refine: bool,
    /// Entries tracked for the pixel-wise gain quantiles.
    #[arg(long, default_value_t = 1000)]
    gain_locations: usize,
    /// Row factor of the truth: shared 0/1 groups or Gaussian per frequency.
    #[arg(long, value_enum, default_value_t = Rows::GroupIndicator)]
    rows: Rows,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    rank: usize,
    /// Mask for the alignment constant, same grammar as `infer --mask`.
    #[arg(long)]
    mask: Option<String>,
    /// Reference tensor for the row-wise projector distances.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Noise level for the signal-to-noise ratio.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Input tensor (TNS3).
    #[arg(long)]
    input: PathBuf,
    /// Share of entries hidden at random.
    #[arg(long, conflicts_with = "mask_file", required_unless_present = "mask_file")]
    missing: Option<f64>,
    /// TNS3 tensor whose nonzero entries are observed.
    #[arg(long)]
    mask_file: Option<PathBuf>,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Sampling fractions, comma separated.
    #[arg(long, default_value = "0.2,0.4,0.8", value_delimiter = ',')]
    fractions: Vec<f64>,
    /// Fit both branches with the solver instead of starting at the truth.
    #[arg(long)]
    solver_init: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(tubal::Error),
}

impl From<tubal::Error> for CliError {
    fn from(e: tubal::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn check_rank(rank: usize, dims: [usize; 3]) -> Result<(), CliError> {
    if rank == 0 || rank > dims[0].min(dims[1]) {
        return usage(format!("--rank {rank} must lie in 1..={}", dims[0].min(dims[1])));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return usage("--alpha must lie in (0, 1)");
    }
    Ok(())
}

fn check_file(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return usage(format!("{} is not a readable file", path.display()));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads == Some(0) {
        return usage("--threads must be at least 1");
    }
    let out = cli.out.as_path();
    let fmt = cli.format;
    let job = || match &cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Complete(a) => complete(a, out),
        Command::Infer(a) => infer_cmd(a, out, fmt),
        Command::Mc(a) => mc(a, out),
        Command::Diagnose(a) => diagnose(a, out, fmt),
        Command::Grid(a) => grid(a, out),
        Command::Perturb(a) => perturb(a, out),
    };
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(job),
        None => job(),
    }
}

fn simulate(a: &SimulateArgs, out: &Path) -> Result<(), CliError> {
    a.model.validate()?;
    if !(a.frac > 0.0 && a.frac.is_finite()) {
        return usage("--frac must be positive");
    }
    let cfg = GeneratorConfig {
        dims: a.model.dims(),
        rank: a.model.rank,
        sigma: a.model.sigma,
        fraction: a.frac,
        noise: a.model.noise.into(),
        seed: a.seed,
        modulation: a.model.modulation(),
        row_loading: a.model.rows.into(),
    };
    std::fs::create_dir_all(out)?;
    let truth = generate_ground_truth(&cfg)?;
    let mut obs = sample_observations(&truth, &cfg)?;
    obs.truth_ref = Some("truth.tns3".into());
    write_tns3(out.join("truth.tns3"), &truth)?;
    write_observations(out.join("observations.jsonl"), &obs)?;
    write_json(&out.join("generator.json"), &cfg)?;
    println!("wrote {} observations of a {:?} tensor to {}", obs.n(), cfg.dims, out.display());
    Ok(())
}

#[derive(Serialize)]
struct CompleteSummary {
    dims: [usize; 3],
    rank: usize,
    n: usize,
    n0: usize,
    sigma_hat: f64,
    solver: SolverConfig,
}

fn complete(a: &CompleteArgs, out: &Path) -> Result<(), CliError> {
    check_file(&a.obs)?;
    let solver = a.solver.config(a.rank, a.seed)?;
    let obs = read_observations(&a.obs)?;
    check_rank(a.rank, obs.dims)?;
    if obs.n() < 2 {
        return usage("need at least two observations");
    }
    std::fs::create_dir_all(out)?;
    let state = run_algorithm1(&obs, &SpectralRefine(solver.clone()), a.rank, a.seed)?;
    write_tns3(out.join("estimate.tns3"), &state.t_hat)?;
    for b in 0..2 {
        write_tns3(out.join(format!("init_{}.tns3", b + 1)), &state.t_init[b])?;
        write_factors(out, &format!("factors_{}", b + 1), &state.factors[b], DEFAULT_RANK_TOL)?;
    }
    if a.trace {
        let outcome = refine(&spectral_init(&obs, a.rank)?, &obs, &solver)?;
        write_trace_csv(BufWriter::new(File::create(out.join("trace.csv"))?), &outcome.trace)?;
    }
    let summary = CompleteSummary {
        dims: obs.dims,
        rank: a.rank,
        n: state.n,
        n0: state.n0,
        sigma_hat: tubal::debias::estimate_sigma(&state),
        solver,
    };
    write_json(&out.join("complete.json"), &summary)?;
    println!("sigma_hat {:.6}, estimate written to {}", summary.sigma_hat, out.display());
    Ok(())
}

fn load_masks(
    mask: Option<&str>,
    mask_file: Option<&Path>,
    dims: [usize; 3],
) -> Result<Vec<(String, LinearFunctionalMask)>, CliError> {
    let bad = |e: tubal::Error| CliError::Usage(format!("mask: {e}"));
    match (mask, mask_file) {
        (Some(text), _) => Ok(vec![("mask".into(), LinearFunctionalMask::parse(dims, text).map_err(bad)?)]),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let specs: Vec<MaskSpec> =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("mask file: {e}")))?;
            if specs.is_empty() {
                return usage("mask file holds no masks");
            }
            specs
                .iter()
                .map(|s| Ok((s.name.clone(), s.to_mask(dims).map_err(bad)?)))
                .collect()
        }
        (None, None) => usage("one of --mask or --mask-file is required"),
    }
}

fn write_reports(path_stem: &Path, reports: &[InferenceReport], fmt: Format) -> Result<(), CliError> {
    match fmt {
        Format::Json => write_json(&path_stem.with_extension("json"), &reports),
        Format::Csv => {
            let mut w = csv_table(
                BufWriter::new(File::create(path_stem.with_extension("csv"))?),
                &[
                    "mask", "estimate", "sigma_hat", "s_hat", "std_error", "ci_low", "ci_high", "ci_obs_low",
                    "ci_obs_high", "alpha", "z", "n", "truth", "oracle_s_m", "standardized", "covered",
                    "covered_obs",
                ],
            )?;
            for r in reports {
                let t = r.truth.as_ref();
                let opt = |v: Option<String>| v.unwrap_or_default();
                let mut row: Vec<String> = vec![r.mask.clone()];
                row.extend(
                    [r.estimate, r.sigma_hat, r.s_hat, r.std_error, r.ci_low, r.ci_high, r.ci_obs_low, r.ci_obs_high, r.alpha, r.z]
                        .iter()
                        .map(f64::to_string),
                );
                row.push(r.n.to_string());
                row.push(opt(t.map(|t| t.truth.to_string())));
                row.push(opt(t.map(|t| t.oracle_s_m.to_string())));
                row.push(opt(t.map(|t| t.standardized.to_string())));
                row.push(opt(t.map(|t| t.covered.to_string())));
                row.push(opt(t.map(|t| t.covered_obs.to_string())));
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn infer_cmd(a: &InferArgs, out: &Path, fmt: Format) -> Result<(), CliError> {
    check_file(&a.obs)?;
    check_alpha(a.alpha)?;
    if let Some(p) = &a.mask_file {
        check_file(p)?;
    }
    if let Some(p) = &a.tensor {
        check_file(p)?;
    }
    let solver = a.solver.config(a.rank, a.seed)?;
    let obs = read_observations(&a.obs)?;
    check_rank(a.rank, obs.dims)?;
    let masks = load_masks(a.mask.as_deref(), a.mask_file.as_deref(), obs.dims)?;
    let truth = a.tensor.as_ref().map(read_tns3).transpose()?;
    if let Some(t) = &truth {
        if t.dims() != obs.dims {
            return usage(format!("--tensor has dims {:?}, observations {:?}", t.dims(), obs.dims));
        }
    }
    if obs.n() < 2 {
        return usage("need at least two observations");
    }
    std::fs::create_dir_all(out)?;
    let state = run_algorithm1(&obs, &SpectralRefine(solver), a.rank, a.seed)?;
    let reports = masks
        .iter()
        .map(|(name, m)| infer(&state, name, m, a.alpha, truth.as_ref()))
        .collect::<tubal::Result<Vec<_>>>()?;
    write_reports(&out.join("report"), &reports, fmt)?;
    for r in &reports {
        println!(
            "{}: {:.6} [{:.6}, {:.6}] (observation interval [{:.6}, {:.6}])",
            r.mask, r.estimate, r.ci_low, r.ci_high, r.ci_obs_low, r.ci_obs_high
        );
    }
    Ok(())
}

fn mc(a: &McArgs, out: &Path) -> Result<(), CliError> {
    let spec = match &a.spec {
        Some(path) => {
            check_file(path)?;
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<ExperimentSpec>(&text).map_err(|e| CliError::Usage(format!("spec: {e}")))?
        }
        None => ExperimentSpec {
            alpha: a.alpha,
            full_refine: a.full_refine,
            gain_locations: a.gain_locations,
            row_loading: a.rows.into(),
            ..ExperimentSpec::new([a.d1, a.d2, a.d3], a.rank, a.sigma, a.frac, a.reps, a.seed)
        },
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(out)?;
    let summary = run_monte_carlo(&spec)?;
    summary.write_tables(out)?;
    println!(
        "{} replicates ({} failed); tensor RMSE Final {:.4}",
        summary.completed,
        summary.failed,
        summary.tensor_rmse[summary.stage_index(tubal::harness::Stage::Final).expect("final stage")]
    );
    for c in &summary.coverage {
        println!("{} {:?}: coverage {:.3} width {:.4}", c.mask, c.interval, c.coverage, c.width_mean);
    }
    Ok(())
}

fn diagnose(a: &DiagnoseArgs, out: &Path, fmt: Format) -> Result<(), CliError> {
    check_file(&a.tensor)?;
    if let Some(p) = &a.reference {
        check_file(p)?;
    }
    if let Some(s) = a.sigma {
        if !(s >= 0.0 && s.is_finite()) {
            return usage("--sigma must be a nonnegative number");
        }
    }
    let t = read_tns3(&a.tensor)?;
    check_rank(a.rank, t.dims())?;
    let mask = a
        .mask
        .as_deref()
        .map(|m| LinearFunctionalMask::parse(t.dims(), m))
        .transpose()
        .map_err(|e| CliError::Usage(format!("mask: {e}")))?;
    let reference = match &a.reference {
        Some(p) => {
            let r = read_tns3(p)?;
            if r.dims() != t.dims() {
                return usage("--reference must match the tensor dimensions");
            }
            Some(truncate_rank(&r, a.rank)?.1)
        }
        None => None,
    };
    std::fs::create_dir_all(out)?;
    let d = diagnostics(&t, a.rank, mask.as_ref(), reference.as_ref().map(|f| f.spectral()), a.sigma)?;
    match fmt {
        Format::Json => write_json(&out.join("diagnostics.json"), &d)?,
        Format::Csv => {
            let mut w = csv_table(
                BufWriter::new(File::create(out.join("diagnostics.csv"))?),
                &[
                    "rank", "lambda_min", "lambda_max", "kappa0", "mu_max", "alpha_m", "row_dist_u",
                    "row_dist_v", "snr",
                ],
            )?;
            w.serialize((
                d.rank,
                d.lambda_min,
                d.lambda_max,
                d.kappa0,
                d.mu_max,
                d.alpha_m,
                d.row_dist_u,
                d.row_dist_v,
                d.snr,
            ))?;
            w.flush()?;
        }
    }
    println!("{}", serde_json::to_string_pretty(&d)?);
    Ok(())
}

fn grid(a: &GridArgs, out: &Path) -> Result<(), CliError> {
    check_file(&a.input)?;
    check_alpha(a.alpha)?;
    let mask = match (a.missing, &a.mask_file) {
        (Some(m), _) if (0.0..1.0).contains(&m) => GridMask::Fraction { missing: m },
        (Some(_), _) => return usage("--missing must lie in [0, 1)"),
        (None, Some(p)) => {
            check_file(p)?;
            GridMask::File { path: p.clone() }
        }
        (None, None) => return usage("one of --missing or --mask-file is required"),
    };
    let cfg = GridConfig {
        solver: Some(a.solver.config(a.rank, a.seed)?),
        ..GridConfig::new(a.rank, a.alpha, a.seed)
    };
    let summary = grid_pipeline(&a.input, &mask, &cfg, out)?;
    println!(
        "hidden-entry RMSE {:.4} (slice-mean fill {:.4}), sigma_hat {:.4}",
        summary.rmse_hidden, summary.rmse_baseline, summary.sigma_hat
    );
    Ok(())
}

fn perturb(a: &PerturbArgs, out: &Path) -> Result<(), CliError> {
    a.model.validate()?;
    if a.reps == 0 {
        return usage("--reps must be at least 1");
    }
    if a.fractions.is_empty() || a.fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return usage("--fractions must be positive numbers");
    }
    let spec = PerturbSpec {
        oracle_init: !a.solver_init,
        noise: a.model.noise.into(),
        modulation: a.model.modulation(),
        row_loading: a.model.rows.into(),
        ..PerturbSpec::new(a.model.dims(), a.model.rank, a.model.sigma, a.reps, a.seed)
    };
    std::fs::create_dir_all(out)?;
    let table = perturbation_scaling(&spec, &a.fractions)?;
    table.write_csv(out.join("perturb.csv"))?;
    write_json(&out.join("perturb.json"), &table)?;
    for r in &table.rows {
        println!("n {:>8}: median row distance U {:.5} V {:.5}", r.n, r.median_u, r.median_v);
    }
    println!("log-log slope U {:.3} V {:.3}", table.slope_u, table.slope_v);
    Ok(())
}
