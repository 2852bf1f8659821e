//! Acceptance criteria 1-12. Each test prints one `PASS`/`FAIL` line and then
//! asserts. Criteria 7-9 share one desk-scale Monte-Carlo run.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tubal::debias::{debias, estimate_sigma, run_algorithm1};
use tubal::harness::{
    grid_impute, perturbation_scaling, run_monte_carlo, ExperimentSpec, GridConfig, IntervalKind, McSummary,
    PerturbSpec, Stage,
};
use tubal::harness::grid::random_observed;
use tubal::init::FixedInit;
use tubal::sampling::{generate_ground_truth, sample_observations, GeneratorConfig};
use tubal::spectral::dft3;
use tubal::tensor::{bcirc, conj_transpose, fold, inner, tprod, unfold, Tensor3};
use tubal::tsvd::{incoherence, truncate_rank, tsvd, tubal_rank, SpectralFactors, DEFAULT_RANK_TOL};

const SEED: u64 = 20261019;

const ALGEBRA_TOL: f64 = 1e-10;
const ALGEBRA_BUDGET_S: f64 = 10.0;
const RECON_REL_TOL: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-10;
const TSVD_BUDGET_S: f64 = 30.0;
const PARSEVAL_TOL: f64 = 1e-10;
const DEBIAS_EXACT_TOL: f64 = 1e-10;
const UNBIASED_SE: f64 = 3.0;
const UNBIASED_SHARE: f64 = 0.99;
const UNBIASED_BUDGET_S: f64 = 60.0;
const INCOHERENCE_TOL: f64 = 1e-9;
const Z_MEAN_MAX: f64 = 0.15;
const Z_STD_RANGE: (f64, f64) = (0.85, 1.15);
const KS_MAX: f64 = 0.08;
const COVERAGE_RANGE: (f64, f64) = (0.91, 0.99);
const FINAL_WIN_SHARE: f64 = 0.95;
const SIGMA_REL_TOL: f64 = 0.05;
const PERTURB_RATIO: (f64, f64) = (0.6, 0.85);
const GRID_BASELINE_FACTOR: f64 = 0.5;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{tag} criterion {id:>2} {name}: {detail}");
}

fn gauss_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Tensor3 {
    Tensor3::from_fn(dims, |_, _, _| StandardNormal.sample(rng))
}

fn random_dims(rng: &mut ChaCha8Rng, max: [usize; 3]) -> [usize; 3] {
    [rng.gen_range(1..=max[0]), rng.gen_range(1..=max[1]), rng.gen_range(1..=max[2])]
}

/// Circular convolution along the third mode, straight from the definition.
fn naive_tprod(a: &Tensor3, b: &Tensor3) -> Tensor3 {
    let [d1, p, d3] = a.dims();
    let d2 = b.dims()[1];
    Tensor3::from_fn([d1, d2, d3], |j, k, l| {
        let mut acc = 0.0;
        for m in 0..d3 {
            for q in 0..p {
                acc += a.get(j, q, (l + d3 - m) % d3) * b.get(q, k, m);
            }
        }
        acc
    })
}

#[test]
fn c01_algebra_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let [d1, p, d3] = random_dims(&mut rng, [6, 6, 8]);
        let d2 = rng.gen_range(1..=6);
        let a = gauss_tensor(&mut rng, [d1, p, d3]);
        let b = gauss_tensor(&mut rng, [p, d2, d3]);
        let fast = tprod(&a, &b).unwrap();
        let lifted = fold(&(bcirc(&a).unwrap() * unfold(&b)), [d1, d2, d3]).unwrap();
        worst = worst
            .max(fast.max_abs_diff(&lifted))
            .max(fast.max_abs_diff(&naive_tprod(&a, &b)));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= ALGEBRA_TOL && secs < ALGEBRA_BUDGET_S;
    report(1, "algebra oracle", pass, &format!("max diff {worst:.2e}, {secs:.2} s"));
    assert!(pass);
}

#[test]
fn c02_tsvd_contract() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let (mut recon, mut ortho, mut rank_ok) = (0.0f64, 0.0f64, true);
    for _ in 0..100 {
        let dims = random_dims(&mut rng, [30, 30, 16]);
        let t = gauss_tensor(&mut rng, dims);
        let f = tsvd(&t, DEFAULT_RANK_TOL).unwrap();
        let back = tprod(&tprod(&f.u, &f.s).unwrap(), &conj_transpose(&f.v)).unwrap();
        recon = recon.max((&back - &t).fro_norm() / t.fro_norm());
        let id = Tensor3::identity(f.rank, dims[2]);
        ortho = ortho
            .max(tprod(&conj_transpose(&f.u), &f.u).unwrap().max_abs_diff(&id))
            .max(tprod(&conj_transpose(&f.v), &f.v).unwrap().max_abs_diff(&id));
        let r = rng.gen_range(1..=dims[0].min(dims[1]));
        let (low, _) = truncate_rank(&t, r).unwrap();
        rank_ok &= tubal_rank(&low, DEFAULT_RANK_TOL).unwrap() <= r;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = recon <= RECON_REL_TOL && ortho <= ORTHO_TOL && rank_ok && secs < TSVD_BUDGET_S;
    report(
        2,
        "t-SVD contract",
        pass,
        &format!("recon {recon:.2e}, ortho {ortho:.2e}, rank bound {rank_ok}, {secs:.2} s"),
    );
    assert!(pass);
}

#[test]
fn c03_parseval_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let (mut norm_gap, mut inner_gap) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let dims = random_dims(&mut rng, [12, 12, 10]);
        let a = gauss_tensor(&mut rng, dims);
        let b = gauss_tensor(&mut rng, dims);
        let (fa, fb) = (dft3(&a), dft3(&b));
        let scale = (dims[2] as f64).sqrt();
        norm_gap = norm_gap.max((a.fro_norm() - fa.bdiag_fro() / scale).abs() / a.fro_norm());
        let direct: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum();
        inner_gap = inner_gap
            .max((inner(&a, &b).unwrap() - direct).abs())
            .max((fa.inner(&fb).unwrap() - direct).abs());
    }
    let pass = norm_gap <= PARSEVAL_TOL && inner_gap <= PARSEVAL_TOL;
    report(3, "Parseval identities", pass, &format!("norm {norm_gap:.2e}, inner {inner_gap:.2e}"));
    assert!(pass);
}

#[test]
fn c04_debias_exactness() {
    let cfg = GeneratorConfig::new([20, 20, 8], 2, 0.0, 0.5, SEED);
    let truth = generate_ground_truth(&cfg).unwrap();
    let obs = sample_observations(&truth, &cfg).unwrap();
    let state = run_algorithm1(&obs, &FixedInit(truth.clone()), 2, SEED).unwrap();
    let err = state.t_hat.max_abs_diff(&truth);
    let pass = err <= DEBIAS_EXACT_TOL;
    report(4, "debias exactness", pass, &format!("max error {err:.2e}"));
    assert!(pass);
}

#[test]
fn c05_debias_unbiasedness() {
    let start = Instant::now();
    let dims = [10, 10, 5];
    let truth = generate_ground_truth(&GeneratorConfig::new(dims, 2, 0.5, 0.5, SEED)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let t_init = truth.axpy(0.3, &gauss_tensor(&mut rng, dims)).unwrap();
    let reps = 500;
    let mut sum = vec![0.0; truth.len()];
    let mut sq = vec![0.0; truth.len()];
    for i in 0..reps {
        let cfg = GeneratorConfig::new(dims, 2, 0.5, 0.5, SEED + 1000 + i as u64);
        let unbs = debias(&t_init, &sample_observations(&truth, &cfg).unwrap()).unwrap();
        for (o, v) in unbs.as_slice().iter().enumerate() {
            sum[o] += v;
            sq[o] += v * v;
        }
    }
    let r = reps as f64;
    let inside = (0..truth.len())
        .filter(|&o| {
            let mean = sum[o] / r;
            let se = ((sq[o] / r - mean * mean) * r / (r - 1.0) / r).sqrt();
            (mean - truth.as_slice()[o]).abs() <= UNBIASED_SE * se
        })
        .count();
    let share = inside as f64 / truth.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    let pass = share >= UNBIASED_SHARE && secs < UNBIASED_BUDGET_S;
    report(
        5,
        "debias unbiasedness",
        pass,
        &format!("{inside}/{} entries within 3 SE, {secs:.2} s", truth.len()),
    );
    assert!(pass);
}

fn uniform_factors(d1: usize, d2: usize, r: usize, d3: usize, u: impl Fn(usize, usize) -> c64, v: impl Fn(usize, usize) -> c64) -> SpectralFactors {
    SpectralFactors {
        u: (0..d3).map(|_| Mat::from_fn(d1, r, &u)).collect(),
        s: vec![vec![1.0; r]; d3],
        v: (0..d3).map(|_| Mat::from_fn(d2, r, &v)).collect(),
    }
}

#[test]
fn c06_incoherence_endpoints() {
    let (d, r, d3) = (12, 3, 4);
    let coord = |j: usize, c: usize| if j == c { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) };
    let fourier = |j: usize, c: usize| {
        c64::from_polar(1.0 / (d as f64).sqrt(), -2.0 * std::f64::consts::PI * (j * c) as f64 / d as f64)
    };
    let spiky = incoherence(&uniform_factors(d, d, r, d3, coord, fourier));
    let flat = incoherence(&uniform_factors(d, d, r, d3, fourier, fourier));
    let target = (d as f64 / r as f64).sqrt();
    let pass = (spiky - target).abs() <= INCOHERENCE_TOL && (flat - 1.0).abs() <= INCOHERENCE_TOL;
    report(
        6,
        "incoherence endpoints",
        pass,
        &format!("coordinate {spiky:.12} (want {target:.12}), Fourier {flat:.12} (want 1)"),
    );
    assert!(pass);
}

fn desk() -> &'static McSummary {
    static DESK: OnceLock<McSummary> = OnceLock::new();
    DESK.get_or_init(|| run_monte_carlo(&ExperimentSpec::desk(SEED)).expect("desk Monte-Carlo run"))
}

#[test]
fn c07_normality_at_desk_scale() {
    let s = desk();
    let mut pass = true;
    let mut detail = Vec::new();
    for name in ["m1", "m2"] {
        let inf = s.inference.iter().find(|i| i.mask == name).unwrap();
        let n = inf.normality.as_ref().expect("finite statistics");
        let ok = n.mean.abs() <= Z_MEAN_MAX
            && (Z_STD_RANGE.0..=Z_STD_RANGE.1).contains(&n.std)
            && n.ks_stat <= KS_MAX;
        pass &= ok;
        detail.push(format!("{name}: mean {:+.3} std {:.3} KS {:.3}", n.mean, n.std, n.ks_stat));
    }
    report(7, "normality (desk)", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c08_coverage_at_desk_scale() {
    let s = desk();
    let mut pass = true;
    let mut detail = Vec::new();
    for kind in [IntervalKind::Parameter, IntervalKind::Observation] {
        for name in ["m1", "m2", "m3", "m4"] {
            let c = s.coverage_row(name, kind).unwrap();
            let ok = (COVERAGE_RANGE.0..=COVERAGE_RANGE.1).contains(&c.coverage);
            pass &= ok;
            let label = if kind == IntervalKind::Parameter { "param" } else { "obs" };
            detail.push(format!("{label} {name} {:.3}{}", c.coverage, if ok { "" } else { "!" }));
        }
    }
    report(8, "coverage (desk)", pass, &detail.join(", "));
    assert!(pass);
}

#[test]
fn c09_stagewise_improvement() {
    let s = desk();
    let idx = |st| s.stage_index(st).unwrap();
    let (i1, i2, fi) = (idx(Stage::Init1), idx(Stage::Init2), idx(Stage::Final));
    let wins = s.replicate_rmse.iter().filter(|r| r[fi] < r[i1].min(r[i2])).count();
    let share = wins as f64 / s.completed as f64;
    let mut pass = share >= FINAL_WIN_SHARE;
    let mut detail = vec![format!("Final beats both inits in {wins}/{}", s.completed)];
    for name in ["m1", "m2", "m3", "m4"] {
        let med = |st| s.metric(name, st).unwrap().median_sq_error;
        let init = 0.5 * (med(Stage::Init1) + med(Stage::Init2));
        let proj = 0.5 * (med(Stage::Proj1) + med(Stage::Proj2));
        let fin = med(Stage::Final);
        let ok = fin <= proj && proj <= init;
        pass &= ok;
        detail.push(format!("{name} median sq err Final {fin:.4} Proj {proj:.4} Init {init:.4}"));
    }
    report(9, "stagewise improvement", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c10_sigma_consistency() {
    let dims = [60, 60, 30];
    let sigma = 0.5;
    let fraction = 2e5 / (dims.iter().product::<usize>() as f64);
    let cfg = GeneratorConfig::new(dims, 3, sigma, fraction, SEED + 10);
    let truth = generate_ground_truth(&cfg).unwrap();
    let obs = sample_observations(&truth, &cfg).unwrap();
    let state = run_algorithm1(&obs, &FixedInit(truth), 3, SEED).unwrap();
    let rel = (estimate_sigma(&state) - sigma).abs() / sigma;
    let pass = obs.n() == 200_000 && rel <= SIGMA_REL_TOL;
    report(10, "sigma consistency", pass, &format!("n {}, relative error {rel:.4}", obs.n()));
    assert!(pass);
}

#[test]
fn c11_perturbation_scaling() {
    let spec = PerturbSpec::new([40, 40, 20], 3, 0.5, 60, SEED + 11);
    let t = perturbation_scaling(&spec, &[0.2, 0.4, 0.8]).unwrap();
    let ratios: Vec<f64> = t.rows[1..]
        .iter()
        .flat_map(|r| [r.ratio_u.unwrap(), r.ratio_v.unwrap()])
        .collect();
    let pass = ratios.iter().all(|q| (PERTURB_RATIO.0..=PERTURB_RATIO.1).contains(q));
    let shown: Vec<String> = ratios.iter().map(|q| format!("{q:.3}")).collect();
    report(
        11,
        "perturbation scaling",
        pass,
        &format!("ratios U/V {} (slopes {:.3}, {:.3})", shown.join(", "), t.slope_u, t.slope_v),
    );
    assert!(pass);
}

#[test]
fn c12_grid_pipeline() {
    let dims = [80, 80, 24];
    let cfg = GeneratorConfig::new(dims, 5, 0.1, 1.0, SEED + 12);
    let truth = generate_ground_truth(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 12);
    let noisy = Tensor3::from_fn(dims, |j, k, l| {
        let xi: f64 = StandardNormal.sample(&mut rng);
        truth.get(j, k, l) + cfg.sigma * xi
    });
    let observed = random_observed(dims, 0.6, SEED).unwrap();
    let r = grid_impute(&noisy, &observed, &GridConfig::new(5, 0.05, SEED)).unwrap();
    let s = &r.summary;
    let w = r.width.as_slice();
    let nonneg = w.iter().all(|&x| x >= 0.0);
    let zero_iff = if s.sigma_hat == 0.0 {
        w.iter().all(|&x| x == 0.0)
    } else {
        w.iter().all(|&x| x > 0.0)
    };
    let pass = s.rmse_hidden <= GRID_BASELINE_FACTOR * s.rmse_baseline && nonneg && zero_iff;
    report(
        12,
        "grid pipeline",
        pass,
        &format!(
            "hidden RMSE {:.4} vs baseline {:.4}, sigma_hat {:.4}, widths in [{:.4}, {:.4}], width/|value| corr {:.3}",
            s.rmse_hidden, s.rmse_baseline, s.sigma_hat, s.width_min, s.width_max, s.width_abs_value_corr
        ),
    );
    assert!(pass);
}
