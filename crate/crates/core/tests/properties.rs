use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tubal::debias::{confidence_interval, observation_interval, run_algorithm1, split};
use tubal::harness::grid::entry_s_hat;
use tubal::init::FixedInit;
use tubal::mask::{linear_form, LinearFunctionalMask};
use tubal::rng::derive_seed;
use tubal::sampling::{generate_ground_truth, sample_observations, GeneratorConfig};
use tubal::spectral::{dft3, idft3};
use tubal::tensor::{conj_transpose, inner, tprod, Tensor3};
use tubal::tsvd::{truncate_rank, tubal_rank, DEFAULT_RANK_TOL};

fn gauss(seed: u64, dims: [usize; 3]) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor3::from_fn(dims, |_, _, _| StandardNormal.sample(&mut rng))
}

fn dims() -> impl Strategy<Value = [usize; 3]> {
    (1usize..7, 1usize..7, 1usize..7).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dft_roundtrip(d in dims(), seed in any::<u64>()) {
        let a = gauss(seed, d);
        let back = idft3(&dft3(&a)).unwrap();
        prop_assert!(back.max_abs_diff(&a) <= 1e-12);
        prop_assert!(dft3(&a).conjugate_symmetry_defect() <= 1e-12);
    }

    #[test]
    fn tprod_is_bilinear_and_associative(d in dims(), p in 1usize..5, seed in any::<u64>()) {
        let [d1, d2, d3] = d;
        let a = gauss(seed, [d1, p, d3]);
        let a2 = gauss(seed ^ 1, [d1, p, d3]);
        let b = gauss(seed ^ 2, [p, d2, d3]);
        let c = gauss(seed ^ 3, [d2, 3, d3]);
        let lhs = tprod(&a.axpy(2.5, &a2).unwrap(), &b).unwrap();
        let rhs = tprod(&a, &b).unwrap().axpy(2.5, &tprod(&a2, &b).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
        let left = tprod(&tprod(&a, &b).unwrap(), &c).unwrap();
        let right = tprod(&a, &tprod(&b, &c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) <= 1e-10);
    }

    #[test]
    fn adjoint_reverses_products(d in dims(), p in 1usize..5, seed in any::<u64>()) {
        let [d1, d2, d3] = d;
        let a = gauss(seed, [d1, p, d3]);
        let b = gauss(seed ^ 7, [p, d2, d3]);
        let lhs = conj_transpose(&tprod(&a, &b).unwrap());
        let rhs = tprod(&conj_transpose(&b), &conj_transpose(&a)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
        prop_assert_eq!(conj_transpose(&conj_transpose(&a)), a);
    }

    #[test]
    fn identity_is_neutral(d1 in 1usize..6, d2 in 1usize..6, d3 in 1usize..6, seed in any::<u64>()) {
        let a = gauss(seed, [d1, d2, d3]);
        let left = tprod(&Tensor3::identity(d1, d3), &a).unwrap();
        let right = tprod(&a, &Tensor3::identity(d2, d3)).unwrap();
        prop_assert!(left.max_abs_diff(&a) <= 1e-12);
        prop_assert!(right.max_abs_diff(&a) <= 1e-12);
    }

    #[test]
    fn truncation_is_idempotent(d in dims(), seed in any::<u64>(), r in 1usize..4) {
        let a = gauss(seed, d);
        let r = r.min(d[0].min(d[1]));
        let (low, _) = truncate_rank(&a, r).unwrap();
        prop_assert!(tubal_rank(&low, DEFAULT_RANK_TOL).unwrap() <= r);
        let (again, _) = truncate_rank(&low, r).unwrap();
        prop_assert!(again.max_abs_diff(&low) <= 1e-9 * (1.0 + low.fro_norm()));
        prop_assert!(low.fro_norm() <= a.fro_norm() + 1e-12);
    }

    #[test]
    fn linear_form_is_linear(d in dims(), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let t = gauss(seed, d);
        let m1 = LinearFunctionalMask::single(d, [0, 0, 0]).unwrap();
        let m2 = LinearFunctionalMask::new(d, vec![([d[0] - 1, d[1] - 1, d[2] - 1], 0.5), ([0, 0, 0], -1.0)]).unwrap();
        let combo = m1.combine(a, &m2, b).unwrap();
        let lhs = linear_form(&t, &combo).unwrap();
        let rhs = a * linear_form(&t, &m1).unwrap() + b * linear_form(&t, &m2).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert!((linear_form(&t, &m2).unwrap() - inner(&t, &m2.to_dense()).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn intervals_are_nested_and_symmetric(
        est in -10.0f64..10.0,
        sigma in 0.0f64..3.0,
        s in 0.0f64..3.0,
        n in 1usize..10_000,
        alpha in 0.001f64..0.5,
    ) {
        let d_star = 400;
        let (lo, hi) = confidence_interval(est, sigma, s, d_star, n, alpha).unwrap();
        let (olo, ohi) = observation_interval(est, sigma, s, d_star, n, alpha).unwrap();
        prop_assert!(olo <= lo && lo <= est && est <= hi && hi <= ohi);
        prop_assert!(((est - lo) - (hi - est)).abs() <= 1e-9);
        let (wlo, whi) = confidence_interval(est, sigma, s, d_star, n, alpha / 2.0).unwrap();
        prop_assert!(wlo <= lo && hi <= whi);
    }

    #[test]
    fn split_partitions_observations(seed in any::<u64>(), frac in 0.2f64..0.9) {
        let cfg = GeneratorConfig::new([8, 8, 4], 2, 0.1, frac, seed);
        let t = generate_ground_truth(&cfg).unwrap();
        let obs = sample_observations(&t, &cfg).unwrap();
        let (a, b) = split(&obs, derive_seed(seed, 0)).unwrap();
        prop_assert_eq!(a.n() + b.n(), obs.n());
        prop_assert!(a.n().abs_diff(b.n()) <= 1);
    }

    #[test]
    fn final_estimate_averages_projections(seed in any::<u64>()) {
        let cfg = GeneratorConfig::new([10, 10, 4], 2, 0.3, 0.6, seed);
        let truth = generate_ground_truth(&cfg).unwrap();
        let obs = sample_observations(&truth, &cfg).unwrap();
        let init = FixedInit(truth.axpy(0.1, &gauss(seed, [10, 10, 4])).unwrap());
        let st = run_algorithm1(&obs, &init, 2, seed).unwrap();
        let avg = (&st.t_proj[0] + &st.t_proj[1]).scale(0.5);
        prop_assert!(avg.max_abs_diff(&st.t_hat) <= 1e-12);
        for p in &st.t_proj {
            prop_assert!(tubal_rank(p, DEFAULT_RANK_TOL).unwrap() <= 2);
        }
        prop_assert!(entry_s_hat(&st).as_slice().iter().all(|&w| w >= 0.0 && w.is_finite()));
    }
}

#[test]
fn retraction_reduces_entrywise_variance() {
    let mut spec = tubal::harness::ExperimentSpec::new([16, 16, 6], 2, 0.5, 0.5, 200, 11);
    spec.gain_locations = 200;
    let s = tubal::harness::run_monte_carlo(&spec).unwrap();
    assert_eq!(s.completed, 200);
    assert!(s.retraction_variance_share >= 0.95, "share {}", s.retraction_variance_share);
}
