mod common;

use common::*;
use harvestgame::model::{draw_channel_set, info_rate, TransmitCovariance};
use harvestgame::oracle::{brute_force_p2, p2_reference, ModeProblem};
use harvestgame::waterfill::*;
use harvestgame::CMat;
use nalgebra::Complex;
use proptest::prelude::*;

fn problem(s: &[f64], e: &[f64], p: f64, gamma: f64) -> WhitenedProblem<f64> {
    WhitenedProblem::from_modes(s.to_vec(), e.to_vec(), p, gamma).unwrap()
}

#[test]
fn identity_channel_whitens_to_unit_modes() {
    let h = CMat::<f64>::identity(3, 3);
    let g = nalgebra::DVector::from_element(3, Complex::new(1.0, 0.0));
    let p = whiten(&h, &CMat::identity(3, 3), &g, 8.0, 0.0).unwrap();
    assert!(p.sigma_sq.iter().all(|&s| (s - 1.0).abs() < 1e-12));
    let gram = p.precoder.adjoint() * &p.precoder;
    assert!(fro(&(gram - CMat::<f64>::identity(3, 3))) < 1e-10);
}

#[test]
fn whitened_rate_matches_original_rate() {
    let ch = draw_channel_set::<f64>(2, 1, 4, 4, 5);
    let covs = vec![TransmitCovariance::zeros(4, 8.0), random_covariance(4, 8.0, 1.0, 6)];
    let r = harvestgame::model::interference_plus_noise(0, &covs, &ch).unwrap();
    let p = whiten(ch.user_channel(0), &r, ch.harvester(0, 0), 8.0, 0.0).unwrap();
    let q = vec![1.0, 3.0, 0.5, 2.0];
    let cov = assemble_covariance(&p, &WaterfillSolution::from_loads(&p, q.clone()));
    let mut with = covs.clone();
    with[0] = cov;
    let direct = info_rate(0, &with, &ch).unwrap();
    assert!((direct - p.objective(&q)).abs() < 1e-10);
    let norm_g = ch.harvester(0, 0).norm_squared();
    let norm_ghat: f64 = p.g_hat_sq.iter().sum();
    assert!((norm_g - norm_ghat).abs() < 1e-12 * (1.0 + norm_g));
}

#[test]
fn tight_floor_at_eighty_percent_matches_oracle() {
    for seed in 0..10 {
        let p = random_p2(4, 8.0, 0.8, 300 + seed);
        let s = solve_p2(&p, 1e-8);
        assert!(s.feasible);
        let o = p2_reference(&to_modes(&p), 1e-10, 100_000).unwrap();
        let ours = p.objective(&s.q_hat);
        let theirs = p.objective(&o);
        assert!(relative(ours, theirs) < 1e-6, "seed {seed}: {ours} vs {theirs}");
    }
}

#[test]
fn pair_root_is_negative_reciprocal_sum() {
    let a: [f64; 2] = [-0.7, 1.9];
    let nu = nu2_root(&a, |_| 0.0).unwrap().value;
    assert!((nu + (1.0 / a[0] + 1.0 / a[1])).abs() < 1e-12);
}

#[test]
fn five_mode_root_satisfies_defining_relation() {
    let mut checked = 0;
    for seed in 0..40 {
        let p = random_p2(8, 8.0, 0.9, 500 + seed);
        let s = solve_p2(&p, 1e-8);
        if s.active_set.len() != 5 || s.nu2 <= 0.0 {
            continue;
        }
        let n = s.active_set.len() as f64;
        let pp: f64 = p.power_limit + s.active_set.iter().map(|&m| 1.0 / p.sigma_sq[m]).sum::<f64>();
        let gp: f64 = p.energy_floor + s.active_set.iter().map(|&m| p.g_hat_sq[m] / p.sigma_sq[m]).sum::<f64>();
        let alphas: Vec<f64> = s.active_set.iter().map(|&m| gp - p.g_hat_sq[m] * pp).collect();
        let nu = nu2_root(&alphas, |_| 0.0).unwrap().value;
        let sum: f64 = alphas.iter().map(|&a| 1.0 / (n + nu * a)).sum();
        assert!((sum - 1.0).abs() < 1e-10);
        checked += 1;
    }
    assert!(checked > 0, "no five-mode active set in the sample");
}

#[test]
fn assembled_covariances() {
    let p = random_p2(4, 8.0, 0.5, 9);
    let zero = assemble_covariance(&p, &WaterfillSolution::from_loads(&p, vec![0.0; 4]));
    assert!(fro(zero.matrix()) == 0.0);
    let beam = assemble_covariance(&p, &WaterfillSolution::from_loads(&p, vec![8.0, 0.0, 0.0, 0.0]));
    let v = p.precoder.column(0).into_owned();
    let expect = &v * v.adjoint() * Complex::new(8.0, 0.0);
    assert!(fro(&(beam.matrix() - expect)) < 1e-10);
    let s = solve_p2(&p, 1e-8);
    let q = assemble_covariance(&p, &s);
    assert!((q.trace() - s.q_hat.iter().sum::<f64>()).abs() < 1e-10);
    assert!(q.is_valid());
}

#[test]
fn exact_solution_has_tiny_residual_and_perturbation_is_seen() {
    let p = problem(&[1.0], &[1.0], 8.0, 4.0);
    let s = solve_p2(&p, 1e-8);
    assert!(s.kkt_residual < 1e-10);
    let q = random_p2(4, 8.0, 0.6, 10);
    let s = solve_p2(&q, 1e-8);
    let mut bumped = s.q_hat.clone();
    let m = s.active_set[0];
    bumped[m] += 0.1;
    let r = kkt_residual(&q, &WaterfillSolution::from_loads(&q, bumped));
    assert!(r > 1e-3, "residual {r}");
}

#[test]
fn oracle_solutions_have_small_residual() {
    for seed in 0..10 {
        let p = random_p2(4, 8.0, 0.7, 700 + seed);
        let o = p2_reference(&to_modes(&p), 1e-10, 100_000).unwrap();
        let r = WaterfillSolution::from_loads(&p, o).kkt_residual;
        assert!(r < 1e-6, "seed {seed}: {r}");
    }
}

#[test]
fn three_mode_instances_dominate_the_grid() {
    for seed in 0..50u64 {
        let p = random_p2(3, 8.0, [0.3, 0.6, 0.9][(seed % 3) as usize], 900 + seed);
        let s = solve_p2(&p, 1e-8);
        let h = 8.0 / 200.0;
        let (_, grid) = brute_force_p2(&to_modes(&p), h).expect("grid has a feasible point");
        // The gradient of sum ln(1 + s q) is bounded by max s, and a grid
        // point lies within 2h (l1) of any feasible point.
        let lipschitz = p.sigma_sq.iter().copied().fold(0.0, f64::max);
        assert!(p.objective(&s.q_hat) >= grid - 2.0 * h * lipschitz);
    }
}

#[test]
fn grid_finds_forced_split() {
    let p: ModeProblem<f64> = ModeProblem { s: vec![4.0, 1.0], e: vec![0.0, 1.0], p: 2.0, gamma: 2.0 };
    let (q, _) = brute_force_p2(&p, 0.01).unwrap();
    assert!(q[0].abs() <= 0.01 + 1e-12 && (q[1] - 2.0).abs() <= 0.01 + 1e-12);
}

fn modes_strategy(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.05f64..6.0, n),
        prop::collection::vec(0.0f64..4.0, n),
    )
        .prop_map(|(s, e)| {
            let mut pairs: Vec<(f64, f64)> = s.into_iter().zip(e).collect();
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
            pairs.into_iter().unzip()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimum_is_monotone_in_floor_and_budget((s, e) in modes_strategy(4), f1 in 0.0f64..0.95, f2 in 0.0f64..0.95, p in 1.0f64..12.0) {
        let emax = e.iter().copied().fold(0.0, f64::max);
        prop_assume!(emax > 0.05);
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let a = problem(&s, &e, p, lo * p * emax);
        let b = problem(&s, &e, p, hi * p * emax);
        let sa = solve_p2(&a, 1e-8);
        let sb = solve_p2(&b, 1e-8);
        prop_assert!(a.objective(&sa.q_hat) >= b.objective(&sb.q_hat) - 1e-9);
        let c = problem(&s, &e, p * 1.5, lo * p * emax);
        let sc = solve_p2(&c, 1e-8);
        prop_assert!(c.objective(&sc.q_hat) >= a.objective(&sa.q_hat) - 1e-9);
    }

    #[test]
    fn zero_floor_is_textbook_water_filling((s, e) in modes_strategy(5), p in 0.5f64..20.0) {
        let sol = solve_p2(&problem(&s, &e, p, 0.0), 1e-8);
        // Textbook: q = max(0, mu - 1/s) with sum q = p, mu by bisection.
        let fill = |mu: f64| s.iter().map(|&x| (mu - 1.0 / x).max(0.0)).sum::<f64>();
        let (mut lo, mut hi) = (0.0, p + s.iter().map(|&x| 1.0 / x).fold(0.0, f64::max));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fill(mid) < p { lo = mid } else { hi = mid }
        }
        for (m, &x) in s.iter().enumerate() {
            prop_assert!((sol.q_hat[m] - (hi - 1.0 / x).max(0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn tight_solutions_attain_both_constraints((s, e) in modes_strategy(4), f in 0.3f64..0.99) {
        let emax = e.iter().copied().fold(0.0, f64::max);
        prop_assume!(emax > 0.05);
        let pr = problem(&s, &e, 8.0, f * 8.0 * emax);
        let sol = solve_p2(&pr, 1e-8);
        prop_assert!(sol.feasible);
        if sol.nu2 > 0.0 {
            prop_assert!((sol.q_hat.iter().sum::<f64>() - 8.0).abs() <= 1e-6 * 8.0);
            prop_assert!((pr.energy(&sol.q_hat) - pr.energy_floor).abs() <= 1e-6 * pr.energy_floor.max(1.0));
        }
        for (m, &q) in sol.q_hat.iter().enumerate() {
            if !sol.active_set.contains(&m) {
                prop_assert!(q == 0.0);
            }
        }
    }

    #[test]
    fn whitening_round_trip(seed in 0u64..10_000, f in 0.0f64..0.9) {
        let pr = random_p2(4, 8.0, f, seed);
        let sol = solve_p2(&pr, 1e-8);
        prop_assume!(sol.feasible);
        let ch = draw_channel_set::<f64>(2, 1, 4, 4, seed);
        let covs = vec![assemble_covariance(&pr, &sol), random_covariance(4, 8.0, 1.0, seed ^ 0xabc)];
        let rate = info_rate(0, &covs, &ch).unwrap();
        prop_assert!((rate - pr.objective(&sol.q_hat)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closed_form_dominates_oracle(seed in 0u64..1_000_000, f in 0.05f64..0.95) {
        let pr = random_p2(4, 8.0, f, seed);
        let sol = solve_p2(&pr, 1e-8);
        let o = p2_reference(&to_modes(&pr), 1e-10, 100_000).unwrap();
        prop_assert!(pr.objective(&sol.q_hat) >= pr.objective(&o) - 1e-6);
    }
}

#[test]
fn solver_runs_in_single_precision() {
    let p = WhitenedProblem::<f32>::from_modes(vec![4.0, 1.0], vec![0.0, 1.0], 2.0, 2.0).unwrap();
    let s = solve_p2(&p, 1e-5);
    assert!(s.feasible);
    assert!(s.q_hat[0].abs() < 1e-4 && (s.q_hat[1] - 2.0).abs() < 1e-4);
}
