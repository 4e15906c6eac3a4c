use eot_core::exact::{c_transform, check_optimality, solve_exact, TransformDirection};
use eot_core::lab::{invariant_audit, EpsSchedule};
use eot_core::measures::{dual_value, primal_value, relative_entropy};
use eot_core::multimarginal::mm_sinkhorn;
use eot_core::random::{random_instance, random_multi_problem, rng};
use eot_core::sinkhorn::{normalize_pair, sinkhorn_solve_from, softmin_update};
use eot_core::*;
use proptest::prelude::*;

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn instance(seed: u64, m: usize, n: usize) -> (DiscreteMeasure, DiscreteMeasure, CostMatrix) {
    random_instance(&mut rng(seed), m, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dual_value_is_shift_invariant(
        seed in any::<u64>(),
        m in 1usize..6,
        n in 1usize..6,
        shift in -5.0f64..5.0,
        eps in 0.05f64..2.0,
        fs in prop::collection::vec(-1.0f64..1.0, 6),
        gs in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let (mu, nu, c) = instance(seed, m, n);
        let pp = PotentialPair::new(fs[..m].to_vec(), gs[..n].to_vec(), eps).unwrap();
        let moved = PotentialPair::new(
            pp.f.iter().map(|v| v + shift).collect(),
            pp.g.iter().map(|v| v - shift).collect(),
            eps,
        ).unwrap();
        let a = dual_value(&pp, &c, &mu, &nu, eps).unwrap();
        let b = dual_value(&moved, &c, &mu, &nu, eps).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs() + shift.abs()));
    }

    #[test]
    fn entropy_nonnegative_and_primal_monotone(
        seed in any::<u64>(),
        m in 1usize..6,
        n in 1usize..6,
        eps in 0.05f64..2.0,
        e1 in 0.0f64..1.0,
        e2 in 0.0f64..1.0,
    ) {
        let (mu, nu, c) = instance(seed, m, n);
        let sol = sinkhorn_solve(&mu, &nu, &c, &SinkhornConfig::new(eps)).unwrap();
        let h = relative_entropy(&sol.coupling, &mu, &nu).unwrap().to_f64();
        prop_assert!(h >= 0.0);
        let product = Coupling::product(&mu, &nu);
        prop_assert!(relative_entropy(&product, &mu, &nu).unwrap().to_f64() <= 1e-12);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let p_lo = primal_value(&sol.coupling, &c, lo, &mu, &nu).unwrap().to_f64();
        let p_hi = primal_value(&sol.coupling, &c, hi, &mu, &nu).unwrap().to_f64();
        prop_assert!(p_lo <= p_hi);
    }

    #[test]
    fn converged_solutions_satisfy_every_invariant(
        seed in any::<u64>(),
        m in 1usize..8,
        n in 1usize..8,
        eps in 0.02f64..2.0,
    ) {
        let (mu, nu, c) = instance(seed, m, n);
        let cfg = SinkhornConfig::new(eps);
        let sol = sinkhorn_solve(&mu, &nu, &c, &cfg).unwrap();
        let tol = cfg.tol;
        prop_assert!(sol.residuals.0 <= tol && sol.residuals.1 <= tol);
        prop_assert!(sol.potentials.normalized);
        prop_assert!((sol.primal - sol.dual).abs() <= cfg.gap_tol * sol.primal.abs().max(1.0));

        // Fixed point of the row update.
        let f = softmin_update(&sol.potentials.g, &c, &nu, eps).unwrap();
        prop_assert!(sup(&f, &sol.potentials.f) <= 10.0 * tol);

        // Lemma-2.1 bounds, Lipschitz transfer, normalization, row identity.
        let audit = invariant_audit(&sol, &c, &mu, &nu);
        prop_assert!(audit.all_passed(), "{:#?}", audit);

        // Entry bound from pi_ij <= 1.
        for ((i, j), &cij) in c.values().indexed_iter() {
            let lhs = sol.potentials.f[i] + sol.potentials.g[j] - cij;
            let rhs = -eps * (mu.weights()[i] * nu.weights()[j]).ln() + 10.0 * tol;
            prop_assert!(lhs <= rhs);
        }
    }

    #[test]
    fn start_point_does_not_matter(seed in any::<u64>(), m in 2usize..7, n in 2usize..7, eps in 0.05f64..1.0) {
        let (mu, nu, c) = instance(seed, m, n);
        let cfg = SinkhornConfig::new(eps);
        let g0: Vec<f64> = (0..n).map(|j| (j as f64 * 0.37).sin()).collect();
        let shifted: Vec<f64> = g0.iter().map(|v| v + 5.0).collect();
        let a = sinkhorn_solve_from(&mu, &nu, &c, &cfg, Some(&g0)).unwrap();
        let b = sinkhorn_solve_from(&mu, &nu, &c, &cfg, Some(&shifted)).unwrap();
        let cold = sinkhorn_solve(&mu, &nu, &c, &cfg).unwrap();
        for other in [&b, &cold] {
            prop_assert!(sup(&a.potentials.f, &other.potentials.f) <= 10.0 * cfg.tol);
            prop_assert!(sup(&a.potentials.g, &other.potentials.g) <= 10.0 * cfg.tol);
        }
    }

    #[test]
    fn parallel_rows_are_bitwise_identical(seed in any::<u64>(), m in 1usize..12, n in 1usize..12) {
        let (mu, nu, c) = instance(seed, m, n);
        let serial = sinkhorn_solve(&mu, &nu, &c, &SinkhornConfig::new(0.1)).unwrap();
        let cfg = SinkhornConfig { parallel: true, ..SinkhornConfig::new(0.1) };
        let parallel = sinkhorn_solve(&mu, &nu, &c, &cfg).unwrap();
        prop_assert_eq!(serial, parallel);
    }

    #[test]
    fn exact_value_is_a_lower_bound(seed in any::<u64>(), m in 1usize..7, n in 1usize..7, eps in 0.01f64..1.0) {
        let (mu, nu, c) = instance(seed, m, n);
        let exact = solve_exact(&mu, &nu, &c).unwrap();
        let sol = sinkhorn_solve(&mu, &nu, &c, &SinkhornConfig::new(eps)).unwrap();
        prop_assert!(exact.value <= sol.primal + 1e-12);
        prop_assert!(exact.value <= sol.dual + 10.0 * sol.tol);
        let diag = check_optimality(&exact.coupling, &exact.potentials, &c, &mu, &nu).unwrap();
        prop_assert!(diag.max_violation <= 1e-9 && diag.slackness_defect <= 1e-9 && diag.gap.abs() <= 1e-9);
    }

    #[test]
    fn double_transform_is_feasible_and_improves(
        seed in any::<u64>(),
        m in 1usize..7,
        n in 1usize..7,
        gs in prop::collection::vec(-1.0f64..1.0, 7),
    ) {
        let (mu, nu, c) = instance(seed, m, n);
        let g = &gs[..n];
        let f = c_transform(g, &c, TransformDirection::ColsToRows);
        let g2 = c_transform(&f, &c, TransformDirection::RowsToCols);
        for ((i, j), &cij) in c.values().indexed_iter() {
            prop_assert!(f[i] + g2[j] <= cij + 1e-12);
        }
        for (a, b) in g2.iter().zip(g) {
            prop_assert!(a >= &(b - 1e-12));
        }
        let before = mu.integrate(&f) + nu.integrate(g);
        let after = mu.integrate(&f) + nu.integrate(&g2);
        prop_assert!(after >= before - 1e-12);
        // A third transform changes nothing.
        let f3 = c_transform(&g2, &c, TransformDirection::ColsToRows);
        prop_assert!(sup(&f3, &f) <= 1e-12);
    }

    #[test]
    fn normalize_keeps_sums_and_balances(
        fs in prop::collection::vec(-10.0f64..10.0, 4),
        gs in prop::collection::vec(-10.0f64..10.0, 3),
        seed in any::<u64>(),
    ) {
        let (mu, nu, _) = instance(seed, 4, 3);
        let pp = PotentialPair::new(fs.clone(), gs.clone(), 0.5).unwrap();
        let out = normalize_pair(&pp, &mu, &nu);
        prop_assert!((mu.integrate(&out.f) - nu.integrate(&out.g)).abs() <= 1e-12);
        let a = out.f[0] - fs[0];
        for (i, f) in fs.iter().enumerate() {
            for (j, g) in gs.iter().enumerate() {
                let moved = out.f[i] + out.g[j];
                prop_assert!((moved - (f + g)).abs() <= 1e-12 * (1.0 + a.abs() + f.abs() + g.abs()));
            }
        }
    }

    #[test]
    fn multimarginal_normalization_and_marginals(seed in any::<u64>(), a in 1usize..4, b in 1usize..4, c in 1usize..4) {
        let p = random_multi_problem(&mut rng(seed), &[a, b, c]);
        let sol = mm_sinkhorn(&p, 0.3, 1e-10, 100_000).unwrap();
        prop_assert!(sol.residuals.iter().all(|&r| r <= 1e-10));
        let means: Vec<f64> = sol.family.potentials.iter().zip(p.measures()).map(|(f, m)| m.integrate(f)).collect();
        prop_assert!(means.iter().all(|m| (m - means[0]).abs() <= 1e-10));
    }

    #[test]
    fn schedules_strictly_decrease(start in 0.01f64..10.0, ratio in 1.5f64..1e4, factor in 0.05f64..0.95) {
        let end = start / ratio;
        let s = EpsSchedule::new(start, end, factor).unwrap();
        prop_assert!(s.len() >= 2);
        prop_assert_eq!(s.values()[0], start);
        prop_assert_eq!(*s.values().last().unwrap(), end);
        prop_assert!(s.values().windows(2).all(|w| w[0] > w[1]));
    }
}
