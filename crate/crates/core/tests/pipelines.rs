use eot_core::exact::{
    brute_force_assignment, c_transform, check_optimality, solve_exact, TransformDirection,
};
use eot_core::lab::{
    example52, example52_control, ldp_estimate, run_schedule, CostFamily, EpsSchedule, SolverSettings,
};
use eot_core::measures::dual_value;
use eot_core::multimarginal::{mm_exact, mm_sinkhorn_from};
use eot_core::random::{
    random_assignment_instance, random_instance, random_multi_problem, random_weights, rng,
};
use eot_core::sinkhorn::sinkhorn_solve_from;
use eot_core::*;

fn line(points: &[f64]) -> DiscreteMeasure {
    DiscreteMeasure::uniform_on_line(points).unwrap()
}

/// `mu` uniform, `nu` with seeded random weights, both on `(k + 1/2)/n`.
fn graded_grid(n: usize, seed: u64) -> (DiscreteMeasure, DiscreteMeasure, CostMatrix) {
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let mu = line(&xs);
    let nu = DiscreteMeasure::on_line(&xs, random_weights(&mut rng(seed), n)).unwrap();
    let c = build_cost_matrix(&CostKernel::SquaredEuclidean, &mu, &nu).unwrap();
    (mu, nu, c)
}

#[test]
fn unbalancing_the_optimal_pair_lowers_the_dual() {
    let mut r = rng(21);
    for _ in 0..10 {
        let (mu, nu, c) = random_instance(&mut r, 5, 5);
        let sol = sinkhorn_solve(&mu, &nu, &c, &SinkhornConfig::new(0.2)).unwrap();
        let at_opt = dual_value(&sol.potentials, &c, &mu, &nu, 0.2).unwrap();
        let mut moved = sol.potentials.clone();
        moved.f.iter_mut().for_each(|v| *v += 0.1);
        let off = dual_value(&moved, &c, &mu, &nu, 0.2).unwrap();
        assert!(off < at_opt, "{off} !< {at_opt}");
    }
}

#[test]
fn transform_of_exact_potentials_dominates() {
    let mut r = rng(22);
    for _ in 0..20 {
        let (mu, nu, c) = random_instance(&mut r, 5, 5);
        let exact = solve_exact(&mu, &nu, &c).unwrap();
        let g = c_transform(&exact.potentials.f, &c, TransformDirection::RowsToCols);
        for (a, b) in g.iter().zip(&exact.potentials.g) {
            assert!(*a >= b - 1e-12);
        }
        for ((i, j), &cij) in c.values().indexed_iter() {
            assert!(exact.potentials.f[i] + g[j] <= cij + 1e-12);
        }
    }
}

#[test]
fn small_epsilon_potentials_respect_the_entry_bound() {
    let mu = line(&[0.0, 1.0, 2.0]);
    let nu = line(&[0.5, 1.5, 2.5]);
    let c = build_cost_matrix(&CostKernel::SquaredEuclidean, &mu, &nu).unwrap();
    // A cold start at eps = 1e-3 needs far more sweeps than max_iter on
    // this tied instance; the schedule reaches it in a few thousand.
    let schedule = EpsSchedule::new(1.0, 1e-3, 0.5).unwrap();
    let settings = SolverSettings::default();
    let report = run_schedule(&mu, &nu, &CostFamily::fixed(c.clone()), &schedule, &settings).unwrap();
    let last = report.rows.last().unwrap();
    assert_eq!(last.eps, 1e-3);
    assert!(last.max_violation <= 1e-3 * 9f64.ln() + 1e-8, "{last:?}");
    let sol = sinkhorn_solve_from(
        &mu,
        &nu,
        &c,
        &settings.config(1e-3),
        Some(&report.final_potentials.g),
    )
    .unwrap();
    let diag = check_optimality(&sol.coupling, &sol.potentials, &c, &mu, &nu).unwrap();
    assert!(diag.max_violation <= 1e-3 * 9f64.ln() + 1e-8, "{diag:?}");
    assert!((report.s0 - 0.25).abs() <= 1e-12);
    assert!(report.s0 <= sol.primal);
}

#[test]
fn simplex_matches_permutation_enumeration() {
    let mut r = rng(23);
    for k in 0..100 {
        let n = 2 + k % 5;
        let (mu, nu, c) = random_assignment_instance(&mut r, n);
        let exact = solve_exact(&mu, &nu, &c).unwrap();
        let oracle = brute_force_assignment(&mu, &nu, &c).unwrap();
        assert!(
            (exact.value - oracle).abs() <= 1e-9,
            "n={n}: {} vs {oracle}",
            exact.value
        );
    }
}

#[test]
fn warm_start_matches_cold_start() {
    let (mu, nu, c) = graded_grid(12, 24);
    let schedule = EpsSchedule::new(1.0, 0.01, 0.5).unwrap();
    let settings = SolverSettings::default();
    let report = run_schedule(&mu, &nu, &CostFamily::fixed(c.clone()), &schedule, &settings).unwrap();
    let cold = sinkhorn_solve(&mu, &nu, &c, &settings.config(0.01)).unwrap();
    let f = &report.final_potentials.f;
    let g = &report.final_potentials.g;
    let tol = 10.0 * settings.tol;
    assert!(f
        .iter()
        .zip(&cold.potentials.f)
        .all(|(a, b)| (a - b).abs() <= tol));
    assert!(g
        .iter()
        .zip(&cold.potentials.g)
        .all(|(a, b)| (a - b).abs() <= tol));
}

#[test]
fn schedule_values_decrease_to_the_exact_value() {
    let (mu, nu, c) = graded_grid(12, 25);
    let schedule = EpsSchedule::new(1.0, 0.005, 0.5).unwrap();
    let report = run_schedule(
        &mu,
        &nu,
        &CostFamily::fixed(c),
        &schedule,
        &SolverSettings::default(),
    )
    .unwrap();
    assert!(report.dual_unique_hint);
    let tol = 10.0 * report.tol;
    for w in report.rows.windows(2) {
        assert!(w[1].s_eps <= w[0].s_eps + tol);
    }
    for row in &report.rows {
        assert!(row.s_eps >= report.s0 - tol);
        assert!(row.max_violation <= row.eps * ((12 * 12) as f64).ln() + tol);
        // (f, f^c) is feasible, so its value never exceeds the optimum.
        assert!(row.projected_dual <= report.s0 + 1e-12);
    }
    let (first, last) = (&report.rows[0], report.rows.last().unwrap());
    assert!(last.projected_dual > first.projected_dual);
    assert!(last.l1_f < first.l1_f && last.l1_g < first.l1_g);
}

#[test]
fn disjoint_grids_keep_half_potentials() {
    let schedule = EpsSchedule::new(1.0, 1e-3, 0.5).unwrap();
    let settings = SolverSettings::default();
    for n in [1, 7] {
        let report = example52(n, &schedule, &settings).unwrap();
        assert!(report.max_deviation_from(0.5) <= 1e-9);
    }
    let control = example52_control(50, &schedule, &settings).unwrap();
    assert_eq!(control.rows.len(), schedule.len());
    let spread = control
        .rows
        .iter()
        .map(|r| r.f_max - r.f_min)
        .fold(f64::INFINITY, f64::min);
    assert!(spread >= 1e-3);
}

#[test]
fn corner_cell_rate_approaches_target() {
    let (mu, nu, c) = graded_grid(10, 26);
    let schedule = EpsSchedule::new(1.0, 1e-3, 0.5).unwrap();
    let report = ldp_estimate(&mu, &nu, &c, &[(0, 9)], &schedule, &SolverSettings::default()).unwrap();
    assert!(report.dual_unique_hint);
    assert!(report.dropped.is_empty());
    let last = report.rows.last().unwrap();
    assert_eq!(last.eps, 1e-3);
    assert!(last.gap <= 0.05, "{report:?}");
    assert!(report
        .rows
        .iter()
        .all(|r| r.rate.is_finite() && r.log_mass <= 0.0));
}

#[test]
fn multimarginal_dual_descends_to_exact_value() {
    for seed in 0..3 {
        let p = random_multi_problem(&mut rng(seed), &[3, 3, 3]);
        let exact = mm_exact(&p).unwrap();
        let schedule = EpsSchedule::new(1.0, 1e-2, 0.5).unwrap();
        let mut warm = None;
        let mut values = Vec::new();
        for &eps in schedule.values() {
            // Values settle to four digits by tol = 1e-6; tighter tolerances
            // cost hundreds of thousands of sweeps at the smallest eps.
            let sol = mm_sinkhorn_from(&p, eps, 1e-6, 1_000_000, warm.as_ref()).unwrap();
            values.push(sol.dual_objective(&p));
            warm = Some(sol.family);
        }
        for w in values.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{values:?}");
        }
        let last = *values.last().unwrap();
        assert!(last >= exact.value - 1e-6);
        assert!(last - exact.value <= 0.05);
    }
}
