use std::time::Instant;

use ddc_core::fie::{random_contraction, solve_fie_dense, spectral_radius, successive_approximation};
use ddc_core::matrix::sup_diff;

#[test]
fn iteration_matches_dense_solve_on_random_contractions() {
    for seed in 0..25 {
        let (grid, a, z) = random_contraction(200, seed);
        assert_eq!(grid.len(), 200);
        assert!(spectral_radius(&a, 200) < 1.0);
        let start = Instant::now();
        let it = successive_approximation(&a, &z, 1e-12, 2000, 1.0).unwrap();
        let t_iter = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let d = solve_fie_dense(&a, &z).unwrap();
        let t_dense = start.elapsed().as_secs_f64();
        let gap = sup_diff(&it.values, &d);
        assert!(gap <= 1e-8, "seed {seed}: {gap}");
        assert!(t_iter <= 1.0 && t_dense <= 1.0, "seed {seed}: {t_iter}s / {t_dense}s");
    }
}

#[test]
fn solve_is_linear_in_the_right_hand_side() {
    let tol = 1e-11;
    for seed in 100..105 {
        let (_, a, z1) = random_contraction(200, seed);
        let (_, _, z2) = random_contraction(200, seed + 1000);
        let (ca, cb) = (1.7, -0.4);
        let mix: Vec<f64> = z1.iter().zip(&z2).map(|(u, v)| ca * u + cb * v).collect();
        let s1 = successive_approximation(&a, &z1, tol, 5000, 1.0).unwrap().values;
        let s2 = successive_approximation(&a, &z2, tol, 5000, 1.0).unwrap().values;
        let sm = successive_approximation(&a, &mix, tol, 5000, 1.0).unwrap().values;
        let comb: Vec<f64> = s1.iter().zip(&s2).map(|(u, v)| ca * u + cb * v).collect();
        assert!(sup_diff(&sm, &comb) <= 10.0 * tol);
    }
}

#[test]
fn instances_are_reproducible() {
    let (g1, a1, z1) = random_contraction(50, 9);
    let (g2, a2, z2) = random_contraction(50, 9);
    assert_eq!(g1, g2);
    assert_eq!(a1, a2);
    assert_eq!(z1, z2);
}
