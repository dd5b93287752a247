//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured values, then asserts it. Tolerances are pinned here.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ddc_cli::commands::oracle_summary;
use ddc_core::dgp::{simulate_panel, simulate_static_logit, solve_oracle, DgpConfig};
use ddc_core::fie::{random_contraction, solve_fie_dense, successive_approximation};
use ddc_core::index::pss_estimate;
use ddc_core::kernels::{bandwidth_pss, certify_kernel, KernelSpec};
use ddc_core::matrix::{cosine, sup_diff};
use ddc_core::montecarlo::{run_montecarlo, McConfig};
use ddc_core::panel::{TerminalPolicy, UtilitySpec};
use ddc_core::pipeline::{estimate, estimate_basis, EstimationConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// criterion 1
const C1_BIAS: f64 = 0.15;
const C1_SD: (f64, f64) = (0.15, 0.60);
// criterion 2
const C2_COSINE: f64 = 0.98;
// criterion 3
const C3_GAP: f64 = 1e-8;
const C3_SECONDS: f64 = 1.0;
// criterion 4
const C4_EXACT: f64 = 1e-8;
const C4_ESTIMATED: f64 = 0.05;
// criterion 5
const C5_RMSE: f64 = 0.3;
const C5_MEDIAN: f64 = 0.2;
// criterion 6
const C6_ON_GRID: f64 = 1e-6;
const C6_OFF_GRID: f64 = 1e-4;
const C6_IDENTITY: f64 = 1e-8;
const C6_BIN_SHARE: f64 = 0.95;
// criterion 7
const C7_EXACT: f64 = 1e-10;
// criterion 8
const C8_TOL: f64 = 1e-6;
// criterion 9
const C9_COSINE: f64 = 0.99;

/// Written straight to stderr so the line shows even when the harness
/// captures the output of passing tests.
fn verdict(n: u32, ok: bool, detail: String) {
    let _ = writeln!(std::io::stderr(), "criterion {n}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn mc_spec() -> UtilitySpec {
    UtilitySpec::monte_carlo(0.9).unwrap()
}

fn mc_table(t: usize, reps: usize) -> (ddc_core::montecarlo::McOutcome, f64) {
    let cfg = McConfig { dgp: DgpConfig { t_obs: t, ..DgpConfig::default() }, reps, estimation: EstimationConfig::default(), fixed_seed: false };
    let o = solve_oracle(&cfg.dgp).unwrap();
    let start = Instant::now();
    let out = run_montecarlo(&cfg, &o, &mc_spec()).unwrap();
    (out, start.elapsed().as_secs_f64())
}

#[test]
fn criterion_01_monte_carlo_table() {
    let (out, secs) = mc_table(1000, 50);
    let mut ok = out.failures.is_empty();
    let mut detail = Vec::new();
    for r in &out.rows {
        ok &= r.bias.abs() <= C1_BIAS && (C1_SD.0..=C1_SD.1).contains(&r.sd);
        detail.push(format!("{} mean {:.4} (true {}) bias {:.4} sd {:.4}", r.param, r.mean, r.truth, r.bias, r.sd));
    }
    verdict(1, ok, format!("{}; {} failed reps; {secs:.1}s", detail.join("; "), out.failures.len()));
}

#[test]
fn criterion_02_large_sample_direction() {
    let (out, secs) = mc_table(4000, 20);
    let worst = out.reps.iter().map(|r| r.cosine).fold(f64::INFINITY, f64::min);
    verdict(
        2,
        out.mean_cosine >= C2_COSINE,
        format!("mean cosine {:.4} (need {C2_COSINE}), worst rep {worst:.4}; {secs:.1}s", out.mean_cosine),
    );
}

#[test]
fn criterion_03_fie_solver_matches_dense() {
    let (mut worst_gap, mut worst_time) = (0.0f64, 0.0f64);
    for seed in 0..25 {
        let (grid, a, z) = random_contraction(200, 3000 + seed);
        assert_eq!(grid.len(), 200);
        let start = Instant::now();
        let it = successive_approximation(&a, &z, 1e-12, 5000, 1.0).unwrap();
        let t_it = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let dense = solve_fie_dense(&a, &z).unwrap();
        let t_dense = start.elapsed().as_secs_f64();
        worst_gap = worst_gap.max(sup_diff(&it.values, &dense));
        worst_time = worst_time.max(t_it).max(t_dense);
    }
    verdict(3, worst_gap <= C3_GAP && worst_time <= C3_SECONDS, format!("sup gap {worst_gap:.2e}, slowest solve {worst_time:.4}s over 25 instances"));
}

fn constant_basis_gap(t: usize, seed: u64, cfg: &EstimationConfig, policy: Option<TerminalPolicy>) -> (f64, String) {
    let dgp = DgpConfig { t_obs: t, seed, ..DgpConfig::default() };
    let o = solve_oracle(&dgp).unwrap();
    let mut panel = simulate_panel(&dgp, &o).unwrap().sample;
    if let Some(p) = policy {
        panel.set_terminal(p);
    }
    let st = estimate_basis(&panel, &UtilitySpec::monte_carlo_with_constant(0.9).unwrap(), cfg).unwrap();
    let gap = st.basis.values.column(0).iter().map(|b| (b - 1.0).abs()).fold(0.0, f64::max);
    (gap, st.basis.method_used.clone())
}

#[test]
fn criterion_04_constant_basis() {
    let exact_cfg = EstimationConfig { exact: true, trunc_l: Some(8), ..EstimationConfig::default() };
    let (exact, m1) = constant_basis_gap(2000, 12, &exact_cfg, Some(TerminalPolicy::None));
    let (estimated, m2) = constant_basis_gap(4000, 1, &EstimationConfig::default(), None);
    // ẑ built directly instead of projected from φ̂, for reference only
    let direct_cfg = EstimationConfig { z_direct: true, ..EstimationConfig::default() };
    let (direct, _) = constant_basis_gap(4000, 1, &direct_cfg, None);
    let _ = writeln!(std::io::stderr(), "criterion 4 (z_direct, reference): sup|b1-1| {direct:.4}");
    verdict(
        4,
        exact <= C4_EXACT && estimated <= C4_ESTIMATED,
        format!("exact mode sup|b1-1| {exact:.2e} ({m1}); estimated mode at T=4000 {estimated:.4} ({m2})"),
    );
}

/// RMSE of Q̂ − θ0 against ln(p/(1−p)) over the central 80% of the support,
/// and Q̂(0.5) − θ0. The constant continuation payoff θ0 is not identified
/// separately from the location of Q.
fn quantile_fit(theta0: f64, z_direct: bool) -> (f64, f64, (f64, f64)) {
    let dgp = DgpConfig { t_obs: 4000, seed: 1, theta0, ..DgpConfig::default() };
    let o = solve_oracle(&dgp).unwrap();
    let panel = simulate_panel(&dgp, &o).unwrap().sample;
    let cfg = EstimationConfig { known_scale: Some(5f64.sqrt()), z_direct, ..EstimationConfig::default() };
    let e = estimate(&panel, &mc_spec(), &cfg).unwrap();
    let q = &e.quantile;
    let (lo, hi) = (q.lo + 0.1 * (q.hi - q.lo), q.hi - 0.1 * (q.hi - q.lo));
    let errs: Vec<f64> = q
        .grid
        .iter()
        .zip(&q.q)
        .filter(|(p, _)| (lo..=hi).contains(*p))
        .map(|(p, v)| v - theta0 - (p / (1.0 - p)).ln())
        .collect();
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
    (rmse, q.eval(0.5).0 - theta0, (q.lo, q.hi))
}

#[test]
fn criterion_05_quantile_recovery() {
    let (rmse, med, (lo, hi)) = quantile_fit(-5.0, false);
    // variants for reference only: no constant payoff, and ẑ built directly
    let (rmse0, med0, _) = quantile_fit(0.0, false);
    let _ = writeln!(std::io::stderr(), "criterion 5 (theta0 = 0, reference): rmse {rmse0:.4}, Q(0.5) {med0:.4}");
    let (rmse_d, med_d, _) = quantile_fit(-5.0, true);
    let _ = writeln!(std::io::stderr(), "criterion 5 (z_direct, reference): rmse {rmse_d:.4}, Q(0.5)-theta0 {med_d:.4}");
    verdict(
        5,
        rmse <= C5_RMSE && med.abs() <= C5_MEDIAN,
        format!("support [{lo:.4}, {hi:.4}]; rmse {rmse:.4} (need {C5_RMSE}); Q(0.5)-theta0 {med:.4} (need |.| <= {C5_MEDIAN})"),
    );
}

#[test]
fn criterion_06_oracle_validity() {
    let dgp = DgpConfig { t_obs: 40_000, seed: 6, ..DgpConfig::default() };
    let o = solve_oracle(&dgp).unwrap();
    let s = oracle_summary(&dgp, &o, 1000).unwrap();
    let sim = simulate_panel(&dgp, &o).unwrap();
    let y = sim.sample.y();
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| sim.p_true[a].total_cmp(&sim.p_true[b]));
    let bins = 40;
    let size = order.len() / bins;
    let mut inside = 0;
    for b in 0..bins {
        let idx = &order[b * size..(b + 1) * size];
        let n = idx.len() as f64;
        let freq = idx.iter().map(|&i| f64::from(y[i])).sum::<f64>() / n;
        let p = idx.iter().map(|&i| sim.p_true[i]).sum::<f64>() / n;
        let se = (idx.iter().map(|&i| sim.p_true[i] * (1.0 - sim.p_true[i])).sum::<f64>()).sqrt() / n;
        if (freq - p).abs() <= 3.0 * se {
            inside += 1;
        }
    }
    let share = inside as f64 / bins as f64;
    verdict(
        6,
        s.residual_on_grid <= C6_ON_GRID && s.residual_off_grid <= C6_OFF_GRID && s.logistic_identity <= C6_IDENTITY && share >= C6_BIN_SHARE,
        format!(
            "on-grid {:.2e}, off-grid {:.2e} at {} points, identity {:.2e}, {inside}/{bins} bins within 3 SE",
            s.residual_on_grid, s.residual_off_grid, s.off_grid_points, s.logistic_identity
        ),
    );
}

#[test]
fn criterion_07_algebraic_properties() {
    let s5 = 5f64.sqrt();
    let (x, y) = simulate_static_logit(&[1.0 / s5, 2.0 / s5], 800, 70).unwrap();
    let k = KernelSpec::high_order(4, 2).unwrap();
    let h = bandwidth_pss(800, 2, None).unwrap().value;
    let base = pss_estimate(&x, &y, &k, h).unwrap();
    let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
    let flip = pss_estimate(&x, &flipped, &k, h).unwrap();
    let flip_gap = base.iter().zip(&flip).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
    let zero = pss_estimate(&x, &vec![1; y.len()], &k, h).unwrap().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut perm: Vec<usize> = (0..y.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(71));
    let px = x.select_rows(&perm);
    let py: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
    let permuted = pss_estimate(&px, &py, &k, h).unwrap();
    let bit_exact = base.iter().zip(&permuted).all(|(a, b)| a.to_bits() == b.to_bits());
    let tol = 1e-11;
    let (_, a, z1) = random_contraction(200, 77);
    let (_, _, z2) = random_contraction(200, 78);
    let mix: Vec<f64> = z1.iter().zip(&z2).map(|(u, v)| 1.7 * u - 0.4 * v).collect();
    let solve = |z: &[f64]| successive_approximation(&a, z, tol, 5000, 1.0).unwrap().values;
    let (s1, s2, sm) = (solve(&z1), solve(&z2), solve(&mix));
    let comb: Vec<f64> = s1.iter().zip(&s2).map(|(u, v)| 1.7 * u - 0.4 * v).collect();
    let lin = sup_diff(&sm, &comb);
    verdict(
        7,
        flip_gap <= C7_EXACT && zero <= C7_EXACT && bit_exact && lin <= 10.0 * tol,
        format!("flip {flip_gap:.2e}, constant Y {zero:.2e}, permutation bit-exact {bit_exact}, linearity {lin:.2e} (tol {tol:.0e})"),
    );
}

#[test]
fn criterion_08_kernel_certification() {
    let mut specs = Vec::new();
    for d in 1..=3 {
        specs.push(KernelSpec::gaussian(d));
        specs.push(KernelSpec::gaussian_product(d));
    }
    for order in [2, 4, 6, 8, 10] {
        for d in 1..=2 {
            specs.push(KernelSpec::high_order(order, d).unwrap());
        }
    }
    specs.push(KernelSpec::high_order(4, 3).unwrap());
    let (mut mass, mut moment, mut grad) = (0.0f64, 0.0f64, 0.0f64);
    for (i, spec) in specs.iter().enumerate() {
        let c = certify_kernel(spec, 100, 800 + i as u64).unwrap();
        mass = mass.max(c.mass_error);
        moment = moment.max(c.max_moment);
        grad = grad.max(c.max_gradient_error);
    }
    verdict(
        8,
        mass <= C8_TOL && moment <= C8_TOL && grad <= C8_TOL,
        format!("{} kernels: mass {mass:.2e}, moments {moment:.2e}, gradient {grad:.2e}", specs.len()),
    );
}

#[test]
fn criterion_09_static_single_index() {
    let s5 = 5f64.sqrt();
    let theta = [1.0 / s5, 2.0 / s5];
    let (x, y) = simulate_static_logit(&theta, 4000, 9).unwrap();
    let k = KernelSpec::high_order(4, 2).unwrap();
    let h = bandwidth_pss(4000, 2, None).unwrap().value;
    let est = pss_estimate(&x, &y, &k, h).unwrap();
    let c = cosine(&est, &theta);
    verdict(9, c >= C9_COSINE, format!("theta {est:.4?}, cosine {c:.5}"));
}

fn cli(args: &[&str]) -> i32 {
    let argv: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    ddc_cli::main_with(&argv)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn criterion_10_taxi_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let prep = dir.path().join("prep");
    let est = dir.path().join("est");
    assert_eq!(cli(&["taxi-prep", "--out", prep.to_str().unwrap()]), 0);
    let panel = prep.join("panel.csv");
    assert_eq!(cli(&["estimate", "--panel", panel.to_str().unwrap(), "--spec", "taxi", "--out", est.to_str().unwrap()]), 0);
    let summary = json(&prep.join("taxi_summary.json"));
    let report = json(&est.join("report.json"));
    let names: Vec<String> = serde_json::from_value(report["param_names"].clone()).unwrap();
    let theta: Vec<f64> = serde_json::from_value(report["theta_star"].clone()).unwrap();
    let get = |n: &str| theta[names.iter().position(|m| m == n).unwrap()];
    let (u, c1, c2) = (get("theta_u"), get("theta_c01"), get("theta_c02"));
    verdict(
        10,
        u > 0.0 && c1 < 0.0 && c2 < 0.0,
        format!(
            "{:.1} trips and {:.0} minutes per shift; theta_u {u:.4}, theta_c01 {c1:.4}, theta_c02 {c2:.5}",
            summary["trips_per_shift"].as_f64().unwrap(),
            summary["minutes_per_shift"].as_f64().unwrap()
        ),
    );
}

#[test]
fn exit_codes_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    assert_eq!(cli(&["simulate", "--T", "300", "--seed", "4", "--out", o]), 0);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 4);
    assert!(m["artifacts"].as_array().unwrap().iter().any(|a| a == "panel.csv"));
    // the echoed configuration reproduces the run
    let again = dir.path().join("again");
    let cfg = out.join("config.txt");
    assert_eq!(cli(&["simulate", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]), 0);
    assert_eq!(std::fs::read(out.join("panel.csv")).unwrap(), std::fs::read(again.join("panel.csv")).unwrap());
    assert_eq!(json(&again.join("manifest.json"))["config_hash"], m["config_hash"]);

    assert_eq!(cli(&["simulate", "--no-such-key", "1", "--out", o]), 2);
    assert_eq!(cli(&["simulate", "--beta", "1.5", "--out", o]), 2);
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["--help"]), 0);
    let missing = dir.path().join("missing.csv");
    let failed = dir.path().join("failed");
    assert_eq!(cli(&["estimate", "--panel", missing.to_str().unwrap(), "--out", failed.to_str().unwrap()]), 3);
    assert_eq!(json(&failed.join("manifest.json"))["status"], "failed");
    // a divergent solve with its safeguards turned off is a numeric error
    let panel = out.join("panel.csv");
    let numeric = dir.path().join("numeric");
    let code = cli(&[
        "estimate", "--panel", panel.to_str().unwrap(), "--fie.method", "iterate", "--fie.max_iter", "3",
        "--fie.override_contraction", "--out", numeric.to_str().unwrap(),
    ]);
    assert_eq!(code, 4);
    assert!(numeric.join("manifest.json").exists());
}
