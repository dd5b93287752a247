use ddc_core::dgp::{solve_oracle, DgpConfig};
use ddc_core::montecarlo::{run_montecarlo, McConfig};
use ddc_core::panel::UtilitySpec;
use ddc_core::pipeline::EstimationConfig;

fn config(reps: usize, fixed_seed: bool) -> McConfig {
    McConfig { dgp: DgpConfig { t_obs: 500, seed: 17, ..DgpConfig::default() }, reps, estimation: EstimationConfig::default(), fixed_seed }
}

#[test]
fn equal_seeds_give_zero_spread() {
    let cfg = config(2, true);
    let o = solve_oracle(&cfg.dgp).unwrap();
    let out = run_montecarlo(&cfg, &o, &UtilitySpec::monte_carlo(0.9).unwrap()).unwrap();
    assert_eq!(out.rows.len(), 2);
    assert!(out.rows.iter().all(|r| r.sd == 0.0));
    // the known scale is ‖θ‖ = √5
    let n: f64 = out.reps[0].theta_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((n - 5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn table_does_not_depend_on_worker_count() {
    let cfg = config(4, false);
    let o = solve_oracle(&cfg.dgp).unwrap();
    let spec = UtilitySpec::monte_carlo(0.9).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_montecarlo(&cfg, &o, &spec)).unwrap();
    let b = many.install(|| run_montecarlo(&cfg, &o, &spec)).unwrap();
    for (r, s) in a.rows.iter().zip(&b.rows) {
        assert_eq!(r.mean.to_bits(), s.mean.to_bits());
        assert_eq!(r.sd.to_bits(), s.sd.to_bits());
    }
    assert!(run_montecarlo(&config(1, false), &o, &spec).is_err());
}
