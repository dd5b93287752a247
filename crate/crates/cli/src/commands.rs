use std::path::PathBuf;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ddc_core::dgp::{derive_seed, simulate_panel, simulate_taxi_trips, solve_oracle, solve_taxi_oracle, DgpConfig, OracleSolution};
use ddc_core::matrix::RowMatrix;
use ddc_core::montecarlo::{run_montecarlo, McConfig};
use ddc_core::panel::{build_taxi_states, group_trips, load_panel, load_trips, write_panel, write_trips, PanelSample, UtilitySpec};
use ddc_core::pipeline::{estimate, resample_se, Estimation};
use ddc_core::Error;

use crate::artifacts::{num, RunDir};
use crate::config::Settings;
use crate::{CliError, Command};

pub fn dispatch(cmd: Command, s: &Settings) -> Result<(), CliError> {
    let out = s.path("out").expect("default");
    let mut run = RunDir::create(&out)?;
    let result = match cmd {
        Command::Simulate => simulate(s, &mut run),
        Command::Oracle => oracle(s, &mut run),
        Command::Estimate => estimate_cmd(s, &mut run),
        Command::Montecarlo => montecarlo(s, &mut run),
        Command::TaxiPrep => taxi_prep(s, &mut run),
    };
    run.finish(cmd.name(), s, result.as_ref().map(|_| ()))?;
    result
}

fn staged<T>(stage: &'static str, r: ddc_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Core(e.in_stage(stage)))
}

fn solve(s: &Settings, run: &mut RunDir) -> Result<(DgpConfig, OracleSolution), CliError> {
    let dgp = s.dgp_config();
    staged("oracle", dgp.validate())?;
    let o = staged("oracle", solve_oracle(&dgp))?;
    run.lap("oracle");
    Ok((dgp, o))
}

#[derive(Serialize)]
struct SimulateSummary {
    n_obs: usize,
    paths: usize,
    share_y1: f64,
    escapes: usize,
    transitions: usize,
    oracle_iterations: usize,
    oracle_residual: f64,
}

fn simulate(s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let (dgp, o) = solve(s, run)?;
    let sim = staged("simulate", simulate_panel(&dgp, &o))?;
    run.lap("simulate");
    let path = run.file("panel.csv");
    staged("write", write_panel(&path, &sim.sample))?;
    let obs = sim.sample.observations();
    run.csv(
        "p_true.csv",
        &["path_id".into(), "t".into(), "p".into()],
        obs.iter().zip(&sim.p_true).map(|(o, p)| vec![o.path_id.to_string(), o.t.to_string(), num(*p)]),
    )?;
    let share = obs.iter().filter(|o| o.y == 1).count() as f64 / obs.len() as f64;
    run.json(
        "simulate_summary.json",
        &SimulateSummary {
            n_obs: obs.len(),
            paths: sim.episodes,
            share_y1: share,
            escapes: sim.escapes,
            transitions: sim.transitions,
            oracle_iterations: o.iterations,
            oracle_residual: o.residual,
        },
    )?;
    run.lap("write");
    Ok(())
}

#[derive(Serialize)]
pub struct OracleSummary {
    pub iterations: usize,
    pub residual_on_grid: f64,
    pub residual_off_grid: f64,
    pub off_grid_points: usize,
    pub logistic_identity: f64,
    pub index_grid: (f64, f64, f64),
    pub state_box: ([f64; 2], [f64; 2]),
    pub trace: Vec<f64>,
}

/// Quantile of a sample by sorting, nearest rank.
fn quantile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let i = ((v.len() - 1) as f64 * q).round() as usize;
    v[i]
}

/// Box covering the simulated states, from the 0.1% and 99.9% quantiles of a
/// long pre-simulation.
pub fn state_box(dgp: &DgpConfig, o: &OracleSolution) -> ddc_core::Result<([f64; 2], [f64; 2])> {
    let pre = DgpConfig { t_obs: 20_000, seed: derive_seed(dgp.seed, 0xB0C5), ..dgp.clone() };
    let sim = simulate_panel(&pre, o)?;
    let x = sim.sample.x_matrix();
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    for j in 0..2 {
        let mut c = x.column(j);
        lo[j] = quantile(&mut c, 0.001);
        hi[j] = quantile(&mut c, 0.999);
    }
    Ok((lo, hi))
}

pub fn oracle_summary(dgp: &DgpConfig, o: &OracleSolution, n_off: usize) -> ddc_core::Result<OracleSummary> {
    let (lo, hi) = state_box(dgp, o)?;
    // off-grid: random states in the box, scored on their index
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(dgp.seed, 0x0FF));
    let mut off: f64 = 0.0;
    for _ in 0..n_off {
        let x = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        off = off.max(o.bellman_residual_at(o.index(&x)).abs());
    }
    let mut ident: f64 = 0.0;
    for n in o.node_table(101, lo, hi) {
        ident = ident.max((n.eta_star - (n.p.ln() - n.log_q)).abs());
    }
    Ok(OracleSummary {
        iterations: o.iterations,
        residual_on_grid: o.residual,
        residual_off_grid: off,
        off_grid_points: n_off,
        logistic_identity: ident,
        index_grid: (o.lo, o.hi(), o.step),
        state_box: (lo, hi),
        trace: o.trace.clone(),
    })
}

fn oracle(s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let (dgp, o) = solve(s, run)?;
    let summary = staged("oracle", oracle_summary(&dgp, &o, 1000))?;
    let (lo, hi) = summary.state_box;
    let n = s.int("oracle.nodes") as usize;
    let nodes = o.node_table(n, lo, hi);
    run.lap("diagnostics");
    run.csv(
        "oracle_nodes.csv",
        &["x1", "x2", "v0", "v1", "ve", "eta_star", "p"].map(String::from),
        nodes.iter().map(|n| [n.x1, n.x2, n.v0, n.v1, n.ve, n.eta_star, n.p].map(num).to_vec()),
    )?;
    run.json("oracle_summary.json", &summary)?;
    run.lap("write");
    Ok(())
}

pub fn load(s: &Settings) -> Result<(PanelSample, UtilitySpec), CliError> {
    let spec_name = s.text("spec").expect("default");
    let spec = UtilitySpec::preset(&spec_name, s.f64("beta"))?;
    let path: PathBuf = s.path("panel").ok_or_else(|| CliError::Config("estimate needs --panel".into()))?;
    let mut sample = staged("load", load_panel(&path, &s.schema()))?;
    sample.set_terminal(s.terminal_policy(&spec_name));
    Ok((sample, spec))
}

#[derive(Serialize)]
struct Report<'a> {
    spec: &'a str,
    param_names: &'a [String],
    n_obs: usize,
    theta_star: &'a [f64],
    theta_raw: &'a [f64],
    lambda_hat: f64,
    standard_errors: Option<&'a [f64]>,
    se_reps: usize,
    se_failures: usize,
    support: &'a ddc_core::ccp::Support,
    q_grid: Vec<(f64, f64)>,
    m_values: &'a str,
    truncation_l: usize,
    pss_observations: usize,
    unsupported: usize,
    bandwidths: &'a ddc_core::pipeline::Bandwidths,
    config_echo: Vec<(&'static str, String)>,
}

#[derive(Serialize)]
struct FieDiagnostics<'a> {
    contraction: &'a ddc_core::fie::ContractionReport,
    method_used: &'a str,
    spectral_radius: Option<f64>,
    damping: Option<f64>,
    iterations: &'a [usize],
    final_change: &'a [f64],
    traces: &'a [Vec<f64>],
    grid_size: usize,
    bandwidth_xi: f64,
}

fn estimate_cmd(s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let (sample, spec) = load(s)?;
    let cfg = s.estimation_config()?;
    run.lap("load");
    let mut est = staged("estimate", estimate(&sample, &spec, &cfg))?;
    run.add_timings("estimate", &est.timings);
    run.lap("estimate");
    let reps = s.int("se.reps") as usize;
    let mut se_failures = 0;
    if reps > 0 {
        let boot = staged("resample", resample_se(&sample, &spec, &cfg, reps, s.int("seed")))?;
        se_failures = boot.failures.len();
        est.theta.standard_errors = Some(boot.standard_errors);
        est.theta.se_reps = boot.successes;
        run.lap("resample");
    }
    write_estimation(s, run, &sample, &spec, &est, se_failures)?;
    run.lap("write");
    Ok(())
}

fn write_estimation(s: &Settings, run: &mut RunDir, sample: &PanelSample, spec: &UtilitySpec, e: &Estimation, se_failures: usize) -> Result<(), CliError> {
    let names = &spec.param_names;
    let mut header: Vec<String> = ["path_id", "t", "y", "p_hat", "usable", "supported", "in_pss"].map(String::from).to_vec();
    for prefix in ["delta", "phi", "m"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    let mut in_pss = vec![false; e.n_obs];
    for &t in &e.pss_rows {
        in_pss[t] = true;
    }
    let obs = sample.observations();
    let rows = (0..e.n_obs).map(|t| {
        let mut r = vec![
            obs[t].path_id.to_string(),
            obs[t].t.to_string(),
            obs[t].y.to_string(),
            num(e.ccp.p_hat[t]),
            u8::from(e.regs.usable[t]).to_string(),
            u8::from(e.regs.supported[t]).to_string(),
            u8::from(in_pss[t]).to_string(),
        ];
        r.extend(e.regs.delta.row(t).iter().map(|v| num(*v)));
        let sup = e.regs.supported[t];
        r.extend(e.regs.phi_hat.row(t).iter().map(|v| if sup { num(*v) } else { String::new() }));
        let ok = e.index.ok[t];
        r.extend(e.index.m.row(t).iter().map(|v| if ok { num(*v) } else { String::new() }));
        r
    });
    run.csv("diag_regressors.csv", &header, rows)?;

    let mut bh = vec!["p".to_string()];
    bh.extend(names.iter().map(|n| format!("b_{n}")));
    bh.extend(names.iter().map(|n| format!("z_{n}")));
    let b = &e.basis;
    run.csv(
        "basis.csv",
        &bh,
        b.grid.iter().enumerate().map(|(g, p)| {
            let mut r = vec![num(*p)];
            r.extend(b.values.row(g).iter().map(|v| num(*v)));
            r.extend(e.z.z.row(g).iter().map(|v| num(*v)));
            r
        }),
    )?;

    run.json(
        "fie_diagnostics.json",
        &FieDiagnostics {
            contraction: &e.contraction,
            method_used: &b.method_used,
            spectral_radius: b.spectral_radius,
            damping: b.damping,
            iterations: &b.iterations,
            final_change: &b.final_change,
            traces: &b.traces,
            grid_size: b.grid.len(),
            bandwidth_xi: e.bandwidths.xi.value,
        },
    )?;

    let q = &e.quantile;
    run.csv(
        "quantile_curve.csv",
        &["p", "q", "q_uncorrected"].map(String::from),
        q.grid.iter().enumerate().map(|(i, p)| vec![num(*p), num(q.q[i]), num(q.q_uncorrected[i])]),
    )?;

    write_mtheta(s, run, e)?;

    let unsupported = e.regs.supported.iter().filter(|v| !**v).count();
    if unsupported > 0 {
        warn!("{unsupported} observations lack a conditional cell and were left out");
    }
    let report = Report {
        spec: &spec.name,
        param_names: names,
        n_obs: e.n_obs,
        theta_star: &e.theta.theta_star,
        theta_raw: &e.theta.theta_raw,
        lambda_hat: e.theta.lambda_hat,
        standard_errors: e.theta.standard_errors.as_deref(),
        se_reps: e.theta.se_reps,
        se_failures,
        support: &e.support,
        q_grid: q.grid.iter().zip(&q.q).map(|(p, v)| (*p, *v)).collect(),
        m_values: "diag_regressors.csv",
        truncation_l: e.regs.l,
        pss_observations: e.pss_rows.len(),
        unsupported,
        bandwidths: &e.bandwidths,
        config_echo: s.echo(),
    };
    run.json("report.json", &report)?;
    info!("theta* = {:?}", e.theta.theta_star);
    Ok(())
}

/// m̂(x)ᵀθ̂* along each state between its 5% and 95% quantiles, the other
/// states held at their medians.
fn write_mtheta(s: &Settings, run: &mut RunDir, e: &Estimation) -> Result<(), CliError> {
    let x = e.model.phi_smoother.data();
    let k = x.cols();
    let n = s.int("mtheta.points") as usize;
    let cols: Vec<Vec<f64>> = (0..k).map(|j| x.column(j)).collect();
    let stats: Vec<(f64, f64, f64)> = cols
        .iter()
        .map(|c| {
            let mut c = c.clone();
            (quantile(&mut c, 0.05), quantile(&mut c, 0.5), quantile(&mut c, 0.95))
        })
        .collect();
    let mut pts = Vec::with_capacity(k * n);
    for j in 0..k {
        for i in 0..n {
            let mut row: Vec<f64> = stats.iter().map(|s| s.1).collect();
            let (lo, _, hi) = stats[j];
            row[j] = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            pts.push(row);
        }
    }
    let q = RowMatrix::from_rows(&pts, k);
    let m = e.model.eval(&q);
    let mut header = vec!["varied".to_string()];
    header.extend((1..=k).map(|j| format!("x{j}")));
    header.extend(e.spec.param_names.iter().map(|n| format!("m_{n}")));
    header.push("mtheta".into());
    let theta = &e.theta.theta_star;
    let rows = pts.iter().zip(&m).enumerate().map(|(r, (p, mv))| {
        let mut out = vec![format!("x{}", r / n + 1)];
        out.extend(p.iter().map(|v| num(*v)));
        match mv {
            Some(v) => {
                out.extend(v.iter().map(|a| num(*a)));
                out.push(num(v.iter().zip(theta).map(|(a, b)| a * b).sum()));
            }
            None => out.extend(std::iter::repeat(String::new()).take(theta.len() + 1)),
        }
        out
    });
    run.csv("mtheta_curves.csv", &header, rows)
}

fn montecarlo(s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let (dgp, o) = solve(s, run)?;
    let spec = UtilitySpec::preset(&s.text("spec").expect("default"), dgp.beta)?;
    let cfg = McConfig { dgp, reps: s.int("reps") as usize, estimation: s.estimation_config()?, fixed_seed: s.flag("fixed_seed") };
    let out = staged("montecarlo", run_montecarlo(&cfg, &o, &spec))?;
    run.lap("replications");
    run.csv(
        "table1.csv",
        &["T", "param", "true", "mean", "sd", "bias"].map(String::from),
        out.rows.iter().map(|r| vec![r.t.to_string(), r.param.clone(), num(r.truth), num(r.mean), num(r.sd), num(r.bias)]),
    )?;
    let mut header = vec!["rep".to_string(), "seed".into()];
    header.extend(spec.param_names.iter().cloned());
    header.extend(["cosine".to_string(), "paths".into()]);
    run.csv(
        "montecarlo_reps.csv",
        &header,
        out.reps.iter().map(|r| {
            let mut v = vec![r.rep.to_string(), r.seed.to_string()];
            v.extend(r.theta_star.iter().map(|t| num(*t)));
            v.extend([num(r.cosine), r.episodes.to_string()]);
            v
        }),
    )?;
    #[derive(Serialize)]
    struct Summary<'a> {
        reps: usize,
        successes: usize,
        failures: &'a [(usize, String)],
        mean_cosine: f64,
    }
    run.json("montecarlo_summary.json", &Summary { reps: cfg.reps, successes: out.reps.len(), failures: &out.failures, mean_cosine: out.mean_cosine })?;
    run.lap("write");
    Ok(())
}

#[derive(Serialize)]
struct TaxiSummary {
    shifts: usize,
    trips: usize,
    trips_per_shift: f64,
    revenue_per_shift: f64,
    minutes_per_shift: f64,
    revenue_per_trip: f64,
    minutes_per_trip: f64,
    generated: bool,
}

fn taxi_prep(s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let (trips, generated) = match s.path("trips") {
        Some(p) => (staged("load", load_trips(&p))?, false),
        None => {
            let cfg = s.taxi_config();
            let oracle = staged("generate", solve_taxi_oracle(&cfg))?;
            let t = staged("generate", simulate_taxi_trips(&cfg, &oracle))?;
            let path = run.file("trips.csv");
            staged("write", write_trips(&path, &t))?;
            (t, true)
        }
    };
    run.lap("trips");
    let shifts = group_trips(&trips);
    let panel = staged("states", build_taxi_states(&shifts, s.f64("taxi.time_unit")))?;
    if panel.is_empty() {
        return Err(CliError::Core(Error::Empty.in_stage("states")));
    }
    run.lap("states");
    let path = run.file("panel.csv");
    staged("write", write_panel(&path, &panel))?;
    let n = shifts.iter().filter(|s| !s.trips.is_empty()).count() as f64;
    let (rev, min) = ddc_core::dgp::shift_means(&shifts);
    let nt = trips.len() as f64;
    run.json(
        "taxi_summary.json",
        &TaxiSummary {
            shifts: n as usize,
            trips: trips.len(),
            trips_per_shift: nt / n,
            revenue_per_shift: rev,
            minutes_per_shift: min,
            revenue_per_trip: trips.iter().map(|t| t.revenue).sum::<f64>() / nt,
            minutes_per_trip: trips.iter().map(|t| t.minutes).sum::<f64>() / nt,
            generated,
        },
    )?;
    run.lap("write");
    Ok(())
}
