//! Replication harness: simulate, estimate with the scale fixed at ‖θ‖,
//! aggregate mean / sd / bias per component.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::dgp::{derive_seed, simulate_panel, DgpConfig, OracleSolution};
use crate::error::{Error, Result};
use crate::matrix::{cosine, mean, norm, sample_sd};
use crate::panel::UtilitySpec;
use crate::pipeline::{estimate, EstimationConfig};

#[derive(Debug, Clone, Serialize)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub reps: usize,
    pub estimation: EstimationConfig,
    /// Every replicate reuses `dgp.seed` instead of a derived stream.
    pub fixed_seed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct McRep {
    pub rep: usize,
    pub seed: u64,
    pub theta_star: Vec<f64>,
    pub cosine: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct McRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub param: String,
    #[serde(rename = "true")]
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McOutcome {
    pub rows: Vec<McRow>,
    pub reps: Vec<McRep>,
    pub failures: Vec<(usize, String)>,
    pub mean_cosine: f64,
}

pub fn rep_seed(cfg: &McConfig, r: usize) -> u64 {
    if cfg.fixed_seed {
        cfg.dgp.seed
    } else {
        derive_seed(cfg.dgp.seed, r as u64)
    }
}

pub fn run_montecarlo(cfg: &McConfig, oracle: &OracleSolution, spec: &UtilitySpec) -> Result<McOutcome> {
    if cfg.reps < 2 {
        return Err(Error::Config(format!("montecarlo needs reps ≥ 2, got {}", cfg.reps)));
    }
    cfg.dgp.validate()?;
    let truth = cfg.dgp.theta().to_vec();
    if spec.k_theta() != truth.len() {
        return Err(Error::Config(format!("spec `{}` has {} index components, the design has {}", spec.name, spec.k_theta(), truth.len())));
    }
    let mut est_cfg = cfg.estimation.clone();
    if est_cfg.known_scale.is_none() {
        est_cfg.known_scale = Some(norm(&truth));
    }

    let results: Vec<Result<McRep>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let seed = rep_seed(cfg, r);
            let dgp = DgpConfig { seed, ..cfg.dgp.clone() };
            let sim = simulate_panel(&dgp, oracle)?;
            let est = estimate(&sim.sample, spec, &est_cfg)?;
            let theta_star = est.theta.theta_star;
            Ok(McRep { rep: r, seed, cosine: cosine(&theta_star, &truth), theta_star, episodes: sim.episodes })
        })
        .collect();

    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rep) => reps.push(rep),
            Err(e) => {
                warn!("replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    if failures.len() * 10 > cfg.reps || reps.len() < 2 {
        return Err(Error::Estimation(format!("{} of {} replicates failed; first: {}", failures.len(), cfg.reps, failures[0].1)));
    }

    let rows = truth
        .iter()
        .enumerate()
        .map(|(j, &tv)| {
            let draws: Vec<f64> = reps.iter().map(|r| r.theta_star[j]).collect();
            let m = mean(&draws);
            McRow { t: cfg.dgp.t_obs, param: spec.param_names[j].clone(), truth: tv, mean: m, sd: sample_sd(&draws), bias: m - tv }
        })
        .collect();
    let mean_cosine = mean(&reps.iter().map(|r| r.cosine).collect::<Vec<_>>());
    Ok(McOutcome { rows, reps, failures, mean_cosine })
}
