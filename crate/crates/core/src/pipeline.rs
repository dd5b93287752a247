//! The full estimation sequence p̂ → δ/φ̂ → ẑ → b* → m̂ → θ̂ → Q̂, and
//! path-level resampling around it.

use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ccp::{
    common_support, compute_delta, estimate_ccp, estimate_phi, estimate_support, estimate_z, estimate_z_exact, own_signs,
    truncation_length, CcpEstimate, CcpOptions, GeneratedRegressors, LeadWeight, Support, ZProjection,
};
use crate::dgp::derive_seed;
use crate::error::{Error, Result};
use crate::fie::{check_contraction, solve_basis, BasisSolution, ContractionReport, FieOperator, LeadTable, PGrid, SolveOptions};
use crate::index::{
    estimate_quantile, normalize_theta, pss_estimate, pss_estimate_leave_both_out, IndexModel, QuantileEstimate,
    SampleIndex, ThetaEstimate,
};
use crate::kernels::{
    bandwidth_fixed, bandwidth_optimal, bandwidth_pss, bandwidth_suboptimal, Bandwidth, KernelFamily, KernelSpec,
};
use crate::matrix::{sample_sd, RowMatrix};
use crate::panel::{apply_transforms, PanelSample, UtilitySpec};
use crate::smooth::Smoother;

#[derive(Debug, Clone, Serialize)]
pub struct EstimationConfig {
    /// First-stage kernel (p̂, φ̂, m̂, ẑ, ξ cells).
    pub kernel: KernelFamily,
    /// Order of the average-derivative kernel.
    pub pss_order: u32,
    pub pss_gamma: Option<f64>,
    /// Rescale m̂ components to unit sd inside the pair sum.
    pub pss_standardize: bool,
    pub leave_both_out: bool,
    pub bw_p: Option<Vec<f64>>,
    pub bw_phi: Option<Vec<f64>>,
    pub bw_m: Option<Vec<f64>>,
    pub bw_z: Option<f64>,
    pub bw_xi: Option<f64>,
    pub bw_theta: Option<f64>,
    pub grid_size: usize,
    pub trunc_tol: f64,
    pub trunc_l: Option<usize>,
    pub p_clamp: f64,
    pub leave_one_out: bool,
    pub solve: SolveOptions,
    pub contraction_bins: usize,
    /// Fitted-lead δ and the matching ẑ, under which b* solves the sample
    /// equation exactly.
    pub exact: bool,
    /// Build ẑ as NW_p[±W] plus the p-conditional cell difference of δ
    /// instead of projecting φ̂ on p̂. Same population target; avoids
    /// borrowing thin X-space cells.
    pub z_direct: bool,
    pub known_scale: Option<f64>,
    /// Largest share of observations allowed to drop out for thin cells.
    pub max_unsupported: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            kernel: KernelFamily::GaussianProduct,
            pss_order: 4,
            pss_gamma: None,
            pss_standardize: true,
            leave_both_out: false,
            bw_p: None,
            bw_phi: None,
            bw_m: None,
            bw_z: None,
            bw_xi: None,
            bw_theta: None,
            grid_size: 200,
            trunc_tol: 1e-4,
            trunc_l: None,
            p_clamp: 1e-6,
            leave_one_out: false,
            solve: SolveOptions::default(),
            contraction_bins: 30,
            exact: false,
            z_direct: false,
            known_scale: None,
            max_unsupported: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Bandwidths {
    pub p: Vec<Bandwidth>,
    pub phi: Vec<Bandwidth>,
    pub m: Vec<Bandwidth>,
    pub z: Bandwidth,
    pub xi: Bandwidth,
    pub theta: Bandwidth,
}

#[derive(Debug, Clone)]
pub struct Estimation {
    pub spec: UtilitySpec,
    pub n_obs: usize,
    pub bandwidths: Bandwidths,
    pub ccp: CcpEstimate,
    pub support: Support,
    pub regs: GeneratedRegressors,
    pub z: ZProjection,
    pub contraction: ContractionReport,
    pub basis: BasisSolution,
    pub model: IndexModel,
    pub index: SampleIndex,
    /// Observations that entered the pair sum.
    pub pss_rows: Vec<usize>,
    pub theta: ThetaEstimate,
    pub quantile: QuantileEstimate,
    pub timings: Vec<(String, f64)>,
}

/// Stages up to and including the basis solve.
#[derive(Debug, Clone)]
pub struct BasisStage {
    pub bandwidths_p: Vec<Bandwidth>,
    pub bandwidths_phi: Vec<Bandwidth>,
    pub bw_z: Bandwidth,
    pub ccp: CcpEstimate,
    pub support: Support,
    pub regs: GeneratedRegressors,
    pub z: ZProjection,
    pub leads: LeadTable,
    pub operator: FieOperator,
    pub contraction: ContractionReport,
    pub basis: BasisSolution,
    pub timings: Vec<(String, f64)>,
}

fn per_coordinate(over: &Option<Vec<f64>>, x: &RowMatrix, t: usize, iota: u32, what: &str) -> Result<Vec<Bandwidth>> {
    let k = x.cols();
    match over {
        Some(v) if v.len() == 1 => (0..k).map(|_| bandwidth_fixed(v[0], t)).collect(),
        Some(v) if v.len() == k => v.iter().map(|h| bandwidth_fixed(*h, t)).collect(),
        Some(v) => Err(Error::Config(format!("{what} needs 1 or {k} values, got {}", v.len()))),
        None => x.column_sd().iter().map(|s| bandwidth_optimal(*s, t, iota, k)).collect(),
    }
}

fn values(b: &[Bandwidth]) -> Vec<f64> {
    b.iter().map(|b| b.value).collect()
}

struct Clock(Vec<(String, f64)>, Instant);

impl Clock {
    fn new() -> Self {
        Clock(Vec::new(), Instant::now())
    }
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.0.push((stage.to_string(), (now - self.1).as_secs_f64()));
        self.1 = now;
    }
}

pub fn estimate_basis(sample: &PanelSample, spec: &UtilitySpec, cfg: &EstimationConfig) -> Result<BasisStage> {
    let mut clock = Clock::new();
    if spec.k != sample.k() {
        return Err(Error::Config(format!("spec {} expects {} state variables, panel has {}", spec.name, spec.k, sample.k())));
    }
    sample.require_both_choices()?;
    let t_obs = sample.len();
    let x = sample.x_matrix();
    let y = sample.y();
    let w = apply_transforms(sample, spec).map_err(|e| e.in_stage("transforms"))?;
    let kernel = KernelSpec::new(cfg.kernel, x.cols())?;
    let iota = kernel.order();

    let bw_p = per_coordinate(&cfg.bw_p, &x, t_obs, iota, "bw.p")?;
    let ccp = estimate_ccp(&x, &y, kernel, &values(&bw_p), CcpOptions { clamp: cfg.p_clamp, leave_one_out: cfg.leave_one_out })
        .map_err(|e| e.in_stage("ccp"))?;
    let mut support = estimate_support(&ccp.p_hat).map_err(|e| e.in_stage("ccp"))?;
    clock.lap("ccp");

    let l = match cfg.trunc_l {
        Some(l) => l,
        None => truncation_length(spec.beta, &w, cfg.trunc_tol),
    };
    let k0 = spec.k0;
    let (w0, w1) = split_cols(&w, k0);
    let lead = if cfg.exact { LeadWeight::Fitted(&ccp.p_hat) } else { LeadWeight::Realized };
    let (d0, usable) = compute_delta(sample, &w0, 0, spec.beta, l, lead).map_err(|e| e.in_stage("regressors"))?;
    let (d1, _) = compute_delta(sample, &w1, 1, spec.beta, l, lead).map_err(|e| e.in_stage("regressors"))?;
    let delta = join_cols(&d0, &d1);
    let bw_phi = per_coordinate(&cfg.bw_phi, &x, t_obs, iota, "bw.phi")?;
    let regs = estimate_phi(&x, &y, &w, k0, &delta, &usable, l, kernel, &values(&bw_phi))
        .map_err(|e| e.in_stage("regressors"))?;
    let dropped = regs.supported.iter().filter(|s| !**s).count();
    if dropped as f64 > cfg.max_unsupported * t_obs as f64 {
        return Err(Error::Estimation(format!("{dropped} of {t_obs} observations lack a conditional cell; use a larger h_phi"))
            .in_stage("regressors"));
    }
    clock.lap("regressors");

    let sd_p = sample_sd(&ccp.p_hat);
    let bw_z = match cfg.bw_z {
        Some(h) => bandwidth_fixed(h, t_obs)?,
        None => bandwidth_suboptimal(sd_p, t_obs, iota)?,
    };
    let kp = kernel.with_dim(1)?;
    let bw_xi = match cfg.bw_xi {
        Some(h) => h,
        None => bw_z.value,
    };
    if !support.degenerate {
        let cell: Vec<Option<u8>> = (0..t_obs).map(|t| usable[t].then_some(y[t])).collect();
        support = common_support(&support, &ccp.p_hat, &cell, kp, bw_xi, cfg.grid_size).map_err(|e| e.in_stage("projection"))?;
    }
    let z = if cfg.exact || cfg.z_direct {
        let signs = own_signs(k0, spec.k1);
        let mut ws = w.clone();
        for i in 0..ws.rows() {
            for (v, s) in ws.row_mut(i).iter_mut().zip(&signs) {
                *v *= s;
            }
        }
        estimate_z_exact(&ws, &regs.supported, &delta, &usable, &y, &ccp.p_hat, &support, kp, bw_z.value, cfg.grid_size)
    } else {
        estimate_z(&regs.phi_hat, &regs.supported, &ccp.p_hat, &support, kp, bw_z.value, cfg.grid_size)
    }
    .map_err(|e| e.in_stage("projection"))?;
    clock.lap("projection");

    let leads = LeadTable::build(sample, &usable, &ccp.p_hat, spec.beta, l);
    let grid = PGrid::new(support.lo, support.hi, cfg.grid_size).map_err(|e| e.in_stage("basis"))?;
    let operator = FieOperator::build(grid, &leads, &y, &ccp.p_hat, kp, bw_xi).map_err(|e| e.in_stage("basis"))?;
    let contraction = check_contraction(&leads, &y, &ccp.p_hat, support.lo, support.hi, cfg.contraction_bins)
        .map_err(|e| e.in_stage("basis"))?;
    if !contraction.passes {
        warn!("contraction diagnostic {:.3} ≥ 1; the basis equation may not be a contraction", contraction.statistic);
    }
    let basis = solve_basis(&z.z, &operator, &cfg.solve, contraction.passes).map_err(|e| e.in_stage("basis"))?;
    clock.lap("basis");
    Ok(BasisStage {
        bandwidths_p: bw_p,
        bandwidths_phi: bw_phi,
        bw_z,
        ccp,
        support,
        regs,
        z,
        leads,
        operator,
        contraction,
        basis,
        timings: clock.0,
    })
}

fn split_cols(w: &RowMatrix, k0: usize) -> (RowMatrix, RowMatrix) {
    let n = w.rows();
    let k1 = w.cols() - k0;
    let mut a = RowMatrix::zeros(n, k0);
    let mut b = RowMatrix::zeros(n, k1);
    for i in 0..n {
        a.row_mut(i).copy_from_slice(&w.row(i)[..k0]);
        b.row_mut(i).copy_from_slice(&w.row(i)[k0..]);
    }
    (a, b)
}

fn join_cols(a: &RowMatrix, b: &RowMatrix) -> RowMatrix {
    let n = a.rows();
    let mut out = RowMatrix::zeros(n, a.cols() + b.cols());
    for i in 0..n {
        let r = out.row_mut(i);
        r[..a.cols()].copy_from_slice(a.row(i));
        r[a.cols()..].copy_from_slice(b.row(i));
    }
    out
}

pub fn estimate(sample: &PanelSample, spec: &UtilitySpec, cfg: &EstimationConfig) -> Result<Estimation> {
    let stage = estimate_basis(sample, spec, cfg)?;
    let mut clock = Clock::new();
    let t_obs = sample.len();
    let x = sample.x_matrix();
    let y = sample.y();
    let kernel = KernelSpec::new(cfg.kernel, x.cols())?;
    let k_theta = spec.k_theta();

    let bw_m = per_coordinate(&cfg.bw_m, &x, t_obs, kernel.order(), "bw.m")?;
    let xi_usable = stage.operator.xi_values(&stage.basis.values);
    let mut xi = RowMatrix::zeros(t_obs, k_theta);
    for (r, &t) in stage.leads.obs.iter().enumerate() {
        xi.row_mut(t).copy_from_slice(xi_usable.row(r));
    }
    let cell: Vec<Option<u8>> = (0..t_obs).map(|t| stage.regs.usable[t].then_some(y[t])).collect();
    let model = IndexModel {
        spec: spec.clone(),
        cell,
        delta: stage.regs.delta.clone(),
        xi,
        phi_smoother: Smoother::new(x.clone(), &values(&stage.bandwidths_phi), kernel),
        m_smoother: Smoother::new(x.clone(), &values(&bw_m), kernel),
    };
    let index = model.at_sample(&x);
    let rows: Vec<usize> = (0..t_obs).filter(|&t| index.ok[t] && stage.regs.supported[t]).collect();
    if rows.len() < 2 {
        return Err(Error::Estimation("fewer than 2 observations have both conditional cells; use a larger h_m".into())
            .in_stage("index"));
    }
    if (t_obs - rows.len()) as f64 > cfg.max_unsupported * t_obs as f64 {
        return Err(Error::Estimation(format!("{} of {t_obs} observations lack a conditional cell; use a larger h_m", t_obs - rows.len()))
            .in_stage("index"));
    }
    clock.lap("index");

    let bw_theta = match cfg.bw_theta {
        Some(h) => bandwidth_fixed(h, rows.len())?,
        None => bandwidth_pss(rows.len(), k_theta, cfg.pss_gamma).map_err(|e| e.in_stage("theta"))?,
    };
    let kt = KernelSpec::high_order(cfg.pss_order, k_theta)?;
    let m_used = index.m.select_rows(&rows);
    let scale = if cfg.pss_standardize { m_used.column_sd() } else { vec![1.0; k_theta] };
    if let Some(j) = scale.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Estimation(format!("index component {} has no variation; its coefficient is not identified", spec.param_names[j]))
            .in_stage("theta"));
    }
    let y_used: Vec<u8> = rows.iter().map(|&t| y[t]).collect();
    let raw = if cfg.leave_both_out {
        pss_estimate_leave_both_out(&model, &x, &index, &rows, &y, &kt, bw_theta.value, &scale)
    } else {
        let mut z = m_used.clone();
        for i in 0..z.rows() {
            for (v, s) in z.row_mut(i).iter_mut().zip(&scale) {
                *v /= s;
            }
        }
        pss_estimate(&z, &y_used, &kt, bw_theta.value).map(|t| t.iter().zip(&scale).map(|(a, s)| a / s).collect())
    }
    .map_err(|e| e.in_stage("theta"))?;
    let theta = normalize_theta(&raw, cfg.known_scale).map_err(|e| e.in_stage("theta"))?;
    clock.lap("theta");
    let quantile = estimate_quantile(&stage.z, &stage.basis, &theta.theta_star).map_err(|e| e.in_stage("quantile"))?;
    clock.lap("quantile");
    info!("theta* = {:?}", theta.theta_star);

    let mut timings = stage.timings;
    timings.extend(clock.0);
    Ok(Estimation {
        spec: spec.clone(),
        n_obs: t_obs,
        bandwidths: Bandwidths {
            p: stage.bandwidths_p,
            phi: stage.bandwidths_phi,
            m: bw_m,
            z: stage.bw_z.clone(),
            xi: bandwidth_fixed(stage.operator.bandwidth, t_obs)?,
            theta: bw_theta,
        },
        ccp: stage.ccp,
        support: stage.support,
        regs: stage.regs,
        z: stage.z,
        contraction: stage.contraction,
        basis: stage.basis,
        model,
        index,
        pss_rows: rows,
        theta,
        quantile,
        timings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResampleOutcome {
    pub standard_errors: Vec<f64>,
    pub successes: usize,
    pub failures: Vec<(usize, String)>,
    /// θ̂* per successful replicate.
    pub draws: Vec<Vec<f64>>,
}

/// Path-level bootstrap: replicate r draws paths with replacement from a
/// stream derived from (seed, r) and reruns the full pipeline.
pub fn resample_se(sample: &PanelSample, spec: &UtilitySpec, cfg: &EstimationConfig, reps: usize, seed: u64) -> Result<ResampleOutcome> {
    let seeds: Vec<u64> = (0..reps as u64).map(|r| derive_seed(seed, r)).collect();
    resample_se_with_seeds(sample, spec, cfg, &seeds)
}

pub fn resample_se_with_seeds(sample: &PanelSample, spec: &UtilitySpec, cfg: &EstimationConfig, seeds: &[u64]) -> Result<ResampleOutcome> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!("resampling needs at least 2 replicates, got {}", seeds.len())));
    }
    let n_paths = sample.paths().len();
    let results: Vec<Result<Vec<f64>>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let picks: Vec<usize> = (0..n_paths).map(|_| rng.gen_range(0..n_paths)).collect();
            let boot = sample.from_paths(&picks)?;
            Ok(estimate(&boot, spec, cfg)?.theta.theta_star)
        })
        .collect();
    let mut draws = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(t) => draws.push(t),
            Err(e) => {
                warn!("resample replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    if failures.len() * 10 > seeds.len() || draws.len() < 2 {
        return Err(Error::Estimation(format!("{} of {} resampling replicates failed; first: {}", failures.len(), seeds.len(), failures[0].1)));
    }
    let k = draws[0].len();
    let standard_errors = (0..k).map(|j| sample_sd(&draws.iter().map(|d| d[j]).collect::<Vec<_>>())).collect();
    Ok(ResampleOutcome { standard_errors, successes: draws.len(), failures, draws })
}
