//! Choice probabilities, forward sums δ, generated regressors φ̂ and the
//! projection ẑ(p) = E[φ(X) | p(X) = p].

use log::{debug, warn};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::matrix::RowMatrix;
use crate::panel::PanelSample;
use crate::smooth::{cell_table, CellTable, Smoother, MIN_CELL_WEIGHT};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CcpOptions {
    pub clamp: f64,
    pub leave_one_out: bool,
}

impl Default for CcpOptions {
    fn default() -> Self {
        Self { clamp: 1e-6, leave_one_out: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
    pub degenerate: bool,
    /// [min p̂, max p̂] when the interval was narrowed to the common support
    /// of the two choice cells.
    pub full_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CcpEstimate {
    /// NW ratio before clamping.
    pub p_raw: Vec<f64>,
    /// Clamped to [ε, 1−ε]; every later stage uses this.
    pub p_hat: Vec<f64>,
    pub bandwidth: Vec<f64>,
    pub kernel: KernelSpec,
    pub clamp: f64,
}

/// p̂(X_s) = Σ_t Y_t K((X_t − X_s)/h) / Σ_t K((X_t − X_s)/h).
pub fn estimate_ccp(x: &RowMatrix, y: &[u8], kernel: KernelSpec, h: &[f64], opts: CcpOptions) -> Result<CcpEstimate> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::Contract(format!("need at least 2 observations, got {n}")));
    }
    if h.len() != x.cols() || h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Contract(format!("bandwidth {h:?} must be positive with one entry per state")));
    }
    if !(0.0..0.5).contains(&opts.clamp) {
        return Err(Error::Config(format!("p clamp must lie in [0, 0.5), got {}", opts.clamp)));
    }
    let sm = Smoother::new(x.clone(), h, kernel);
    let resp = RowMatrix::from_vec(n, 1, y.iter().map(|&v| f64::from(v)).collect());
    let cells = vec![Some(0u8); n];
    let tab = cell_table(&sm, x, &cells, &resp, opts.leave_one_out);
    let mut p_raw = Vec::with_capacity(n);
    for s in 0..n {
        let d = tab.mass[s][0];
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Estimation(format!(
                "kernel weights vanish at observation {s}; use a larger h_p"
            )));
        }
        p_raw.push(tab.sums[0].get(s, 0) / d);
    }
    let p_hat = p_raw.iter().map(|p| p.clamp(opts.clamp, 1.0 - opts.clamp)).collect();
    Ok(CcpEstimate { p_raw, p_hat, bandwidth: h.to_vec(), kernel, clamp: opts.clamp })
}

/// [min p̂, max p̂] over the sample.
pub fn estimate_support(p_hat: &[f64]) -> Result<Support> {
    if p_hat.is_empty() {
        return Err(Error::Empty);
    }
    let lo = p_hat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = lo >= hi;
    if degenerate {
        warn!("estimated CCP support is the single point {lo}; the quantile is not identified on an interval");
    }
    Ok(Support { lo, hi, degenerate, full_range: None })
}

/// Narrow [p̲, p̄] to the grid points where both choice cells carry kernel
/// mass. In population both choices occur at every p in (0,1); in a sample
/// the extreme p̂ can be all one choice, and the basis operator is undefined
/// there. Cells are given as in the operator (`None` leaves a row out).
pub fn common_support(support: &Support, p_hat: &[f64], cell: &[Option<u8>], kernel: KernelSpec, h: f64, n: usize) -> Result<Support> {
    check_grid(support, n, h)?;
    let grid = uniform_grid(support.lo, support.hi, n);
    let sm = Smoother::new(RowMatrix::from_vec(p_hat.len(), 1, p_hat.to_vec()), &[h], kernel);
    let q = RowMatrix::from_vec(n, 1, grid.clone());
    let tab = cell_table(&sm, &q, cell, &RowMatrix::zeros(p_hat.len(), 0), false);
    let ok: Vec<bool> = (0..n).map(|g| tab.supported(g)).collect();
    let (Some(first), Some(last)) = (ok.iter().position(|v| *v), ok.iter().rposition(|v| *v)) else {
        return Err(Error::Estimation("no p̂ value has both choices nearby; use a larger h_xi".into()));
    };
    if let Some(g) = (first..=last).find(|&g| !ok[g]) {
        return Err(Error::Estimation(format!("empty conditional cell at p={:.6} inside the support; use a larger h_xi", grid[g])));
    }
    if first == 0 && last == n - 1 {
        return Ok(*support);
    }
    if first == last {
        return Err(Error::Estimation(format!("both choices occur only near p={:.6}; use a larger h_xi", grid[first])));
    }
    warn!(
        "p-grid narrowed from [{:.4}, {:.4}] to [{:.4}, {:.4}], where both choices carry kernel mass",
        support.lo, support.hi, grid[first], grid[last]
    );
    Ok(Support { lo: grid[first], hi: grid[last], degenerate: false, full_range: Some((support.lo, support.hi)) })
}

/// Observations whose forward sums are complete. On a terminal path every
/// observation qualifies (nothing follows the end); otherwise t needs L
/// successors inside its path.
pub fn usable_set(sample: &PanelSample, l: usize) -> Vec<bool> {
    let mut usable = vec![false; sample.len()];
    let mut short = 0;
    for p in sample.paths() {
        if !p.terminal && p.len < l + 1 {
            debug!("path {} has {} periods, fewer than L+1={}; none of its observations are usable", p.id, p.len, l + 1);
            short += 1;
        }
        for pos in 0..p.len {
            usable[p.start + pos] = p.terminal || pos + l < p.len;
        }
    }
    if short > 0 {
        warn!("{short} open path(s) have fewer than L+1={} periods and contribute no usable observations", l + 1);
    }
    usable
}

/// Smallest L with β^L·max‖W‖ < tol·σ̂(W), σ̂ the smallest positive column sd.
pub fn truncation_length(beta: f64, w: &RowMatrix, tol: f64) -> usize {
    if beta <= 0.0 {
        return 1;
    }
    let max_norm = w.iter_rows().map(crate::matrix::norm).fold(0.0, f64::max);
    let sd = w.column_sd().into_iter().filter(|s| *s > 0.0).fold(f64::INFINITY, f64::min);
    let sd = if sd.is_finite() { sd } else { 1.0 };
    if max_norm == 0.0 {
        return 1;
    }
    let mut l = 1;
    let mut b = beta;
    while b * max_norm >= tol * sd && l < 100_000 {
        b *= beta;
        l += 1;
    }
    l
}

/// What weights the lead terms in δ.
#[derive(Debug, Clone, Copy)]
pub enum LeadWeight<'a> {
    /// 1{Y_{t+s} = d}, the estimator as written.
    Realized,
    /// p̂(X_{t+s}) for d = 1, 1 − p̂ for d = 0 (exact-cancellation mode).
    Fitted(&'a [f64]),
}

/// δ_dt = Σ_{s=1}^{L} β^s W_d(X_{t+s}) w_d(t+s) within the path of t.
/// Rows of unusable observations are left at zero.
pub fn compute_delta(
    sample: &PanelSample,
    w_d: &RowMatrix,
    d: u8,
    beta: f64,
    l: usize,
    lead: LeadWeight<'_>,
) -> Result<(RowMatrix, Vec<bool>)> {
    if l < 1 {
        return Err(Error::Contract("truncation L must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Contract(format!("beta must lie in [0,1), got {beta}")));
    }
    let usable = usable_set(sample, l);
    let obs = sample.observations();
    let kd = w_d.cols();
    let mut out = RowMatrix::zeros(sample.len(), kd);
    for p in sample.paths() {
        for pos in 0..p.len {
            let t = p.start + pos;
            if !usable[t] {
                continue;
            }
            let last = (pos + l).min(p.len - 1);
            let mut disc = 1.0;
            let row = out.row_mut(t);
            for q in pos + 1..=last {
                disc *= beta;
                let j = p.start + q;
                let wt = match lead {
                    LeadWeight::Realized => f64::from(u8::from(obs[j].y == d)),
                    LeadWeight::Fitted(ph) => {
                        if d == 1 {
                            ph[j]
                        } else {
                            1.0 - ph[j]
                        }
                    }
                };
                if wt != 0.0 {
                    for (acc, v) in row.iter_mut().zip(w_d.row(j)) {
                        *acc += disc * wt * v;
                    }
                }
            }
        }
    }
    Ok((out, usable))
}

#[derive(Debug, Clone)]
pub struct GeneratedRegressors {
    /// (δ_0, δ_1) stacked, T × k_θ.
    pub delta: RowMatrix,
    /// (φ̂_0, φ̂_1) stacked at every sample point, T × k_θ; zero where unsupported.
    pub phi_hat: RowMatrix,
    /// Both conditional cells carry enough mass at X_s.
    pub supported: Vec<bool>,
    pub usable: Vec<bool>,
    pub l: usize,
    pub bandwidth: Vec<f64>,
    pub cells: CellTable,
}

/// Own-term sign per stacked component: −1 for W0 parts, +1 for W1 parts.
pub fn own_signs(k0: usize, k1: usize) -> Vec<f64> {
    let mut s = vec![-1.0; k0];
    s.extend(vec![1.0; k1]);
    s
}

/// φ̂_d(X_s) = (−1)^{d+1} W_d(X_s) + NW[δ_d | X_s, Y=1] − NW[δ_d | X_s, Y=0],
/// with the regressions run over usable observations.
#[allow(clippy::too_many_arguments)]
pub fn estimate_phi(
    x: &RowMatrix,
    y: &[u8],
    w: &RowMatrix,
    k0: usize,
    delta: &RowMatrix,
    usable: &[bool],
    l: usize,
    kernel: KernelSpec,
    h: &[f64],
) -> Result<GeneratedRegressors> {
    let n = x.rows();
    let kt = w.cols();
    let cell: Vec<Option<u8>> = (0..n).map(|t| usable[t].then_some(y[t])).collect();
    let n1 = cell.iter().filter(|c| **c == Some(1)).count();
    let n0 = cell.iter().filter(|c| **c == Some(0)).count();
    if n1 == 0 || n0 == 0 {
        return Err(Error::Estimation(format!(
            "usable set has {n0} observations with Y=0 and {n1} with Y=1; both are needed"
        )));
    }
    let sm = Smoother::new(x.clone(), h, kernel);
    let cells = cell_table(&sm, x, &cell, delta, false);
    let signs = own_signs(k0, kt - k0);
    let mut phi = RowMatrix::zeros(n, kt);
    let mut supported = vec![false; n];
    for s in 0..n {
        if let Some(diff) = cells.difference(s) {
            supported[s] = true;
            let row = phi.row_mut(s);
            for j in 0..kt {
                row[j] = signs[j] * w.get(s, j) + diff[j];
            }
        }
    }
    let ns = supported.iter().filter(|v| **v).count();
    if ns == 0 {
        return Err(Error::Estimation(format!(
            "a conditional cell is empty at every observation (mass < {MIN_CELL_WEIGHT}); use a larger h_phi"
        )));
    }
    if ns < n {
        warn!("{} of {n} observations lack one of the conditional cells and are excluded", n - ns);
    }
    Ok(GeneratedRegressors { delta: delta.clone(), phi_hat: phi, supported, usable: usable.to_vec(), l, bandwidth: h.to_vec(), cells })
}

#[derive(Debug, Clone, Serialize)]
pub struct ZProjection {
    pub grid: Vec<f64>,
    /// grid × k_θ
    pub z: RowMatrix,
    pub bandwidth: f64,
}

pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
}

fn check_grid(support: &Support, grid_size: usize, h: f64) -> Result<()> {
    if grid_size < 2 {
        return Err(Error::Contract(format!("grid needs at least 2 points, got {grid_size}")));
    }
    if support.degenerate {
        return Err(Error::Estimation(format!("CCP support collapsed to {}; nothing to project on", support.lo)));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Contract(format!("h_z must be positive, got {h}")));
    }
    Ok(())
}

/// ẑ(p) by NW regression of φ̂(X_t) on p̂(X_t) over supported observations.
pub fn estimate_z(
    phi: &RowMatrix,
    include: &[bool],
    p_hat: &[f64],
    support: &Support,
    kernel: KernelSpec,
    h: f64,
    grid_size: usize,
) -> Result<ZProjection> {
    check_grid(support, grid_size, h)?;
    let grid = uniform_grid(support.lo, support.hi, grid_size);
    let n = p_hat.len();
    let sm = Smoother::new(RowMatrix::from_vec(n, 1, p_hat.to_vec()), &[h], kernel);
    let cell: Vec<Option<u8>> = include.iter().map(|v| v.then_some(0)).collect();
    let q = RowMatrix::from_vec(grid.len(), 1, grid.clone());
    let tab = cell_table(&sm, &q, &cell, phi, false);
    let mut z = RowMatrix::zeros(grid.len(), phi.cols());
    for g in 0..grid.len() {
        let m = tab.mass[g][0];
        if m < MIN_CELL_WEIGHT {
            return Err(Error::Estimation(format!(
                "no kernel mass near p={:.6}; use a larger h_z or a narrower grid",
                grid[g]
            )));
        }
        z.row_mut(g).copy_from_slice(&tab.mean(g, 0));
    }
    Ok(ZProjection { grid, z, bandwidth: h })
}

/// Exact-cancellation ẑ: NW_p[±W] plus the p-conditional cell difference of
/// the fitted-lead δ, built from the same cells as the basis operator.
#[allow(clippy::too_many_arguments)]
pub fn estimate_z_exact(
    w_signed: &RowMatrix,
    include: &[bool],
    delta: &RowMatrix,
    usable: &[bool],
    y: &[u8],
    p_hat: &[f64],
    support: &Support,
    kernel: KernelSpec,
    h: f64,
    grid_size: usize,
) -> Result<ZProjection> {
    let own = estimate_z(w_signed, include, p_hat, support, kernel, h, grid_size)?;
    let n = p_hat.len();
    let sm = Smoother::new(RowMatrix::from_vec(n, 1, p_hat.to_vec()), &[h], kernel);
    let cell: Vec<Option<u8>> = (0..n).map(|t| usable[t].then_some(y[t])).collect();
    let q = RowMatrix::from_vec(own.grid.len(), 1, own.grid.clone());
    let tab = cell_table(&sm, &q, &cell, delta, false);
    let mut z = own.z.clone();
    for g in 0..own.grid.len() {
        let diff = tab.difference(g).ok_or_else(|| {
            Error::Estimation(format!("empty conditional cell near p={:.6}; use a larger h_xi", own.grid[g]))
        })?;
        for (v, d) in z.row_mut(g).iter_mut().zip(diff) {
            *v += d;
        }
    }
    Ok(ZProjection { z, ..own })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Observation, TerminalPolicy};
    use approx::assert_relative_eq;

    fn sample(paths: &[&[(u8, f64)]]) -> PanelSample {
        let mut obs = Vec::new();
        for (pid, p) in paths.iter().enumerate() {
            for (t, (y, x)) in p.iter().enumerate() {
                obs.push(Observation { path_id: pid as i64, t: t as i64, y: *y, x: vec![*x] });
            }
        }
        PanelSample::new(obs).unwrap()
    }

    #[test]
    fn all_ones_gives_one() {
        let x = RowMatrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]);
        let c = estimate_ccp(&x, &[1, 1, 1, 1], KernelSpec::gaussian_product(1), &[1.0], CcpOptions::default()).unwrap();
        assert!(c.p_raw.iter().all(|p| *p == 1.0));
        assert!(c.p_hat.iter().all(|p| *p == 1.0 - 1e-6));
    }

    #[test]
    fn three_point_hand_check() {
        let xs = [0.0, 0.5, 2.0];
        let ys = [1u8, 0, 1];
        let x = RowMatrix::from_vec(3, 1, xs.to_vec());
        let c = estimate_ccp(&x, &ys, KernelSpec::gaussian_product(1), &[1.0], CcpOptions::default()).unwrap();
        for s in 0..3 {
            let w: Vec<f64> = xs.iter().map(|xt| (-0.5 * (xt - xs[s]) * (xt - xs[s])).exp()).collect();
            let num: f64 = w.iter().zip(&ys).map(|(a, b)| a * f64::from(*b)).sum();
            assert_relative_eq!(c.p_raw[s], num / w.iter().sum::<f64>(), epsilon = 1e-14);
        }
    }

    #[test]
    fn duplicating_sample_leaves_p_unchanged() {
        let xs = vec![0.1, 0.4, 0.9, 1.3, 2.0];
        let ys = [0u8, 1, 0, 1, 1];
        let x = RowMatrix::from_vec(5, 1, xs.clone());
        let c = estimate_ccp(&x, &ys, KernelSpec::gaussian_product(1), &[0.7], CcpOptions::default()).unwrap();
        let mut x2 = xs.clone();
        x2.extend(&xs);
        let mut y2 = ys.to_vec();
        y2.extend(ys);
        let c2 = estimate_ccp(&RowMatrix::from_vec(10, 1, x2), &y2, KernelSpec::gaussian_product(1), &[0.7], CcpOptions::default()).unwrap();
        for s in 0..5 {
            assert_relative_eq!(c.p_raw[s], c2.p_raw[s], epsilon = 1e-14);
        }
    }

    #[test]
    fn support_examples() {
        let s = estimate_support(&[0.5, 0.2, 0.9]).unwrap();
        assert_eq!((s.lo, s.hi, s.degenerate), (0.2, 0.9, false));
        assert!(estimate_support(&[0.3, 0.3]).unwrap().degenerate);
        assert!(estimate_support(&[]).is_err());
    }

    #[test]
    fn delta_two_term_sum() {
        let s = sample(&[&[(0, 0.0), (1, 0.0), (1, 0.0)]]);
        let w = RowMatrix::from_vec(3, 1, vec![1.0; 3]);
        let (d, usable) = compute_delta(&s, &w, 1, 0.9, 2, LeadWeight::Realized).unwrap();
        assert_relative_eq!(d.get(0, 0), 1.71, epsilon = 1e-15);
        assert_eq!(usable, vec![true, false, false]);
        let (d0, _) = compute_delta(&s, &w, 0, 0.9, 2, LeadWeight::Realized).unwrap();
        assert_eq!(d0.get(0, 0), 0.0);
    }

    #[test]
    fn short_path_unusable_terminal_path_usable() {
        let s = sample(&[&[(0, 0.0), (1, 1.0)], &[(0, 0.0), (0, 1.0), (1, 2.0), (0, 3.0)]]);
        let w = RowMatrix::from_vec(6, 1, vec![1.0; 6]);
        let (_, usable) = compute_delta(&s, &w, 1, 0.5, 2, LeadWeight::Realized).unwrap();
        assert_eq!(usable, vec![false, false, true, true, false, false]);
        let s = s.with_terminal(TerminalPolicy::All);
        let (d, usable) = compute_delta(&s, &w, 1, 0.5, 2, LeadWeight::Realized).unwrap();
        assert!(usable.iter().all(|u| *u));
        assert_eq!(d.get(0, 0), 0.5);
        assert_eq!(d.get(4, 0), 0.0);
    }

    #[test]
    fn truncation_tail_bound() {
        let s = sample(&[&[(0, 0.0), (1, 1.0), (1, 2.0), (0, 3.0), (1, 4.0), (1, 5.0), (1, 6.0), (0, 7.0)]]).with_terminal(TerminalPolicy::All);
        let w = RowMatrix::from_vec(8, 1, (0..8).map(|i| 1.0 + i as f64).collect());
        let (a, _) = compute_delta(&s, &w, 1, 0.8, 2, LeadWeight::Realized).unwrap();
        let (b, _) = compute_delta(&s, &w, 1, 0.8, 5, LeadWeight::Realized).unwrap();
        let tail: f64 = (3..=5).map(|k| 0.8f64.powi(k)).sum::<f64>() * 8.0;
        for t in 0..8 {
            assert!((a.get(t, 0) - b.get(t, 0)).abs() <= tail + 1e-12);
        }
    }

    #[test]
    fn truncation_length_rule() {
        let w = RowMatrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        let l = truncation_length(0.9, &w, 1e-4);
        assert!(0.9f64.powi(l as i32) * 3.0 < 1e-4);
        assert!(0.9f64.powi(l as i32 - 1) * 3.0 >= 1e-4);
        assert_eq!(truncation_length(0.0, &w, 1e-4), 1);
    }

    #[test]
    fn phi_is_signed_w_when_myopic() {
        let s = sample(&[&[(0, 0.0), (1, 1.0), (0, 0.5), (1, 2.0), (0, 1.5), (1, 0.2)]]).with_terminal(TerminalPolicy::All);
        let x = s.x_matrix();
        let w = RowMatrix::from_vec(6, 2, (0..12).map(|i| i as f64 * 0.3).collect());
        let (delta, usable) = compute_delta(&s, &w, 1, 0.0, 1, LeadWeight::Realized).unwrap();
        let r = estimate_phi(&x, &s.y(), &w, 1, &delta, &usable, 1, KernelSpec::gaussian_product(1), &[1.0]).unwrap();
        for t in 0..6 {
            assert_eq!(r.phi_hat.get(t, 0), -w.get(t, 0));
            assert_eq!(r.phi_hat.get(t, 1), w.get(t, 1));
        }
    }

    #[test]
    fn z_reproduces_constants_and_grid_ends() {
        let p = vec![0.1, 0.3, 0.35, 0.8, 0.9];
        let phi = RowMatrix::from_vec(5, 1, vec![2.5; 5]);
        let sup = estimate_support(&p).unwrap();
        let z = estimate_z(&phi, &[true; 5], &p, &sup, KernelSpec::gaussian_product(1), 0.1, 2).unwrap();
        assert_eq!(z.grid, vec![0.1, 0.9]);
        for g in 0..2 {
            assert_relative_eq!(z.z.get(g, 0), 2.5, epsilon = 1e-14);
        }
    }
}
