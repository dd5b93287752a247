//! The basis equation b + Op(b) = ẑ on a p-grid, where
//! Op(b)(p) = NW[ξ_t(b) | p̂_t = p, Y_t = 1] − NW[ξ_t(b) | p̂_t = p, Y_t = 0]
//! and ξ_t(b) = Σ_s β^s ∫_{p̲}^{p̂_{t+s}} b.
//!
//! ξ is linear in the grid values of b, so it is stored as a matrix (one row
//! per usable observation) and Op collapses to a G×G matrix A.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::matrix::RowMatrix;
use crate::panel::PanelSample;
use crate::smooth::{cell_table, Smoother};

/// Uniform grid over [lo, hi] with trapezoid quadrature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PGrid {
    pub nodes: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl PGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Contract(format!("p-grid needs at least 2 points, got {n}")));
        }
        if !(lo < hi) {
            return Err(Error::Estimation(format!("p-grid interval [{lo}, {hi}] is empty")));
        }
        Ok(Self { nodes: crate::ccp::uniform_grid(lo, hi, n), lo, hi, step: (hi - lo) / (n - 1) as f64 })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Segment index and fraction for q, clamped to the grid.
    #[inline]
    fn locate(&self, q: f64) -> (usize, f64) {
        let n = self.nodes.len();
        let pos = ((q - self.lo) / self.step).clamp(0.0, (n - 1) as f64);
        let j = (pos.floor() as usize).min(n - 1);
        if j == n - 1 {
            (j, 0.0)
        } else {
            (j, pos - j as f64)
        }
    }

    /// ∫_{lo}^{q} b by the trapezoid rule with linear interpolation inside the last segment.
    pub fn integral_to(&self, b: &[f64], q: f64) -> f64 {
        let (j, fr) = self.locate(q);
        let dp = self.step;
        let mut s = 0.0;
        for i in 0..j {
            s += 0.5 * dp * (b[i] + b[i + 1]);
        }
        if fr > 0.0 {
            s += dp * fr * (1.0 - 0.5 * fr) * b[j] + 0.5 * dp * fr * fr * b[j + 1];
        }
        s
    }

    /// Add scale × (quadrature weights of ∫_{lo}^{q}) into `row`, using
    /// `ramp` as a difference array for the flat middle part.
    #[inline]
    fn add_weights(&self, q: f64, scale: f64, row: &mut [f64], ramp: &mut [f64]) {
        let (j, fr) = self.locate(q);
        let dp = self.step;
        if j >= 1 {
            // dp on nodes 0..=j, then halve the two ends
            ramp[0] += scale * dp;
            ramp[j + 1] -= scale * dp;
            row[0] -= 0.5 * scale * dp;
            row[j] -= 0.5 * scale * dp;
        }
        if fr > 0.0 {
            row[j] += scale * dp * fr * (1.0 - 0.5 * fr);
            row[j + 1] += scale * 0.5 * dp * fr * fr;
        }
    }
}

/// Discounted lead CCPs (β^s, p̂_{t+s}) for every usable t, s = 1..L within the path.
#[derive(Debug, Clone)]
pub struct LeadTable {
    /// Observation index of each row.
    pub obs: Vec<usize>,
    pub leads: Vec<Vec<(f64, f64)>>,
    pub l: usize,
    pub beta: f64,
}

impl LeadTable {
    pub fn build(sample: &PanelSample, usable: &[bool], p_hat: &[f64], beta: f64, l: usize) -> Self {
        let mut obs = Vec::new();
        let mut leads = Vec::new();
        for p in sample.paths() {
            for pos in 0..p.len {
                let t = p.start + pos;
                if !usable[t] {
                    continue;
                }
                let last = (pos + l).min(p.len - 1);
                let mut disc = 1.0;
                let mut v = Vec::with_capacity(last - pos);
                for q in pos + 1..=last {
                    disc *= beta;
                    v.push((disc, p_hat[p.start + q]));
                }
                obs.push(t);
                leads.push(v);
            }
        }
        Self { obs, leads, l, beta }
    }

    pub fn row_of(&self, t: usize) -> Option<usize> {
        self.obs.binary_search(&t).ok()
    }

    /// ξ rows as quadrature weights: ξ_t(b) = row_t · b.
    pub fn xi_matrix(&self, grid: &PGrid) -> RowMatrix {
        let g = grid.len();
        let mut m = RowMatrix::zeros(self.obs.len(), g);
        let mut ramp = vec![0.0; g + 1];
        for (r, leads) in self.leads.iter().enumerate() {
            ramp.iter_mut().for_each(|v| *v = 0.0);
            let row = m.row_mut(r);
            for &(disc, q) in leads {
                grid.add_weights(q, disc, row, &mut ramp);
            }
            let mut acc = 0.0;
            for i in 0..g {
                acc += ramp[i];
                row[i] += acc;
            }
        }
        m
    }
}

/// ξ_t(b) = Σ_{s=1}^{L} β^s ∫_{p̲}^{p̂(X_{t+s})} b, upper limits clamped to the grid.
pub fn xi(b: &[f64], t: usize, leads: &LeadTable, grid: &PGrid) -> Result<f64> {
    let r = leads
        .row_of(t)
        .ok_or_else(|| Error::Contract(format!("observation {t} is not usable; its forward sum is incomplete")))?;
    Ok(leads.leads[r].iter().map(|&(disc, q)| disc * grid.integral_to(b, q)).sum())
}

#[derive(Debug, Clone)]
pub struct FieOperator {
    pub grid: PGrid,
    /// Usable observations × grid: ξ as a linear map.
    pub xi: RowMatrix,
    /// Grid × usable observations: the Y=1 minus Y=0 NW weights at each grid point.
    pub weights: RowMatrix,
    /// weights · xi, grid × grid.
    pub matrix: DMatrix<f64>,
    pub bandwidth: f64,
}

impl FieOperator {
    pub fn build(grid: PGrid, leads: &LeadTable, y: &[u8], p_hat: &[f64], kernel: KernelSpec, h: f64) -> Result<Self> {
        let n = leads.obs.len();
        let g = grid.len();
        let pts: Vec<f64> = leads.obs.iter().map(|&t| p_hat[t]).collect();
        let cell: Vec<Option<u8>> = leads.obs.iter().map(|&t| Some(y[t])).collect();
        let sm = Smoother::new(RowMatrix::from_vec(n, 1, pts), &[h], kernel);
        let q = RowMatrix::from_vec(g, 1, grid.nodes.clone());
        // identity response: the cell sums then hold the individual weights
        let tab = cell_table(&sm, &q, &cell, &RowMatrix::zeros(n, 0), false);
        let mut weights = RowMatrix::zeros(g, n);
        for i in 0..g {
            if !tab.supported(i) {
                return Err(Error::Estimation(format!(
                    "empty conditional cell at p={:.6} (mass {:.3e}, {:.3e}); use a larger h_xi",
                    grid.nodes[i], tab.mass[i][0], tab.mass[i][1]
                )));
            }
            let [m0, m1] = tab.mass[i];
            let qi = grid.nodes[i];
            let row = weights.row_mut(i);
            for (r, &t) in leads.obs.iter().enumerate() {
                let w = sm.weight(&[qi], r);
                row[r] = if y[t] == 1 { w / m1 } else { -w / m0 };
            }
        }
        let xi = leads.xi_matrix(&grid);
        let wm = DMatrix::from_row_slice(g, n, weights.as_slice());
        let xm = DMatrix::from_row_slice(n, g, xi.as_slice());
        let matrix = wm * xm;
        Ok(Self { grid, xi, weights, matrix, bandwidth: h })
    }

    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(b)).as_slice().to_vec()
    }

    /// ξ_t(b_ℓ) for every usable t and every column of `basis` (grid × k).
    pub fn xi_values(&self, basis: &RowMatrix) -> RowMatrix {
        let n = self.xi.rows();
        let k = basis.cols();
        let mut out = RowMatrix::zeros(n, k);
        for r in 0..n {
            let xr = self.xi.row(r);
            let o = out.row_mut(r);
            for (g, xv) in xr.iter().enumerate() {
                if *xv != 0.0 {
                    for (acc, bv) in o.iter_mut().zip(basis.row(g)) {
                        *acc += xv * bv;
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationOutcome {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub final_change: f64,
    /// Sup-norm change per iteration.
    pub trace: Vec<f64>,
}

/// b ← (1−ω) b + ω (z − A b), starting from b = z. ω = 1 is plain
/// successive approximation.
pub fn successive_approximation(a: &DMatrix<f64>, z: &[f64], tol: f64, max_iter: usize, omega: f64) -> Result<IterationOutcome> {
    let n = z.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Contract(format!("operator is {}×{}, right-hand side has {n} points", a.nrows(), a.ncols())));
    }
    let zv = DVector::from_column_slice(z);
    let mut b = zv.clone();
    let mut trace = Vec::new();
    for it in 1..=max_iter {
        let update = &zv - a * &b;
        let next = if omega == 1.0 { update } else { &b * (1.0 - omega) + update * omega };
        let change = (&next - &b).amax();
        b = next;
        trace.push(change);
        if !change.is_finite() {
            return Err(Error::Convergence(format!("iteration {it} produced a non-finite change; run the contraction check")));
        }
        if change <= tol {
            return Ok(IterationOutcome { values: b.as_slice().to_vec(), iterations: it, final_change: change, trace });
        }
    }
    Err(Error::Convergence(format!(
        "no convergence in {max_iter} iterations (last sup-norm change {:.3e}); run the contraction check",
        trace.last().copied().unwrap_or(f64::NAN)
    )))
}

/// Direct solve of (I + A) b = rhs.
pub fn solve_fie_dense(a: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Contract(format!("operator is {}×{}, right-hand side has {n} points", a.nrows(), a.ncols())));
    }
    let m = DMatrix::identity(n, n) + a;
    let lu = m.lu();
    let sol = lu.solve(&DVector::from_column_slice(rhs)).ok_or_else(|| Error::Numeric("I + A is singular".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("dense solve produced non-finite values; I + A is near singular".into()));
    }
    Ok(sol.as_slice().to_vec())
}

/// Spectral radius of A by power iteration on the growth of ‖Aᵏv‖.
pub fn spectral_radius(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_034).fract());
    v /= v.norm();
    let mut logs = Vec::with_capacity(iters);
    for _ in 0..iters {
        let w = a * &v;
        let nw = w.norm();
        if nw == 0.0 || !nw.is_finite() {
            return if nw == 0.0 { 0.0 } else { f64::INFINITY };
        }
        logs.push(nw.ln());
        v = w / nw;
    }
    let tail = &logs[logs.len() / 2..];
    (tail.iter().sum::<f64>() / tail.len() as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Successive approximation; falls back to damped iteration and then the
    /// dense solve when the operator is not a contraction.
    Auto,
    Iterate,
    Damped,
    Dense,
}

impl SolveMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "iterate" => Ok(Self::Iterate),
            "damped" => Ok(Self::Damped),
            "dense" => Ok(Self::Dense),
            other => Err(Error::Config(format!("fie.method must be auto, iterate, damped or dense, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: SolveMethod,
    /// Fixed damping for `Damped`; None picks 1/(1+ρ̂).
    pub damping: Option<f64>,
    /// Iterate even if the contraction diagnostic fails.
    pub override_contraction: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, method: SolveMethod::Auto, damping: None, override_contraction: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BasisSolution {
    pub grid: Vec<f64>,
    /// grid × k_θ
    pub values: RowMatrix,
    pub iterations: Vec<usize>,
    pub final_change: Vec<f64>,
    pub traces: Vec<Vec<f64>>,
    /// What actually produced the values: iterate, damped or dense.
    pub method_used: String,
    pub damping: Option<f64>,
    pub spectral_radius: Option<f64>,
}

/// Solve every component of ẑ. `contraction_ok` is the diagnostic's verdict.
pub fn solve_basis(z: &RowMatrix, op: &FieOperator, opts: &SolveOptions, contraction_ok: bool) -> Result<BasisSolution> {
    let k = z.cols();
    let g = z.rows();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| z.column(j)).collect();
    let a = &op.matrix;
    let mut method = opts.method;
    let mut rho = None;
    let mut omega = None;
    if method == SolveMethod::Iterate && !contraction_ok && !opts.override_contraction {
        return Err(Error::Convergence(
            "contraction diagnostic failed; set fie.override_contraction or use fie.method=auto".into(),
        ));
    }
    if method == SolveMethod::Auto {
        let r = spectral_radius(a, 200);
        rho = Some(r);
        method = if r < 1.0 { SolveMethod::Iterate } else { SolveMethod::Damped };
    }
    if method == SolveMethod::Damped {
        let w = match opts.damping {
            Some(w) => w,
            None => {
                let r = *rho.get_or_insert_with(|| spectral_radius(a, 200));
                1.0 / (1.0 + r)
            }
        };
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0,1], got {w}")));
        }
        omega = Some(w);
    }
    let mut values = RowMatrix::zeros(g, k);
    let mut iterations = Vec::new();
    let mut final_change = Vec::new();
    let mut traces = Vec::new();
    let mut used = match method {
        SolveMethod::Iterate => "iterate",
        SolveMethod::Damped => "damped",
        _ => "dense",
    };
    for (j, zc) in cols.iter().enumerate() {
        let sol = match method {
            SolveMethod::Dense => {
                let v = solve_fie_dense(a, zc)?;
                IterationOutcome { values: v, iterations: 0, final_change: 0.0, trace: vec![] }
            }
            _ => {
                let w = omega.unwrap_or(1.0);
                match successive_approximation(a, zc, opts.tol, opts.max_iter, w) {
                    Ok(s) => s,
                    Err(Error::Convergence(msg)) if opts.method == SolveMethod::Auto => {
                        log::warn!("basis component {j}: {msg}; falling back to the dense solve");
                        used = "dense";
                        let v = solve_fie_dense(a, zc)?;
                        IterationOutcome { values: v, iterations: 0, final_change: 0.0, trace: vec![] }
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        for (i, v) in sol.values.iter().enumerate() {
            values.set(i, j, *v);
        }
        iterations.push(sol.iterations);
        final_change.push(sol.final_change);
        traces.push(sol.trace);
    }
    Ok(BasisSolution {
        grid: op.grid.nodes.clone(),
        values,
        iterations,
        final_change,
        traces,
        method_used: used.to_string(),
        damping: omega,
        spectral_radius: rho,
    })
}

/// Random smooth FIE instance on a grid of `n` points: a trapezoid-weighted
/// kernel scaled so that ‖A‖∞ lies in [0.3, 0.9], and a smooth right-hand
/// side. Test bed for comparing the iterative and dense solvers.
pub fn random_contraction(n: usize, seed: u64) -> (PGrid, DMatrix<f64>, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let lo = rng.gen_range(0.01..0.3);
    let hi = rng.gen_range(0.7..0.99);
    let grid = PGrid::new(lo, hi, n).expect("valid interval");
    let terms: Vec<[f64; 3]> = (1..=4).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)]).collect();
    let (c, w) = (rng.gen_range(lo..hi), rng.gen_range(0.05..0.3));
    let kernel = |p: f64, q: f64| {
        let mut v = (-0.5 * ((p - q) / w).powi(2)).exp() * (p - c);
        for (m, t) in terms.iter().enumerate() {
            let f = (m + 1) as f64 * std::f64::consts::PI;
            v += t[0] * (f * p + t[1]).sin() * (f * q + t[2]).cos();
        }
        v
    };
    let nodes = &grid.nodes;
    let mut a = DMatrix::from_fn(n, n, |i, j| {
        let tw = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
        tw * grid.step * kernel(nodes[i], nodes[j])
    });
    let row_max = (0..n).map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    a *= rng.gen_range(0.3..0.9) / row_max;
    let (z0, z1, z2) = (rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0), rng.gen_range(1.0..8.0));
    let z = nodes.iter().map(|p| z0 + z1 * p + (z2 * p).sin()).collect();
    (grid, a, z)
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    /// β² ∬ Π̂² by the trapezoid rule.
    pub statistic: f64,
    pub passes: bool,
    /// max over p of |∫ π̂(p′, p) dp′|, zero when Π̂ is built correctly.
    pub max_abs_pi_mass: f64,
    pub nodes: Vec<f64>,
    /// Bins of p that lacked one of the two choices; their Π̂ row is zero.
    pub empty_bins: usize,
}

/// β² ∬ Π² over a uniform node grid, Π given as pi[(p′ node, p node)].
pub fn contraction_statistic(pi: &RowMatrix, nodes: &[f64], beta: f64) -> f64 {
    let n = nodes.len();
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < n { nodes[i + 1] - nodes[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            let v = pi.get(a, b);
            s += w[a] * w[b] * v * v;
        }
    }
    beta * beta * s
}

/// Π̂(p′, p) = Σ_s β^{s−1} [F̂_s(p′ | p, Y=1) − F̂_s(p′ | p, Y=0)] from binned
/// empirical transition frequencies of p̂. A missing lead (terminal path)
/// counts as sitting at p̲, which is how ξ treats it.
pub fn check_contraction(leads: &LeadTable, y: &[u8], p_hat: &[f64], lo: f64, hi: f64, bins: usize) -> Result<ContractionReport> {
    if bins < 2 {
        return Err(Error::Contract("contraction check needs at least 2 bins".into()));
    }
    let grid = PGrid::new(lo, hi, bins)?;
    let beta = leads.beta;
    let l = leads.l;
    // per (d, bin, s) the lead values; counts per (d, bin)
    let mut vals: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); l]; 2 * bins];
    let mut count = vec![0usize; 2 * bins];
    for (r, &t) in leads.obs.iter().enumerate() {
        let bin = (((p_hat[t] - lo) / grid.step).round().max(0.0) as usize).min(bins - 1);
        let key = usize::from(y[t]) * bins + bin;
        count[key] += 1;
        for (s, &(_, q)) in leads.leads[r].iter().enumerate() {
            vals[key][s].push(q);
        }
    }
    for v in vals.iter_mut() {
        for s in v.iter_mut() {
            s.sort_by(|a, b| a.total_cmp(b));
        }
    }
    let mut pi = RowMatrix::zeros(bins, bins);
    let mut empty = 0;
    let mut max_mass: f64 = 0.0;
    for b in 0..bins {
        let (k0, k1) = (b, bins + b);
        if count[k0] == 0 || count[k1] == 0 {
            empty += 1;
            continue;
        }
        for (j, &node) in grid.nodes.iter().enumerate() {
            let mut acc = 0.0;
            let mut disc = 1.0;
            for s in 0..l {
                let cdf = |key: usize| {
                    let v = &vals[key][s];
                    let below = v.partition_point(|x| *x <= node);
                    // leads that do not exist sit at p̲
                    (below + count[key] - v.len()) as f64 / count[key] as f64
                };
                acc += disc * (cdf(k1) - cdf(k0));
                disc *= beta;
            }
            pi.set(j, b, acc);
        }
        max_mass = max_mass.max(pi.get(bins - 1, b).abs());
    }
    let statistic = contraction_statistic(&pi, &grid.nodes, beta);
    Ok(ContractionReport { statistic, passes: statistic < 1.0, max_abs_pi_mass: max_mass, nodes: grid.nodes, empty_bins: empty })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integral_of_constant_and_linear() {
        let g = PGrid::new(0.0, 1.0, 201).unwrap();
        let one = vec![1.0; 201];
        assert_relative_eq!(g.integral_to(&one, 0.6037), 0.6037, epsilon = 1e-14);
        let lin: Vec<f64> = g.nodes.clone();
        // closed form 0.18, trapezoid error is dp²/12·(q−lo)·b''=0 for linear b
        assert_relative_eq!(0.9 * g.integral_to(&lin, 0.6), 0.162, epsilon = 1e-12);
        assert_relative_eq!(g.integral_to(&lin, 0.6031), 0.6031 * 0.6031 / 2.0, epsilon = 1e-6);
        assert_eq!(g.integral_to(&one, -3.0), 0.0);
        assert_relative_eq!(g.integral_to(&one, 7.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn xi_matrix_matches_direct_quadrature() {
        let g = PGrid::new(0.1, 0.9, 37).unwrap();
        let leads = LeadTable {
            obs: vec![0, 3],
            leads: vec![vec![(0.9, 0.35), (0.81, 0.9), (0.729, 0.05)], vec![(0.5, 0.1234)]],
            l: 3,
            beta: 0.9,
        };
        let m = leads.xi_matrix(&g);
        let b: Vec<f64> = g.nodes.iter().map(|p| (3.0 * p).sin() + p * p).collect();
        for (r, &t) in leads.obs.iter().enumerate() {
            let direct = xi(&b, t, &leads, &g).unwrap();
            let via: f64 = m.row(r).iter().zip(&b).map(|(a, c)| a * c).sum();
            assert_relative_eq!(direct, via, epsilon = 1e-14);
        }
        assert!(matches!(xi(&b, 1, &leads, &g), Err(Error::Contract(_))));
        let ones = vec![1.0; 37];
        let expect = 0.9 * (0.35 - 0.1) + 0.81 * 0.8;
        assert_relative_eq!(xi(&ones, 0, &leads, &g).unwrap(), expect, epsilon = 1e-14);
        assert_eq!(xi(&vec![0.0; 37], 0, &leads, &g).unwrap(), 0.0);
    }

    #[test]
    fn dense_examples() {
        let n = 5;
        let rhs = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(solve_fie_dense(&DMatrix::zeros(n, n), &rhs).unwrap(), rhs);
        let half = DMatrix::identity(n, n) * 0.5;
        for v in solve_fie_dense(&half, &[1.0; 5]).unwrap() {
            assert_relative_eq!(v, 2.0 / 3.0, epsilon = 1e-15);
        }
        let sing = DMatrix::identity(n, n) * -1.0;
        assert!(matches!(solve_fie_dense(&sing, &rhs), Err(Error::Numeric(_))));
    }

    #[test]
    fn iteration_zero_rhs_and_agreement() {
        let n = 30;
        let a = DMatrix::from_fn(n, n, |i, j| 0.5 * ((i * 7 + j * 3) % 11) as f64 / (11.0 * n as f64));
        let z0 = vec![0.0; n];
        let s = successive_approximation(&a, &z0, 1e-12, 500, 1.0).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
        let z: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let it = successive_approximation(&a, &z, 1e-12, 500, 1.0).unwrap();
        let d = solve_fie_dense(&a, &z).unwrap();
        assert!(crate::matrix::sup_diff(&it.values, &d) < 1e-10);
        // geometric decay after the first few steps
        for w in it.trace.windows(2).skip(3) {
            assert!(w[1] <= w[0] * 0.999 || w[1] < 1e-13);
        }
    }

    #[test]
    fn divergent_iteration_reports_last_change() {
        let a = DMatrix::identity(3, 3) * 1.5;
        let e = successive_approximation(&a, &[1.0; 3], 1e-10, 50, 1.0).unwrap_err();
        assert!(e.to_string().contains("contraction"), "{e}");
        // damping 1/(1+ρ) rescues a positive spectrum
        let s = successive_approximation(&a, &[1.0; 3], 1e-10, 500, 1.0 / 2.5).unwrap();
        assert_relative_eq!(s.values[0], 0.4, epsilon = 1e-9);
        assert_relative_eq!(spectral_radius(&a, 100), 1.5, epsilon = 1e-9);
    }

    #[test]
    fn contraction_statistic_examples() {
        let nodes = crate::ccp::uniform_grid(0.0, 1.0, 11);
        assert_eq!(contraction_statistic(&RowMatrix::zeros(11, 11), &nodes, 0.9), 0.0);
        let c = 0.7;
        let pi = RowMatrix::from_vec(11, 11, vec![c; 121]);
        assert_relative_eq!(contraction_statistic(&pi, &nodes, 0.9), 0.81 * c * c, epsilon = 1e-14);
    }
}
