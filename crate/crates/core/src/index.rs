//! Single-index regressors m̂, the pair-sum average-derivative estimator,
//! scale normalization and the quantile estimate Q̂.

use rayon::prelude::*;
use serde::Serialize;

use crate::ccp::{own_signs, ZProjection};
use crate::error::{Error, Result};
use crate::fie::BasisSolution;
use crate::kernels::KernelSpec;
use crate::matrix::{norm, RowMatrix};
use crate::panel::UtilitySpec;
use crate::smooth::{cell_table, CellTable, Smoother};

/// Everything needed to evaluate m̂(x) = φ̂(x) − {NW[ξ(b*) | x, Y=1] − NW[ξ(b*) | x, Y=0]}
/// at sample points or anywhere else.
#[derive(Debug, Clone)]
pub struct IndexModel {
    pub spec: UtilitySpec,
    /// Usable observations with their choice; the rest are left out of every cell.
    pub cell: Vec<Option<u8>>,
    /// δ per observation, T × k_θ.
    pub delta: RowMatrix,
    /// ξ_t(b*_ℓ) per observation, T × k_θ, zero where unusable.
    pub xi: RowMatrix,
    pub phi_smoother: Smoother,
    pub m_smoother: Smoother,
}

impl IndexModel {
    fn signed_w(&self, x: &[f64]) -> Vec<f64> {
        let w = self.spec.stacked(x);
        let s = own_signs(self.spec.k0, self.spec.k1);
        w.iter().zip(&s).map(|(a, b)| a * b).collect()
    }

    /// m̂ at arbitrary states (rows of `x`); None where a cell is too thin.
    pub fn eval(&self, x: &RowMatrix) -> Vec<Option<Vec<f64>>> {
        let phi = cell_table(&self.phi_smoother, x, &self.cell, &self.delta, false);
        let xi = cell_table(&self.m_smoother, x, &self.cell, &self.xi, false);
        (0..x.rows())
            .map(|i| {
                let d = phi.difference(i)?;
                let c = xi.difference(i)?;
                Some(self.signed_w(x.row(i)).iter().zip(d).zip(c).map(|((w, d), c)| w + d - c).collect())
            })
            .collect()
    }

    /// m̂ at the sample points and the two cell tables behind it.
    pub fn at_sample(&self, x: &RowMatrix) -> SampleIndex {
        let phi = cell_table(&self.phi_smoother, x, &self.cell, &self.delta, false);
        let xi = cell_table(&self.m_smoother, x, &self.cell, &self.xi, false);
        let k = self.delta.cols();
        let mut m = RowMatrix::zeros(x.rows(), k);
        let mut ok = vec![false; x.rows()];
        for i in 0..x.rows() {
            if let (Some(d), Some(c)) = (phi.difference(i), xi.difference(i)) {
                ok[i] = true;
                let w = self.signed_w(x.row(i));
                let row = m.row_mut(i);
                for j in 0..k {
                    row[j] = w[j] + d[j] - c[j];
                }
            }
        }
        SampleIndex { m, ok, phi_cells: phi, xi_cells: xi }
    }
}

#[derive(Debug, Clone)]
pub struct SampleIndex {
    /// T × k_θ; rows with ok = false are zero.
    pub m: RowMatrix,
    pub ok: Vec<bool>,
    pub phi_cells: CellTable,
    pub xi_cells: CellTable,
}

/// Canonical order: lexicographic in (m row, y). Any permutation of the
/// input maps to the same order, so the pair sum is bit-for-bit invariant.
fn canonical_order(m: &RowMatrix, y: &[u8]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m.rows()).collect();
    idx.sort_by(|&a, &b| {
        for (u, v) in m.row(a).iter().zip(m.row(b)) {
            let c = u.total_cmp(v);
            if c != std::cmp::Ordering::Equal {
                return c;
            }
        }
        y[a].cmp(&y[b])
    });
    idx
}

const PAIR_BLOCK: usize = 64;

/// θ̂ = −2/(n(n−1)) h^{−(k+1)} Σ_s Σ_{t≠s} ∇K((m_s − m_t)/h) Y_s.
/// Each unordered pair is visited once and contributes ∇K((m_j − m_i)/h)(Y_j − Y_i).
pub fn pss_estimate(m: &RowMatrix, y: &[u8], kernel: &KernelSpec, h: f64) -> Result<Vec<f64>> {
    let n = m.rows();
    let k = m.cols();
    if n < 2 {
        return Err(Error::Contract(format!("average-derivative estimator needs 2 observations, got {n}")));
    }
    if y.len() != n || kernel.dim() != k {
        return Err(Error::Contract(format!("{n} index rows, {} choices, kernel of dimension {}", y.len(), kernel.dim())));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Contract(format!("h_theta must be positive, got {h}")));
    }
    let order = canonical_order(m, y);
    let sm = m.select_rows(&order);
    let sy: Vec<f64> = order.iter().map(|&i| f64::from(y[i])).collect();
    let blocks: Vec<Vec<f64>> = (0..n.div_ceil(PAIR_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; k];
            let mut u = vec![0.0; k];
            let mut g = vec![0.0; k];
            for i in b * PAIR_BLOCK..((b + 1) * PAIR_BLOCK).min(n) {
                let mi = sm.row(i);
                for j in i + 1..n {
                    let dy = sy[j] - sy[i];
                    if dy == 0.0 {
                        continue;
                    }
                    for (c, uc) in u.iter_mut().enumerate() {
                        *uc = (sm.get(j, c) - mi[c]) / h;
                    }
                    kernel.gradient_into(&u, &mut g);
                    for (a, gv) in acc.iter_mut().zip(&g) {
                        *a += gv * dy;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; k];
    for b in blocks {
        for (t, v) in total.iter_mut().zip(b) {
            *t += v;
        }
    }
    let scale = -2.0 / (n as f64 * (n as f64 - 1.0)) / h.powi(k as i32 + 1);
    Ok(total.into_iter().map(|v| v * scale).collect())
}

/// PSS on m̂ standardized per component, mapped back to the original scale.
pub fn pss_estimate_standardized(m: &RowMatrix, y: &[u8], kernel: &KernelSpec, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let sd = m.column_sd();
    if let Some(j) = sd.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Estimation(format!("index component {j} has no variation; its coefficient is not identified")));
    }
    let mut z = m.clone();
    for i in 0..z.rows() {
        for (v, s) in z.row_mut(i).iter_mut().zip(&sd) {
            *v /= s;
        }
    }
    let t = pss_estimate(&z, y, kernel, h)?;
    Ok((t.iter().zip(&sd).map(|(a, s)| a / s).collect(), sd))
}

/// Leave-both-out variant: for the pair (s, t) both index values are
/// recomputed from cell sums with observations s and t removed.
#[allow(clippy::too_many_arguments)]
pub fn pss_estimate_leave_both_out(
    model: &IndexModel,
    x: &RowMatrix,
    index: &SampleIndex,
    rows: &[usize],
    y: &[u8],
    kernel: &KernelSpec,
    h: f64,
    scale: &[f64],
) -> Result<Vec<f64>> {
    let n = rows.len();
    let k = model.delta.cols();
    if n < 2 {
        return Err(Error::Contract(format!("average-derivative estimator needs 2 observations, got {n}")));
    }
    let signed: Vec<Vec<f64>> = rows.iter().map(|&r| model.signed_w(x.row(r))).collect();
    // m̂ at query row a with data rows b and c removed from the cells
    let reduced = |a: usize, drop: [usize; 2], out: &mut [f64]| -> bool {
        let ra = rows[a];
        let mut mass_p = index.phi_cells.mass[ra];
        let mut mass_x = index.xi_cells.mass[ra];
        let mut sp = [index.phi_cells.sums[0].row(ra).to_vec(), index.phi_cells.sums[1].row(ra).to_vec()];
        let mut sx = [index.xi_cells.sums[0].row(ra).to_vec(), index.xi_cells.sums[1].row(ra).to_vec()];
        for &d in &drop {
            let rd = rows[d];
            if let Some(c) = model.cell[rd] {
                let c = c as usize;
                let wp = model.phi_smoother.weight(x.row(ra), rd);
                let wx = model.m_smoother.weight(x.row(ra), rd);
                mass_p[c] -= wp;
                mass_x[c] -= wx;
                for j in 0..k {
                    sp[c][j] -= wp * model.delta.get(rd, j);
                    sx[c][j] -= wx * model.xi.get(rd, j);
                }
            }
        }
        let min = crate::smooth::MIN_CELL_WEIGHT;
        if mass_p.iter().chain(&mass_x).any(|m| *m < min) {
            return false;
        }
        for j in 0..k {
            out[j] = (signed[a][j] + sp[1][j] / mass_p[1] - sp[0][j] / mass_p[0] - (sx[1][j] / mass_x[1] - sx[0][j] / mass_x[0])) / scale[j];
        }
        true
    };
    let sy: Vec<f64> = rows.iter().map(|&r| f64::from(y[r])).collect();
    let blocks: Vec<Vec<f64>> = (0..n.div_ceil(PAIR_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; k];
            let (mut mi, mut mj, mut u, mut g) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
            for i in b * PAIR_BLOCK..((b + 1) * PAIR_BLOCK).min(n) {
                for j in i + 1..n {
                    let dy = sy[j] - sy[i];
                    if dy == 0.0 {
                        continue;
                    }
                    if !reduced(i, [i, j], &mut mi) || !reduced(j, [i, j], &mut mj) {
                        continue;
                    }
                    for c in 0..k {
                        u[c] = (mj[c] - mi[c]) / h;
                    }
                    kernel.gradient_into(&u, &mut g);
                    for (a, gv) in acc.iter_mut().zip(&g) {
                        *a += gv * dy;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; k];
    for b in blocks {
        for (t, v) in total.iter_mut().zip(b) {
            *t += v;
        }
    }
    let s = -2.0 / (n as f64 * (n as f64 - 1.0)) / h.powi(k as i32 + 1);
    Ok(total.iter().zip(scale).map(|(v, sc)| v * s / sc).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaEstimate {
    pub theta_raw: Vec<f64>,
    pub lambda_hat: f64,
    pub theta_star: Vec<f64>,
    /// Norm imposed on theta_star: 1 unless a known scale was supplied.
    pub scale: f64,
    pub standard_errors: Option<Vec<f64>>,
    pub se_reps: usize,
}

pub fn normalize_theta(raw: &[f64], known_scale: Option<f64>) -> Result<ThetaEstimate> {
    let lambda = norm(raw);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Estimation("estimator degenerate; check bandwidths".into()));
    }
    let scale = match known_scale {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => return Err(Error::Config(format!("known scale must be positive, got {c}"))),
        None => 1.0,
    };
    Ok(ThetaEstimate {
        theta_raw: raw.to_vec(),
        lambda_hat: lambda,
        theta_star: raw.iter().map(|v| v / lambda * scale).collect(),
        scale,
        standard_errors: None,
        se_reps: 0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantileEstimate {
    pub grid: Vec<f64>,
    /// Basis form 𝓑̂(p)ᵀθ̂*.
    pub q: Vec<f64>,
    /// ẑ(p)ᵀθ̂*, the display form without the resolvent correction.
    pub q_uncorrected: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl QuantileEstimate {
    /// Q̂(p) by linear interpolation, held flat outside the estimated support.
    /// The flag is true when p lies outside it.
    pub fn eval(&self, p: f64) -> (f64, bool) {
        let flat = p < self.lo || p > self.hi;
        let n = self.grid.len();
        let pos = if self.hi > self.lo { ((p - self.lo) / (self.hi - self.lo) * (n - 1) as f64).clamp(0.0, (n - 1) as f64) } else { 0.0 };
        let j = (pos.floor() as usize).min(n - 1);
        if j + 1 >= n {
            return (self.q[n - 1], flat);
        }
        let fr = pos - j as f64;
        (self.q[j] + fr * (self.q[j + 1] - self.q[j]), flat)
    }
}

pub fn estimate_quantile(z: &ZProjection, basis: &BasisSolution, theta_star: &[f64]) -> Result<QuantileEstimate> {
    if z.grid.is_empty() {
        return Err(Error::Contract("quantile grid is empty".into()));
    }
    if basis.values.cols() != theta_star.len() || z.z.cols() != theta_star.len() || basis.grid.len() != z.grid.len() {
        return Err(Error::Contract("basis, projection and θ dimensions disagree".into()));
    }
    let dot = |m: &RowMatrix, g: usize| m.row(g).iter().zip(theta_star).map(|(a, b)| a * b).sum::<f64>();
    let q = (0..z.grid.len()).map(|g| dot(&basis.values, g)).collect();
    let qu = (0..z.grid.len()).map(|g| dot(&z.z, g)).collect();
    Ok(QuantileEstimate { grid: z.grid.clone(), q, q_uncorrected: qu, lo: z.grid[0], hi: *z.grid.last().unwrap() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy(n: usize) -> (RowMatrix, Vec<u8>) {
        let mut m = RowMatrix::zeros(n, 2);
        let mut y = Vec::new();
        for i in 0..n {
            let a = ((i * 37 % 101) as f64 / 50.0) - 1.0;
            let b = ((i * 59 % 89) as f64 / 44.0) - 1.0;
            m.set(i, 0, a);
            m.set(i, 1, b);
            y.push(u8::from((a + 2.0 * b + ((i * 13 % 7) as f64 - 3.0) / 3.0) > 0.0));
        }
        (m, y)
    }

    #[test]
    fn constant_choices_give_zero() {
        let (m, _) = toy(200);
        let k = KernelSpec::high_order(4, 2).unwrap();
        for c in [0u8, 1] {
            let t = pss_estimate(&m, &vec![c; 200], &k, 0.4).unwrap();
            assert!(t.iter().all(|v| v.abs() <= 1e-10));
        }
    }

    #[test]
    fn flipping_choices_negates() {
        let (m, y) = toy(300);
        let k = KernelSpec::high_order(4, 2).unwrap();
        let a = pss_estimate(&m, &y, &k, 0.4).unwrap();
        let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        let b = pss_estimate(&m, &flipped, &k, 0.4).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(*u, -*v);
        }
        assert!(a[1] > a[0] && a[0] > 0.0, "{a:?}");
    }

    #[test]
    fn double_sum_matches_direct_formula() {
        let (m, y) = toy(60);
        let k = KernelSpec::high_order(4, 2).unwrap();
        let h = 0.5;
        let n = 60;
        let mut direct = [0.0; 2];
        for s in 0..n {
            for t in 0..n {
                if s == t {
                    continue;
                }
                let u = [(m.get(s, 0) - m.get(t, 0)) / h, (m.get(s, 1) - m.get(t, 1)) / h];
                let g = crate::kernels::eval_kernel_gradient(&k, &u).unwrap();
                for c in 0..2 {
                    direct[c] += g[c] * f64::from(y[s]);
                }
            }
        }
        let sc = -2.0 / (n as f64 * (n as f64 - 1.0)) / h.powi(3);
        let fast = pss_estimate(&m, &y, &k, h).unwrap();
        for c in 0..2 {
            assert_relative_eq!(fast[c], direct[c] * sc, epsilon = 1e-12, max_relative = 1e-10);
        }
    }

    #[test]
    fn normalization() {
        let t = normalize_theta(&[3.0, 4.0], None).unwrap();
        assert_eq!(t.theta_star, vec![0.6, 0.8]);
        assert_eq!(t.lambda_hat, 5.0);
        let s5 = 5f64.sqrt();
        let t = normalize_theta(&[3.0, 4.0], Some(s5)).unwrap();
        assert_relative_eq!(t.theta_star[0], 0.6 * s5, epsilon = 1e-15);
        assert_relative_eq!(t.theta_star[1], 0.8 * s5, epsilon = 1e-15);
        let e = normalize_theta(&[0.0, 0.0], None).unwrap_err();
        assert!(e.to_string().contains("estimator degenerate; check bandwidths"));
    }
}
