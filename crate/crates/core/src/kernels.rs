//! Kernel functions and the bandwidth rules used by every smoothing step.
//!
//! Univariate kernels of order 2r are Gaussian-based:
//! k(u) = P_r(u) φ(u) with P_r = Σ_{j<r} (−1)^j He_{2j}(u) / (2^j j!),
//! so order 2 is φ itself and order 4 is the twicing kernel (3 − u²)φ/2.
//! Multivariate kernels are products of the univariate one.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

const MAX_ORDER: u32 = 10;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Spherical standard normal density.
    Gaussian,
    /// Product of univariate normals, used with per-coordinate bandwidths.
    GaussianProduct,
    /// Product of univariate Gaussian-based kernels of the given even order.
    HighOrderProduct(u32),
}

impl KernelFamily {
    pub fn parse(name: &str, order: u32) -> Result<Self> {
        match name {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "gaussian_product" => Ok(KernelFamily::GaussianProduct),
            "high_order_product" => Ok(KernelFamily::HighOrderProduct(order)),
            other => Err(Error::Config(format!(
                "unknown kernel family `{other}` (gaussian, gaussian_product, high_order_product)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::GaussianProduct => "gaussian_product",
            KernelFamily::HighOrderProduct(_) => "high_order_product",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    dim: usize,
    // P_r in powers of u²: P(u) = Σ c[i] u^{2i}
    coeffs: [f64; 5],
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("kernel dimension must be positive".into()));
        }
        let order = match family {
            KernelFamily::HighOrderProduct(o) => o,
            _ => 2,
        };
        if order < 2 || order % 2 != 0 || order > MAX_ORDER {
            return Err(Error::Config(format!(
                "kernel order must be even and in [2, {MAX_ORDER}], got {order}"
            )));
        }
        Ok(Self { family, dim, coeffs: poly_coeffs(order) })
    }

    pub fn gaussian(dim: usize) -> Self {
        Self::new(KernelFamily::Gaussian, dim).expect("valid spec")
    }

    pub fn gaussian_product(dim: usize) -> Self {
        Self::new(KernelFamily::GaussianProduct, dim).expect("valid spec")
    }

    pub fn high_order(order: u32, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::HighOrderProduct(order), dim)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> u32 {
        match self.family {
            KernelFamily::HighOrderProduct(o) => o,
            _ => 2,
        }
    }

    /// Same family and order in another dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        Self::new(self.family, dim)
    }

    #[inline]
    fn poly(&self, u: f64) -> (f64, f64) {
        // Horner in w = u²; P'(u) = 2u·dP/dw
        let w = u * u;
        let mut p = 0.0;
        let mut dp = 0.0;
        for i in (0..self.coeffs.len()).rev() {
            dp = dp * w + p;
            p = p * w + self.coeffs[i];
        }
        (p, 2.0 * u * dp)
    }

    /// Univariate kernel value.
    #[inline]
    pub fn k1(&self, u: f64) -> f64 {
        let phi = INV_SQRT_2PI * (-0.5 * u * u).exp();
        if self.order() == 2 {
            return phi;
        }
        self.poly(u).0 * phi
    }

    /// Univariate kernel value and derivative.
    #[inline]
    pub fn k1_with_deriv(&self, u: f64) -> (f64, f64) {
        let phi = INV_SQRT_2PI * (-0.5 * u * u).exp();
        if self.order() == 2 {
            return (phi, -u * phi);
        }
        let (p, dp) = self.poly(u);
        (p * phi, (dp - u * p) * phi)
    }

    /// Kernel value without the dimension check.
    #[inline]
    pub fn value(&self, u: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian | KernelFamily::GaussianProduct => {
                let s: f64 = u.iter().map(|x| x * x).sum();
                (2.0 * PI).powf(-(u.len() as f64) / 2.0) * (-0.5 * s).exp()
            }
            KernelFamily::HighOrderProduct(_) => u.iter().map(|&x| self.k1(x)).product(),
        }
    }

    /// Gradient without the dimension check, written into `out`.
    #[inline]
    pub fn gradient_into(&self, u: &[f64], out: &mut [f64]) {
        match self.family {
            KernelFamily::Gaussian | KernelFamily::GaussianProduct => {
                let k = self.value(u);
                for (o, x) in out.iter_mut().zip(u) {
                    *o = -x * k;
                }
            }
            KernelFamily::HighOrderProduct(_) => {
                let d = u.len();
                let mut vals = [0.0; 8];
                let mut ders = [0.0; 8];
                if d > 8 {
                    let pairs: Vec<(f64, f64)> = u.iter().map(|&x| self.k1_with_deriv(x)).collect();
                    for i in 0..d {
                        out[i] = pairs
                            .iter()
                            .enumerate()
                            .map(|(j, p)| if i == j { p.1 } else { p.0 })
                            .product();
                    }
                    return;
                }
                for i in 0..d {
                    let (v, dv) = self.k1_with_deriv(u[i]);
                    vals[i] = v;
                    ders[i] = dv;
                }
                for i in 0..d {
                    let mut g = ders[i];
                    for j in 0..d {
                        if j != i {
                            g *= vals[j];
                        }
                    }
                    out[i] = g;
                }
            }
        }
    }

    fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim {
            return Err(Error::Contract(format!(
                "kernel of dimension {} evaluated at a point of dimension {}",
                self.dim,
                u.len()
            )));
        }
        Ok(())
    }
}

fn poly_coeffs(order: u32) -> [f64; 5] {
    // Hermite polynomials He_n in powers of u, then the even part of P_r.
    let r = (order / 2) as usize;
    let deg = 2 * (r - 1);
    let mut he: Vec<Vec<f64>> = vec![vec![1.0], vec![0.0, 1.0]];
    for n in 1..deg.max(1) {
        let mut next = vec![0.0; n + 2];
        for (i, c) in he[n].iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in he[n - 1].iter().enumerate() {
            next[i] -= n as f64 * c;
        }
        he.push(next);
    }
    let mut p = vec![0.0; deg + 1];
    let mut fact = 1.0;
    for j in 0..r {
        if j > 0 {
            fact *= j as f64;
        }
        let w = if j % 2 == 0 { 1.0 } else { -1.0 } / (2f64.powi(j as i32) * fact);
        for (i, c) in he[2 * j].iter().enumerate() {
            p[i] += w * c;
        }
    }
    let mut out = [0.0; 5];
    for i in 0..=r - 1 {
        out[i] = p[2 * i];
    }
    out
}

pub fn eval_kernel(spec: &KernelSpec, u: &[f64]) -> Result<f64> {
    spec.check_dim(u)?;
    Ok(spec.value(u))
}

pub fn eval_kernel_gradient(spec: &KernelSpec, u: &[f64]) -> Result<Vec<f64>> {
    spec.check_dim(u)?;
    let mut g = vec![0.0; u.len()];
    spec.gradient_into(u, &mut g);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Optimal,
    Suboptimal,
    Pss,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub value: f64,
    pub rule: BandwidthRule,
    pub sigma: Option<f64>,
    pub t: usize,
    pub iota: Option<u32>,
    pub k: Option<usize>,
    pub gamma: Option<f64>,
}

fn check_inputs(sigma: f64, t: usize) -> Result<()> {
    if !(sigma.is_finite()) || sigma <= 0.0 {
        return Err(Error::Estimation(format!(
            "regressor dispersion is {sigma}; a degenerate regressor cannot be smoothed, jitter or remove it"
        )));
    }
    if t < 2 {
        return Err(Error::Contract(format!("bandwidth needs T >= 2, got {t}")));
    }
    Ok(())
}

/// Rule of thumb 1.06·σ̂·T^(−1/(2ι+k)).
pub fn bandwidth_optimal(sigma: f64, t: usize, iota: u32, k: usize) -> Result<Bandwidth> {
    check_inputs(sigma, t)?;
    let value = 1.06 * sigma * (t as f64).powf(-1.0 / (2.0 * iota as f64 + k as f64));
    Ok(Bandwidth { value, rule: BandwidthRule::Optimal, sigma: Some(sigma), t, iota: Some(iota), k: Some(k), gamma: None })
}

/// The same rule with the dimension fixed at 3, used for regressions on p̂.
pub fn bandwidth_suboptimal(sigma: f64, t: usize, iota: u32) -> Result<Bandwidth> {
    let mut b = bandwidth_optimal(sigma, t, iota, 3)?;
    b.rule = BandwidthRule::Suboptimal;
    Ok(b)
}

pub fn bandwidth_fixed(value: f64, t: usize) -> Result<Bandwidth> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {value}")));
    }
    Ok(Bandwidth { value, rule: BandwidthRule::Fixed, sigma: None, t, iota: None, k: None, gamma: None })
}

/// Open interval (k+2, k+3+1{k even}) for the undersmoothing exponent.
pub fn pss_gamma_interval(k_theta: usize) -> (f64, f64) {
    let lo = k_theta as f64 + 2.0;
    let hi = k_theta as f64 + 3.0 + if k_theta % 2 == 0 { 1.0 } else { 0.0 };
    (lo, hi)
}

/// h_θ = T^(−1/γ); γ defaults to the midpoint of its admissible interval.
pub fn bandwidth_pss(t: usize, k_theta: usize, gamma: Option<f64>) -> Result<Bandwidth> {
    if t < 2 {
        return Err(Error::Contract(format!("bandwidth needs T >= 2, got {t}")));
    }
    let (lo, hi) = pss_gamma_interval(k_theta);
    let g = match gamma {
        Some(g) if g > lo && g < hi => g,
        Some(g) => {
            return Err(Error::Config(format!("γ must lie in ({lo},{hi}), got {g}")));
        }
        None => 0.5 * (lo + hi),
    };
    let value = (t as f64).powf(-1.0 / g);
    Ok(Bandwidth { value, rule: BandwidthRule::Pss, sigma: None, t, iota: None, k: Some(k_theta), gamma: Some(g) })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelCertificate {
    /// |∫K − 1|.
    pub mass_error: f64,
    /// Largest |∫u^α K| over multi-indices with 1 ≤ |α| ≤ order − 1.
    pub max_moment: f64,
    /// Largest gap between the analytic gradient and a central difference.
    pub max_gradient_error: f64,
}

/// Tensor trapezoid quadrature on [−12, 12]^d with step 0.1, which is exact
/// to rounding for Gaussian-weighted polynomials, plus a finite-difference
/// gradient check at `n_points` standard-normal points. Dimensions up to 3.
pub fn certify_kernel(spec: &KernelSpec, n_points: usize, seed: u64) -> Result<KernelCertificate> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let d = spec.dim();
    if d > 3 {
        return Err(Error::Config(format!("kernel certification supports dimension ≤ 3, got {d}")));
    }
    let step = 0.1;
    let nodes: Vec<f64> = (0..=240).map(|i| -12.0 + step * i as f64).collect();
    let order = spec.order() as usize;
    // all multi-indices of total degree < order
    let mut alphas: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..d {
        alphas = alphas
            .into_iter()
            .flat_map(|a| (0..order).map(move |e| {
                let mut b = a.clone();
                b.push(e);
                b
            }))
            .collect();
    }
    alphas.retain(|a| a.iter().sum::<usize>() < order);
    let mut sums = vec![0.0; alphas.len()];
    let n = nodes.len();
    let mut idx = vec![0usize; d];
    let mut u = vec![0.0; d];
    loop {
        for j in 0..d {
            u[j] = nodes[idx[j]];
        }
        let k = spec.value(&u);
        for (s, a) in sums.iter_mut().zip(&alphas) {
            *s += k * a.iter().zip(&u).map(|(e, x)| x.powi(*e as i32)).product::<f64>();
        }
        let mut j = 0;
        while j < d {
            idx[j] += 1;
            if idx[j] < n {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == d {
            break;
        }
    }
    let vol = step.powi(d as i32);
    let mut mass_error = 0.0;
    let mut max_moment: f64 = 0.0;
    for (s, a) in sums.iter().zip(&alphas) {
        let v = s * vol;
        if a.iter().all(|e| *e == 0) {
            mass_error = (v - 1.0).abs();
        } else {
            max_moment = max_moment.max(v.abs());
        }
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-5;
    let mut max_gradient_error: f64 = 0.0;
    let mut g = vec![0.0; d];
    for _ in 0..n_points {
        let p: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        spec.gradient_into(&p, &mut g);
        for j in 0..d {
            let mut a = p.clone();
            let mut b = p.clone();
            a[j] += eps;
            b[j] -= eps;
            let fd = (spec.value(&a) - spec.value(&b)) / (2.0 * eps);
            max_gradient_error = max_gradient_error.max((fd - g[j]).abs());
        }
    }
    Ok(KernelCertificate { mass_error, max_moment, max_gradient_error })
}
