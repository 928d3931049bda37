//! Gaussian quadrature rules and adaptive Gauss–Kronrod integration.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss–Jacobi rule on `[-1, 1]` for the weight `(1-x)^a (1+x)^b`, by Golub–Welsch.
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> Result<Rule> {
    if n == 0 {
        return Err(Error::Domain("quadrature needs at least one node".into()));
    }
    if a <= -1.0 || b <= -1.0 {
        return Err(Error::Domain(format!("Jacobi exponents must exceed -1, got ({a}, {b})")));
    }
    let ab = a + b;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    for (k, d) in diag.iter_mut().enumerate() {
        let kf = k as f64;
        let den = (2.0 * kf + ab) * (2.0 * kf + ab + 2.0);
        *d = if den.abs() < 1e-300 { (b - a) / (ab + 2.0) } else { (b * b - a * a) / den };
    }
    for (k, o) in off.iter_mut().enumerate() {
        let kf = (k + 1) as f64;
        let beta = if k == 0 {
            4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            let s = 2.0 * kf + ab;
            4.0 * kf * (kf + a) * (kf + b) * (kf + ab) / (s * s * (s + 1.0) * (s - 1.0))
        };
        *o = beta.sqrt();
    }
    let mut t = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        t[(i, i)] = diag[i];
        if i + 1 < n {
            t[(i, i + 1)] = off[i];
            t[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let ln_mu0 = (ab + 1.0) * std::f64::consts::LN_2 + ln_gamma(a + 1.0) + ln_gamma(b + 1.0) - ln_gamma(ab + 2.0);
    let mu0 = ln_mu0.exp();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok(Rule { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() })
}

/// Gauss–Legendre rule on `[lo, hi]`.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Result<Rule> {
    let r = gauss_jacobi(n, 0.0, 0.0)?;
    let (h, m) = (0.5 * (hi - lo), 0.5 * (hi + lo));
    Ok(Rule { nodes: r.nodes.iter().map(|x| m + h * x).collect(), weights: r.weights.iter().map(|w| w * h).collect() })
}

/// Rule on `[0, hi]` for the weight `x^e` (endpoint singularity handled exactly).
pub fn gauss_power(n: usize, e: f64, hi: f64) -> Result<Rule> {
    let r = gauss_jacobi(n, 0.0, e)?;
    let h = 0.5 * hi;
    let scale = h.powf(e + 1.0);
    Ok(Rule {
        nodes: r.nodes.iter().map(|x| h * (1.0 + x)).collect(),
        weights: r.weights.iter().map(|w| w * scale).collect(),
    })
}

/// Rule on `[0, 1]` for the weight `(1-u)^e`.
pub fn gauss_one_minus_power(n: usize, e: f64) -> Result<Rule> {
    let r = gauss_jacobi(n, e, 0.0)?;
    let scale = 0.5f64.powf(e + 1.0);
    Ok(Rule {
        nodes: r.nodes.iter().map(|x| 0.5 * (1.0 + x)).collect(),
        weights: r.weights.iter().map(|w| w * scale).collect(),
    })
}

/// Periodic trapezoid rule on `[0, 2π)`.
pub fn trapezoid_circle(n: usize) -> Rule {
    let h = std::f64::consts::TAU / n as f64;
    Rule { nodes: (0..n).map(|i| (i as f64 + 0.5) * h).collect(), weights: vec![h; n] }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Kronrod-15 nodes on `[lo, hi]` with the K15 and embedded G7 weights.
pub fn kronrod15(lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (h, m) = (0.5 * (hi - lo), 0.5 * (hi + lo));
    let mut x = Vec::with_capacity(15);
    let mut wk = Vec::with_capacity(15);
    let mut wg = Vec::with_capacity(15);
    for i in 0..7 {
        for s in [-1.0, 1.0] {
            x.push(m + s * h * XGK[i]);
            wk.push(h * WGK[i]);
            wg.push(if i % 2 == 1 { h * WG[i / 2] } else { 0.0 });
        }
    }
    x.push(m);
    wk.push(h * WGK[7]);
    wg.push(h * WG[3]);
    (x, wk, wg)
}

/// Adaptive G7/K15 integration with interval bisection.
///
/// Returns the integral and the nodes/weights of the final K15 partition, so callers can
/// reuse the same rule for related integrands. `max_evals` bounds the work.
pub fn adaptive_gk15(f: &mut dyn FnMut(f64) -> Result<f64>, lo: f64, hi: f64, abs_tol: f64, max_evals: usize) -> Result<(f64, Rule)> {
    struct Seg {
        lo: f64,
        hi: f64,
        k: f64,
        err: f64,
        xs: Vec<f64>,
        ws: Vec<f64>,
    }
    let mut evals = 0usize;
    let mut eval_seg = |lo: f64, hi: f64, evals: &mut usize| -> Result<Seg> {
        let (x, wk, wg) = kronrod15(lo, hi);
        let mut k = 0.0;
        let mut g = 0.0;
        for i in 0..15 {
            let v = f(x[i])?;
            if !v.is_finite() {
                return Err(Error::QuadratureFailure(format!("non-finite integrand at {}", x[i])));
            }
            k += wk[i] * v;
            g += wg[i] * v;
        }
        *evals += 15;
        Ok(Seg { lo, hi, k, err: (k - g).abs(), xs: x, ws: wk })
    };
    let mut segs = vec![eval_seg(lo, hi, &mut evals)?];
    loop {
        let total_err: f64 = segs.iter().map(|s| s.err).sum();
        if total_err <= abs_tol {
            break;
        }
        if evals + 30 > max_evals {
            return Err(Error::QuadratureFailure(format!("error {total_err:e} above {abs_tol:e} after {evals} evaluations")));
        }
        let (idx, _) = segs.iter().enumerate().max_by(|a, b| a.1.err.total_cmp(&b.1.err)).unwrap();
        let s = segs.swap_remove(idx);
        let mid = 0.5 * (s.lo + s.hi);
        segs.push(eval_seg(s.lo, mid, &mut evals)?);
        segs.push(eval_seg(mid, s.hi, &mut evals)?);
    }
    segs.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let value = segs.iter().map(|s| s.k).sum();
    let rule = Rule { nodes: segs.iter().flat_map(|s| s.xs.clone()).collect(), weights: segs.iter().flat_map(|s| s.ws.clone()).collect() };
    Ok((value, rule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma;

    #[test]
    fn legendre_exact_for_polynomials() {
        let r = gauss_legendre(5, -1.0, 2.0).unwrap();
        // ∫_{-1}^{2} x^9 dx = (2^10 - 1)/10
        assert!((r.integrate(|x| x.powi(9)) - 102.3).abs() < 1e-11);
    }

    #[test]
    fn jacobi_moments() {
        let (a, b) = (0.3, -0.6);
        let r = gauss_jacobi(12, a, b).unwrap();
        let mu0 = 2f64.powf(a + b + 1.0) * gamma(a + 1.0) * gamma(b + 1.0) / gamma(a + b + 2.0);
        assert!((r.integrate(|_| 1.0) - mu0).abs() < 1e-13);
        // first moment: (b - a)/(a + b + 2) · μ0
        assert!((r.integrate(|x| x) - (b - a) / (a + b + 2.0) * mu0).abs() < 1e-13);
    }

    #[test]
    fn power_weight_gamma_integral() {
        // ∫_0^12 x^{2α-1} e^{-x²} dx ≈ Γ(α)/2
        for alpha in [0.25, 1.0, 2.5] {
            let r = gauss_power(60, 2.0 * alpha - 1.0, 12.0).unwrap();
            let v = r.integrate(|x| (-x * x).exp());
            assert!((v - gamma(alpha) / 2.0).abs() < 1e-12 * gamma(alpha), "alpha={alpha}: {v}");
        }
    }

    #[test]
    fn disk_beta_weight() {
        // ∫_0^1 2r (1-r²)^{α-1} dr = 1/α, with u = r²
        for alpha in [0.5, 1.0, 3.0] {
            let r = gauss_one_minus_power(8, alpha - 1.0).unwrap();
            assert!((r.integrate(|_| 1.0) - 1.0 / alpha).abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_log_singularity() {
        let mut f = |x: f64| Ok(x.sqrt().ln());
        let (v, _) = adaptive_gk15(&mut f, 0.0, 1.0, 1e-10, 5000).unwrap();
        assert!((v + 0.5).abs() < 1e-9);
        let mut g = |x: f64| Ok(1.0 / x.sqrt() * (1.0 + x));
        assert!(matches!(adaptive_gk15(&mut g, 0.0, 1.0, 1e-14, 60), Err(Error::QuadratureFailure(_))));
    }
}
