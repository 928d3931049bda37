//! Dominant eigenpairs of dense kernel matrices.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Dense kernel matrix with real storage when possible.
#[derive(Debug, Clone)]
pub enum KernelMatrix {
    Real(DMatrix<f64>),
    /// Real and imaginary parts stored separately.
    Complex(DMatrix<f64>, DMatrix<f64>),
}

impl KernelMatrix {
    pub fn dim(&self) -> usize {
        match self {
            KernelMatrix::Real(m) => m.nrows(),
            KernelMatrix::Complex(m, _) => m.nrows(),
        }
    }

    pub fn apply(&self, x: &DVector<C64>) -> DVector<C64> {
        let re = DVector::from_iterator(x.len(), x.iter().map(|z| z.re));
        let im = DVector::from_iterator(x.len(), x.iter().map(|z| z.im));
        let (yr, yi) = match self {
            KernelMatrix::Real(m) => (m * &re, m * &im),
            KernelMatrix::Complex(mr, mi) => (mr * &re - mi * &im, mr * &im + mi * &re),
        };
        DVector::from_iterator(x.len(), yr.iter().zip(yi.iter()).map(|(&a, &b)| C64::new(a, b)))
    }

    pub fn to_complex(&self) -> DMatrix<C64> {
        match self {
            KernelMatrix::Complex(mr, mi) => mr.zip_map(mi, C64::new),
            KernelMatrix::Real(m) => m.map(|x| C64::new(x, 0.0)),
        }
    }
}

/// Top two eigenvalues by modulus with the dominant eigenvector.
#[derive(Debug, Clone)]
pub struct DominantPair {
    pub lambda1: C64,
    pub lambda2: C64,
    pub vector: DVector<C64>,
    pub residual: f64,
}

/// Dimension up to which a full dense Schur decomposition is used.
pub const DENSE_LIMIT: usize = 200;

fn normalize(v: &mut DVector<C64>) -> f64 {
    let n = v.norm();
    if n > 0.0 {
        *v /= C64::new(n, 0.0);
    }
    n
}

/// Eigenvalues of a small complex matrix, sorted by decreasing modulus.
fn small_eigenvalues(h: &DMatrix<C64>) -> Result<Vec<C64>> {
    let s = Schur::try_new(h.clone(), 1e-15, 10_000).ok_or_else(|| Error::Convergence("complex Schur".into()))?;
    let (_, t) = s.unpack();
    let mut ev: Vec<C64> = (0..h.nrows()).map(|i| t[(i, i)]).collect();
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    Ok(ev)
}

/// Eigenvector of a small matrix for a known eigenvalue, by inverse iteration.
fn small_eigenvector(h: &DMatrix<C64>, lambda: C64) -> DVector<C64> {
    let n = h.nrows();
    let scale = h.norm().max(1e-300);
    let shift = lambda + C64::new(1e-13 * scale, 1e-13 * scale);
    let a = h - DMatrix::<C64>::identity(n, n) * shift;
    let lu = a.lu();
    let mut y = DVector::from_element(n, C64::new(1.0, 0.0));
    for _ in 0..3 {
        match lu.solve(&y) {
            Some(z) if z.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => {
                y = z;
                normalize(&mut y);
            }
            _ => break,
        }
    }
    y
}

/// Dominant eigenpair by full dense decomposition (small matrices).
pub fn dominant_dense(m: &KernelMatrix) -> Result<DominantPair> {
    let a = m.to_complex();
    let ev = small_eigenvalues(&a)?;
    let l1 = ev[0];
    let l2 = ev.get(1).copied().unwrap_or_default();
    let mut v = small_eigenvector(&a, l1);
    normalize(&mut v);
    let r = (&a * &v - &v * l1).norm();
    Ok(DominantPair { lambda1: l1, lambda2: l2, vector: v, residual: r })
}

/// Dominant eigenpair by explicitly restarted Arnoldi iteration.
pub fn dominant_arnoldi(m: &KernelMatrix, start: Option<&DVector<C64>>, tol: f64, max_restarts: usize) -> Result<DominantPair> {
    let n = m.dim();
    let kdim = 30.min(n);
    let mut v0 = match start {
        Some(s) if s.len() == n => s.clone(),
        _ => DVector::from_element(n, C64::new(1.0, 0.0)),
    };
    if normalize(&mut v0) == 0.0 {
        v0 = DVector::from_element(n, C64::new(1.0 / (n as f64).sqrt(), 0.0));
    }
    let mut best: Option<DominantPair> = None;
    for _ in 0..max_restarts {
        let mut basis: Vec<DVector<C64>> = vec![v0.clone()];
        let mut h = DMatrix::<C64>::zeros(kdim + 1, kdim);
        let mut size = kdim;
        for j in 0..kdim {
            let mut w = m.apply(&basis[j]);
            // two passes of classical Gram–Schmidt
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = q.dotc(&w);
                    h[(i, j)] += c;
                    w -= q * c;
                }
            }
            let beta = w.norm();
            h[(j + 1, j)] = C64::new(beta, 0.0);
            if beta <= 1e-14 * h.column(j).norm().max(1e-300) {
                size = j + 1;
                break;
            }
            basis.push(w / C64::new(beta, 0.0));
        }
        let hm = h.view((0, 0), (size, size)).into_owned();
        let ev = small_eigenvalues(&hm)?;
        let l1 = ev[0];
        let l2 = ev.get(1).copied().unwrap_or_default();
        let y = small_eigenvector(&hm, l1);
        let mut x = DVector::<C64>::zeros(n);
        for (i, yi) in y.iter().enumerate() {
            x += &basis[i] * *yi;
        }
        normalize(&mut x);
        let res = if size < kdim { 0.0 } else { h[(size, size - 1)].norm() * y[size - 1].norm() };
        let pair = DominantPair { lambda1: l1, lambda2: l2, vector: x.clone(), residual: res };
        let done = res <= tol * l1.norm();
        best = Some(pair);
        if done {
            break;
        }
        v0 = x;
    }
    let mut p = best.ok_or_else(|| Error::Convergence("no Arnoldi iterations".into()))?;
    // true residual of the returned pair
    let r = (m.apply(&p.vector) - &p.vector * p.lambda1).norm();
    p.residual = r;
    if r > 1e3 * tol * p.lambda1.norm() {
        return Err(Error::Convergence(format!("Arnoldi residual {r:e} after {max_restarts} restarts")));
    }
    Ok(p)
}

/// Dominant eigenpair, dense for small matrices and Arnoldi otherwise.
pub fn dominant(m: &KernelMatrix, start: Option<&DVector<C64>>) -> Result<DominantPair> {
    if m.dim() <= DENSE_LIMIT {
        dominant_dense(m)
    } else {
        dominant_arnoldi(m, start, 1e-13, 60)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arnoldi_matches_dense() {
        let n = 300;
        let m = DMatrix::<f64>::from_fn(n, n, |i, j| {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            (-(x - y).powi(2) * 3.0 - x * x).exp() / n as f64
        });
        let km = KernelMatrix::Real(m.clone());
        let a = dominant_arnoldi(&km, None, 1e-13, 60).unwrap();
        let d = dominant_dense(&km).unwrap();
        assert!((a.lambda1 - d.lambda1).norm() < 1e-12 * d.lambda1.norm());
        assert!((a.lambda2 - d.lambda2).norm() < 1e-6 * d.lambda1.norm());
        assert!(a.lambda1.re > 0.0);
    }

    #[test]
    fn rank_one() {
        let n = 50;
        let f: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let g: Vec<f64> = (0..n).map(|i| (-(i as f64) * 0.05).exp()).collect();
        let m = DMatrix::<f64>::from_fn(n, n, |i, j| f[i] * g[j]);
        let d = dominant_dense(&KernelMatrix::Real(m)).unwrap();
        let tr: f64 = (0..n).map(|i| f[i] * g[i]).sum();
        assert!((d.lambda1.re - tr).abs() < 1e-12 * tr);
        assert!(d.lambda2.norm() < 1e-10 * tr);
    }
}
