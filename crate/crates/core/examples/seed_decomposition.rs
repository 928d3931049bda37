//! Circular decomposition of Tr P(L) into translated seeds plus a boundary weed.

use gge_spectra::models::{Coordinates, ModelKind};
use gge_spectra::poly::Polynomial;
use gge_spectra::seeds::{extract_seed, local_field, motzkin_terms, poly_json, verify_decomposition};

fn main() -> gge_spectra::Result<()> {
    let kind = ModelKind::TodaPeriodic;
    let p = Polynomial::parse("x^4 + x^2/2")?;
    let n = 10;
    let seed = extract_seed(kind, &p, n)?;
    println!("k = {}, blocks = {}, remainder = {}, lower bound = {:.6}", seed.k, seed.m_blocks, seed.ell, seed.lower_bound);
    println!("seed: {}", serde_json::to_string(&seed.seed_json())?);
    println!("weed: {} monomials", poly_json(kind, &seed.weed).as_array().map_or(0, |v| v.len()));

    let a: Vec<f64> = (0..n).map(|j| (j as f64 * 0.7).sin()).collect();
    let b: Vec<f64> = (0..n).map(|j| 1.0 + 0.3 * (j as f64 * 1.3).cos()).collect();
    let c = Coordinates::real(&a, &b, n);
    println!("relative residual of the decomposition: {:.3e}", verify_decomposition(&seed, kind, &p, &c)?);

    let terms = motzkin_terms(4)?;
    let h: f64 = (0..n).map(|j| local_field(&terms, j, &c)).sum::<gge_spectra::Result<f64>>()?;
    println!("{} index terms for [L^4]_jj, sum over sites {h:.10}", terms.len());
    Ok(())
}
