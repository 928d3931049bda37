//! Circular seed/weed decompositions of trace observables and the super-Motzkin expansion.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{build_matrix, Coordinates, Family, ModelKind};
use crate::poly::Polynomial;
use crate::symbolic::{self, Atom, Mono, SymPoly};

/// One element of the super-Motzkin index set with its multiplicity.
///
/// `n[i]` is the half-exponent of `b_{j+i}`, `q[i]` the exponent of `a_{j+i}`; only
/// nonzero entries are stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MotzkinTerm {
    pub n: BTreeMap<i32, u32>,
    pub q: BTreeMap<i32, u32>,
    pub rho: u64,
}

impl MotzkinTerm {
    pub fn degree(&self) -> u32 {
        self.n.values().map(|v| 2 * v).sum::<u32>() + self.q.values().sum::<u32>()
    }

    fn nv(&self, i: i32) -> u32 {
        self.n.get(&i).copied().unwrap_or(0)
    }

    fn qv(&self, i: i32) -> u32 {
        self.q.get(&i).copied().unwrap_or(0)
    }

    fn key(&self, m: i32) -> (Vec<u32>, Vec<u32>) {
        ((-m..=m).map(|i| self.nv(i)).collect(), (-m..=m).map(|i| self.qv(i)).collect())
    }

    /// Value at site `j` of a periodic Jacobi configuration.
    pub fn eval(&self, j: usize, a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as i64;
        let idx = |i: i32| (j as i64 + i as i64).rem_euclid(n) as usize;
        let mut v = self.rho as f64;
        for (&i, &p) in &self.q {
            v *= a[idx(i)].powi(p as i32);
        }
        for (&i, &p) in &self.n {
            v *= b[idx(i)].powi(2 * p as i32);
        }
        v
    }
}

fn binom(n: i64, k: i64) -> u64 {
    if k < 0 {
        return 0;
    }
    if k == 0 {
        return 1;
    }
    if n < k {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k as u128 {
        r = r * (n as u128 - i) / (i + 1);
    }
    r as u64
}

/// Number of closed walks realizing the edge counts `n` and stay counts `q`.
fn motzkin_multiplicity(t: &MotzkinTerm, left: i32, right: i32) -> u64 {
    let n = |i: i32| t.nv(i) as i64;
    let q = |i: i32| t.qv(i) as i64;
    let mut rho = binom(n(-1) + n(0) + q(0), q(0)) * binom(n(-1) + n(0), n(0));
    for v in 1..=right {
        rho *= binom(n(v - 1) + n(v) + q(v) - 1, q(v)) * binom(n(v - 1) + n(v) - 1, n(v));
    }
    for v in (-left..=-1).rev() {
        rho *= binom(n(v) + n(v - 1) + q(v) - 1, q(v)) * binom(n(v) + n(v - 1) - 1, n(v - 1));
    }
    rho
}

fn compositions(total: u32, parts: usize, out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, min: u32) {
    if cur.len() == parts {
        if total == 0 {
            out.push(cur.clone());
        }
        return;
    }
    for v in min..=total {
        cur.push(v);
        compositions(total - v, parts, out, cur, min);
        cur.pop();
    }
}

/// Complete enumeration of the super-Motzkin index set for `[L^m]_{jj}`.
pub fn motzkin_terms(m: usize) -> Result<Vec<MotzkinTerm>> {
    if !(1..=12).contains(&m) {
        return Err(Error::Domain(format!("motzkin_terms needs 1 <= m <= 12, got {m}")));
    }
    let m32 = m as u32;
    let mut out = Vec::new();
    // right extent r (edges 0..r-1), left extent l (edges -1..-l)
    for r in 0..=m / 2 {
        for l in 0..=(m / 2 - r) {
            let edges = r + l;
            for nsum in edges as u32..=m32 / 2 {
                let mut ncomp = Vec::new();
                compositions(nsum, edges, &mut ncomp, &mut Vec::new(), 1);
                let qtot = m32 - 2 * nsum;
                let verts = edges + 1;
                let mut qcomp = Vec::new();
                compositions(qtot, verts, &mut qcomp, &mut Vec::new(), 0);
                for nv in &ncomp {
                    for qv in &qcomp {
                        let mut t = MotzkinTerm { n: BTreeMap::new(), q: BTreeMap::new(), rho: 0 };
                        for (e, &v) in nv.iter().enumerate() {
                            let i = if e < r { e as i32 } else { -((e - r) as i32) - 1 };
                            t.n.insert(i, v);
                        }
                        for (idx, &v) in qv.iter().enumerate() {
                            if v > 0 {
                                t.q.insert(idx as i32 - l as i32, v);
                            }
                        }
                        t.rho = motzkin_multiplicity(&t, l as i32, r as i32);
                        if t.rho > 0 {
                            out.push(t);
                        }
                    }
                }
            }
        }
    }
    let mi = m as i32;
    out.sort_by_key(|t| t.key(mi));
    Ok(out)
}

/// `[L^m]_{jj}` of a periodic Jacobi matrix via the super-Motzkin expansion.
pub fn local_field(terms: &[MotzkinTerm], j: usize, coords: &Coordinates) -> Result<f64> {
    let n = coords.n;
    if j >= n {
        return Err(Error::Index { index: j, len: n });
    }
    if coords.b.len() != n || coords.a.len() != n {
        return Err(Error::Domain("local_field needs periodic Jacobi coordinates".into()));
    }
    let m = terms.first().map(|t| t.degree() as usize).unwrap_or(0);
    if m >= n {
        return Err(Error::Domain(format!("super-Motzkin expansion needs m < N, got m={m}, N={n}")));
    }
    let a = coords.a_re();
    Ok(terms.iter().map(|t| t.eval(j, &a, &coords.b)).sum())
}

/// Checks the model's admissibility conditions on the potential.
pub fn check_potential(kind: ModelKind, p: &Polynomial) -> Result<()> {
    let bad = |why: &str| Err(Error::UnsupportedPotential(format!("{} for {}: {why}", p.to_expr(), kind.name())));
    if p.is_zero() {
        return Ok(());
    }
    let d = p.degree();
    let lead = p.leading();
    match kind.family() {
        Family::Cmv => Ok(()),
        _ if !p.is_real() => bad("coefficients must be real"),
        Family::Jacobi => {
            if d < 2 || d % 2 == 1 || lead.re <= 0.0 {
                bad("degree must be even, at least 2, with positive leading coefficient")
            } else {
                Ok(())
            }
        }
        Family::PosDefJacobi => {
            if lead.re <= 0.0 {
                bad("leading coefficient must be positive")
            } else {
                Ok(())
            }
        }
        Family::Antisym => {
            // only even powers survive; (-1)^d p_{2d} > 0 for the top even power 2d
            let top = (0..=d).rev().find(|&k| k % 2 == 0 && k > 0 && p.coeff(k).re != 0.0);
            match top {
                Some(k) if (if (k / 2) % 2 == 0 { 1.0 } else { -1.0 }) * p.coeff(k).re > 0.0 => Ok(()),
                _ => bad("top even coefficient must have sign (-1)^d"),
            }
        }
        Family::InbAdd(r) | Family::InbMul(r) => {
            if d % (r + 1) != 0 || lead.re <= 0.0 {
                bad("degree must be a multiple of r+1 with positive leading coefficient")
            } else {
                Ok(())
            }
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

pub fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Smallest circular index for `Tr P(M)`.
pub fn circular_index(kind: ModelKind, p: &Polynomial) -> usize {
    let g = symbolic::local_generator(kind, p);
    base_index(&g)
}

pub(crate) fn base_index(g: &symbolic::Generator) -> usize {
    let k = g.max_span().saturating_sub(1).max(1);
    k.div_ceil(g.period) * g.period
}

/// A k-circular decomposition `Y = Σ_{j<M-1} seed(X_j, X_{j+1}) + weed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub kind: ModelKind,
    pub n: usize,
    /// Circular index (sites per block).
    pub k: usize,
    /// Number of blocks, `N = k·M + ℓ`.
    pub m_blocks: usize,
    pub ell: usize,
    /// Function of the `2k` sites of two consecutive blocks (offsets `0..2k`).
    pub seed: SymPoly,
    /// Function of `X_1`, `X_M` and the tail, in absolute site indices.
    pub weed: SymPoly,
    /// Estimated lower bound of `Re seed` (`-inf` if unbounded on the scan).
    pub lower_bound: f64,
}

impl Seed {
    /// Seed evaluated on blocks `j, j+1` of a configuration.
    pub fn seed_at(&self, coords: &Coordinates, j: usize) -> C64 {
        let off = self.k * j;
        self.seed.eval(&|s, a| symbolic::atom_value(self.kind, coords, off + s, a))
    }

    pub fn weed_eval(&self, coords: &Coordinates) -> C64 {
        self.weed.eval_coords(self.kind, coords)
    }

    /// `Σ_{j=0}^{M-2} seed(X_j, X_{j+1}) + weed`.
    pub fn total(&self, coords: &Coordinates) -> C64 {
        let s: C64 = (0..self.m_blocks.saturating_sub(1)).map(|j| self.seed_at(coords, j)).sum();
        s + self.weed_eval(coords)
    }

    /// Real part of the decomposition, term by term.
    pub fn real_part(&self) -> Seed {
        Seed { seed: self.seed.real_part(), weed: self.weed.real_part(), ..self.clone() }
    }

    /// Monomial list of the seed for printing.
    pub fn seed_json(&self) -> serde_json::Value {
        poly_json(self.kind, &self.seed)
    }
}

fn var_name(kind: ModelKind, atom: Atom) -> (&'static str, f64) {
    match atom {
        Atom::A => ("a", 1.0),
        Atom::Abar => ("abar", 1.0),
        Atom::B => ("b", 1.0),
        Atom::X if kind == ModelKind::VolterraPeriodic => ("a", 0.5),
        Atom::X => ("x", 1.0),
        Atom::Rho => ("rho", 1.0),
    }
}

/// `[{coeff, sites:[{offset, var, power}]}]`.
pub fn poly_json(kind: ModelKind, p: &SymPoly) -> serde_json::Value {
    let items: Vec<serde_json::Value> = p
        .terms
        .iter()
        .map(|(m, c)| {
            let coeff = if c.im == 0.0 { serde_json::json!(c.re) } else { serde_json::json!([c.re, c.im]) };
            let sites: Vec<serde_json::Value> = m
                .0
                .iter()
                .map(|&(s, a, pw)| {
                    let (v, scale) = var_name(kind, a);
                    let power = pw as f64 * scale;
                    let power = if power.fract() == 0.0 { serde_json::json!(power as u64) } else { serde_json::json!(power) };
                    serde_json::json!({"offset": s, "var": v, "power": power})
                })
                .collect();
            serde_json::json!({"coeff": coeff, "sites": sites})
        })
        .collect();
    serde_json::Value::Array(items)
}

/// Seed of `Tr P(M)` with the generator's own circular index.
pub fn extract_seed(kind: ModelKind, p: &Polynomial, n: usize) -> Result<Seed> {
    extract_seed_with(kind, p, n, 1)
}

/// Seed of `Tr P(M)` whose circular index is a multiple of `k_multiple`.
pub fn extract_seed_with(kind: ModelKind, p: &Polynomial, n: usize, k_multiple: usize) -> Result<Seed> {
    check_potential(kind, p)?;
    let mut seed = decompose(kind, p, n, k_multiple)?;
    seed.lower_bound = seed_lower_bound(kind, &seed.seed.real_part(), 2 * seed.k);
    Ok(seed)
}

/// Algebraic seed/weed split of `Tr P(M)` for any polynomial, without the
/// admissibility check or the lower-bound scan (`lower_bound` is NaN).
pub fn decompose(kind: ModelKind, p: &Polynomial, n: usize, k_multiple: usize) -> Result<Seed> {
    let (na, _) = kind.coord_lengths(n);
    if n == 0 || na == 0 {
        return Err(Error::Domain("lattice size too small".into()));
    }
    if let Family::InbAdd(r) | Family::InbMul(r) = kind.family() {
        if n <= r {
            return Err(Error::Domain(format!("INB r={r} needs N > r")));
        }
    }
    if kind.is_cmv() && n % 2 == 1 {
        return Err(Error::Domain("CMV needs an even number of coefficients".into()));
    }
    let gen = symbolic::local_generator(kind, p);
    let step = lcm(base_index(&gen), k_multiple.max(1));
    let full = symbolic::trace_poly(kind, p, n);
    let mut k = step;
    loop {
        let seed = place_seed(&gen, k);
        let m_blocks = n / k;
        let ell = n - k * m_blocks;
        let mut weed = full.clone();
        if m_blocks >= 2 {
            for j in 0..m_blocks - 1 {
                weed.add_scaled(&seed.remap(|s| s + k * j), C64::new(-1.0, 0.0));
            }
        }
        let tol = 1e-13 * (1.0 + full.max_abs_coeff());
        weed.prune(tol);
        let inside = |s: usize| s < k || s >= k * (m_blocks.max(1) - 1);
        let ok = m_blocks < 2 || weed.terms.keys().all(|m| m.0.iter().all(|f| inside(f.0)));
        if ok {
            return Ok(Seed { kind, n, k, m_blocks, ell, seed, weed, lower_bound: f64::NAN });
        }
        k += step;
    }
}

/// Spreads each generator term uniformly over its admissible placements in `2k` sites.
pub(crate) fn place_seed(gen: &symbolic::Generator, k: usize) -> SymPoly {
    let mut seed = SymPoly::zero();
    for rho in 0..k {
        let rep = &gen.reps[rho % gen.period];
        for (m, &c) in &rep.terms {
            let span = m.sites().last().map(|&s| s + 1).unwrap_or(1);
            if span > 2 * k {
                continue;
            }
            let places: Vec<usize> = (0..=2 * k - span).filter(|p| p % k == rho).collect();
            let w = 1.0 / places.len() as f64;
            for p in places {
                seed.add_term(m.remap(|s| s + p), c * w);
            }
        }
    }
    if gen.constant != C64::new(0.0, 0.0) {
        seed.add_term(Mono::one(), gen.constant * k as f64);
    }
    seed
}

/// Relative residual of the decomposition identity for one configuration.
pub fn verify_decomposition(seed: &Seed, kind: ModelKind, p: &Polynomial, coords: &Coordinates) -> Result<f64> {
    let l = build_matrix(kind, coords)?;
    let mut direct = C64::new(0.0, 0.0);
    for (t, c) in p.terms() {
        if c == C64::new(0.0, 0.0) {
            continue;
        }
        direct += c * if t == 0 { C64::new(coords.n as f64, 0.0) } else { l.trace_power(t)? };
    }
    let total = seed.total(coords);
    Ok((direct - total).norm() / (1.0 + direct.norm()))
}

/// Draws raw `(a, b)` values of one site for scanning, at a given scale.
pub fn draw_site(kind: ModelKind, rng: &mut impl Rng, scale: f64) -> (C64, f64) {
    let normal = |rng: &mut dyn rand::RngCore| {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let v: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        (-2.0 * u.ln()).sqrt() * v.cos()
    };
    match kind.family() {
        Family::Cmv => {
            let r = rng.random_range(0.0f64..1.0).sqrt() * 0.999_999;
            (C64::from_polar(r, rng.random_range(0.0..std::f64::consts::TAU)), 0.0)
        }
        Family::Jacobi => (C64::new(scale * normal(rng), 0.0), scale * normal(rng).abs()),
        _ => (C64::new(scale * normal(rng).abs(), 0.0), scale * normal(rng).abs()),
    }
}

/// Atom value from raw site values; `X` reads the entry magnitude directly.
pub fn raw_atom(site: (C64, f64), atom: Atom) -> C64 {
    let (a, b) = site;
    match atom {
        Atom::A => a,
        Atom::Abar => a.conj(),
        Atom::B => C64::new(b, 0.0),
        Atom::X => C64::new(a.re, 0.0),
        Atom::Rho => C64::new((1.0 - a.norm_sqr()).max(0.0).sqrt(), 0.0),
    }
}

/// Random scan plus local refinement of `min Re f` over `sites` sites.
///
/// This is an estimate, not a certificate: the returned value is the best
/// minimum found minus a safety margin, or `-inf` if the scan diverges.
pub fn seed_lower_bound(kind: ModelKind, f: &SymPoly, sites: usize) -> f64 {
    if f.is_zero() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let eval = |x: &[(C64, f64)]| f.eval(&|s, a| raw_atom(x[s], a)).re;
    let scales: &[f64] = if kind.is_cmv() { &[1.0] } else { &[0.25, 0.5, 1.0, 2.0, 4.0, 8.0] };
    let mut best: Vec<(f64, Vec<(C64, f64)>)> = Vec::new();
    let mut per_scale = Vec::new();
    for &sc in scales {
        let mut mn = f64::INFINITY;
        for _ in 0..4000 {
            let x: Vec<(C64, f64)> = (0..sites).map(|_| draw_site(kind, &mut rng, sc)).collect();
            let v = eval(&x);
            mn = mn.min(v);
            if best.len() < 16 || v < best[best.len() - 1].0 {
                best.push((v, x));
                best.sort_by(|p, q| p.0.total_cmp(&q.0));
                best.truncate(16);
            }
        }
        per_scale.push(mn);
    }
    if per_scale.len() >= 3 {
        let l = per_scale.len();
        let (m1, m2) = (per_scale[l - 2], per_scale[l - 1]);
        if m2 < 0.0 && m2 < m1 - 4.0 * (1.0 + m1.abs()) {
            return f64::NEG_INFINITY;
        }
    }
    let positive = !matches!(kind.family(), Family::Jacobi | Family::Cmv);
    let mut overall = f64::INFINITY;
    for (v0, x0) in best {
        let (mut v, mut x) = (v0, x0);
        let mut step = 0.5;
        for _ in 0..600 {
            let mut y = x.clone();
            let i = rng.random_range(0..sites);
            let (mut a, mut b) = y[i];
            let da = C64::new(rng.random_range(-step..step), if kind.is_cmv() { rng.random_range(-step..step) } else { 0.0 });
            a += da * (1.0 + a.norm()).min(4.0);
            b += rng.random_range(-step..step) * (1.0 + b);
            if positive && a.re <= 0.0 {
                a = C64::new(a.re.abs() + 1e-12, 0.0);
            }
            if b < 0.0 {
                b = -b;
            }
            if kind.is_cmv() && a.norm() >= 1.0 {
                a /= a.norm() * 1.000_001;
            }
            y[i] = (a, b);
            let w = eval(&y);
            if w < v {
                v = w;
                x = y;
            } else {
                step = (step * 0.995).max(1e-4);
            }
        }
        overall = overall.min(v);
    }
    overall - (1e-2 * overall.abs() + 1e-3)
}
