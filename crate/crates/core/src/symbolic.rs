//! Multivariate polynomials in lattice coordinates and symbolic trace expansion.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;

use crate::models::{Coordinates, Family, ModelKind};
use crate::poly::Polynomial;

/// Per-site symbols appearing in Lax matrix entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    /// `a_j` (complex for CMV).
    A,
    /// `conj(a_j)` (CMV only).
    Abar,
    /// `b_j`.
    B,
    /// Magnitude of the antisymmetric entry: `√a_j` for Volterra, `a_j` for the β-ensemble.
    X,
    /// `ρ_j = √(1 - |a_j|²)` (CMV only).
    Rho,
}

impl Atom {
    pub fn conj(self) -> Atom {
        match self {
            Atom::A => Atom::Abar,
            Atom::Abar => Atom::A,
            a => a,
        }
    }
}

/// Value of `atom` at `site` for a configuration of `kind`.
pub fn atom_value(kind: ModelKind, coords: &Coordinates, site: usize, atom: Atom) -> C64 {
    match atom {
        Atom::A => coords.a[site],
        Atom::Abar => coords.a[site].conj(),
        // a missing boundary entry of a non-periodic model reads as zero
        Atom::B => C64::new(coords.b.get(site).copied().unwrap_or(0.0), 0.0),
        Atom::X => {
            let v = coords.a.get(site).map(|z| z.re).unwrap_or(0.0);
            C64::new(if kind == ModelKind::VolterraPeriodic { v.sqrt() } else { v }, 0.0)
        }
        Atom::Rho => C64::new((1.0 - coords.a[site].norm_sqr()).max(0.0).sqrt(), 0.0),
    }
}

/// A product of atom powers, sorted by `(site, atom)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Mono(pub Vec<(usize, Atom, u32)>);

impl Mono {
    pub fn one() -> Self {
        Mono(Vec::new())
    }

    pub fn atom(site: usize, atom: Atom) -> Self {
        Mono(vec![(site, atom, 1)])
    }

    pub fn mul(&self, other: &Mono) -> Mono {
        let (x, y) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(x.len() + y.len());
        let (mut i, mut j) = (0, 0);
        while i < x.len() && j < y.len() {
            let (kx, ky) = ((x[i].0, x[i].1), (y[j].0, y[j].1));
            if kx < ky {
                out.push(x[i]);
                i += 1;
            } else if ky < kx {
                out.push(y[j]);
                j += 1;
            } else {
                out.push((x[i].0, x[i].1, x[i].2 + y[j].2));
                i += 1;
                j += 1;
            }
        }
        out.extend_from_slice(&x[i..]);
        out.extend_from_slice(&y[j..]);
        Mono(out)
    }

    /// Distinct sites, ascending.
    pub fn sites(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.0.iter().map(|f| f.0).collect();
        s.dedup();
        s
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|f| f.2).sum()
    }

    /// Relabels site `s` as `map(s)` and re-sorts.
    pub fn remap(&self, map: impl Fn(usize) -> usize) -> Mono {
        let mut v: Vec<(usize, Atom, u32)> = self.0.iter().map(|&(s, a, p)| (map(s), a, p)).collect();
        v.sort_by_key(|f| (f.0, f.1));
        let mut out: Vec<(usize, Atom, u32)> = Vec::with_capacity(v.len());
        for f in v {
            match out.last_mut() {
                Some(l) if l.0 == f.0 && l.1 == f.1 => l.2 += f.2,
                _ => out.push(f),
            }
        }
        Mono(out)
    }

    pub fn conj(&self) -> Mono {
        self.remap_atoms(Atom::conj)
    }

    fn remap_atoms(&self, f: impl Fn(Atom) -> Atom) -> Mono {
        let mut v: Vec<(usize, Atom, u32)> = self.0.iter().map(|&(s, a, p)| (s, f(a), p)).collect();
        v.sort_by_key(|x| (x.0, x.1));
        Mono(v)
    }

    pub fn eval(&self, val: &impl Fn(usize, Atom) -> C64) -> C64 {
        let mut acc = C64::new(1.0, 0.0);
        for &(s, a, p) in &self.0 {
            acc *= powi(val(s, a), p);
        }
        acc
    }
}

fn powi(z: C64, p: u32) -> C64 {
    match p {
        0 => C64::new(1.0, 0.0),
        1 => z,
        2 => z * z,
        _ => z.powu(p),
    }
}

/// Sparse polynomial: monomial -> coefficient, deterministically ordered.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymPoly {
    pub terms: BTreeMap<Mono, C64>,
}

impl SymPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: C64) -> Self {
        let mut p = Self::zero();
        p.add_term(Mono::one(), c);
        p
    }

    pub fn atom(site: usize, atom: Atom, c: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(Mono::atom(site, atom), C64::new(c, 0.0));
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, m: Mono, c: C64) {
        if c == C64::new(0.0, 0.0) {
            return;
        }
        let e = self.terms.entry(m).or_insert(C64::new(0.0, 0.0));
        *e += c;
    }

    pub fn add_assign(&mut self, other: &SymPoly) {
        for (m, &c) in &other.terms {
            self.add_term(m.clone(), c);
        }
    }

    pub fn add_scaled(&mut self, other: &SymPoly, s: C64) {
        for (m, &c) in &other.terms {
            self.add_term(m.clone(), c * s);
        }
    }

    pub fn mul(&self, other: &SymPoly) -> SymPoly {
        let mut out = SymPoly::zero();
        for (m1, &c1) in &self.terms {
            for (m2, &c2) in &other.terms {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> SymPoly {
        let mut out = SymPoly::zero();
        out.add_scaled(self, s);
        out
    }

    /// Drops coefficients with modulus at most `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, c| c.norm() > tol);
    }

    /// Complex conjugate as a function of the coordinates.
    pub fn conj(&self) -> SymPoly {
        let mut out = SymPoly::zero();
        for (m, c) in &self.terms {
            out.add_term(m.conj(), c.conj());
        }
        out
    }

    /// Real part as a function of the coordinates.
    pub fn real_part(&self) -> SymPoly {
        let mut out = self.scale(C64::new(0.5, 0.0));
        out.add_scaled(&self.conj(), C64::new(0.5, 0.0));
        out.prune(0.0);
        out
    }

    /// Imaginary part as a function of the coordinates.
    pub fn imag_part(&self) -> SymPoly {
        let mut out = self.scale(C64::new(0.0, -0.5));
        out.add_scaled(&self.conj(), C64::new(0.0, 0.5));
        out.prune(0.0);
        out
    }

    pub fn remap(&self, map: impl Fn(usize) -> usize) -> SymPoly {
        let mut out = SymPoly::zero();
        for (m, &c) in &self.terms {
            out.add_term(m.remap(&map), c);
        }
        out
    }

    pub fn eval(&self, val: &impl Fn(usize, Atom) -> C64) -> C64 {
        self.terms.iter().map(|(m, &c)| c * m.eval(val)).sum()
    }

    pub fn eval_coords(&self, kind: ModelKind, coords: &Coordinates) -> C64 {
        self.eval(&|s, a| atom_value(kind, coords, s, a))
    }

    /// Largest site index used, if any.
    pub fn max_site(&self) -> Option<usize> {
        self.terms.keys().filter_map(|m| m.0.last().map(|f| f.0)).max()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Symbolic Lax matrix as sparse rows.
pub type SymMatrix = Vec<Vec<(usize, SymPoly)>>;

fn push(rows: &mut SymMatrix, i: usize, j: usize, p: SymPoly) {
    if let Some(e) = rows[i].iter_mut().find(|(c, _)| *c == j) {
        e.1.add_assign(&p);
    } else {
        rows[i].push((j, p));
    }
}

fn sparse_mul(a: &SymMatrix, b: &SymMatrix) -> SymMatrix {
    let n = a.len();
    let mut out: SymMatrix = vec![Vec::new(); n];
    for (i, row) in a.iter().enumerate() {
        for (k, p) in row {
            for (j, q) in &b[*k] {
                push(&mut out, i, *j, p.mul(q));
            }
        }
    }
    for r in &mut out {
        r.retain(|(_, p)| !p.is_zero());
        r.sort_by_key(|(c, _)| *c);
    }
    out
}

fn cmv_block(rows: &mut SymMatrix, p: usize, q: usize, site: usize) {
    push(rows, p, p, SymPoly::atom(site, Atom::Abar, 1.0));
    push(rows, p, q, SymPoly::atom(site, Atom::Rho, 1.0));
    push(rows, q, p, SymPoly::atom(site, Atom::Rho, 1.0));
    push(rows, q, q, SymPoly::atom(site, Atom::A, -1.0));
}

/// The Lax matrix of `kind` at size `n` with symbolic entries.
///
/// Built independently of [`crate::models::build_matrix`], which serves as its numeric check.
pub fn sym_matrix(kind: ModelKind, n: usize) -> SymMatrix {
    let mut rows: SymMatrix = vec![Vec::new(); n];
    let periodic = kind.is_periodic();
    let one = || SymPoly::constant(C64::new(1.0, 0.0));
    match kind.family() {
        Family::Jacobi => {
            for j in 0..n {
                push(&mut rows, j, j, SymPoly::atom(j, Atom::A, 1.0));
            }
            let nb = if periodic { n } else { n - 1 };
            for j in 0..nb {
                let k = (j + 1) % n;
                push(&mut rows, j, k, SymPoly::atom(j, Atom::B, 1.0));
                push(&mut rows, k, j, SymPoly::atom(j, Atom::B, 1.0));
            }
        }
        Family::PosDefJacobi => {
            // B has a_j at (j, j) and b_j at (j, j+1 mod n); M = B Bᵀ
            let mut bm: SymMatrix = vec![Vec::new(); n];
            let mut bt: SymMatrix = vec![Vec::new(); n];
            for j in 0..n {
                push(&mut bm, j, j, SymPoly::atom(j, Atom::A, 1.0));
                push(&mut bt, j, j, SymPoly::atom(j, Atom::A, 1.0));
                if j + 1 < n || periodic {
                    let k = (j + 1) % n;
                    push(&mut bm, j, k, SymPoly::atom(j, Atom::B, 1.0));
                    push(&mut bt, k, j, SymPoly::atom(j, Atom::B, 1.0));
                }
            }
            rows = sparse_mul(&bm, &bt);
        }
        Family::Antisym => {
            let ne = if periodic { n } else { n - 1 };
            for j in 0..ne {
                let k = (j + 1) % n;
                push(&mut rows, j, k, SymPoly::atom(j, Atom::X, 1.0));
                push(&mut rows, k, j, SymPoly::atom(j, Atom::X, -1.0));
            }
        }
        Family::Cmv => {
            let mut l: SymMatrix = vec![Vec::new(); n];
            let mut m: SymMatrix = vec![Vec::new(); n];
            if periodic {
                for p in (0..n).step_by(2) {
                    cmv_block(&mut l, p, p + 1, p);
                }
                for p in (1..n).step_by(2) {
                    cmv_block(&mut m, p, (p + 1) % n, p);
                }
            } else {
                push(&mut l, 0, 0, one());
                for p in (1..n - 1).step_by(2) {
                    cmv_block(&mut l, p, p + 1, p);
                }
                push(&mut l, n - 1, n - 1, SymPoly::atom(n - 1, Atom::Abar, 1.0));
                for p in (0..n).step_by(2) {
                    cmv_block(&mut m, p, p + 1, p);
                }
            }
            rows = sparse_mul(&l, &m);
        }
        Family::InbAdd(r) => {
            for i in 0..n {
                push(&mut rows, (i + r) % n, i, SymPoly::atom((i + r) % n, Atom::A, 1.0));
                push(&mut rows, i, (i + 1) % n, one());
            }
        }
        Family::InbMul(r) => {
            for i in 0..n {
                push(&mut rows, i, (i + 1) % n, SymPoly::atom(i, Atom::A, 1.0));
                push(&mut rows, (i + r) % n, i, one());
            }
        }
    }
    for r in &mut rows {
        r.retain(|(_, p)| !p.is_zero());
        r.sort_by_key(|(c, _)| *c);
    }
    rows
}

/// Half-bandwidth of the bulk pattern (cyclic distance between coupled indices).
pub fn bandwidth(kind: ModelKind) -> usize {
    match kind.family() {
        Family::Jacobi | Family::PosDefJacobi | Family::Antisym => 1,
        Family::Cmv => 2,
        Family::InbAdd(r) | Family::InbMul(r) => r.max(1),
    }
}

/// `Σ_{i ∈ starts} Σ_t p_t [M^t]_{ii}` by row-vector propagation `e_i M^t`.
pub fn trace_window(mat: &SymMatrix, poly: &Polynomial, starts: impl Iterator<Item = usize>) -> SymPoly {
    let deg = poly.degree();
    let mut out = SymPoly::zero();
    let p0 = poly.coeff(0);
    for i in starts {
        if p0 != C64::new(0.0, 0.0) {
            out.add_term(Mono::one(), p0);
        }
        let mut v: BTreeMap<usize, SymPoly> = BTreeMap::new();
        v.insert(i, SymPoly::constant(C64::new(1.0, 0.0)));
        for t in 1..=deg {
            let mut next: BTreeMap<usize, SymPoly> = BTreeMap::new();
            for (k, pk) in &v {
                for (j, m) in &mat[*k] {
                    next.entry(*j).or_default().add_assign(&pk.mul(m));
                }
            }
            v = next;
            let c = poly.coeff(t);
            if c != C64::new(0.0, 0.0) {
                if let Some(d) = v.get(&i) {
                    out.add_scaled(d, c);
                }
            }
        }
    }
    out.prune(0.0);
    out
}

/// Full symbolic expansion of `Tr P(M)` at size `n`.
pub fn trace_poly(kind: ModelKind, poly: &Polynomial, n: usize) -> SymPoly {
    let mat = sym_matrix(kind, n);
    trace_window(&mat, poly, 0..n)
}

/// Cyclic anchor of a set of sites on a ring of size `n`: the site following the largest gap.
pub fn cyclic_anchor(sites: &[usize], n: usize) -> (usize, usize) {
    if sites.is_empty() {
        return (0, 0);
    }
    let mut best_gap = 0;
    let mut anchor = sites[0];
    for (idx, &s) in sites.iter().enumerate() {
        let prev = if idx == 0 { sites[sites.len() - 1] } else { sites[idx - 1] };
        let gap = (s + n - prev) % n;
        let gap = if gap == 0 { n } else { gap };
        if gap > best_gap {
            best_gap = gap;
            anchor = s;
        }
    }
    let span = sites.iter().map(|&s| (s + n - anchor) % n).max().unwrap_or(0) + 1;
    (anchor, span)
}

/// Translation-invariant local generator of a periodic trace observable.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// Translation period (1 or 2).
    pub period: usize,
    /// `reps[r]`: terms anchored at sites `≡ r (mod period)`, with offsets relative to the anchor.
    pub reps: Vec<SymPoly>,
    /// Constant part per site.
    pub constant: C64,
}

impl Generator {
    /// Largest number of consecutive sites covered by one term.
    pub fn max_span(&self) -> usize {
        self.reps
            .iter()
            .flat_map(|r| r.terms.keys())
            .map(|m| m.sites().last().map(|&s| s + 1).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }
}

fn polys_close(a: &SymPoly, b: &SymPoly, tol: f64) -> bool {
    let scale = 1.0 + a.max_abs_coeff().max(b.max_abs_coeff());
    let mut d = a.clone();
    d.add_scaled(b, C64::new(-1.0, 0.0));
    d.terms.values().all(|c| c.norm() <= tol * scale)
}

/// Extracts the local generator of `Tr P(M)` from the periodic counterpart of `kind`.
pub fn local_generator(kind: ModelKind, poly: &Polynomial) -> Generator {
    let pk = kind.periodic();
    let deg = poly.degree().max(1);
    let w = bandwidth(pk);
    let reach = deg * w + 4;
    let mut nref = 4 * reach + 16;
    if nref % 2 == 1 {
        nref += 1;
    }
    let c = nref / 2;
    let mat = sym_matrix(pk, nref);
    let window = trace_window(&mat, poly, c - reach - 2..c + reach + 4);
    let mut by_anchor: BTreeMap<usize, SymPoly> = BTreeMap::new();
    let constant = poly.coeff(0);
    for (m, &coef) in &window.terms {
        let sites = m.sites();
        if sites.is_empty() {
            continue;
        }
        let (anchor, _) = cyclic_anchor(&sites, nref);
        if anchor < c || anchor > c + 3 {
            continue;
        }
        let rel = m.remap(|s| (s + nref - anchor) % nref);
        by_anchor.entry(anchor - c).or_default().add_term(rel, coef);
    }
    let g = |i: usize| by_anchor.get(&i).cloned().unwrap_or_default();
    let tol = 1e-12;
    if polys_close(&g(0), &g(1), tol) && polys_close(&g(0), &g(2), tol) {
        Generator { period: 1, reps: vec![g(0)], constant }
    } else {
        debug_assert!(polys_close(&g(0), &g(2), tol) && polys_close(&g(1), &g(3), tol));
        Generator { period: 2, reps: vec![g(0), g(1)], constant }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_coords(kind: ModelKind, n: usize, rng: &mut ChaCha8Rng) -> Coordinates {
        let (na, nb) = kind.coord_lengths(n);
        let a: Vec<C64> = (0..na)
            .map(|_| match kind.family() {
                Family::Jacobi => C64::new(rng.random_range(-1.5..1.5), 0.0),
                Family::Cmv => C64::from_polar(rng.random_range(0.0..0.95), rng.random_range(0.0..std::f64::consts::TAU)),
                _ => C64::new(rng.random_range(0.2..1.8), 0.0),
            })
            .collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0.2..1.8)).collect();
        Coordinates::new(a, b, n)
    }

    #[test]
    fn symbolic_matrix_matches_numeric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in ModelKind::ALL_BASE {
            for n in [4usize, 6, 8] {
                let co = random_coords(kind, n, &mut rng);
                let num = build_matrix(kind, &co).unwrap();
                let sym = sym_matrix(kind, n);
                for i in 0..n {
                    for j in 0..n {
                        let s = sym[i]
                            .iter()
                            .find(|(c, _)| *c == j)
                            .map(|(_, p)| p.eval_coords(kind, &co))
                            .unwrap_or_default();
                        assert!((s - num.get(i, j)).norm() < 1e-13, "{kind:?} n={n} ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn toda_quartic_generator() {
        let g = local_generator(ModelKind::TodaPeriodic, &Polynomial::parse("x^4").unwrap());
        assert_eq!(g.period, 1);
        // a⁴ + 4a²b² + 2b⁴ + 4 a_0 a_1 b_0² + 4 a_1² b_0² + 4 b_0² b_1²
        let ev = |a0: f64, b0: f64, a1: f64, b1: f64| {
            g.reps[0]
                .eval(&|s, at| {
                    C64::new(
                        match (s, at) {
                            (0, Atom::A) => a0,
                            (0, Atom::B) => b0,
                            (1, Atom::A) => a1,
                            (1, Atom::B) => b1,
                            _ => panic!("unexpected site"),
                        },
                        0.0,
                    )
                })
                .re
        };
        let (a0, b0, a1, b1): (f64, f64, f64, f64) = (0.3, 1.1, -0.7, 0.9);
        let expect = a0.powi(4) + 4.0 * a0 * a0 * b0 * b0 + 2.0 * b0.powi(4)
            + 4.0 * a0 * a1 * b0 * b0
            + 4.0 * a1 * a1 * b0 * b0
            + 4.0 * b0 * b0 * b1 * b1;
        assert!((ev(a0, b0, a1, b1) - expect).abs() < 1e-12);
    }

    #[test]
    fn cmv_generator_has_period_one() {
        let g = local_generator(ModelKind::CMVPeriodic, &Polynomial::parse("z^2").unwrap());
        assert_eq!(g.period, 1);
    }

    #[test]
    fn anchor_wraps() {
        assert_eq!(cyclic_anchor(&[0, 9], 10), (9, 2));
        assert_eq!(cyclic_anchor(&[3, 4, 6], 10), (3, 4));
    }
}
