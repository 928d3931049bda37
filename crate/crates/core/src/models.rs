//! Lax matrices of the periodic lattices and their non-periodic β-ensemble counterparts.
//!
//! Indices are 0-based (site `j` in 1-based notation is index `j-1`), and periodic
//! wrap-around is taken modulo the lattice size.

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    TodaPeriodic,
    TodaNonPeriodic,
    ExpTodaPeriodic,
    LaguerreNonPeriodic,
    VolterraPeriodic,
    AntisymNonPeriodic,
    CMVPeriodic,
    CMVNonPeriodic,
    INBAdditive(usize),
    INBMultiplicative(usize),
}

/// Structural family shared by a periodic model and its non-periodic counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Jacobi,
    PosDefJacobi,
    Antisym,
    Cmv,
    InbAdd(usize),
    InbMul(usize),
}

impl ModelKind {
    pub const ALL_BASE: [ModelKind; 10] = [
        ModelKind::TodaPeriodic,
        ModelKind::TodaNonPeriodic,
        ModelKind::ExpTodaPeriodic,
        ModelKind::LaguerreNonPeriodic,
        ModelKind::VolterraPeriodic,
        ModelKind::AntisymNonPeriodic,
        ModelKind::CMVPeriodic,
        ModelKind::CMVNonPeriodic,
        ModelKind::INBAdditive(2),
        ModelKind::INBMultiplicative(2),
    ];

    pub fn family(self) -> Family {
        match self {
            ModelKind::TodaPeriodic | ModelKind::TodaNonPeriodic => Family::Jacobi,
            ModelKind::ExpTodaPeriodic | ModelKind::LaguerreNonPeriodic => Family::PosDefJacobi,
            ModelKind::VolterraPeriodic | ModelKind::AntisymNonPeriodic => Family::Antisym,
            ModelKind::CMVPeriodic | ModelKind::CMVNonPeriodic => Family::Cmv,
            ModelKind::INBAdditive(r) => Family::InbAdd(r),
            ModelKind::INBMultiplicative(r) => Family::InbMul(r),
        }
    }

    pub fn is_periodic(self) -> bool {
        !matches!(
            self,
            ModelKind::TodaNonPeriodic
                | ModelKind::LaguerreNonPeriodic
                | ModelKind::AntisymNonPeriodic
                | ModelKind::CMVNonPeriodic
        )
    }

    /// The periodic model sharing this model's bulk structure.
    pub fn periodic(self) -> ModelKind {
        match self {
            ModelKind::TodaNonPeriodic => ModelKind::TodaPeriodic,
            ModelKind::LaguerreNonPeriodic => ModelKind::ExpTodaPeriodic,
            ModelKind::AntisymNonPeriodic => ModelKind::VolterraPeriodic,
            ModelKind::CMVNonPeriodic => ModelKind::CMVPeriodic,
            k => k,
        }
    }

    /// The non-periodic counterpart, where one exists.
    pub fn non_periodic(self) -> Option<ModelKind> {
        match self {
            ModelKind::TodaPeriodic | ModelKind::TodaNonPeriodic => Some(ModelKind::TodaNonPeriodic),
            ModelKind::ExpTodaPeriodic | ModelKind::LaguerreNonPeriodic => Some(ModelKind::LaguerreNonPeriodic),
            ModelKind::VolterraPeriodic | ModelKind::AntisymNonPeriodic => Some(ModelKind::AntisymNonPeriodic),
            ModelKind::CMVPeriodic | ModelKind::CMVNonPeriodic => Some(ModelKind::CMVNonPeriodic),
            _ => None,
        }
    }

    pub fn is_antisymmetric(self) -> bool {
        self.family() == Family::Antisym
    }

    pub fn is_cmv(self) -> bool {
        self.family() == Family::Cmv
    }

    /// Whether coordinates carry a second (`b`) vector.
    pub fn has_b(self) -> bool {
        matches!(self.family(), Family::Jacobi | Family::PosDefJacobi)
    }

    /// Length of the `a` and `b` vectors for lattice size `n`.
    pub fn coord_lengths(self, n: usize) -> (usize, usize) {
        match self {
            ModelKind::TodaPeriodic | ModelKind::ExpTodaPeriodic => (n, n),
            ModelKind::TodaNonPeriodic | ModelKind::LaguerreNonPeriodic => (n, n.saturating_sub(1)),
            ModelKind::AntisymNonPeriodic => (n.saturating_sub(1), 0),
            _ => (n, 0),
        }
    }

    pub fn name(self) -> String {
        match self {
            ModelKind::TodaPeriodic => "toda".into(),
            ModelKind::TodaNonPeriodic => "toda-np".into(),
            ModelKind::ExpTodaPeriodic => "exp-toda".into(),
            ModelKind::LaguerreNonPeriodic => "laguerre".into(),
            ModelKind::VolterraPeriodic => "volterra".into(),
            ModelKind::AntisymNonPeriodic => "antisym".into(),
            ModelKind::CMVPeriodic => "cmv".into(),
            ModelKind::CMVNonPeriodic => "cmv-np".into(),
            ModelKind::INBAdditive(r) => format!("inb-add:{r}"),
            ModelKind::INBMultiplicative(r) => format!("inb-mul:{r}"),
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        let s = s.trim().to_ascii_lowercase();
        let r_of = |rest: &str| -> Result<usize> {
            let r: usize = rest.parse().map_err(|_| Error::Config(format!("bad INB range in '{s}'")))?;
            if r == 0 {
                return Err(Error::Config("INB range r must be >= 1".into()));
            }
            Ok(r)
        };
        Ok(match s.as_str() {
            "toda" | "todaperiodic" => ModelKind::TodaPeriodic,
            "toda-np" | "todanonperiodic" | "real-beta" => ModelKind::TodaNonPeriodic,
            "exp-toda" | "exptoda" | "exptodaperiodic" => ModelKind::ExpTodaPeriodic,
            "laguerre" | "laguerrenonperiodic" => ModelKind::LaguerreNonPeriodic,
            "volterra" | "volterraperiodic" => ModelKind::VolterraPeriodic,
            "antisym" | "antisymnonperiodic" => ModelKind::AntisymNonPeriodic,
            "cmv" | "cmvperiodic" | "ablowitz-ladik" => ModelKind::CMVPeriodic,
            "cmv-np" | "cmvnonperiodic" | "circular" => ModelKind::CMVNonPeriodic,
            _ => {
                if let Some(rest) = s.strip_prefix("inb-add:") {
                    ModelKind::INBAdditive(r_of(rest)?)
                } else if let Some(rest) = s.strip_prefix("inb-mul:") {
                    ModelKind::INBMultiplicative(r_of(rest)?)
                } else {
                    return Err(Error::Config(format!("unknown model '{s}'")));
                }
            }
        })
    }
}

/// Coordinates of a lattice configuration.
///
/// * Toda: `a` real (stored with zero imaginary part), `b > 0`.
/// * ExpToda / Laguerre: `a > 0`, `b > 0`.
/// * Volterra: `a > 0` are the lattice variables; matrix entries are `√a`.
/// * Antisymmetric ensemble: `a > 0` are the matrix entries themselves.
/// * CMV: `a` in the open unit disk; the last coordinate of a circular-ensemble
///   configuration may sit on the unit circle.
/// * INB: `a > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    pub a: Vec<C64>,
    pub b: Vec<f64>,
    pub n: usize,
}

impl Coordinates {
    pub fn new(a: Vec<C64>, b: Vec<f64>, n: usize) -> Self {
        Self { a, b, n }
    }

    pub fn real(a: &[f64], b: &[f64], n: usize) -> Self {
        Self { a: a.iter().map(|&x| C64::new(x, 0.0)).collect(), b: b.to_vec(), n }
    }

    pub fn a_re(&self) -> Vec<f64> {
        self.a.iter().map(|z| z.re).collect()
    }

    /// Checks the model's domain invariants.
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let (na, nb) = kind.coord_lengths(self.n);
        if self.a.len() != na || self.b.len() != nb {
            return Err(Error::Domain(format!(
                "{}: expected |a|={na}, |b|={nb} for N={}, got |a|={}, |b|={}",
                kind.name(),
                self.n,
                self.a.len(),
                self.b.len()
            )));
        }
        if let ModelKind::INBAdditive(r) | ModelKind::INBMultiplicative(r) = kind {
            if self.n < r.max(1) + 1 {
                return Err(Error::Domain(format!("INB r={r} needs N > r, got N={}", self.n)));
            }
        }
        if kind.is_cmv() && self.n % 2 == 1 {
            return Err(Error::Domain(format!("CMV models need an even number of coefficients, got {}", self.n)));
        }
        let bad = |what: &str, j: usize, v: String| Err(Error::Domain(format!("{}: {what}[{j}] = {v}", kind.name())));
        for (j, z) in self.a.iter().enumerate() {
            if !z.re.is_finite() || !z.im.is_finite() {
                return bad("a", j, format!("{z}"));
            }
            match kind.family() {
                Family::Cmv => {
                    let last = j + 1 == self.a.len() && kind == ModelKind::CMVNonPeriodic;
                    let r = z.norm();
                    if r > 1.0 || (r >= 1.0 && !last) {
                        return bad("|a|", j, format!("{r}"));
                    }
                }
                Family::Jacobi => {
                    if z.im != 0.0 {
                        return bad("a", j, format!("{z}"));
                    }
                }
                _ => {
                    if z.im != 0.0 || z.re <= 0.0 {
                        return bad("a", j, format!("{z}"));
                    }
                }
            }
        }
        for (j, &v) in self.b.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return bad("b", j, format!("{v}"));
            }
        }
        Ok(())
    }
}

/// Banded Lax matrix: nonzero entries per row, sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct LaxMatrix {
    pub kind: ModelKind,
    pub dim: usize,
    pub periodic: bool,
    rows: Vec<Vec<(usize, C64)>>,
}

impl LaxMatrix {
    fn from_triplets(kind: ModelKind, dim: usize, trip: Vec<(usize, usize, C64)>) -> Self {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
        for (i, j, v) in trip {
            match rows[i].iter_mut().find(|(c, _)| *c == j) {
                Some(e) => e.1 += v,
                None => rows[i].push((j, v)),
            }
        }
        for r in &mut rows {
            r.retain(|(_, v)| *v != C64::new(0.0, 0.0));
            r.sort_by_key(|(c, _)| *c);
        }
        Self { kind, dim, periodic: kind.is_periodic(), rows }
    }

    pub fn rows(&self) -> &[Vec<(usize, C64)>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.rows[i]
            .binary_search_by_key(&j, |(c, _)| *c)
            .map(|p| self.rows[i][p].1)
            .unwrap_or_default()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] = v;
            }
        }
        m
    }

    fn sparse_mul(a: &[Vec<(usize, C64)>], b: &[Vec<(usize, C64)>], dim: usize) -> Vec<Vec<(usize, C64)>> {
        let mut acc = vec![C64::new(0.0, 0.0); dim];
        let mut touched = vec![false; dim];
        let mut out = Vec::with_capacity(dim);
        for row in a {
            let mut cols = Vec::new();
            for &(k, v) in row {
                for &(j, w) in &b[k] {
                    if !touched[j] {
                        touched[j] = true;
                        cols.push(j);
                    }
                    acc[j] += v * w;
                }
            }
            cols.sort_unstable();
            let r: Vec<(usize, C64)> = cols.iter().map(|&j| (j, acc[j])).collect();
            for &j in &cols {
                acc[j] = C64::new(0.0, 0.0);
                touched[j] = false;
            }
            out.push(r);
        }
        out
    }

    /// Rows of `M^m` (m ≥ 1).
    pub fn power_rows(&self, m: usize) -> Vec<Vec<(usize, C64)>> {
        let mut p = self.rows.clone();
        for _ in 1..m {
            p = Self::sparse_mul(&p, &self.rows, self.dim);
        }
        p
    }

    fn lookup(rows: &[Vec<(usize, C64)>], i: usize, j: usize) -> C64 {
        rows[i].binary_search_by_key(&j, |(c, _)| *c).map(|p| rows[i][p].1).unwrap_or_default()
    }

    /// `Tr(M^m)` by banded multiplication.
    pub fn trace_power(&self, m: usize) -> Result<C64> {
        if m == 0 {
            return Ok(C64::new(self.dim as f64, 0.0));
        }
        if m > 64 {
            return Err(Error::Domain(format!("trace power m={m} exceeds the cap of 64")));
        }
        let h = m.div_ceil(2);
        let left = self.power_rows(h);
        let right = if m - h == h { left.clone() } else if m - h == 0 { Vec::new() } else { self.power_rows(m - h) };
        let mut tr = C64::new(0.0, 0.0);
        for (i, row) in left.iter().enumerate() {
            if m == h {
                tr += Self::lookup(&left, i, i);
                continue;
            }
            for &(k, v) in row {
                tr += v * Self::lookup(&right, k, i);
            }
        }
        Ok(tr)
    }

    /// Diagonal of `M^m`.
    pub fn power_diagonal(&self, m: usize) -> Vec<C64> {
        if m == 0 {
            return vec![C64::new(1.0, 0.0); self.dim];
        }
        let p = self.power_rows(m);
        (0..self.dim).map(|i| Self::lookup(&p, i, i)).collect()
    }

    /// The cyclic lower part `L↓`: entries `(i, i-1)` and the corner `(0, N-1)`.
    pub fn lower_cyclic(&self) -> Vec<Vec<(usize, C64)>> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                let j = (i + n - 1) % n;
                let v = self.get(i, j);
                if v == C64::new(0.0, 0.0) || n < 2 { vec![] } else { vec![(j, v)] }
            })
            .collect()
    }

    /// Currents `J_j = (Lⁿ L↓)_{jj}` for all sites; `n = 0` gives the diagonal (`J⁰_j = a_j`).
    pub fn currents(&self, n: usize) -> Vec<C64> {
        if n == 0 {
            return (0..self.dim).map(|j| self.get(j, j)).collect();
        }
        let low = self.lower_cyclic();
        let p = self.power_rows(n);
        (0..self.dim)
            .map(|j| p[j].iter().map(|&(k, v)| v * Self::lookup(&low, k, j)).sum())
            .collect()
    }

    /// Full spectrum by a dense solve.
    pub fn eigenvalues(&self) -> Result<Vec<C64>> {
        if self.dim > 4096 {
            return Err(Error::Domain(format!("dense eigensolve limited to dim 4096, got {}", self.dim)));
        }
        let dense = self.to_dense();
        match self.kind.family() {
            Family::Jacobi | Family::PosDefJacobi => {
                let re = dense.map(|z| z.re);
                let e = SymmetricEigen::try_new(re, 1e-15, 10_000)
                    .ok_or_else(|| Error::Convergence("symmetric eigensolver".into()))?;
                Ok(e.eigenvalues.iter().map(|&x| C64::new(x, 0.0)).collect())
            }
            Family::Antisym => {
                // M = iH with H = -iM Hermitian
                let h = dense.map(|z| z * C64::new(0.0, -1.0));
                let e = SymmetricEigen::try_new(h, 1e-15, 10_000)
                    .ok_or_else(|| Error::Convergence("hermitian eigensolver".into()))?;
                Ok(e.eigenvalues.iter().map(|&x| C64::new(0.0, x)).collect())
            }
            _ => {
                let s = Schur::try_new(dense, 1e-15, 10_000).ok_or_else(|| Error::Convergence("complex Schur".into()))?;
                let (_, t) = s.unpack();
                Ok((0..self.dim).map(|i| t[(i, i)]).collect())
            }
        }
    }
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// CMV block `Ξ_j = [[ā, ρ], [ρ, -a]]`.
fn xi(a: C64) -> [[C64; 2]; 2] {
    let rho = c((1.0 - a.norm_sqr()).max(0.0).sqrt());
    [[a.conj(), rho], [rho, -a]]
}

/// Builds the Lax matrix of `kind` from `coords`.
pub fn build_matrix(kind: ModelKind, coords: &Coordinates) -> Result<LaxMatrix> {
    coords.validate(kind)?;
    let n = coords.n;
    let a = &coords.a;
    let b = &coords.b;
    let mut t: Vec<(usize, usize, C64)> = Vec::new();
    match kind {
        ModelKind::TodaPeriodic | ModelKind::TodaNonPeriodic => {
            for j in 0..n {
                t.push((j, j, a[j]));
            }
            for (j, &bj) in b.iter().enumerate() {
                let k = (j + 1) % n;
                if n == 1 {
                    t.push((0, 0, c(2.0 * bj)));
                } else {
                    t.push((j, k, c(bj)));
                    t.push((k, j, c(bj)));
                }
            }
        }
        ModelKind::ExpTodaPeriodic | ModelKind::LaguerreNonPeriodic => {
            // B: a on the diagonal, b_j at (j, j+1), periodic corner b_N at (N, 1)
            let mut bm: Vec<(usize, usize, f64)> = (0..n).map(|j| (j, j, a[j].re)).collect();
            for (j, &bj) in b.iter().enumerate() {
                if j + 1 < n {
                    bm.push((j, j + 1, bj));
                } else {
                    bm.push((n - 1, 0, bj));
                }
            }
            // (B Bᵀ)_{ik} = Σ_j B_{ij} B_{kj}
            for &(i, j, v) in &bm {
                for &(k, j2, w) in &bm {
                    if j == j2 {
                        t.push((i, k, c(v * w)));
                    }
                }
            }
        }
        ModelKind::VolterraPeriodic | ModelKind::AntisymNonPeriodic => {
            let vals: Vec<f64> = if kind == ModelKind::VolterraPeriodic {
                a.iter().map(|z| z.re.sqrt()).collect()
            } else {
                a.iter().map(|z| z.re).collect()
            };
            for (j, &x) in vals.iter().enumerate() {
                if j + 1 < n {
                    t.push((j, j + 1, c(x)));
                    t.push((j + 1, j, c(-x)));
                } else {
                    t.push((0, n - 1, c(-x)));
                    t.push((n - 1, 0, c(x)));
                }
            }
        }
        ModelKind::CMVPeriodic | ModelKind::CMVNonPeriodic => {
            let (l, m) = cmv_factors(kind, a);
            let lm = LaxMatrix::sparse_mul(&l, &m, n);
            for (i, r) in lm.into_iter().enumerate() {
                for (j, v) in r {
                    t.push((i, j, v));
                }
            }
        }
        ModelKind::INBAdditive(r) => {
            // entries (i+r, i) = a_{i+r}, (i, i+1) = 1
            for i in 0..n {
                t.push(((i + r) % n, i, a[(i + r) % n]));
                t.push((i, (i + 1) % n, c(1.0)));
            }
        }
        ModelKind::INBMultiplicative(r) => {
            // entries (i, i+1) = a_i, (i+r, i) = 1
            for i in 0..n {
                t.push((i, (i + 1) % n, a[i]));
                t.push(((i + r) % n, i, c(1.0)));
            }
        }
    }
    Ok(LaxMatrix::from_triplets(kind, n, t))
}

/// The two block-diagonal CMV factors as sparse rows: `(ℒ, ℳ)` or `(𝔏, 𝔐)`.
pub fn cmv_factors(kind: ModelKind, a: &[C64]) -> (Vec<Vec<(usize, C64)>>, Vec<Vec<(usize, C64)>>) {
    let n = a.len();
    let mut l: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n];
    let mut m: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n];
    let put = |mat: &mut Vec<Vec<(usize, C64)>>, i: usize, j: usize, v: C64| {
        mat[i].push((j, v));
    };
    if kind == ModelKind::CMVPeriodic {
        // ℒ = diag(Ξ_1, Ξ_3, …) on rows (0,1), (2,3), …
        for p in (0..n).step_by(2) {
            let x = xi(a[p]);
            put(&mut l, p, p, x[0][0]);
            put(&mut l, p, p + 1, x[0][1]);
            put(&mut l, p + 1, p, x[1][0]);
            put(&mut l, p + 1, p + 1, x[1][1]);
        }
        // ℳ = Ξ_2, Ξ_4, … on rows (1,2), (3,4), …, with Ξ_{2N} wrapping (n-1, 0)
        for p in (1..n).step_by(2) {
            let q = (p + 1) % n;
            let x = xi(a[p]);
            put(&mut m, p, p, x[0][0]);
            put(&mut m, p, q, x[0][1]);
            put(&mut m, q, p, x[1][0]);
            put(&mut m, q, q, x[1][1]);
        }
    } else {
        // 𝔏 = diag(Ξ_0 = (1), Ξ_2, …, Ξ_{2N} = (ā_{2N})), 𝔐 = diag(Ξ_1, Ξ_3, …)
        put(&mut l, 0, 0, c(1.0));
        for p in (1..n.saturating_sub(1)).step_by(2) {
            let x = xi(a[p]);
            put(&mut l, p, p, x[0][0]);
            put(&mut l, p, p + 1, x[0][1]);
            put(&mut l, p + 1, p, x[1][0]);
            put(&mut l, p + 1, p + 1, x[1][1]);
        }
        put(&mut l, n - 1, n - 1, a[n - 1].conj());
        for p in (0..n).step_by(2) {
            let x = xi(a[p]);
            put(&mut m, p, p, x[0][0]);
            put(&mut m, p, p + 1, x[0][1]);
            put(&mut m, p + 1, p, x[1][0]);
            put(&mut m, p + 1, p + 1, x[1][1]);
        }
    }
    for r in l.iter_mut().chain(m.iter_mut()) {
        r.sort_by_key(|(c, _)| *c);
    }
    (l, m)
}

/// Convenience: `Tr(M^m)` straight from coordinates.
pub fn trace_power(m: &LaxMatrix, power: usize) -> Result<C64> {
    m.trace_power(power)
}
