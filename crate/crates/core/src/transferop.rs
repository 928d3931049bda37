//! Nyström discretization of transfer operators and the free energies, CLT moments,
//! susceptibilities and current means derived from their dominant eigenvalues.
//!
//! Conventions: the kernel is `√(F(x)F(y)) e^{-W(x,y) - i Σ_r t_r h_r(x,y)}` on blocks of `k`
//! sites, `F^(1) = -(1/k) ln λ̃(α,t)`, `A = -i ∂_t F^(1)`, `σ² = ∂²_t F^(1)` and
//! `C_{m,n} = ∂_{t₁}∂_{t₂} F^(1)`, so that `A` is the mean and `σ²`, `C` are covariances per site.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::linalg::{self, KernelMatrix};
use crate::models::{Family, ModelKind};
use crate::poly::{linear_floor, quadratic_floor, Polynomial};
use crate::quadrature::{self, Rule};
use crate::seeds::{base_index, check_potential, draw_site, lcm, place_seed, raw_atom};
use crate::symbolic::{local_generator, Mono, SymPoly};

/// Relative tail mass dropped by the domain truncation.
pub const TAIL: f64 = 1e-12;
/// Largest circular index handled by the operator.
pub const MAX_K: usize = 8;
/// Grid-point cap of the refined grid used for the convergence flag.
pub const REFINE_LIMIT: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Re,
    Im,
}

/// `Tr Re L^s` or `Tr Im L^s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observable {
    pub s: usize,
    pub part: Part,
}

impl Observable {
    pub fn re(s: usize) -> Self {
        Observable { s, part: Part::Re }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorSettings {
    /// Quadrature nodes per real axis of a site.
    pub nodes_per_dim: usize,
    /// Finite-difference widths in `t`; Richardson extrapolation uses `δ` and `2δ`.
    pub deltas: [f64; 2],
    /// Overrides every unbounded-axis cutoff.
    pub truncation: Option<f64>,
    /// Grid-refinement tolerance for the `converged` flag.
    pub rel_tol: f64,
    pub check_convergence: bool,
    /// Treat CMV coefficients as real numbers in `(-1, 1)` (Schur flow / Jacobi ensemble).
    pub real_cmv: bool,
    /// Jacobi-ensemble exponents `(p, q)` of the extra factors `(1-a_j)^p (1+(-1)^j a_j)^q`
    /// on real CMV coefficients.
    pub jacobi: Option<[f64; 2]>,
    pub max_grid: usize,
    /// Absolute tolerance of the adaptive `β`-integral of the type-2 free energy.
    pub type2_tol: f64,
    /// Gauss–Legendre nodes for the `β`-integrals of `Ã`, `σ̃²` and current means.
    pub type2_nodes: usize,
}

impl Default for OperatorSettings {
    fn default() -> Self {
        OperatorSettings {
            nodes_per_dim: 40,
            deltas: [1e-2, 5e-3],
            truncation: None,
            rel_tol: 1e-6,
            check_convergence: true,
            real_cmv: false,
            jacobi: None,
            max_grid: 20_000,
            type2_tol: 1e-9,
            type2_nodes: 16,
        }
    }
}

/// Per-site integration domain of the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiteDomain {
    /// `(a, b) ∈ ℝ × ℝ₊` with weight `b^{2α-1}`.
    Toda,
    /// `(a, b) ∈ ℝ₊²` with weight `(ab)^{2α-1}`.
    ExpToda,
    /// `x ∈ ℝ₊` with weight `x^{2α-1}`.
    Volterra,
    /// `a ∈ 𝔻` with weight `(1-|a|²)^{α-1}`.
    Disk,
    /// `a ∈ (-1, 1)` with weight `(1-a²)^{α-1}`.
    Interval,
    /// `a ∈ ℝ₊` with weight `a^{α-1}`.
    HalfLine,
}

impl SiteDomain {
    pub fn for_kind(kind: ModelKind, real_cmv: bool) -> Result<Self> {
        Ok(match kind.family() {
            Family::Jacobi => SiteDomain::Toda,
            Family::PosDefJacobi => SiteDomain::ExpToda,
            Family::Antisym => SiteDomain::Volterra,
            Family::Cmv if real_cmv => SiteDomain::Interval,
            Family::Cmv => SiteDomain::Disk,
            Family::InbAdd(_) => SiteDomain::HalfLine,
            Family::InbMul(_) => {
                return Err(Error::UnsupportedPotential("no transfer operator for multiplicative INB lattices".into()))
            }
        })
    }

    /// Exponent `c̃` in `‖F(·,α)‖₁ ~ α^{-c̃}` as `α → 0`.
    pub fn small_alpha_exponent(self) -> f64 {
        match self {
            SiteDomain::ExpToda => 2.0,
            _ => 1.0,
        }
    }

    /// Exponent of the Gaussian reference factor `e^{-ref(x)}` per site.
    fn reference(self, c: f64, site: (C64, f64)) -> f64 {
        let (a, b) = (site.0.re, site.1);
        match self {
            SiteDomain::Toda => 0.5 * c * (a * a + 2.0 * b * b),
            SiteDomain::ExpToda => 0.5 * c * (a * a + b * b),
            SiteDomain::Volterra => c * a * a,
            _ => 0.0,
        }
    }
}

/// Homogeneous operator or the site-dependent one of a type-2 measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    Homogeneous,
    /// Block `j` of `m`: weights use the pressure `α(m-j)/m`.
    SiteDependent { j: usize, m: usize },
}

/// A transfer kernel ready for discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferKernel {
    pub kind: ModelKind,
    pub domain: SiteDomain,
    pub alpha: f64,
    pub t: Vec<f64>,
    pub k: usize,
    /// Seed of `Tr Re P̃(L)` on `2k` sites, `P̃` the reweighted potential.
    pub seed_w: SymPoly,
    /// Seeds of the observables, same circular index.
    pub seeds_h: Vec<SymPoly>,
    /// Reference constant `c` of the reweighting.
    pub reweight: f64,
    pub variant: Variant,
    pub truncation: Option<f64>,
    pub potential: Polynomial,
    pub jacobi: Option<[f64; 2]>,
    heuristic_cutoff: Option<f64>,
}

impl TransferKernel {
    pub fn effective_alpha(&self) -> f64 {
        match self.variant {
            Variant::Homogeneous => self.alpha,
            Variant::SiteDependent { j, m } => self.alpha * (m.saturating_sub(j)) as f64 / m.max(1) as f64,
        }
    }
}

/// Dense Nyström matrix with its normalization.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub matrix: KernelMatrix,
    /// `ln λ̃ = ln λ(matrix) + log_offset`.
    pub log_offset: f64,
    /// Nodes per axis of one site.
    pub grid: Vec<usize>,
    pub cutoffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    /// `λ̃(α, t)` including the weight normalization.
    pub lambda_dom: C64,
    pub log_lambda: C64,
    pub lambda2: C64,
    /// Eigenvector on the grid, unit norm, phase fixed by its largest entry.
    pub eigenfunction: Vec<C64>,
    /// `|λ̃| - |λ₂|` relative to `|λ̃|`.
    pub gap: f64,
    pub grid_size: Vec<usize>,
    pub cutoffs: Vec<f64>,
    pub converged: bool,
    /// All eigenfunction entries share one phase.
    pub positive: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CLTQuantities {
    #[serde(rename = "A")]
    pub a: f64,
    pub sigma2: f64,
    #[serde(rename = "A_tilde")]
    pub a_tilde: f64,
    pub sigma2_tilde: f64,
    pub free_energy_1: f64,
    pub free_energy_2: f64,
    pub a_imag: f64,
    pub sigma2_imag: f64,
    pub lambda: f64,
    pub gap: f64,
    pub grid: Vec<usize>,
    pub cutoffs: Vec<f64>,
    pub converged: bool,
}

/// Type-1 moments of one observable with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    #[serde(rename = "A")]
    pub a: f64,
    pub sigma2: f64,
    pub a_imag: f64,
    pub sigma2_imag: f64,
    pub spectrum: SpectralResult,
}

/// Both forms of the Toda current mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentMean {
    /// `∫₀^α C_{1,n}(s) ds`.
    pub integral_form: f64,
    /// `α ∂_{t₁}∂_{t₂} F^(2)`.
    pub free_energy_form: f64,
}

struct Assembled {
    scale: Vec<f64>,
    w: DMatrix<f64>,
    u: Vec<DMatrix<f64>>,
    log_offset: f64,
    grid: Vec<usize>,
    cutoffs: Vec<f64>,
}

impl Assembled {
    fn matrix(&self, t: &[f64]) -> KernelMatrix {
        let g = self.scale.len();
        let zero = t.iter().all(|&x| x == 0.0);
        if zero {
            KernelMatrix::Real(DMatrix::from_fn(g, g, |i, j| self.scale[i] * self.scale[j] * (-self.w[(i, j)]).exp()))
        } else {
            let mut re = DMatrix::<f64>::zeros(g, g);
            let mut im = DMatrix::<f64>::zeros(g, g);
            for j in 0..g {
                for i in 0..g {
                    let phase: f64 = t.iter().zip(&self.u).map(|(&tr, u)| tr * u[(i, j)]).sum();
                    let m = self.scale[i] * self.scale[j] * (-self.w[(i, j)]).exp();
                    let (sn, cs) = phase.sin_cos();
                    re[(i, j)] = m * cs;
                    im[(i, j)] = -m * sn;
                }
            }
            KernelMatrix::Complex(re, im)
        }
    }

    fn discretization(&self, t: &[f64]) -> Discretization {
        Discretization { matrix: self.matrix(t), log_offset: self.log_offset, grid: self.grid.clone(), cutoffs: self.cutoffs.clone() }
    }
}

/// Reweighting constant and reweighted potential.
fn reweight(domain: SiteDomain, p: &Polynomial) -> Result<(f64, Polynomial)> {
    let re: Vec<f64> = p.coeffs.iter().map(|z| z.re).collect();
    let nonnorm = || Error::NonNormalizable(format!("no quadratic floor for {}", p.to_expr()));
    match domain {
        SiteDomain::Toda => {
            let (c, _) = quadratic_floor(&re, 1.0).ok_or_else(nonnorm)?;
            Ok((c, p.add(&Polynomial::monomial(2, -0.5 * c))))
        }
        SiteDomain::ExpToda => {
            let (c, _) = linear_floor(&re, 1.0).ok_or_else(nonnorm)?;
            Ok((c, p.add(&Polynomial::monomial(1, -0.5 * c))))
        }
        SiteDomain::Volterra => {
            // Re P(iy) = Σ_{k even} (-1)^{k/2} p_k y^k
            let q: Vec<f64> =
                re.iter().enumerate().map(|(k, &v)| if k % 2 == 1 { 0.0 } else if (k / 2) % 2 == 0 { v } else { -v }).collect();
            let (c, _) = quadratic_floor(&q, 1.0).ok_or_else(nonnorm)?;
            Ok((c, p.add(&Polynomial::monomial(2, 0.5 * c))))
        }
        _ => Ok((0.0, p.clone())),
    }
}

fn gaussian_cutoff(rate: f64) -> f64 {
    erfc_inv(TAIL) / rate.sqrt()
}

/// Smallest `L` with `Q(α, rate·L²) ≤ TAIL`.
fn power_cutoff(alpha: f64, rate: f64) -> f64 {
    let mut hi = 1.0;
    while gamma_ur(alpha, hi) > TAIL {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_ur(alpha, mid) > TAIL {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (hi / rate).sqrt()
}

#[derive(Clone)]
struct SiteGrid {
    points: Vec<(C64, f64)>,
    weights: Vec<f64>,
    dims: Vec<usize>,
}

fn product(ra: &Rule, rb: &Rule, f: impl Fn(f64, f64) -> (C64, f64)) -> (Vec<(C64, f64)>, Vec<f64>) {
    let mut pts = Vec::with_capacity(ra.len() * rb.len());
    let mut ws = Vec::with_capacity(ra.len() * rb.len());
    for (&x, &wx) in ra.nodes.iter().zip(&ra.weights) {
        for (&y, &wy) in rb.nodes.iter().zip(&rb.weights) {
            pts.push(f(x, y));
            ws.push(wx * wy);
        }
    }
    (pts, ws)
}

/// The discretized problem without its `t`-dependence: seeds, grids and reweighting.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    pub kind: ModelKind,
    pub domain: SiteDomain,
    pub potential: Polynomial,
    pub observables: Vec<Observable>,
    pub k: usize,
    pub seed_w: SymPoly,
    pub seeds_h: Vec<SymPoly>,
    pub reweight: f64,
    pub settings: OperatorSettings,
    heuristic_cutoff: Option<f64>,
}

impl TransferOperator {
    pub fn new(kind: ModelKind, p: &Polynomial, observables: &[Observable], settings: OperatorSettings) -> Result<Self> {
        let pk = kind.periodic();
        check_potential(pk, p)?;
        let domain = SiteDomain::for_kind(pk, settings.real_cmv)?;
        if settings.real_cmv && !p.is_real() {
            return Err(Error::UnsupportedPotential("real CMV coefficients need a real potential".into()));
        }
        let (c, ptilde) = reweight(domain, p)?;
        let gen_w = local_generator(pk, &ptilde);
        let mut k = base_index(&gen_w);
        if let Some([p, q]) = settings.jacobi {
            if domain != SiteDomain::Interval {
                return Err(Error::Config("Jacobi exponents need real CMV coefficients".into()));
            }
            if !(p > 0.0 && q > 0.0) {
                return Err(Error::Config(format!("Jacobi exponents must be positive, got ({p}, {q})")));
            }
            // the factors alternate with the parity of the site
            k = lcm(k, 2);
        }
        let mut gens_h = Vec::new();
        for o in observables {
            if o.part == Part::Im && !pk.is_cmv() {
                return Err(Error::Domain(format!("Tr Im L^s is identically zero for {}", kind.name())));
            }
            if o.s == 0 {
                return Err(Error::Domain("observable power must be positive".into()));
            }
            let g = local_generator(pk, &Polynomial::monomial(o.s, 1.0));
            k = lcm(k, base_index(&g));
            gens_h.push(g);
        }
        if k > MAX_K {
            return Err(Error::IncompatibleSeeds { max_k: MAX_K, detail: format!("common circular index {k}") });
        }
        let clean = |mut s: SymPoly| {
            s.prune(1e-14 * (1.0 + s.max_abs_coeff()));
            s
        };
        let seed_w = clean(place_seed(&gen_w, k).real_part());
        let seeds_h: Vec<SymPoly> = gens_h
            .iter()
            .zip(observables)
            .map(|(g, o)| {
                let s = place_seed(g, k);
                clean(match o.part {
                    Part::Re => s.real_part(),
                    Part::Im => s.imag_part(),
                })
            })
            .collect();
        let mut op = TransferOperator {
            kind: pk,
            domain,
            potential: p.clone(),
            observables: observables.to_vec(),
            k,
            seed_w,
            seeds_h,
            reweight: c,
            settings,
            heuristic_cutoff: None,
        };
        if domain == SiteDomain::HalfLine {
            op.heuristic_cutoff = Some(op.scan_cutoff());
        }
        op.check_bounded()?;
        Ok(op)
    }

    fn site_eval(poly: &SymPoly, sites: &[(C64, f64)]) -> f64 {
        poly.eval(&|s, a| raw_atom(sites[s], a)).re
    }

    /// Cutoff where the per-site energy along the diagonal exceeds its minimum by 45.
    fn scan_cutoff(&self) -> f64 {
        let k = self.k;
        let e = |v: f64| Self::site_eval(&self.seed_w, &vec![(C64::new(v, 0.0), 0.0); 2 * k]) / k as f64;
        let mut v = 1e-3;
        let mut emin = e(0.0);
        while v < 1e4 {
            let ev = e(v);
            emin = emin.min(ev);
            if ev - emin >= 45.0 {
                return v;
            }
            v *= 1.05;
        }
        v
    }

    /// Random scan of `|h|³ e^{-W}` at growing scales.
    fn check_bounded(&self) -> Result<()> {
        if matches!(self.domain, SiteDomain::Disk | SiteDomain::Interval) {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xb0b);
        let sites = 2 * self.k;
        let scales = [0.5, 1.0, 2.0, 8.0, 16.0];
        let mut maxima = vec![f64::NEG_INFINITY; scales.len()];
        for (si, &sc) in scales.iter().enumerate() {
            for _ in 0..2000 {
                let x: Vec<(C64, f64)> = (0..sites).map(|_| draw_site(self.kind, &mut rng, sc)).collect();
                let w = Self::site_eval(&self.seed_w, &x) + x.iter().map(|&s| 0.5 * self.domain.reference(self.reweight, s)).sum::<f64>();
                for h in &self.seeds_h {
                    let u = Self::site_eval(h, &x).abs().max(1e-300);
                    maxima[si] = maxima[si].max(3.0 * u.ln() - w);
                }
            }
        }
        let small = maxima[..3].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let big = maxima[3..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !big.is_finite() && big > 0.0 || big > small + 10f64.ln() {
            return Err(Error::UnboundedWeight(format!("log max grows from {small:.3} to {big:.3}")));
        }
        Ok(())
    }

    pub fn kernel(&self, alpha: f64, t: &[f64], variant: Variant) -> TransferKernel {
        TransferKernel {
            kind: self.kind,
            domain: self.domain,
            alpha,
            t: t.to_vec(),
            k: self.k,
            seed_w: self.seed_w.clone(),
            seeds_h: self.seeds_h.clone(),
            reweight: self.reweight,
            variant,
            truncation: self.settings.truncation,
            potential: self.potential.clone(),
            jacobi: self.settings.jacobi,
            heuristic_cutoff: self.heuristic_cutoff,
        }
    }

    /// Number of `ln α` singularities of `ln λ̃(α)` as `α → 0`, per block.
    fn singular_count(&self) -> f64 {
        match self.settings.jacobi {
            // only odd sites keep an exponent α - 1 at an endpoint
            Some(_) => (self.k / 2) as f64,
            None => self.k as f64 * self.domain.small_alpha_exponent(),
        }
    }

    /// Cutoffs of the unbounded axes for pressure `alpha`.
    pub fn cutoffs(&self, alpha: f64) -> Vec<f64> {
        cutoffs(self.domain, alpha, self.reweight, &self.potential, self.settings.truncation, self.heuristic_cutoff)
    }

    fn assemble(&self, alpha: f64, cut_alpha: f64, n: usize) -> Result<Assembled> {
        assemble(
            self.domain,
            self.k,
            &self.seed_w,
            &self.seeds_h,
            self.reweight,
            alpha,
            &self.cutoffs(cut_alpha),
            n,
            self.settings.max_grid,
            self.settings.jacobi,
        )
    }

    fn solve_assembled(&self, asm: &Assembled, t: &[f64], start: Option<&DVector<C64>>) -> Result<(SpectralResult, DVector<C64>)> {
        spectrum_with_vector(&asm.discretization(t), start)
    }

    /// `λ̃(α, 0)` with the grid-refinement flag.
    pub fn spectrum(&self, alpha: f64) -> Result<SpectralResult> {
        let n = self.settings.nodes_per_dim;
        let asm = self.assemble(alpha, alpha, n)?;
        let (mut res, _) = self.solve_assembled(&asm, &vec![0.0; self.observables.len()], None)?;
        res.converged = !self.settings.check_convergence || self.refinement_ok(alpha, alpha, res.log_lambda.re)?;
        Ok(res)
    }

    fn refinement_ok(&self, alpha: f64, cut_alpha: f64, log_lambda: f64) -> Result<bool> {
        let n = self.settings.nodes_per_dim;
        let dims = self.site_dims() * self.k as u32;
        // doubled grid, capped so the refined matrix stays below REFINE_LIMIT points
        let mut m = 2 * n;
        while m > n + 1 && (m as f64).powi(dims as i32) > REFINE_LIMIT as f64 {
            m -= 1;
        }
        if m <= n {
            return Ok(true);
        }
        let r = self.log_lambda_t0(alpha, cut_alpha, m)?;
        let rel = ((r - log_lambda).exp() - 1.0).abs();
        Ok(rel < self.settings.rel_tol)
    }

    fn site_dims(&self) -> u32 {
        match self.domain {
            SiteDomain::Toda | SiteDomain::ExpToda | SiteDomain::Disk => 2,
            _ => 1,
        }
    }

    /// `ln λ̃(α, 0)` with the kernel built in place and no observables.
    fn log_lambda_t0(&self, alpha: f64, cut_alpha: f64, n: usize) -> Result<f64> {
        let asm = assemble(
            self.domain,
            self.k,
            &self.seed_w,
            &[],
            self.reweight,
            alpha,
            &self.cutoffs(cut_alpha),
            n,
            self.settings.max_grid.max(REFINE_LIMIT),
            self.settings.jacobi,
        )?;
        let Assembled { scale, mut w, log_offset, grid, cutoffs, .. } = asm;
        let g = scale.len();
        for (idx, x) in w.iter_mut().enumerate() {
            let (i, j) = (idx % g, idx / g);
            *x = scale[i] * scale[j] * (-*x).exp();
        }
        let d = Discretization { matrix: KernelMatrix::Real(w), log_offset, grid, cutoffs };
        Ok(spectrum_with_vector(&d, None)?.0.log_lambda.re)
    }

    /// `ln λ̃` at `t = 0` and at every stencil point, reusing one grid.
    fn stencil(&self, alpha: f64, cut_alpha: f64, ts: &[Vec<f64>]) -> Result<(SpectralResult, Vec<C64>)> {
        let asm = self.assemble(alpha, cut_alpha, self.settings.nodes_per_dim)?;
        let (r0, v0) = self.solve_assembled(&asm, &vec![0.0; self.observables.len()], None)?;
        let logs: Result<Vec<C64>> = ts
            .par_iter()
            .map(|t| {
                let (r, _) = self.solve_assembled(&asm, t, Some(&v0))?;
                if r.lambda_dom.norm() > r0.lambda_dom.norm() * (1.0 + 1e-9) {
                    return Err(Error::Convergence(format!("|λ(t)| exceeds λ(0) at t = {t:?}")));
                }
                Ok(r.log_lambda)
            })
            .collect();
        Ok((r0, logs?))
    }

    fn deltas(&self) -> [f64; 2] {
        let [a, b] = self.settings.deltas;
        [a.max(b), a.min(b)]
    }

    /// Type-1 `A` and `σ²` of observable `which` at pressure `alpha`.
    pub fn moments(&self, alpha: f64, which: usize) -> Result<Moments> {
        self.moments_at(alpha, alpha, which, true)
    }

    fn moments_at(&self, alpha: f64, cut_alpha: f64, which: usize, check: bool) -> Result<Moments> {
        let nobs = self.observables.len();
        let dels = self.deltas();
        let widths = width_set(&dels);
        let ts: Vec<Vec<f64>> = widths
            .iter()
            .flat_map(|&d| [d, -d])
            .map(|x| {
                let mut t = vec![0.0; nobs];
                t[which] = x;
                t
            })
            .collect();
        let (mut r0, logs) = self.stencil(alpha, cut_alpha, &ts)?;
        let f = |x: f64| -> C64 {
            if x == 0.0 {
                return r0.log_lambda;
            }
            let i = ts.iter().position(|t| t[which] == x).expect("stencil point");
            logs[i]
        };
        let kf = self.k as f64;
        let d1 = |d: f64| (f(d) - f(-d)) / (2.0 * d);
        let d2 = |d: f64| (f(d) - f(0.0) * 2.0 + f(-d)) / (d * d);
        let rich = |g: &dyn Fn(f64) -> C64, d: f64| (g(d) * 4.0 - g(2.0 * d)) / 3.0;
        let a_of = |d: f64| rich(&d1, d) * C64::new(0.0, 1.0 / kf);
        let s_of = |d: f64| rich(&d2, d) * (-1.0 / kf);
        let (a1, a2) = (a_of(dels[0]), a_of(dels[1]));
        let (s1, s2) = (s_of(dels[0]), s_of(dels[1]));
        stable("A", a1.re, a2.re)?;
        stable("sigma2", s1.re, s2.re)?;
        if a2.im.abs() > 1e-6 || s2.im.abs() > 1e-6 {
            return Err(Error::DerivativeUnstable(format!("imaginary residuals {:e}, {:e}", a2.im, s2.im)));
        }
        if check {
            r0.converged = !self.settings.check_convergence || self.refinement_ok(alpha, cut_alpha, r0.log_lambda.re)?;
        }
        Ok(Moments { a: a2.re, sigma2: s2.re, a_imag: a2.im, sigma2_imag: s2.im, spectrum: r0 })
    }

    /// `C_{m,n}` between observables `i` and `j`, and the `t = 0` spectrum.
    pub fn mixed(&self, alpha: f64, i: usize, j: usize) -> Result<(f64, SpectralResult)> {
        self.mixed_at(alpha, alpha, i, j)
    }

    fn mixed_at(&self, alpha: f64, cut_alpha: f64, i: usize, j: usize) -> Result<(f64, SpectralResult)> {
        let dels = self.deltas();
        let ts = mixed_points(self.observables.len(), i, j, &width_set(&dels));
        let (r0, logs) = self.stencil(alpha, cut_alpha, &ts)?;
        let vals: Vec<f64> = logs.iter().map(|l| -l.re / self.k as f64).collect();
        let c = mixed_from(&ts, &vals, &dels)?;
        Ok((c, r0))
    }

    /// `g(β) = ln λ̃(β, 0) + k c̃ ln β`, smooth down to `β = 0`.
    fn log_lambda_regular(&self, beta: f64, cut_alpha: f64) -> Result<f64> {
        let l = self.log_lambda_t0(beta, cut_alpha, self.settings.nodes_per_dim)?;
        Ok(l + self.singular_count() * beta.ln())
    }

    pub fn free_energy_1(&self, alpha: f64) -> Result<(f64, SpectralResult)> {
        let r = self.spectrum(alpha)?;
        Ok((-r.log_lambda.re / self.k as f64, r))
    }

    /// `-(1/k) ∫₀¹ ln λ̃(αx, 0) dx` with the nodes of the final adaptive partition.
    pub fn free_energy_2(&self, alpha: f64) -> Result<(f64, Rule)> {
        let mut g = |x: f64| self.log_lambda_regular(alpha * x, alpha);
        let (gi, rule) = quadrature::adaptive_gk15(&mut g, 0.0, 1.0, self.settings.type2_tol, 3000)?;
        let ct = self.singular_count();
        // ∫₀¹ ln(αx) dx = ln α - 1
        let f2 = -(gi - ct * (alpha.ln() - 1.0)) / self.k as f64;
        Ok((f2, rule))
    }

    /// Grid-refinement check of the type-2 integrand at `x = 1` and `x = 1/16`.
    pub fn free_energy_2_converged(&self, alpha: f64) -> Result<bool> {
        if !self.settings.check_convergence {
            return Ok(true);
        }
        for x in [1.0, 1.0 / 16.0] {
            let beta = alpha * x;
            let l = self.log_lambda_t0(beta, alpha, self.settings.nodes_per_dim)?;
            if !self.refinement_ok(beta, alpha, l)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `Ã = ∫₀¹ A(αx) dx`, `σ̃² = ∫₀¹ σ²(αx) dx`.
    pub fn moments_type2(&self, alpha: f64, which: usize) -> Result<(f64, f64)> {
        let rule = quadrature::gauss_legendre(self.settings.type2_nodes, 0.0, 1.0)?;
        let vals: Result<Vec<(f64, f64)>> = rule
            .nodes
            .iter()
            .map(|&x| self.moments_at(alpha * x, alpha, which, false).map(|m| (m.a, m.sigma2)))
            .collect();
        let vals = vals?;
        let at: f64 = vals.iter().zip(&rule.weights).map(|(v, w)| w * v.0).sum();
        let st: f64 = vals.iter().zip(&rule.weights).map(|(v, w)| w * v.1).sum();
        Ok((at, st))
    }

    /// `∫₀^α C_{i,j}(s) ds` by Gauss–Legendre in `s`.
    pub fn mixed_integral(&self, alpha: f64, i: usize, j: usize) -> Result<f64> {
        let rule = quadrature::gauss_legendre(self.settings.type2_nodes, 0.0, alpha)?;
        let mut total = 0.0;
        for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
            total += w * self.mixed_at(s, alpha, i, j)?.0;
        }
        Ok(total)
    }

    /// `∂_{t_i}∂_{t_j} F^(2)(α, t)` from finite differences of the type-2 free energy.
    pub fn mixed_type2(&self, alpha: f64, i: usize, j: usize) -> Result<f64> {
        let (_, rule) = self.free_energy_2(alpha)?;
        let dels = self.deltas();
        let ts = mixed_points(self.observables.len(), i, j, &width_set(&dels));
        let mut acc = vec![0.0; ts.len()];
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let (r0, logs) = self.stencil(alpha * x, alpha, &ts)?;
            for (a, l) in acc.iter_mut().zip(&logs) {
                *a += w * -(l.re - r0.log_lambda.re) / self.k as f64;
            }
        }
        mixed_from(&ts, &acc, &dels)
    }
}

fn stable(name: &str, r1: f64, r2: f64) -> Result<()> {
    if (r1 - r2).abs() > 1e-3 * r1.abs().max(r2.abs()).max(1e-4) {
        return Err(Error::DerivativeUnstable(format!("{name}: {r1} vs {r2} across stencil widths")));
    }
    Ok(())
}

/// `{δ, 2δ}` for every width, sorted and deduplicated.
fn width_set(dels: &[f64; 2]) -> Vec<f64> {
    let mut w: Vec<f64> = dels.iter().flat_map(|&d| [d, 2.0 * d]).collect();
    w.sort_by(f64::total_cmp);
    w.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    w
}

fn mixed_points(nobs: usize, i: usize, j: usize, widths: &[f64]) -> Vec<Vec<f64>> {
    let mut ts = Vec::new();
    for &d in widths {
        for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let mut t = vec![0.0; nobs];
            t[i] += si * d;
            t[j] += sj * d;
            ts.push(t);
        }
    }
    ts
}

/// Richardson-extrapolated mixed difference of `F` tabulated on `mixed_points`.
fn mixed_from(ts: &[Vec<f64>], vals: &[f64], dels: &[f64; 2]) -> Result<f64> {
    let widths = width_set(dels);
    let nw = widths.len();
    let at = |d: f64| -> f64 {
        let w = widths.iter().position(|&x| (x - d).abs() < 1e-15).expect("width");
        let base = 4 * w;
        debug_assert!(base + 3 < ts.len() && nw * 4 == ts.len());
        (vals[base] - vals[base + 1] - vals[base + 2] + vals[base + 3]) / (4.0 * d * d)
    };
    let rich = |d: f64| (4.0 * at(d) - at(2.0 * d)) / 3.0;
    let (r1, r2) = (rich(dels[0]), rich(dels[1]));
    stable("C", r1, r2)?;
    Ok(r2)
}

/// Margin in nats below the peak of the single-site axis density.
const AXIS_MARGIN: f64 = 40.0;

/// Largest `v` where `e ln v - E(v)` is within `AXIS_MARGIN` of its peak on `(0, 1e4]`.
fn energy_cutoff(e: f64, energy: impl Fn(f64) -> f64) -> f64 {
    let e = e.max(0.0);
    let f = |v: f64| if e == 0.0 { -energy(v) } else { e * v.ln() - energy(v) };
    let grid: Vec<f64> = (0..=1400).map(|i| 1e-2 * 1.01f64.powi(i)).collect();
    let vals: Vec<f64> = grid.iter().map(|&v| f(v)).collect();
    let peak = vals.iter().copied().filter(|x| x.is_finite()).fold(f(0.0).max(f64::NEG_INFINITY), f64::max);
    let last = vals.iter().rposition(|&x| x >= peak - AXIS_MARGIN).unwrap_or(0);
    grid[(last + 1).min(grid.len() - 1)]
}

/// Cutoffs from the potential restricted to one coordinate, where the others vanish.
fn axis_cutoffs(domain: SiteDomain, alpha: f64, p: &Polynomial) -> Vec<f64> {
    let pr = |x: f64| p.eval(C64::new(x, 0.0)).re;
    let e2 = 2.0 * alpha - 1.0;
    match domain {
        SiteDomain::Toda => vec![energy_cutoff(0.0, |v| pr(v).min(pr(-v))), energy_cutoff(e2, |v| pr(v) + pr(-v))],
        SiteDomain::ExpToda => {
            let l = energy_cutoff(e2, |v| pr(v * v));
            vec![l, l]
        }
        // a single entry x gives eigenvalues ±ix
        SiteDomain::Volterra => vec![energy_cutoff(e2, |v| 2.0 * p.eval(C64::new(0.0, v)).re)],
        _ => vec![],
    }
}

fn cutoffs(domain: SiteDomain, alpha: f64, c: f64, p: &Polynomial, over: Option<f64>, heuristic: Option<f64>) -> Vec<f64> {
    let certified = match domain {
        SiteDomain::Toda => vec![gaussian_cutoff(c), power_cutoff(alpha, 2.0 * c)],
        SiteDomain::ExpToda => {
            let l = power_cutoff(alpha, c);
            vec![l, l]
        }
        SiteDomain::Volterra => vec![power_cutoff(alpha, 2.0 * c)],
        SiteDomain::HalfLine => vec![heuristic.unwrap_or(40.0)],
        SiteDomain::Disk | SiteDomain::Interval => vec![],
    };
    if let Some(l) = over {
        return vec![l; certified.len()];
    }
    let axis = axis_cutoffs(domain, alpha, p);
    certified.iter().enumerate().map(|(i, &l)| axis.get(i).map_or(l, |&a| a.min(l))).collect()
}

/// Site rule; `extra` raises the exponents of `(1-a)` and `(1+a)` on the interval.
fn site_grid(domain: SiteDomain, alpha: f64, c: f64, cut: &[f64], n: usize, extra: [f64; 2]) -> Result<SiteGrid> {
    let e2 = 2.0 * alpha - 1.0;
    let (points, mut weights, dims) = match domain {
        SiteDomain::Toda => {
            let ra = quadrature::gauss_legendre(n, -cut[0], cut[0])?;
            let rb = quadrature::gauss_power(n, e2, cut[1])?;
            let (p, w) = product(&ra, &rb, |a, b| (C64::new(a, 0.0), b));
            (p, w, vec![n, n])
        }
        SiteDomain::ExpToda => {
            let ra = quadrature::gauss_power(n, e2, cut[0])?;
            let rb = quadrature::gauss_power(n, e2, cut[1])?;
            let (p, w) = product(&ra, &rb, |a, b| (C64::new(a, 0.0), b));
            (p, w, vec![n, n])
        }
        SiteDomain::Volterra => {
            let r = quadrature::gauss_power(n, e2, cut[0])?;
            (r.nodes.iter().map(|&x| (C64::new(x, 0.0), 0.0)).collect(), r.weights, vec![n])
        }
        SiteDomain::HalfLine => {
            let r = quadrature::gauss_power(n, alpha - 1.0, cut[0])?;
            (r.nodes.iter().map(|&x| (C64::new(x, 0.0), 0.0)).collect(), r.weights, vec![n])
        }
        SiteDomain::Interval => {
            let r = quadrature::gauss_jacobi(n, alpha - 1.0 + extra[0], alpha - 1.0 + extra[1])?;
            (r.nodes.iter().map(|&x| (C64::new(x, 0.0), 0.0)).collect(), r.weights, vec![n])
        }
        SiteDomain::Disk => {
            let ru = quadrature::gauss_one_minus_power(n, alpha - 1.0)?;
            let rt = quadrature::trapezoid_circle(n);
            let (p, w) = product(&ru, &rt, |u, th| (C64::from_polar(u.sqrt(), th), 0.0));
            // d²a = ½ du dθ
            (p, w.into_iter().map(|x| 0.5 * x).collect(), vec![n, n])
        }
    };
    for (w, &p) in weights.iter_mut().zip(&points) {
        *w *= (-domain.reference(c, p)).exp();
    }
    Ok(SiteGrid { points, weights, dims })
}

/// Values of a product of atom powers on every block point.
fn mono_values(m: &Mono, blocks: &[Vec<(C64, f64)>]) -> Vec<C64> {
    blocks
        .iter()
        .map(|bl| {
            m.0.iter().fold(C64::new(1.0, 0.0), |acc, &(s, a, p)| acc * raw_atom(bl[s], a).powu(p))
        })
        .collect()
}

/// `M_{ij} = Re f(block_i, block_j)` for a seed `f` on `2k` sites, as a low-rank product.
fn pair_matrix(poly: &SymPoly, k: usize, blocks: &[Vec<(C64, f64)>]) -> DMatrix<f64> {
    let g = blocks.len();
    let mut xs: BTreeMap<Mono, usize> = BTreeMap::new();
    let mut ys: BTreeMap<Mono, usize> = BTreeMap::new();
    let mut entries = Vec::new();
    for (m, &c) in &poly.terms {
        let xm = Mono(m.0.iter().filter(|f| f.0 < k).copied().collect());
        let ym = Mono(m.0.iter().filter(|f| f.0 >= k).map(|&(s, a, p)| (s - k, a, p)).collect());
        let nx = xs.len();
        let ix = *xs.entry(xm).or_insert(nx);
        let ny = ys.len();
        let iy = *ys.entry(ym).or_insert(ny);
        entries.push((ix, iy, c));
    }
    if entries.is_empty() {
        return DMatrix::zeros(g, g);
    }
    let (nx, ny) = (xs.len(), ys.len());
    let mut xv = DMatrix::<C64>::zeros(g, nx);
    for (m, &i) in &xs {
        for (r, v) in mono_values(m, blocks).into_iter().enumerate() {
            xv[(r, i)] = v;
        }
    }
    let mut yv = DMatrix::<C64>::zeros(g, ny);
    for (m, &i) in &ys {
        for (r, v) in mono_values(m, blocks).into_iter().enumerate() {
            yv[(r, i)] = v;
        }
    }
    let mut cm = DMatrix::<C64>::zeros(nx, ny);
    for (ix, iy, c) in entries {
        cm[(ix, iy)] += c;
    }
    let real = xv.iter().chain(yv.iter()).chain(cm.iter()).all(|z| z.im == 0.0);
    if real {
        let xr = xv.map(|z| z.re);
        let yr = yv.map(|z| z.re);
        let cr = cm.map(|z| z.re);
        (xr * cr) * yr.transpose()
    } else {
        ((xv * cm) * yv.transpose()).map(|z| z.re)
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    domain: SiteDomain,
    k: usize,
    seed_w: &SymPoly,
    seeds_h: &[SymPoly],
    c: f64,
    alpha: f64,
    cut: &[f64],
    n: usize,
    max_grid: usize,
    jacobi: Option<[f64; 2]>,
) -> Result<Assembled> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("pressure must be positive, got {alpha}")));
    }
    let mut sites: Vec<SiteGrid> = match jacobi {
        None => {
            vec![site_grid(domain, alpha, c, cut, n, [0.0, 0.0])?; k]
        }
        // position i holds the 1-based site i + 1: (1-a)^{p+q} when odd, (1-a)^p (1+a)^q when even
        Some([p, q]) => (0..k)
            .map(|i| site_grid(domain, alpha, c, cut, n, if i % 2 == 0 { [p + q, 0.0] } else { [p, q] }))
            .collect::<Result<_>>()?,
    };
    let gs = sites[0].points.len();
    let total = (gs as f64).powi(k as i32);
    if total > max_grid as f64 {
        return Err(Error::GridTooLarge { points: total.min(usize::MAX as f64) as usize, limit: max_grid });
    }
    let g = gs.pow(k as u32);
    let masses: Vec<f64> = sites.iter().map(|s| s.weights.iter().sum()).collect();
    let mut blocks = Vec::with_capacity(g);
    let mut scale = Vec::with_capacity(g);
    for idx in 0..g {
        let mut rem = idx;
        let mut bl = Vec::with_capacity(k);
        let mut w = 1.0;
        for (site, mass) in sites.iter().zip(&masses) {
            let s = rem % gs;
            rem /= gs;
            bl.push(site.points[s]);
            w *= site.weights[s] / mass;
        }
        blocks.push(bl);
        scale.push(w.sqrt());
    }
    let mut w = pair_matrix(seed_w, k, &blocks);
    let shift = w.iter().copied().fold(f64::INFINITY, f64::min);
    w.iter_mut().for_each(|x| *x -= shift);
    let u = seeds_h.iter().map(|h| pair_matrix(h, k, &blocks)).collect();
    let log_mass: f64 = masses.iter().map(|m| m.ln()).sum();
    let grid = sites.swap_remove(0).dims;
    Ok(Assembled { scale, w, u, log_offset: log_mass - shift, grid, cutoffs: cut.to_vec() })
}

/// Builds the operator for `Tr Re P(L)` and one observable at `(α, t)`.
pub fn build_kernel(
    kind: ModelKind,
    p: &Polynomial,
    s: usize,
    part: Part,
    alpha: f64,
    t: f64,
    settings: &OperatorSettings,
) -> Result<TransferKernel> {
    let op = TransferOperator::new(kind, p, &[Observable { s, part }], settings.clone())?;
    Ok(op.kernel(alpha, &[t], Variant::Homogeneous))
}

/// Symmetrized Nyström matrix `√(w_i w_j) k(x_i, x_j)`.
pub fn discretize(kernel: &TransferKernel, nodes_per_dim: usize) -> Result<Discretization> {
    let alpha = kernel.effective_alpha();
    let cut = cutoffs(kernel.domain, kernel.alpha, kernel.reweight, &kernel.potential, kernel.truncation, kernel.heuristic_cutoff);
    let asm = assemble(
        kernel.domain,
        kernel.k,
        &kernel.seed_w,
        &kernel.seeds_h,
        kernel.reweight,
        alpha,
        &cut,
        nodes_per_dim,
        OperatorSettings::default().max_grid,
        kernel.jacobi,
    )?;
    Ok(asm.discretization(&kernel.t))
}

fn spectrum_with_vector(d: &Discretization, start: Option<&DVector<C64>>) -> Result<(SpectralResult, DVector<C64>)> {
    let pair = linalg::dominant(&d.matrix, start)?;
    let l1 = pair.lambda1;
    if l1.norm() == 0.0 || !l1.re.is_finite() {
        return Err(Error::Convergence("vanishing dominant eigenvalue".into()));
    }
    let gap = (l1.norm() - pair.lambda2.norm()) / l1.norm();
    if gap < 1e-8 {
        return Err(Error::GapCollapse { ratio: pair.lambda2.norm() / l1.norm() });
    }
    let mut v = pair.vector.clone();
    let (imax, _) = v.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).expect("non-empty");
    let ph = v[imax] / v[imax].norm();
    v.iter_mut().for_each(|z| *z /= ph);
    let vmax = v[imax].norm();
    let positive = v.iter().all(|z| z.re > -1e-10 * vmax && z.im.abs() < 1e-8 * vmax);
    let log_lambda = l1.ln() + d.log_offset;
    let res = SpectralResult {
        lambda_dom: log_lambda.exp(),
        log_lambda,
        lambda2: pair.lambda2 * d.log_offset.exp(),
        eigenfunction: v.iter().copied().collect(),
        gap,
        grid_size: d.grid.clone(),
        cutoffs: d.cutoffs.clone(),
        converged: false,
        positive,
        residual: pair.residual / l1.norm(),
    };
    Ok((res, v))
}

/// Top two eigenvalues and dominant eigenfunction; `converged` is left `false`.
pub fn dominant_spectrum(d: &Discretization) -> Result<SpectralResult> {
    spectrum_with_vector(d, None).map(|r| r.0)
}

/// `F^(1)(α, Re P) = -(1/k) ln λ̃(α, 0)`.
pub fn free_energy_type1(kind: ModelKind, p: &Polynomial, alpha: f64, settings: &OperatorSettings) -> Result<f64> {
    TransferOperator::new(kind, p, &[], settings.clone())?.free_energy_1(alpha).map(|r| r.0)
}

/// `F^(2)(α, Re P) = -(1/k) ∫₀¹ ln λ̃(αx, 0) dx`.
pub fn free_energy_type2(kind: ModelKind, p: &Polynomial, alpha: f64, settings: &OperatorSettings) -> Result<f64> {
    TransferOperator::new(kind, p, &[], settings.clone())?.free_energy_2(alpha).map(|r| r.0)
}

/// All type-1 and type-2 CLT quantities of `Tr (Re|Im) L^s`.
pub fn clt_mean_and_variance(
    kind: ModelKind,
    p: &Polynomial,
    s: usize,
    part: Part,
    alpha: f64,
    settings: &OperatorSettings,
) -> Result<CLTQuantities> {
    let op = TransferOperator::new(kind, p, &[Observable { s, part }], settings.clone())?;
    let m = op.moments(alpha, 0)?;
    let (a_tilde, sigma2_tilde) = op.moments_type2(alpha, 0)?;
    let (f2, _) = op.free_energy_2(alpha)?;
    let conv2 = op.free_energy_2_converged(alpha)?;
    Ok(CLTQuantities {
        a: m.a,
        sigma2: m.sigma2,
        a_tilde,
        sigma2_tilde,
        free_energy_1: -m.spectrum.log_lambda.re / op.k as f64,
        free_energy_2: f2,
        a_imag: m.a_imag,
        sigma2_imag: m.sigma2_imag,
        lambda: m.spectrum.lambda_dom.re,
        gap: m.spectrum.gap,
        grid: m.spectrum.grid_size.clone(),
        cutoffs: m.spectrum.cutoffs.clone(),
        converged: m.spectrum.converged && conv2,
    })
}

/// `C_{m,n} = ∂_{t₁}∂_{t₂} F^(1)(α, Re P + it₁ Re z^m + it₂ Re z^n)`.
pub fn susceptibility(kind: ModelKind, p: &Polynomial, m: usize, n: usize, alpha: f64, settings: &OperatorSettings) -> Result<f64> {
    let op = TransferOperator::new(kind, p, &[Observable::re(m), Observable::re(n)], settings.clone())?;
    op.mixed(alpha, 0, 1).map(|r| r.0)
}

/// Mean Toda current `lim (1/N) E[J^{[n]}]` in both of its forms.
pub fn toda_current_mean(p: &Polynomial, n: usize, alpha: f64, settings: &OperatorSettings) -> Result<CurrentMean> {
    let op = TransferOperator::new(ModelKind::TodaPeriodic, p, &[Observable::re(1), Observable::re(n)], settings.clone())?;
    let integral_form = op.mixed_integral(alpha, 0, 1)?;
    let free_energy_form = alpha * op.mixed_type2(alpha, 0, 1)?;
    Ok(CurrentMean { integral_form, free_energy_form })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::{gamma, ln_gamma};

    fn quad() -> Polynomial {
        Polynomial::monomial(2, 0.5)
    }

    fn fast() -> OperatorSettings {
        OperatorSettings { nodes_per_dim: 40, type2_nodes: 8, ..Default::default() }
    }

    #[test]
    fn toda_quadratic_eigenvalue_closed_form() {
        let op = TransferOperator::new(ModelKind::TodaPeriodic, &quad(), &[], fast()).unwrap();
        for alpha in [0.5, 1.0, 2.0] {
            let r = op.spectrum(alpha).unwrap();
            let exact = (2.0 * std::f64::consts::PI).sqrt() * gamma(alpha) / 2.0;
            assert!((r.lambda_dom.re / exact - 1.0).abs() < 1e-9, "alpha={alpha}: {} vs {exact}", r.lambda_dom.re);
            assert!(r.positive && r.gap > 0.0 && r.converged);
        }
    }

    #[test]
    fn volterra_quadratic_closed_form() {
        let p = Polynomial::monomial(2, -1.0);
        let alpha = 1.3;
        let f1 = free_energy_type1(ModelKind::VolterraPeriodic, &p, alpha, &fast()).unwrap();
        // ∫₀^∞ x^{2α-1} e^{-2x²} dx = Γ(α) / (2·2^α)
        let exact = -(ln_gamma(alpha) - (2.0f64).ln() - alpha * 2f64.ln());
        assert!((f1 - exact).abs() < 1e-9, "{f1} vs {exact}");
    }

    #[test]
    fn toda_quadratic_moments() {
        let op = TransferOperator::new(ModelKind::TodaPeriodic, &quad(), &[Observable::re(2), Observable::re(1)], fast()).unwrap();
        let m = op.moments(1.0, 0).unwrap();
        assert!((m.a - 3.0).abs() < 1e-6, "A = {}", m.a);
        assert!((m.sigma2 - 6.0).abs() < 1e-5, "sigma2 = {}", m.sigma2);
        let m1 = op.moments(1.0, 1).unwrap();
        assert!(m1.a.abs() < 1e-8 && (m1.sigma2 - 1.0).abs() < 1e-6);
        let (c12, _) = op.mixed(1.0, 0, 1).unwrap();
        assert!(c12.abs() < 1e-6);
        let (c21, _) = op.mixed(1.0, 1, 0).unwrap();
        assert!((c12 - c21).abs() < 1e-9);
    }

    #[test]
    fn disk_weight_mass() {
        for alpha in [0.5, 2.0] {
            let g = site_grid(SiteDomain::Disk, alpha, 0.0, &[], 16, [0.0, 0.0]).unwrap();
            let m: f64 = g.weights.iter().sum();
            assert!((m - std::f64::consts::PI / alpha).abs() < 1e-10);
        }
    }

    #[test]
    fn cmv_free_potential_is_mass() {
        // P = 0: the kernel is the product of normalized weights, λ̃ = π/α
        let op = TransferOperator::new(ModelKind::CMVPeriodic, &Polynomial::zero(), &[Observable::re(1)], fast()).unwrap();
        let r = op.spectrum(1.5).unwrap();
        assert!((r.lambda_dom.re - std::f64::consts::PI / 1.5).abs() < 1e-10);
        let m = op.moments(1.5, 0).unwrap();
        // Tr ℰ = -Σ a_j ā_{j+1}: mean 0
        assert!(m.a.abs() < 1e-8);
        assert!(m.sigma2 > 0.0);
    }

    #[test]
    fn type2_toda_quadratic() {
        let op = TransferOperator::new(ModelKind::TodaPeriodic, &quad(), &[], fast()).unwrap();
        let alpha = 1.0;
        let (f2, _) = op.free_energy_2(alpha).unwrap();
        // -∫₀¹ ln(√(2π) Γ(αx) / 2) dx by an independent rule
        let mut g = |x: f64| Ok(ln_gamma(alpha * x) + (alpha * x).ln());
        let (gi, _) = quadrature::adaptive_gk15(&mut g, 0.0, 1.0, 1e-12, 10_000).unwrap();
        let exact = -(0.5 * (2.0 * std::f64::consts::PI).ln() - 2f64.ln() + gi - (alpha.ln() - 1.0));
        assert!((f2 - exact).abs() < 1e-7, "{f2} vs {exact}");
    }

    #[test]
    fn exp_toda_linear_closed_form() {
        // Tr BBᵀ = Σ (a² + b²): λ̃ = (Γ(α)/2)²
        let op = TransferOperator::new(ModelKind::ExpTodaPeriodic, &Polynomial::monomial(1, 1.0), &[], fast()).unwrap();
        let alpha = 0.7;
        let r = op.spectrum(alpha).unwrap();
        assert!((r.lambda_dom.re / (gamma(alpha) / 2.0).powi(2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inb_additive_closed_form() {
        // r = 1: Tr L² = 2 Σ a, so P = x²/2 gives λ̃ = Γ(α)
        let op = TransferOperator::new(ModelKind::INBAdditive(1), &quad(), &[], fast()).unwrap();
        let r = op.spectrum(1.7).unwrap();
        assert!((r.lambda_dom.re / gamma(1.7) - 1.0).abs() < 1e-9, "{}", r.lambda_dom.re);
    }

    #[test]
    fn cutoffs_are_robust() {
        let p = Polynomial::from_real(&[0.0, 0.0, 0.5, 0.0, 1.0]);
        let a = TransferOperator::new(ModelKind::TodaPeriodic, &p, &[], fast()).unwrap();
        let wide = OperatorSettings { nodes_per_dim: 48, truncation: Some(3.2), ..fast() };
        let b = TransferOperator::new(ModelKind::TodaPeriodic, &p, &[], wide).unwrap();
        let (la, lb) = (a.spectrum(1.0).unwrap(), b.spectrum(1.0).unwrap());
        assert!((la.log_lambda.re - lb.log_lambda.re).abs() < 1e-10);
        assert!(la.converged);
    }

    #[test]
    fn grid_cap() {
        let s = OperatorSettings { nodes_per_dim: 200, ..Default::default() };
        let op = TransferOperator::new(ModelKind::TodaPeriodic, &quad(), &[], s).unwrap();
        assert!(matches!(op.spectrum(1.0), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn multiplicative_inb_rejected() {
        let p = Polynomial::monomial(3, 1.0);
        assert!(TransferOperator::new(ModelKind::INBMultiplicative(2), &p, &[], fast()).is_err());
    }
}
