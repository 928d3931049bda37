//! Direct and Markov chain samplers for type-1 and type-2 measures.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{build_matrix, Coordinates, Family, ModelKind};
use crate::poly::Polynomial;
use crate::seeds::check_potential;
use crate::stats;
use crate::symbolic::{trace_poly, Atom};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureType {
    /// Generalized Gibbs ensemble of a periodic lattice.
    Type1,
    /// High-temperature β-ensemble with site-dependent pressure `α(1 - j/N)`.
    Type2,
}

/// Law of the last coordinate of a type-2 measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "values")]
pub enum BoundaryTerm {
    /// `δ₀` on the last off-diagonal entry: the entry is absent from the matrix.
    DiracAtZero,
    /// Uniform phase of a last coefficient on the unit circle.
    UniformPhase,
    /// Last coordinates pinned to fixed values.
    DiracVector(Vec<f64>),
}

/// Extra exponents of the high-temperature Jacobi ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobiParams {
    pub a_tilde: f64,
    pub b_tilde: f64,
}

impl JacobiParams {
    /// The parameters with `ã = b̃` and `ã + b̃ = -1 + β/4`, where `β/4 = α/n` for `n` coordinates.
    pub fn restricted(alpha: f64, n: usize) -> Self {
        let s = -1.0 + alpha / n as f64;
        Self { a_tilde: s / 2.0, b_tilde: s / 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GGEConfig {
    pub kind: ModelKind,
    pub alpha: f64,
    pub potential: Polynomial,
    pub n: usize,
    pub measure_type: MeasureType,
    /// Type-2 boundary law; `None` selects the model default.
    #[serde(default)]
    pub boundary: Option<BoundaryTerm>,
    /// Real CMV coefficients in `(-1, 1)` (Schur flow and Jacobi ensemble).
    #[serde(default)]
    pub real_cmv: bool,
    #[serde(default)]
    pub jacobi: Option<JacobiParams>,
}

impl GGEConfig {
    pub fn new(kind: ModelKind, alpha: f64, potential: Polynomial, n: usize, measure_type: MeasureType) -> Self {
        Self { kind, alpha, potential, n, measure_type, boundary: None, real_cmv: false, jacobi: None }
    }

    /// Model whose Lax matrix carries the measure: periodic for type 1, non-periodic for type 2.
    pub fn lattice_kind(&self) -> Result<ModelKind> {
        match self.measure_type {
            MeasureType::Type1 => Ok(self.kind.periodic()),
            MeasureType::Type2 => self
                .kind
                .non_periodic()
                .ok_or_else(|| Error::Config(format!("{} has no type-2 ensemble", self.kind.name()))),
        }
    }

    pub fn boundary_term(&self) -> Result<Option<BoundaryTerm>> {
        if self.measure_type == MeasureType::Type1 {
            return Ok(None);
        }
        let kind = self.lattice_kind()?;
        let b = match (&self.boundary, kind.family()) {
            (Some(b), _) => b.clone(),
            (None, Family::Cmv) if self.real_cmv => BoundaryTerm::DiracVector(vec![-1.0]),
            (None, Family::Cmv) => BoundaryTerm::UniformPhase,
            (None, _) => BoundaryTerm::DiracAtZero,
        };
        let ok = match (&b, kind.family()) {
            (BoundaryTerm::DiracAtZero, f) => f != Family::Cmv,
            (BoundaryTerm::UniformPhase, Family::Cmv) => !self.real_cmv,
            (BoundaryTerm::DiracVector(v), Family::Cmv) => v.len() == 1 && v[0].abs() <= 1.0,
            _ => false,
        };
        if !ok {
            return Err(Error::Config(format!("boundary {b:?} is not valid for {}", kind.name())));
        }
        Ok(Some(b))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        let kind = self.lattice_kind()?;
        if self.n < 3 {
            return Err(Error::Config(format!("lattice size must be at least 3, got {}", self.n)));
        }
        if kind.is_cmv() && self.n % 2 == 1 {
            return Err(Error::Config(format!("CMV models need an even size, got {}", self.n)));
        }
        if let ModelKind::INBAdditive(r) | ModelKind::INBMultiplicative(r) = kind {
            if self.n <= r + 1 {
                return Err(Error::Config(format!("INB r={r} needs N > r+1")));
            }
        }
        if self.real_cmv && !kind.is_cmv() {
            return Err(Error::Config("real_cmv applies to CMV models only".into()));
        }
        if self.jacobi.is_some() && !(self.real_cmv && self.measure_type == MeasureType::Type2) {
            return Err(Error::Config("Jacobi parameters need a real type-2 CMV measure".into()));
        }
        if let Some(j) = self.jacobi {
            if !(j.a_tilde > -1.0 && j.b_tilde > -1.0) {
                return Err(Error::Config("Jacobi parameters must exceed -1".into()));
            }
        }
        if self.real_cmv && !self.potential.is_real() {
            return Err(Error::Config("real CMV measures need a real potential".into()));
        }
        check_potential(kind, &self.potential).map_err(|e| Error::NonNormalizable(e.to_string()))?;
        if self.potential.is_zero() && !kind.is_cmv() {
            return Err(Error::NonNormalizable(format!("P = 0 on the unbounded domain of {}", kind.name())));
        }
        self.boundary_term()?;
        Ok(())
    }

    /// Pressure `α(1 - j/n)` of the 1-based site `j` of a type-2 measure.
    fn pressure(&self, j: usize) -> f64 {
        self.alpha * (1.0 - j as f64 / self.n as f64)
    }
}

/// Per-chain and batch-level sampler diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub acceptance_rate: f64,
    /// Effective sample size per monitored series.
    pub effective_sample_size: BTreeMap<String, f64>,
    /// Sweeps per chain after burn-in.
    pub chain_length: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    /// Geweke z-score of the energy series (first 10% against last 50%).
    pub geweke_z: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub config: GGEConfig,
    pub configs: Vec<Coordinates>,
    pub weights: Option<Vec<f64>>,
    pub diagnostics: SampleDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub count: usize,
    /// Sweeps between stored samples; 0 picks the integrated autocorrelation time of the energy.
    pub thin: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub rng_seed: u64,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self { count: 1000, thin: 0, burn_in: 1000, chains: 1, rng_seed: 0 }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

// ---------------------------------------------------------------------------
// Direct samplers

#[derive(Debug, Clone, Copy)]
enum DirectLaw {
    /// Toda / real β-ensemble with `P = c x²`.
    Gaussian(f64),
    /// Exponential Toda / Laguerre with `P = c x`.
    Linear(f64),
    /// Volterra / antisymmetric with `P = -c x²`.
    NegQuadratic(f64),
    /// CMV models with `P = 0`.
    Free,
}

fn direct_law(config: &GGEConfig) -> Result<DirectLaw> {
    let kind = config.lattice_kind()?;
    let p = &config.potential;
    let only = |k: usize| p.is_real() && p.coeffs.iter().enumerate().all(|(i, c)| i == k || c.norm() == 0.0);
    let c = p.coeff(p.degree()).re;
    let law = match kind.family() {
        Family::Jacobi if p.degree() == 2 && only(2) && c > 0.0 => Some(DirectLaw::Gaussian(c)),
        Family::PosDefJacobi if p.degree() == 1 && only(1) && c > 0.0 => Some(DirectLaw::Linear(c)),
        Family::Antisym if p.degree() == 2 && only(2) && c < 0.0 => Some(DirectLaw::NegQuadratic(-c)),
        Family::Cmv if p.is_zero() => Some(DirectLaw::Free),
        _ => None,
    };
    law.ok_or_else(|| {
        Error::NotFactorizable(format!("{} with P = {} ({:?})", kind.name(), p.to_expr(), config.measure_type))
    })
}

/// Whether [`sample_direct`] accepts the configuration.
pub fn supports_direct(config: &GGEConfig) -> bool {
    config.validate().is_ok() && direct_law(config).is_ok()
}

/// Gamma draw floored at the smallest normal double; tiny shapes otherwise underflow to 0.
fn gamma(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng).max(f64::MIN_POSITIVE)
}

fn beta(rng: &mut ChaCha8Rng, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("positive beta parameters").sample(rng)
}

fn uniform_phase(rng: &mut ChaCha8Rng) -> C64 {
    C64::from_polar(1.0, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}

fn draw_direct(config: &GGEConfig, law: DirectLaw, kind: ModelKind, rng: &mut ChaCha8Rng) -> Coordinates {
    let n = config.n;
    let (na, nb) = kind.coord_lengths(n);
    let t1 = config.measure_type == MeasureType::Type1;
    // pressure attached to the 1-based index j
    let pr = |j: usize| if t1 { config.alpha } else { config.pressure(j) };
    let real = |x: f64| C64::new(x, 0.0);
    let (a, b): (Vec<C64>, Vec<f64>) = match law {
        DirectLaw::Gaussian(c) => {
            let g = Normal::new(0.0, (0.5 / c).sqrt()).expect("finite scale");
            let a = (0..na).map(|_| real(g.sample(rng))).collect();
            let b = (0..nb).map(|i| gamma(rng, pr(i + 1), 2.0 * c).sqrt()).collect();
            (a, b)
        }
        DirectLaw::Linear(c) => {
            // diagonal factor x_j carries pressure α(1 - (j-1)/N) in the type-2 case
            let a = (0..na).map(|i| real(gamma(rng, pr(i), c).sqrt())).collect();
            let b = (0..nb).map(|i| gamma(rng, pr(i + 1), c).sqrt()).collect();
            (a, b)
        }
        DirectLaw::NegQuadratic(c) => {
            let a = if kind == ModelKind::VolterraPeriodic {
                (0..na).map(|_| real(gamma(rng, config.alpha, 2.0 * c))).collect()
            } else {
                (0..na).map(|i| real(gamma(rng, pr(i + 1), 2.0 * c).sqrt())).collect()
            };
            (a, vec![])
        }
        DirectLaw::Free => {
            let mut a = Vec::with_capacity(na);
            for i in 0..na {
                let j = i + 1;
                let last = !t1 && j == n;
                if last {
                    match config.boundary_term().ok().flatten() {
                        Some(BoundaryTerm::DiracVector(v)) => a.push(real(v[0])),
                        _ => a.push(uniform_phase(rng)),
                    }
                    continue;
                }
                let e = pr(j);
                if config.real_cmv {
                    // density (1-x²)^{e-1} (1-x)^p (1 + s x)^q on (-1, 1)
                    let (p, q) = match config.jacobi {
                        Some(jp) => {
                            let shift = config.alpha / n as f64;
                            (jp.a_tilde + 1.0 - shift, jp.b_tilde + 1.0 - shift)
                        }
                        None => (0.0, 0.0),
                    };
                    let s_pos = j % 2 == 0;
                    let (ep, em) = if s_pos { (e + q, e + p) } else { (e, e + p + q) };
                    // exponents of (1+x) and (1-x); (1+x)/2 ~ Beta(ep, em)
                    let u = beta(rng, ep, em);
                    a.push(real((2.0 * u - 1.0).clamp(-1.0 + 1e-16, 1.0 - 1e-16)));
                } else {
                    let r = beta(rng, 1.0, e).sqrt().min(1.0 - 4.0 * f64::EPSILON);
                    a.push(C64::from_polar(r, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)));
                }
            }
            (a, vec![])
        }
    };
    Coordinates::new(a, b, n)
}

const DIRECT_BLOCK: usize = 256;

/// Exact i.i.d. draws mapped through `f` without storing configurations.
pub fn direct_map<T, F>(config: &GGEConfig, count: usize, rng_seed: u64, f: F) -> Result<(Vec<T>, SampleDiagnostics)>
where
    T: Send,
    F: Fn(&Coordinates) -> T + Sync,
{
    config.validate()?;
    let law = direct_law(config)?;
    let kind = config.lattice_kind()?;
    let blocks = count.div_ceil(DIRECT_BLOCK);
    let out: Vec<Vec<T>> = (0..blocks)
        .into_par_iter()
        .map(|bi| {
            let mut rng = stream_rng(rng_seed, bi as u64);
            let len = DIRECT_BLOCK.min(count - bi * DIRECT_BLOCK);
            (0..len).map(|_| f(&draw_direct(config, law, kind, &mut rng))).collect()
        })
        .collect();
    let mut diag = SampleDiagnostics { acceptance_rate: 1.0, chain_length: count, chains: 1, thin: 1, ..Default::default() };
    diag.effective_sample_size.insert("energy".into(), count as f64);
    Ok((out.into_iter().flatten().collect(), diag))
}

/// Exact i.i.d. samples for factorizable (model, potential) pairs.
pub fn sample_direct(config: &GGEConfig, count: usize, rng_seed: u64) -> Result<SampleBatch> {
    let (configs, diagnostics) = direct_map(config, count, rng_seed, |c| c.clone())?;
    Ok(SampleBatch { config: config.clone(), configs, weights: None, diagnostics })
}

// ---------------------------------------------------------------------------
// Local energy

const N_ATOMS: usize = 5;

fn atom_slot(a: Atom) -> usize {
    match a {
        Atom::A => 0,
        Atom::Abar => 1,
        Atom::B => 2,
        Atom::X => 3,
        Atom::Rho => 4,
    }
}

fn site_atoms(kind: ModelKind, coords: &Coordinates, s: usize) -> [C64; N_ATOMS] {
    let a = coords.a.get(s).copied().unwrap_or_default();
    let b = coords.b.get(s).copied().unwrap_or(0.0);
    let x = if kind == ModelKind::VolterraPeriodic { a.re.max(0.0).sqrt() } else { a.re };
    let rho = if kind.is_cmv() { (1.0 - a.norm_sqr()).max(0.0).sqrt() } else { 0.0 };
    [a, a.conj(), C64::new(b, 0.0), C64::new(x, 0.0), C64::new(rho, 0.0)]
}

/// `Re Tr P(L)` as a sum of monomials indexed by the sites they touch.
#[derive(Debug, Clone)]
struct LocalEnergy {
    coef: Vec<C64>,
    start: Vec<u32>,
    factors: Vec<(u32, u8, i32)>,
    by_site: Vec<Vec<u32>>,
    constant: f64,
}

impl LocalEnergy {
    fn new(kind: ModelKind, p: &Polynomial, n: usize) -> Self {
        let sym = trace_poly(kind, p, n);
        let mut e = LocalEnergy {
            coef: vec![],
            start: vec![0],
            factors: vec![],
            by_site: vec![vec![]; n],
            constant: 0.0,
        };
        for (m, &c) in &sym.terms {
            if m.0.is_empty() {
                e.constant += c.re;
                continue;
            }
            let id = e.coef.len() as u32;
            e.coef.push(c);
            let mut sites: Vec<usize> = vec![];
            for &(s, atom, pow) in &m.0 {
                e.factors.push((s as u32, atom_slot(atom) as u8, pow as i32));
                if !sites.contains(&s) {
                    sites.push(s);
                }
            }
            e.start.push(e.factors.len() as u32);
            for s in sites {
                e.by_site[s].push(id);
            }
        }
        e
    }

    #[inline]
    fn term(&self, t: usize, atoms: &[[C64; N_ATOMS]]) -> f64 {
        let mut v = self.coef[t];
        for &(s, slot, pow) in &self.factors[self.start[t] as usize..self.start[t + 1] as usize] {
            let z = atoms[s as usize][slot as usize];
            v *= if pow == 1 { z } else { z.powi(pow) };
        }
        v.re
    }

    fn local(&self, site: usize, atoms: &[[C64; N_ATOMS]]) -> f64 {
        self.by_site[site].iter().map(|&t| self.term(t as usize, atoms)).sum()
    }

    fn total(&self, atoms: &[[C64; N_ATOMS]]) -> f64 {
        self.constant + (0..self.coef.len()).map(|t| self.term(t, atoms)).sum::<f64>()
    }
}

// ---------------------------------------------------------------------------
// Metropolis-within-Gibbs

#[derive(Debug, Clone, Copy, PartialEq)]
enum Law {
    /// Real coordinate without prefactor.
    Free,
    /// Positive coordinate with weight `x^e`, proposed in `ln x`.
    LogPower(f64),
    /// Modulus of a disk coordinate with weight `(1-|a|²)^e`, proposed in `logit |a|²`.
    DiskRadius(f64),
    /// Phase of a complex coordinate.
    Phase,
    /// Coordinate in `(-1, 1)` with weight `(1-x²)^e (1-x)^p (1+sx)^q`, proposed in `atanh x`.
    Interval { e: f64, p: f64, q: f64, s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    A(usize),
    B(usize),
}

#[derive(Debug, Clone, Copy)]
struct Move {
    slot: Slot,
    law: Law,
}

fn site_of(slot: Slot) -> usize {
    match slot {
        Slot::A(i) | Slot::B(i) => i,
    }
}

fn moves(config: &GGEConfig) -> Result<Vec<Move>> {
    let kind = config.lattice_kind()?;
    let n = config.n;
    let (na, nb) = kind.coord_lengths(n);
    let t1 = config.measure_type == MeasureType::Type1;
    let al = config.alpha;
    let mut mv = Vec::new();
    let mut push = |slot, law| mv.push(Move { slot, law });
    match kind.family() {
        Family::Jacobi => {
            for i in 0..na {
                push(Slot::A(i), Law::Free);
            }
            for i in 0..nb {
                let e = if t1 { 2.0 * al - 1.0 } else { 2.0 * config.pressure(i + 1) - 1.0 };
                push(Slot::B(i), Law::LogPower(e));
            }
        }
        Family::PosDefJacobi => {
            for i in 0..na {
                // x_j carries β(N - j + 1) - 1, i.e. 2α(1 - (j-1)/N) - 1 at the 1-based j = i + 1
                let e = if t1 { 2.0 * al - 1.0 } else { 2.0 * config.pressure(i) - 1.0 };
                push(Slot::A(i), Law::LogPower(e));
            }
            for i in 0..nb {
                let e = if t1 { 2.0 * al - 1.0 } else { 2.0 * config.pressure(i + 1) - 1.0 };
                push(Slot::B(i), Law::LogPower(e));
            }
        }
        Family::Antisym => {
            for i in 0..na {
                let e = if t1 { al - 1.0 } else { 2.0 * config.pressure(i + 1) - 1.0 };
                push(Slot::A(i), Law::LogPower(e));
            }
        }
        Family::Cmv => {
            let boundary = config.boundary_term()?;
            for i in 0..na {
                let j = i + 1;
                if !t1 && j == n {
                    if let Some(BoundaryTerm::UniformPhase) = boundary {
                        push(Slot::A(i), Law::Phase);
                    }
                    continue;
                }
                let e = if t1 { al - 1.0 } else { config.pressure(j) - 1.0 };
                if config.real_cmv {
                    let (p, q) = match config.jacobi {
                        Some(jp) => {
                            let shift = al / n as f64;
                            (jp.a_tilde + 1.0 - shift, jp.b_tilde + 1.0 - shift)
                        }
                        None => (0.0, 0.0),
                    };
                    let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                    push(Slot::A(i), Law::Interval { e, p, q, s });
                } else {
                    push(Slot::A(i), Law::DiskRadius(e));
                    push(Slot::A(i), Law::Phase);
                }
            }
        }
        Family::InbAdd(_) | Family::InbMul(_) => {
            for i in 0..na {
                push(Slot::A(i), Law::LogPower(al - 1.0));
            }
        }
    }
    Ok(mv)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.exp().ln_1p() }
}

/// Current value of the proposal variable and the log target (prefactor plus Jacobian) there.
fn chart(law: Law, v: C64) -> (f64, f64) {
    match law {
        Law::Free => (v.re, 0.0),
        Law::LogPower(e) => {
            let y = v.re.ln();
            (y, (e + 1.0) * y)
        }
        Law::DiskRadius(e) => {
            let u = v.norm_sqr();
            let y = (u / (1.0 - u)).ln();
            (y, (e + 1.0) * (1.0 - u).ln() + u.ln())
        }
        Law::Phase => (v.arg(), 0.0),
        Law::Interval { e, p, q, s } => {
            let y = v.re.atanh();
            (y, interval_log(y, e, p, q, s))
        }
    }
}

fn interval_log(y: f64, e: f64, p: f64, q: f64, s: f64) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    let l_minus = ln2 - softplus(2.0 * y);
    let l_plus = ln2 - softplus(-2.0 * y);
    let l_sx = if s > 0.0 { l_plus } else { l_minus };
    (e + 1.0) * (l_minus + l_plus) + p * l_minus + q * l_sx
}

/// Coordinate value at the proposal variable `y`, or `None` outside the representable range.
fn unchart(law: Law, y: f64, old: C64) -> Option<(C64, f64)> {
    match law {
        Law::Free => Some((C64::new(y, 0.0), 0.0)),
        Law::LogPower(e) => {
            if y.abs() > 600.0 {
                return None;
            }
            Some((C64::new(y.exp(), 0.0), (e + 1.0) * y))
        }
        Law::DiskRadius(e) => {
            if y.abs() > 35.0 {
                return None;
            }
            let u = 1.0 / (1.0 + (-y).exp());
            let ph = if old.norm() > 0.0 { old / old.norm() } else { C64::new(1.0, 0.0) };
            let lt = -(e + 1.0) * softplus(y) + (y - softplus(y));
            Some((ph * u.sqrt(), lt))
        }
        Law::Phase => Some((C64::from_polar(old.norm(), y), 0.0)),
        Law::Interval { e, p, q, s } => {
            if y.abs() > 18.0 {
                return None;
            }
            Some((C64::new(y.tanh(), 0.0), interval_log(y, e, p, q, s)))
        }
    }
}

fn initial_state(config: &GGEConfig, kind: ModelKind, rng: &mut ChaCha8Rng) -> Result<Coordinates> {
    let n = config.n;
    let (na, nb) = kind.coord_lengths(n);
    let a: Vec<C64> = match kind.family() {
        Family::Jacobi => (0..na).map(|_| C64::new(0.1 * rng.sample::<f64, _>(StandardNormal), 0.0)).collect(),
        Family::Cmv => (0..na)
            .map(|_| {
                let th = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                if config.real_cmv { C64::new(0.3 * th.cos(), 0.0) } else { C64::from_polar(0.3, th) }
            })
            .collect(),
        _ => (0..na).map(|_| C64::new(rng.random_range(0.5..1.5), 0.0)).collect(),
    };
    let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut c = Coordinates::new(a, b, n);
    if config.measure_type == MeasureType::Type2 && kind.is_cmv() {
        let last = c.a.len() - 1;
        c.a[last] = match config.boundary_term()? {
            Some(BoundaryTerm::DiracVector(v)) => C64::new(v[0], 0.0),
            _ => uniform_phase(rng),
        };
    }
    c.validate(kind)?;
    Ok(c)
}

const TARGET_ACCEPT: f64 = 0.44;

/// A single Metropolis-within-Gibbs chain.
#[derive(Debug, Clone)]
pub struct McmcChain {
    kind: ModelKind,
    energy: LocalEnergy,
    moves: Vec<Move>,
    log_step: Vec<f64>,
    atoms: Vec<[C64; N_ATOMS]>,
    coords: Coordinates,
    rng: ChaCha8Rng,
    accepted: u64,
    proposed: u64,
}

impl McmcChain {
    /// Chain `index` of the family seeded by `rng_seed`.
    pub fn new(config: &GGEConfig, rng_seed: u64, index: u64) -> Result<Self> {
        config.validate()?;
        let kind = config.lattice_kind()?;
        let mut rng = stream_rng(rng_seed, index);
        let coords = initial_state(config, kind, &mut rng)?;
        let energy = LocalEnergy::new(kind, &config.potential, config.n);
        let moves = moves(config)?;
        let log_step = moves
            .iter()
            .map(|m| match m.law {
                Law::Phase => 0.0,
                Law::DiskRadius(_) | Law::Interval { .. } => -0.2,
                _ => -0.7,
            })
            .collect();
        let atoms = (0..config.n).map(|s| site_atoms(kind, &coords, s)).collect();
        Ok(Self { kind, energy, moves, log_step, atoms, coords, rng, accepted: 0, proposed: 0 })
    }

    pub fn coords(&self) -> &Coordinates {
        &self.coords
    }

    /// `Re Tr P(L)` at the current state.
    pub fn energy(&self) -> f64 {
        self.energy.total(&self.atoms)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 { 0.0 } else { self.accepted as f64 / self.proposed as f64 }
    }

    pub fn reset_counters(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    fn value(&self, slot: Slot) -> C64 {
        match slot {
            Slot::A(i) => self.coords.a[i],
            Slot::B(i) => C64::new(self.coords.b[i], 0.0),
        }
    }

    fn set(&mut self, slot: Slot, v: C64) {
        match slot {
            Slot::A(i) => self.coords.a[i] = v,
            Slot::B(i) => self.coords.b[i] = v.re,
        }
        let s = site_of(slot);
        self.atoms[s] = site_atoms(self.kind, &self.coords, s);
    }

    /// One pass over every coordinate; `adapt_gain > 0` moves step sizes toward the target acceptance.
    pub fn sweep(&mut self, adapt_gain: f64) {
        for k in 0..self.moves.len() {
            let Move { slot, law } = self.moves[k];
            let site = site_of(slot);
            let old = self.value(slot);
            let (y, lt_old) = chart(law, old);
            let z: f64 = self.rng.sample(StandardNormal);
            let y_new = y + self.log_step[k].exp() * z;
            let mut acc = false;
            if let Some((v_new, lt_new)) = unchart(law, y_new, old) {
                let e_old = self.energy.local(site, &self.atoms);
                self.set(slot, v_new);
                let e_new = self.energy.local(site, &self.atoms);
                let log_ratio = (lt_new - lt_old) - (e_new - e_old);
                acc = log_ratio >= 0.0 || self.rng.random::<f64>() < log_ratio.exp();
                if !acc {
                    self.set(slot, old);
                }
            }
            self.proposed += 1;
            if acc {
                self.accepted += 1;
            }
            if adapt_gain > 0.0 {
                let a = if acc { 1.0 } else { 0.0 };
                self.log_step[k] = (self.log_step[k] + adapt_gain * (a - TARGET_ACCEPT)).clamp(-14.0, 3.0);
            }
        }
    }

    /// Burn-in with Robbins–Monro adaptation; returns the energy trace of the second half.
    pub fn burn_in(&mut self, sweeps: usize) -> Vec<f64> {
        let mut trace = Vec::with_capacity(sweeps / 2 + 1);
        for t in 0..sweeps {
            self.sweep(1.0 / (t as f64 + 1.0).powf(0.6));
            if t >= sweeps / 2 {
                trace.push(self.energy());
            }
        }
        self.reset_counters();
        trace
    }
}

/// Markov chain samples mapped through `f`, without storing configurations.
///
/// Chains run in parallel with independent RNG streams; outputs are concatenated in chain order.
pub fn mcmc_map<T, F>(config: &GGEConfig, settings: &McmcSettings, f: F) -> Result<(Vec<T>, SampleDiagnostics)>
where
    T: Send,
    F: Fn(&Coordinates) -> T + Sync,
{
    config.validate()?;
    let chains = settings.chains.max(1);
    let per: Vec<usize> = (0..chains).map(|c| settings.count / chains + usize::from(c < settings.count % chains)).collect();
    let runs: Vec<Result<(Vec<T>, Vec<f64>, f64, usize)>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut ch = McmcChain::new(config, settings.rng_seed, c as u64)?;
            let pilot = ch.burn_in(settings.burn_in);
            let thin = if settings.thin > 0 {
                settings.thin
            } else if pilot.len() >= 20 {
                stats::integrated_autocorr_time(&pilot).round().max(1.0) as usize
            } else {
                1
            };
            let mut out = Vec::with_capacity(per[c]);
            let mut energies = Vec::with_capacity(per[c]);
            for _ in 0..per[c] {
                for _ in 0..thin {
                    ch.sweep(0.0);
                }
                out.push(f(&ch.coords));
                energies.push(ch.energy());
            }
            Ok((out, energies, ch.acceptance_rate(), thin))
        })
        .collect();
    let mut values = Vec::with_capacity(settings.count);
    let mut diag = SampleDiagnostics { burn_in: settings.burn_in, chains, ..Default::default() };
    let mut ess = 0.0;
    let mut acc = 0.0;
    let mut z_max: Option<f64> = None;
    for (c, r) in runs.into_iter().enumerate() {
        let (v, energies, a, thin) = r?;
        values.extend(v);
        acc += a * per[c] as f64;
        diag.thin = diag.thin.max(thin);
        diag.chain_length = diag.chain_length.max(per[c] * thin);
        if energies.len() >= 20 {
            ess += stats::effective_sample_size(&energies);
            if let Ok(z) = stats::geweke_z(&energies, 0.1, 0.5) {
                z_max = Some(z_max.map_or(z, |m: f64| if z.abs() > m.abs() { z } else { m }));
            }
        } else {
            ess += energies.len() as f64;
        }
    }
    diag.acceptance_rate = if settings.count > 0 { acc / settings.count as f64 } else { 0.0 };
    diag.effective_sample_size.insert("energy".into(), ess);
    diag.geweke_z = z_max;
    if !(0.1..=0.7).contains(&diag.acceptance_rate) {
        diag.warnings.push(Error::MixingWarning(diag.acceptance_rate).to_string());
    }
    Ok((values, diag))
}

/// Metropolis-within-Gibbs samples of the exact unnormalized density.
pub fn sample_mcmc(config: &GGEConfig, count: usize, thin: usize, burn_in: usize, rng_seed: u64) -> Result<SampleBatch> {
    let settings = McmcSettings { count, thin, burn_in, chains: 1, rng_seed };
    sample_mcmc_with(config, &settings)
}

pub fn sample_mcmc_with(config: &GGEConfig, settings: &McmcSettings) -> Result<SampleBatch> {
    let (configs, diagnostics) = mcmc_map(config, settings, |c| c.clone())?;
    Ok(SampleBatch { config: config.clone(), configs, weights: None, diagnostics })
}

/// Log of the unnormalized density at `coords`, prefactors included, boundary coordinates excluded.
///
/// Serves as the literal-formula check of the site-dependent exponents.
pub fn log_density(config: &GGEConfig, coords: &Coordinates) -> Result<f64> {
    config.validate()?;
    let kind = config.lattice_kind()?;
    coords.validate(kind)?;
    let e = LocalEnergy::new(kind, &config.potential, config.n);
    let atoms: Vec<_> = (0..config.n).map(|s| site_atoms(kind, coords, s)).collect();
    let mut lp = -e.total(&atoms);
    for m in moves(config)? {
        let v = match m.slot {
            Slot::A(i) => coords.a[i],
            Slot::B(i) => C64::new(coords.b[i], 0.0),
        };
        lp += match m.law {
            Law::Free | Law::Phase => 0.0,
            Law::LogPower(e) => e * v.re.ln(),
            Law::DiskRadius(e) => e * (1.0 - v.norm_sqr()).ln(),
            Law::Interval { e, p, q, s } => e * (1.0 - v.re * v.re).ln() + p * (1.0 - v.re).ln() + q * (1.0 + s * v.re).ln(),
        };
    }
    Ok(lp)
}

/// Sampler choice for streaming runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Sampler {
    Direct,
    Mcmc { thin: usize, burn_in: usize, chains: usize },
    /// Direct when available, otherwise MCMC with the given settings.
    Auto { thin: usize, burn_in: usize, chains: usize },
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::Auto { thin: 0, burn_in: 1000, chains: 1 }
    }
}

/// `count` samples mapped through `f` by the chosen sampler.
pub fn sample_map<T, F>(config: &GGEConfig, sampler: Sampler, count: usize, rng_seed: u64, f: F) -> Result<(Vec<T>, SampleDiagnostics)>
where
    T: Send,
    F: Fn(&Coordinates) -> T + Sync,
{
    let mcmc = |thin, burn_in, chains| McmcSettings { count, thin, burn_in, chains, rng_seed };
    match sampler {
        Sampler::Direct => direct_map(config, count, rng_seed, f),
        Sampler::Mcmc { thin, burn_in, chains } => mcmc_map(config, &mcmc(thin, burn_in, chains), f),
        Sampler::Auto { thin, burn_in, chains } => {
            if supports_direct(config) {
                direct_map(config, count, rng_seed, f)
            } else {
                mcmc_map(config, &mcmc(thin, burn_in, chains), f)
            }
        }
    }
}

/// Series of several observables, one vector per observable.
pub fn sample_series(
    config: &GGEConfig,
    sampler: Sampler,
    count: usize,
    rng_seed: u64,
    observables: &[SeriesObservable],
) -> Result<(Vec<Vec<f64>>, SampleDiagnostics)> {
    let kind = config.lattice_kind()?;
    let (rows, diag) = sample_map(config, sampler, count, rng_seed, |c| {
        observables.iter().map(|o| o.eval(kind, c)).collect::<Result<Vec<f64>>>()
    })?;
    let mut cols = vec![Vec::with_capacity(rows.len()); observables.len()];
    for r in rows {
        for (k, v) in r?.into_iter().enumerate() {
            cols[k].push(v);
        }
    }
    Ok((cols, diag))
}

// ---------------------------------------------------------------------------
// Observables

/// Site-indexed local observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LocalObservable {
    /// `Re [L^m]_{jj}`.
    LocalField(usize),
    /// `Re [L^n L↓]_{jj}`.
    Current(usize),
    Constant(f64),
}

impl LocalObservable {
    /// Values at every site.
    pub fn profile(&self, kind: ModelKind, coords: &Coordinates) -> Result<Vec<f64>> {
        Ok(match *self {
            LocalObservable::Constant(c) => vec![c; coords.n],
            LocalObservable::LocalField(m) => {
                let l = build_matrix(kind, coords)?;
                l.power_diagonal(m).iter().map(|z| z.re).collect()
            }
            LocalObservable::Current(n) => {
                let l = build_matrix(kind, coords)?;
                l.currents(n).iter().map(|z| z.re).collect()
            }
        })
    }
}

/// Scalar observable recorded once per configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SeriesObservable {
    /// `Re Tr L^s` (the trace itself for real models).
    TracePower(usize),
    ReTracePower(usize),
    /// `Im Tr L^s`, CMV models only.
    ImTracePower(usize),
    LocalField(usize, usize),
    Current(usize, usize),
}

impl SeriesObservable {
    pub fn eval(&self, kind: ModelKind, coords: &Coordinates) -> Result<f64> {
        let site = |j: usize| {
            if j < coords.n { Ok(j) } else { Err(Error::Index { index: j, len: coords.n }) }
        };
        match *self {
            SeriesObservable::TracePower(s) | SeriesObservable::ReTracePower(s) => {
                Ok(build_matrix(kind, coords)?.trace_power(s)?.re)
            }
            SeriesObservable::ImTracePower(s) => {
                if !kind.is_cmv() {
                    return Err(Error::Domain(format!("Im Tr L^s is identically zero for {}", kind.name())));
                }
                Ok(build_matrix(kind, coords)?.trace_power(s)?.im)
            }
            SeriesObservable::LocalField(m, j) => {
                let j = site(j)?;
                Ok(LocalObservable::LocalField(m).profile(kind, coords)?[j])
            }
            SeriesObservable::Current(n, j) => {
                let j = site(j)?;
                Ok(LocalObservable::Current(n).profile(kind, coords)?[j])
            }
        }
    }
}

/// One value of `observable` per stored configuration.
pub fn observable_series(batch: &SampleBatch, observable: SeriesObservable) -> Result<Vec<f64>> {
    let kind = batch.config.lattice_kind()?;
    batch.configs.par_iter().map(|c| observable.eval(kind, c)).collect()
}

// ---------------------------------------------------------------------------
// Serialization

const MAGIC: &[u8; 8] = b"GGESMPL1";

#[derive(Debug, Serialize, Deserialize)]
struct BinaryHeader {
    config: GGEConfig,
    diagnostics: SampleDiagnostics,
    rows: usize,
    columns: Vec<String>,
}

fn column_names(batch: &SampleBatch) -> Result<Vec<String>> {
    let kind = batch.config.lattice_kind()?;
    let (na, nb) = kind.coord_lengths(batch.config.n);
    let mut cols: Vec<String> = (0..na).map(|i| format!("a_re_{i}")).collect();
    if kind.is_cmv() && !batch.config.real_cmv {
        cols.extend((0..na).map(|i| format!("a_im_{i}")));
    }
    cols.extend((0..nb).map(|i| format!("b_{i}")));
    if batch.weights.is_some() {
        cols.push("weight".into());
    }
    Ok(cols)
}

fn row(batch: &SampleBatch, idx: usize, complex: bool) -> Vec<f64> {
    let c = &batch.configs[idx];
    let mut r: Vec<f64> = c.a.iter().map(|z| z.re).collect();
    if complex {
        r.extend(c.a.iter().map(|z| z.im));
    }
    r.extend(c.b.iter().copied());
    if let Some(w) = &batch.weights {
        r.push(w[idx]);
    }
    r
}

/// Little-endian `f64` columns after a length-prefixed JSON header.
pub fn write_binary(batch: &SampleBatch, path: &Path) -> Result<()> {
    let columns = column_names(batch)?;
    let kind = batch.config.lattice_kind()?;
    let complex = kind.is_cmv() && !batch.config.real_cmv;
    let header = BinaryHeader {
        config: batch.config.clone(),
        diagnostics: batch.diagnostics.clone(),
        rows: batch.configs.len(),
        columns: columns.clone(),
    };
    let hj = serde_json::to_vec(&header)?;
    let rows: Vec<Vec<f64>> = (0..batch.configs.len()).map(|i| row(batch, i, complex)).collect();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(hj.len() as u64).to_le_bytes())?;
    w.write_all(&hj)?;
    for col in 0..columns.len() {
        for r in &rows {
            w.write_all(&r[col].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<SampleBatch> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |why: &str| Error::Io(format!("{}: {why}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a sample file"));
    }
    let hl = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header: BinaryHeader = serde_json::from_slice(bytes.get(16..16 + hl).ok_or_else(|| bad("truncated header"))?)?;
    let body = &bytes[16 + hl..];
    let (rows, ncol) = (header.rows, header.columns.len());
    if body.len() != rows * ncol * 8 {
        return Err(bad("column data has the wrong length"));
    }
    let at = |col: usize, r: usize| {
        let o = (col * rows + r) * 8;
        f64::from_le_bytes(body[o..o + 8].try_into().expect("8 bytes"))
    };
    let kind = header.config.lattice_kind()?;
    let (na, nb) = kind.coord_lengths(header.config.n);
    let complex = header.columns.iter().any(|c| c.starts_with("a_im_"));
    let has_w = header.columns.last().is_some_and(|c| c == "weight");
    let mut configs = Vec::with_capacity(rows);
    for r in 0..rows {
        let a: Vec<C64> = (0..na).map(|i| C64::new(at(i, r), if complex { at(na + i, r) } else { 0.0 })).collect();
        let off = if complex { 2 * na } else { na };
        let b: Vec<f64> = (0..nb).map(|i| at(off + i, r)).collect();
        configs.push(Coordinates::new(a, b, header.config.n));
    }
    let weights = has_w.then(|| (0..rows).map(|r| at(ncol - 1, r)).collect());
    Ok(SampleBatch { config: header.config, configs, weights, diagnostics: header.diagnostics })
}

/// One row per configuration; values printed with 17 significant digits.
pub fn write_csv(batch: &SampleBatch, path: &Path) -> Result<()> {
    let columns = column_names(batch)?;
    let kind = batch.config.lattice_kind()?;
    let complex = kind.is_cmv() && !batch.config.real_cmv;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", columns.join(","))?;
    for i in 0..batch.configs.len() {
        let r: Vec<String> = row(batch, i, complex).iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}
