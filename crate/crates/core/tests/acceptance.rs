//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line to stderr.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture --test-threads 1`
//! to see the lines in order.

use std::io::Write;
use std::sync::OnceLock;

use gge_spectra::models::{build_matrix, Coordinates, Family, ModelKind};
use gge_spectra::poly::Polynomial;
use gge_spectra::sampling::{
    sample_direct, sample_map, GGEConfig, LocalObservable, MeasureType, Sampler, SeriesObservable,
};
use gge_spectra::seeds::{decompose, local_field, motzkin_terms};
use gge_spectra::stats::{self, clt_check_series, Estimate, Prediction};
use gge_spectra::transferop::{
    clt_mean_and_variance, susceptibility, toda_current_mean, CLTQuantities, Observable, OperatorSettings, Part,
    TransferOperator,
};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("[{}] criterion {id:>2} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn quadratic() -> Polynomial {
    Polynomial::monomial(2, 0.5)
}

fn quartic() -> Polynomial {
    Polynomial::parse("x^4 + x^2/2").unwrap()
}

// ---------------------------------------------------------------------------
// Independent oracles

/// Composite Simpson rule on `[lo, hi]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + h * i as f64);
    }
    s * h / 3.0
}

/// Per-site moments of the quadratic Toda measure `e^{-a²/2} b^{2α-1} e^{-b²}` by quadrature:
/// `(ln Z, E[a²+2b²], Var[a²+2b²])`.
fn quadratic_site_oracle(alpha: f64) -> (f64, f64, f64) {
    let ga = |k: i32| simpson(|a| a.powi(k) * (-a * a / 2.0).exp(), -14.0, 14.0, 20_000);
    // substitute b = u² to keep the small-α endpoint smooth
    let gb = |k: i32| {
        simpson(
            |u: f64| if u == 0.0 { 0.0 } else { 2.0 * u * (u * u).powf(2.0 * alpha - 1.0 + k as f64) * (-u.powi(4)).exp() },
            0.0,
            3.5,
            20_000,
        )
    };
    let (za, zb) = (ga(0), gb(0));
    let ea2 = ga(2) / za;
    let ea4 = ga(4) / za;
    let eb2 = gb(2) / zb;
    let eb4 = gb(4) / zb;
    let mean = ea2 + 2.0 * eb2;
    let var = (ea4 - ea2 * ea2) + 4.0 * (eb4 - eb2 * eb2);
    ((za * zb).ln(), mean, var)
}

/// Dense periodic Jacobi matrix built directly from its definition.
fn dense_toda(a: &[f64], b: &[f64]) -> DMatrix<f64> {
    let n = a.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = a[j];
        let k = (j + 1) % n;
        m[(j, k)] += b[j];
        m[(k, j)] += b[j];
    }
    m
}

fn random_coords(kind: ModelKind, n: usize, rng: &mut ChaCha8Rng) -> Coordinates {
    let (na, nb) = kind.coord_lengths(n);
    let a: Vec<C64> = (0..na)
        .map(|j| match kind.family() {
            Family::Jacobi => C64::new(rng.random_range(-1.5..1.5), 0.0),
            Family::Cmv => {
                let last = kind == ModelKind::CMVNonPeriodic && j + 1 == na;
                let r = if last { 1.0 } else { rng.random_range(0.0..0.95) };
                C64::from_polar(r, rng.random_range(0.0..std::f64::consts::TAU))
            }
            _ => C64::new(rng.random_range(0.2..1.8), 0.0),
        })
        .collect();
    let b = (0..nb).map(|_| rng.random_range(0.2..1.8)).collect();
    Coordinates::new(a, b, n)
}

fn random_poly(kind: ModelKind, m: usize, rng: &mut ChaCha8Rng) -> Polynomial {
    let coeffs = (0..=m)
        .map(|k| {
            let re = if k == m { 1.0 } else { rng.random_range(-1.0..1.0) };
            let im = if kind.is_cmv() { rng.random_range(-1.0..1.0) } else { 0.0 };
            C64::new(re, im)
        })
        .collect();
    Polynomial::new(coeffs)
}

/// `Tr P(L)` from dense matrix powers.
fn dense_trace(kind: ModelKind, p: &Polynomial, coords: &Coordinates) -> C64 {
    let l = build_matrix(kind, coords).unwrap().to_dense();
    let n = l.nrows();
    let mut pow = DMatrix::<C64>::identity(n, n);
    let mut total = C64::new(0.0, 0.0);
    for k in 0..=p.degree() {
        total += p.coeff(k) * pow.trace();
        pow = &pow * &l;
    }
    total
}

// ---------------------------------------------------------------------------
// Shared quartic Monte Carlo run at N = 256

const QN: usize = 256;

struct QuarticRun {
    tr2: Vec<f64>,
    current: Vec<f64>,
    acceptance: f64,
}

fn quartic_prediction() -> &'static CLTQuantities {
    static CELL: OnceLock<CLTQuantities> = OnceLock::new();
    CELL.get_or_init(|| {
        clt_mean_and_variance(ModelKind::TodaPeriodic, &quartic(), 2, Part::Re, 1.0, &OperatorSettings::default()).unwrap()
    })
}

fn quartic_run() -> &'static QuarticRun {
    static CELL: OnceLock<QuarticRun> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = GGEConfig::new(ModelKind::TodaPeriodic, 1.0, quartic(), QN, MeasureType::Type1);
        let sampler = Sampler::Mcmc { thin: 8, burn_in: 1000, chains: 4 };
        let kind = ModelKind::TodaPeriodic;
        let (rows, diag) = sample_map(&cfg, sampler, 24_000, 7, |c| {
            let l = build_matrix(kind, c).unwrap();
            let tr2 = l.trace_power(2).unwrap().re;
            let j = stats::mean(&LocalObservable::Current(1).profile(kind, c).unwrap());
            (tr2, j)
        })
        .unwrap();
        let (tr2, current) = rows.into_iter().unzip();
        QuarticRun { tr2, current, acceptance: diag.acceptance_rate }
    })
}

fn mean_estimate(x: &[f64]) -> Estimate {
    Estimate { value: stats::mean(x), se: (stats::variance(x) / stats::effective_sample_size(x)).sqrt() }
}

// ---------------------------------------------------------------------------

#[test]
fn c01_seed_and_weed_reproduce_trace() {
    let kinds = [
        ModelKind::TodaPeriodic,
        ModelKind::TodaNonPeriodic,
        ModelKind::ExpTodaPeriodic,
        ModelKind::LaguerreNonPeriodic,
        ModelKind::VolterraPeriodic,
        ModelKind::AntisymNonPeriodic,
        ModelKind::CMVPeriodic,
        ModelKind::CMVNonPeriodic,
        ModelKind::INBAdditive(1),
        ModelKind::INBAdditive(2),
        ModelKind::INBMultiplicative(1),
        ModelKind::INBMultiplicative(2),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for kind in kinds {
        let max_m = if kind.is_cmv() || matches!(kind.family(), Family::InbAdd(_) | Family::InbMul(_)) { 6 } else { 8 };
        for n in [8, 12, 16] {
            for m in 1..=max_m {
                let p = random_poly(kind, m, &mut rng);
                let seed = decompose(kind, &p, n, 1).unwrap();
                for _ in 0..500 {
                    let c = random_coords(kind, n, &mut rng);
                    let direct = dense_trace(kind, &p, &c);
                    let r = (seed.total(&c) - direct).norm() / (1.0 + direct.norm());
                    worst = worst.max(r);
                    cases += 1;
                }
            }
        }
    }
    let pass = worst < 1e-10;
    report(1, "seed/weed oracle", pass, &format!("max relative residual {worst:.3e} over {cases} draws (limit 1e-10)"));
    assert!(pass);
}

#[test]
fn c02_super_motzkin_matches_dense_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for m in 1..=8 {
        let terms = motzkin_terms(m).unwrap();
        for _ in 0..500 {
            let n = rng.random_range(m + 1..=m + 8);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.8)).collect();
            let coords = Coordinates::real(&a, &b, n);
            let h: f64 = (0..n).map(|j| local_field(&terms, j, &coords).unwrap()).sum();
            let dense = dense_toda(&a, &b).pow(m as u32).trace();
            worst = worst.max((h - dense).abs() / (1.0 + dense.abs()));
        }
    }
    let pass = worst < 1e-10;
    report(2, "super-Motzkin expansion", pass, &format!("max relative error {worst:.3e} for m <= 8 (limit 1e-10)"));
    assert!(pass);
}

#[test]
fn c03_closed_form_free_energy() {
    let settings = OperatorSettings { nodes_per_dim: 64, ..Default::default() };
    let f1 = gge_spectra::transferop::free_energy_type1(ModelKind::TodaPeriodic, &quadratic(), 1.0, &settings).unwrap();
    let (log_z, _, _) = quadratic_site_oracle(1.0);
    let oracle = -log_z;
    let closed = -((2.0 * std::f64::consts::PI).sqrt() / 2.0).ln();
    let pass = (f1 - oracle).abs() < 1e-5 && (oracle - closed).abs() < 1e-9;
    report(
        3,
        "closed-form free energy",
        pass,
        &format!("operator {f1:.10} vs quadrature {oracle:.10} vs -ln(sqrt(2 pi)/2) = {closed:.10} (limit 1e-5)"),
    );
    assert!(pass);
}

#[test]
fn c04_type1_free_energy_is_alpha_derivative_of_type2() {
    let h = 1e-3;
    let cases: Vec<(&str, ModelKind, Polynomial, Vec<f64>)> = vec![
        ("toda x^2/2", ModelKind::TodaPeriodic, quadratic(), vec![0.25, 0.5, 1.0, 2.0, 4.0]),
        ("toda x^4+x^2/2", ModelKind::TodaPeriodic, quartic(), vec![0.25, 0.5, 1.0, 2.0, 4.0]),
        ("volterra -x^2", ModelKind::VolterraPeriodic, Polynomial::monomial(2, -1.0), vec![1.0]),
    ];
    let mut worst = 0.0f64;
    let mut lines = vec![];
    for (label, kind, p, alphas) in cases {
        let op = TransferOperator::new(kind, &p, &[], OperatorSettings::default()).unwrap();
        for alpha in alphas {
            let f1 = op.free_energy_1(alpha).unwrap().0;
            let g = |x: f64| x * op.free_energy_2(x).unwrap().0;
            let d = (g(alpha + h) - g(alpha - h)) / (2.0 * h);
            let err = (f1 - d).abs();
            worst = worst.max(err);
            lines.push(format!("{label} a={alpha}: {err:.2e}"));
        }
    }
    let pass = worst < 1e-3;
    report(4, "F1 = d/da (a F2)", pass, &format!("max |diff| {worst:.3e} (limit 1e-3); {}", lines.join(", ")));
    assert!(pass);
}

#[test]
fn c05_quadratic_clt_moments() {
    let mut worst = (0.0f64, 0.0f64);
    let mut lines = vec![];
    for alpha in [0.5, 1.0, 2.0] {
        let op = TransferOperator::new(ModelKind::TodaPeriodic, &quadratic(), &[Observable::re(2)], OperatorSettings::default())
            .unwrap();
        let m = op.moments(alpha, 0).unwrap();
        let (_, mean, var) = quadratic_site_oracle(alpha);
        assert!((mean - (1.0 + 2.0 * alpha)).abs() < 1e-8 && (var - (2.0 + 4.0 * alpha)).abs() < 1e-7);
        worst.0 = worst.0.max((m.a - mean).abs());
        worst.1 = worst.1.max((m.sigma2 - var).abs());
        lines.push(format!("a={alpha}: A {:.8} sigma2 {:.8}", m.a, m.sigma2));
    }
    let pass = worst.0 < 1e-4 && worst.1 < 1e-3;
    report(
        5,
        "quadratic Toda A = 1+2a, sigma2 = 2+4a",
        pass,
        &format!("max |dA| {:.2e} (limit 1e-4), max |dsigma2| {:.2e} (limit 1e-3); {}", worst.0, worst.1, lines.join(", ")),
    );
    assert!(pass);
}

#[test]
fn c06_quartic_moments_against_monte_carlo() {
    let q = quartic_prediction();
    let run = quartic_run();
    let r = clt_check_series(&run.tr2, QN, "Tr L^2", Prediction { a: q.a, sigma2: q.sigma2 }).unwrap();
    let pass = r.ess >= 2e4 && r.mean_ok && r.var_ok;
    report(
        6,
        "quartic Toda moments vs Monte Carlo",
        pass,
        &format!(
            "mean {:.6} vs A {:.6} (SE {:.2e}), var {:.6} vs sigma2 {:.6} (SE {:.2e}), ESS {:.0}, acceptance {:.3}",
            r.empirical_mean, q.a, r.mean_se, r.empirical_var, q.sigma2, r.var_se, r.ess, run.acceptance
        ),
    );
    assert!(pass);
}

#[test]
fn c07_gaussianity_and_control() {
    let q = quartic_prediction();
    let run = quartic_run();
    let nf = QN as f64;
    let z = |s2: f64| -> Vec<f64> { run.tr2.iter().map(|x| (x - nf * q.a) / (nf * s2).sqrt()).collect() };
    let d = stats::ks_distance(&z(q.sigma2));
    let d_control = stats::ks_distance(&z(4.0 * q.sigma2));
    let pass = d < 0.02;
    report(7, "Gaussianity KS < 0.02", pass, &format!("KS distance {d:.5} over {} samples", run.tr2.len()));
    // A fourfold variance gives sup|Φ(x) - Φ(2x)| ≈ 0.141 even for an exact Gaussian,
    // so the "> 0.2" control threshold cannot be met; the line reports it as stated.
    let control_pass = d_control > 0.2;
    report(
        7,
        "control with 4 sigma2 fails (distance > 0.2)",
        control_pass,
        &format!("KS distance {d_control:.5}; population value for an exact Gaussian is 0.1408"),
    );
    assert!(pass);
    assert!(d_control > 0.1, "control is not rejected: {d_control}");
}

#[test]
fn c08_variance_bridge() {
    let h = 1e-2;
    let mut worst = 0.0f64;
    let mut lines = vec![];
    for (label, p) in [("x^2/2", quadratic()), ("x^4+x^2/2", quartic())] {
        let op = TransferOperator::new(ModelKind::TodaPeriodic, &p, &[Observable::re(2)], OperatorSettings::default()).unwrap();
        let sigma2 = op.moments(1.0, 0).unwrap().sigma2;
        let g = |x: f64| x * op.moments_type2(x, 0).unwrap().1;
        let d = (g(1.0 + h) - g(1.0 - h)) / (2.0 * h);
        worst = worst.max((sigma2 - d).abs());
        lines.push(format!("{label}: sigma2 {sigma2:.8} vs {d:.8}"));
    }
    let pass = worst < 2e-3;
    report(8, "sigma2 = d/da (a sigma2~)", pass, &format!("max |diff| {worst:.3e} (limit 2e-3); {}", lines.join(", ")));
    assert!(pass);
}

#[test]
fn c09_susceptibility() {
    let s = OperatorSettings::default();
    let kind = ModelKind::TodaPeriodic;
    let run = quartic_run();
    let c22 = susceptibility(kind, &quartic(), 2, 2, 1.0, &s).unwrap();
    let emp = stats::susceptibility_from_series(&run.tr2, &run.tr2, QN, 100).unwrap();
    let quartic_ok = emp.within(c22, 3.0);

    let mut asym = 0.0f64;
    for (m, n) in [(1, 2), (2, 4), (1, 3)] {
        let cmn = susceptibility(kind, &quartic(), m, n, 1.0, &s).unwrap();
        let cnm = susceptibility(kind, &quartic(), n, m, 1.0, &s).unwrap();
        asym = asym.max((cmn - cnm).abs());
    }
    let sym_ok = asym < 1e-6;

    // quadratic Toda: a ~ N(0,1), b² ~ Gamma(1): C11 = Var a, C22 = Var(a²+2b²), C12 = Cov(a, a²+2b²)
    let (_, _, var2) = quadratic_site_oracle(1.0);
    let targets = [(1, 1, 1.0), (2, 2, var2), (1, 2, 0.0)];
    let n = 64;
    let cfg = GGEConfig::new(kind, 1.0, quadratic(), n, MeasureType::Type1);
    let batch = sample_direct(&cfg, 20_000, 9).unwrap();
    let t1: Vec<f64> = gge_spectra::sampling::observable_series(&batch, SeriesObservable::TracePower(1)).unwrap();
    let t2: Vec<f64> = gge_spectra::sampling::observable_series(&batch, SeriesObservable::TracePower(2)).unwrap();
    let mut quad_ok = true;
    let mut quad_lines = vec![];
    for (m, k, target) in targets {
        let pick = |i: usize| if i == 1 { &t1 } else { &t2 };
        let e = stats::susceptibility_from_series(pick(m), pick(k), n, 100).unwrap();
        let op = susceptibility(kind, &quadratic(), m, k, 1.0, &s).unwrap();
        let ok = e.within(target, 3.0) && (op - target).abs() < 1e-3;
        quad_ok &= ok;
        quad_lines.push(format!("C{m}{k} emp {:.4}±{:.4} op {op:.6} vs {target}", e.value, e.se));
    }
    let pass = quartic_ok && sym_ok && quad_ok;
    report(
        9,
        "susceptibility",
        pass,
        &format!(
            "quartic C22 {c22:.6} vs {:.6} (SE {:.2e}); max asymmetry {asym:.2e} (limit 1e-6); {}",
            emp.value,
            emp.se,
            quad_lines.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn c10_decay_of_correlations() {
    let kind = ModelKind::TodaPeriodic;
    let cfg = GGEConfig::new(kind, 1.0, quartic(), QN, MeasureType::Type1);
    let obs = LocalObservable::LocalField(2);
    let max_d = 8;
    let sampler = Sampler::Mcmc { thin: 2, burn_in: 1000, chains: 4 };
    let (rows, _) = sample_map(&cfg, sampler, 100_000, 10, |c| stats::decay_row(kind, c, obs, obs, max_d).unwrap()).unwrap();
    let r = stats::decay_from_rows(&rows, max_d, 50).unwrap();
    let pass = r.fitted_log_slope < 0.0 && r.slope_ci[1] < 0.0 && r.fit_r2 > 0.9;
    report(
        10,
        "exponential decay of correlations",
        pass,
        &format!(
            "slope {:.4} CI [{:.4}, {:.4}], R2 {:.4} over distances {:?}",
            r.fitted_log_slope, r.slope_ci[0], r.slope_ci[1], r.fit_r2, r.fit_distances
        ),
    );
    assert!(pass);
}

#[test]
fn c11_berry_esseen_scaling() {
    let q = quartic_prediction();
    let cfg = GGEConfig::new(ModelKind::TodaPeriodic, 1.0, quartic(), 64, MeasureType::Type1);
    let sampler = Sampler::Mcmc { thin: 4, burn_in: 1000, chains: 4 };
    let pred = Prediction { a: q.a, sigma2: q.sigma2 };
    let rep = stats::berry_esseen_scan(&cfg, 2, &[64, 256, 1024], 50_000, sampler, 11, |_| Ok(pred)).unwrap();
    let ratio = rep.scaled_ratio();
    let pass = ratio < 3.0;
    report(11, "Berry-Esseen scaling", pass, &format!("sup distance x sqrt(N) {:?}, ratio {ratio:.3} (limit 3)", rep.scaled));
    assert!(pass);
}

#[test]
fn c12_unitarity_and_spectral_sanity() {
    let mut worst_unit = 0.0f64;
    for (kind, mt) in [(ModelKind::CMVPeriodic, MeasureType::Type1), (ModelKind::CMVNonPeriodic, MeasureType::Type2)] {
        let cfg = GGEConfig::new(kind, 1.0, Polynomial::zero(), 32, mt);
        let batch = sample_direct(&cfg, 500, 12).unwrap();
        let lk = cfg.lattice_kind().unwrap();
        for c in &batch.configs {
            for z in build_matrix(lk, c).unwrap().eigenvalues().unwrap() {
                worst_unit = worst_unit.max((z.norm() - 1.0).abs());
            }
        }
    }
    let unit_ok = worst_unit < 1e-9;

    let cfg = GGEConfig::new(ModelKind::AntisymNonPeriodic, 1.0, Polynomial::monomial(2, -1.0), 64, MeasureType::Type2);
    let batch = sample_direct(&cfg, 500, 13).unwrap();
    let mut worst_odd = 0.0f64;
    for c in &batch.configs {
        let l = build_matrix(ModelKind::AntisymNonPeriodic, c).unwrap();
        let scale = l.trace_power(2).unwrap().norm();
        for s in [1, 3, 5, 7] {
            worst_odd = worst_odd.max(l.trace_power(s).unwrap().norm() / (1.0 + scale.powf(s as f64 / 2.0)));
        }
    }
    let odd_ok = worst_odd < 1e-12;

    let runs: Vec<(&str, ModelKind, Polynomial, OperatorSettings)> = vec![
        ("toda x^2/2", ModelKind::TodaPeriodic, quadratic(), OperatorSettings::default()),
        ("toda x^4+x^2/2", ModelKind::TodaPeriodic, quartic(), OperatorSettings::default()),
        ("exp-toda x", ModelKind::ExpTodaPeriodic, Polynomial::monomial(1, 1.0), OperatorSettings::default()),
        ("volterra -x^2", ModelKind::VolterraPeriodic, Polynomial::monomial(2, -1.0), OperatorSettings::default()),
        ("cmv 0", ModelKind::CMVPeriodic, Polynomial::zero(), OperatorSettings { nodes_per_dim: 11, ..Default::default() }),
        ("schur 0", ModelKind::CMVPeriodic, Polynomial::zero(), OperatorSettings { real_cmv: true, ..Default::default() }),
        (
            "inb-add:2 x^3",
            ModelKind::INBAdditive(2),
            Polynomial::monomial(3, 1.0),
            OperatorSettings { nodes_per_dim: 20, ..Default::default() },
        ),
    ];
    let mut spec_ok = true;
    let mut lines = vec![];
    for (label, kind, p, s) in runs {
        let r = TransferOperator::new(kind, &p, &[], s).unwrap().spectrum(1.0).unwrap();
        let ok = r.lambda_dom.re > 0.0 && r.lambda_dom.im.abs() <= 1e-12 * r.lambda_dom.re && r.gap > 0.0;
        spec_ok &= ok;
        lines.push(format!("{label}: gap {:.3}", r.gap));
    }
    let pass = unit_ok && odd_ok && spec_ok;
    report(
        12,
        "unitarity and spectral sanity",
        pass,
        &format!("max ||z|-1| {worst_unit:.2e} over 1000 CMV draws; max odd trace {worst_odd:.2e}; {}", lines.join(", ")),
    );
    assert!(pass);
}

#[test]
fn c13_current_formula() {
    let s = OperatorSettings::default();
    let mut worst = 0.0f64;
    for alpha in [0.5, 1.0, 2.0] {
        let cm = toda_current_mean(&quadratic(), 1, alpha, &s).unwrap();
        worst = worst.max((cm.integral_form - alpha).abs()).max((cm.free_energy_form - alpha).abs());
    }
    let quad_ok = worst < 1e-3;
    let cm = toda_current_mean(&quartic(), 1, 1.0, &s).unwrap();
    let est = mean_estimate(&quartic_run().current);
    let quartic_ok = est.within(cm.integral_form, 3.0) && est.within(cm.free_energy_form, 3.0);
    let pass = quad_ok && quartic_ok;
    report(
        13,
        "current formula",
        pass,
        &format!(
            "quadratic max |J - a| {worst:.2e} (limit 1e-3); quartic {:.6} / {:.6} vs MC {:.6} (SE {:.2e})",
            cm.integral_form, cm.free_energy_form, est.value, est.se
        ),
    );
    assert!(pass);
}
