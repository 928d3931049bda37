use gge_spectra::models::ModelKind;
use gge_spectra::poly::Polynomial;
use gge_spectra::transferop::{
    build_kernel, clt_mean_and_variance, discretize, dominant_spectrum, susceptibility, OperatorSettings, Part,
};
use gge_spectra::Error;

fn settings() -> OperatorSettings {
    OperatorSettings { nodes_per_dim: 32, ..Default::default() }
}

#[test]
fn twisted_eigenvalue_is_dominated_by_untwisted() {
    let cases = [
        (ModelKind::TodaPeriodic, "x^4 + x^2/2", 2),
        (ModelKind::TodaPeriodic, "x^2/2", 1),
        (ModelKind::ExpTodaPeriodic, "x", 2),
        (ModelKind::VolterraPeriodic, "-x^2", 2),
    ];
    for (kind, p, s) in cases {
        let p = Polynomial::parse(p).unwrap();
        let log_l = |t: f64| {
            let k = build_kernel(kind, &p, s, Part::Re, 1.0, t, &settings()).unwrap();
            dominant_spectrum(&discretize(&k, 32).unwrap()).unwrap().log_lambda.re
        };
        let l0 = log_l(0.0);
        for t in [0.05, 0.3, 1.0, 3.0] {
            assert!(log_l(t) <= l0 + 1e-10, "{} t = {t}", kind.name());
        }
    }
}

#[test]
fn rescaled_gaussian_moments() {
    // P = c x²/2: a ~ N(0, 1/c), b² ~ Gamma(α, 1/c)
    for c in [0.5, 2.0] {
        for alpha in [0.5, 1.5] {
            let q = clt_mean_and_variance(ModelKind::TodaPeriodic, &Polynomial::monomial(2, c / 2.0), 2, Part::Re, alpha, &settings())
                .unwrap();
            assert!((q.a - (1.0 + 2.0 * alpha) / c).abs() < 1e-5, "A at c={c}, a={alpha}: {}", q.a);
            assert!((q.sigma2 - (2.0 + 4.0 * alpha) / (c * c)).abs() < 1e-4, "sigma2 at c={c}: {}", q.sigma2);
            // type-2 values integrate the pressure: Ã = (1 + α)/c, σ̃² = (2 + 2α)/c²
            assert!((q.a_tilde - (1.0 + alpha) / c).abs() < 1e-5, "A~ {}", q.a_tilde);
            assert!((q.sigma2_tilde - (2.0 + 2.0 * alpha) / (c * c)).abs() < 1e-4, "sigma2~ {}", q.sigma2_tilde);
            assert!(q.converged && q.a_imag.abs() < 1e-8);
        }
    }
}

#[test]
fn susceptibility_is_symmetric() {
    let p = Polynomial::parse("x").unwrap();
    let s = OperatorSettings { deltas: [2e-3, 1e-3], ..settings() };
    let c12 = susceptibility(ModelKind::ExpTodaPeriodic, &p, 1, 2, 1.0, &s).unwrap();
    let c21 = susceptibility(ModelKind::ExpTodaPeriodic, &p, 2, 1, 1.0, &s).unwrap();
    assert!((c12 - c21).abs() < 1e-6 * (1.0 + c12.abs()));
    assert!(c12 > 0.0);
}

#[test]
fn unsupported_cases_are_rejected() {
    let odd = Polynomial::parse("x^3").unwrap();
    let e = clt_mean_and_variance(ModelKind::TodaPeriodic, &odd, 2, Part::Re, 1.0, &settings()).unwrap_err();
    assert!(matches!(e, Error::UnsupportedPotential(_)), "{e:?}");
    let p = Polynomial::parse("x^2").unwrap();
    assert!(clt_mean_and_variance(ModelKind::INBMultiplicative(1), &p, 2, Part::Re, 1.0, &settings()).is_err());
    assert!(clt_mean_and_variance(ModelKind::TodaPeriodic, &p, 2, Part::Im, 1.0, &settings()).is_err());
}
