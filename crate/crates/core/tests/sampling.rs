use gge_spectra::models::ModelKind;
use gge_spectra::poly::Polynomial;
use gge_spectra::sampling::{
    read_binary, sample_direct, sample_mcmc, sample_series, write_binary, GGEConfig, MeasureType, Sampler,
    SeriesObservable,
};
use gge_spectra::stats::{effective_sample_size, mean, variance};

/// Mean of `x^k` with its standard error from the effective sample size.
fn raw_moment(x: &[f64], k: i32) -> (f64, f64) {
    let v: Vec<f64> = x.iter().map(|t| t.powi(k)).collect();
    (mean(&v), (variance(&v) / effective_sample_size(&v)).sqrt())
}

fn compare_moments(label: &str, a: &[f64], b: &[f64]) {
    for k in 1..=4 {
        let (ma, sa) = raw_moment(a, k);
        let (mb, sb) = raw_moment(b, k);
        let z = (ma - mb).abs() / (sa * sa + sb * sb).sqrt();
        assert!(z < 4.0, "{label}: moment {k} differs by {z:.2} SE ({ma} vs {mb})");
    }
}

fn per_site(cfg: &GGEConfig, sampler: Sampler, count: usize, seed: u64, obs: SeriesObservable) -> Vec<f64> {
    let (cols, _) = sample_series(cfg, sampler, count, seed, &[obs]).unwrap();
    cols[0].iter().map(|x| x / cfg.n as f64).collect()
}

#[test]
fn direct_and_mcmc_agree_on_moments() {
    let mcmc = Sampler::Mcmc { thin: 2, burn_in: 500, chains: 2 };
    let cases = [
        (ModelKind::TodaPeriodic, MeasureType::Type1, "x^2/2", SeriesObservable::TracePower(2)),
        (ModelKind::TodaNonPeriodic, MeasureType::Type2, "x^2/2", SeriesObservable::TracePower(2)),
        (ModelKind::ExpTodaPeriodic, MeasureType::Type1, "x", SeriesObservable::TracePower(1)),
        (ModelKind::VolterraPeriodic, MeasureType::Type1, "-x^2", SeriesObservable::TracePower(2)),
        (ModelKind::CMVPeriodic, MeasureType::Type1, "0", SeriesObservable::ReTracePower(1)),
    ];
    for (kind, mt, p, obs) in cases {
        let cfg = GGEConfig::new(kind, 1.0, Polynomial::parse(p).unwrap(), 16, mt);
        let d = per_site(&cfg, Sampler::Direct, 20_000, 1, obs);
        let m = per_site(&cfg, mcmc, 20_000, 2, obs);
        compare_moments(&format!("{} {p}", kind.name()), &d, &m);
    }
}

#[test]
fn real_beta_mean_matches_chi_parameters() {
    // E Tr T² = N + 2 Σ_{j=1}^{N-1} α(1 - j/N) = N + α(N - 1)
    let n = 40;
    let alpha = 1.5;
    let cfg = GGEConfig::new(ModelKind::TodaNonPeriodic, alpha, Polynomial::monomial(2, 0.5), n, MeasureType::Type2);
    let x = per_site(&cfg, Sampler::Direct, 40_000, 3, SeriesObservable::TracePower(2));
    let exact = (n as f64 + alpha * (n as f64 - 1.0)) / n as f64;
    let (m, se) = raw_moment(&x, 1);
    assert!((m - exact).abs() < 4.0 * se, "{m} vs {exact} (SE {se})");
}

fn ks_two_sample(x: &[f64], y: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn periodic_marginals_are_exchangeable() {
    let n = 16;
    let cfg = GGEConfig::new(ModelKind::TodaPeriodic, 1.0, Polynomial::parse("x^4 + x^2/2").unwrap(), n, MeasureType::Type1);
    let batch = sample_mcmc(&cfg, 100_000, 2, 1000, 4).unwrap();
    let site = |j: usize| -> Vec<f64> { batch.configs.iter().map(|c| c.b[j]).collect() };
    let d = ks_two_sample(&site(0), &site(n / 2));
    assert!(d < 0.02, "b_0 vs b_8: {d}");
    let site_a = |j: usize| -> Vec<f64> { batch.configs.iter().map(|c| c.a[j].re).collect() };
    let d = ks_two_sample(&site_a(3), &site_a(11));
    assert!(d < 0.02, "a_3 vs a_11: {d}");
}

#[test]
fn runs_are_reproducible() {
    let cfg = GGEConfig::new(ModelKind::TodaPeriodic, 1.0, Polynomial::parse("x^4").unwrap(), 12, MeasureType::Type1);
    let a = sample_mcmc(&cfg, 200, 3, 100, 9).unwrap();
    let b = sample_mcmc(&cfg, 200, 3, 100, 9).unwrap();
    let c = sample_mcmc(&cfg, 200, 3, 100, 10).unwrap();
    assert_eq!(a.configs, b.configs);
    assert_ne!(a.configs, c.configs);
    let d1 = sample_direct(&GGEConfig { potential: Polynomial::monomial(2, 0.5), ..cfg.clone() }, 100, 4).unwrap();
    let d2 = sample_direct(&GGEConfig { potential: Polynomial::monomial(2, 0.5), ..cfg }, 100, 4).unwrap();
    assert_eq!(d1.configs, d2.configs);
}

#[test]
fn binary_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    for (kind, p) in [(ModelKind::TodaPeriodic, "x^2/2"), (ModelKind::CMVPeriodic, "0")] {
        let cfg = GGEConfig::new(kind, 0.7, Polynomial::parse(p).unwrap(), 10, MeasureType::Type1);
        let batch = sample_direct(&cfg, 50, 5).unwrap();
        write_binary(&batch, &path).unwrap();
        let back = read_binary(&path).unwrap();
        assert_eq!(back.configs, batch.configs);
        assert_eq!(back.config, batch.config);
    }
}

#[test]
fn unsupported_direct_sampling_is_reported() {
    let cfg = GGEConfig::new(ModelKind::TodaPeriodic, 1.0, Polynomial::parse("x^4").unwrap(), 12, MeasureType::Type1);
    assert!(sample_direct(&cfg, 10, 0).is_err());
}
