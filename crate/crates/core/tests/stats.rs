use gge_spectra::stats::{
    batch_means_se, berry_esseen_scan, clt_check_series, decay_from_rows, effective_sample_size, ks_distance,
    kolmogorov_pvalue, mean, sup_cdf_distance, susceptibility_from_series, variance, Prediction,
};
use gge_spectra::models::ModelKind;
use gge_spectra::poly::Polynomial;
use gge_spectra::sampling::{GGEConfig, MeasureType, Sampler};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gauss(n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let g = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| g.sample(&mut r)).collect()
}

#[test]
fn clt_check_is_unbiased_on_synthetic_sums() {
    // extensive observable X = N·A + √(Nσ²)·Z
    let (n, a, s2) = (100usize, 1.7, 0.6);
    let z = gauss(40_000, 1);
    let x: Vec<f64> = z.iter().map(|t| n as f64 * a + (n as f64 * s2).sqrt() * t).collect();
    let r = clt_check_series(&x, n, "X", Prediction { a, sigma2: s2 }).unwrap();
    assert!(r.mean_ok && r.var_ok, "{r:?}");
    assert!(r.ks_distance < 0.01 && r.ks_pvalue > 0.01);
    let wrong = clt_check_series(&x, n, "X", Prediction { a: a + 0.01, sigma2: s2 }).unwrap();
    assert!(!wrong.mean_ok);
}

#[test]
fn mean_standard_errors_cover_truth() {
    let mut hits = 0;
    for seed in 0..200 {
        let x = gauss(500, 100 + seed);
        let se = (variance(&x) / effective_sample_size(&x)).sqrt();
        if mean(&x).abs() < 2.0 * se {
            hits += 1;
        }
        assert!((batch_means_se(&x, 20) / se - 1.0).abs() < 0.8);
    }
    // 95.4% nominal coverage; 200 trials
    assert!((180..=200).contains(&hits), "{hits}");
}

#[test]
fn ks_statistics() {
    let z = gauss(20_000, 2);
    assert!(ks_distance(&z) < 0.015);
    let shifted: Vec<f64> = z.iter().map(|t| t + 0.2).collect();
    assert!(ks_distance(&shifted) > 0.07);
    assert!(kolmogorov_pvalue(0.2, 1000) < 1e-10);
    assert!(kolmogorov_pvalue(0.001, 1000) > 0.999);
    assert!(sup_cdf_distance(&z, 512, 4.0) <= ks_distance(&z) + 1e-12);
}

#[test]
fn decay_fit_recovers_geometric_rate() {
    // X_d rows with covariance 0.5^d: an AR(1) field along the lattice
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Normal::new(0.0, 1.0).unwrap();
    let (n, max_d, phi) = (64usize, 6usize, 0.5f64);
    let rows: Vec<Vec<f64>> = (0..20_000)
        .map(|_| {
            let mut x = vec![0.0; n];
            x[0] = g.sample(&mut rng);
            for i in 1..n {
                x[i] = phi * x[i - 1] + (1.0 - phi * phi).sqrt() * g.sample(&mut rng);
            }
            let m = x.iter().sum::<f64>() / n as f64;
            let mut r = vec![m, m];
            for d in 0..=max_d {
                r.push((0..n - d).map(|s| x[s] * x[s + d]).sum::<f64>() / (n - d) as f64);
            }
            r
        })
        .collect();
    let r = decay_from_rows(&rows, max_d, 50).unwrap();
    assert!((r.mu_hat - phi).abs() < 0.05, "{r:?}");
    assert!(r.slope_ci[1] < 0.0 && r.fit_r2 > 0.9);
}

#[test]
fn berry_esseen_scan_on_gaussian_ensemble() {
    let cfg = GGEConfig::new(ModelKind::TodaPeriodic, 1.0, Polynomial::monomial(2, 0.5), 16, MeasureType::Type1);
    let rep = berry_esseen_scan(&cfg, 2, &[16, 64], 20_000, Sampler::Direct, 4, |_| Ok(Prediction { a: 3.0, sigma2: 6.0 })).unwrap();
    assert_eq!(rep.sample_counts, vec![20_000, 20_000]);
    assert!(rep.sup_distances[1] < rep.sup_distances[0]);
    assert!(rep.scaled_ratio() < 3.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn susceptibility_estimate_is_symmetric(seed in any::<u64>(), rho in -0.9f64..0.9) {
        let a = gauss(2000, seed);
        let b = gauss(2000, seed.wrapping_add(1));
        let y: Vec<f64> = a.iter().zip(&b).map(|(u, v)| rho * u + (1.0 - rho * rho).sqrt() * v).collect();
        let xy = susceptibility_from_series(&a, &y, 10, 50).unwrap();
        let yx = susceptibility_from_series(&y, &a, 10, 50).unwrap();
        prop_assert!((xy.value - yx.value).abs() < 1e-14);
        prop_assert!((xy.se - yx.se).abs() < 1e-12);
        prop_assert!((xy.value * 10.0 - rho).abs() < 6.0 * xy.se * 10.0 + 1e-9);
    }

    #[test]
    fn ks_distance_is_shift_monotone(seed in any::<u64>(), shift in 0.05f64..1.0) {
        let z = gauss(2000, seed);
        let s1: Vec<f64> = z.iter().map(|t| t + shift).collect();
        let s2: Vec<f64> = z.iter().map(|t| t + 2.0 * shift).collect();
        prop_assert!(ks_distance(&s2) >= ks_distance(&s1) - 0.03);
    }
}
