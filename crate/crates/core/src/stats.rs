//! Monte Carlo estimators and their confrontation with transfer-operator predictions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::models::{Coordinates, ModelKind};
use crate::sampling::{sample_map, GGEConfig, LocalObservable, MeasureType, SampleBatch, Sampler, SeriesObservable};
use crate::transferop::{CLTQuantities, Part};

/// Minimum effective sample size accepted by the CLT and susceptibility checks.
pub const MIN_ESS: f64 = 500.0;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Autocorrelations `ρ_0..ρ_{max_lag}`.
fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let d: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0 = d.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return vec![1.0];
    }
    (0..=max_lag.min(n - 1))
        .map(|k| d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 / c0)
        .collect()
}

/// Integrated autocorrelation time by the initial positive (monotone) sequence estimator.
pub fn integrated_autocorr_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut chunk = 64.min(n / 2);
    let mut rho = autocorrelation(x, chunk);
    let mut k = 0;
    loop {
        if 2 * k + 1 >= rho.len() {
            if chunk >= n / 2 {
                break;
            }
            chunk = (chunk * 4).min(n / 2);
            rho = autocorrelation(x, chunk);
            continue;
        }
        let g = rho[2 * k] + rho[2 * k + 1];
        if g <= 0.0 {
            break;
        }
        let g = g.min(prev);
        tau += 2.0 * g;
        prev = g;
        k += 1;
    }
    tau.max(1.0 / n as f64).max(1e-3)
}

pub fn effective_sample_size(x: &[f64]) -> f64 {
    x.len() as f64 / integrated_autocorr_time(x)
}

/// Standard error of the mean from `batches` non-overlapping batch means.
pub fn batch_means_se(x: &[f64], batches: usize) -> f64 {
    let b = batches.min(x.len()).max(2);
    let len = x.len() / b;
    let means: Vec<f64> = (0..b).map(|i| mean(&x[i * len..(i + 1) * len])).collect();
    (variance(&means) / b as f64).sqrt()
}

/// Geweke z-score comparing the first `first` and last `last` fractions of a chain.
pub fn geweke_z(x: &[f64], first: f64, last: f64) -> Result<f64> {
    let n = x.len();
    let na = (first * n as f64) as usize;
    let nb = (last * n as f64) as usize;
    if na < 10 || nb < 10 || na + nb > n {
        return Err(Error::Config(format!("Geweke split {first}/{last} too small for {n} samples")));
    }
    let a = &x[..na];
    let b = &x[n - nb..];
    let va = variance(a) * integrated_autocorr_time(a) / na as f64;
    let vb = variance(b) * integrated_autocorr_time(b) / nb as f64;
    if va + vb == 0.0 {
        return Ok(0.0);
    }
    Ok((mean(a) - mean(b)) / (va + vb).sqrt())
}

/// Kolmogorov–Smirnov distance of a sample to the standard normal law.
pub fn ks_distance(z: &[f64]) -> f64 {
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal_cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    if lam < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=200 {
        let t = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lam).powi(2)).exp();
        p += t;
        if t.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Anderson–Darling statistic against the standard normal law.
pub fn anderson_darling(z: &[f64]) -> f64 {
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let nf = n as f64;
    let eps = 1e-300;
    let sum: f64 = (0..n)
        .map(|i| {
            let fi = normal_cdf(s[i]).clamp(eps, 1.0 - 1e-16);
            let fj = normal_cdf(s[n - 1 - i]).clamp(eps, 1.0 - 1e-16);
            (2.0 * i as f64 + 1.0) * (fi.ln() + (1.0 - fj).ln())
        })
        .sum();
    -nf - sum / nf
}

/// Sup of `|F_emp - Φ|` over the points of a uniform grid of `intervals` cells on `[-span, span]`.
pub fn sup_cdf_distance(z: &[f64], intervals: usize, span: f64) -> f64 {
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    (0..=intervals)
        .map(|k| {
            let x = -span + 2.0 * span * k as f64 / intervals as f64;
            let cnt = s.partition_point(|&v| v <= x) as f64;
            (cnt / n - normal_cdf(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Predicted per-site centering and variance of an observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "A")]
    pub a: f64,
    pub sigma2: f64,
}

impl Prediction {
    /// The type-1 pair `(A, σ²)` or the type-2 pair `(∫A(αx)dx, ∫σ²(αx)dx)`.
    pub fn from_quantities(q: &CLTQuantities, measure: MeasureType) -> Self {
        match measure {
            MeasureType::Type1 => Self { a: q.a, sigma2: q.sigma2 },
            MeasureType::Type2 => Self { a: q.a_tilde, sigma2: q.sigma2_tilde },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CLTReport {
    pub n: usize,
    pub sample_count: usize,
    pub observable: String,
    /// Empirical mean of the observable divided by `N`.
    pub empirical_mean: f64,
    pub mean_se: f64,
    /// Empirical variance divided by `N`.
    pub empirical_var: f64,
    pub var_se: f64,
    #[serde(rename = "predicted_A")]
    pub predicted_a: f64,
    pub predicted_sigma2: f64,
    pub ks_distance: f64,
    pub ks_pvalue: f64,
    pub anderson_darling: f64,
    /// Quantiles at 1, 5, 25, 50, 75, 95, 99 percent of the standardized sample.
    pub standardized_quantiles: Vec<f64>,
    pub ess: f64,
    /// `|mean/N - A| < 3 SE`.
    pub mean_ok: bool,
    /// `|var/N - σ²| < max(3 SE, 5% σ²)`.
    pub var_ok: bool,
}

fn quantiles(z: &[f64], ps: &[f64]) -> Vec<f64> {
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    ps.iter()
        .map(|&p| {
            let h = p * (s.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(s.len() - 1);
            s[lo] + (h - lo as f64) * (s[hi] - s[lo])
        })
        .collect()
}

/// CLT comparison of a series of extensive observables at lattice size `n`.
pub fn clt_check_series(series: &[f64], n: usize, observable: &str, predicted: Prediction) -> Result<CLTReport> {
    if predicted.sigma2 <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ess = effective_sample_size(series);
    if ess < MIN_ESS {
        return Err(Error::InsufficientEss { ess, required: MIN_ESS });
    }
    let nf = n as f64;
    let m = mean(series);
    let v = variance(series);
    let mean_se = (v / ess).sqrt() / nf;
    let sq: Vec<f64> = series.iter().map(|x| (x - m) * (x - m)).collect();
    let var_se = (variance(&sq) / effective_sample_size(&sq)).sqrt() / nf;
    let scale = (nf * predicted.sigma2).sqrt();
    let z: Vec<f64> = series.iter().map(|x| (x - nf * predicted.a) / scale).collect();
    let d = ks_distance(&z);
    let (em, ev) = (m / nf, v / nf);
    Ok(CLTReport {
        n,
        sample_count: series.len(),
        observable: observable.to_string(),
        empirical_mean: em,
        mean_se,
        empirical_var: ev,
        var_se,
        predicted_a: predicted.a,
        predicted_sigma2: predicted.sigma2,
        ks_distance: d,
        ks_pvalue: kolmogorov_pvalue(d, ess.round() as usize),
        anderson_darling: anderson_darling(&z),
        standardized_quantiles: quantiles(&z, &[0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99]),
        ess,
        mean_ok: (em - predicted.a).abs() < 3.0 * mean_se,
        var_ok: (ev - predicted.sigma2).abs() < (3.0 * var_se).max(0.05 * predicted.sigma2),
    })
}

/// CLT comparison for `Tr (Re|Im) L^s` over a stored batch.
pub fn clt_check(batch: &SampleBatch, s: usize, part: Part, predicted: &CLTQuantities) -> Result<CLTReport> {
    let obs = match part {
        Part::Re => SeriesObservable::ReTracePower(s),
        Part::Im => SeriesObservable::ImTracePower(s),
    };
    let series = crate::sampling::observable_series(batch, obs)?;
    let label = format!("Tr {} L^{s}", if part == Part::Re { "Re" } else { "Im" });
    clt_check_series(&series, batch.config.n, &label, Prediction::from_quantities(predicted, batch.config.measure_type))
}

/// Estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `|value - target| < k · se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() < k * self.se
    }
}

fn cov(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// `(1/N) Cov(X, Y)` with a block-jackknife standard error.
pub fn susceptibility_from_series(x: &[f64], y: &[f64], n: usize, blocks: usize) -> Result<Estimate> {
    let ess = effective_sample_size(x).min(effective_sample_size(y));
    if ess < MIN_ESS {
        return Err(Error::InsufficientEss { ess, required: MIN_ESS });
    }
    let nf = n as f64;
    let value = cov(x, y) / nf;
    let b = blocks.min(x.len() / 2).max(2);
    let len = x.len() / b;
    let used = len * b;
    let reps: Vec<f64> = (0..b)
        .map(|k| {
            let keep = |v: &[f64]| -> Vec<f64> {
                v[..used].iter().enumerate().filter(|(i, _)| i / len != k).map(|(_, &t)| t).collect()
            };
            cov(&keep(x), &keep(y)) / nf
        })
        .collect();
    let rm = mean(&reps);
    let var = (b as f64 - 1.0) / b as f64 * reps.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>();
    Ok(Estimate { value, se: var.sqrt() })
}

/// Empirical susceptibility `(1/N) Cov(Tr Re L^m, Tr Re L^n)`.
pub fn susceptibility_empirical(batch: &SampleBatch, m: usize, n: usize) -> Result<Estimate> {
    let x = crate::sampling::observable_series(batch, SeriesObservable::ReTracePower(m))?;
    let y = if m == n { x.clone() } else { crate::sampling::observable_series(batch, SeriesObservable::ReTracePower(n))? };
    susceptibility_from_series(&x, &y, batch.config.n, 100)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub distances: Vec<usize>,
    pub cov_estimates: Vec<f64>,
    pub cov_se: Vec<f64>,
    /// Distances retained for the fit.
    pub fit_distances: Vec<usize>,
    pub fitted_log_slope: f64,
    pub slope_se: f64,
    /// 95% confidence interval of the slope.
    pub slope_ci: [f64; 2],
    pub fit_r2: f64,
    pub mu_hat: f64,
}

/// Per-sample statistics for translation-averaged covariances:
/// `[mean I, mean J, X_0, …, X_D]` with `X_d = (1/N) Σ_i I_i J_{i+d}`.
pub fn decay_row(kind: ModelKind, coords: &Coordinates, i: LocalObservable, j: LocalObservable, max_distance: usize) -> Result<Vec<f64>> {
    let pi = i.profile(kind, coords)?;
    let pj = j.profile(kind, coords)?;
    let n = pi.len();
    let nf = n as f64;
    let mut r = Vec::with_capacity(max_distance + 3);
    r.push(pi.iter().sum::<f64>() / nf);
    r.push(pj.iter().sum::<f64>() / nf);
    for d in 0..=max_distance {
        r.push((0..n).map(|s| pi[s] * pj[(s + d) % n]).sum::<f64>() / nf);
    }
    Ok(r)
}

fn covariances(rows: &[Vec<f64>], max_distance: usize) -> Vec<f64> {
    let k = rows.len() as f64;
    let col = |c: usize| rows.iter().map(|r| r[c]).sum::<f64>() / k;
    let (mi, mj) = (col(0), col(1));
    (0..=max_distance).map(|d| col(2 + d) - mi * mj).collect()
}

/// Weighted least squares of `y` on `x`: slope, slope SE and weighted R².
fn weighted_fit(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let icpt = ym - slope * xm;
    let ss_res: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (c - icpt - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().zip(w).map(|(c, b)| b * (c - ym).powi(2)).sum();
    let dof = x.len() as f64 - 2.0;
    let scale = if dof > 0.0 { (ss_res / dof).max(1.0) } else { 1.0 };
    let se = (scale / sxx).sqrt();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, se, r2)
}

/// Exponential-decay fit of translation-averaged covariances from [`decay_row`] rows.
///
/// Standard errors come from `batches` batch means; the fit uses the contiguous run of
/// distances `d ≥ 1` where `|cov| > 5 SE`.
pub fn decay_from_rows(rows: &[Vec<f64>], max_distance: usize, batches: usize) -> Result<DecayReport> {
    let b = batches.min(rows.len() / 2).max(2);
    let len = rows.len() / b;
    let est = covariances(rows, max_distance);
    let per_batch: Vec<Vec<f64>> = (0..b).map(|k| covariances(&rows[k * len..(k + 1) * len], max_distance)).collect();
    let se: Vec<f64> = (0..=max_distance)
        .map(|d| {
            let v: Vec<f64> = per_batch.iter().map(|c| c[d]).collect();
            (variance(&v) / b as f64).sqrt()
        })
        .collect();
    let mut fd = vec![];
    for d in 1..=max_distance {
        if se[d] > 0.0 && est[d].abs() > 5.0 * se[d] {
            fd.push(d);
        } else if !fd.is_empty() {
            break;
        }
    }
    let mut report = DecayReport {
        distances: (0..=max_distance).collect(),
        cov_estimates: est.clone(),
        cov_se: se.clone(),
        fit_distances: fd.clone(),
        fitted_log_slope: f64::NAN,
        slope_se: f64::NAN,
        slope_ci: [f64::NAN, f64::NAN],
        fit_r2: f64::NAN,
        mu_hat: f64::NAN,
    };
    if fd.len() < 3 {
        return Err(Error::NoDecayDetected);
    }
    let x: Vec<f64> = fd.iter().map(|&d| d as f64).collect();
    let y: Vec<f64> = fd.iter().map(|&d| est[d].abs().ln()).collect();
    let w: Vec<f64> = fd.iter().map(|&d| (est[d] / se[d]).powi(2)).collect();
    let (slope, sse, r2) = weighted_fit(&x, &y, &w);
    report.fitted_log_slope = slope;
    report.slope_se = sse;
    report.slope_ci = [slope - 1.96 * sse, slope + 1.96 * sse];
    report.fit_r2 = r2;
    report.mu_hat = slope.exp();
    Ok(report)
}

/// Decay of `Cov(I(x_1), J(x_j))` with distance over a stored periodic type-1 batch.
pub fn correlation_decay(batch: &SampleBatch, i: LocalObservable, j: LocalObservable, max_distance: usize) -> Result<DecayReport> {
    if batch.config.measure_type != MeasureType::Type1 {
        return Err(Error::Config("correlation decay needs a periodic type-1 batch".into()));
    }
    let kind = batch.config.lattice_kind()?;
    if 2 * max_distance > batch.config.n {
        return Err(Error::Config(format!("max distance {max_distance} exceeds N/2")));
    }
    let rows: Vec<Vec<f64>> = batch.configs.par_iter().map(|c| decay_row(kind, c, i, j, max_distance)).collect::<Result<_>>()?;
    decay_from_rows(&rows, max_distance, 50)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenReport {
    #[serde(rename = "Ns")]
    pub ns: Vec<usize>,
    pub sample_counts: Vec<usize>,
    pub sup_distances: Vec<f64>,
    /// `sup_distance · √N`.
    pub scaled: Vec<f64>,
}

impl BerryEsseenReport {
    /// Largest over smallest entry of the scaled column.
    pub fn scaled_ratio(&self) -> f64 {
        let mx = self.scaled.iter().copied().fold(f64::MIN, f64::max);
        let mn = self.scaled.iter().copied().fold(f64::MAX, f64::min);
        mx / mn
    }
}

/// Number of grid cells of the Berry–Esseen sup metric.
pub const BE_INTERVALS: usize = 512;

/// Sup-CDF distances of the standardized `Tr Re L^s` across lattice sizes.
pub fn berry_esseen_scan(
    config: &GGEConfig,
    s: usize,
    ns: &[usize],
    samples_per_n: usize,
    sampler: Sampler,
    rng_seed: u64,
    predicted: impl Fn(usize) -> Result<Prediction>,
) -> Result<BerryEsseenReport> {
    let mut report = BerryEsseenReport { ns: ns.to_vec(), sample_counts: vec![], sup_distances: vec![], scaled: vec![] };
    for (idx, &n) in ns.iter().enumerate() {
        let pred = predicted(n)?;
        if pred.sigma2 <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        let cfg = GGEConfig { n, ..config.clone() };
        let kind = cfg.lattice_kind()?;
        let obs = SeriesObservable::ReTracePower(s);
        let (vals, _) = sample_map(&cfg, sampler, samples_per_n, rng_seed.wrapping_add(idx as u64), |c| obs.eval(kind, c))?;
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        let nf = n as f64;
        let z: Vec<f64> = vals.iter().map(|x| (x - nf * pred.a) / (nf * pred.sigma2).sqrt()).collect();
        let d = sup_cdf_distance(&z, BE_INTERVALS, 4.0);
        report.sample_counts.push(vals.len());
        report.sup_distances.push(d);
        report.scaled.push(d * nf.sqrt());
    }
    Ok(report)
}
