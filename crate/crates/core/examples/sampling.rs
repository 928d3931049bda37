//! Direct and Metropolis-within-Gibbs sampling of a Gibbs ensemble.

use gge_spectra::models::ModelKind;
use gge_spectra::poly::Polynomial;
use gge_spectra::sampling::{observable_series, sample_direct, sample_mcmc, GGEConfig, MeasureType, SeriesObservable};
use gge_spectra::stats::{effective_sample_size, mean};

fn main() -> gge_spectra::Result<()> {
    let n = 32;
    let quad = GGEConfig::new(ModelKind::TodaPeriodic, 1.0, Polynomial::monomial(2, 0.5), n, MeasureType::Type1);
    let direct = sample_direct(&quad, 5000, 1)?;
    let t2 = observable_series(&direct, SeriesObservable::TracePower(2))?;
    println!("direct quadratic Toda: E[Tr L^2]/N = {:.5} (exact 3)", mean(&t2) / n as f64);

    let quartic = GGEConfig { potential: Polynomial::parse("x^4 + x^2/2")?, ..quad };
    let batch = sample_mcmc(&quartic, 2000, 4, 500, 2)?;
    let t2 = observable_series(&batch, SeriesObservable::TracePower(2))?;
    println!(
        "MCMC quartic Toda: E[Tr L^2]/N = {:.5}, acceptance {:.3}, ESS {:.0}",
        mean(&t2) / n as f64,
        batch.diagnostics.acceptance_rate,
        effective_sample_size(&t2)
    );

    let beta = GGEConfig::new(ModelKind::CMVNonPeriodic, 1.0, Polynomial::zero(), n, MeasureType::Type2);
    let batch = sample_direct(&beta, 2000, 3)?;
    let e1 = observable_series(&batch, SeriesObservable::ReTracePower(1))?;
    println!("circular beta-ensemble: E[Re Tr E]/N = {:.5}", mean(&e1) / n as f64);
    Ok(())
}
