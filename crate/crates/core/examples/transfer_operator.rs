//! Free energies and CLT moments from the dominant eigenvalue of the transfer operator.

use gge_spectra::models::ModelKind;
use gge_spectra::poly::Polynomial;
use gge_spectra::transferop::{clt_mean_and_variance, free_energy_type1, free_energy_type2, OperatorSettings, Part};

fn main() -> gge_spectra::Result<()> {
    let s = OperatorSettings::default();
    let quad = Polynomial::monomial(2, 0.5);
    let f1 = free_energy_type1(ModelKind::TodaPeriodic, &quad, 1.0, &s)?;
    let exact = -((2.0 * std::f64::consts::PI).sqrt() / 2.0).ln();
    println!("quadratic Toda F1(1) = {f1:.10} (closed form {exact:.10})");
    println!("quadratic Toda F2(1) = {:.10}", free_energy_type2(ModelKind::TodaPeriodic, &quad, 1.0, &s)?);

    let quartic = Polynomial::parse("x^4 + x^2/2")?;
    let q = clt_mean_and_variance(ModelKind::TodaPeriodic, &quartic, 2, Part::Re, 1.0, &s)?;
    println!(
        "quartic Toda, Tr L^2: A = {:.8}, sigma2 = {:.8}, A~ = {:.8}, sigma2~ = {:.8}, gap = {:.4}, converged = {}",
        q.a, q.sigma2, q.a_tilde, q.sigma2_tilde, q.gap, q.converged
    );
    Ok(())
}
