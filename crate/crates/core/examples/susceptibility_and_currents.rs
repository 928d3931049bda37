//! Susceptibility matrix and mean currents of the Toda lattice.

use gge_spectra::models::ModelKind;
use gge_spectra::poly::Polynomial;
use gge_spectra::sampling::{sample_direct, GGEConfig, MeasureType};
use gge_spectra::stats::susceptibility_empirical;
use gge_spectra::transferop::{susceptibility, toda_current_mean, OperatorSettings};

fn main() -> gge_spectra::Result<()> {
    let s = OperatorSettings::default();
    let p = Polynomial::monomial(2, 0.5);
    let batch = sample_direct(&GGEConfig::new(ModelKind::TodaPeriodic, 1.0, p.clone(), 64, MeasureType::Type1), 10_000, 5)?;
    for (m, n) in [(1, 1), (2, 2), (1, 2)] {
        let op = susceptibility(ModelKind::TodaPeriodic, &p, m, n, 1.0, &s)?;
        let e = susceptibility_empirical(&batch, m, n)?;
        println!("C_{{{m},{n}}}: operator {op:.6}, empirical {:.4} +- {:.4}", e.value, e.se);
    }
    let j = toda_current_mean(&p, 1, 1.0, &OperatorSettings { nodes_per_dim: 24, type2_nodes: 8, ..s })?;
    println!("mean current at alpha = 1: {:.8} (integral) / {:.8} (free energy)", j.integral_form, j.free_energy_form);
    Ok(())
}
