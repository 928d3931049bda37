//! Empirical CLT check of Tr L^2 against the operator prediction.

use gge_spectra::models::ModelKind;
use gge_spectra::poly::Polynomial;
use gge_spectra::sampling::{sample_direct, GGEConfig, MeasureType};
use gge_spectra::stats::clt_check;
use gge_spectra::transferop::{clt_mean_and_variance, OperatorSettings, Part};

fn main() -> gge_spectra::Result<()> {
    let p = Polynomial::monomial(2, 0.5);
    let q = clt_mean_and_variance(ModelKind::TodaPeriodic, &p, 2, Part::Re, 1.0, &OperatorSettings::default())?;
    for (kind, mt) in [(ModelKind::TodaPeriodic, MeasureType::Type1), (ModelKind::TodaNonPeriodic, MeasureType::Type2)] {
        let cfg = GGEConfig::new(kind, 1.0, p.clone(), 128, mt);
        let batch = sample_direct(&cfg, 10_000, 4)?;
        let r = clt_check(&batch, 2, Part::Re, &q)?;
        println!(
            "{}: mean {:.5} vs {:.5} (SE {:.1e}), var {:.4} vs {:.4}, KS {:.4}",
            kind.name(),
            r.empirical_mean,
            r.predicted_a,
            r.mean_se,
            r.empirical_var,
            r.predicted_sigma2,
            r.ks_distance
        );
    }
    Ok(())
}
