//! Lax matrices of each model: traces of powers and spectra of a random configuration.

use gge_spectra::models::{build_matrix, Coordinates, ModelKind};
use num_complex::Complex64 as C64;

fn main() -> gge_spectra::Result<()> {
    let n = 8;
    let toda = Coordinates::real(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.0, 0.2, -0.1], &[1.0, 0.8, 1.2, 0.9, 1.1, 0.7, 1.0, 0.6], n);
    let cmv_a: Vec<C64> = (0..n).map(|j| C64::from_polar(0.3 + 0.05 * j as f64, 0.7 * j as f64)).collect();
    let cmv = Coordinates::new(cmv_a, vec![], n);
    let positive = Coordinates::real(&[0.5, 1.2, 0.8, 1.5, 0.9, 1.1, 0.6, 1.3], &[], n);

    for (kind, c) in [
        (ModelKind::TodaPeriodic, &toda),
        (ModelKind::CMVPeriodic, &cmv),
        (ModelKind::VolterraPeriodic, &positive),
        (ModelKind::INBAdditive(2), &positive),
    ] {
        let l = build_matrix(kind, c)?;
        let traces: Vec<String> = (1..=4).map(|m| l.trace_power(m).map(|z| format!("{z:.6}"))).collect::<Result<_, _>>()?;
        println!("{}: Tr L^m for m = 1..4: {}", kind.name(), traces.join(", "));
        let ev = l.eigenvalues()?;
        let radius = ev.iter().map(|z| z.norm()).fold(0.0, f64::max);
        println!("  spectral radius {radius:.6}");
    }
    Ok(())
}
