#![allow(dead_code)]

use gge_spectra::models::{Coordinates, Family, ModelKind};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const KINDS: [ModelKind; 12] = [
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

/// Admissible random coordinates of `kind` at lattice size `n`.
pub fn random_coords(kind: ModelKind, n: usize, rng: &mut ChaCha8Rng) -> Coordinates {
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

/// Smallest admissible even lattice size at or above `n`.
pub fn admissible_n(kind: ModelKind, n: usize) -> usize {
    if kind.is_cmv() { n + n % 2 } else { n }
}
