use super::grid::{phase_axes, GridFunction};
use crate::rng::{Domain, Stream};

/// Isotropic Gaussian bump `amplitude · exp(-|z - center|² / (2 width²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        self.amplitude * (-0.5 * r2 / (self.width * self.width)).exp()
    }
}

/// Seeded family of smooth test functions on phase space: each member is a
/// sum of one to three Gaussian bumps with centers in `[-spread, spread]^{2d}`
/// and widths in `[0.6, 1.0]`. Amplitudes may be negative.
pub fn smooth_corpus(seed: u64, count: usize, d: usize, spread: f64) -> Vec<Vec<Bump>> {
    (0..count)
        .map(|i| {
            let mut rng = Stream::new(seed, Domain::Corpus, i as u64);
            let bumps = 1 + (rng.uniform() * 3.0) as usize;
            (0..bumps)
                .map(|_| Bump {
                    center: (0..2 * d).map(|_| spread * (2.0 * rng.uniform() - 1.0)).collect(),
                    width: 0.6 + 0.4 * rng.uniform(),
                    amplitude: 2.0 * rng.uniform() - 0.5,
                })
                .collect()
        })
        .collect()
}

pub fn eval_bumps(bumps: &[Bump], z: &[f64]) -> f64 {
    bumps.iter().map(|b| b.eval(z)).sum()
}

/// Sample a corpus member on a `n^{2d}` phase-space grid.
pub fn sample_bumps(bumps: &[Bump], d: usize, n: usize, half_width: f64) -> GridFunction {
    GridFunction::from_fn(&phase_axes(d), n, half_width, |z| eval_bumps(bumps, z))
}
