//! Discrete function spaces on periodic boxes: grid functions, the bump
//! mollifier, spectral fractional operators, anisotropic Bessel norms and
//! the maximal function.

mod corpus;
mod grid;
mod maximal;
mod mollifier;
mod spectral;

pub use corpus::{eval_bumps, sample_bumps, smooth_corpus, Bump};
pub use grid::{lp_space_time, phase_axes, AxisKind, GridFunction};
pub use maximal::{
    fd_gradient_magnitude, lipschitz_via_maximal_check, maximal_function, radius_ladder, LipschitzReport,
};
pub use mollifier::{bump_normalization, sphere_area, Mollifier};
pub use spectral::{
    apply_multiplier, apply_multiplier_with, bessel_norm, derivative, fractional_laplacian, gradient_magnitude,
    tail_energy, wavenumber_table, wavenumbers, Spectral,
};

/// `mollifier_eval`: value of `ρ_ε` at `z`.
pub fn mollifier_eval(m: &Mollifier, z: &[f64]) -> f64 {
    m.eval(z)
}
