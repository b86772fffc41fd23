use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

/// The scaled bump `ρ_ε(z) = ε^{-n} ρ(z/ε)` on `R^n`, where
/// `ρ(z) = c·exp(-1/(1-|z|²))` inside the unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Mollifier {
    epsilon: f64,
    dim: usize,
    norm: f64,
}

impl Mollifier {
    pub fn new(epsilon: f64, dim: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::validation("mollifier scale must lie in (0, 1]"));
        }
        if dim == 0 {
            return Err(Error::validation("dimension must be positive"));
        }
        Ok(Mollifier { epsilon, dim, norm: bump_normalization(dim) })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unit-scale profile `ρ`.
    pub fn profile(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().map(|x| x * x).sum();
        self.profile_r2(r2)
    }

    pub fn profile_r2(&self, r2: f64) -> f64 {
        if r2 >= 1.0 {
            0.0
        } else {
            self.norm * (-1.0 / (1.0 - r2)).exp()
        }
    }

    /// `ρ_ε(z)`; zero for `|z| ≥ ε`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        let inv = 1.0 / self.epsilon;
        let r2: f64 = z.iter().map(|x| (x * inv) * (x * inv)).sum();
        self.profile_r2(r2) * inv.powi(self.dim as i32)
    }
}

/// `1 / ∫_{|z|<1} exp(-1/(1-|z|²)) dz` in `dim` dimensions.
pub fn bump_normalization(dim: usize) -> f64 {
    let gl = GaussLegendre::new(NonZeroUsize::new(24).unwrap());
    let panels = 256;
    let n = dim as i32;
    let mut radial = 0.0;
    for i in 0..panels {
        let a = i as f64 / panels as f64;
        let b = (i + 1) as f64 / panels as f64;
        radial += gl.integrate(a, b, |r| {
            let q = 1.0 - r * r;
            if q <= 0.0 {
                0.0
            } else {
                r.powi(n - 1) * (-1.0 / q).exp()
            }
        });
    }
    1.0 / (sphere_area(dim) * radial)
}

/// Surface area of the unit sphere in `R^dim`.
pub fn sphere_area(dim: usize) -> f64 {
    let pi = std::f64::consts::PI;
    2.0 * pi.powf(dim as f64 / 2.0) / gamma_half(dim)
}

/// `Γ(n/2)` for a positive integer `n`.
fn gamma_half(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        (1..n / 2).map(|k| k as f64).product()
    } else {
        let mut g = std::f64::consts::PI.sqrt();
        let mut x = 0.5;
        while x < n as f64 / 2.0 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_values() {
        assert!((gamma_half(1) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!((gamma_half(4) - 1.0).abs() < 1e-15);
        assert!((gamma_half(5) - 0.75 * std::f64::consts::PI.sqrt()).abs() < 1e-14);
        assert!((sphere_area(2) - 2.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-13);
    }
}
