//! Gauss rules re-expressed for the two uses in this crate: expectations
//! under a standard normal, and integrals over `[-1, 1]`.

use std::num::NonZeroUsize;

use gauss_quad::{GaussHermite, GaussLegendre};

/// Nodes and weights with `Σ w·g(x) ≈ E g(N(0,1))`.
pub fn normal_rule(order: usize) -> Vec<(f64, f64)> {
    let gh = GaussHermite::new(NonZeroUsize::new(order.max(1)).unwrap());
    let s = std::f64::consts::PI.sqrt();
    gh.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / s))
        .collect()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn legendre_rule(order: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(NonZeroUsize::new(order.max(1)).unwrap())
        .as_node_weight_pairs()
        .to_vec()
}

/// Tensor product of a 1-D rule in `dim` dimensions.
pub fn tensor(rule: &[(f64, f64)], dim: usize) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|(p, w)| {
                rule.iter().map(move |&(x, wx)| {
                    let mut q = p.clone();
                    q.push(x);
                    (q, w * wx)
                })
            })
            .collect();
    }
    out
}

/// Two-sided standard normal tail `P(|N(0,1)| > m)`.
pub fn normal_two_sided_tail(m: f64) -> f64 {
    if m <= 0.0 {
        1.0
    } else {
        libm::erfc(m / std::f64::consts::SQRT_2)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}
