//! Coefficient fields `(b, σ)` for the kinetic system, their mollified
//! approximations and an ellipticity check.
//!
//! Every scalar component of `b` and `σ` is a separable product of
//! one-dimensional profiles. This keeps library fields evaluable at any
//! off-grid point and reduces mollification by a tensor Gauss–Legendre
//! rule to one small contraction per component.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::function_spaces::{apply_multiplier, phase_axes, tail_energy, GridFunction, Mollifier};
use crate::quadrature::legendre_rule;
use crate::rng::halton;

/// Nodes per axis of the mollification rule.
pub const MOLLIFIER_ORDER: usize = 16;

/// Smooth step from 0 at `t ≤ 0` to 1 at `t ≥ 1`.
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Cutoff equal to 1 on `|u| ≤ 1/2` and vanishing for `|u| ≥ 1`.
pub fn cutoff(u: f64) -> f64 {
    smooth_step(2.0 * (1.0 - u.abs()))
}

/// Bound on `|cutoff'|`.
pub const CUTOFF_SLOPE: f64 = 4.0;

/// One-dimensional factor of a separable component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    One,
    Linear,
    Cutoff { r: f64 },
    SinCutoff { r: f64 },
    /// `sgn(s)|s|^{2/3}` times the cutoff.
    HoelderCutoff { r: f64 },
    CosAffine { mean: f64, amp: f64 },
}

impl Profile {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            Profile::One => 1.0,
            Profile::Linear => s,
            Profile::Cutoff { r } => cutoff(s / r),
            Profile::SinCutoff { r } => s.sin() * cutoff(s / r),
            Profile::HoelderCutoff { r } => s.signum() * s.abs().powf(2.0 / 3.0) * cutoff(s / r),
            Profile::CosAffine { mean, amp } => mean + amp * s.cos(),
        }
    }
}

/// `scale · Π_j factors[j](z_j)` over the `2d` phase coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Separable {
    pub scale: f64,
    pub factors: Vec<Profile>,
}

impl Separable {
    pub fn constant(value: f64, rank: usize) -> Self {
        Separable { scale: value, factors: vec![Profile::One; rank] }
    }

    pub fn is_constant(&self) -> bool {
        self.scale == 0.0 || self.factors.iter().all(|f| *f == Profile::One)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.factors.iter().zip(z).fold(self.scale, |acc, (f, &s)| acc * f.eval(s))
    }
}

/// Regularity class of the drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularity {
    SmoothLipschitz { lipschitz: f64 },
    Hoelder { gamma: f64 },
    Bessel { alpha: f64 },
}

/// Evaluation interface shared by library and mollified fields.
pub trait Coefficients: Sync {
    fn d(&self) -> usize;
    fn drift(&self, t: f64, z: &[f64], out: &mut [f64]);
    /// Row-major `d × d` diffusion coefficient.
    fn sigma(&self, t: f64, z: &[f64], out: &mut [f64]);
    /// `σ` if it does not depend on `(t, z)`.
    fn constant_sigma(&self) -> Option<DMatrix<f64>>;
    /// Radius of the region where the field is interesting; used to place
    /// ellipticity samples.
    fn sample_radius(&self) -> f64;
    fn horizon(&self) -> f64;

    /// `a = σσ*/2`.
    fn diffusion(&self, t: f64, z: &[f64]) -> DMatrix<f64> {
        let d = self.d();
        let mut s = vec![0.0; d * d];
        self.sigma(t, z, &mut s);
        let s = DMatrix::from_row_slice(d, d, &s);
        &s * s.transpose() * 0.5
    }
}

/// Construction parameters for [`library_field`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub d: usize,
    pub kappa: f64,
    pub support_radius: f64,
    pub ellipticity_k: Option<f64>,
    pub horizon: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams { d: 1, kappa: 1.0, support_radius: 4.0, ellipticity_k: None, horizon: 1.0 }
    }
}

pub const LIBRARY_FIELDS: [&str; 5] = ["free", "constant-sigma-smooth-b", "langevin", "hoelder-drift", "anisotropic-sigma"];

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub name: String,
    d: usize,
    drift: Vec<Separable>,
    sigma: Vec<Separable>,
    pub support_radius: f64,
    pub ellipticity_k: f64,
    pub regularity: Regularity,
    pub horizon: f64,
}

impl CoefficientField {
    pub fn drift_components(&self) -> &[Separable] {
        &self.drift
    }

    pub fn sigma_components(&self) -> &[Separable] {
        &self.sigma
    }

    /// Half-width of the cube carrying the cutoff, inscribed in the support ball.
    pub fn cube_half_width(&self) -> f64 {
        self.support_radius / ((2 * self.d) as f64).sqrt()
    }

    pub fn lipschitz(&self) -> Option<f64> {
        match self.regularity {
            Regularity::SmoothLipschitz { lipschitz } => Some(lipschitz),
            _ => None,
        }
    }
}

impl Coefficients for CoefficientField {
    fn d(&self) -> usize {
        self.d
    }

    fn drift(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.drift) {
            *o = c.eval(z);
        }
    }

    fn sigma(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.sigma) {
            *o = c.eval(z);
        }
    }

    fn constant_sigma(&self) -> Option<DMatrix<f64>> {
        constant_matrix(&self.sigma, self.d)
    }

    fn sample_radius(&self) -> f64 {
        if self.support_radius.is_finite() {
            self.support_radius
        } else {
            4.0
        }
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}

fn constant_matrix(components: &[Separable], d: usize) -> Option<DMatrix<f64>> {
    if components.iter().all(Separable::is_constant) {
        Some(DMatrix::from_row_iterator(d, d, components.iter().map(|c| c.scale)))
    } else {
        None
    }
}

/// Build a named field from the library.
pub fn library_field(name: &str, params: &FieldParams) -> Result<CoefficientField> {
    let d = params.d;
    if d == 0 {
        return Err(Error::validation("dimension must be positive"));
    }
    if !(params.support_radius > 0.0) || !params.kappa.is_finite() || !(params.horizon > 0.0) {
        return Err(Error::validation("field parameters must be finite and positive"));
    }
    let rank = 2 * d;
    let r = params.support_radius / (rank as f64).sqrt();
    let kappa = params.kappa;
    let identity: Vec<Separable> =
        (0..d * d).map(|k| Separable::constant(if k / d == k % d { 1.0 } else { 0.0 }, rank)).collect();
    let zero_drift = vec![Separable::constant(0.0, rank); d];
    let cut = |special: usize, profile: Profile| -> Vec<Profile> {
        (0..rank).map(|j| if j == special { profile } else { Profile::Cutoff { r } }).collect()
    };
    let (drift, sigma, k, regularity, support) = match name {
        "free" => (zero_drift, identity, 1.0, Regularity::SmoothLipschitz { lipschitz: 0.0 }, params.support_radius),
        "constant-sigma-smooth-b" => {
            let drift = (0..d).map(|i| Separable { scale: kappa, factors: cut(i, Profile::SinCutoff { r }) }).collect();
            let slope = CUTOFF_SLOPE / r;
            let lip = kappa.abs() * (d as f64 * ((1.0 + slope).powi(2) + (rank - 1) as f64 * slope * slope)).sqrt();
            (drift, identity, 1.0, Regularity::SmoothLipschitz { lipschitz: lip }, params.support_radius)
        }
        "langevin" => {
            let drift = (0..d)
                .map(|i| {
                    let mut factors = vec![Profile::One; rank];
                    factors[d + i] = Profile::Linear;
                    Separable { scale: -kappa, factors }
                })
                .collect();
            (drift, identity, 1.0, Regularity::SmoothLipschitz { lipschitz: kappa.abs() }, f64::INFINITY)
        }
        "hoelder-drift" => {
            let mut drift = zero_drift;
            drift[0] = Separable { scale: kappa, factors: cut(0, Profile::HoelderCutoff { r }) };
            (drift, identity, 1.0, Regularity::Hoelder { gamma: 2.0 / 3.0 }, params.support_radius)
        }
        "anisotropic-sigma" => {
            let sigma = (0..d * d)
                .map(|k| {
                    let (i, j) = (k / d, k % d);
                    if i != j {
                        return Separable::constant(0.0, rank);
                    }
                    let mut factors = vec![Profile::One; rank];
                    let amp = if i % 2 == 0 { 0.75 } else { -0.75 };
                    factors[0] = Profile::CosAffine { mean: 1.25, amp };
                    Separable { scale: 1.0, factors }
                })
                .collect();
            (zero_drift, sigma, 2.0, Regularity::SmoothLipschitz { lipschitz: 0.0 }, params.support_radius)
        }
        other => return Err(Error::validation(format!("unknown field `{other}`"))),
    };
    Ok(CoefficientField {
        name: name.to_string(),
        d,
        drift,
        sigma,
        support_radius: support,
        ellipticity_k: params.ellipticity_k.unwrap_or(k),
        regularity,
        horizon: params.horizon,
    })
}

/// `b * ρ_{1/n}` and `σ * ρ_{1/n}` evaluated by a tensor Gauss–Legendre
/// rule over the support of `ρ_{1/n}`. Rule weights are normalized by their
/// discrete mass so constants are reproduced exactly.
#[derive(Debug, Clone)]
pub struct MollifiedField {
    pub base: CoefficientField,
    pub n: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Tensor rule `(nodes per axis, normalized weights over rank axes)` for `ρ_ε`.
pub fn mollifier_rule(epsilon: f64, rank: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let moll = Mollifier::new(epsilon, rank)?;
    let rule = legendre_rule(MOLLIFIER_ORDER);
    let nodes: Vec<f64> = rule.iter().map(|(x, _)| epsilon * x).collect();
    let total = MOLLIFIER_ORDER.pow(rank as u32);
    let mut weights = Vec::with_capacity(total);
    let mut w = vec![0.0; rank];
    for flat in 0..total {
        let mut rem = flat;
        let mut wt = 1.0;
        for j in (0..rank).rev() {
            let i = rem % MOLLIFIER_ORDER;
            rem /= MOLLIFIER_ORDER;
            w[j] = nodes[i];
            wt *= rule[i].1;
        }
        weights.push(wt * moll.eval(&w));
    }
    let mass: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|x| *x /= mass);
    Ok((nodes, weights))
}

/// Mollify an arbitrary function at `z` with the tensor rule; reference
/// path used to validate the separable contraction.
pub fn mollify_at(f: impl Fn(&[f64]) -> f64, nodes: &[f64], weights: &[f64], z: &[f64]) -> f64 {
    let rank = z.len();
    let m = nodes.len();
    let mut y = vec![0.0; rank];
    let mut acc = 0.0;
    for (flat, w) in weights.iter().enumerate() {
        let mut rem = flat;
        for j in (0..rank).rev() {
            y[j] = z[j] - nodes[rem % m];
            rem /= m;
        }
        acc += w * f(&y);
    }
    acc
}

/// Mollify `f` with `ρ_{1/n}` on the grid nodes of `template`.
pub fn mollify_function(f: impl Fn(&[f64]) -> f64 + Sync, n: usize, template: &GridFunction) -> Result<GridFunction> {
    if n == 0 {
        return Err(Error::validation("mollification index must be at least 1"));
    }
    let (nodes, weights) = mollifier_rule(1.0 / n as f64, template.rank())?;
    let vals = crate::parallel::map_indexed(template.len(), |i| mollify_at(&f, &nodes, &weights, &template.coords(i)));
    Ok(template.with_values(vals))
}

impl MollifiedField {
    fn component(&self, c: &Separable, z: &[f64]) -> f64 {
        if c.is_constant() {
            return c.scale;
        }
        let m = self.nodes.len();
        let axis = |j: usize| -> Vec<f64> {
            let f = c.factors[j];
            self.nodes.iter().map(|w| f.eval(z[j] - w)).collect()
        };
        if z.len() == 2 {
            let (g0, g1) = (axis(0), axis(1));
            let mut acc = 0.0;
            for (i, row) in self.weights.chunks_exact(m).enumerate() {
                let inner: f64 = row.iter().zip(&g1).map(|(w, g)| w * g).sum();
                acc += g0[i] * inner;
            }
            return c.scale * acc;
        }
        let mut cur = self.weights.clone();
        for j in (0..z.len()).rev() {
            let g = axis(j);
            cur = cur.chunks_exact(m).map(|row| row.iter().zip(&g).map(|(w, g)| w * g).sum()).collect();
        }
        c.scale * cur[0]
    }
}

/// `(bⁿ, σⁿ)` for mollification index `n ≥ 1`.
pub fn mollified(field: &CoefficientField, n: usize) -> Result<MollifiedField> {
    if n == 0 {
        return Err(Error::validation("mollification index must be at least 1"));
    }
    let (nodes, weights) = mollifier_rule(1.0 / n as f64, 2 * field.d)?;
    Ok(MollifiedField { base: field.clone(), n, nodes, weights })
}

impl Coefficients for MollifiedField {
    fn d(&self) -> usize {
        self.base.d
    }

    fn drift(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.base.drift) {
            *o = self.component(c, z);
        }
    }

    fn sigma(&self, _t: f64, z: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.base.sigma) {
            *o = self.component(c, z);
        }
    }

    fn constant_sigma(&self) -> Option<DMatrix<f64>> {
        self.base.constant_sigma()
    }

    fn sample_radius(&self) -> f64 {
        self.base.sample_radius()
    }

    fn horizon(&self) -> f64 {
        self.base.horizon
    }
}

/// Result of [`check_ue`]. `worst_ratio` is the smallest `K` consistent
/// with the samples: the largest of `s_max` and `1/s_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeReport {
    pub pass: bool,
    pub worst_ratio: f64,
}

/// Check `K⁻¹|ξ| ≤ |σ*ξ| ≤ K|ξ|` at quasi-random `(t, z)` samples.
pub fn check_ue(field: &dyn Coefficients, samples: usize, k: f64) -> UeReport {
    let d = field.d();
    let r = field.sample_radius();
    let mut worst: f64 = 1.0;
    let mut s = vec![0.0; d * d];
    for i in 0..samples.max(1) {
        let u = halton(i, 1 + 2 * d);
        let t = field.horizon() * u[0];
        let z: Vec<f64> = u[1..].iter().map(|x| r * (2.0 * x - 1.0)).collect();
        field.sigma(t, &z, &mut s);
        let sv = DMatrix::from_row_slice(d, d, &s).singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let ratio = if smin > 0.0 { smax.max(1.0 / smin) } else { f64::INFINITY };
        worst = worst.max(ratio);
    }
    UeReport { pass: worst <= k * (1.0 + 1e-12), worst_ratio: worst }
}

/// `‖(I-Δ_x)^{α/2} g‖_p^p` for a sampled function; rejects samples whose
/// spectrum is not resolved by the grid.
pub fn bessel_x_power(g: &GridFunction, alpha: f64, p: f64) -> Result<f64> {
    if !(p >= 1.0) || alpha < 0.0 {
        return Err(Error::validation("need p ≥ 1 and α ≥ 0"));
    }
    let tail = tail_energy(g, 0.5);
    if tail > 1e-3 {
        return Err(Error::Accuracy(format!("unresolved spectrum: {tail:.2e} of the energy above half Nyquist")));
    }
    let axes = g.axes_of(crate::function_spaces::AxisKind::X);
    let lifted = apply_multiplier(g, |k| {
        let k2: f64 = axes.iter().map(|&a| k[a] * k[a]).sum();
        Complex64::new((1.0 + k2).powf(alpha / 2.0), 0.0)
    });
    Ok(lifted.lp_norm(p)?.powf(p))
}

/// Trapezoid time quadrature of `Σ_i ‖(I-Δ_x)^{α/2} b_i(s)‖_p^p` over `[0, T]`
/// with the drift sampled on a `points^{2d}` grid of `[-L, L)^{2d}`.
pub fn bessel_regularity_report(
    field: &dyn Coefficients,
    alpha: f64,
    p: f64,
    horizon: f64,
    points: usize,
    half_width: f64,
    time_slices: usize,
) -> Result<f64> {
    let d = field.d();
    let slices = time_slices.max(2);
    let dt = horizon / (slices - 1) as f64;
    let mut total = 0.0;
    for s in 0..slices {
        let t = s as f64 * dt;
        let mut out = vec![0.0; d];
        let samples: Vec<Vec<f64>> = {
            let template = GridFunction::from_fn(&phase_axes(d), points, half_width, |_| 0.0);
            (0..template.len())
                .map(|i| {
                    field.drift(t, &template.coords(i), &mut out);
                    out.clone()
                })
                .collect()
        };
        let mut slice_power = 0.0;
        for i in 0..d {
            let g = GridFunction::new(
                samples.iter().map(|b| b[i]).collect(),
                half_width,
                vec![points; 2 * d],
                phase_axes(d),
            )?;
            if g.sup_norm() > 0.0 {
                slice_power += bessel_x_power(&g, alpha, p)?;
            }
        }
        let w = if s == 0 || s == slices - 1 { 0.5 } else { 1.0 };
        total += w * dt * slice_power;
    }
    Ok(total)
}

/// `sup_s Σ_ij ∫|∇σ_ij(s)|^p dz` over the box `[-L, L)^{2d}`, kept apart from
/// the drift norm of `bessel_regularity_report`. Gradients by central
/// differences of `σ` itself, integrals by the grid sum.
pub fn sigma_gradient_report(
    field: &dyn Coefficients,
    p: f64,
    horizon: f64,
    points: usize,
    half_width: f64,
    time_slices: usize,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::validation("p must be at least 1"));
    }
    let d = field.d();
    let template = GridFunction::from_fn(&phase_axes(d), points, half_width, |_| 0.0);
    let step = 1e-5 * half_width;
    let slices = time_slices.max(1);
    let mut worst: f64 = 0.0;
    for s in 0..slices {
        let t = if slices == 1 { 0.0 } else { horizon * s as f64 / (slices - 1) as f64 };
        let (mut plus, mut minus) = (vec![0.0; d * d], vec![0.0; d * d]);
        let mut total = 0.0;
        for i in 0..template.len() {
            let z = template.coords(i);
            let mut grad_sq = vec![0.0; d * d];
            for k in 0..2 * d {
                let mut zk = z.clone();
                zk[k] += step;
                field.sigma(t, &zk, &mut plus);
                zk[k] -= 2.0 * step;
                field.sigma(t, &zk, &mut minus);
                for (g, (a, b)) in grad_sq.iter_mut().zip(plus.iter().zip(&minus)) {
                    *g += ((a - b) / (2.0 * step)).powi(2);
                }
            }
            total += grad_sq.iter().map(|g| g.sqrt().powf(p)).sum::<f64>();
        }
        worst = worst.max(total * template.cell_volume());
    }
    Ok(worst)
}
