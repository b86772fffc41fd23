use approx::assert_abs_diff_eq;
use kinetic_core::coefficients::*;
use kinetic_core::function_spaces::{phase_axes, GridFunction};
use nalgebra::DMatrix;

fn field(name: &str) -> CoefficientField {
    library_field(name, &FieldParams::default()).unwrap()
}

fn drift0(f: &dyn Coefficients, z: &[f64]) -> f64 {
    let mut out = vec![0.0; f.d()];
    f.drift(0.0, z, &mut out);
    out[0]
}

fn sigma00(f: &dyn Coefficients, z: &[f64]) -> f64 {
    let mut out = vec![0.0; f.d() * f.d()];
    f.sigma(0.0, z, &mut out);
    out[0]
}

#[test]
fn free_field() {
    let f = field("free");
    assert_eq!(f.ellipticity_k, 1.0);
    assert_eq!(drift0(&f, &[0.3, -1.0]), 0.0);
    assert_eq!(f.constant_sigma().unwrap(), DMatrix::identity(1, 1));
    let f2 = library_field("free", &FieldParams { d: 2, ..Default::default() }).unwrap();
    assert_eq!(f2.constant_sigma().unwrap(), DMatrix::identity(2, 2));
}

#[test]
fn unknown_field_rejected() {
    assert!(library_field("vortex", &FieldParams::default()).unwrap_err().is_validation());
}

#[test]
fn drift_vanishes_outside_support() {
    for name in ["constant-sigma-smooth-b", "hoelder-drift"] {
        let f = field(name);
        for z in [[4.0, 0.0], [0.0, -4.0], [2.9, 2.9], [-3.5, 1.0]] {
            assert_eq!(drift0(&f, &z), 0.0, "{name} at {z:?}");
        }
    }
}

#[test]
fn hoelder_modulus() {
    let f = field("hoelder-drift");
    let flat = 0.5 * f.cube_half_width();
    let xs: Vec<f64> = (0..=400).map(|i| -flat + 2.0 * flat * i as f64 / 400.0).collect();
    let mut worst: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        for &y in &xs[i + 1..] {
            let ratio = (drift0(&f, &[x, 0.3]) - drift0(&f, &[y, 0.3])).abs() / (x - y).abs().powf(2.0 / 3.0);
            worst = worst.max(ratio);
        }
    }
    assert!(worst <= 2.0, "{worst}");
    assert!(worst >= 2f64.cbrt() - 1e-3);
}

#[test]
fn anisotropic_ellipticity() {
    let f = field("anisotropic-sigma");
    let pass = check_ue(&f, 512, 2.0);
    assert!(pass.pass);
    assert!(pass.worst_ratio > 1.99 && pass.worst_ratio <= 2.0);
    assert!(!check_ue(&f, 512, 1.5).pass);
    let f2 = library_field("anisotropic-sigma", &FieldParams { d: 2, ..Default::default() }).unwrap();
    assert!(check_ue(&f2, 512, 2.0).pass);
}

struct Silent;

impl Coefficients for Silent {
    fn d(&self) -> usize {
        1
    }
    fn drift(&self, _: f64, _: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn sigma(&self, _: f64, _: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn constant_sigma(&self) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(1, 1))
    }
    fn sample_radius(&self) -> f64 {
        1.0
    }
    fn horizon(&self) -> f64 {
        1.0
    }
}

#[test]
fn identity_and_zero_sigma() {
    let r = check_ue(&field("free"), 64, 1.0);
    assert!(r.pass);
    assert_eq!(r.worst_ratio, 1.0);
    assert!(!check_ue(&Silent, 64, 10.0).pass);
}

#[test]
fn constants_survive_mollification() {
    let (nodes, weights) = mollifier_rule(0.25, 2).unwrap();
    assert_abs_diff_eq!(mollify_at(|_| 3.0, &nodes, &weights, &[0.4, 1.0]), 3.0, epsilon = 1e-14);
    let m = mollified(&field("free"), 4).unwrap();
    assert_eq!(sigma00(&m, &[0.1, 0.2]), 1.0);
    assert_eq!(drift0(&m, &[0.1, 0.2]), 0.0);
    let lang = mollified(&field("langevin"), 2).unwrap();
    assert_abs_diff_eq!(drift0(&lang, &[0.1, 0.7]), -0.7, epsilon = 1e-14);
}

#[test]
fn separable_contraction_matches_direct_rule() {
    for name in ["constant-sigma-smooth-b", "hoelder-drift", "anisotropic-sigma"] {
        let base = field(name);
        let m = mollified(&base, 8).unwrap();
        let (nodes, weights) = mollifier_rule(1.0 / 8.0, 2).unwrap();
        for z in [[0.01, 0.2], [-0.7, 1.1], [1.3, -1.3]] {
            let direct = mollify_at(|y| drift0(&base, y), &nodes, &weights, &z);
            assert_abs_diff_eq!(drift0(&m, &z), direct, epsilon = 1e-12);
            let direct = mollify_at(|y| sigma00(&base, y), &nodes, &weights, &z);
            assert_abs_diff_eq!(sigma00(&m, &z), direct, epsilon = 1e-12);
        }
    }
    let base = library_field("hoelder-drift", &FieldParams { d: 2, ..Default::default() }).unwrap();
    let m = mollified(&base, 4).unwrap();
    let (nodes, weights) = mollifier_rule(0.25, 4).unwrap();
    let z = [0.05, -0.2, 0.3, 0.1];
    assert_abs_diff_eq!(drift0(&m, &z), mollify_at(|y| drift0(&base, y), &nodes, &weights, &z), epsilon = 1e-12);
}

#[test]
fn mollification_commutes_with_shifts() {
    let base = field("hoelder-drift");
    let (nodes, weights) = mollifier_rule(1.0 / 16.0, 2).unwrap();
    let shift = [0.37, -0.21];
    for z in [[0.0, 0.0], [0.5, 0.9], [-1.0, 0.3]] {
        let zs = [z[0] + shift[0], z[1] + shift[1]];
        let lhs = mollify_at(|y| drift0(&base, y), &nodes, &weights, &zs);
        let rhs = mollify_at(|y| drift0(&base, &[y[0] + shift[0], y[1] + shift[1]]), &nodes, &weights, &z);
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
    }
}

fn sample_points(radius: f64, count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|i| {
            let u = kinetic_core::rng::halton(i, 2);
            [radius * (2.0 * u[0] - 1.0), radius * (2.0 * u[1] - 1.0)]
        })
        .collect()
}

#[test]
fn lipschitz_mollification_error() {
    let base = field("constant-sigma-smooth-b");
    let lip = base.lipschitz().unwrap();
    for n in [1, 2, 4, 8, 16] {
        let m = mollified(&base, n).unwrap();
        let worst = sample_points(3.0, 400)
            .iter()
            .map(|z| (drift0(&m, z) - drift0(&base, z)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= lip / n as f64, "n={n}: {worst}");
    }
}

fn hoelder_sup_error(base: &CoefficientField, n: usize) -> f64 {
    let m = mollified(base, n).unwrap();
    let w = 4.0 / n as f64;
    (0..=400)
        .map(|i| {
            let x = -w + 2.0 * w * i as f64 / 400.0;
            (drift0(&m, &[x, 0.2]) - drift0(base, &[x, 0.2])).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn hoelder_mollification_rate() {
    let base = field("hoelder-drift");
    let scaled: Vec<f64> =
        [4, 8, 16, 32, 64, 128, 256].iter().map(|&n| hoelder_sup_error(&base, n) * (n as f64).powf(2.0 / 3.0)).collect();
    let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
    let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max / min < 1.5, "{scaled:?}");
}

#[test]
fn smooth_sigma_rate_and_ellipticity() {
    let base = field("anisotropic-sigma");
    let p = 4.0;
    let pts = sample_points(4.0, 300);
    let errs: Vec<f64> = [1, 2, 4, 8, 16, 32]
        .iter()
        .map(|&n| {
            let m = mollified(&base, n).unwrap();
            pts.iter().map(|z| (sigma00(&m, z) - sigma00(&base, z)).abs()).fold(0.0, f64::max)
        })
        .collect();
    let c = errs[0];
    for (i, e) in errs.iter().enumerate() {
        let n = (1usize << i) as f64;
        assert!(e * n.powf(1.0 - 2.0 / p) <= c + 1e-15);
        let m = mollified(&base, 1 << i).unwrap();
        assert!(check_ue(&m, 256, 2.0 + e).pass);
    }
}

fn drift_lp_error(base: &CoefficientField, n: usize, p: f64) -> f64 {
    let m = mollified(base, n).unwrap();
    let (nx, nv) = (2048, 32);
    let r = base.cube_half_width().min(4.0);
    let (hx, hv) = (2.0 * r / nx as f64, 2.0 * r / nv as f64);
    let mut acc = 0.0;
    for i in 0..nx {
        for j in 0..nv {
            let z = [-r + (i as f64 + 0.5) * hx, -r + (j as f64 + 0.5) * hv];
            acc += (drift0(&m, &z) - drift0(base, &z)).abs().powf(p) * hx * hv;
        }
    }
    acc.powf(1.0 / p)
}

#[test]
fn approximation_is_monotone_in_n() {
    for name in LIBRARY_FIELDS {
        let base = field(name);
        let errs: Vec<f64> = [1, 2, 4, 8, 16, 32, 64].iter().map(|&n| drift_lp_error(&base, n, 2.0)).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{name}: {errs:?}");
    }
}

#[test]
fn bessel_report_trivial_cases() {
    let free = field("free");
    assert_eq!(bessel_regularity_report(&free, 2.0 / 3.0, 2.0, 1.0, 32, 4.0, 3).unwrap(), 0.0);
    let pi = std::f64::consts::PI;
    let g = GridFunction::from_fn(&phase_axes(1), 64, pi, |z| z[0].sin() * cutoff(z[1] / 3.0));
    let p = 2.0;
    let lifted = bessel_x_power(&g, 2.0 / 3.0, p).unwrap();
    assert_abs_diff_eq!(lifted, 2f64.powf(p / 3.0) * g.lp_norm(p).unwrap().powf(p), epsilon = 1e-10);
}

#[test]
fn hoelder_bessel_trend() {
    let f = field("hoelder-drift");
    let report = |alpha: f64, n: usize| bessel_regularity_report(&f, alpha, 4.0, 1.0, n, 4.0, 2).unwrap();
    let critical: Vec<f64> = [128, 512].iter().map(|&n| report(2.0 / 3.0, n)).collect();
    assert!((critical[1] - critical[0]).abs() < 1e-3 * critical[0], "{critical:?}");
    // past the critical index the refinement increments grow instead of settling
    let rough: Vec<f64> = [128, 256, 512].iter().map(|&n| report(1.0, n)).collect();
    assert!(rough[2] - rough[1] > rough[1] - rough[0] && rough[1] > rough[0], "{rough:?}");
}

#[test]
fn unresolved_spectrum_rejected() {
    let g = GridFunction::from_fn(&phase_axes(1), 16, 1.0, |z| if z[0] > 0.0 { 1.0 } else { -1.0 });
    assert!(bessel_x_power(&g, 0.5, 2.0).is_err());
}

#[test]
fn sigma_gradient_norm_closed_form() {
    let pi = std::f64::consts::PI;
    assert_eq!(sigma_gradient_report(&field("free"), 2.0, 1.0, 16, pi, 2).unwrap(), 0.0);
    // σ = 1.25 + 0.75 cos x: ∫∫ (0.75 sin x)² over [-π, π)² = 0.5625 · 2π².
    let report = sigma_gradient_report(&field("anisotropic-sigma"), 2.0, 1.0, 32, pi, 2).unwrap();
    assert_abs_diff_eq!(report, 0.5625 * 2.0 * pi * pi, epsilon = 1e-6);
    assert!(sigma_gradient_report(&field("free"), 0.5, 1.0, 16, pi, 2).unwrap_err().is_validation());
}
