use std::f64::consts::PI;

use kinetic_core::function_spaces::*;
use proptest::prelude::*;

fn x_axis() -> Vec<AxisKind> {
    vec![AxisKind::X]
}

#[test]
fn mollifier_vanishes_outside_support() {
    let m = Mollifier::new(0.3, 2).unwrap();
    assert_eq!(mollifier_eval(&m, &[0.45, 0.0]), 0.0);
    assert_eq!(m.eval(&[0.3, 0.0]), 0.0);
    assert!(m.eval(&[0.29, 0.0]) > 0.0);
}

#[test]
fn mollifier_mass_is_one() {
    for eps in [1.0, 0.1] {
        let m = Mollifier::new(eps, 2).unwrap();
        let g = GridFunction::from_fn(&phase_axes(1), 512, 1.25 * eps, |z| m.eval(z));
        assert!((g.integral() - 1.0).abs() < 1e-8, "eps {eps}: {}", g.integral());
    }
}

#[test]
fn mollifier_mass_other_dimensions() {
    for dim in [1usize, 3] {
        let m = Mollifier::new(1.0, dim).unwrap();
        let n = if dim == 1 { 4096 } else { 96 };
        let g = GridFunction::from_fn(&vec![AxisKind::X; dim], n, 1.1, |z| m.eval(z));
        assert!((g.integral() - 1.0).abs() < 1e-6, "dim {dim}: {}", g.integral());
    }
}

#[test]
fn mollifier_scaling_at_origin() {
    let one = Mollifier::new(1.0, 2).unwrap();
    let half = Mollifier::new(0.5, 2).unwrap();
    let r = half.eval(&[0.0, 0.0]) / one.eval(&[0.0, 0.0]);
    assert!((r - 4.0).abs() < 1e-14);
}

#[test]
fn mollifier_rejects_bad_scale() {
    assert!(Mollifier::new(0.0, 2).is_err());
    assert!(Mollifier::new(1.5, 2).is_err());
}

#[test]
fn fractional_laplacian_of_unit_sine() {
    let f = GridFunction::from_fn(&phase_axes(1), 32, PI, |z| z[0].sin());
    for s in [0.5, 1.0] {
        let g = fractional_laplacian(&f, &[0], s).unwrap();
        for (a, b) in g.values().iter().zip(f.values()) {
            assert!((a + b).abs() < 1e-12);
        }
    }
}

#[test]
fn fractional_laplacian_rejects_bad_input() {
    let f = GridFunction::from_fn(&x_axis(), 16, PI, |z| z[0].cos());
    assert!(fractional_laplacian(&f, &[0], 0.0).is_err());
    assert!(fractional_laplacian(&f, &[0], 1.2).is_err());
    assert!(fractional_laplacian(&f, &[], 0.5).is_err());
}

#[test]
fn full_order_matches_second_difference_laplacian_on_band_limited_input() {
    // cos(3x) is an exact eigenfunction of the periodic spectral Laplacian.
    let f = GridFunction::from_fn(&x_axis(), 64, PI, |z| (3.0 * z[0]).cos() + 0.5 * (5.0 * z[0]).sin());
    let g = fractional_laplacian(&f, &[0], 1.0).unwrap();
    let d2 = derivative(&f, 0, 2);
    for (a, b) in g.values().iter().zip(d2.values()) {
        assert!((a - b).abs() < 1e-10);
    }
}

fn band_limited(coeffs: &[(f64, f64)], n: usize) -> GridFunction {
    GridFunction::from_fn(&phase_axes(1), n, PI, |z| {
        coeffs
            .iter()
            .enumerate()
            .map(|(j, (a, b))| {
                let kx = (j % 4) as f64 + 1.0;
                let kv = (j / 4) as f64;
                a * (kx * z[0] + kv * z[1]).cos() + b * (kv * z[0] - kx * z[1]).sin()
            })
            .sum()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plancherel_half_laplacian(coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..12)) {
        let f = band_limited(&coeffs, 32);
        let lhs = fractional_laplacian(&f, &[0, 1], 0.5).unwrap().lp_norm(2.0).unwrap();
        let rhs = gradient_magnitude(&f).lp_norm(2.0).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
    }

    #[test]
    fn maximal_function_dominates(vals in prop::collection::vec(-3.0f64..3.0, 64)) {
        let f = GridFunction::new(vals, 1.0, vec![8, 8], phase_axes(1)).unwrap();
        let m = maximal_function(&f);
        for (a, b) in m.values().iter().zip(f.values()) {
            prop_assert!(*a >= b.abs() - 1e-12);
        }
    }

    #[test]
    fn mollifier_nonnegative_and_supported(x in -2.0f64..2.0, v in -2.0f64..2.0, eps in 0.05f64..1.0) {
        let m = Mollifier::new(eps, 2).unwrap();
        let val = m.eval(&[x, v]);
        prop_assert!(val >= 0.0);
        if (x * x + v * v).sqrt() >= eps {
            prop_assert_eq!(val, 0.0);
        }
    }
}

#[test]
fn bessel_norm_trivial_cases() {
    let zero = GridFunction::from_fn(&phase_axes(1), 16, PI, |_| 0.0);
    assert_eq!(bessel_norm(&zero, 1.0, 1.0, 2.0).unwrap(), 0.0);

    let f = GridFunction::from_fn(&phase_axes(1), 32, PI, |z| (z[0] - 0.3).cos() * (2.0 * z[1]).sin() + 0.2);
    let n3 = f.lp_norm(3.0).unwrap();
    assert!((bessel_norm(&f, 0.0, 0.0, 3.0).unwrap() - 2.0 * n3).abs() < 1e-12);

    let g = GridFunction::from_fn(&phase_axes(1), 32, PI, |z| z[0].sin() * z[1].sin());
    let n2 = g.lp_norm(2.0).unwrap();
    assert!((bessel_norm(&g, 2.0, 0.0, 2.0).unwrap() - 3.0 * n2).abs() < 1e-10);
    assert!(bessel_norm(&g, 1.0, 0.0, 1.0).is_err());
}

#[test]
fn maximal_function_of_constant_and_indicator() {
    let c = GridFunction::from_fn(&phase_axes(1), 16, 2.0, |_| 2.5);
    for v in maximal_function(&c).values() {
        assert!((v - 2.5).abs() < 1e-12);
    }
    let ind = GridFunction::from_fn(&x_axis(), 256, 4.0, |z| if z[0].abs() <= 1.0 { 1.0 } else { 0.0 });
    let m = maximal_function(&ind);
    let centre = ind.axis_coords(0).iter().position(|x| x.abs() < 1e-12).unwrap();
    assert!((m.values()[centre] - 1.0).abs() < 1e-12);
}

/// Brute-force maximal function with clipped balls, used as an oracle.
fn brute_maximal_1d(vals: &[f64], h: f64, radii: &[f64]) -> Vec<f64> {
    let n = vals.len() as isize;
    (0..n)
        .map(|i| {
            let mut best = vals[i as usize].abs();
            for &r in radii.iter().skip(1) {
                let w = (r / h + 1e-9).floor() as isize;
                let (lo, hi) = ((i - w).max(0), (i + w).min(n - 1));
                let s: f64 = (lo..=hi).map(|j| vals[j as usize].abs()).sum();
                best = best.max(s / (hi - lo + 1) as f64);
            }
            best
        })
        .collect()
}

#[test]
fn maximal_function_matches_brute_force() {
    let f = GridFunction::from_fn(&x_axis(), 128, 3.0, |z| (-(z[0] - 0.4).powi(2) * 3.0).exp() * (4.0 * z[0]).cos());
    let fast = maximal_function(&f);
    let slow = brute_maximal_1d(f.values(), f.spacing(0), &radius_ladder(&f));
    for (a, b) in fast.values().iter().zip(&slow) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn lipschitz_check_linear_gives_half() {
    let f = GridFunction::from_fn(&x_axis(), 128, 2.0, |z| 1.7 * z[0]);
    let r = lipschitz_via_maximal_check(&f, 0.5);
    assert!((r.fitted_c - 0.5).abs() < 1e-12, "{}", r.fitted_c);
    assert_eq!(r.violations, 0);
}

#[test]
fn lipschitz_check_constant_has_no_violations() {
    let f = GridFunction::from_fn(&x_axis(), 64, 2.0, |_| 3.0);
    let r = lipschitz_via_maximal_check(&f, 0.0);
    assert_eq!(r.violations, 0);
    assert_eq!(r.fitted_c, 0.0);
}

#[test]
fn lipschitz_check_gaussian_bump() {
    let f = GridFunction::from_fn(&x_axis(), 1024, 8.0, |z| (-z[0] * z[0]).exp());
    let r = lipschitz_via_maximal_check(&f, 3.0);
    assert!(r.fitted_c <= 3.0, "{}", r.fitted_c);
    assert_eq!(r.pairs, 1024 * 1023 / 2);

    // independent oracle: brute-force maximal function and exhaustive scan
    let h = f.spacing(0);
    let grad = fd_gradient_magnitude(&f);
    let mg = brute_maximal_1d(grad.values(), h, &radius_ladder(&f));
    let xs = f.axis_coords(0);
    let v = f.values();
    let mut c: f64 = 0.0;
    for i in 0..v.len() {
        for j in (i + 1)..v.len() {
            let rhs = (xs[i] - xs[j]).abs() * (mg[i] + mg[j]);
            if rhs > 0.0 {
                c = c.max((v[i] - v[j]).abs() / rhs);
            }
        }
    }
    assert!((c - r.fitted_c).abs() < 1e-10 * c);
}

#[test]
fn lp_norm_cases() {
    let f = GridFunction::from_fn(&phase_axes(1), 32, 1.0, |z| z[0] + z[1]);
    assert_eq!(f.lp_distance(&f, 2.0).unwrap(), 0.0);
    let half = GridFunction::from_fn(&phase_axes(1), 32, 1.0, |z| if z[0] < 0.0 { 1.0 } else { 0.0 });
    let expect = (half.box_volume() / 2.0).sqrt();
    assert!((half.lp_norm(2.0).unwrap() - expect).abs() < 1e-12);
    assert!(f.lp_norm(0.0).is_err());
    assert!(f.lp_norm(-1.0).is_err());
}

#[test]
fn grid_function_csv_layout() {
    let f = GridFunction::from_fn(&phase_axes(1), 2, 1.0, |z| z[0] * 10.0 + z[1]);
    let s = f.to_table().render();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "axis0,axis1,value");
    assert_eq!(lines.len(), 5);
    // row-major: second row moves the last axis
    assert!(lines[2].starts_with("-1.0000000000000000e0,0.0000000000000000e0,"));
}

#[test]
fn grid_rejects_non_finite() {
    assert!(GridFunction::new(vec![f64::NAN], 1.0, vec![1], x_axis()).is_err());
}

#[test]
fn space_time_norm_of_constant_slices() {
    let n = lp_space_time(&[2.0; 11], 0.1, 3.0).unwrap();
    assert!((n - 2.0).abs() < 1e-12);
}
