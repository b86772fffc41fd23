use approx::assert_relative_eq;
use kinetic_core::coefficients::{library_field, mollified, FieldParams};
use kinetic_core::flow_analysis::FlowRun;
use kinetic_core::krylov_harness::*;
use kinetic_core::sde_integrator::{BrownianGrid, Initial, Scheme};
use proptest::prelude::*;

fn params() -> FieldParams {
    FieldParams { d: 1, kappa: 1.0, support_radius: 4.0, ellipticity_k: None, horizon: 1.0 }
}

fn run(bm: &BrownianGrid, paths: usize) -> FlowRun<'_> {
    FlowRun { brownian: bm, horizon: 1.0, dt: bm.dt, paths, scheme: Scheme::EulerMaruyama }
}

fn origin() -> Initial {
    Initial::Point(vec![0.0, 0.0])
}

#[test]
fn beta_for_d1_p7() {
    assert_relative_eq!(krylov_beta(1, 7.0).unwrap(), 4.0 / 21.0, epsilon = 1e-15);
    assert!(krylov_beta(1, 3.0).unwrap_err().is_validation());
    assert!(krylov_beta(2, 5.0).unwrap_err().is_validation());
}

#[test]
fn bump_norm_matches_quadrature() {
    let bump = KineticBump { center: vec![0.2, -0.1], widths: vec![0.3, 0.7], amplitude: 1.5, cut: 4.0 };
    for p in [2.0, 7.0] {
        let n = 1200;
        let (hx, hv) = (8.0 * 0.3 / n as f64, 8.0 * 0.7 / n as f64);
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let z = [0.2 - 1.2 + (i as f64 + 0.5) * hx, -0.1 - 2.8 + (j as f64 + 0.5) * hv];
                sum += bump.eval(&z).powf(p) * hx * hv;
            }
        }
        assert_relative_eq!(bump.lp_norm(p), sum.powf(1.0 / p), max_relative = 1e-4);
    }
    // Rank 3 exercises the odd branch.
    let odd = KineticBump { center: vec![0.0; 3], widths: vec![1.0; 3], amplitude: 1.0, cut: 1.0 };
    let n = 160;
    let h = 2.0 / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let z = [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h, -1.0 + (k as f64 + 0.5) * h];
                sum += odd.eval(&z).powi(2) * h.powi(3);
            }
        }
    }
    assert_relative_eq!(odd.lp_norm(2.0), sum.sqrt(), max_relative = 2e-3);
}

#[test]
fn constant_observable_integrates_exactly() {
    let field = library_field("hoelder-drift", &params()).unwrap();
    let bm = BrownianGrid::covering(3, 1.0 / 64.0, 1.0, 1).unwrap();
    let one = |_: &[f64]| 1.0;
    let rows = occupation_samples(&field, &origin(), &[&one], &[(0.25, 0.75), (0.0, 1.0)], &run(&bm, 50)).unwrap();
    for r in &rows {
        assert_relative_eq!(r[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(r[1], 1.0, epsilon = 1e-12);
    }
    let zero = |_: &[f64]| 0.0;
    let e = occupation_functional(&field, &origin(), &zero, (0.0, 1.0), &run(&bm, 50)).unwrap();
    assert_eq!(e.mean, 0.0);
}

#[test]
fn window_outside_horizon_rejected() {
    let field = library_field("free", &params()).unwrap();
    let bm = BrownianGrid::covering(3, 1.0 / 64.0, 1.0, 1).unwrap();
    let one = |_: &[f64]| 1.0;
    for w in [(0.5, 1.5), (0.5, 0.5), (-0.1, 0.5)] {
        assert!(occupation_functional(&field, &origin(), &one, w, &run(&bm, 4)).unwrap_err().is_validation());
    }
}

#[test]
fn unreachable_bump_is_never_visited() {
    let field = library_field("free", &params()).unwrap();
    let bm = BrownianGrid::covering(4, 1.0 / 64.0, 0.25, 1).unwrap();
    let far = KineticBump { center: vec![6.0, 6.0], widths: vec![0.2, 0.2], amplitude: 1.0, cut: 4.0 };
    let f = |z: &[f64]| far.eval(z);
    let r = FlowRun { brownian: &bm, horizon: 0.25, dt: bm.dt, paths: 2000, scheme: Scheme::EulerMaruyama };
    let e = occupation_functional(&field, &origin(), &f, (0.0, 0.25), &r).unwrap();
    assert!(e.mean <= 3.0 * e.std_error, "{e:?}");
}

// For b = 0, σ = I the law of Z_s from z0 is Gaussian with mean
// (x0 + v0 s, v0) and covariance [[s³/3, s²/2], [s²/2, s]]; a Gaussian bump
// integrates against it in closed form.
fn free_expectation(z0: [f64; 2], bump: &KineticBump, s: f64) -> f64 {
    let m = [z0[0] + z0[1] * s - bump.center[0], z0[1] - bump.center[1]];
    let (wx, wv) = (bump.widths[0].powi(2), bump.widths[1].powi(2));
    let a = [[s.powi(3) / 3.0 + wx, s * s / 2.0], [s * s / 2.0, s + wv]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let quad = (a[1][1] * m[0] * m[0] - 2.0 * a[0][1] * m[0] * m[1] + a[0][0] * m[1] * m[1]) / det;
    bump.amplitude * (wx * wv / det).sqrt() * (-0.5 * quad).exp()
}

#[test]
fn free_occupation_matches_kernel_oracle() {
    let field = library_field("free", &params()).unwrap();
    let bm = BrownianGrid::covering(21, 1.0 / 256.0, 1.0, 1).unwrap();
    let bump = KineticBump { center: vec![0.3, 0.4], widths: vec![0.4, 0.6], amplitude: 1.0, cut: 12.0 };
    let z0 = [0.1, -0.2];
    let f = |z: &[f64]| bump.eval(z);
    for window in [(0.0, 1.0), (0.25, 0.5)] {
        let e = occupation_functional(&field, &Initial::Point(z0.to_vec()), &f, window, &run(&bm, 10_000)).unwrap();
        let n = 4000;
        let h = (window.1 - window.0) / n as f64;
        let oracle: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * h * free_expectation(z0, &bump, window.0 + k as f64 * h)
            })
            .sum();
        assert!((e.mean - oracle).abs() <= 3.0 * e.std_error, "{window:?}: {} vs {oracle} (se {})", e.mean, e.std_error);
    }
}

#[test]
fn conditional_restart_reproduces_unconditional_mean() {
    let field = library_field("free", &params()).unwrap();
    let bm = BrownianGrid::covering(8, 1.0 / 64.0, 1.0, 1).unwrap();
    let bump = KineticBump { center: vec![0.0, 0.0], widths: vec![0.5, 0.8], amplitude: 1.0, cut: 4.0 };
    let f = |z: &[f64]| bump.eval(z);
    let window = (0.5, 0.75);
    let cond = conditional_occupation(&field, &origin(), &f, window, 200, 50, &run(&bm, 200), 99).unwrap();
    assert_eq!(cond.len(), 200);
    let mean = cond.iter().map(|c| c.mean).sum::<f64>() / 200.0;
    let direct = occupation_functional(&field, &origin(), &f, window, &run(&bm, 10_000)).unwrap();
    assert!((mean - direct.mean).abs() < 0.1 * direct.mean, "{mean} vs {}", direct.mean);
    // Conditioning spreads the estimates.
    let spread = cond.iter().fold(0.0f64, |m, c| m.max(c.mean)) - cond.iter().fold(f64::INFINITY, |m, c| m.min(c.mean));
    assert!(spread > 0.05);
}

#[test]
fn krylov_table_and_window_monotonicity() {
    let field = mollified(&library_field("hoelder-drift", &params()).unwrap(), 4).unwrap();
    let bm = BrownianGrid::covering(5, 1.0 / 128.0, 1.0, 1).unwrap();
    let family = bump_family(77, 20, 1, 1.5);
    let fit = krylov_ratio(&field, &origin(), &family, 7.0, &[1.0, 0.25, 0.0625], &run(&bm, 500)).unwrap();
    assert_eq!(fit.rows.len(), 60);
    assert!(fit.holds_with(fit.fitted_c));
    assert!(!fit.holds_with(0.99 * fit.fitted_c));
    for f_id in 0..20 {
        let est: Vec<f64> = fit.rows.iter().filter(|r| r.f_id == f_id).map(|r| r.estimate).collect();
        assert!(est[0] >= est[1] && est[1] >= est[2], "{est:?}");
    }
    let table = fit.to_table().render();
    assert!(table.starts_with("f_id,window,estimate,se,norm_lp,ratio\n"));
    assert_eq!(table.lines().count(), 61);
    assert!(fit.window_spread() >= 1.0);
}

#[test]
fn fitted_constants_hold_for_larger_p() {
    let field = mollified(&library_field("hoelder-drift", &params()).unwrap(), 4).unwrap();
    let bm = BrownianGrid::covering(5, 1.0 / 64.0, 1.0, 1).unwrap();
    let family = bump_family(78, 20, 1, 1.5);
    for p in [7.0, 12.0] {
        let fit = krylov_ratio(&field, &origin(), &family, p, &[1.0, 0.25], &run(&bm, 300)).unwrap();
        assert!(fit.fitted_c.is_finite() && fit.fitted_c > 0.0);
        assert!(fit.holds_with(fit.fitted_c));
    }
}

#[test]
fn zero_bump_rejected() {
    let field = library_field("free", &params()).unwrap();
    let bm = BrownianGrid::covering(5, 1.0 / 64.0, 1.0, 1).unwrap();
    let mut family = bump_family(1, 20, 1, 1.0);
    family[3].amplitude = 0.0;
    let err = krylov_ratio(&field, &origin(), &family, 7.0, &[1.0], &run(&bm, 10)).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn mgf_trivial_cases() {
    let xs = vec![0.3, 0.1, 0.7];
    let rows = khasminskii_mgf(&xs, &[0.0], 1.0, 1.0, 4.0 / 21.0, 1.0).unwrap();
    assert_eq!(rows[0].empirical, 1.0);
    // Deterministic integral c(t1 - t0).
    let c = 0.8;
    let rows = khasminskii_mgf(&[c * 0.5; 10], &[1.0, 2.0], 2.0, 1.0, 4.0 / 21.0, 1.0).unwrap();
    for r in rows {
        assert_relative_eq!(r.empirical, (r.lambda * c * 0.5).exp(), max_relative = 1e-14);
        assert!(r.pass);
    }
    assert!(matches!(khasminskii_mgf(&[400.0], &[2.0], 1.0, 1.0, 0.2, 1.0), Err(kinetic_core::Error::BoundExceeded { .. })));
    assert!(khasminskii_mgf(&[-1.0], &[1.0], 1.0, 1.0, 0.2, 1.0).unwrap_err().is_validation());
    let table = mgf_table(&khasminskii_mgf(&xs, &[1.0], 1.0, 1.0, 0.2, 1.0).unwrap()).render();
    assert!(table.starts_with("lambda,empirical_mgf,bound,pass\n"));
}

#[test]
fn khasminskii_bound_counts_whole_subwindows() {
    // Below one sub-window the bound stays at 2.
    assert_eq!(khasminskii_bound(1.0, 1e-3, 1.0, 0.2, 1.0), 2.0);
    // (2·1·1·1)^{5} = 32 sub-windows.
    assert_eq!(khasminskii_bound(1.0, 1.0, 1.0, 0.2, 1.0), 2f64.powi(32));
}

#[test]
fn factorial_moments() {
    let c = 0.4;
    let rows = moment_factorial_check(&[c; 8], &[1, 2, 3, 4, 5, 6], 1.0, c, 0.25, 1.0).unwrap();
    for r in &rows {
        assert_relative_eq!(r.empirical, c.powi(r.m as i32), max_relative = 1e-14);
        assert!(r.pass);
    }
    assert!(moment_factorial_check(&[1.0], &[7], 1.0, 1.0, 0.2, 1.0).unwrap_err().is_validation());
    assert!(moment_factorial_check(&[1.0], &[0], 1.0, 1.0, 0.2, 1.0).unwrap_err().is_validation());
}

#[test]
fn corollary_bounds_hold_on_the_family() {
    let field = mollified(&library_field("hoelder-drift", &params()).unwrap(), 4).unwrap();
    let bm = BrownianGrid::covering(6, 1.0 / 128.0, 1.0, 1).unwrap();
    let family = bump_family(77, 20, 1, 1.5);
    let fit = krylov_ratio(&field, &origin(), &family, 7.0, &[1.0, 0.25, 0.0625], &run(&bm, 1000)).unwrap();
    for (i, bump) in family.iter().enumerate() {
        let ints: Vec<f64> = fit.full_window.iter().map(|r| r[i]).collect();
        let norm = bump.lp_norm(7.0);
        for row in khasminskii_mgf(&ints, &[1.0, 2.0, 4.0], fit.fitted_c, norm, fit.beta, 1.0).unwrap() {
            assert!(row.pass, "bump {i}: {row:?}");
        }
        for row in moment_factorial_check(&ints, &[1, 2, 3, 4], fit.fitted_c, norm, fit.beta, 1.0).unwrap() {
            assert!(row.pass, "bump {i}: {row:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bump_is_nonnegative_and_cut(
        cx in -2.0..2.0f64, cv in -2.0..2.0f64, wx in 0.05..1.0f64, wv in 0.05..1.0f64,
        x in -5.0..5.0f64, v in -5.0..5.0f64,
    ) {
        let b = KineticBump { center: vec![cx, cv], widths: vec![wx, wv], amplitude: 1.0, cut: 4.0 };
        let value = b.eval(&[x, v]);
        prop_assert!((0.0..=1.0).contains(&value));
        let r2 = ((x - cx) / wx).powi(2) + ((v - cv) / wv).powi(2);
        if r2 > 16.0 {
            prop_assert_eq!(value, 0.0);
        }
    }

    #[test]
    fn norm_scales_with_amplitude(a in 0.1..5.0f64, p in 1.0..12.0f64) {
        let mut b = KineticBump { center: vec![0.0, 0.0], widths: vec![0.3, 0.5], amplitude: 1.0, cut: 4.0 };
        let base = b.lp_norm(p);
        b.amplitude = a;
        prop_assert!((b.lp_norm(p) - a * base).abs() <= 1e-12 * a * base);
    }
}
