use approx::assert_abs_diff_eq;
use kinetic_core::coefficients::{library_field, mollified, FieldParams, MollifiedField};
use kinetic_core::function_spaces::{derivative, phase_axes, GridFunction};
use kinetic_core::kolmogorov_kernel::least_squares_slope;
use kinetic_core::sde_integrator::{BrownianGrid, Initial, Scheme};
use kinetic_core::zvonkin_solver::*;
use kinetic_core::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn grid(n: usize, half_width: f64) -> GridFunction {
    GridFunction::from_fn(&phase_axes(1), n, half_width, |_| 0.0)
}

fn half() -> DMatrix<f64> {
    DMatrix::from_element(1, 1, 0.5)
}

fn bump(z: &[f64]) -> f64 {
    (-(z[0] * z[0] + z[1] * z[1]) / (2.0 * 0.36)).exp()
}

fn hoelder(n: usize, kappa: f64) -> MollifiedField {
    let base = library_field("hoelder-drift", &FieldParams { kappa, ..Default::default() }).unwrap();
    mollified(&base, n).unwrap()
}

#[test]
fn zero_source_gives_zero() {
    let t = grid(32, 6.0);
    let f = SpaceTimeField::zeros(&t, 1, 1.0, 1.0 / 16.0, &half()).unwrap();
    let u = duhamel_resolvent(&f, 1.5).unwrap();
    assert_eq!(u.sup_norm(), 0.0);
    assert_eq!(u.lambda, 1.5);
}

#[test]
fn constant_source_matches_closed_form() {
    let (c, lambda, horizon, dt) = (0.7, 2.0, 1.0, 1.0 / 32.0);
    let t = grid(16, 4.0);
    let f = SpaceTimeField::from_slices(&t, horizon, dt, &half(), |_| vec![t.with_values(vec![c; t.len()])]).unwrap();
    let u = duhamel_resolvent(&f, lambda).unwrap();
    let m = u.slice_count() - 1;
    for i in 0..=m {
        // composite trapezoid of c·e^{-λ(s-t)} on the slice grid
        let trap: f64 = (i..=m)
            .map(|j| {
                let w = if j == i || j == m { 0.5 } else { 1.0 };
                w * dt * c * (-lambda * (j - i) as f64 * dt).exp()
            })
            .sum::<f64>()
            * if i == m { 0.0 } else { 1.0 };
        let exact = c * (1.0 - (-lambda * (horizon - u.time(i))).exp()) / lambda;
        for &v in u.component(i, 0) {
            assert_abs_diff_eq!(v, trap, epsilon = 1e-13);
            assert_abs_diff_eq!(v, exact, epsilon = c * lambda * dt * dt);
        }
    }
}

fn pde_residual(dt: f64) -> f64 {
    let (lambda, horizon) = (1.0, 0.5);
    let t = grid(64, 8.0);
    let src = t.with_values(GridFunction::from_fn(&phase_axes(1), 64, 8.0, bump).values().to_vec());
    let f = SpaceTimeField::from_slices(&t, horizon, dt, &half(), |s| {
        vec![src.with_values(src.values().iter().map(|v| v * (1.0 + s)).collect())]
    })
    .unwrap();
    let u = duhamel_resolvent(&f, lambda).unwrap();
    let m = u.slice_count() - 1;
    let mut worst: f64 = 0.0;
    for i in m / 4..3 * m / 4 {
        let g = u.grid_function(i, 0);
        let ux = derivative(&g, 0, 1);
        let uvv = derivative(&g, 1, 2);
        for k in 0..t.len() {
            let z = t.coords(k);
            let ut = (u.component(i + 1, 0)[k] - u.component(i - 1, 0)[k]) / (2.0 * dt);
            let r = ut + z[1] * ux.values()[k] + 0.5 * uvv.values()[k] - lambda * g.values()[k]
                + f.component(i, 0)[k];
            worst = worst.max(r.abs());
        }
    }
    worst
}

#[test]
fn pde_residual_vanishes_under_refinement() {
    let dts = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let res: Vec<f64> = dts.iter().map(|&dt| pde_residual(dt)).collect();
    let slope = least_squares_slope(&dts.map(f64::log2), &res.iter().map(|r| r.log2()).collect::<Vec<_>>());
    assert!(slope >= 1.0, "residuals {res:?}, slope {slope}");
    assert!(res[2] < 1e-2, "{res:?}");
}

#[test]
fn wide_sources_are_rejected() {
    let t = grid(32, 3.0);
    let f = SpaceTimeField::from_slices(&t, 1.0, 0.125, &half(), |_| {
        vec![GridFunction::from_fn(&phase_axes(1), 32, 3.0, |z| (-(z[0] - 2.0).powi(2)).exp())]
    })
    .unwrap();
    assert!(matches!(duhamel_resolvent(&f, 1.0), Err(Error::Accuracy(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn terminal_slice_is_exactly_zero(cx in -1.0f64..1.0, cv in -1.0f64..1.0, lambda in 0.0f64..8.0) {
        let t = grid(32, 8.0);
        let f = SpaceTimeField::from_slices(&t, 0.5, 1.0 / 16.0, &half(), |s| {
            vec![GridFunction::from_fn(&phase_axes(1), 32, 8.0, |z| (1.0 + s) * bump(&[z[0] - cx, z[1] - cv]))]
        }).unwrap();
        let u = duhamel_resolvent(&f, lambda).unwrap();
        let last = u.slice_count() - 1;
        prop_assert!(u.component(last, 0).iter().all(|&v| v == 0.0));
        prop_assert!(u.sup_norm().is_finite());
    }
}

#[test]
fn resolvent_decays_like_min_horizon_inverse_lambda() {
    let horizon = 1.0;
    let t = grid(96, 12.0);
    let src = GridFunction::from_fn(&phase_axes(1), 96, 12.0, bump);
    let f = SpaceTimeField::from_slices(&t, horizon, 1.0 / 64.0, &half(), |_| vec![src.clone()]).unwrap();
    let ladder = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let sups: Vec<f64> = ladder.iter().map(|&l| duhamel_resolvent(&f, l).unwrap().sup_norm()).collect();
    for (l, s) in ladder.iter().zip(&sups) {
        // ‖u‖ ≤ ∫ e^{-λs} ‖f‖ ds ≤ (T ∧ 1/λ)‖f‖, with trapezoid slack
        assert!(*s <= (horizon.min(1.0 / l)) * (1.0 + 0.02 * l), "λ {l}: {s}");
    }
    assert!(sups.windows(2).all(|w| w[1] < w[0]), "{sups:?}");
    let tail = sups[6] / sups[5];
    assert!(tail > 0.45 && tail < 0.6, "large-λ regime should halve: {tail}");
}

#[test]
fn picard_with_zero_drift_stops_after_one_iteration() {
    let t = grid(32, 8.0);
    let drift = vec![vec![0.0; t.len()]];
    let sol = picard_solve_sampled(&drift, &t, 1.0, &half(), &PicardSettings { dt: 1.0 / 16.0, ..Default::default() })
        .unwrap();
    assert_eq!(sol.increments, vec![0.0]);
    assert_eq!(sol.u.sup_norm(), 0.0);
}

#[test]
fn constant_drift_fixed_point_is_closed_form() {
    let (c, lambda, dt) = (0.4, 3.0, 1.0 / 128.0);
    let t = grid(16, 4.0);
    let drift = vec![vec![c; t.len()]];
    let sol = picard_solve_sampled(&drift, &t, lambda, &half(), &PicardSettings { dt, ..Default::default() }).unwrap();
    assert!(sol.increments.len() <= 2, "{:?}", sol.increments);
    for i in 0..sol.u.slice_count() {
        let exact = c * (1.0 - (-lambda * (1.0 - sol.u.time(i))).exp()) / lambda;
        for &v in sol.u.component(i, 0) {
            assert_abs_diff_eq!(v, exact, epsilon = c * lambda * dt * dt);
        }
    }
}

#[test]
fn hoelder_field_contracts_at_searched_lambda() {
    let field = hoelder(4, 1.0);
    let t = grid(128, 9.0);
    let drift = sample_drift(&field, &t);
    let (a, deviation) = frozen_diffusion(&field, 64);
    assert_eq!(deviation, 0.0);
    let settings = PicardSettings { dt: 1.0 / 32.0, ..Default::default() };
    let found = search_lambda(&drift, &t, &a, &settings, 1.0, 8).unwrap();
    assert!(found.grad_v_sup <= 0.5);
    assert!(found.solution.ratios().iter().skip(1).all(|&r| r <= 0.5), "{:?}", found.solution.ratios());
    assert!(*found.solution.increments.last().unwrap() < settings.tol);
    // each trial doubles λ
    for w in found.trials.windows(2) {
        assert_eq!(w[1].0, 2.0 * w[0].0);
    }
    assert_eq!(found.trials.last().unwrap().0, found.lambda);
    let table = found.solution.history_table().render();
    assert!(table.starts_with("iter,increment_sup\n1,"));
}

#[test]
fn small_lambda_is_reported() {
    let field = hoelder(4, 12.0);
    let t = grid(128, 9.0);
    let drift = sample_drift(&field, &t);
    let settings = PicardSettings { dt: 1.0 / 16.0, max_iter: 12, ..Default::default() };
    match picard_solve_sampled(&drift, &t, 0.05, &half(), &settings) {
        Err(Error::LambdaTooSmall { ratio, iterations }) => {
            assert!(ratio > 0.5, "{ratio}");
            assert!(iterations <= 12);
        }
        other => panic!("expected λ-too-small, got {:?}", other.map(|s| s.increments)),
    }
}

#[test]
fn gradient_shrinks_when_lambda_quadruples() {
    let t = grid(128, 9.0);
    let settings = PicardSettings { dt: 1.0 / 32.0, ..Default::default() };
    for name in ["free", "constant-sigma-smooth-b", "hoelder-drift"] {
        let base = library_field(name, &FieldParams::default()).unwrap();
        let field = mollified(&base, 4).unwrap();
        let drift = sample_drift(&field, &t);
        let (a, _) = frozen_diffusion(&field, 16);
        let g1 = grad_v_sup(&picard_solve_sampled(&drift, &t, 2.0, &a, &settings).unwrap().u);
        let g4 = grad_v_sup(&picard_solve_sampled(&drift, &t, 8.0, &a, &settings).unwrap().u);
        assert!(g4 <= g1 + 1e-6, "{name}: {g1} -> {g4}");
    }
}

#[test]
fn zero_field_gives_identity_transform() {
    let t = grid(32, 4.0);
    let sigma = DMatrix::from_element(1, 1, 1.3);
    let u = SpaceTimeField::zeros(&t, 1, 1.0, 0.25, &half()).unwrap();
    let tr = zvonkin_transform(u, &sigma).unwrap();
    for z in [[0.1, -0.7], [3.9, 2.2], [-4.0, 0.0]] {
        assert_eq!(tr.h(2, &z).unwrap(), vec![z[1]]);
        assert_eq!(tr.theta(2, &z).unwrap()[(0, 0)], 1.3);
    }
    assert!(tr.h(0, &[4.0, 0.0]).is_none());
}

#[test]
fn steep_fields_are_rejected() {
    let t = grid(32, 4.0);
    let u = SpaceTimeField::from_slices(&t, 1.0, 0.25, &half(), |_| {
        vec![GridFunction::from_fn(&phase_axes(1), 32, 4.0, |z| (-z[1] * z[1]).exp() * 3.0)]
    })
    .unwrap();
    match zvonkin_transform(u, &DMatrix::identity(1, 1)) {
        Err(Error::GradientBound { measured }) => assert!(measured > 0.5),
        other => panic!("expected gradient-bound error, got {:?}", other.map(|t| t.grad_v_sup)),
    }
}

#[test]
fn cubic_interpolation_reproduces_cubics_in_the_interior() {
    let t = GridFunction::from_fn(&phase_axes(1), 40, 5.0, |z| z[0].powi(3) - 2.0 * z[0] * z[1] * z[1] + z[1]);
    for z in [[0.13f64, -1.71], [-2.2, 2.9], [1.0, 0.0]] {
        let exact = z[0].powi(3) - 2.0 * z[0] * z[1] * z[1] + z[1];
        assert_abs_diff_eq!(cubic_interpolate(&t, t.values(), &z).unwrap(), exact, epsilon = 1e-11);
    }
    assert!(cubic_interpolate(&t, t.values(), &[5.0, 0.0]).is_none());
    assert!(cubic_interpolate(&t, t.values(), &[0.0, f64::NAN]).is_none());
}

fn hoelder_transform(dt: f64) -> (MollifiedField, ZvonkinTransform) {
    let field = hoelder(4, 1.0);
    let t = grid(128, 9.0);
    let drift = sample_drift(&field, &t);
    let settings = PicardSettings { dt, ..Default::default() };
    let sol = picard_solve_sampled(&drift, &t, 4.0, &half(), &settings).unwrap();
    let tr = zvonkin_transform(sol.u, &DMatrix::identity(1, 1)).unwrap();
    (field, tr)
}

#[test]
fn transform_gradient_and_sandwich() {
    let (_, tr) = hoelder_transform(1.0 / 32.0);
    assert!(tr.grad_v_sup <= 0.5);
    let slice = 3;
    let g = derivative(&tr.u.grid_function(slice, 0), 1, 1);
    for k in (0..tr.u.grid().len()).step_by(97) {
        assert_abs_diff_eq!(tr.grad_v_h_node(slice, k)[(0, 0)], 1.0 + g.values()[k], epsilon = 1e-14);
    }
    for slice in [0, 16] {
        let ratios = sandwich_ratios(&tr, slice, 10_000, 5);
        assert_eq!(ratios.len(), 10_000);
        assert!(ratios.iter().all(|r| (0.5..=1.5).contains(r)));
    }
    assert_eq!(sandwich_ratios(&tr, 0, 50, 5), sandwich_ratios(&tr, 0, 50, 5));
}

#[test]
fn residual_vanishes_for_free_field() {
    let field = library_field("free", &FieldParams::default()).unwrap();
    let t = grid(32, 9.0);
    let u = SpaceTimeField::zeros(&t, 1, 1.0, 1.0 / 64.0, &half()).unwrap();
    let tr = zvonkin_transform(u, &DMatrix::identity(1, 1)).unwrap();
    let bm = BrownianGrid::covering(2, 1.0 / 64.0, 1.0, 1).unwrap();
    let stats =
        transformed_sde_residual(&tr, &field, &Initial::Point(vec![0.5, -0.5]), &bm, 500, Scheme::EulerMaruyama, 16)
            .unwrap();
    assert_eq!(stats.points.len(), 4);
    assert_eq!(stats.used + stats.excluded, 500);
    for p in &stats.points {
        assert!(p.mean.abs() < 1e-12 && p.std_error < 1e-12, "{p:?}");
    }
    assert!(stats.to_table().render().starts_with("t,mean_residual,std_error\n"));
}

#[test]
fn residual_mean_shrinks_with_dt() {
    let mut dts = Vec::new();
    let mut means = Vec::new();
    for e in 5..=8 {
        let dt = 2f64.powi(-e);
        let (field, tr) = hoelder_transform(dt);
        let bm = BrownianGrid::covering(11, dt, 1.0, 1).unwrap();
        let stats =
            transformed_sde_residual(&tr, &field, &Initial::Point(vec![0.3, -0.2]), &bm, 4000, Scheme::EulerMaruyama, 1 << e)
                .unwrap();
        assert_eq!(stats.excluded, 0);
        dts.push(dt.log2());
        means.push(stats.terminal().mean.abs().log2());
    }
    let slope = least_squares_slope(&dts, &means);
    assert!(slope >= 0.5, "log₂|E R| vs log₂ dt slope {slope}");
}
