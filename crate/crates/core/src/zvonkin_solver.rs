//! Backward kinetic equation `∂_t u + v·∇_x u + a:∇²_v u + b·∇_v u - λu + b = 0`,
//! `u_T = 0`, solved by Duhamel quadrature and Picard iteration on a periodic
//! phase-space grid, and the Zvonkin change of variables `H = v + u`.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::coefficients::Coefficients;
use crate::csvfmt::Table;
use crate::error::{Error, Result};
use crate::function_spaces::{phase_axes, wavenumber_table, GridFunction, Spectral};
use crate::kolmogorov_kernel::{tail_mass, KernelCovariance, SpectralSemigroup, TAIL_TOLERANCE};
use crate::rng::{Domain, Stream};
use crate::sde_integrator::{steps_for, BrownianGrid, Initial, Scheme, StepPlan, Stepper};

/// Vector field `u_t` sampled on a uniform time grid of `[0, T]`.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    template: GridFunction,
    pub dt: f64,
    pub lambda: f64,
    pub horizon: f64,
    pub a: DMatrix<f64>,
    components: usize,
    slices: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    /// Zero field with `components` scalar components per slice.
    pub fn zeros(template: &GridFunction, components: usize, horizon: f64, dt: f64, a: &DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if template.kinds() != phase_axes(d).as_slice() {
            return Err(Error::validation("space-time fields live on a phase-space grid"));
        }
        let m = steps_for(horizon, dt)?;
        Ok(SpaceTimeField {
            template: GridFunction::zeros_like(template),
            dt,
            lambda: 0.0,
            horizon,
            a: a.clone(),
            components,
            slices: vec![vec![0.0; components * template.len()]; m + 1],
        })
    }

    /// Field whose slice `i` is `f(t_i)` (one grid function per component).
    pub fn from_slices(
        template: &GridFunction,
        horizon: f64,
        dt: f64,
        a: &DMatrix<f64>,
        f: impl Fn(f64) -> Vec<GridFunction>,
    ) -> Result<Self> {
        let mut out = SpaceTimeField::zeros(template, f(0.0).len(), horizon, dt, a)?;
        for i in 0..out.slices.len() {
            let parts = f(i as f64 * dt);
            out.slices[i] = parts.iter().flat_map(|g| g.values().iter().copied()).collect();
        }
        Ok(out)
    }

    pub fn grid(&self) -> &GridFunction {
        &self.template
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn slice_count(&self) -> usize {
        self.slices.len()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn component(&self, slice: usize, c: usize) -> &[f64] {
        let n = self.template.len();
        &self.slices[slice][c * n..(c + 1) * n]
    }

    pub fn grid_function(&self, slice: usize, c: usize) -> GridFunction {
        self.template.with_values(self.component(slice, c).to_vec())
    }

    pub fn sup_norm(&self) -> f64 {
        self.slices.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn slice_sup(&self, slice: usize) -> f64 {
        self.slices[slice].iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Spectral operators shared by every slice of one grid.
struct SliceOps {
    sp: Spectral,
    kv: Vec<Vec<f64>>,
    d: usize,
}

impl SliceOps {
    fn new(template: &GridFunction, d: usize) -> Self {
        let ks = wavenumber_table(template);
        SliceOps { sp: Spectral::for_grid(template), kv: ks[d..].to_vec(), d }
    }

    /// `∂_{v_l} g` for every `l`.
    fn grad_v(&self, g: &[f64]) -> Vec<Vec<f64>> {
        let spec = self.sp.forward_real(g);
        let mut idx = vec![0; 2 * self.d];
        (0..self.d)
            .map(|l| {
                let mut s = spec.clone();
                for (flat, c) in s.iter_mut().enumerate() {
                    self.sp.unravel(flat, &mut idx);
                    *c *= Complex64::new(0.0, self.kv[l][idx[self.d + l]]);
                }
                self.sp.inverse_real(s)
            })
            .collect()
    }
}

fn check_sources(template: &GridFunction, sources: &[Vec<f64>], a: &DMatrix<f64>, horizon: f64) -> Result<()> {
    let cov = KernelCovariance::constant(a, horizon)?;
    for s in sources {
        let tail = tail_mass(&template.with_values(s.clone()), &cov);
        if tail > TAIL_TOLERANCE {
            return Err(Error::Accuracy(format!("kernel tail mass {tail:.3e} leaves the box")));
        }
    }
    Ok(())
}

/// `u_t = ∫_t^T e^{-λ(s-t)} P_{t,s} f_s ds` by the trapezoid rule on the
/// slice grid. The recursion
/// `u_i = e^{-λdt} P_dt (u_{i+1} + dt/2 f_{i+1}) + dt/2 f_i`
/// reproduces the composite trapezoid sum because `P` is a semigroup.
pub fn duhamel_resolvent(source: &SpaceTimeField, lambda: f64) -> Result<SpaceTimeField> {
    if !(lambda >= 0.0) {
        return Err(Error::validation("λ must be nonnegative"));
    }
    let template = &source.template;
    let n = template.len();
    let last = source.slices.len() - 1;
    for j in 0..=last {
        let parts: Vec<Vec<f64>> = (0..source.components).map(|c| source.component(j, c).to_vec()).collect();
        check_sources(template, &parts, &source.a, source.horizon - source.time(j))?;
    }
    let cov = KernelCovariance::constant(&source.a, source.dt)?;
    let semigroup = SpectralSemigroup::new(template, &cov)?;
    let decay = (-lambda * source.dt).exp();
    let half = 0.5 * source.dt;
    let mut out = source.clone();
    out.lambda = lambda;
    out.slices[last].iter_mut().for_each(|v| *v = 0.0);
    for i in (0..last).rev() {
        let mut next = vec![0.0; out.components * n];
        for c in 0..out.components {
            let carry: Vec<f64> =
                out.component(i + 1, c).iter().zip(source.component(i + 1, c)).map(|(u, f)| u + half * f).collect();
            let moved = semigroup.apply(&carry);
            for (k, (m, f)) in moved.iter().zip(source.component(i, c)).enumerate() {
                next[c * n + k] = decay * m + half * f;
            }
        }
        out.slices[i] = next;
    }
    Ok(out)
}

/// Configuration of the Picard fixed point `u ↦ D_λ(b·∇_v u + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardSettings {
    pub horizon: f64,
    pub dt: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings { horizon: 1.0, dt: 1.0 / 64.0, tol: 1e-8, max_iter: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub u: SpaceTimeField,
    /// Sup-norm increments `‖u^{k+1} - u^k‖_∞`, starting with `‖u^1‖_∞`.
    pub increments: Vec<f64>,
}

impl PicardSolution {
    /// `increments[k+1] / increments[k]`.
    pub fn ratios(&self) -> Vec<f64> {
        self.increments.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect()
    }

    /// Columns `iter,increment_sup`.
    pub fn history_table(&self) -> Table {
        let mut t = Table::new(&["iter", "increment_sup"]);
        for (k, inc) in self.increments.iter().enumerate() {
            t.push(crate::row![k + 1, *inc]);
        }
        t
    }
}

/// Drift sampled on the grid nodes at `t = 0`, one vector per component.
/// Library fields do not depend on time.
pub fn sample_drift(field: &dyn Coefficients, template: &GridFunction) -> Vec<Vec<f64>> {
    let d = field.d();
    let rows = crate::parallel::map_indexed(template.len(), |i| {
        let mut out = vec![0.0; d];
        field.drift(0.0, &template.coords(i), &mut out);
        out
    });
    (0..d).map(|c| rows.iter().map(|r| r[c]).collect()).collect()
}

/// Frozen diffusion `a = σ(0)σ(0)*/2` and the largest entrywise deviation
/// of `σ` from `σ(0)` over quasi-random samples.
pub fn frozen_diffusion(field: &dyn Coefficients, samples: usize) -> (DMatrix<f64>, f64) {
    let d = field.d();
    let origin = vec![0.0; 2 * d];
    let mut s0 = vec![0.0; d * d];
    field.sigma(0.0, &origin, &mut s0);
    let sigma = DMatrix::from_row_slice(d, d, &s0);
    let mut s = vec![0.0; d * d];
    let r = field.sample_radius();
    let mut deviation: f64 = 0.0;
    for i in 0..samples {
        let u = crate::rng::halton(i, 2 * d);
        let z: Vec<f64> = u.iter().map(|x| r * (2.0 * x - 1.0)).collect();
        field.sigma(0.0, &z, &mut s);
        deviation = s.iter().zip(&s0).fold(deviation, |m, (a, b)| m.max((a - b).abs()));
    }
    (&sigma * sigma.transpose() * 0.5, deviation)
}

/// Picard iteration from `u⁰ = 0` for the drift sampled in `drift`.
pub fn picard_solve_sampled(
    drift: &[Vec<f64>],
    template: &GridFunction,
    lambda: f64,
    a: &DMatrix<f64>,
    settings: &PicardSettings,
) -> Result<PicardSolution> {
    if !(lambda > 0.0) {
        return Err(Error::validation("λ must be positive"));
    }
    let d = a.nrows();
    if drift.len() != d {
        return Err(Error::validation("drift must have d components"));
    }
    check_sources(template, drift, a, settings.horizon)?;
    let n = template.len();
    let ops = SliceOps::new(template, d);
    let cov = KernelCovariance::constant(a, settings.dt)?;
    let semigroup = SpectralSemigroup::new(template, &cov)?;
    let decay = (-lambda * settings.dt).exp();
    let half = 0.5 * settings.dt;
    let mut u = SpaceTimeField::zeros(template, d, settings.horizon, settings.dt, a)?;
    u.lambda = lambda;
    let last = u.slices.len() - 1;
    let mut increments = Vec::new();

    // f = b + (b·∇_v) u, per component
    let source = |slice: &[f64]| -> Vec<f64> {
        let mut f = vec![0.0; d * n];
        for c in 0..d {
            let grads = ops.grad_v(&slice[c * n..(c + 1) * n]);
            for k in 0..n {
                let mut acc = drift[c][k];
                for (l, g) in grads.iter().enumerate() {
                    acc += drift[l][k] * g[k];
                }
                f[c * n + k] = acc;
            }
        }
        f
    };

    let mut worst_ratio: f64 = 0.0;
    for iter in 0..settings.max_iter {
        let mut carry_f = source(&u.slices[last]);
        let mut increment: f64 = 0.0;
        for i in (0..last).rev() {
            let f_i = source(&u.slices[i]);
            let mut fresh = vec![0.0; d * n];
            for c in 0..d {
                let base: Vec<f64> = u.slices[i + 1][c * n..(c + 1) * n]
                    .iter()
                    .zip(&carry_f[c * n..(c + 1) * n])
                    .map(|(v, f)| v + half * f)
                    .collect();
                let moved = semigroup.apply(&base);
                for k in 0..n {
                    fresh[c * n + k] = decay * moved[k] + half * f_i[c * n + k];
                }
            }
            increment = fresh.iter().zip(&u.slices[i]).fold(increment, |m, (a, b)| m.max((a - b).abs()));
            u.slices[i] = fresh;
            carry_f = f_i;
        }
        if !increment.is_finite() {
            return Err(Error::LambdaTooSmall { ratio: f64::INFINITY, iterations: iter + 1 });
        }
        if let Some(&prev) = increments.last() {
            if prev > 0.0 {
                worst_ratio = worst_ratio.max(increment / prev);
            }
        }
        increments.push(increment);
        if increment < settings.tol {
            return Ok(PicardSolution { u, increments });
        }
        if increments.len() >= 4 && increment > increments[0] * 1e3 {
            break;
        }
    }
    Err(Error::LambdaTooSmall { ratio: worst_ratio, iterations: increments.len() })
}

/// Picard iteration for a field with (frozen) constant diffusion.
pub fn picard_solve(
    field: &dyn Coefficients,
    template: &GridFunction,
    lambda: f64,
    settings: &PicardSettings,
) -> Result<PicardSolution> {
    let (a, _) = frozen_diffusion(field, 64);
    picard_solve_sampled(&sample_drift(field, template), template, lambda, &a, settings)
}

fn gradient_norm(grads: &[Vec<Vec<f64>>], k: usize) -> f64 {
    let d = grads.len();
    if d == 1 {
        return grads[0][0][k].abs();
    }
    DMatrix::from_fn(d, d, |c, l| grads[c][l][k]).singular_values().max()
}

/// `sup_z ‖∇_v u_t(z)‖` over all slices (operator norm per node).
pub fn grad_v_sup(u: &SpaceTimeField) -> f64 {
    let ops = SliceOps::new(&u.template, u.components);
    let mut worst: f64 = 0.0;
    for i in 0..u.slices.len() {
        let grads: Vec<Vec<Vec<f64>>> = (0..u.components).map(|c| ops.grad_v(u.component(i, c))).collect();
        for k in 0..u.template.len() {
            worst = worst.max(gradient_norm(&grads, k));
        }
    }
    worst
}

/// Outcome of the doubling search for `λ`.
#[derive(Debug, Clone)]
pub struct LambdaSearch {
    pub lambda: f64,
    pub solution: PicardSolution,
    pub grad_v_sup: f64,
    /// `(λ, ‖∇_v u‖_∞)` for every trial; infinite when Picard failed.
    pub trials: Vec<(f64, f64)>,
}

/// Double `λ` from `lambda0` until Picard converges with increment ratios
/// at most 1/2 from the second iteration on and `‖∇_v u‖_∞ ≤ 1/2`.
pub fn search_lambda(
    drift: &[Vec<f64>],
    template: &GridFunction,
    a: &DMatrix<f64>,
    settings: &PicardSettings,
    lambda0: f64,
    max_doublings: usize,
) -> Result<LambdaSearch> {
    let mut lambda = lambda0;
    let mut trials = Vec::new();
    let mut last_ratio = f64::INFINITY;
    for _ in 0..=max_doublings {
        match picard_solve_sampled(drift, template, lambda, a, settings) {
            Ok(sol) => {
                let grad = grad_v_sup(&sol.u);
                trials.push((lambda, grad));
                last_ratio = sol.ratios().iter().skip(1).fold(0.0, |m: f64, &r| m.max(r));
                if grad <= 0.5 && last_ratio <= 0.5 {
                    return Ok(LambdaSearch { lambda, solution: sol, grad_v_sup: grad, trials });
                }
            }
            Err(Error::LambdaTooSmall { ratio, .. }) => {
                last_ratio = ratio;
                trials.push((lambda, f64::INFINITY));
            }
            Err(e) => return Err(e),
        }
        lambda *= 2.0;
    }
    Err(Error::LambdaTooSmall { ratio: last_ratio, iterations: trials.len() })
}

/// Periodic cubic Lagrange interpolation on a uniform grid. Returns `None`
/// outside the box.
pub fn cubic_interpolate(template: &GridFunction, values: &[f64], z: &[f64]) -> Option<f64> {
    let rank = template.rank();
    let l = template.half_width();
    let mut base = vec![0usize; rank];
    let mut weights = vec![[0.0; 4]; rank];
    for j in 0..rank {
        if !(z[j] >= -l && z[j] < l) {
            return None;
        }
        let s = (z[j] + l) / template.spacing(j);
        let i0 = s.floor();
        let t = s - i0;
        base[j] = i0 as usize;
        // nodes at offsets -1, 0, 1, 2
        weights[j] = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
    }
    let strides = template.strides();
    let points = template.points();
    let mut acc = 0.0;
    for corner in 0..4usize.pow(rank as u32) {
        let mut rem = corner;
        let mut w = 1.0;
        let mut flat = 0;
        for j in (0..rank).rev() {
            let o = rem % 4;
            rem /= 4;
            w *= weights[j][o];
            flat += ((base[j] + points[j] + o - 1) % points[j]) * strides[j];
        }
        acc += w * values[flat];
    }
    Some(acc)
}

/// `H_t(x, v) = v + u_t(x, v)` together with `∇_v u` on every slice.
#[derive(Debug, Clone)]
pub struct ZvonkinTransform {
    pub u: SpaceTimeField,
    /// `grad[i][c][l] = ∂_{v_l} u^c` on slice `i`.
    grad: Vec<Vec<Vec<Vec<f64>>>>,
    pub sigma: DMatrix<f64>,
    pub grad_v_sup: f64,
}

/// Build `H` and `Θ = ∇_v H·σ`; rejects fields with `‖∇_v u‖_∞ > 1/2`.
pub fn zvonkin_transform(u: SpaceTimeField, sigma: &DMatrix<f64>) -> Result<ZvonkinTransform> {
    let d = u.components;
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::validation("σ must be d × d"));
    }
    let ops = SliceOps::new(&u.template, d);
    let grad: Vec<Vec<Vec<Vec<f64>>>> =
        (0..u.slices.len()).map(|i| (0..d).map(|c| ops.grad_v(u.component(i, c))).collect()).collect();
    let mut worst: f64 = 0.0;
    for g in &grad {
        for k in 0..u.template.len() {
            worst = worst.max(gradient_norm(g, k));
        }
    }
    if worst > 0.5 {
        return Err(Error::GradientBound { measured: worst });
    }
    Ok(ZvonkinTransform { u, grad, sigma: sigma.clone(), grad_v_sup: worst })
}

impl ZvonkinTransform {
    pub fn d(&self) -> usize {
        self.u.components
    }

    /// `H` at slice `i`; `None` outside the grid box.
    pub fn h(&self, slice: usize, z: &[f64]) -> Option<Vec<f64>> {
        let d = self.d();
        (0..d).map(|c| cubic_interpolate(&self.u.template, self.u.component(slice, c), z).map(|u| z[d + c] + u)).collect()
    }

    pub fn u_at(&self, slice: usize, z: &[f64]) -> Option<Vec<f64>> {
        (0..self.d()).map(|c| cubic_interpolate(&self.u.template, self.u.component(slice, c), z)).collect()
    }

    /// `∇_v H = I + ∇_v u` at grid node `k` of slice `i`.
    pub fn grad_v_h_node(&self, slice: usize, k: usize) -> DMatrix<f64> {
        let d = self.d();
        DMatrix::from_fn(d, d, |c, l| if c == l { 1.0 } else { 0.0 } + self.grad[slice][c][l][k])
    }

    /// `Θ = ∇_v H·σ` at an off-grid point.
    pub fn theta(&self, slice: usize, z: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.d();
        let mut g = DMatrix::identity(d, d);
        for c in 0..d {
            for l in 0..d {
                g[(c, l)] += cubic_interpolate(&self.u.template, &self.grad[slice][c][l], z)?;
            }
        }
        Some(g * &self.sigma)
    }
}

/// Ratios `|H_t(x,v) - H_t(x,v')| / |v - v'|` for random pairs inside the
/// middle half of the box, drawn from the `Pairs` stream.
pub fn sandwich_ratios(transform: &ZvonkinTransform, slice: usize, pairs: usize, seed: u64) -> Vec<f64> {
    let d = transform.d();
    let r = 0.5 * transform.u.template.half_width();
    let mut rng = Stream::new(seed, Domain::Pairs, slice as u64);
    let mut out = Vec::with_capacity(pairs);
    while out.len() < pairs {
        let z: Vec<f64> = (0..2 * d).map(|_| r * (2.0 * rng.uniform() - 1.0)).collect();
        let mut w = z.clone();
        for wj in w.iter_mut().skip(d) {
            *wj = r * (2.0 * rng.uniform() - 1.0);
        }
        let dv: f64 = (d..2 * d).map(|j| (z[j] - w[j]).powi(2)).sum::<f64>().sqrt();
        if dv < 1e-9 {
            continue;
        }
        let (hz, hw) = (transform.h(slice, &z).unwrap(), transform.h(slice, &w).unwrap());
        let dh: f64 = hz.iter().zip(&hw).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        out.push(dh / dv);
    }
    out
}

/// Mean residual of the Itô identity at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPoint {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStats {
    pub points: Vec<ResidualPoint>,
    pub used: usize,
    pub excluded: usize,
}

impl ResidualStats {
    /// Columns `t,mean_residual,std_error`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t", "mean_residual", "std_error"]);
        for p in &self.points {
            t.push(crate::row![p.t, p.mean, p.std_error]);
        }
        t
    }

    pub fn terminal(&self) -> &ResidualPoint {
        self.points.last().expect("at least one checkpoint")
    }
}

/// Per-path `R_t = H_t(Z_t) - H_0(Z_0) - λ∫_0^t u_s(Z_s) ds - ∫_0^t Θ_s(Z_s) dW_s`
/// (first velocity component) every `checkpoint_every` steps, along
/// Euler–Maruyama paths of `field` on the transform's time grid.
pub fn transformed_sde_residual(
    transform: &ZvonkinTransform,
    field: &dyn Coefficients,
    initial: &Initial,
    brownian: &BrownianGrid,
    paths: usize,
    scheme: Scheme,
    checkpoint_every: usize,
) -> Result<ResidualStats> {
    let u = &transform.u;
    let d = transform.d();
    if field.d() != d {
        return Err(Error::validation("field and transform dimensions differ"));
    }
    let plan = StepPlan::new(u.horizon, u.dt, brownian)?;
    let every = checkpoint_every.max(1);
    let checkpoints: Vec<usize> = (1..=plan.steps).filter(|k| k % every == 0 || *k == plan.steps).collect();
    let lambda = u.lambda;
    let per_path = crate::parallel::map_indexed(paths, |p| -> Option<Vec<f64>> {
        let z0 = initial.draw(brownian.seed, p as u64);
        let mut stepper = Stepper::new(field, scheme).ok()?;
        let mut path = brownian.path(p as u64);
        let mut z = z0.clone();
        let h0 = transform.h(0, &z0)?;
        let mut integral = vec![0.0; d];
        let (mut dw, mut di) = (vec![0.0; d], vec![0.0; d]);
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next_cp = 0;
        for k in 0..plan.steps {
            path.next(plan.stride, &mut dw, &mut di).ok()?;
            let uk = transform.u_at(k, &z)?;
            let theta = transform.theta(k, &z)?;
            for c in 0..d {
                integral[c] += lambda * uk[c] * plan.dt;
                for l in 0..d {
                    integral[c] += theta[(c, l)] * dw[l];
                }
            }
            stepper.step(k as f64 * plan.dt, plan.dt, &mut z, &dw, &di);
            if next_cp < checkpoints.len() && checkpoints[next_cp] == k + 1 {
                let h = transform.h(k + 1, &z)?;
                out.push(h[0] - h0[0] - integral[0]);
                next_cp += 1;
            }
        }
        Some(out)
    });
    let kept: Vec<&Vec<f64>> = per_path.iter().flatten().collect();
    let excluded = paths - kept.len();
    if kept.len() < 2 {
        return Err(Error::EmptyMeasure);
    }
    let points = checkpoints
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let xs: Vec<f64> = kept.iter().map(|r| r[j]).collect();
            let (mean, std_error) = crate::sde_integrator::mean_and_se(&xs);
            ResidualPoint { t: k as f64 * plan.dt, mean, std_error }
        })
        .collect();
    Ok(ResidualStats { points, used: kept.len(), excluded })
}
