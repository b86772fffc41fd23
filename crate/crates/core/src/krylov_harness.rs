//! Occupation-time estimates `E ∫_{t0}^{t1} f(Z_s) ds` against the
//! `(t1 - t0)^β ‖f‖_p` scaling, and the exponential and factorial moment
//! bounds that follow from it.

use crate::coefficients::Coefficients;
use crate::csvfmt::Table;
use crate::error::{Error, Result};
use crate::flow_analysis::{evolve_family, FlowRun, MomentEstimate};
use crate::rng::{halton, Domain, Stream};
use crate::sde_integrator::{mean_and_se, steps_for, BrownianGrid, Initial, StepPlan};

/// Gaussian bump with per-axis widths, cut to zero beyond `cut` widths
/// (in the normalised radius).
#[derive(Debug, Clone, PartialEq)]
pub struct KineticBump {
    pub center: Vec<f64>,
    pub widths: Vec<f64>,
    pub amplitude: f64,
    pub cut: f64,
}

impl KineticBump {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().zip(&self.center).zip(&self.widths).map(|((x, c), w)| ((x - c) / w).powi(2)).sum();
        if r2 > self.cut * self.cut {
            0.0
        } else {
            self.amplitude * (-0.5 * r2).exp()
        }
    }

    /// Exact `‖f‖_p` over phase space.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let k = self.widths.len();
        let volume: f64 = self.widths.iter().product();
        // ∫_{|u| ≤ cut} e^{-p|u|²/2} du = (2π/p)^{k/2} P(χ²_k ≤ p·cut²)
        let x = 0.5 * p * self.cut * self.cut;
        let cdf = if k.is_multiple_of(2) {
            let mut term = 1.0;
            let mut tail = 1.0;
            for i in 1..k / 2 {
                term *= x / i as f64;
                tail += term;
            }
            1.0 - (-x).exp() * tail
        } else {
            libm::erf(x.sqrt()) - {
                // odd rank: P(χ²_k ≤ 2x) = erf(√x) - e^{-x} Σ x^{i+1/2}/Γ(i+3/2)
                let mut acc = 0.0;
                let mut term = x.sqrt() / (std::f64::consts::PI.sqrt() * 0.5);
                for i in 0..(k - 1) / 2 {
                    acc += term;
                    term *= x / (i as f64 + 1.5);
                }
                (-x).exp() * acc
            }
        };
        self.amplitude.abs() * (volume * (std::f64::consts::TAU / p).powf(k as f64 / 2.0) * cdf).powf(1.0 / p)
    }
}

/// `count` bumps with centres on a Halton lattice over `[-reach, reach]^{2d}`
/// and widths drawn from the corpus stream: x-widths in `[0.1, 0.6]`,
/// v-widths in `[0.2, 1.0]`.
pub fn bump_family(seed: u64, count: usize, d: usize, reach: f64) -> Vec<KineticBump> {
    (0..count)
        .map(|i| {
            let mut rng = Stream::new(seed, Domain::Corpus, 2_000_000 + i as u64);
            let center = halton(i + 1, 2 * d).iter().map(|u| reach * (2.0 * u - 1.0)).collect();
            let widths = (0..2 * d).map(|j| if j < d { 0.1 + 0.5 * rng.uniform() } else { 0.2 + 0.8 * rng.uniform() }).collect();
            KineticBump { center, widths, amplitude: 1.0, cut: 4.0 }
        })
        .collect()
}

/// `β = 1/(2d+1) - 1/p`; requires `p > 2d+1`.
pub fn krylov_beta(d: usize, p: f64) -> Result<f64> {
    let k = (2 * d + 1) as f64;
    if p.is_nan() || p <= k {
        return Err(Error::validation(format!("p must exceed 2d+1 = {k}")));
    }
    Ok(1.0 / k - 1.0 / p)
}

pub type Observable<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);
type BoxedObservable<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

fn window_steps(window: (f64, f64), plan: &StepPlan) -> Result<(usize, usize)> {
    let (t0, t1) = window;
    if !(0.0 <= t0 && t0 < t1 && t1 <= plan.steps as f64 * plan.dt * (1.0 + 1e-12)) {
        return Err(Error::validation("window must lie inside the simulated horizon"));
    }
    let k0 = if t0 == 0.0 { 0 } else { steps_for(t0, plan.dt)? };
    Ok((k0, steps_for(t1, plan.dt)?))
}

/// Per-path trapezoid integrals `∫_{t0}^{t1} f(Z_s) ds` for every
/// observable and window, flattened as `[f · windows + w]`.
pub fn occupation_samples(
    field: &dyn Coefficients,
    initial: &Initial,
    fs: &[Observable],
    windows: &[(f64, f64)],
    run: &FlowRun,
) -> Result<Vec<Vec<f64>>> {
    let plan = StepPlan::new(run.horizon, run.dt, run.brownian)?;
    let ranges = windows.iter().map(|&w| window_steps(w, &plan)).collect::<Result<Vec<_>>>()?;
    let rows = crate::parallel::map_indexed(run.paths, |p| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; fs.len() * windows.len()];
        let mut states = vec![initial.draw(run.brownian.seed, p as u64)];
        evolve_family(field, &mut states, &plan, &mut run.brownian.path(p as u64), run.scheme, |k, s| {
            for (i, f) in fs.iter().enumerate() {
                let value = f(&s[0]);
                for (w, &(k0, k1)) in ranges.iter().enumerate() {
                    if k < k0 || k > k1 {
                        continue;
                    }
                    let weight = if k == k0 || k == k1 { 0.5 } else { 1.0 };
                    acc[i * windows.len() + w] += weight * plan.dt * value;
                }
            }
        })?;
        Ok(acc)
    });
    rows.into_iter().collect()
}

/// `E ∫_{t0}^{t1} f(Z_s) ds`.
pub fn occupation_functional(
    field: &dyn Coefficients,
    initial: &Initial,
    f: Observable,
    window: (f64, f64),
    run: &FlowRun,
) -> Result<MomentEstimate> {
    let rows = occupation_samples(field, initial, &[f], &[window], run)?;
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let (mean, std_error) = mean_and_se(&xs);
    Ok(MomentEstimate { mean, std_error, paths: xs.len() })
}

/// One `(f, window)` cell of the Krylov table.
#[derive(Debug, Clone, PartialEq)]
pub struct KrylovRow {
    pub f_id: usize,
    pub window: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// `‖f‖_{Lᵖ(t0, t1)}`.
    pub norm_lp: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovFit {
    pub beta: f64,
    pub p: f64,
    pub rows: Vec<KrylovRow>,
    /// Largest ratio over the table.
    pub fitted_c: f64,
    /// Largest ratio per window, in window order.
    pub window_c: Vec<(f64, f64)>,
    /// Per-path integrals over `[0, T]`, kept for the moment checks.
    pub full_window: Vec<Vec<f64>>,
}

impl KrylovFit {
    /// Columns `f_id,window,estimate,se,norm_lp,ratio`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["f_id", "window", "estimate", "se", "norm_lp", "ratio"]);
        for r in &self.rows {
            t.push(crate::row![r.f_id, r.window, r.estimate, r.std_error, r.norm_lp, r.ratio]);
        }
        t
    }

    /// `max / min` of the per-window constants.
    pub fn window_spread(&self) -> f64 {
        let (lo, hi) = self.window_c.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &(_, c)| (lo.min(c), hi.max(c)));
        hi / lo
    }

    /// Every row satisfies the inequality with `c`.
    pub fn holds_with(&self, c: f64) -> bool {
        self.rows.iter().all(|r| r.estimate <= c * r.window.powf(self.beta) * r.norm_lp)
    }
}

/// Ratios `E∫_{0}^{h} f(Z) / (h^β ‖f‖_{Lᵖ(0,h)})` for every bump and
/// window length `h`, all windows starting at time 0.
pub fn krylov_ratio(
    field: &dyn Coefficients,
    initial: &Initial,
    family: &[KineticBump],
    p: f64,
    window_lengths: &[f64],
    run: &FlowRun,
) -> Result<KrylovFit> {
    let beta = krylov_beta(field.d(), p)?;
    if family.iter().any(|b| b.amplitude == 0.0) {
        return Err(Error::validation("bump with zero norm"));
    }
    let mut windows: Vec<(f64, f64)> = window_lengths.iter().map(|&h| (0.0, h)).collect();
    windows.push((0.0, run.horizon));
    let closures: Vec<BoxedObservable> =
        family.iter().map(|b| Box::new(move |z: &[f64]| b.eval(z)) as BoxedObservable).collect();
    let fs: Vec<Observable> = closures.iter().map(|c| c.as_ref() as Observable).collect();
    let samples = occupation_samples(field, initial, &fs, &windows, run)?;
    let nw = windows.len();
    let mut rows = Vec::new();
    let mut window_c: Vec<(f64, f64)> = window_lengths.iter().map(|&h| (h, 0.0)).collect();
    for (i, bump) in family.iter().enumerate() {
        let norm = bump.lp_norm(p);
        for (w, &h) in window_lengths.iter().enumerate() {
            let xs: Vec<f64> = samples.iter().map(|r| r[i * nw + w]).collect();
            let (estimate, std_error) = mean_and_se(&xs);
            let norm_lp = h.powf(1.0 / p) * norm;
            let ratio = estimate / (h.powf(beta) * norm_lp);
            window_c[w].1 = window_c[w].1.max(ratio);
            rows.push(KrylovRow { f_id: i, window: h, estimate, std_error, norm_lp, ratio });
        }
    }
    let fitted_c = window_c.iter().fold(0.0f64, |m, &(_, c)| m.max(c));
    let full_window = samples.iter().map(|r| (0..family.len()).map(|i| r[i * nw + nw - 1]).collect()).collect();
    Ok(KrylovFit { beta, p, rows, fitted_c, window_c, full_window })
}

/// Conditional occupation `E(∫_{t0}^{t1} f | F_{t0})` estimated by
/// restarting `inner` fresh paths from each of `outer` time-`t0` states.
/// Returns one estimate per outer path.
pub fn conditional_occupation(
    field: &dyn Coefficients,
    initial: &Initial,
    f: Observable,
    window: (f64, f64),
    outer: usize,
    inner: usize,
    run: &FlowRun,
    restart_seed: u64,
) -> Result<Vec<MomentEstimate>> {
    let plan = StepPlan::new(run.horizon, run.dt, run.brownian)?;
    let (k0, k1) = window_steps(window, &plan)?;
    let head = StepPlan { steps: k0, ..plan };
    let tail = StepPlan { steps: k1 - k0, ..plan };
    let restart = BrownianGrid { seed: restart_seed, ..*run.brownian };
    let per_outer = crate::parallel::map_indexed(outer, |o| -> Result<MomentEstimate> {
        let mut states = vec![initial.draw(run.brownian.seed, o as u64)];
        evolve_family(field, &mut states, &head, &mut run.brownian.path(o as u64), run.scheme, |_, _| {})?;
        let start = states.pop().expect("one state");
        let mut xs = Vec::with_capacity(inner);
        for j in 0..inner {
            let mut s = vec![start.clone()];
            let mut acc = 0.0;
            let index = (o * inner + j) as u64;
            let mut path = restart.path_from(index, k0 * plan.stride);
            evolve_family(field, &mut s, &tail, &mut path, run.scheme, |k, st| {
                let w = if k == 0 || k == tail.steps { 0.5 } else { 1.0 };
                acc += w * plan.dt * f(&st[0]);
            })?;
            xs.push(acc);
        }
        let (mean, std_error) = mean_and_se(&xs);
        Ok(MomentEstimate { mean, std_error, paths: inner })
    });
    per_outer.into_iter().collect()
}

/// One row of the exponential-moment check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgfRow {
    pub lambda: f64,
    pub empirical: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `2^n` with `n = ⌈T (2Cλ‖f‖)^{1/β}⌉`, the number of sub-windows on which
/// `λC‖f‖ h^β ≤ 1/2`.
pub fn khasminskii_bound(c: f64, lambda: f64, norm: f64, beta: f64, horizon: f64) -> f64 {
    let pieces = (horizon * (2.0 * c * lambda * norm).powf(1.0 / beta)).ceil().max(1.0);
    2f64.powf(pieces)
}

/// Empirical `E exp(λ∫f)` from per-path integrals against the bound.
pub fn khasminskii_mgf(
    integrals: &[f64],
    lambdas: &[f64],
    c: f64,
    norm: f64,
    beta: f64,
    horizon: f64,
) -> Result<Vec<MgfRow>> {
    if integrals.iter().any(|&x| x < 0.0) {
        return Err(Error::validation("occupation integrals of a nonnegative f cannot be negative"));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let max_exponent = integrals.iter().fold(0.0f64, |m, &x| m.max(lambda * x));
            if max_exponent > 700.0 {
                return Err(Error::BoundExceeded { max_exponent });
            }
            let empirical = integrals.iter().map(|&x| (lambda * x).exp()).sum::<f64>() / integrals.len() as f64;
            let bound = khasminskii_bound(c, lambda, norm, beta, horizon);
            Ok(MgfRow { lambda, empirical, bound, pass: empirical <= bound })
        })
        .collect()
}

/// Columns `lambda,empirical_mgf,bound,pass`.
pub fn mgf_table(rows: &[MgfRow]) -> Table {
    let mut t = Table::new(&["lambda", "empirical_mgf", "bound", "pass"]);
    for r in rows {
        t.push(crate::row![r.lambda, r.empirical, r.bound, r.pass]);
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorialRow {
    pub m: u32,
    pub empirical: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `E(∫f)^m` against `m!(C‖f‖ h^β)^m`.
pub fn moment_factorial_check(integrals: &[f64], ms: &[u32], c: f64, norm: f64, beta: f64, window: f64) -> Result<Vec<FactorialRow>> {
    if ms.iter().any(|&m| m == 0 || m > 6) {
        return Err(Error::validation("moment orders must lie in 1..=6"));
    }
    Ok(ms
        .iter()
        .map(|&m| {
            let empirical = integrals.iter().map(|x| x.powi(m as i32)).sum::<f64>() / integrals.len() as f64;
            let factorial: f64 = (1..=m).map(f64::from).product();
            let bound = factorial * (c * norm * window.powf(beta)).powi(m as i32);
            FactorialRow { m, empirical, bound, pass: empirical <= bound }
        })
        .collect())
}
