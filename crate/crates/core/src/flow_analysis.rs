//! Stochastic-flow studies under synchronous coupling: two-point and
//! Jacobian moments, injectivity diagnostics, the mollification ladder and
//! a Monte Carlo check of a stochastic Gronwall inequality.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;

use crate::coefficients::{mollified, CoefficientField, Coefficients, Profile};
use crate::csvfmt::Table;
use crate::error::{Error, Result};
use crate::rng::{Domain, Stream};
use crate::sde_integrator::{mean_and_se, BrownianGrid, BrownianPath, Scheme, StepPlan, Stepper, BLOWUP_THRESHOLD};

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
}

impl MomentEstimate {
    fn from_samples(xs: &[f64]) -> Self {
        let (mean, std_error) = mean_and_se(xs);
        MomentEstimate { mean, std_error, paths: xs.len() }
    }
}

/// Drive every state in `states` with the same increments; `observe` sees
/// the whole family after each step (and once at `t = 0`).
pub fn evolve_family(
    field: &dyn Coefficients,
    states: &mut [Vec<f64>],
    plan: &StepPlan,
    path: &mut BrownianPath,
    scheme: Scheme,
    mut observe: impl FnMut(usize, &[Vec<f64>]),
) -> Result<()> {
    let d = field.d();
    if states.iter().any(|z| z.len() != 2 * d) {
        return Err(Error::validation("initial states must have length 2d"));
    }
    let mut stepper = Stepper::new(field, scheme)?;
    let (mut dw, mut di) = (vec![0.0; d], vec![0.0; d]);
    observe(0, states);
    for k in 0..plan.steps {
        path.next(plan.stride, &mut dw, &mut di)?;
        let t = k as f64 * plan.dt;
        for z in states.iter_mut() {
            stepper.step(t, plan.dt, z, &dw, &di);
            let n2: f64 = z.iter().map(|x| x * x).sum();
            if !(n2 <= BLOWUP_THRESHOLD * BLOWUP_THRESHOLD) {
                return Err(Error::Divergence { step: k + 1 });
            }
        }
        observe(k + 1, states);
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Simulation settings shared by the flow estimators.
#[derive(Debug, Clone, Copy)]
pub struct FlowRun<'a> {
    pub brownian: &'a BrownianGrid,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub scheme: Scheme,
}

impl FlowRun<'_> {
    fn plan(&self) -> Result<StepPlan> {
        if self.paths < 2 {
            return Err(Error::validation("at least two paths are needed"));
        }
        StepPlan::new(self.horizon, self.dt, self.brownian)
    }
}

/// `E sup_t |Z_t(z) - Z_t(z')|^{2q} / |z - z'|^{2q}` under synchronous
/// coupling, for every `q` in `qs` from the same paths. For `q < 0` the
/// supremum of the negative power is attained at the closest approach.
pub fn two_point_moment(
    field: &dyn Coefficients,
    z: &[f64],
    z_prime: &[f64],
    qs: &[f64],
    run: &FlowRun,
) -> Result<Vec<MomentEstimate>> {
    if qs.iter().any(|&q| q < -1.0) {
        return Err(Error::validation("negative moments are limited to q ≥ -1"));
    }
    let plan = run.plan()?;
    let r0 = distance(z, z_prime);
    let negative = qs.iter().any(|&q| q < 0.0);
    if r0 == 0.0 {
        if negative {
            return Err(Error::DegenerateRatio);
        }
        return Ok(qs.iter().map(|_| MomentEstimate { mean: 0.0, std_error: 0.0, paths: run.paths }).collect());
    }
    let samples = crate::parallel::map_indexed(run.paths, |p| -> Result<(f64, f64)> {
        let mut states = vec![z.to_vec(), z_prime.to_vec()];
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        evolve_family(field, &mut states, &plan, &mut run.brownian.path(p as u64), run.scheme, |_, s| {
            let r = distance(&s[0], &s[1]);
            lo = lo.min(r);
            hi = hi.max(r);
        })?;
        if negative && lo == 0.0 {
            return Err(Error::DegenerateRatio);
        }
        Ok((lo / r0, hi / r0))
    });
    let extremes = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(qs
        .iter()
        .map(|&q| {
            let xs: Vec<f64> = extremes.iter().map(|&(lo, hi)| if q < 0.0 { lo } else { hi }.powf(2.0 * q)).collect();
            MomentEstimate::from_samples(&xs)
        })
        .collect())
}

/// `E sup_t ‖∇̂Z_t(z)‖_F^q` for every `q` in `qs`, with the flow Jacobian
/// from central differences of `2·(2d)` coupled perturbed paths.
pub fn weak_gradient_moment(
    field: &dyn Coefficients,
    z: &[f64],
    delta: f64,
    qs: &[f64],
    run: &FlowRun,
) -> Result<Vec<MomentEstimate>> {
    if !(delta > 0.0 && delta <= 0.1) {
        return Err(Error::validation("delta must lie in (0, 0.1]"));
    }
    if qs.iter().any(|&q| !(q >= 1.0)) {
        return Err(Error::validation("q must be at least 1"));
    }
    let plan = run.plan()?;
    let rank = z.len();
    let samples = crate::parallel::map_indexed(run.paths, |p| -> Result<f64> {
        let mut states: Vec<Vec<f64>> = (0..2 * rank)
            .map(|i| {
                let mut s = z.to_vec();
                s[i / 2] += if i % 2 == 0 { delta } else { -delta };
                s
            })
            .collect();
        let mut worst: f64 = 0.0;
        evolve_family(field, &mut states, &plan, &mut run.brownian.path(p as u64), run.scheme, |_, s| {
            let mut frob = 0.0;
            for j in 0..rank {
                for i in 0..rank {
                    let g = (s[2 * j][i] - s[2 * j + 1][i]) / (2.0 * delta);
                    frob += g * g;
                }
            }
            worst = worst.max(frob.sqrt());
        })?;
        Ok(worst)
    });
    let norms = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(qs
        .iter()
        .map(|&q| MomentEstimate::from_samples(&norms.iter().map(|n| n.powf(q)).collect::<Vec<_>>()))
        .collect())
}

/// `E sup_t (1 + |Z_t|²)^q / (1 + |z|²)^q`.
pub fn moment_growth(field: &dyn Coefficients, z: &[f64], q: f64, run: &FlowRun) -> Result<MomentEstimate> {
    let plan = run.plan()?;
    let base = 1.0 + z.iter().map(|x| x * x).sum::<f64>();
    let samples = crate::parallel::map_indexed(run.paths, |p| -> Result<f64> {
        let mut states = vec![z.to_vec()];
        let mut worst: f64 = 0.0;
        evolve_family(field, &mut states, &plan, &mut run.brownian.path(p as u64), run.scheme, |_, s| {
            worst = worst.max(1.0 + s[0].iter().map(|x| x * x).sum::<f64>());
        })?;
        Ok((worst / base).powf(q))
    });
    let xs = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(MomentEstimate::from_samples(&xs))
}

/// Images of a uniform phase-space grid under the flow, one noise
/// realisation per replica.
#[derive(Debug, Clone)]
pub struct FlowEnsemble {
    /// Initial points, row-major over `shape`.
    pub grid: Vec<Vec<f64>>,
    pub shape: Vec<usize>,
    pub spacing: f64,
    pub replicas: usize,
    pub times: Vec<f64>,
    /// `states[replica][time][point]`.
    states: Vec<Vec<Vec<Vec<f64>>>>,
}

impl FlowEnsemble {
    pub fn image(&self, replica: usize, time: usize, point: usize) -> &[f64] {
        &self.states[replica][time][point]
    }
}

/// Flow of an `points^{2d}` grid spanning `[-half_width, half_width]^{2d}`,
/// recorded every `record_every` steps and at the horizon.
pub fn flow_ensemble(
    field: &dyn Coefficients,
    points: usize,
    half_width: f64,
    replicas: usize,
    run: &FlowRun,
    record_every: usize,
) -> Result<FlowEnsemble> {
    if points < 2 || !(half_width > 0.0) {
        return Err(Error::validation("grid needs at least two points per axis and a positive width"));
    }
    let plan = StepPlan::new(run.horizon, run.dt, run.brownian)?;
    let rank = 2 * field.d();
    let spacing = 2.0 * half_width / (points - 1) as f64;
    let total = points.pow(rank as u32);
    let grid: Vec<Vec<f64>> = (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut z = vec![0.0; rank];
            for j in (0..rank).rev() {
                z[j] = -half_width + (rem % points) as f64 * spacing;
                rem /= points;
            }
            z
        })
        .collect();
    let every = record_every.max(1);
    let recorded = |k: usize| k.is_multiple_of(every) || k == plan.steps;
    let times: Vec<f64> = (0..=plan.steps).filter(|&k| recorded(k)).map(|k| k as f64 * plan.dt).collect();
    let runs = crate::parallel::map_indexed(replicas, |r| -> Result<Vec<Vec<Vec<f64>>>> {
        let mut states = grid.clone();
        let mut frames = Vec::new();
        evolve_family(field, &mut states, &plan, &mut run.brownian.path(r as u64), run.scheme, |k, s| {
            if recorded(k) {
                frames.push(s.to_vec());
            }
        })?;
        Ok(frames)
    });
    let states = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(FlowEnsemble { grid, shape: vec![points; rank], spacing, replicas, times, states })
}

/// Injectivity proxies for one replica.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaReport {
    pub replica: usize,
    /// `min |Z(z) - Z(z')| / |z - z'|` over all grid pairs.
    pub min_ratio: f64,
    /// Grid cells whose image simplex has non-positive orientation.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomeomorphismReport {
    pub replicas: Vec<ReplicaReport>,
}

impl HomeomorphismReport {
    pub fn min_ratio(&self) -> f64 {
        self.replicas.iter().fold(f64::INFINITY, |m, r| m.min(r.min_ratio))
    }

    pub fn failures(&self) -> usize {
        self.replicas.iter().map(|r| r.failures).sum()
    }

    /// Columns `replica,min_ratio,failures`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["replica", "min_ratio", "failures"]);
        for r in &self.replicas {
            t.push(crate::row![r.replica, r.min_ratio, r.failures]);
        }
        t
    }
}

/// Separation ratios and orientation of the image of every grid cell at
/// recorded time index `time`. A flow map is an orientation-preserving
/// homeomorphism, so each forward-neighbour simplex keeps a positive
/// determinant.
pub fn homeomorphism_check(flow: &FlowEnsemble, time: usize) -> HomeomorphismReport {
    let rank = flow.shape.len();
    let total = flow.grid.len();
    let mut strides = vec![1usize; rank];
    for j in (0..rank - 1).rev() {
        strides[j] = strides[j + 1] * flow.shape[j + 1];
    }
    let replicas = crate::parallel::map_indexed(flow.replicas, |r| {
        let img = &flow.states[r][time];
        let mut min_ratio = f64::INFINITY;
        for a in 0..total {
            for b in a + 1..total {
                let ratio = distance(&img[a], &img[b]) / distance(&flow.grid[a], &flow.grid[b]);
                min_ratio = min_ratio.min(ratio);
            }
        }
        let mut failures = 0;
        'cells: for a in 0..total {
            let mut edges = DMatrix::zeros(rank, rank);
            for j in 0..rank {
                if (a / strides[j]) % flow.shape[j] + 1 == flow.shape[j] {
                    continue 'cells;
                }
                let b = a + strides[j];
                for i in 0..rank {
                    edges[(i, j)] = img[b][i] - img[a][i];
                }
            }
            if !(edges.determinant() > 0.0) {
                failures += 1;
            }
        }
        ReplicaReport { replica: r, min_ratio, failures }
    });
    HomeomorphismReport { replicas }
}

/// One consecutive pair `(n, 2n)` of the mollification ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    /// `(E sup_t |Zⁿ_t - Z²ⁿ_t|^q)^{1/q}`.
    pub e_n: f64,
    /// `‖bⁿ - b²ⁿ‖_{Lᵖ(T)} + n^{2d/p - 1}`.
    pub b_n: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Largest relative change of `e_n` when `dt` is halved.
    pub dt_spread: f64,
}

impl ConvergenceStudy {
    /// Columns `n,e_n,B_n,ratio`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["n", "e_n", "B_n", "ratio"]);
        for r in &self.rows {
            t.push(crate::row![r.n, r.e_n, r.b_n, r.ratio]);
        }
        t
    }

    /// `max / min` of `e_n / B_n` over the ladder.
    pub fn ratio_spread(&self) -> f64 {
        let (lo, hi) = self.rows.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.ratio), hi.max(r.ratio)));
        hi / lo
    }

    /// Least-squares slope of `log e_n` against `log n`.
    pub fn slope(&self) -> f64 {
        let x: Vec<f64> = self.rows.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = self.rows.iter().map(|r| r.e_n.ln()).collect();
        crate::kolmogorov_kernel::least_squares_slope(&x, &y)
    }
}

/// Panel breakpoints on `[-extent, extent]` for one axis; graded towards
/// the origin when the axis profile is singular there.
fn axis_breakpoints(profile: Profile, extent: f64, scale: f64) -> Vec<f64> {
    if let Profile::HoelderCutoff { .. } = profile {
        let inner = (4.0 * scale).min(extent);
        let mut right: Vec<f64> = (0..=32).map(|i| inner * i as f64 / 32.0).collect();
        let mut w = inner / 32.0;
        let mut x = inner;
        while x < extent {
            w *= 1.5;
            x = (x + w).min(extent);
            right.push(x);
        }
        let mut out: Vec<f64> = right.iter().skip(1).rev().map(|x| -x).collect();
        out.extend(right);
        out
    } else {
        (0..=48).map(|i| -extent + 2.0 * extent * i as f64 / 48.0).collect()
    }
}

/// `(∫ |f(z) - g(z)|^p dz)^{1/p}` for two drifts over a box, by tensor
/// Gauss–Legendre panels. Axes carrying a Hölder profile get panels
/// graded towards the kink at the scale `scale`.
pub fn drift_difference_lp(
    base: &CoefficientField,
    f: &dyn Coefficients,
    g: &dyn Coefficients,
    p: f64,
    extent: f64,
    scale: f64,
) -> Result<f64> {
    let rank = 2 * f.d();
    let gl = GaussLegendre::new(NonZeroUsize::new(8).unwrap());
    let axes: Vec<Vec<(f64, f64)>> = (0..rank)
        .map(|j| {
            let rough = base.drift_components().iter().map(|c| c.factors[j]).find(|pr| matches!(pr, Profile::HoelderCutoff { .. }));
            let bps = axis_breakpoints(rough.unwrap_or(Profile::One), extent, scale);
            let mut nodes = Vec::new();
            for w in bps.windows(2) {
                let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                for (x, wt) in gl.nodes().zip(gl.weights()) {
                    nodes.push((mid + half * x, half * wt));
                }
            }
            nodes
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let d = f.d();
    let chunk = axes[rank - 1].len();
    let partial = crate::parallel::map_indexed(total / chunk, |outer| {
        let mut z = vec![0.0; rank];
        let mut w0 = 1.0;
        let mut rem = outer;
        for j in (0..rank - 1).rev() {
            let (x, w) = axes[j][rem % axes[j].len()];
            z[j] = x;
            w0 *= w;
            rem /= axes[j].len();
        }
        let (mut bf, mut bg) = (vec![0.0; d], vec![0.0; d]);
        let mut acc = 0.0;
        for &(x, w) in &axes[rank - 1] {
            z[rank - 1] = x;
            f.drift(0.0, &z, &mut bf);
            g.drift(0.0, &z, &mut bg);
            let diff = bf.iter().zip(&bg).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            acc += w0 * w * diff.powf(p);
        }
        acc
    });
    Ok(partial.iter().sum::<f64>().powf(1.0 / p))
}

/// Settings of [`convergence_study`].
#[derive(Debug, Clone)]
pub struct LadderSpec {
    pub ladder: Vec<usize>,
    pub q: f64,
    pub p: f64,
    pub z0: Vec<f64>,
}

fn coupled_gap(a: &dyn Coefficients, b: &dyn Coefficients, z0: &[f64], q: f64, run: &FlowRun) -> Result<f64> {
    let plan = run.plan()?;
    let samples = crate::parallel::map_indexed(run.paths, |p| -> Result<f64> {
        let mut worst: f64 = 0.0;
        crate::sde_integrator::evolve_coupled_observed(
            a,
            b,
            z0,
            z0,
            &plan,
            &mut run.brownian.path(p as u64),
            run.scheme,
            |_, _, za, zb| worst = worst.max(distance(za, zb)),
        )?;
        Ok(worst.powf(q))
    });
    let xs = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok((xs.iter().sum::<f64>() / xs.len() as f64).powf(1.0 / q))
}

/// Strong distance between consecutive mollifications against the bound
/// `‖bⁿ - b²ⁿ‖_{Lᵖ(T)} + n^{2d/p-1}`, repeated at `dt/2` to gauge the
/// time-discretisation share of `e_n`.
pub fn convergence_study(base: &CoefficientField, spec: &LadderSpec, run: &FlowRun) -> Result<ConvergenceStudy> {
    if spec.ladder.len() < 3 {
        return Err(Error::validation("the ladder needs at least three entries"));
    }
    if spec.ladder.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::validation("the ladder must be dyadic"));
    }
    let d = base.d();
    if !(spec.p > (2 * (2 * d + 1)) as f64) {
        return Err(Error::validation("p must exceed 2(2d+1)"));
    }
    let extent = base.cube_half_width() + 1.0;
    let half_run = FlowRun { dt: run.dt / 2.0, ..*run };
    let mut rows = Vec::new();
    let mut dt_spread: f64 = 0.0;
    for pair in spec.ladder.windows(2) {
        let n = pair[0];
        let (fa, fb) = (mollified(base, n)?, mollified(base, pair[1])?);
        let e_n = coupled_gap(&fa, &fb, &spec.z0, spec.q, run)?;
        let e_half = coupled_gap(&fa, &fb, &spec.z0, spec.q, &half_run)?;
        if e_half > 0.0 {
            dt_spread = dt_spread.max((e_n - e_half).abs() / e_half);
        }
        let lp = drift_difference_lp(base, &fa, &fb, spec.p, extent, 1.0 / n as f64)?;
        let b_n = run.horizon.powf(1.0 / spec.p) * lp + (n as f64).powf(2.0 * d as f64 / spec.p - 1.0);
        rows.push(ConvergenceRow { n, e_n, b_n, ratio: e_n / b_n });
    }
    Ok(ConvergenceStudy { rows, dt_spread })
}

/// `mean + amp·sin(freq·s + W_s)`, with the Brownian phase optional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulated {
    pub mean: f64,
    pub amp: f64,
    pub freq: f64,
    pub noisy: bool,
}

impl Modulated {
    pub fn constant(c: f64) -> Self {
        Modulated { mean: c, amp: 0.0, freq: 0.0, noisy: false }
    }

    pub fn at(&self, s: f64, w: f64) -> f64 {
        self.mean + self.amp * (self.freq * s + if self.noisy { w } else { 0.0 }).sin()
    }
}

/// Processes `(ξ, ζ, α, β)` for the Gronwall check, driven by one Brownian
/// motion. `ζ_t = ζ₀ + ∫ζ¹ds + ∫ζ²dW` with `ζ²_s = noise·cos(W_s)·tanh(ξ_s)`,
/// and `ξ` is the right-hand side of the domination hypothesis taken with
/// equality.
#[derive(Debug, Clone, PartialEq)]
pub struct GronwallSpec {
    /// `ζ₀` uniform on this interval.
    pub zeta0: (f64, f64),
    pub zeta1: Modulated,
    pub noise: f64,
    pub beta: Modulated,
    pub alpha: Modulated,
    pub horizon: f64,
    pub dt: f64,
}

/// `(q₀, q₁, q₂, q₃)` with `q₀ ≥ 1` and the others strictly larger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallExponents {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl GronwallExponents {
    fn validate(&self) -> Result<()> {
        if !(self.q0 >= 1.0 && self.q1 > self.q0 && self.q2 > self.q0 && self.q3 > self.q0) {
            return Err(Error::validation("need q0 ≥ 1 and q1, q2, q3 > q0"));
        }
        Ok(())
    }
}

/// Both sides of the inequality for one process spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallSides {
    /// `‖ξ*_T‖_{q₀}`.
    pub lhs: f64,
    /// `‖ζ₀‖_{q₁} + ‖∫|ζ¹|‖_{q₂} + ‖∫|ζ²|²‖^{1/2}_{q₃/2}`.
    pub rhs: f64,
}

impl GronwallSides {
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else if self.lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Per-path `(ξ*_T, ζ₀, ∫|ζ¹|, ∫|ζ²|²)` and pathwise `ξ` at every step.
pub fn gronwall_path(spec: &GronwallSpec, path: &mut BrownianPath, zeta0: f64, mut observe: impl FnMut(f64, f64)) -> Result<[f64; 4]> {
    let steps = crate::sde_integrator::steps_for(spec.horizon, spec.dt)?;
    let (mut dw, mut di) = ([0.0], [0.0]);
    let mut w = 0.0;
    let mut xi = zeta0;
    let (mut sup, mut int1, mut int2) = (xi, 0.0, 0.0);
    observe(0.0, xi);
    for k in 0..steps {
        path.next_fine(&mut dw, &mut di)?;
        let s = k as f64 * spec.dt;
        let z1 = spec.zeta1.at(s, w);
        let z2 = spec.noise * w.cos() * xi.tanh();
        let (b, a) = (spec.beta.at(s, w), spec.alpha.at(s, w));
        xi += (z1 + xi * b) * spec.dt + (z2 + xi * a) * dw[0];
        if !(xi >= 0.0) {
            return Err(Error::InvalidSpec { step: k + 1 });
        }
        int1 += z1.abs() * spec.dt;
        int2 += z2 * z2 * spec.dt;
        w += dw[0];
        sup = sup.max(xi);
        observe(s + spec.dt, xi);
    }
    Ok([sup, zeta0, int1, int2])
}

/// Monte Carlo evaluation of both sides. Paths `first_path..first_path+paths`
/// of `brownian` drive the instance; `ζ₀` comes from the initial-law stream.
pub fn gronwall_sides(
    spec: &GronwallSpec,
    q: &GronwallExponents,
    brownian: &BrownianGrid,
    first_path: u64,
    paths: usize,
) -> Result<GronwallSides> {
    q.validate()?;
    if brownian.d != 1 || (brownian.dt - spec.dt).abs() > 1e-15 * spec.dt {
        return Err(Error::validation("the Gronwall check needs a scalar Brownian grid at the spec's dt"));
    }
    let rows = crate::parallel::map_indexed(paths, |p| {
        let index = first_path + p as u64;
        let mut law = Stream::new(brownian.seed, Domain::InitialLaw, index);
        let zeta0 = spec.zeta0.0 + (spec.zeta0.1 - spec.zeta0.0) * law.uniform();
        gronwall_path(spec, &mut brownian.path(index), zeta0, |_, _| {})
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let norm = |f: &dyn Fn(&[f64; 4]) -> f64, e: f64| (rows.iter().map(|r| f(r).powf(e)).sum::<f64>() / rows.len() as f64).powf(1.0 / e);
    let lhs = norm(&|r| r[0], q.q0);
    let rhs = norm(&|r| r[1], q.q1) + norm(&|r| r[2], q.q2) + norm(&|r| r[3].sqrt(), q.q3);
    Ok(GronwallSides { lhs, rhs })
}

/// Random specs with `|β| ≤ 2` and `|α| ≤ 1`, so one constant covers the
/// whole family.
pub fn gronwall_corpus(seed: u64, count: usize, dt: f64) -> Vec<GronwallSpec> {
    (0..count)
        .map(|i| {
            let mut rng = Stream::new(seed, Domain::Corpus, 1_000_000 + i as u64);
            let mut u = || rng.uniform();
            let lo = u();
            let hi = lo + 2.0 * u();
            let m1 = u();
            let zeta1 = Modulated { mean: m1, amp: m1 * u(), freq: std::f64::consts::TAU * u(), noisy: u() < 0.5 };
            let noise = u();
            let beta = Modulated { mean: 2.0 * u() - 1.0, amp: u(), freq: std::f64::consts::TAU * u(), noisy: u() < 0.5 };
            let alpha = Modulated { mean: u() - 0.5, amp: 0.5 * u(), freq: std::f64::consts::TAU * u(), noisy: u() < 0.5 };
            GronwallSpec { zeta0: (lo, hi), zeta1, noise, beta, alpha, horizon: 1.0, dt }
        })
        .collect()
}

/// Outcome of [`stochastic_gronwall_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    /// Constant calibrated on a separate corpus.
    pub calibrated_c: f64,
    /// Smallest constant making every test instance hold.
    pub smallest_c: f64,
    pub ratios: Vec<f64>,
    pub pass: bool,
}

/// Safety factor applied to the largest calibration ratio.
pub const GRONWALL_CALIBRATION_MARGIN: f64 = 1.5;

/// Calibrate one constant on `calibration`, then test every instance of
/// `suite` against it. Instance `i` uses its own block of `paths` Brownian
/// paths.
pub fn stochastic_gronwall_check(
    calibration: &[GronwallSpec],
    suite: &[GronwallSpec],
    q: &GronwallExponents,
    seed: u64,
    paths: usize,
) -> Result<GronwallReport> {
    let dt = suite.first().or(calibration.first()).map(|s| s.dt).ok_or_else(|| Error::validation("empty corpus"))?;
    let horizon = suite.iter().chain(calibration).fold(0.0f64, |m, s| m.max(s.horizon));
    let steps = crate::sde_integrator::steps_for(horizon, dt)?;
    let brownian = BrownianGrid::new(seed, dt, steps, 1)?;
    let block = paths as u64;
    let ratios_of = |specs: &[GronwallSpec], offset: u64| -> Result<Vec<f64>> {
        specs.iter().enumerate().map(|(i, s)| Ok(gronwall_sides(s, q, &brownian, (offset + i as u64) * block, paths)?.ratio())).collect()
    };
    let cal = ratios_of(calibration, suite.len() as u64)?;
    let calibrated_c = GRONWALL_CALIBRATION_MARGIN * cal.iter().fold(0.0f64, |m, &r| m.max(r));
    let ratios = ratios_of(suite, 0)?;
    let smallest_c = ratios.iter().fold(0.0f64, |m, &r| m.max(r));
    Ok(GronwallReport { calibrated_c, smallest_c, pass: smallest_c <= calibrated_c, ratios })
}
