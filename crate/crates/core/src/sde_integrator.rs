//! Time stepping for `dX = V dt, dV = b dt + σ dW` with addressable noise,
//! synchronous coupling and streaming ensemble reducers.

use nalgebra::DMatrix;

use crate::coefficients::Coefficients;
use crate::csvfmt::Table;
use crate::error::{Error, Result};
use crate::rng::{words_for_normals, Domain, Stream};

/// Paths whose state exceeds this norm are declared divergent.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

/// Fraction of divergent paths an ensemble tolerates.
pub const DIVERGENCE_BUDGET: f64 = 1e-3;

/// Brownian increments on a fine uniform grid, keyed by
/// `(seed, path, step)`. Each fine step carries `ΔW` and
/// `I = ∫ (t_{k+1} - r) dW_r`, so kinetic-exact steps and coarser
/// schemes share the same underlying path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianGrid {
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub d: usize,
}

impl BrownianGrid {
    pub fn new(seed: u64, dt: f64, steps: usize, d: usize) -> Result<Self> {
        if !(dt > 0.0) || steps == 0 || d == 0 {
            return Err(Error::validation("Brownian grid needs dt > 0, steps ≥ 1, d ≥ 1"));
        }
        Ok(BrownianGrid { seed, dt, steps, d })
    }

    /// Grid covering `[0, horizon]` with step `dt`.
    pub fn covering(seed: u64, dt: f64, horizon: f64, d: usize) -> Result<Self> {
        BrownianGrid::new(seed, dt, steps_for(horizon, dt)?, d)
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    fn words_per_step(&self) -> u128 {
        words_for_normals(2 * self.d)
    }

    /// Increments of path `index`, starting at fine step `step`.
    pub fn path_from(&self, index: u64, step: usize) -> BrownianPath {
        let mut stream = Stream::new(self.seed, Domain::Brownian, index);
        stream.seek_words(step as u128 * self.words_per_step());
        BrownianPath { grid: *self, stream, cursor: step, normals: vec![0.0; 2 * self.d] }
    }

    pub fn path(&self, index: u64) -> BrownianPath {
        self.path_from(index, 0)
    }
}

/// Number of steps of size `dt` in `horizon`; rejects non-integral ratios.
pub fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::validation("need dt > 0 and T ≥ 0"));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
        return Err(Error::validation(format!("dt = {dt} does not divide T = {horizon}")));
    }
    Ok(n as usize)
}

/// Sequential reader over one path of a [`BrownianGrid`].
pub struct BrownianPath {
    grid: BrownianGrid,
    stream: Stream,
    cursor: usize,
    normals: Vec<f64>,
}

impl BrownianPath {
    pub fn position(&self) -> usize {
        self.cursor
    }

    /// Next fine increment.
    pub fn next_fine(&mut self, dw: &mut [f64], di: &mut [f64]) -> Result<()> {
        if self.cursor >= self.grid.steps {
            return Err(Error::validation("Brownian grid exhausted"));
        }
        let d = self.grid.d;
        let dt = self.grid.dt;
        self.stream.fill_normal(&mut self.normals);
        let (s1, s3) = (dt.sqrt(), (dt * dt * dt / 12.0).sqrt());
        for i in 0..d {
            dw[i] = s1 * self.normals[i];
            di[i] = 0.5 * dt * dw[i] + s3 * self.normals[d + i];
        }
        self.cursor += 1;
        Ok(())
    }

    /// Aggregate `stride` fine steps into one coarse increment.
    pub fn next(&mut self, stride: usize, dw: &mut [f64], di: &mut [f64]) -> Result<()> {
        if stride == 1 {
            return self.next_fine(dw, di);
        }
        let d = self.grid.d;
        dw.iter_mut().for_each(|x| *x = 0.0);
        di.iter_mut().for_each(|x| *x = 0.0);
        let mut fw = vec![0.0; d];
        let mut fi = vec![0.0; d];
        for j in 0..stride {
            self.next_fine(&mut fw, &mut fi)?;
            let lag = (stride - 1 - j) as f64 * self.grid.dt;
            for i in 0..d {
                dw[i] += fw[i];
                di[i] += lag * fw[i] + fi[i];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Euler–Maruyama with the left-point drift.
    EulerMaruyama,
    /// Exact Gaussian noise over each step (constant `σ`), Euler drift.
    KineticExact,
}

impl Scheme {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "em" => Ok(Scheme::EulerMaruyama),
            "kinetic-exact" => Ok(Scheme::KineticExact),
            other => Err(Error::validation(format!("unknown scheme `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "em",
            Scheme::KineticExact => "kinetic-exact",
        }
    }
}

/// Fixed step settings for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub dt: f64,
    pub steps: usize,
    /// Fine Brownian steps per scheme step.
    pub stride: usize,
}

impl StepPlan {
    pub fn new(horizon: f64, dt: f64, brownian: &BrownianGrid) -> Result<Self> {
        let steps = steps_for(horizon, dt)?;
        let stride = steps_for(dt, brownian.dt)?;
        if stride == 0 {
            return Err(Error::validation("scheme step finer than the Brownian grid"));
        }
        if steps * stride > brownian.steps {
            return Err(Error::validation("horizon exceeds the Brownian grid"));
        }
        Ok(StepPlan { dt, steps, stride })
    }
}

/// One explicit step for one field. Holds scratch space so the hot loop
/// does not allocate.
pub struct Stepper<'a> {
    field: &'a dyn Coefficients,
    scheme: Scheme,
    constant_sigma: Option<DMatrix<f64>>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(field: &'a dyn Coefficients, scheme: Scheme) -> Result<Self> {
        let constant_sigma = field.constant_sigma();
        if scheme == Scheme::KineticExact && constant_sigma.is_none() {
            return Err(Error::validation("kinetic-exact needs a constant diffusion coefficient"));
        }
        let d = field.d();
        Ok(Stepper { field, scheme, constant_sigma, drift: vec![0.0; d], sigma: vec![0.0; d * d] })
    }

    /// Advance `z` from time `t` by `dt` with noise `(dw, di)`.
    pub fn step(&mut self, t: f64, dt: f64, z: &mut [f64], dw: &[f64], di: &[f64]) {
        let d = self.drift.len();
        self.field.drift(t, z, &mut self.drift);
        match &self.constant_sigma {
            Some(s) => {
                for i in 0..d {
                    for j in 0..d {
                        self.sigma[i * d + j] = s[(i, j)];
                    }
                }
            }
            None => self.field.sigma(t, z, &mut self.sigma),
        }
        for i in 0..d {
            let mut nv = 0.0;
            let mut nx = 0.0;
            for j in 0..d {
                nv += self.sigma[i * d + j] * dw[j];
                nx += self.sigma[i * d + j] * di[j];
            }
            let v = z[d + i];
            z[i] += v * dt;
            if self.scheme == Scheme::KineticExact {
                z[i] += nx;
            }
            z[d + i] = v + self.drift[i] * dt + nv;
        }
    }
}

fn blown_up(z: &[f64]) -> bool {
    let n2: f64 = z.iter().map(|x| x * x).sum();
    !(n2 <= BLOWUP_THRESHOLD * BLOWUP_THRESHOLD)
}

/// Run one path and hand every node `(k, t_k, z_k)` to `observe`.
pub fn evolve_observed(
    field: &dyn Coefficients,
    z0: &[f64],
    plan: &StepPlan,
    path: &mut BrownianPath,
    scheme: Scheme,
    mut observe: impl FnMut(usize, f64, &[f64]),
) -> Result<Vec<f64>> {
    let d = field.d();
    if z0.len() != 2 * d {
        return Err(Error::validation("initial state must have length 2d"));
    }
    let mut stepper = Stepper::new(field, scheme)?;
    let mut z = z0.to_vec();
    let (mut dw, mut di) = (vec![0.0; d], vec![0.0; d]);
    observe(0, 0.0, &z);
    for k in 0..plan.steps {
        path.next(plan.stride, &mut dw, &mut di)?;
        let t = k as f64 * plan.dt;
        stepper.step(t, plan.dt, &mut z, &dw, &di);
        if blown_up(&z) {
            return Err(Error::Divergence { step: k + 1 });
        }
        observe(k + 1, (k + 1) as f64 * plan.dt, &z);
    }
    Ok(z)
}

/// Two fields driven by the same increments; `observe` sees both states.
#[allow(clippy::too_many_arguments)]
pub fn evolve_coupled_observed(
    field_a: &dyn Coefficients,
    field_b: &dyn Coefficients,
    z0_a: &[f64],
    z0_b: &[f64],
    plan: &StepPlan,
    path: &mut BrownianPath,
    scheme: Scheme,
    mut observe: impl FnMut(usize, f64, &[f64], &[f64]),
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = field_a.d();
    if field_b.d() != d || z0_a.len() != 2 * d || z0_b.len() != 2 * d {
        return Err(Error::validation("coupled fields and states must share the dimension"));
    }
    let mut sa = Stepper::new(field_a, scheme)?;
    let mut sb = Stepper::new(field_b, scheme)?;
    let (mut za, mut zb) = (z0_a.to_vec(), z0_b.to_vec());
    let (mut dw, mut di) = (vec![0.0; d], vec![0.0; d]);
    observe(0, 0.0, &za, &zb);
    for k in 0..plan.steps {
        path.next(plan.stride, &mut dw, &mut di)?;
        let t = k as f64 * plan.dt;
        sa.step(t, plan.dt, &mut za, &dw, &di);
        sb.step(t, plan.dt, &mut zb, &dw, &di);
        if blown_up(&za) || blown_up(&zb) {
            return Err(Error::Divergence { step: k + 1 });
        }
        observe(k + 1, (k + 1) as f64 * plan.dt, &za, &zb);
    }
    Ok((za, zb))
}

/// Sampled path on the uniform grid `t_k = k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    states: Vec<f64>,
    width: usize,
}

impl Trajectory {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.width..(k + 1) * self.width]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Columns `t,x1..xd,v1..vd`.
    pub fn to_table(&self) -> Table {
        let d = self.width / 2;
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=d).map(|i| format!("v{i}")));
        let mut table = Table::new(&header);
        for (k, &t) in self.times.iter().enumerate() {
            let mut row = vec![crate::csvfmt::Cell::from(t)];
            row.extend(self.state(k).iter().map(|&x| crate::csvfmt::Cell::from(x)));
            table.push(row);
        }
        table
    }
}

/// Single path of `field` from `z0` up to `T`, consuming path `path_index`
/// of `brownian`.
pub fn evolve(
    field: &dyn Coefficients,
    z0: &[f64],
    horizon: f64,
    dt: f64,
    brownian: &BrownianGrid,
    path_index: u64,
    scheme: Scheme,
) -> Result<Trajectory> {
    let plan = StepPlan::new(horizon, dt, brownian)?;
    let mut times = Vec::with_capacity(plan.steps + 1);
    let mut states = Vec::with_capacity((plan.steps + 1) * z0.len());
    evolve_observed(field, z0, &plan, &mut brownian.path(path_index), scheme, |_, t, z| {
        times.push(t);
        states.extend_from_slice(z);
    })?;
    Ok(Trajectory { times, states, width: z0.len() })
}

/// Two paths under synchronous coupling.
#[allow(clippy::too_many_arguments)]
pub fn evolve_coupled(
    field_a: &dyn Coefficients,
    field_b: &dyn Coefficients,
    z0_a: &[f64],
    z0_b: &[f64],
    horizon: f64,
    dt: f64,
    brownian: &BrownianGrid,
    path_index: u64,
    scheme: Scheme,
) -> Result<(Trajectory, Trajectory)> {
    let plan = StepPlan::new(horizon, dt, brownian)?;
    let n = (plan.steps + 1) * z0_a.len();
    let mut times = Vec::with_capacity(plan.steps + 1);
    let (mut states_a, mut states_b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    evolve_coupled_observed(
        field_a,
        field_b,
        z0_a,
        z0_b,
        &plan,
        &mut brownian.path(path_index),
        scheme,
        |_, t, za, zb| {
            times.push(t);
            states_a.extend_from_slice(za);
            states_b.extend_from_slice(zb);
        },
    )?;
    let w = z0_a.len();
    Ok((
        Trajectory { times: times.clone(), states: states_a, width: w },
        Trajectory { times, states: states_b, width: w },
    ))
}

pub type StateFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Path functional accumulated while a path runs.
pub enum Reducer {
    /// `f(Z_T)`.
    Terminal { name: String, f: StateFn },
    /// `sup_k f(Z_{t_k})`.
    Supremum { name: String, f: StateFn },
    /// `∫_{t0}^{t1} f(Z_s) ds` with `Z` held constant on each step.
    Occupation { name: String, f: StateFn, t0: f64, t1: f64 },
}

impl Reducer {
    pub fn terminal(name: &str, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Reducer::Terminal { name: name.into(), f: Box::new(f) }
    }

    pub fn supremum(name: &str, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Reducer::Supremum { name: name.into(), f: Box::new(f) }
    }

    pub fn occupation(name: &str, t0: f64, t1: f64, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Reducer::Occupation { name: name.into(), f: Box::new(f), t0, t1 }
    }

    pub fn name(&self) -> &str {
        match self {
            Reducer::Terminal { name, .. } | Reducer::Supremum { name, .. } | Reducer::Occupation { name, .. } => name,
        }
    }
}

pub type LawSampler = Box<dyn Fn(&mut Stream) -> Vec<f64> + Send + Sync>;

/// Starting states for an ensemble.
pub enum Initial {
    Point(Vec<f64>),
    /// Sampled per path from the `InitialLaw` stream of that path.
    Law(LawSampler),
}

impl Initial {
    pub fn draw(&self, seed: u64, path: u64) -> Vec<f64> {
        match self {
            Initial::Point(z) => z.clone(),
            Initial::Law(f) => f(&mut Stream::new(seed, Domain::InitialLaw, path)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub estimates: Vec<Estimate>,
    pub diverged: usize,
    pub total: usize,
}

impl EnsembleStats {
    pub fn get(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    /// Columns `reducer,estimate,std_error,N`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["reducer", "estimate", "std_error", "N"]);
        for e in &self.estimates {
            t.push(crate::row![e.name.as_str(), e.estimate, e.std_error, e.n]);
        }
        t
    }
}

/// Mean and standard error of a sample.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-path reducer values, in path order. `None` marks a divergent path.
pub fn ensemble_samples(
    field: &dyn Coefficients,
    initial: &Initial,
    plan: &StepPlan,
    brownian: &BrownianGrid,
    paths: usize,
    scheme: Scheme,
    reducers: &[Reducer],
) -> Vec<Option<Vec<f64>>> {
    crate::parallel::map_indexed(paths, |p| {
        let z0 = initial.draw(brownian.seed, p as u64);
        let mut acc: Vec<f64> = reducers
            .iter()
            .map(|r| match r {
                Reducer::Supremum { .. } => f64::NEG_INFINITY,
                _ => 0.0,
            })
            .collect();
        let dt = plan.dt;
        let run = evolve_observed(field, &z0, plan, &mut brownian.path(p as u64), scheme, |k, t, z| {
            for (a, r) in acc.iter_mut().zip(reducers) {
                match r {
                    Reducer::Terminal { f, .. } => {
                        if k == plan.steps {
                            *a = f(z);
                        }
                    }
                    Reducer::Supremum { f, .. } => *a = a.max(f(z)),
                    Reducer::Occupation { f, t0, t1, .. } => {
                        let w = (t + dt).min(*t1) - t.max(*t0);
                        if w > 0.0 && k < plan.steps {
                            *a += w * f(z);
                        }
                    }
                }
            }
        });
        run.ok().map(|_| acc)
    })
}

/// Run `paths` paths and reduce in ascending path order.
#[allow(clippy::too_many_arguments)]
pub fn ensemble(
    field: &dyn Coefficients,
    initial: &Initial,
    horizon: f64,
    dt: f64,
    brownian: &BrownianGrid,
    paths: usize,
    scheme: Scheme,
    reducers: &[Reducer],
) -> Result<EnsembleStats> {
    if paths < 2 {
        return Err(Error::validation("an ensemble needs at least two paths"));
    }
    let plan = StepPlan::new(horizon, dt, brownian)?;
    let samples = ensemble_samples(field, initial, &plan, brownian, paths, scheme, reducers);
    let diverged = samples.iter().filter(|s| s.is_none()).count();
    if diverged as f64 > DIVERGENCE_BUDGET * paths as f64 {
        return Err(Error::TooManyDivergent { diverged, total: paths });
    }
    let kept: Vec<&Vec<f64>> = samples.iter().flatten().collect();
    let estimates = reducers
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let xs: Vec<f64> = kept.iter().map(|s| s[i]).collect();
            let (estimate, std_error) = mean_and_se(&xs);
            Estimate { name: r.name().to_string(), estimate, std_error, n: xs.len() }
        })
        .collect();
    Ok(EnsembleStats { estimates, diverged, total: paths })
}
