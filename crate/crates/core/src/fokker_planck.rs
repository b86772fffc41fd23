//! Particle approximation of the forward (Fokker–Planck) equation: empirical
//! measures from simulated atoms, the weak-form residual against smooth
//! test functions, and distances to the exact Gaussian law of the drift-free
//! system.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::coefficients::Coefficients;
use crate::csvfmt::Table;
use crate::error::{Error, Result};
use crate::kolmogorov_kernel::{kernel_sample, transport_mean, KernelCovariance};
use crate::rng::{halton, Domain, Stream};
use crate::sde_integrator::{mean_and_se, steps_for, BrownianGrid, Initial, Scheme, StepPlan, Stepper, BLOWUP_THRESHOLD};

/// Divergent atoms tolerated before a run is rejected.
pub const ATOM_DIVERGENCE_BUDGET: f64 = 1e-3;

/// Uniformly weighted atoms at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub t: f64,
    /// Index of each atom in the original ensemble.
    pub ids: Vec<usize>,
    pub atoms: Vec<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mass(&self) -> f64 {
        if self.atoms.is_empty() {
            0.0
        } else {
            self.atoms.iter().map(|_| 1.0 / self.atoms.len() as f64).sum()
        }
    }

    /// `μ(f)`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.atoms.iter().map(|z| f(z)).sum::<f64>() / self.atoms.len() as f64
    }

    pub fn mean(&self) -> DVector<f64> {
        let dim = self.atoms[0].len();
        let mut m = DVector::zeros(dim);
        for z in &self.atoms {
            m += DVector::from_column_slice(z);
        }
        m / self.atoms.len() as f64
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let dim = m.len();
        let mut c = DMatrix::zeros(dim, dim);
        for z in &self.atoms {
            let y = DVector::from_column_slice(z) - &m;
            c += &y * y.transpose();
        }
        c / (self.atoms.len() as f64 - 1.0).max(1.0)
    }
}

/// Atoms CSV with columns `t,atom_id,x...,v...`.
pub fn atoms_table(measures: &[EmpiricalMeasure], d: usize) -> Table {
    let mut names = vec!["t".to_string(), "atom_id".to_string()];
    if d == 1 {
        names.extend(["x".to_string(), "v".to_string()]);
    } else {
        names.extend((1..=d).map(|i| format!("x{i}")));
        names.extend((1..=d).map(|i| format!("v{i}")));
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut table = Table::new(&refs);
    for m in measures {
        for (id, z) in m.ids.iter().zip(&m.atoms) {
            let mut row = crate::row![m.t, *id];
            row.extend(z.iter().map(|x| crate::csvfmt::Cell::from(*x)));
            table.push(row);
        }
    }
    table
}

/// Initial laws with compact support (or a Gaussian) supported by the particle runs.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Point(Vec<f64>),
    /// Independent coordinates with the given means and standard deviations.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    UniformBall { center: Vec<f64>, radius: f64 },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point(z) => z.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::UniformBall { center, .. } => center.len(),
        }
    }

    pub fn to_initial(&self) -> Result<Initial> {
        Ok(match self.clone() {
            InitialLaw::Point(z) => Initial::Point(z),
            InitialLaw::Gaussian { mean, std } => {
                if std.len() != mean.len() || std.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::validation("gaussian law needs one nonnegative std per coordinate"));
                }
                Initial::Law(Box::new(move |s: &mut Stream| mean.iter().zip(&std).map(|(m, sd)| m + sd * s.normal()).collect()))
            }
            InitialLaw::UniformBall { center, radius } => {
                if !(radius > 0.0) {
                    return Err(Error::validation("ball radius must be positive"));
                }
                Initial::Law(Box::new(move |s: &mut Stream| {
                    // Direction from a normal vector, radius by inversion of r^k.
                    let k = center.len();
                    let g: Vec<f64> = (0..k).map(|_| s.normal()).collect();
                    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    let r = radius * s.uniform().powf(1.0 / k as f64);
                    center.iter().zip(&g).map(|(c, x)| c + r * x / norm).collect()
                }))
            }
        })
    }
}

/// Settings of a particle run.
#[derive(Debug, Clone, Copy)]
pub struct ParticleRun<'a> {
    pub brownian: &'a BrownianGrid,
    pub horizon: f64,
    pub dt: f64,
    pub atoms: usize,
    pub scheme: Scheme,
}

fn checkpoint_steps(checkpoints: &[f64], plan: &StepPlan, horizon: f64) -> Result<Vec<usize>> {
    checkpoints
        .iter()
        .map(|&t| {
            if !(0.0..=horizon * (1.0 + 1e-12)).contains(&t) {
                return Err(Error::validation("checkpoint outside [0, T]"));
            }
            if t == 0.0 {
                Ok(0)
            } else {
                steps_for(t, plan.dt)
            }
        })
        .collect()
}

fn check_budget(diverged: usize, total: usize) -> Result<()> {
    if diverged as f64 > ATOM_DIVERGENCE_BUDGET * total as f64 {
        return Err(Error::TooManyDivergent { diverged, total });
    }
    Ok(())
}

enum AtomEvent<'a> {
    /// About to step from `z` at time `t` with increment `dw`.
    Step { t: f64, z: &'a [f64], dw: &'a [f64] },
    /// Arrived at step `k`.
    Reached { k: usize, z: &'a [f64] },
}

/// Evolves one atom, reporting every step and arrival. `None` when the atom
/// diverges.
fn evolve_atom(
    field: &dyn Coefficients,
    initial: &Initial,
    plan: &StepPlan,
    run: &ParticleRun,
    atom: usize,
    mut on: impl FnMut(AtomEvent),
) -> Result<Option<()>> {
    let d = field.d();
    let mut z = initial.draw(run.brownian.seed, atom as u64);
    if z.len() != 2 * d {
        return Err(Error::validation("initial law dimension must be 2d"));
    }
    let mut stepper = Stepper::new(field, run.scheme)?;
    let mut path = run.brownian.path(atom as u64);
    let (mut dw, mut di) = (vec![0.0; d], vec![0.0; d]);
    on(AtomEvent::Reached { k: 0, z: &z });
    for k in 0..plan.steps {
        path.next(plan.stride, &mut dw, &mut di)?;
        let t = k as f64 * plan.dt;
        on(AtomEvent::Step { t, z: &z, dw: &dw });
        stepper.step(t, plan.dt, &mut z, &dw, &di);
        let n2: f64 = z.iter().map(|x| x * x).sum();
        if !(n2 <= BLOWUP_THRESHOLD * BLOWUP_THRESHOLD) {
            return Ok(None);
        }
        on(AtomEvent::Reached { k: k + 1, z: &z });
    }
    Ok(Some(()))
}

/// Particle measures at the requested checkpoint times.
pub fn particle_measure(
    field: &dyn Coefficients,
    law: &InitialLaw,
    run: &ParticleRun,
    checkpoints: &[f64],
) -> Result<Vec<EmpiricalMeasure>> {
    if run.atoms == 0 {
        return Err(Error::validation("need at least one atom"));
    }
    let initial = law.to_initial()?;
    let plan = StepPlan::new(run.horizon, run.dt, run.brownian)?;
    let ks = checkpoint_steps(checkpoints, &plan, run.horizon)?;
    let per_atom = crate::parallel::map_indexed(run.atoms, |i| -> Result<Option<Vec<Vec<f64>>>> {
        let mut snaps = vec![Vec::new(); ks.len()];
        let done = evolve_atom(field, &initial, &plan, run, i, |event| {
            if let AtomEvent::Reached { k, z } = event {
                for (slot, &kc) in snaps.iter_mut().zip(&ks) {
                    if kc == k {
                        *slot = z.to_vec();
                    }
                }
            }
        })?;
        Ok(done.map(|_| snaps))
    });
    let mut measures: Vec<EmpiricalMeasure> =
        checkpoints.iter().map(|&t| EmpiricalMeasure { t, ids: Vec::new(), atoms: Vec::new() }).collect();
    let mut diverged = 0;
    for (i, snaps) in per_atom.into_iter().enumerate() {
        match snaps? {
            Some(snaps) => {
                for (m, z) in measures.iter_mut().zip(snaps) {
                    m.ids.push(i);
                    m.atoms.push(z);
                }
            }
            None => diverged += 1,
        }
    }
    check_budget(diverged, run.atoms)?;
    Ok(measures)
}

pub type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes a vector-valued derivative into the output slice.
pub type VectorFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Test function with analytic derivatives. `hess_v` is row-major `d × d`.
pub struct TestFunction {
    pub name: String,
    pub value: ScalarFn,
    pub grad_x: Option<VectorFn>,
    pub grad_v: Option<VectorFn>,
    pub hess_v: Option<VectorFn>,
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        TestFunction {
            name: format!("const({c})"),
            value: Box::new(move |_| c),
            grad_x: Some(Box::new(|_, g| g.fill(0.0))),
            grad_v: Some(Box::new(|_, g| g.fill(0.0))),
            hess_v: Some(Box::new(|_, h| h.fill(0.0))),
        }
    }

    fn is_c2(&self) -> bool {
        self.grad_x.is_some() && self.grad_v.is_some() && self.hess_v.is_some()
    }
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).field("c2", &self.is_c2()).finish()
    }
}

/// Smooth radial cutoff equal to 1 on `|z - c| ≤ inner` and 0 beyond `outer`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauBump {
    pub center: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
}

/// `e^{-1/u}` and its first two derivatives.
fn flat_exp(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let a = (-1.0 / u).exp();
    (a, a / (u * u), a * (1.0 / u.powi(4) - 2.0 / u.powi(3)))
}

/// Smooth step `h(u)` rising from 0 at `u = 0` to 1 at `u = 1`, with `h'` and `h''`.
fn smooth_step(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let (a, a1, a2) = flat_exp(u);
    let (b, b1, b2) = flat_exp(1.0 - u);
    let den = a + b;
    let den1 = a1 - b1;
    let den2 = a2 + b2;
    let num1 = a1 * den - a * den1;
    (a / den, num1 / (den * den), (a2 * den - a * den2) / (den * den) - 2.0 * den1 * num1 / den.powi(3))
}

struct BumpJet {
    value: f64,
    grad: Vec<f64>,
    /// Velocity block of the Hessian, row-major.
    hess_v: Vec<f64>,
}

impl PlateauBump {
    fn jet(&self, z: &[f64]) -> BumpJet {
        let dim = z.len();
        let d = dim / 2;
        let span = self.outer * self.outer - self.inner * self.inner;
        let y: Vec<f64> = z.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let s: f64 = y.iter().map(|a| a * a).sum();
        let (h, h1, h2) = smooth_step((self.outer * self.outer - s) / span);
        let grad = y.iter().map(|yk| -2.0 * h1 * yk / span).collect();
        let mut hess_v = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let diag = if a == b { -2.0 * h1 / span } else { 0.0 };
                hess_v[a * d + b] = 4.0 * h2 * y[d + a] * y[d + b] / (span * span) + diag;
            }
        }
        BumpJet { value: h, grad, hess_v }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.jet(z).value
    }
}

/// `x₁^i v₁^j · bump(z)` with analytic derivatives.
pub fn polynomial_bump(i: u32, j: u32, bump: PlateauBump) -> TestFunction {
    let bump = std::sync::Arc::new(bump);
    let mono = move |z: &[f64]| -> (f64, f64, f64, f64) {
        let d = z.len() / 2;
        let (x, v) = (z[0], z[d]);
        let pw = |b: f64, e: u32| if e == 0 { 1.0 } else { b.powi(e as i32) };
        let m = pw(x, i) * pw(v, j);
        let mx = if i == 0 { 0.0 } else { i as f64 * pw(x, i - 1) * pw(v, j) };
        let mv = if j == 0 { 0.0 } else { j as f64 * pw(x, i) * pw(v, j - 1) };
        let mvv = if j < 2 { 0.0 } else { (j * (j - 1)) as f64 * pw(x, i) * pw(v, j - 2) };
        (m, mx, mv, mvv)
    };
    let (b0, b1, b2, b3) = (bump.clone(), bump.clone(), bump.clone(), bump);
    TestFunction {
        name: format!("x^{i} v^{j} bump(r={},{})", b0.inner, b0.outer),
        value: Box::new(move |z| mono(z).0 * b0.eval(z)),
        grad_x: Some(Box::new(move |z, g| {
            let d = z.len() / 2;
            let jet = b1.jet(z);
            let (m, mx, _, _) = mono(z);
            for k in 0..d {
                g[k] = m * jet.grad[k] + if k == 0 { mx * jet.value } else { 0.0 };
            }
        })),
        grad_v: Some(Box::new(move |z, g| {
            let d = z.len() / 2;
            let jet = b2.jet(z);
            let (m, _, mv, _) = mono(z);
            for k in 0..d {
                g[k] = m * jet.grad[d + k] + if k == 0 { mv * jet.value } else { 0.0 };
            }
        })),
        hess_v: Some(Box::new(move |z, h| {
            let d = z.len() / 2;
            let jet = b3.jet(z);
            let (m, _, mv, mvv) = mono(z);
            for a in 0..d {
                for b in 0..d {
                    let mut value = m * jet.hess_v[a * d + b];
                    if a == 0 {
                        value += mv * jet.grad[d + b];
                    }
                    if b == 0 {
                        value += mv * jet.grad[d + a];
                    }
                    if a == 0 && b == 0 {
                        value += mvv * jet.value;
                    }
                    h[a * d + b] = value;
                }
            }
        })),
    }
}

/// Twelve test functions: monomials of degree ≤ 2 in `(x₁, v₁)` times two
/// plateau cutoffs centred at the origin.
pub fn test_dictionary(d: usize) -> Vec<TestFunction> {
    let mut out = Vec::new();
    for (inner, outer) in [(1.0, 3.0), (0.5, 2.0)] {
        for (i, j) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)] {
            out.push(polynomial_bump(i, j, PlateauBump { center: vec![0.0; 2 * d], inner, outer }));
        }
    }
    out
}

/// Scratch space for evaluating `𝓛φ` on many test functions at one point.
struct GeneratorWork {
    b: Vec<f64>,
    a: DMatrix<f64>,
    sigma: Vec<f64>,
    gx: Vec<f64>,
    gv: Vec<f64>,
    hv: Vec<f64>,
}

impl GeneratorWork {
    fn new(d: usize) -> Self {
        GeneratorWork {
            b: vec![0.0; d],
            a: DMatrix::zeros(d, d),
            sigma: vec![0.0; d * d],
            gx: vec![0.0; d],
            gv: vec![0.0; d],
            hv: vec![0.0; d * d],
        }
    }

    fn load(&mut self, field: &dyn Coefficients, t: f64, z: &[f64]) {
        field.drift(t, z, &mut self.b);
        field.sigma(t, z, &mut self.sigma);
        self.a = field.diffusion(t, z);
    }

    /// `(𝓛φ, ∇_vφ · σ dW)` at the loaded point.
    fn apply(&mut self, phi: &TestFunction, z: &[f64], dw: &[f64]) -> (f64, f64) {
        let d = self.b.len();
        (phi.grad_x.as_ref().expect("checked"))(z, &mut self.gx);
        (phi.grad_v.as_ref().expect("checked"))(z, &mut self.gv);
        (phi.hess_v.as_ref().expect("checked"))(z, &mut self.hv);
        let mut l = 0.0;
        for k in 0..d {
            l += z[d + k] * self.gx[k] + self.b[k] * self.gv[k];
            for m in 0..d {
                l += self.a[(k, m)] * self.hv[k * d + m];
            }
        }
        let mut mart = 0.0;
        for k in 0..d {
            let noise: f64 = (0..d).map(|m| self.sigma[k * d + m] * dw[m]).sum();
            mart += self.gv[k] * noise;
        }
        (l, mart)
    }
}

/// `𝓛φ(t, z) = v·∇ₓφ + b·∇ᵥφ + tr(a ∇ᵥ²φ)` with `a = σσ*/2`.
pub fn generator(field: &dyn Coefficients, phi: &TestFunction, t: f64, z: &[f64]) -> Result<f64> {
    if !phi.is_c2() {
        return Err(Error::validation(format!("test function {} lacks derivatives", phi.name)));
    }
    let mut work = GeneratorWork::new(field.d());
    work.load(field, t, z);
    Ok(work.apply(phi, z, &vec![0.0; field.d()]).0)
}

/// Residual of one test function at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow {
    pub phi_id: usize,
    pub t: f64,
    /// `μ_t(φ) - μ₀(φ) - Σ_s μ_s(𝓛φ) dt`.
    pub residual: f64,
    pub std_error: f64,
    /// Same expectation with the Itô integral `Σ ∇ᵥφ·σ ΔW` subtracted per
    /// atom, which removes the leading Monte Carlo noise.
    pub corrected: f64,
    pub corrected_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakResidual {
    pub rows: Vec<ResidualRow>,
    /// `Σ_s μ_s(|v| + |b_s|) dt` over the whole run.
    pub integrability: f64,
    pub used: usize,
    pub excluded: usize,
}

impl WeakResidual {
    /// Columns `phi_id,t,residual,se`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["phi_id", "t", "residual", "se"]);
        for r in &self.rows {
            t.push(crate::row![r.phi_id, r.t, r.residual, r.std_error]);
        }
        t
    }

    /// Rows of the last checkpoint.
    pub fn terminal(&self) -> Vec<ResidualRow> {
        let last = self.rows.iter().fold(f64::NEG_INFINITY, |m, r| m.max(r.t));
        self.rows.iter().copied().filter(|r| r.t == last).collect()
    }
}

fn check_tests(tests: &[TestFunction]) -> Result<()> {
    if let Some(bad) = tests.iter().find(|t| !t.is_c2()) {
        return Err(Error::validation(format!("test function {} lacks derivatives", bad.name)));
    }
    Ok(())
}

/// Weak-form residual of the particle measure, accumulated along every
/// atom with left-endpoint time quadrature.
pub fn particle_weak_residual(
    field: &dyn Coefficients,
    law: &InitialLaw,
    tests: &[TestFunction],
    run: &ParticleRun,
    checkpoints: &[f64],
) -> Result<WeakResidual> {
    check_tests(tests)?;
    let initial = law.to_initial()?;
    let plan = StepPlan::new(run.horizon, run.dt, run.brownian)?;
    let ks = checkpoint_steps(checkpoints, &plan, run.horizon)?;
    let d = field.d();
    let nt = tests.len();
    // Per atom: [raw, corrected] per (checkpoint, φ), then the gate integral.
    let per_atom = crate::parallel::map_indexed(run.atoms, |i| -> Result<Option<(Vec<f64>, f64)>> {
        let mut work = GeneratorWork::new(d);
        let mut phi0 = vec![0.0; nt];
        let mut drift_sum = vec![0.0; nt];
        let mut mart_sum = vec![0.0; nt];
        let mut gate = 0.0;
        let mut out = vec![0.0; 2 * ks.len() * nt];
        let done = evolve_atom(field, &initial, &plan, run, i, |event| match event {
            AtomEvent::Step { t, z, dw } => {
                work.load(field, t, z);
                for (j, phi) in tests.iter().enumerate() {
                    let (l, m) = work.apply(phi, z, dw);
                    drift_sum[j] += l * plan.dt;
                    mart_sum[j] += m;
                }
                let speed: f64 = z[d..].iter().map(|x| x * x).sum::<f64>().sqrt();
                let push: f64 = work.b.iter().map(|x| x * x).sum::<f64>().sqrt();
                gate += (speed + push) * plan.dt;
            }
            AtomEvent::Reached { k, z } => {
                if k == 0 {
                    for (j, phi) in tests.iter().enumerate() {
                        phi0[j] = (phi.value)(z);
                    }
                }
                for (c, &kc) in ks.iter().enumerate() {
                    if kc == k {
                        for (j, phi) in tests.iter().enumerate() {
                            let raw = (phi.value)(z) - phi0[j] - drift_sum[j];
                            out[2 * (c * nt + j)] = raw;
                            out[2 * (c * nt + j) + 1] = raw - mart_sum[j];
                        }
                    }
                }
            }
        })?;
        Ok(done.map(|_| (out, gate)))
    });
    let mut kept = Vec::new();
    let mut gate = 0.0;
    let mut excluded = 0;
    for r in per_atom {
        match r? {
            Some((v, g)) => {
                gate += g;
                kept.push(v);
            }
            None => excluded += 1,
        }
    }
    check_budget(excluded, run.atoms)?;
    let used = kept.len();
    let mut rows = Vec::new();
    for (c, &t) in checkpoints.iter().enumerate() {
        for j in 0..nt {
            let idx = 2 * (c * nt + j);
            let raw: Vec<f64> = kept.iter().map(|v| v[idx]).collect();
            let cor: Vec<f64> = kept.iter().map(|v| v[idx + 1]).collect();
            let (residual, std_error) = mean_and_se(&raw);
            let (corrected, corrected_se) = mean_and_se(&cor);
            rows.push(ResidualRow { phi_id: j, t, residual, std_error, corrected, corrected_se });
        }
    }
    Ok(WeakResidual { rows, integrability: gate / used as f64, used, excluded })
}

/// Weak-form residual from a measure at every time step (uniform spacing,
/// atoms identified by id across steps).
pub fn weak_residual(measures: &[EmpiricalMeasure], field: &dyn Coefficients, tests: &[TestFunction]) -> Result<WeakResidual> {
    check_tests(tests)?;
    if measures.len() < 2 || measures.iter().any(|m| m.is_empty()) {
        return Err(Error::EmptyMeasure);
    }
    let dt = measures[1].t - measures[0].t;
    let ids = &measures[0].ids;
    if !(dt > 0.0) || measures.iter().any(|m| &m.ids != ids) {
        return Err(Error::validation("measures must share atom ids on a uniform time grid"));
    }
    let d = field.d();
    let n = ids.len();
    let mut work = GeneratorWork::new(d);
    let zeros = vec![0.0; d];
    let mut drift_sum = vec![vec![0.0; tests.len()]; n];
    let mut gate = 0.0;
    let mut rows = Vec::new();
    for (k, m) in measures.iter().enumerate() {
        if (m.t - measures[0].t - k as f64 * dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::validation("measures must be equally spaced"));
        }
        for (j, phi) in tests.iter().enumerate() {
            let raw: Vec<f64> = (0..n)
                .map(|a| (phi.value)(&m.atoms[a]) - (phi.value)(&measures[0].atoms[a]) - drift_sum[a][j])
                .collect();
            let (residual, std_error) = mean_and_se(&raw);
            rows.push(ResidualRow { phi_id: j, t: m.t, residual, std_error, corrected: residual, corrected_se: std_error });
        }
        if k + 1 == measures.len() {
            break;
        }
        for (a, z) in m.atoms.iter().enumerate() {
            work.load(field, m.t, z);
            for (j, phi) in tests.iter().enumerate() {
                drift_sum[a][j] += work.apply(phi, z, &zeros).0 * dt;
            }
            let speed: f64 = z[d..].iter().map(|x| x * x).sum::<f64>().sqrt();
            let push: f64 = work.b.iter().map(|x| x * x).sum::<f64>().sqrt();
            gate += (speed + push) * dt / n as f64;
        }
    }
    Ok(WeakResidual { rows, integrability: gate, used: n, excluded: 0 })
}

/// Exact law of `Z_t` for zero drift and constant diffusion `a = σσ*/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMeasure {
    pub fn sample(&self, n: usize, seed: u64) -> EmpiricalMeasure {
        let dim = self.mean.len();
        let chol = self.cov.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::zeros(dim, dim));
        let atoms = (0..n)
            .map(|i| {
                let mut s = Stream::new(seed, Domain::Kernel, i as u64);
                let g = DVector::from_fn(dim, |_, _| s.normal());
                (&self.mean + &chol * g).iter().copied().collect()
            })
            .collect();
        EmpiricalMeasure { t: f64::NAN, ids: (0..n).collect(), atoms }
    }
}

pub fn exact_measure_constant(a: &DMatrix<f64>, z0: &[f64], t: f64) -> Result<GaussianMeasure> {
    let d = a.nrows();
    if z0.len() != 2 * d {
        return Err(Error::validation("z0 must have length 2d"));
    }
    if t < 0.0 {
        return Err(Error::validation("time must be nonnegative"));
    }
    let mean = DVector::from_vec(transport_mean(z0, t));
    if t == 0.0 {
        return Ok(GaussianMeasure { mean, cov: DMatrix::zeros(2 * d, 2 * d) });
    }
    let cov = KernelCovariance::constant(a, t)?;
    Ok(GaussianMeasure { mean, cov: cov.matrix().clone() })
}

/// Draws from the exact Gaussian via the kernel sampler, one stream per atom.
pub fn exact_sample(z0: &[f64], cov: &KernelCovariance, n: usize, seed: u64) -> EmpiricalMeasure {
    let atoms = (0..n).map(|i| kernel_sample(z0, cov, &mut Stream::new(seed, Domain::Kernel, i as u64))).collect();
    EmpiricalMeasure { t: cov.h(), ids: (0..n).collect(), atoms }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Largest gap over a fixed dictionary of 20 Lipschitz-1 tents.
    TestFunctionSup,
    /// Mean 1-Wasserstein distance of 32 random one-dimensional projections.
    SlicedW1,
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Empirical(&'a EmpiricalMeasure),
    Gaussian(&'a GaussianMeasure),
}

pub const SLICE_COUNT: usize = 32;
pub const TENT_COUNT: usize = 20;
const DIRECTION_SEED: u64 = 0x5eed_d1ec;

/// The fixed projection directions used by [`Metric::SlicedW1`].
pub fn slice_directions(dim: usize) -> Vec<Vec<f64>> {
    (0..SLICE_COUNT)
        .map(|i| {
            let mut s = Stream::new(DIRECTION_SEED, Domain::Directions, i as u64);
            let g: Vec<f64> = (0..dim).map(|_| s.normal()).collect();
            let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Tents `max(0, r - |z - c|)` with centres on a Halton set in `[-2, 2]^dim`
/// and radii in `[0.5, 1.5]`.
fn tents(dim: usize) -> Vec<(Vec<f64>, f64)> {
    (0..TENT_COUNT)
        .map(|i| {
            let h = halton(i + 1, dim + 1);
            (h[..dim].iter().map(|u| 4.0 * u - 2.0).collect(), 0.5 + h[dim])
        })
        .collect()
}

fn tent(z: &[f64], c: &[f64], r: f64) -> f64 {
    let dist = z.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    (r - dist).max(0.0)
}

/// `∫ f dN(m, Σ)` by tensor Gauss–Hermite quadrature.
fn gaussian_expectation(g: &GaussianMeasure, f: impl Fn(&[f64]) -> f64) -> f64 {
    let dim = g.mean.len();
    let order = ((1e6f64).powf(1.0 / dim as f64).floor() as usize).clamp(2, 64);
    let eig = g.cov.clone().symmetric_eigen();
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let mut z = vec![0.0; dim];
    crate::quadrature::tensor(&crate::quadrature::normal_rule(order), dim)
        .iter()
        .map(|(xi, w)| {
            let y = &g.mean + &root * DVector::from_column_slice(xi);
            z.copy_from_slice(y.as_slice());
            w * f(&z)
        })
        .sum()
}

fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs
}

/// Distance between an empirical measure and another empirical measure or
/// a Gaussian.
pub fn measure_distance(mu: &EmpiricalMeasure, nu: Target, metric: Metric) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let dim = mu.atoms[0].len();
    match nu {
        Target::Empirical(e) if e.is_empty() => return Err(Error::EmptyMeasure),
        Target::Empirical(e) if e.atoms[0].len() != dim => return Err(Error::validation("dimension mismatch")),
        Target::Gaussian(g) if g.mean.len() != dim => return Err(Error::validation("dimension mismatch")),
        _ => {}
    }
    Ok(match metric {
        Metric::TestFunctionSup => tents(dim)
            .iter()
            .map(|(c, r)| {
                let a = mu.integrate(|z| tent(z, c, *r));
                let b = match nu {
                    Target::Empirical(e) => e.integrate(|z| tent(z, c, *r)),
                    Target::Gaussian(g) => gaussian_expectation(g, |z| tent(z, c, *r)),
                };
                (a - b).abs()
            })
            .fold(0.0, f64::max),
        Metric::SlicedW1 => {
            let dirs = slice_directions(dim);
            let project = |m: &EmpiricalMeasure, u: &[f64]| -> Vec<f64> {
                sorted(m.atoms.iter().map(|z| z.iter().zip(u).map(|(a, b)| a * b).sum()).collect())
            };
            dirs.iter()
                .map(|u| {
                    let a = project(mu, u);
                    match nu {
                        Target::Empirical(e) => wasserstein_1d(&a, &project(e, u)),
                        Target::Gaussian(g) => {
                            let uv = DVector::from_column_slice(u);
                            let m = g.mean.dot(&uv);
                            let s = (uv.transpose() * &g.cov * &uv)[(0, 0)].max(0.0).sqrt();
                            let n = a.len() as f64;
                            if s == 0.0 {
                                a.iter().map(|x| (x - m).abs()).sum::<f64>() / n
                            } else {
                                let normal = Normal::new(m, s).expect("positive scale");
                                a.iter()
                                    .enumerate()
                                    .map(|(i, x)| (x - normal.inverse_cdf((i as f64 + 0.5) / n)).abs())
                                    .sum::<f64>()
                                    / n
                            }
                        }
                    }
                })
                .sum::<f64>()
                / dirs.len() as f64
        }
    })
}

/// W1 between two sorted samples, matching quantiles on the merged grid.
fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    // ∫|F_a⁻¹(q) - F_b⁻¹(q)| dq over the union of breakpoints.
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut q = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next = ((i + 1) as f64 / na).min((j + 1) as f64 / nb);
        total += (next - q) * (a[i] - b[j]).abs();
        q = next;
        if (i + 1) as f64 / na <= next {
            i += 1;
        }
        if (j + 1) as f64 / nb <= next {
            j += 1;
        }
    }
    total
}

/// Sampling floor: the same distance between two independent exact draws
/// of size `n`.
pub fn two_sample_floor(z0: &[f64], cov: &KernelCovariance, n: usize, seed: u64, metric: Metric) -> Result<f64> {
    let a = exact_sample(z0, cov, n, seed);
    let b = exact_sample(z0, cov, n, seed.wrapping_add(1));
    measure_distance(&a, Target::Empirical(&b), metric)
}
