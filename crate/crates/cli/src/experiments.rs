//! One function per experiment; each returns the CSV tables to write.

use kinetic_core::coefficients::{library_field, mollified, Coefficients, CoefficientField};
use kinetic_core::csvfmt::Table;
use kinetic_core::flow_analysis::{self as flow, FlowRun, LadderSpec};
use kinetic_core::fokker_planck::{self as fp, InitialLaw, ParticleRun};
use kinetic_core::function_spaces::{lipschitz_via_maximal_check, maximal_function, phase_axes, sample_bumps, smooth_corpus, GridFunction};
use kinetic_core::kolmogorov_kernel::{kernel_sample, transport_mean, KernelCovariance};
use kinetic_core::krylov_harness as krylov;
use kinetic_core::parallel::map_indexed;
use kinetic_core::rng::{Domain, Stream};
use kinetic_core::sde_integrator::{mean_and_se, BrownianGrid, Initial, Scheme};
use kinetic_core::zvonkin_solver as zv;
use kinetic_core::{row, Error, Result};

use crate::config::ExperimentConfig;

pub type Outputs = Vec<(&'static str, Table)>;

pub fn run(config: &ExperimentConfig) -> Result<Outputs> {
    match config.experiment()? {
        "kernel" => kernel(config),
        "flow" => flow_experiment(config),
        "converge" => converge(config),
        "zvonkin" => zvonkin(config),
        "krylov" => krylov_experiment(config),
        "fokker-planck" => fokker_planck(config),
        "spaces" => spaces(config),
        other => unreachable!("experiment `{other}` passed validation"),
    }
}

fn base_field(config: &ExperimentConfig, default: &str) -> Result<CoefficientField> {
    library_field(&config.field_name(default), &config.field_params()?)
}

/// The library field, convolved with the `mollify`-level mollifier when that key is positive.
fn field(config: &ExperimentConfig, default: &str) -> Result<Box<dyn Coefficients>> {
    let base = base_field(config, default)?;
    Ok(match config.count("mollify", 0)? {
        0 => Box::new(base),
        n => Box::new(mollified(&base, n)?),
    })
}

fn require_d1(config: &ExperimentConfig, experiment: &str) -> Result<()> {
    match config.count("d", 1)? {
        1 => Ok(()),
        d => Err(Error::validation(format!("the {experiment} experiment supports d = 1 only, got d = {d}"))),
    }
}

fn block_name(i: usize, j: usize, d: usize) -> String {
    let axis = |k: usize| if k < d { "x" } else { "v" };
    format!("{}{}", axis(i), axis(j))
}

fn kernel(config: &ExperimentConfig) -> Result<Outputs> {
    let field = field(config, "free")?;
    let d = field.d();
    let h = config.positive("T", 1.0)?;
    let origin = vec![0.0; 2 * d];
    if field.constant_sigma().is_none() {
        return Err(Error::validation("the kernel experiment needs a field with constant sigma"));
    }
    let cov = KernelCovariance::constant(&field.diffusion(0.0, &origin), h)?;
    let mut exact = Table::new(&["block", "row", "col", "value"]);
    for i in 0..2 * d {
        for j in 0..2 * d {
            exact.push(row![block_name(i, j, d), i % d, j % d, cov.matrix()[(i, j)]]);
        }
    }
    let mut out = vec![("covariance.csv", exact)];
    let n = config.count("N", 0)?;
    if n > 0 {
        let seed = config.seed()?;
        let draws = map_indexed(n, |i| kernel_sample(&origin, &cov, &mut Stream::new(seed, Domain::Kernel, i as u64)));
        let mean = transport_mean(&origin, h);
        let mut sample = Table::new(&["block", "row", "col", "value", "se"]);
        for i in 0..2 * d {
            for j in 0..2 * d {
                let prods: Vec<f64> = draws.iter().map(|z| (z[i] - mean[i]) * (z[j] - mean[j])).collect();
                let (m, se) = mean_and_se(&prods);
                sample.push(row![block_name(i, j, d), i % d, j % d, m, se]);
            }
        }
        out.push(("sample_covariance.csv", sample));
    }
    Ok(out)
}

fn flow_experiment(config: &ExperimentConfig) -> Result<Outputs> {
    let field = field(config, "hoelder-drift")?;
    let horizon = config.positive("T", 1.0)?;
    let dt = config.positive("dt", 1.0 / 64.0)?;
    let bm = BrownianGrid::covering(config.seed()?, dt, horizon, field.d())?;
    let run = FlowRun { brownian: &bm, horizon, dt, paths: 1, scheme: Scheme::EulerMaruyama };
    let replicas = config.count("N", 8)?;
    let record_every = (bm.steps / 4).max(1);
    let ensemble = flow::flow_ensemble(field.as_ref(), 16, 2.0, replicas, &run, record_every)?;
    let last = ensemble.times.len() - 1;
    let mut times = Table::new(&["t", "failures", "min_ratio"]);
    for (k, &t) in ensemble.times.iter().enumerate().skip(1) {
        let rep = flow::homeomorphism_check(&ensemble, k);
        times.push(row![t, rep.failures(), rep.min_ratio()]);
    }
    Ok(vec![("homeomorphism.csv", flow::homeomorphism_check(&ensemble, last).to_table()), ("homeomorphism_times.csv", times)])
}

fn converge(config: &ExperimentConfig) -> Result<Outputs> {
    let base = base_field(config, "hoelder-drift")?;
    let horizon = config.positive("T", 1.0)?;
    let dt = config.positive("dt", 1.0 / 256.0)?;
    let bm = BrownianGrid::covering(config.seed()?, dt / 2.0, horizon, base.d())?;
    let run = FlowRun { brownian: &bm, horizon, dt, paths: config.count("N", 200)?, scheme: Scheme::EulerMaruyama };
    let ladder = (0..config.count("n_ladder", 5)?).map(|k| 4usize << k).collect();
    let spec = LadderSpec { ladder, q: 2.0, p: config.positive("p", 12.0)?, z0: vec![0.0; 2 * base.d()] };
    Ok(vec![("convergence.csv", flow::convergence_study(&base, &spec, &run)?.to_table())])
}

fn zvonkin(config: &ExperimentConfig) -> Result<Outputs> {
    require_d1(config, "zvonkin")?;
    let field = field(config, "hoelder-drift")?;
    let horizon = config.positive("T", 1.0)?;
    let dt = config.positive("dt", 1.0 / 64.0)?;
    let a = field.constant_sigma().map(|s| &s * s.transpose() * 0.5).ok_or_else(|| {
        Error::validation("the zvonkin experiment needs a field with constant sigma")
    })?;
    let template = GridFunction::from_fn(&phase_axes(1), 128, 9.0, |_| 0.0);
    let drift = zv::sample_drift(field.as_ref(), &template);
    let settings = zv::PicardSettings { horizon, dt, ..Default::default() };
    let search = zv::search_lambda(&drift, &template, &a, &settings, config.positive("lambda", 1.0)?, 8)?;
    let mut gradient = Table::new(&["lambda", "grad_v_sup", "selected"]);
    for &(lambda, g) in &search.trials {
        gradient.push(row![lambda, g, lambda == search.lambda]);
    }
    let history = search.solution.history_table();
    let sigma = field.constant_sigma().expect("checked above");
    let transform = zv::zvonkin_transform(search.solution.u, &sigma)?;
    let bm = BrownianGrid::covering(config.seed()?, dt, horizon, 1)?;
    let residual = zv::transformed_sde_residual(
        &transform,
        field.as_ref(),
        &Initial::Point(vec![0.3, -0.2]),
        &bm,
        config.count("N", 1000)?,
        Scheme::EulerMaruyama,
        (bm.steps / 8).max(1),
    )?;
    Ok(vec![("contraction.csv", history), ("gradient_bound.csv", gradient), ("residual.csv", residual.to_table())])
}

fn krylov_experiment(config: &ExperimentConfig) -> Result<Outputs> {
    let field = field(config, "hoelder-drift")?;
    let d = field.d();
    let p = config.require("p").and_then(|_| config.real("p", 0.0))?;
    let beta = krylov::krylov_beta(d, p)?;
    let horizon = config.positive("T", 1.0)?;
    let dt = config.positive("dt", 1.0 / 256.0)?;
    let seed = config.seed()?;
    let bm = BrownianGrid::covering(seed, dt, horizon, d)?;
    let run = FlowRun { brownian: &bm, horizon, dt, paths: config.count("N", 2000)?, scheme: Scheme::EulerMaruyama };
    let family = krylov::bump_family(seed, 20, d, 1.5);
    let windows = [horizon, horizon / 4.0, horizon / 16.0];
    let fit = krylov::krylov_ratio(field.as_ref(), &Initial::Point(vec![0.0; 2 * d]), &family, p, &windows, &run)?;
    // MGF for the bump whose full-horizon occupation is largest on average.
    let nf = family.len();
    let means: Vec<f64> = (0..nf).map(|i| fit.full_window.iter().map(|r| r[i]).sum::<f64>()).collect();
    let top = (0..nf).fold(0, |b, i| if means[i] > means[b] { i } else { b });
    let integrals: Vec<f64> = fit.full_window.iter().map(|r| r[top]).collect();
    let lambda = config.positive("lambda", 1.0)?;
    let mgf = krylov::khasminskii_mgf(
        &integrals,
        &[lambda / 4.0, lambda / 2.0, lambda],
        fit.fitted_c,
        family[top].lp_norm(p),
        beta,
        horizon,
    )?;
    Ok(vec![("krylov.csv", fit.to_table()), ("mgf.csv", krylov::mgf_table(&mgf))])
}

fn fokker_planck(config: &ExperimentConfig) -> Result<Outputs> {
    let field = field(config, "hoelder-drift")?;
    let d = field.d();
    let horizon = config.positive("T", 1.0)?;
    let dt = config.positive("dt", 1.0 / 64.0)?;
    let bm = BrownianGrid::covering(config.seed()?, dt, horizon, d)?;
    let run = ParticleRun { brownian: &bm, horizon, dt, atoms: config.count("N", 10_000)?, scheme: Scheme::EulerMaruyama };
    let law = InitialLaw::Point(vec![0.0; 2 * d]);
    let checkpoints: Vec<f64> = (1..=4).map(|k| horizon * k as f64 / 4.0).collect();
    let measures = fp::particle_measure(field.as_ref(), &law, &run, &checkpoints)?;
    let residual = fp::particle_weak_residual(field.as_ref(), &law, &fp::test_dictionary(d), &run, &checkpoints)?;
    Ok(vec![("atoms.csv", fp::atoms_table(&measures, d)), ("residual.csv", residual.to_table())])
}

fn spaces(config: &ExperimentConfig) -> Result<Outputs> {
    require_d1(config, "spaces")?;
    let p = config.positive("p", 2.0)?;
    if p <= 1.0 {
        return Err(Error::validation(format!("maximal inequality needs p > 1, got {p}")));
    }
    let mut table = Table::new(&["sample", "lipschitz_c", "maximal_ratio"]);
    for (i, bumps) in smooth_corpus(config.seed()?, config.count("N", 25)?, 1, 1.5).iter().enumerate() {
        let f = sample_bumps(bumps, 1, 64, 4.0);
        let lip = lipschitz_via_maximal_check(&f, f64::INFINITY).fitted_c;
        let ratio = maximal_function(&f).lp_norm(p)? / f.lp_norm(p)?;
        table.push(row![i, lip, ratio]);
    }
    Ok(vec![("spaces.csv", table)])
}
