//! Gaussian transition kernel of the degenerate Kolmogorov semigroup
//! `P_{t,s} f(x, v) = E f(x + (s-t)v + X, v + V)` for diffusions that do
//! not depend on position.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::function_spaces::{phase_axes, wavenumber_table, AxisKind, GridFunction, Spectral};
use crate::quadrature::{normal_rule, normal_two_sided_tail, tensor};
use crate::rng::Stream;

/// Covariance of the Gaussian displacement `(X, V)` over a horizon `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCovariance {
    h: f64,
    d: usize,
    blocks: DMatrix<f64>,
}

fn check_diffusion(a: &DMatrix<f64>) -> Result<usize> {
    let d = a.nrows();
    if d == 0 || a.ncols() != d {
        return Err(Error::validation("diffusion matrix must be square"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("diffusion matrix must be finite"));
    }
    Ok(d)
}

impl KernelCovariance {
    /// Closed form for constant `a = σσ*/2`: blocks `2a h³/3`, `a h²`, `2a h`.
    pub fn constant(a: &DMatrix<f64>, h: f64) -> Result<Self> {
        let d = check_diffusion(a)?;
        if !(h >= 0.0) {
            return Err(Error::validation("horizon must be nonnegative"));
        }
        let mut c = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                let s = a[(i, j)] + a[(j, i)];
                c[(i, j)] = s * h.powi(3) / 3.0;
                c[(i, d + j)] = s * h * h / 2.0;
                c[(d + i, j)] = s * h * h / 2.0;
                c[(d + i, d + j)] = s * h;
            }
        }
        Ok(KernelCovariance { h, d, blocks: c })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.blocks
    }

    pub fn xx(&self) -> DMatrix<f64> {
        self.blocks.view((0, 0), (self.d, self.d)).into_owned()
    }

    pub fn xv(&self) -> DMatrix<f64> {
        self.blocks.view((0, self.d), (self.d, self.d)).into_owned()
    }

    pub fn vv(&self) -> DMatrix<f64> {
        self.blocks.view((self.d, self.d), (self.d, self.d)).into_owned()
    }

    /// Symmetric factor `L` with `L Lᵀ = C`: Cholesky when it succeeds,
    /// otherwise the eigenvalue square root.
    pub fn factor(&self) -> DMatrix<f64> {
        sym_factor(&self.blocks)
    }

    /// `exp(-ξᵀCξ/2)`, the characteristic function of the displacement.
    pub fn characteristic(&self, xi: &[f64]) -> f64 {
        let n = 2 * self.d;
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += xi[i] * self.blocks[(i, j)] * xi[j];
            }
        }
        (-0.5 * q).exp()
    }
}

pub(crate) fn sym_factor(c: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = c.clone().cholesky() {
        return ch.l();
    }
    let eig = c.clone().symmetric_eigen();
    let sq = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * sq
}

/// Covariance blocks for a time-dependent `a(r)` by composite trapezoid
/// quadrature with `intervals` sub-intervals of `[t, s]`.
pub fn kernel_covariance(a_of_t: impl Fn(f64) -> DMatrix<f64>, t: f64, s: f64, intervals: usize) -> Result<KernelCovariance> {
    if s < t {
        return Err(Error::validation("end time precedes start time"));
    }
    let a0 = a_of_t(t);
    let d = check_diffusion(&a0)?;
    let h = s - t;
    let mut c = DMatrix::zeros(2 * d, 2 * d);
    if h == 0.0 {
        return Ok(KernelCovariance { h, d, blocks: c });
    }
    let n = intervals.max(1);
    let dr = h / n as f64;
    for k in 0..=n {
        let r = t + k as f64 * dr;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 } * dr;
        let a = a_of_t(r);
        let lag = s - r;
        for i in 0..d {
            for j in 0..d {
                let ss = a[(i, j)] + a[(j, i)];
                c[(i, j)] += w * lag * lag * ss;
                c[(i, d + j)] += w * lag * ss;
                c[(d + i, j)] += w * lag * ss;
                c[(d + i, d + j)] += w * ss;
            }
        }
    }
    Ok(KernelCovariance { h, d, blocks: c })
}

/// Horizons below this report a degenerate covariance.
pub fn degeneracy_cutoff() -> f64 {
    1e3 * f64::EPSILON.cbrt()
}

/// Mean of the kernel started at `z0`: `(x + h v, v)`.
pub fn transport_mean(z0: &[f64], h: f64) -> Vec<f64> {
    let d = z0.len() / 2;
    let mut m = z0.to_vec();
    for i in 0..d {
        m[i] += h * z0[d + i];
    }
    m
}

/// Gaussian transition density from `z0` to `z`.
pub fn kernel_density(z0: &[f64], z: &[f64], cov: &KernelCovariance) -> Result<f64> {
    let n = 2 * cov.d;
    if z0.len() != n || z.len() != n {
        return Err(Error::validation("phase points must have length 2d"));
    }
    if cov.h < degeneracy_cutoff() {
        return Err(Error::Degenerate { h: cov.h });
    }
    let ch = cov.blocks.clone().cholesky().ok_or(Error::Degenerate { h: cov.h })?;
    let m = transport_mean(z0, cov.h);
    let r = DVector::from_iterator(n, z.iter().zip(&m).map(|(a, b)| a - b));
    let y = ch.l().solve_lower_triangular(&r).ok_or(Error::Degenerate { h: cov.h })?;
    let logdet: f64 = (0..n).map(|i| ch.l()[(i, i)].ln()).sum::<f64>();
    let norm = (2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0) * (-logdet).exp();
    Ok(norm * (-0.5 * y.norm_squared()).exp())
}

/// One draw of `Z_{t,s}` started at `z0`.
pub fn kernel_sample(z0: &[f64], cov: &KernelCovariance, stream: &mut Stream) -> Vec<f64> {
    let mean = transport_mean(z0, cov.h);
    if cov.h == 0.0 {
        return mean;
    }
    let l = cov.factor();
    let mut eta = vec![0.0; mean.len()];
    stream.fill_normal(&mut eta);
    let eta = DVector::from_vec(eta);
    let noise = l * eta;
    mean.iter().zip(noise.iter()).map(|(m, e)| m + e).collect()
}

/// Semigroup evaluation backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Exact Gaussian multiplier in Fourier space followed by the shear.
    Spectral,
    /// Tensor Gauss–Hermite quadrature of the displacement, with the
    /// integrand evaluated through its trigonometric interpolant.
    GaussHermite { order: usize },
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Spectral => "spectral",
            Backend::GaussHermite { .. } => "gauss-hermite",
        }
    }
}

/// `P_{t,s} f` on the grid of `f`, tagged with the backend that produced it.
#[derive(Debug, Clone)]
pub struct SemigroupOutput {
    pub values: GridFunction,
    pub backend: Backend,
    pub tail_mass: f64,
}

/// Largest tolerated probability that the displacement reaches a periodic
/// image of the support of `f`.
pub const TAIL_TOLERANCE: f64 = 1e-6;

fn check_phase_grid(f: &GridFunction, d: usize) -> Result<()> {
    if f.kinds() != phase_axes(d).as_slice() {
        return Err(Error::validation("semigroup input must live on a phase-space grid (x axes then v axes)"));
    }
    Ok(())
}

/// Probability that the Gaussian displacement carries mass from the support
/// of `f` into one of its periodic images. Axes along which `f` does not
/// vary cannot alias and are skipped.
pub fn tail_mass(f: &GridFunction, cov: &KernelCovariance) -> f64 {
    let d = cov.d;
    let sup = f.sup_norm();
    if sup == 0.0 || cov.h == 0.0 {
        return 0.0;
    }
    let l = f.half_width();
    let varies = axis_variation(f);
    let mut reach = vec![0.0f64; f.rank()];
    for (idx, v) in f.values().iter().enumerate() {
        if v.abs() > 0.1 * TAIL_TOLERANCE * sup {
            let z = f.coords(idx);
            for j in 0..f.rank() {
                reach[j] = reach[j].max(z[j].abs() + f.spacing(j));
            }
        }
    }
    let c = cov.matrix();
    let h = cov.h;
    let mut tail: f64 = 0.0;
    for i in 0..d {
        let vj = d + i;
        if varies[vj] {
            let s = c[(vj, vj)].sqrt();
            tail = tail.max(normal_two_sided_tail((l - reach[vj]) / s));
        }
        if varies[i] {
            let var = c[(i, i)] - 2.0 * h * c[(i, vj)] + h * h * c[(vj, vj)];
            let s = var.max(0.0).sqrt();
            let margin = l - reach[i] - h * reach[vj];
            tail = tail.max(if s == 0.0 {
                if margin > 0.0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                normal_two_sided_tail(margin / s)
            });
        }
    }
    tail
}

fn axis_variation(f: &GridFunction) -> Vec<bool> {
    let sp = Spectral::for_grid(f);
    let spec = sp.forward_real(f.values());
    let total: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
    let mut energy = vec![0.0; f.rank()];
    let mut idx = vec![0; f.rank()];
    for (flat, c) in spec.iter().enumerate() {
        sp.unravel(flat, &mut idx);
        for j in 0..f.rank() {
            if idx[j] != 0 {
                energy[j] += c.norm_sqr();
            }
        }
    }
    energy.iter().map(|&e| e > 1e-24 * total.max(1e-300)).collect()
}

/// Reusable spectral application of `P_h` on a fixed phase-space grid.
pub struct SpectralSemigroup {
    sp: Spectral,
    d: usize,
    h: f64,
    multiplier: Vec<f64>,
    /// `e^{i h k·v}` indexed by (x-frequency block, v node).
    shear: Vec<Complex64>,
    nx: usize,
    nv: usize,
}

impl SpectralSemigroup {
    pub fn new(template: &GridFunction, cov: &KernelCovariance) -> Result<Self> {
        let d = cov.d;
        check_phase_grid(template, d)?;
        let sp = Spectral::for_grid(template);
        let ks = wavenumber_table(template);
        let mut idx = vec![0; 2 * d];
        let mut xi = vec![0.0; 2 * d];
        let multiplier = (0..template.len())
            .map(|flat| {
                sp.unravel(flat, &mut idx);
                for j in 0..2 * d {
                    xi[j] = ks[j][idx[j]];
                }
                cov.characteristic(&xi)
            })
            .collect();
        let nx: usize = template.points()[..d].iter().product();
        let nv: usize = template.points()[d..].iter().product();
        let vcoords: Vec<Vec<f64>> = (d..2 * d).map(|j| template.axis_coords(j)).collect();
        let mut shear = Vec::with_capacity(nx * nv);
        let mut xi_idx = vec![0; d];
        let mut v_idx = vec![0; d];
        for kx in 0..nx {
            unravel_into(kx, &template.points()[..d], &mut xi_idx);
            for iv in 0..nv {
                unravel_into(iv, &template.points()[d..], &mut v_idx);
                let phase: f64 = (0..d).map(|j| ks[j][xi_idx[j]] * vcoords[j][v_idx[j]]).sum::<f64>() * cov.h;
                shear.push(Complex64::from_polar(1.0, phase));
            }
        }
        Ok(SpectralSemigroup { sp, d, h: cov.h, multiplier, shear, nx, nv })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Apply to a complex field already in physical space.
    pub fn apply_complex(&self, data: &mut [Complex64]) {
        self.sp.forward(data);
        for (c, m) in data.iter_mut().zip(&self.multiplier) {
            *c *= m;
        }
        self.finish(data);
    }

    /// Inverse along v, shear, inverse along x. Input is a full spectrum.
    fn finish(&self, data: &mut [Complex64]) {
        for j in self.d..2 * self.d {
            self.sp.axis(data, j, true);
        }
        for (c, s) in data.iter_mut().zip(&self.shear) {
            *c *= s;
        }
        for j in 0..self.d {
            self.sp.axis(data, j, true);
        }
        let scale = 1.0 / (self.nx * self.nv) as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let mut c: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.apply_complex(&mut c);
        c.into_iter().map(|c| c.re).collect()
    }
}

fn unravel_into(mut idx: usize, shape: &[usize], out: &mut [usize]) {
    for j in (0..shape.len()).rev() {
        out[j] = idx % shape[j];
        idx /= shape[j];
    }
}

fn gauss_hermite_grid(f: &GridFunction, cov: &KernelCovariance, order: usize) -> Vec<f64> {
    let d = cov.d;
    let sp = Spectral::for_grid(f);
    let ks = wavenumber_table(f);
    let cvv = cov.vv();
    let cxv = cov.xv();
    let lv = sym_factor(&cvv);
    let cvv_inv = cvv.clone().pseudo_inverse(1e-300).unwrap_or_else(|_| DMatrix::zeros(d, d));
    let gain = &cxv * &cvv_inv;
    let schur = cov.xx() - &gain * cxv.transpose();
    let ls = sym_factor(&(0.5 * (&schur + schur.transpose())));
    let rule = normal_rule(order);
    let nodes = tensor(&rule, d);

    let nx: usize = f.points()[..d].iter().product();
    let nv: usize = f.points()[d..].iter().product();
    let mut xi_idx = vec![0; d];
    let kx_of = |flat: usize, out: &mut [usize]| unravel_into(flat, &f.points()[..d], out);

    // Ψ(k) = Σ w e^{i k·L_s η} over the conditional x-displacement.
    let psi: Vec<Complex64> = (0..nx)
        .map(|kx| {
            kx_of(kx, &mut xi_idx);
            nodes
                .iter()
                .map(|(eta, w)| {
                    let mut ph = 0.0;
                    for i in 0..d {
                        let mut xs = 0.0;
                        for j in 0..d {
                            xs += ls[(i, j)] * eta[j];
                        }
                        ph += ks[i][xi_idx[i]] * xs;
                    }
                    Complex64::from_polar(*w, ph)
                })
                .sum()
        })
        .collect();

    let spec = sp.forward_real(f.values());
    let vcoords: Vec<Vec<f64>> = (d..2 * d).map(|j| f.axis_coords(j)).collect();
    let mut acc = vec![Complex64::new(0.0, 0.0); f.len()];
    let mut full = vec![0; 2 * d];
    let mut v_idx = vec![0; d];
    let mut tmp = spec.clone();
    for (eta, w) in &nodes {
        if *w < 1e-18 {
            continue;
        }
        let shift_v: Vec<f64> = (0..d).map(|i| (0..d).map(|j| lv[(i, j)] * eta[j]).sum()).collect();
        let shift_x: Vec<f64> = (0..d).map(|i| (0..d).map(|j| gain[(i, j)] * shift_v[j]).sum()).collect();
        for (flat, (t, s)) in tmp.iter_mut().zip(&spec).enumerate() {
            sp.unravel(flat, &mut full);
            let ph: f64 = (0..d).map(|j| ks[d + j][full[d + j]] * shift_v[j]).sum();
            *t = s * Complex64::from_polar(1.0, ph);
        }
        for j in d..2 * d {
            sp.axis(&mut tmp, j, true);
        }
        for kx in 0..nx {
            kx_of(kx, &mut xi_idx);
            let base: f64 = (0..d).map(|i| ks[i][xi_idx[i]] * shift_x[i]).sum();
            for iv in 0..nv {
                unravel_into(iv, &f.points()[d..], &mut v_idx);
                let ph = base + cov.h * (0..d).map(|i| ks[i][xi_idx[i]] * vcoords[i][v_idx[i]]).sum::<f64>();
                let flat = kx * nv + iv;
                acc[flat] += tmp[flat] * psi[kx] * Complex64::from_polar(*w, ph);
            }
        }
    }
    for j in 0..d {
        sp.axis(&mut acc, j, true);
    }
    let scale = 1.0 / f.len() as f64;
    acc.into_iter().map(|c| c.re * scale).collect()
}

/// `P_{t,s} f` for a grid function on a phase-space grid.
pub fn apply_semigroup_cov(f: &GridFunction, cov: &KernelCovariance, backend: Backend) -> Result<SemigroupOutput> {
    check_phase_grid(f, cov.d)?;
    let tail = tail_mass(f, cov);
    if tail > TAIL_TOLERANCE {
        return Err(Error::Accuracy(format!("kernel tail mass {tail:.3e} leaves the box")));
    }
    if cov.h == 0.0 {
        return Ok(SemigroupOutput { values: f.clone(), backend, tail_mass: 0.0 });
    }
    let values = match backend {
        Backend::Spectral => SpectralSemigroup::new(f, cov)?.apply(f.values()),
        Backend::GaussHermite { order } => gauss_hermite_grid(f, cov, order),
    };
    Ok(SemigroupOutput { values: f.with_values(values), backend, tail_mass: tail })
}

/// `P_{t,s} f` for constant `a`.
pub fn apply_semigroup(f: &GridFunction, t: f64, s: f64, a: &DMatrix<f64>, backend: Backend) -> Result<SemigroupOutput> {
    if s < t {
        return Err(Error::validation("end time precedes start time"));
    }
    let cov = KernelCovariance::constant(a, s - t)?;
    apply_semigroup_cov(f, &cov, backend)
}

/// `P_{t,s} f` for a closed-form `f`, sampled on the nodes of `template`
/// by tensor Gauss–Hermite quadrature in all `2d` displacement coordinates.
pub fn apply_semigroup_analytic(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    template: &GridFunction,
    cov: &KernelCovariance,
    order: usize,
) -> Result<GridFunction> {
    check_phase_grid(template, cov.d)?;
    let n = 2 * cov.d;
    let l = cov.factor();
    let nodes = tensor(&normal_rule(order), n);
    let shifts: Vec<(Vec<f64>, f64)> = nodes
        .into_iter()
        .filter(|(_, w)| *w > 1e-18)
        .map(|(eta, w)| ((0..n).map(|i| (0..n).map(|j| l[(i, j)] * eta[j]).sum()).collect(), w))
        .collect();
    let vals = crate::parallel::map_indexed(template.len(), |idx| {
        let m = transport_mean(&template.coords(idx), cov.h);
        let mut z = vec![0.0; n];
        let mut acc = 0.0;
        for (s, w) in &shifts {
            for i in 0..n {
                z[i] = m[i] + s[i];
            }
            acc += w * f(&z);
        }
        acc
    });
    Ok(template.with_values(vals))
}

/// Fitted log-log behaviour of a derivative norm of `P_{0,h} f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub h: Vec<f64>,
    pub norms: Vec<f64>,
    pub slope: f64,
}

/// Squared Fourier amplitudes `|c|²` of `f`, the x-frequencies and the
/// v-frequencies for every flat index, plus the L² volume factor.
struct Amplitudes {
    power: Vec<f64>,
    kx: Vec<Vec<f64>>,
    kv: Vec<Vec<f64>>,
    volume: f64,
}

fn amplitudes(f: &GridFunction, d: usize) -> Result<Amplitudes> {
    let x_only = f.kinds() == vec![AxisKind::X; d].as_slice();
    if !x_only {
        check_phase_grid(f, d)?;
    }
    let sp = Spectral::for_grid(f);
    let ks = wavenumber_table(f);
    let spec = sp.forward_real(f.values());
    let n = f.len() as f64;
    let mut idx = vec![0; f.rank()];
    let mut kx = Vec::with_capacity(f.len());
    let mut kv = Vec::with_capacity(f.len());
    let power = spec
        .iter()
        .enumerate()
        .map(|(flat, c)| {
            sp.unravel(flat, &mut idx);
            kx.push((0..d).map(|j| ks[j][idx[j]]).collect());
            kv.push(if x_only { vec![0.0; d] } else { (0..d).map(|j| ks[d + j][idx[d + j]]).collect() });
            c.norm_sqr() / (n * n)
        })
        .collect();
    // an x-only function is constant along the v-box
    let volume = if x_only { f.box_volume() * (2.0 * f.half_width()).powi(d as i32) } else { f.box_volume() };
    Ok(Amplitudes { power, kx, kv, volume })
}

fn smoothed_power(amp: &Amplitudes, cov: &KernelCovariance, i: usize) -> f64 {
    let xi: Vec<f64> = amp.kx[i].iter().chain(&amp.kv[i]).copied().collect();
    amp.power[i] * cov.characteristic(&xi).powi(2)
}

fn sheared_v(amp: &Amplitudes, h: f64, i: usize) -> f64 {
    amp.kx[i].iter().zip(&amp.kv[i]).map(|(k, m)| (k * h + m).powi(2)).sum()
}

/// `‖∇_x^k ∇_v^m P_{0,h} f‖₂` along `ladder` and the least-squares slope of
/// log-norm against log-h. Norms are computed exactly from the Fourier
/// coefficients, since the shear `x ↦ x + hv` leaves the x-frequencies
/// unchanged. `f` may live on a phase-space grid or depend on x only.
pub fn gradient_scaling_probe(f: &GridFunction, k: u32, m: u32, a: &DMatrix<f64>, ladder: &[f64]) -> Result<ProbeResult> {
    let d = check_diffusion(a)?;
    if ladder.len() < 2 || ladder.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::validation("ladder needs at least two positive horizons"));
    }
    let amp = amplitudes(f, d)?;
    let mut norms = Vec::with_capacity(ladder.len());
    for &h in ladder {
        let cov = KernelCovariance::constant(a, h)?;
        let mut s = 0.0;
        for i in 0..amp.power.len() {
            let kx2: f64 = amp.kx[i].iter().map(|v| v * v).sum();
            s += smoothed_power(&amp, &cov, i) * kx2.powi(k as i32) * sheared_v(&amp, h, i).powi(m as i32);
        }
        norms.push((s * amp.volume).sqrt());
    }
    let increasing = norms.windows(2).all(|w| w[1] >= w[0]);
    let decreasing = norms.windows(2).all(|w| w[1] <= w[0]);
    if !(increasing || decreasing) {
        return Err(Error::ProbeInvalid("norms are not monotone along the ladder".into()));
    }
    if norms.iter().any(|&n| !(n > 0.0)) {
        return Err(Error::ProbeInvalid("zero norm on the ladder".into()));
    }
    let lx: Vec<f64> = ladder.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|n| n.ln()).collect();
    Ok(ProbeResult { h: ladder.to_vec(), norms, slope: least_squares_slope(&lx, &ly) })
}

/// `bessel_norm(P_{0,h} f, α, β, 2)` evaluated exactly in Fourier space.
pub fn smoothed_bessel_norm(f: &GridFunction, a: &DMatrix<f64>, h: f64, alpha: f64, beta: f64) -> Result<f64> {
    let d = check_diffusion(a)?;
    let amp = amplitudes(f, d)?;
    let cov = KernelCovariance::constant(a, h)?;
    let (mut sx, mut sv) = (0.0, 0.0);
    for i in 0..amp.power.len() {
        let p = smoothed_power(&amp, &cov, i);
        let kx2: f64 = amp.kx[i].iter().map(|v| v * v).sum();
        sx += p * (1.0 + kx2).powf(alpha);
        sv += p * (1.0 + sheared_v(&amp, h, i)).powf(beta);
    }
    Ok((sx * amp.volume).sqrt() + (sv * amp.volume).sqrt())
}

/// Ordinary least-squares slope.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Logarithmically spaced horizons between `lo` and `hi` inclusive.
pub fn log_ladder(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Real x-only profile on `points` nodes of `[-L, L)` whose Fourier
/// amplitudes decay like `|k|^{-1/2}` at every resolved frequency, with
/// deterministic quadratic phases. Its smoothed derivative norms exhibit the
/// worst-case power laws in `h` over the whole range `h^{-3/2} ≤ k_max`.
/// Normalized to unit L² norm on the line box.
pub fn rough_profile(points: usize, half_width: f64) -> GridFunction {
    let ks = crate::function_spaces::wavenumbers(points, half_width);
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let mut spec = vec![Complex64::new(0.0, 0.0); points];
    for j in 1..points / 2 {
        let amp = ks[j].abs().powf(-0.5);
        let phase = 2.0 * std::f64::consts::PI * (golden * (j * j) as f64).fract();
        spec[j] = Complex64::from_polar(amp, phase);
        spec[points - j] = spec[j].conj();
    }
    let sp = Spectral::new(&[points]);
    sp.inverse(&mut spec);
    let g = GridFunction::new(spec.iter().map(|c| c.re).collect(), half_width, vec![points], vec![AxisKind::X])
        .expect("finite profile");
    let norm = g.lp_norm(2.0).expect("p = 2");
    g.map(|v| v / norm)
}
