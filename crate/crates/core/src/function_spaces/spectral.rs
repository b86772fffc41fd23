//! Fourier-multiplier operators on periodic grids.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::{AxisKind, GridFunction};
use crate::error::{Error, Result};

/// Cached forward/inverse transforms for one grid shape.
pub struct Spectral {
    shape: Vec<usize>,
    strides: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl Spectral {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let mut strides = vec![1; shape.len()];
        for j in (0..shape.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * shape[j + 1];
        }
        Spectral { shape: shape.to_vec(), strides, fwd, inv }
    }

    pub fn for_grid(f: &GridFunction) -> Self {
        Self::new(f.points())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Transform along a single axis in place (unnormalised).
    pub fn axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let plan = if inverse { &self.inv[axis] } else { &self.fwd[axis] };
        let n = self.shape[axis];
        let stride = self.strides[axis];
        if stride == 1 {
            plan.process(data);
            return;
        }
        let block = n * stride;
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for chunk in data.chunks_mut(block) {
            for i in 0..stride {
                for t in 0..n {
                    line[t] = chunk[i + t * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for t in 0..n {
                    chunk[i + t * stride] = line[t];
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        for j in 0..self.shape.len() {
            self.axis(data, j, false);
        }
    }

    /// Normalised inverse transform.
    pub fn inverse(&self, data: &mut [Complex64]) {
        for j in 0..self.shape.len() {
            self.axis(data, j, true);
        }
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut c);
        c
    }

    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut spec);
        spec.into_iter().map(|c| c.re).collect()
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, mut idx: usize, out: &mut [usize]) {
        for j in (0..self.shape.len()).rev() {
            out[j] = idx % self.shape[j];
            idx /= self.shape[j];
        }
    }
}

/// Angular wavenumbers of an `n`-point axis on `[-L, L)` in FFT order.
pub fn wavenumbers(n: usize, half_width: f64) -> Vec<f64> {
    let k0 = std::f64::consts::PI / half_width;
    (0..n)
        .map(|i| {
            let m = if i < n.div_ceil(2) { i as f64 } else { i as f64 - n as f64 };
            k0 * m
        })
        .collect()
}

/// Wavenumber tables for every axis of a grid.
pub fn wavenumber_table(f: &GridFunction) -> Vec<Vec<f64>> {
    f.points().iter().map(|&n| wavenumbers(n, f.half_width())).collect()
}

/// Apply a Fourier multiplier `m(k)` and return the real part.
pub fn apply_multiplier(f: &GridFunction, m: impl Fn(&[f64]) -> Complex64) -> GridFunction {
    let sp = Spectral::for_grid(f);
    apply_multiplier_with(&sp, f, m)
}

pub fn apply_multiplier_with(sp: &Spectral, f: &GridFunction, m: impl Fn(&[f64]) -> Complex64) -> GridFunction {
    let ks = wavenumber_table(f);
    let mut spec = sp.forward_real(f.values());
    let mut idx = vec![0; f.rank()];
    let mut k = vec![0.0; f.rank()];
    for (flat, c) in spec.iter_mut().enumerate() {
        sp.unravel(flat, &mut idx);
        for j in 0..idx.len() {
            k[j] = ks[j][idx[j]];
        }
        *c *= m(&k);
    }
    f.with_values(sp.inverse_real(spec))
}

/// Fractional Laplacian `-(|k_axes|²)^s` restricted to the chosen axes.
pub fn fractional_laplacian(f: &GridFunction, axes: &[usize], order: f64) -> Result<GridFunction> {
    if !(order > 0.0 && order <= 1.0) {
        return Err(Error::validation("order must lie in (0, 1]"));
    }
    if axes.is_empty() {
        return Err(Error::validation("axis set is empty"));
    }
    if axes.iter().any(|&a| a >= f.rank()) {
        return Err(Error::validation("axis out of range"));
    }
    Ok(apply_multiplier(f, |k| {
        let k2: f64 = axes.iter().map(|&a| k[a] * k[a]).sum();
        Complex64::new(-k2.powf(order), 0.0)
    }))
}

/// Spectral partial derivative of the given order along one axis.
pub fn derivative(f: &GridFunction, axis: usize, order: u32) -> GridFunction {
    apply_multiplier(f, |k| Complex64::new(0.0, k[axis]).powu(order))
}

/// Euclidean length of the spectral gradient at every node.
pub fn gradient_magnitude(f: &GridFunction) -> GridFunction {
    let mut acc = vec![0.0; f.len()];
    for j in 0..f.rank() {
        let g = derivative(f, j, 1);
        for (a, v) in acc.iter_mut().zip(g.values()) {
            *a += v * v;
        }
    }
    f.with_values(acc.into_iter().map(f64::sqrt).collect())
}

/// `‖(I-Δ_x)^{α/2} f‖_p + ‖(I-Δ_v)^{β/2} f‖_p`.
///
/// A grid without v-axes contributes `‖f‖_p` for the second term, and
/// likewise for x.
pub fn bessel_norm(f: &GridFunction, alpha: f64, beta: f64, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::validation("p must exceed 1"));
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::validation("smoothness indices must be nonnegative"));
    }
    let sp = Spectral::for_grid(f);
    let part = |kind: AxisKind, s: f64| -> Result<f64> {
        let axes = f.axes_of(kind);
        if s == 0.0 || axes.is_empty() {
            return f.lp_norm(p);
        }
        apply_multiplier_with(&sp, f, |k| {
            let k2: f64 = axes.iter().map(|&a| k[a] * k[a]).sum();
            Complex64::new((1.0 + k2).powf(s / 2.0), 0.0)
        })
        .lp_norm(p)
    };
    Ok(part(AxisKind::X, alpha)? + part(AxisKind::V, beta)?)
}

/// Relative spectral energy in the outer band `|k_j| > cutoff·k_max,j`.
/// Small values mean the sampled function is resolved.
pub fn tail_energy(f: &GridFunction, cutoff: f64) -> f64 {
    let sp = Spectral::for_grid(f);
    let ks = wavenumber_table(f);
    let spec = sp.forward_real(f.values());
    let kmax: Vec<f64> = ks.iter().map(|a| a.iter().fold(0.0f64, |m, k| m.max(k.abs()))).collect();
    let mut idx = vec![0; f.rank()];
    let (mut tail, mut total) = (0.0, 0.0);
    for (flat, c) in spec.iter().enumerate() {
        sp.unravel(flat, &mut idx);
        let e = c.norm_sqr();
        total += e;
        if (0..idx.len()).any(|j| ks[j][idx[j]].abs() > cutoff * kmax[j]) {
            tail += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}
