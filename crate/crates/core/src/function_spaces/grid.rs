use crate::csvfmt::Table;
use crate::error::{Error, Result};

/// Whether a grid axis carries a position or a velocity coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    X,
    V,
}

/// Samples of a real function on a uniform tensor grid over the periodic
/// box `[-L, L)^k`, stored row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
    half_width: f64,
    points: Vec<usize>,
    kinds: Vec<AxisKind>,
}

/// Phase-space axis labels `[X; d] ++ [V; d]`.
pub fn phase_axes(d: usize) -> Vec<AxisKind> {
    let mut k = vec![AxisKind::X; d];
    k.extend(std::iter::repeat_n(AxisKind::V, d));
    k
}

impl GridFunction {
    pub fn new(values: Vec<f64>, half_width: f64, points: Vec<usize>, kinds: Vec<AxisKind>) -> Result<Self> {
        if points.len() != kinds.len() || points.is_empty() {
            return Err(Error::validation("axis count mismatch"));
        }
        if points.contains(&0) {
            return Err(Error::validation("points per axis must be positive"));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::validation("box half-width must be positive"));
        }
        if values.len() != points.iter().product::<usize>() {
            return Err(Error::validation("value count does not match grid shape"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("grid values must be finite"));
        }
        Ok(GridFunction { values, half_width, points, kinds })
    }

    /// Sample `f` on an `n`-per-axis grid.
    pub fn from_fn(kinds: &[AxisKind], n: usize, half_width: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn_shape(kinds, &vec![n; kinds.len()], half_width, f)
    }

    pub fn from_fn_shape(kinds: &[AxisKind], points: &[usize], half_width: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let total: usize = points.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut z = vec![0.0; points.len()];
        for idx in 0..total {
            Self::coords_into(points, half_width, idx, &mut z);
            values.push(f(&z));
        }
        GridFunction { values, half_width, points: points.to_vec(), kinds: kinds.to_vec() }
    }

    pub fn zeros_like(other: &GridFunction) -> Self {
        GridFunction { values: vec![0.0; other.values.len()], ..other.clone() }
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        GridFunction { values, half_width: self.half_width, points: self.points.clone(), kinds: self.kinds.clone() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn kinds(&self) -> &[AxisKind] {
        &self.kinds
    }

    pub fn rank(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn axes_of(&self, kind: AxisKind) -> Vec<usize> {
        (0..self.rank()).filter(|&j| self.kinds[j] == kind).collect()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.half_width / self.points[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.rank()).map(|j| self.spacing(j)).product()
    }

    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.rank() as i32)
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        (0..self.points[axis]).map(|i| -self.half_width + i as f64 * h).collect()
    }

    fn coords_into(points: &[usize], half_width: f64, mut idx: usize, out: &mut [f64]) {
        for j in (0..points.len()).rev() {
            let n = points[j];
            let i = idx % n;
            idx /= n;
            out[j] = -half_width + i as f64 * (2.0 * half_width / n as f64);
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let mut z = vec![0.0; self.rank()];
        Self::coords_into(&self.points, self.half_width, idx, &mut z);
        z
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0; self.rank()];
        for j in (0..self.rank()).rev() {
            m[j] = idx % self.points[j];
            idx /= self.points[j];
        }
        m
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.rank()];
        for j in (0..self.rank().saturating_sub(1)).rev() {
            s[j] = s[j + 1] * self.points[j + 1];
        }
        s
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.points == other.points && self.kinds == other.kinds && self.half_width == other.half_width
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid quadrature of `|f|^p`, raised to `1/p`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        lp_of(&self.values, self.cell_volume(), p)
    }

    pub fn lp_distance(&self, other: &GridFunction, p: f64) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::validation("grids differ"));
        }
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        lp_of(&diff, self.cell_volume(), p)
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    /// CSV with header `axis0,...,axisK,value`.
    pub fn to_table(&self) -> Table {
        let mut header: Vec<String> = (0..self.rank()).map(|j| format!("axis{j}")).collect();
        header.push("value".into());
        let mut t = Table::new(&header);
        let mut z = vec![0.0; self.rank()];
        for (idx, v) in self.values.iter().enumerate() {
            Self::coords_into(&self.points, self.half_width, idx, &mut z);
            let mut row: Vec<crate::csvfmt::Cell> = z.iter().map(|&c| c.into()).collect();
            row.push((*v).into());
            t.push(row);
        }
        t
    }
}

pub(crate) fn lp_of(values: &[f64], cell: f64, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::validation("p must be positive"));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let s: f64 = values.iter().map(|v| v.abs().powf(p)).sum();
    Ok((s * cell).powf(1.0 / p))
}

/// Lᵖ-in-time norm of slice norms on a uniform time grid (trapezoid rule):
/// `(∫ ‖f_t‖_p^p dt)^{1/p}`.
pub fn lp_space_time(slice_norms: &[f64], dt: f64, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::validation("p must be positive"));
    }
    let n = slice_norms.len();
    if n < 2 {
        return Err(Error::validation("need at least two time slices"));
    }
    let mut s = 0.0;
    for (i, v) in slice_norms.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        s += w * v.powf(p);
    }
    Ok((s * dt).powf(1.0 / p))
}

