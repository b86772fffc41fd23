//! Centred maximal function over a dyadic radius ladder, and the pointwise
//! Lipschitz bound through the maximal function of the gradient.

use rustfft::num_complex::Complex64;

use super::grid::GridFunction;
use super::spectral::Spectral;
use crate::rng::{Domain, Stream};

/// Radii used by [`maximal_function`]: zero, then `2^j·h` up to the box
/// half-width, where `h` is the finest spacing.
pub fn radius_ladder(f: &GridFunction) -> Vec<f64> {
    let h = (0..f.rank()).map(|j| f.spacing(j)).fold(f64::INFINITY, f64::min);
    let mut r = vec![0.0];
    let mut s = h;
    while s <= f.half_width() * (1.0 + 1e-12) {
        r.push(s);
        s *= 2.0;
    }
    r
}

/// `ℳ|f|`: the largest average of `|f|` over centred balls from the radius
/// ladder. Balls are clipped to the box, so constants map to themselves.
pub fn maximal_function(f: &GridFunction) -> GridFunction {
    let abs: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let mut best = abs.clone();
    let padded: Vec<usize> = f.points().iter().map(|&n| 2 * n).collect();
    let sp = Spectral::new(&padded);
    let total: usize = padded.iter().product();

    let embed = |vals: &dyn Fn(usize) -> f64| -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        for idx in 0..f.len() {
            let m = f.unravel(idx);
            let mut flat = 0;
            for (j, &i) in m.iter().enumerate() {
                flat = flat * padded[j] + i;
            }
            buf[flat] = Complex64::new(vals(idx), 0.0);
        }
        sp.forward(&mut buf);
        buf
    };
    let data_hat = embed(&|i| abs[i]);
    let ones_hat = embed(&|_| 1.0);

    let spacing: Vec<f64> = (0..f.rank()).map(|j| f.spacing(j)).collect();
    let mut off = vec![0usize; f.rank()];
    for &r in radius_ladder(f).iter().skip(1) {
        let mut ker = vec![Complex64::new(0.0, 0.0); total];
        for (flat, slot) in ker.iter_mut().enumerate() {
            sp.unravel(flat, &mut off);
            let mut d2 = 0.0;
            for j in 0..off.len() {
                let o = off[j] as isize;
                let n2 = padded[j] as isize;
                let s = if o >= n2 / 2 { o - n2 } else { o };
                d2 += (s as f64 * spacing[j]).powi(2);
            }
            if d2 <= r * r * (1.0 + 1e-12) {
                *slot = Complex64::new(1.0, 0.0);
            }
        }
        sp.forward(&mut ker);
        let mut sum: Vec<Complex64> = data_hat.iter().zip(&ker).map(|(a, b)| a * b).collect();
        let mut cnt: Vec<Complex64> = ones_hat.iter().zip(&ker).map(|(a, b)| a * b).collect();
        sp.inverse(&mut sum);
        sp.inverse(&mut cnt);
        for (idx, b) in best.iter_mut().enumerate() {
            let m = f.unravel(idx);
            let mut flat = 0;
            for (j, &i) in m.iter().enumerate() {
                flat = flat * padded[j] + i;
            }
            let c = cnt[flat].re.round();
            if c > 0.0 {
                let avg = sum[flat].re.max(0.0) / c;
                if avg > *b {
                    *b = avg;
                }
            }
        }
    }
    f.with_values(best)
}

/// Gradient magnitude by second-order finite differences (one-sided at the
/// box edges), exact on affine functions.
pub fn fd_gradient_magnitude(f: &GridFunction) -> GridFunction {
    let strides = f.strides();
    let v = f.values();
    let mut acc = vec![0.0; f.len()];
    for j in 0..f.rank() {
        let n = f.points()[j];
        if n < 3 {
            continue;
        }
        let h = f.spacing(j);
        let s = strides[j];
        for (idx, a) in acc.iter_mut().enumerate() {
            let i = (idx / s) % n;
            let g = if i == 0 {
                (-3.0 * v[idx] + 4.0 * v[idx + s] - v[idx + 2 * s]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * v[idx] - 4.0 * v[idx - s] + v[idx - 2 * s]) / (2.0 * h)
            } else {
                (v[idx + s] - v[idx - s]) / (2.0 * h)
            };
            *a += g * g;
        }
    }
    f.with_values(acc.into_iter().map(f64::sqrt).collect())
}

/// Result of the Lipschitz-through-maximal-function scan.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    /// Smallest `C` with `|f(x)-f(y)| ≤ C|x-y|(ℳ|∇f|(x)+ℳ|∇f|(y))` on the pairs.
    pub fitted_c: f64,
    /// Pairs violating the inequality at the supplied constant.
    pub violations: usize,
    pub pairs: usize,
}

/// Scan all grid pairs (or 200 000 seeded random pairs on large grids).
pub fn lipschitz_via_maximal_check(f: &GridFunction, supplied_c: f64) -> LipschitzReport {
    let mg = maximal_function(&fd_gradient_magnitude(f));
    let coords: Vec<Vec<f64>> = (0..f.len()).map(|i| f.coords(i)).collect();
    let v = f.values();
    let m = mg.values();
    let mut fitted: f64 = 0.0;
    let mut violations = 0;
    let mut pairs = 0;
    let mut visit = |i: usize, j: usize| {
        let dist = coords[i].iter().zip(&coords[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let lhs = (v[i] - v[j]).abs();
        let rhs = dist * (m[i] + m[j]);
        pairs += 1;
        if lhs > 0.0 {
            let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
            fitted = fitted.max(ratio);
        }
        if lhs > supplied_c * rhs * (1.0 + 1e-12) + 1e-14 {
            violations += 1;
        }
    };
    let n = f.len();
    if n <= 4096 {
        for i in 0..n {
            for j in (i + 1)..n {
                visit(i, j);
            }
        }
    } else {
        let mut s = Stream::new(0x6c69_7073, Domain::Pairs, 0);
        for _ in 0..200_000 {
            let i = ((s.uniform() * n as f64) as usize).min(n - 1);
            let j = ((s.uniform() * n as f64) as usize).min(n - 1);
            if i != j {
                visit(i, j);
            }
        }
    }
    LipschitzReport { fitted_c: fitted, violations, pairs }
}
