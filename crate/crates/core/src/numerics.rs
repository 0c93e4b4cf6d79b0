//! Quadrature, differencing and interpolation on uniform grids.

use std::f64::consts::{PI, TAU};

use crate::linalg::C64;

/// Rounds to 12 significant digits (output formatting convention).
pub fn sig12(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_pi(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

/// Wraps into `[0, 2π)`.
pub fn wrap_tau(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y >= TAU {
        0.0
    } else {
        y
    }
}

/// Removes 2π jumps between consecutive samples.
pub fn unwrap(phases: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phases.len());
    let mut offset = 0.0;
    for (k, &p) in phases.iter().enumerate() {
        if k > 0 {
            let prev_raw = phases[k - 1];
            offset -= TAU * ((p - prev_raw) / TAU).round();
        }
        out.push(p + offset);
    }
    out
}

/// Composite trapezoid over a closed uniform grid (first and last sample are
/// the interval endpoints).
pub fn trapezoid<T>(samples: &[T], step: f64) -> T
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
{
    let n = samples.len();
    if n < 2 {
        return T::default();
    }
    let mut acc = (samples[0] + samples[n - 1]) * 0.5;
    for s in &samples[1..n - 1] {
        acc = acc + *s;
    }
    acc * step
}

/// Composite Simpson rule over a closed uniform grid with an odd number of
/// samples; an even count falls back to Simpson plus a final 3/8 panel.
pub fn simpson<T>(samples: &[T], step: f64) -> T
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
{
    let n = samples.len();
    match n {
        0 | 1 => T::default(),
        2 => (samples[0] + samples[1]) * (0.5 * step),
        3 => (samples[0] + samples[1] * 4.0 + samples[2]) * (step / 3.0),
        _ if n % 2 == 1 => {
            let mut acc = samples[0] + samples[n - 1];
            for (k, s) in samples.iter().enumerate().take(n - 1).skip(1) {
                acc = acc + *s * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * (step / 3.0)
        }
        _ => {
            let head = simpson(&samples[..n - 3], step);
            let t = &samples[n - 4..];
            head + (t[0] + t[1] * 3.0 + t[2] * 3.0 + t[3]) * (3.0 * step / 8.0)
        }
    }
}

/// Fourth-order finite-difference derivative on a uniform open grid, with
/// one-sided stencils at the ends. Requires at least 5 samples.
pub fn derivative_fd4(samples: &[C64], step: f64) -> Vec<C64> {
    let n = samples.len();
    assert!(n >= 5, "derivative_fd4 needs at least 5 samples");
    let f = samples;
    let h12 = 12.0 * step;
    (0..n)
        .map(|k| {
            if k >= 2 && k + 2 < n {
                (f[k - 2] - f[k - 1] * 8.0 + f[k + 1] * 8.0 - f[k + 2]) / h12
            } else if k < 2 {
                // forward 5-point stencils
                if k == 0 {
                    (f[0] * -25.0 + f[1] * 48.0 - f[2] * 36.0 + f[3] * 16.0 - f[4] * 3.0) / h12
                } else {
                    (f[0] * -3.0 - f[1] * 10.0 + f[2] * 18.0 - f[3] * 6.0 + f[4]) / h12
                }
            } else if k == n - 2 {
                (f[n - 1] * 3.0 + f[n - 2] * 10.0 - f[n - 3] * 18.0 + f[n - 4] * 6.0 - f[n - 5]) / h12
            } else {
                (f[n - 1] * 25.0 - f[n - 2] * 48.0 + f[n - 3] * 36.0 - f[n - 4] * 16.0 + f[n - 5] * 3.0)
                    / h12
            }
        })
        .collect()
}

/// Second-order derivative: central in the interior, one-sided (second
/// order) at the ends.
pub fn derivative_central<T>(samples: &[T], step: f64) -> Vec<T>
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let n = samples.len();
    assert!(n >= 3, "derivative_central needs at least 3 samples");
    let f = samples;
    let inv = 1.0 / step;
    (0..n)
        .map(|k| {
            if k == 0 {
                (f[1] * 4.0 - f[0] * 3.0 - f[2]) * (0.5 * inv)
            } else if k == n - 1 {
                (f[n - 1] * 3.0 - f[n - 2] * 4.0 + f[n - 3]) * (0.5 * inv)
            } else {
                (f[k + 1] - f[k - 1]) * (0.5 * inv)
            }
        })
        .collect()
}

/// Local Lagrange interpolation on a uniform grid `x_k = origin + k·step`
/// using a `points`-point stencil centred on `x` (shifted inward at the ends).
pub fn lagrange_weights(n: usize, origin: f64, step: f64, x: f64, points: usize) -> (usize, Vec<f64>) {
    let points = points.min(n).max(1);
    let s = (x - origin) / step;
    let centre = s.floor() as i64 - (points as i64 - 1) / 2;
    let start = centre.clamp(0, n as i64 - points as i64) as usize;
    let mut weights = vec![1.0; points];
    for (i, w) in weights.iter_mut().enumerate() {
        let xi = (start + i) as f64;
        for j in 0..points {
            if j != i {
                let xj = (start + j) as f64;
                *w *= (s - xj) / (xi - xj);
            }
        }
    }
    (start, weights)
}

/// Interpolates uniformly sampled values at `x` (six-point stencil).
pub fn interpolate<T>(values: &[T], origin: f64, step: f64, x: f64) -> T
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
{
    let (start, w) = lagrange_weights(values.len(), origin, step, x, 6);
    w.iter()
        .enumerate()
        .fold(T::default(), |acc, (i, &wi)| acc + values[start + i] * wi)
}
