//! Slow, direct reference computations. None of this is on the production
//! path; it exists so that tests and the `selftest` command can check the
//! fast routines against definitions they do not share code with.

use std::f64::consts::PI;

use crate::fft::ComplexVector;

/// O(n²) DFT straight from the definition. Works for any length.
pub fn naive_dft(x: &[f64]) -> ComplexVector {
    let n = x.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        for (j, &v) in x.iter().enumerate() {
            // reduce jk mod n first to keep the angle small
            let theta = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
            re[k] += v * theta.cos();
            im[k] += v * theta.sin();
        }
    }
    ComplexVector { re, im }
}

/// Direct circular convolution `out_k = Σ_m a_m b_{(k-m) mod n}`.
pub fn circular_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut out = vec![0.0; n];
    for (m, &am) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[(m + j) % n] += am * bj;
        }
    }
    out
}

/// Central-difference gradient of a scalar function at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest entry-wise relative error, with the denominator floored at
/// `floor` so that near-zero entries are compared absolutely.
pub fn max_relative_error(actual: &[f64], expected: &[f64], floor: f64) -> f64 {
    assert_eq!(actual.len(), expected.len());
    actual
        .iter()
        .zip(expected)
        .map(|(a, e)| (a - e).abs() / e.abs().max(a.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
