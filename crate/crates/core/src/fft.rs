//! Iterative radix-2 discrete Fourier transform on split real/imaginary
//! buffers.
//!
//! The forward transform is unnormalized, `X_k = Σ_j x_j e^{-2πi jk/n}`; the
//! inverse carries the `1/n` factor so that `idfft(dfft(x)) == x`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Tolerance on the imaginary part left after inverting a spectrum that
/// should belong to a real signal. Scaled by `max(1, peak |re|)`.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::shape(format!(
                "real part has length {}, imaginary part {}",
                re.len(),
                im.len()
            )));
        }
        if re.is_empty() {
            return Err(Error::invalid("complex vector must be non-empty"));
        }
        Ok(ComplexVector { re, im })
    }

    pub fn from_real(re: &[f64]) -> Self {
        ComplexVector { re: re.to_vec(), im: vec![0.0; re.len()] }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn conj(mut self) -> Self {
        self.im.iter_mut().for_each(|v| *v = -*v);
        self
    }
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::UnsupportedLength(n));
    }
    Ok(())
}

/// In-place transform. `inverse` flips the twiddle sign and applies `1/n`.
fn transform(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n == 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    // Twiddles evaluated directly per index rather than by recurrence.
    let sign = if inverse { 1.0 } else { -1.0 };
    let (tw_re, tw_im): (Vec<f64>, Vec<f64>) = (0..n / 2)
        .map(|k| {
            let theta = sign * 2.0 * PI * k as f64 / n as f64;
            (theta.cos(), theta.sin())
        })
        .unzip();

    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (wr, wi) = (tw_re[k * stride], tw_im[k * stride]);
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }

    if inverse {
        let scale = 1.0 / n as f64;
        re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= scale);
    }
}

/// Forward transform of a real signal.
pub fn dfft(x: &[f64]) -> Result<ComplexVector> {
    dfft_complex(&ComplexVector::from_real(x))
}

/// Forward transform of a complex signal.
pub fn dfft_complex(x: &ComplexVector) -> Result<ComplexVector> {
    check_len(x.len())?;
    let mut out = x.clone();
    transform(&mut out.re, &mut out.im, false);
    Ok(out)
}

/// Inverse transform without discarding the imaginary part.
pub fn idfft_complex(x: &ComplexVector) -> Result<ComplexVector> {
    check_len(x.len())?;
    let mut out = x.clone();
    transform(&mut out.re, &mut out.im, true);
    Ok(out)
}

/// Inverse transform of the spectrum of a real signal.
///
/// Fails with [`Error::NumericConsistency`] if the result has an imaginary
/// part larger than [`IMAG_RESIDUE_TOL`] (relative to the peak real
/// magnitude once that exceeds one), i.e. the spectrum was not conjugate
/// symmetric.
pub fn idfft(x: &ComplexVector) -> Result<Vec<f64>> {
    let out = idfft_complex(x)?;
    let peak = out.re.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let residue = out.im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residue > IMAG_RESIDUE_TOL * peak {
        return Err(Error::NumericConsistency(format!(
            "inverse transform left imaginary residue {residue:e}"
        )));
    }
    Ok(out.re)
}

/// Bin-wise complex product.
pub fn complex_hadamard(x: &ComplexVector, y: &ComplexVector) -> Result<ComplexVector> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("spectra have lengths {} and {}", x.len(), y.len())));
    }
    let (re, im) = (0..x.len())
        .map(|k| {
            let (a, b) = (x.re[k], x.im[k]);
            let (c, d) = (y.re[k], y.im[k]);
            (a * c - b * d, a * d + b * c)
        })
        .unzip();
    Ok(ComplexVector { re, im })
}

/// Circular convolution `out_k = Σ_m a_m b_{(k-m) mod n}` through the
/// frequency domain.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("signals have lengths {} and {}", a.len(), b.len())));
    }
    idfft(&complex_hadamard(&dfft(a)?, &dfft(b)?)?)
}

/// Circular cross-correlation `out_m = Σ_k a_k b_{(k-m) mod n}`, the adjoint
/// of convolution by `b`.
pub fn circular_correlate(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("signals have lengths {} and {}", a.len(), b.len())));
    }
    idfft(&complex_hadamard(&dfft(a)?, &dfft(b)?.conj())?)
}
