//! Oracle suites run by `cbp selftest`. Each suite compares a fast path
//! against an independent reference and reports the worst deviation seen.

use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::classifier::{self, logit_decomposition_check, ClassifierParams, TrainConfig};
use crate::error::Result;
use crate::fft;
use crate::fusion::{fuse, fuse_backward, FusionKind, FusionMethod};
use crate::oracle;
use crate::sketch::{self, CountSketchParams};
use crate::synth::{generate_synthetic, SynthConfig};
use crate::types::{make_rng, stream, FeatureVector, Rng, Seed};

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    /// Flips one sign of view A's sketch on the fast path only. The
    /// oracle-equality suite must then fail.
    pub inject_sign_flip: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn fv(v: Vec<f64>) -> FeatureVector {
    FeatureVector::new(v).expect("finite test vector")
}

/// Worst deviations of the FFT against the naive DFT, of the round trip, and
/// of FFT convolution against direct convolution, over `n = 1, 2, …, max_n`.
#[derive(Debug, Clone, Copy)]
pub struct FftDeviations {
    pub vs_naive: f64,
    pub roundtrip: f64,
    pub convolution: f64,
}

pub fn fft_deviations(max_n: usize, rng: &mut Rng) -> Result<FftDeviations> {
    let mut dev = FftDeviations { vs_naive: 0.0, roundtrip: 0.0, convolution: 0.0 };
    let mut n = 1;
    while n <= max_n {
        let x = normal_vec(rng, n);
        let fast = fft::dfft(&x)?;
        let slow = oracle::naive_dft(&x);
        dev.vs_naive = dev.vs_naive.max(oracle::max_abs_diff(&fast.re, &slow.re)).max(oracle::max_abs_diff(&fast.im, &slow.im));
        dev.roundtrip = dev.roundtrip.max(oracle::max_abs_diff(&fft::idfft(&fast)?, &x));
        let y = normal_vec(rng, n);
        let conv = fft::circular_convolve(&x, &y)?;
        dev.convolution = dev.convolution.max(oracle::max_abs_diff(&conv, &oracle::circular_convolution(&x, &y)));
        n *= 2;
    }
    Ok(dev)
}

fn flip_first_sign(p: &CountSketchParams) -> CountSketchParams {
    let mut s = p.s().to_vec();
    s[0] = -s[0];
    CountSketchParams::new(p.h().to_vec(), s, p.output_dim()).expect("flipped params stay valid")
}

/// Worst `|compact_bilinear − bilinear_sketch_oracle|` over `instances`
/// random cases with `C ≤ 32` and `D ∈ {2, …, 256}`.
pub fn oracle_equality(instances: usize, rng: &mut Rng, inject_sign_flip: bool) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let c = rng.random_range(1..=32);
        let d = 1usize << rng.random_range(1..=8);
        let pa = sketch::sample_params(c, d, rng)?;
        let pb = sketch::sample_params(c, d, rng)?;
        let fa = fv(normal_vec(rng, c));
        let fb = fv(normal_vec(rng, c));
        let fast_pa = if inject_sign_flip { flip_first_sign(&pa) } else { pa.clone() };
        let fast = sketch::compact_bilinear(&fa, &fb, &fast_pa, &pb)?;
        let slow = sketch::bilinear_sketch_oracle(&fa, &fb, &pa, &pb)?;
        worst = worst.max(oracle::max_abs_diff(fast.as_slice(), slow.as_slice()));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy)]
pub struct UnbiasednessStats {
    pub target: f64,
    pub mean: f64,
    pub std_err: f64,
}

impl UnbiasednessStats {
    /// Distance of the Monte Carlo mean from the target in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.mean - self.target).abs() / self.std_err
    }
}

/// Monte Carlo estimate of `E⟨TS(x1,x2), TS(y1,y2)⟩` over `trials`
/// independent sketch draws, against `⟨x1,y1⟩·⟨x2,y2⟩`.
pub fn kernel_unbiasedness(c: usize, d: usize, trials: usize, rng: &mut Rng) -> Result<UnbiasednessStats> {
    let x1 = normal_vec(rng, c);
    let x2 = normal_vec(rng, c);
    // correlated partners so the target is far from zero
    let y1: Vec<f64> = x1.iter().zip(normal_vec(rng, c)).map(|(v, e)| v + 0.5 * e).collect();
    let y2: Vec<f64> = x2.iter().zip(normal_vec(rng, c)).map(|(v, e)| v + 0.5 * e).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let target = dot(&x1, &y1) * dot(&x2, &y2);

    let (x1, x2, y1, y2) = (fv(x1), fv(x2), fv(y1), fv(y2));
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let pa = sketch::sample_params(c, d, rng)?;
        let pb = sketch::sample_params(c, d, rng)?;
        let gx = sketch::compact_bilinear(&x1, &x2, &pa, &pb)?;
        let gy = sketch::compact_bilinear(&y1, &y2, &pa, &pb)?;
        samples.push(dot(gx.as_slice(), gy.as_slice()));
    }
    let n = trials as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(UnbiasednessStats { target, mean, std_err: (var / n).sqrt() })
}

/// Worst relative error of `fuse_backward` against central differences for
/// every fusion kind at `C = 4`, `D = 8`.
pub fn fusion_gradient_error(rng: &mut Rng) -> Result<f64> {
    let c = 4;
    let mut worst = 0.0f64;
    for kind in FusionKind::ALL {
        let method = FusionMethod::from_seed(kind, c, 8, Seed(rng.random()))?;
        let a = normal_vec(rng, c);
        let b = normal_vec(rng, c);
        let u = normal_vec(rng, method.output_dim());
        let objective = |x: &[f64], y: &[f64]| -> f64 {
            let g = fuse(&method, &fv(x.to_vec()), &fv(y.to_vec())).expect("shapes match");
            g.as_slice().iter().zip(&u).map(|(p, q)| p * q).sum()
        };
        let fd_a = oracle::central_difference(|x| objective(x, &b), &a, 1e-5);
        let fd_b = oracle::central_difference(|y| objective(&a, y), &b, 1e-5);
        let (ga, gb) = fuse_backward(&method, &fv(a.clone()), &fv(b.clone()), &u)?;
        worst = worst.max(oracle::max_relative_error(&ga, &fd_a, 1e-3)).max(oracle::max_relative_error(&gb, &fd_b, 1e-3));
    }
    Ok(worst)
}

/// Worst relative error of the classifier gradient against central
/// differences over random instances with `input_dim ≤ 32`, `L ≤ 7`.
pub fn classifier_gradient_error(instances: usize, rng: &mut Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = rng.random_range(1..=32);
        let l = rng.random_range(2..=7);
        let w: Vec<f64> = (0..d * l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = rng.random_range(0..l);
        let params = ClassifierParams::new(w.clone(), b.clone(), d, l)?;
        let grad = classifier::gradient(&params, &g, label)?;

        let mut theta = w;
        theta.extend(b);
        let loss = |t: &[f64]| {
            let p = ClassifierParams::new(t[..d * l].to_vec(), t[d * l..].to_vec(), d, l).expect("shapes match");
            classifier::cross_entropy(&p, &g, label).expect("valid label")
        };
        let fd = oracle::central_difference(loss, &theta, 1e-5);
        let mut analytic = grad.weights;
        analytic.extend(grad.bias);
        worst = worst.max(oracle::max_relative_error(&analytic, &fd, 1e-2));
    }
    Ok(worst)
}

/// Trains each fusion kind briefly on a small synthetic task and evaluates
/// its logit factorization structure at random points.
pub fn factorization_reports(seed: Seed) -> Result<Vec<classifier::FactorizationReport>> {
    let synth = SynthConfig { dim: 8, n_train: 400, n_test: 1, seed, ..SynthConfig::default() };
    let (train, _) = generate_synthetic(&synth)?;
    let cfg = TrainConfig { epochs: 3, shuffle_seed: seed, ..TrainConfig::default() };
    let mut rng = make_rng(seed, stream::SELFTEST);
    FusionKind::ALL
        .into_iter()
        .map(|kind| {
            let method = FusionMethod::from_seed(kind, synth.dim, 32, seed)?;
            let trained = classifier::sgd_train(&train, &method, &cfg, seed)?;
            let mut point = || fv(normal_vec(&mut rng, synth.dim));
            let (fa, fb, fa2, fb2) = (point(), point(), point(), point());
            logit_decomposition_check(&trained.params, &method, &fa, &fb, &fa2, &fb2)
        })
        .collect()
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    SuiteResult { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let seed = Seed(opts.seed);
    let rng = || make_rng(seed, stream::SELFTEST);
    let suites = vec![
        timed("fft-vs-naive-dft", || {
            let d = fft_deviations(1024, &mut rng())?;
            let ok = d.vs_naive <= 1e-9 && d.roundtrip <= 1e-10 && d.convolution <= 1e-9;
            Ok((ok, format!("naive {:.2e}, roundtrip {:.2e}, convolution {:.2e}", d.vs_naive, d.roundtrip, d.convolution)))
        }),
        timed("compact-vs-outer-product-oracle", || {
            let worst = oracle_equality(200, &mut rng(), opts.inject_sign_flip)?;
            Ok((worst <= 1e-9, format!("max abs error {worst:.2e} over 200 cases")))
        }),
        timed("kernel-unbiasedness", || {
            let s = kernel_unbiasedness(16, 64, 2000, &mut rng())?;
            Ok((
                s.z_score() <= 4.0,
                format!("mean {:.3} vs target {:.3} ({:.2} standard errors)", s.mean, s.target, s.z_score()),
            ))
        }),
        timed("gradient-checks", || {
            let fusion = fusion_gradient_error(&mut rng())?;
            let head = classifier_gradient_error(50, &mut rng())?;
            Ok((fusion <= 1e-4 && head <= 1e-6, format!("fusion {fusion:.2e}, classifier {head:.2e}")))
        }),
        timed("logit-factorization", || {
            let reports = factorization_reports(seed)?;
            let ok = reports.iter().all(|r| r.holds());
            let detail = reports
                .iter()
                .map(|r| format!("{} {:.2e}", r.kind, r.max_deviation()))
                .collect::<Vec<_>>()
                .join(", ");
            Ok((ok, detail))
        }),
    ];
    SelftestReport { suites }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes() {
        let report = run_selftest(&SelftestOptions::default());
        for s in &report.suites {
            assert!(s.passed, "{}: {}", s.name, s.detail);
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let report = run_selftest(&SelftestOptions { inject_sign_flip: true, seed: 0 });
        assert!(!report.all_passed());
        let failed: Vec<_> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
        assert_eq!(failed, vec!["compact-vs-outer-product-oracle"]);
    }
}
