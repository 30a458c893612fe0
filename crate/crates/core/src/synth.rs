//! Synthetic paired-view data whose label lives only in the cross-view
//! correlation.
//!
//! Each class `c` owns a fixed derangement `π_c`. A sample of class `c` has
//! `fa ~ N(0, I)` and `fb_j = fa_{π_c(j)} + σ ε_j`. Every class therefore
//! shares the same per-view marginals, and since no `π_c` has a fixed point,
//! `E[fa_i fb_i] = 0` for every class as well.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{make_rng, stream, Dataset, FeatureVector, PairedSample, Rng, Seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub num_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
    pub seed: Seed,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { dim: 16, num_classes: 4, n_train: 2000, n_test: 500, noise_sigma: 0.5, seed: Seed(0) }
    }
}

/// Number of derangements of `n` items, saturating at `u128::MAX`.
pub fn derangement_count(n: usize) -> u128 {
    let (mut prev, mut cur) = (1u128, 0u128); // !0, !1
    if n == 0 {
        return prev;
    }
    for k in 2..=n {
        let next = (k as u128 - 1).saturating_mul(cur.saturating_add(prev));
        prev = cur;
        cur = next;
    }
    cur
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("synthetic dimension must be at least 2, got {}", self.dim)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if derangement_count(self.dim) < self.num_classes as u128 {
            return Err(Error::Config(format!(
                "only {} derangements of {} coordinates exist, cannot give {} classes distinct ones",
                derangement_count(self.dim),
                self.dim,
                self.num_classes
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// The class structure of a synthetic task plus its random stream.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    /// `permutations[c][j]` is the view-A coordinate copied into view-B
    /// coordinate `j` for class `c`.
    permutations: Vec<Vec<usize>>,
    noise_sigma: f64,
    num_classes: usize,
    rng: Rng,
}

impl SyntheticTask {
    /// Draws one distinct derangement per class from the data stream of
    /// `cfg.seed`.
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = make_rng(cfg.seed, stream::DATA_GEN);
        let mut permutations: Vec<Vec<usize>> = Vec::with_capacity(cfg.num_classes);
        while permutations.len() < cfg.num_classes {
            let mut p: Vec<usize> = (0..cfg.dim).collect();
            p.shuffle(&mut rng);
            let deranged = p.iter().enumerate().all(|(j, &i)| i != j);
            if deranged && !permutations.contains(&p) {
                permutations.push(p);
            }
        }
        Ok(SyntheticTask { permutations, noise_sigma: cfg.noise_sigma, num_classes: cfg.num_classes, rng })
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.permutations
    }

    pub fn dim(&self) -> usize {
        self.permutations[0].len()
    }

    /// One sample of class `label`.
    pub fn sample_class(&mut self, label: usize) -> PairedSample {
        let c = self.dim();
        let fa: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        let fb: Vec<f64> = self.permutations[label]
            .iter()
            .map(|&i| {
                let eps: f64 = StandardNormal.sample(&mut self.rng);
                fa[i] + self.noise_sigma * eps
            })
            .collect();
        PairedSample {
            view_a: FeatureVector::new(fa).expect("normal draws are finite"),
            view_b: FeatureVector::new(fb).expect("normal draws are finite"),
            label,
        }
    }

    /// `n` samples with uniformly drawn labels.
    pub fn sample(&mut self, n: usize) -> Dataset {
        let samples = (0..n)
            .map(|_| {
                let label = self.rng.random_range(0..self.num_classes);
                self.sample_class(label)
            })
            .collect();
        Dataset::new(samples, self.num_classes, self.dim()).expect("generated samples are consistent")
    }
}

/// Train and test splits drawn from one task (shared class permutations).
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    let mut task = SyntheticTask::new(cfg)?;
    let train = task.sample(cfg.n_train);
    let test = task.sample(cfg.n_test);
    Ok((train, test))
}
