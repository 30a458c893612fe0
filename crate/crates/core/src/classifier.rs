//! Linear softmax head over fused features, trained with plain minibatch SGD
//! on cross-entropy.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse, fuse_backward, FusionKind, FusionMethod};
use crate::types::{make_rng, stream, Dataset, FeatureVector, Seed};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    /// Row-major `input_dim × num_classes`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    input_dim: usize,
    num_classes: usize,
}

impl ClassifierParams {
    pub fn new(weights: Vec<f64>, bias: Vec<f64>, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::invalid("classifier dimensions must be positive"));
        }
        if weights.len() != input_dim * num_classes {
            return Err(Error::shape(format!(
                "weight matrix has {} entries, expected {input_dim}×{num_classes}",
                weights.len()
            )));
        }
        if bias.len() != num_classes {
            return Err(Error::shape(format!("bias has {} entries, expected {num_classes}", bias.len())));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("classifier parameters must be finite"));
        }
        Ok(ClassifierParams { weights, bias, input_dim, num_classes })
    }

    pub fn zeros(input_dim: usize, num_classes: usize) -> Self {
        Self::new(vec![0.0; input_dim * num_classes], vec![0.0; num_classes], input_dim, num_classes)
            .expect("positive dimensions")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Weight column of class `c`, i.e. `W[:, c]`.
    pub fn class_weights(&self, c: usize) -> Vec<f64> {
        self.weights.iter().skip(c).step_by(self.num_classes).copied().collect()
    }

    fn check_input(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.input_dim {
            return Err(Error::shape(format!(
                "classifier expects {} inputs, got {}",
                self.input_dim,
                g.len()
            )));
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::invalid(format!("label {label} out of range for {} classes", self.num_classes)));
        }
        Ok(())
    }

    /// `z = Wᵀg + b`.
    pub fn logits(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_input(g)?;
        let mut z = self.bias.clone();
        for (row, &x) in self.weights.chunks_exact(self.num_classes).zip(g) {
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += w * x;
            }
        }
        Ok(z)
    }
}

fn softmax(mut z: Vec<f64>) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
    z
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Class probabilities `softmax(Wᵀg + b)`.
pub fn predict_proba(params: &ClassifierParams, g: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(params.logits(g)?))
}

/// `-log p_label`, evaluated through log-sum-exp.
pub fn cross_entropy(params: &ClassifierParams, g: &[f64], label: usize) -> Result<f64> {
    params.check_label(label)?;
    let z = params.logits(g)?;
    Ok((log_sum_exp(&z) - z[label]).max(0.0))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Row-major, same layout as [`ClassifierParams::weights`].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient of [`cross_entropy`]: `∂b = p - onehot`, `∂W = g ⊗ (p - onehot)`.
pub fn gradient(params: &ClassifierParams, g: &[f64], label: usize) -> Result<Gradient> {
    params.check_label(label)?;
    let mut delta = predict_proba(params, g)?;
    delta[label] -= 1.0;
    let weights = g.iter().flat_map(|x| delta.iter().map(move |d| x * d)).collect();
    Ok(Gradient { weights, bias: delta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: Seed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.1, epochs: 30, batch_size: 32, shuffle_seed: Seed(0) }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub params: ClassifierParams,
    /// Mean training cross-entropy after each epoch.
    pub loss_trace: Vec<f64>,
}

/// Mean cross-entropy over a labelled feature set.
pub fn mean_loss(params: &ClassifierParams, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for (g, &l) in features.iter().zip(labels) {
        total += cross_entropy(params, g, l)?;
    }
    Ok(total / features.len() as f64)
}

/// Minibatch SGD on precomputed feature vectors.
///
/// Weights start at `N(0, 1/input_dim)` drawn from `init_seed`, biases at
/// zero. Each epoch visits the samples in an order drawn from
/// `cfg.shuffle_seed`; each step subtracts `lr` times the batch-mean
/// gradient.
pub fn train_on_features(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
    init_seed: Seed,
) -> Result<Trained> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if features.len() != labels.len() {
        return Err(Error::shape(format!("{} feature rows but {} labels", features.len(), labels.len())));
    }
    let input_dim = features[0].len();
    if let Some(n) = features.iter().position(|g| g.len() != input_dim) {
        return Err(Error::shape(format!("feature row {n} has length {}, expected {input_dim}", features[n].len())));
    }

    let mut init = make_rng(init_seed, stream::WEIGHT_INIT);
    let scale = 1.0 / (input_dim as f64).sqrt();
    let weights = (0..input_dim * num_classes)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut init);
            scale * z
        })
        .collect();
    let mut params = ClassifierParams::new(weights, vec![0.0; num_classes], input_dim, num_classes)?;
    for &l in labels {
        params.check_label(l)?;
    }

    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut shuffle = make_rng(cfg.shuffle_seed, stream::SHUFFLE);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut acc_w = vec![0.0; params.weights.len()];
    let mut acc_b = vec![0.0; num_classes];

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            acc_w.iter_mut().for_each(|v| *v = 0.0);
            acc_b.iter_mut().for_each(|v| *v = 0.0);
            for &n in batch {
                let g = &features[n];
                let mut delta = predict_proba(&params, g)?;
                delta[labels[n]] -= 1.0;
                for (row, &x) in acc_w.chunks_exact_mut(num_classes).zip(g) {
                    for (w, d) in row.iter_mut().zip(&delta) {
                        *w += x * d;
                    }
                }
                for (b, d) in acc_b.iter_mut().zip(&delta) {
                    *b += d;
                }
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (w, a) in params.weights.iter_mut().zip(&acc_w) {
                *w -= step * a;
            }
            for (b, a) in params.bias.iter_mut().zip(&acc_b) {
                *b -= step * a;
            }
        }
        loss_trace.push(mean_loss(&params, features, labels)?);
    }
    if params.weights.iter().chain(&params.bias).any(|v| !v.is_finite()) {
        return Err(Error::NumericConsistency("training diverged to non-finite parameters".into()));
    }
    Ok(Trained { params, loss_trace })
}

/// Fuses every sample with `method`.
pub fn fuse_dataset(dataset: &Dataset, method: &FusionMethod) -> Result<Vec<Vec<f64>>> {
    dataset
        .samples()
        .iter()
        .map(|s| fuse(method, &s.view_a, &s.view_b).map(|g| g.into_vec()))
        .collect()
}

/// Trains the softmax head on `method`-fused samples of `dataset`.
pub fn sgd_train(dataset: &Dataset, method: &FusionMethod, cfg: &TrainConfig, init_seed: Seed) -> Result<Trained> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let features = fuse_dataset(dataset, method)?;
    let labels: Vec<usize> = dataset.labels().collect();
    train_on_features(&features, &labels, dataset.num_classes(), cfg, init_seed)
}

/// Late fusion: the mean of two per-view classifiers' probability vectors.
pub fn predict_late_avg(
    params_a: &ClassifierParams,
    params_b: &ClassifierParams,
    fa: &FeatureVector,
    fb: &FeatureVector,
) -> Result<Vec<f64>> {
    if params_a.num_classes != params_b.num_classes {
        return Err(Error::shape(format!(
            "per-view classifiers have {} and {} classes",
            params_a.num_classes, params_b.num_classes
        )));
    }
    let pa = predict_proba(params_a, fa.as_slice())?;
    let pb = predict_proba(params_b, fb.as_slice())?;
    Ok(pa.iter().zip(&pb).map(|(x, y)| 0.5 * (x + y)).collect())
}

/// Residual below which a factorization identity counts as holding.
pub const FACTORIZATION_TOL: f64 = 1e-10;
/// Cross-dependence magnitude above which a bilinear model counts as
/// coupling distinct coordinates of the two views.
pub const CROSS_DEPENDENCE_FLOOR: f64 = 1e-8;

/// How a fused model's logits depend jointly on the two views.
///
/// All quantities are computed on logits, never probabilities. Mixed
/// differences use unit steps, which are exact for maps that are at most
/// bilinear in `(fa, fb)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorizationReport {
    pub kind: FusionKind,
    /// `max |J_a(fa, fb) − J_a(fa, fb')|` together with the same for `J_b`
    /// under a change of `fa`, where `J_a = ∂z/∂fa`.
    pub jacobian_block_change: f64,
    /// `max |z(fa,fb) − z(fa,0) − z(0,fb) + z(0,0)|`.
    pub additivity_residual: f64,
    /// `max_{i≠j} |∂²z/∂fa_i ∂fb_j|` at `(fa, fb)`.
    pub off_diagonal_cross: f64,
    /// `max_i |∂²z/∂fa_i ∂fb_i|` at `(fa, fb)`.
    pub diagonal_cross: f64,
    /// Product fusion only: `max |z(fa, fb + e_j) − z(fa, fb) − W_j fa_j|`.
    pub product_law_residual: Option<f64>,
}

impl FactorizationReport {
    /// The deviation from the identity this fusion kind is expected to
    /// satisfy. For the bilinear kinds this is the cross-dependence itself,
    /// which is expected to be large.
    pub fn max_deviation(&self) -> f64 {
        match self.kind {
            FusionKind::Concat => self.jacobian_block_change.max(self.additivity_residual),
            FusionKind::Sum => self.additivity_residual.max(self.jacobian_block_change),
            FusionKind::Product => self.off_diagonal_cross.max(self.product_law_residual.unwrap_or(0.0)),
            FusionKind::FullBilinear | FusionKind::CompactBilinear => self.off_diagonal_cross,
        }
    }

    pub fn holds(&self) -> bool {
        match self.kind {
            FusionKind::Concat | FusionKind::Sum | FusionKind::Product => self.max_deviation() <= FACTORIZATION_TOL,
            FusionKind::FullBilinear | FusionKind::CompactBilinear => self.off_diagonal_cross > CROSS_DEPENDENCE_FLOOR,
        }
    }
}

fn unit_shift(f: &FeatureVector, i: usize) -> Result<FeatureVector> {
    let mut v = f.as_slice().to_vec();
    v[i] += 1.0;
    FeatureVector::new(v)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Evaluates the logit-level factorization structure of a fused model at
/// the points `(fa, fb)` and `(fa', fb')`.
pub fn logit_decomposition_check(
    params: &ClassifierParams,
    method: &FusionMethod,
    fa: &FeatureVector,
    fb: &FeatureVector,
    fa_alt: &FeatureVector,
    fb_alt: &FeatureVector,
) -> Result<FactorizationReport> {
    if params.input_dim != method.output_dim() {
        return Err(Error::shape(format!(
            "classifier takes {} inputs but fusion produces {}",
            params.input_dim,
            method.output_dim()
        )));
    }
    let c = method.input_dim();
    let z = |a: &FeatureVector, b: &FeatureVector| -> Result<Vec<f64>> { params.logits(fuse(method, a, b)?.as_slice()) };

    // Per-class Jacobians through the fusion backward pass.
    let jacobians = |a: &FeatureVector, b: &FeatureVector| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut ja = Vec::with_capacity(c * params.num_classes);
        let mut jb = Vec::with_capacity(c * params.num_classes);
        for cls in 0..params.num_classes {
            let (ga, gb) = fuse_backward(method, a, b, &params.class_weights(cls))?;
            ja.extend(ga);
            jb.extend(gb);
        }
        Ok((ja, jb))
    };
    let (ja, jb) = jacobians(fa, fb)?;
    let (ja_other_b, _) = jacobians(fa, fb_alt)?;
    let (_, jb_other_a) = jacobians(fa_alt, fb)?;
    let jacobian_block_change = max_abs_diff(&ja, &ja_other_b).max(max_abs_diff(&jb, &jb_other_a));

    let zero = FeatureVector::zeros(c);
    let base = z(fa, fb)?;
    let (za0, z0b, z00) = (z(fa, &zero)?, z(&zero, fb)?, z(&zero, &zero)?);
    let additivity_residual = (0..params.num_classes)
        .map(|k| (base[k] - za0[k] - z0b[k] + z00[k]).abs())
        .fold(0.0, f64::max);

    let shifted_b: Vec<Vec<f64>> = (0..c).map(|j| z(fa, &unit_shift(fb, j)?)).collect::<Result<_>>()?;
    let mut off_diagonal_cross = 0.0f64;
    let mut diagonal_cross = 0.0f64;
    for i in 0..c {
        let ai = unit_shift(fa, i)?;
        let z_i0 = z(&ai, fb)?;
        for (j, z_0j) in shifted_b.iter().enumerate() {
            let z_ij = z(&ai, &unit_shift(fb, j)?)?;
            let cross = (0..params.num_classes)
                .map(|k| (z_ij[k] - z_i0[k] - z_0j[k] + base[k]).abs())
                .fold(0.0, f64::max);
            if i == j {
                diagonal_cross = diagonal_cross.max(cross);
            } else {
                off_diagonal_cross = off_diagonal_cross.max(cross);
            }
        }
    }

    let product_law_residual = (method.kind() == FusionKind::Product).then(|| {
        let mut worst = 0.0f64;
        for (j, z_0j) in shifted_b.iter().enumerate() {
            for k in 0..params.num_classes {
                let predicted = params.weights[j * params.num_classes + k] * fa[j];
                worst = worst.max((z_0j[k] - base[k] - predicted).abs());
            }
        }
        worst
    });

    Ok(FactorizationReport {
        kind: method.kind(),
        jacobian_block_change,
        additivity_residual,
        off_diagonal_cross,
        diagonal_cross,
        product_law_residual,
    })
}
