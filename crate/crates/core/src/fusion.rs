//! The fusing function that maps a pair of view features to the single
//! vector fed to the linear head.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::{self, CountSketchParams};
use crate::types::{make_rng, stream, FeatureVector, Seed};

/// Largest per-view dimension for which [`FusionMethod::FullBilinear`] will
/// materialize the `C²` outer product.
pub const FULL_BILINEAR_MAX_DIM: usize = 64;

/// Output of a fusion function.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature(Vec<f64>);

impl FusedFeature {
    pub(crate) fn from_vec(v: Vec<f64>) -> Self {
        FusedFeature(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Fusion kind without parameters. Serialized as the lowercase tokens
/// `concat | sum | product | full | compact`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Concat,
    Sum,
    Product,
    #[serde(rename = "full")]
    FullBilinear,
    #[serde(rename = "compact")]
    CompactBilinear,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Concat,
        FusionKind::Sum,
        FusionKind::Product,
        FusionKind::FullBilinear,
        FusionKind::CompactBilinear,
    ];

    pub fn token(self) -> &'static str {
        match self {
            FusionKind::Concat => "concat",
            FusionKind::Sum => "sum",
            FusionKind::Product => "product",
            FusionKind::FullBilinear => "full",
            FusionKind::CompactBilinear => "compact",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::Usage(format!("unknown fusion method `{s}` (expected concat, sum, product, full or compact)")))
    }
}

/// A fully specified fusion function for views of dimension `C`.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionMethod {
    Concat { dim: usize },
    Sum { dim: usize },
    Product { dim: usize },
    FullBilinear { dim: usize },
    CompactBilinear { a: CountSketchParams, b: CountSketchParams },
}

impl FusionMethod {
    /// Builds a parameter-free method. Use [`FusionMethod::compact`] for the
    /// sketched variant.
    pub fn simple(kind: FusionKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        Ok(match kind {
            FusionKind::Concat => FusionMethod::Concat { dim },
            FusionKind::Sum => FusionMethod::Sum { dim },
            FusionKind::Product => FusionMethod::Product { dim },
            FusionKind::FullBilinear => {
                if dim > FULL_BILINEAR_MAX_DIM {
                    return Err(Error::ResourceLimit(format!(
                        "full bilinear fusion limited to C ≤ {FULL_BILINEAR_MAX_DIM}, got {dim}"
                    )));
                }
                FusionMethod::FullBilinear { dim }
            }
            FusionKind::CompactBilinear => {
                return Err(Error::invalid("compact bilinear fusion needs sketch parameters"))
            }
        })
    }

    pub fn compact(a: CountSketchParams, b: CountSketchParams) -> Result<Self> {
        if a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim() {
            return Err(Error::shape(format!(
                "view sketches disagree: {}→{} vs {}→{}",
                a.input_dim(),
                a.output_dim(),
                b.input_dim(),
                b.output_dim()
            )));
        }
        Ok(FusionMethod::CompactBilinear { a, b })
    }

    /// Builds any kind; the compact variant draws its two sketches from the
    /// hash streams of `seed`. `sketch_dim` is ignored by the other kinds.
    pub fn from_seed(kind: FusionKind, dim: usize, sketch_dim: usize, seed: Seed) -> Result<Self> {
        match kind {
            FusionKind::CompactBilinear => Self::compact(
                sketch::sample_params(dim, sketch_dim, &mut make_rng(seed, stream::HASH_A))?,
                sketch::sample_params(dim, sketch_dim, &mut make_rng(seed, stream::HASH_B))?,
            ),
            k => Self::simple(k, dim),
        }
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            FusionMethod::Concat { .. } => FusionKind::Concat,
            FusionMethod::Sum { .. } => FusionKind::Sum,
            FusionMethod::Product { .. } => FusionKind::Product,
            FusionMethod::FullBilinear { .. } => FusionKind::FullBilinear,
            FusionMethod::CompactBilinear { .. } => FusionKind::CompactBilinear,
        }
    }

    /// Per-view input dimension `C`.
    pub fn input_dim(&self) -> usize {
        match self {
            FusionMethod::Concat { dim }
            | FusionMethod::Sum { dim }
            | FusionMethod::Product { dim }
            | FusionMethod::FullBilinear { dim } => *dim,
            FusionMethod::CompactBilinear { a, .. } => a.input_dim(),
        }
    }

    /// Length of the fused vector: `2C`, `C`, `C`, `C²` or `D`.
    pub fn output_dim(&self) -> usize {
        match self {
            FusionMethod::Concat { dim } => 2 * dim,
            FusionMethod::Sum { dim } | FusionMethod::Product { dim } => *dim,
            FusionMethod::FullBilinear { dim } => dim * dim,
            FusionMethod::CompactBilinear { a, .. } => a.output_dim(),
        }
    }

    fn check(&self, fa: &FeatureVector, fb: &FeatureVector) -> Result<()> {
        let c = self.input_dim();
        if fa.dim() != c || fb.dim() != c {
            return Err(Error::shape(format!(
                "fusion expects two {c}-dimensional views, got {} and {}",
                fa.dim(),
                fb.dim()
            )));
        }
        Ok(())
    }
}

/// Applies the fusion function to one pair of views.
pub fn fuse(method: &FusionMethod, fa: &FeatureVector, fb: &FeatureVector) -> Result<FusedFeature> {
    method.check(fa, fb)?;
    let (a, b) = (fa.as_slice(), fb.as_slice());
    let out = match method {
        FusionMethod::Concat { .. } => a.iter().chain(b).copied().collect(),
        FusionMethod::Sum { .. } => a.iter().zip(b).map(|(x, y)| x + y).collect(),
        FusionMethod::Product { .. } => a.iter().zip(b).map(|(x, y)| x * y).collect(),
        // k = i·C + j
        FusionMethod::FullBilinear { .. } => a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect(),
        FusionMethod::CompactBilinear { a: pa, b: pb } => return sketch::compact_bilinear(fa, fb, pa, pb),
    };
    Ok(FusedFeature(out))
}

/// Gradients of `<upstream, fuse(method, fa, fb)>` with respect to `fa` and
/// `fb`.
pub fn fuse_backward(
    method: &FusionMethod,
    fa: &FeatureVector,
    fb: &FeatureVector,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    method.check(fa, fb)?;
    if upstream.len() != method.output_dim() {
        return Err(Error::shape(format!(
            "upstream gradient has length {}, fused dimension is {}",
            upstream.len(),
            method.output_dim()
        )));
    }
    let (a, b) = (fa.as_slice(), fb.as_slice());
    let c = a.len();
    Ok(match method {
        FusionMethod::Concat { .. } => (upstream[..c].to_vec(), upstream[c..].to_vec()),
        FusionMethod::Sum { .. } => (upstream.to_vec(), upstream.to_vec()),
        FusionMethod::Product { .. } => (
            upstream.iter().zip(b).map(|(u, y)| u * y).collect(),
            upstream.iter().zip(a).map(|(u, x)| u * x).collect(),
        ),
        FusionMethod::FullBilinear { .. } => {
            let rows: Vec<&[f64]> = upstream.chunks_exact(c).collect();
            let ga = rows.iter().map(|row| row.iter().zip(b).map(|(u, y)| u * y).sum()).collect();
            let gb = (0..c).map(|j| rows.iter().zip(a).map(|(row, x)| row[j] * x).sum()).collect();
            (ga, gb)
        }
        FusionMethod::CompactBilinear { a: pa, b: pb } => sketch::compact_bilinear_backward(fa, fb, pa, pb, upstream)?,
    })
}
