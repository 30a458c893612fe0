//! Compact bilinear pooling for two-view feature fusion.
//!
//! Two feature vectors `fa, fb ∈ R^C` are fused into `g = Φ(fa, fb)` and
//! classified by a softmax head `softmax(Wᵀg + b)`. Besides the additive and
//! element-wise fusions, the crate provides the full outer product and its
//! Count Sketch compression, computed without materializing the `C²`
//! entries: both views are sketched to `R^D`, transformed with a radix-2
//! FFT, multiplied bin-wise and transformed back.
//!
//! ```
//! use compact_bilinear::{fuse, FeatureVector, FusionKind, FusionMethod, Seed};
//!
//! let fa = FeatureVector::new(vec![0.5, -1.0, 2.0, 0.0])?;
//! let fb = FeatureVector::new(vec![1.0, 1.0, -0.5, 3.0])?;
//! let method = FusionMethod::from_seed(FusionKind::CompactBilinear, 4, 8, Seed(7))?;
//! let g = fuse(&method, &fa, &fb)?;
//! assert_eq!(g.len(), 8);
//! # Ok::<(), compact_bilinear::Error>(())
//! ```

pub mod classifier;
pub mod csv_io;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod fusion;
pub mod model;
pub mod oracle;
pub mod selftest;
pub mod sketch;
pub mod synth;
pub mod types;

pub use classifier::{
    cross_entropy, gradient, logit_decomposition_check, predict_late_avg, predict_proba, sgd_train, ClassifierParams,
    FactorizationReport, TrainConfig, Trained,
};
pub use error::{Error, Result};
pub use fft::{complex_hadamard, dfft, idfft, ComplexVector};
pub use fusion::{fuse, fuse_backward, FusedFeature, FusionKind, FusionMethod};
pub use model::Model;
pub use sketch::{
    bilinear_sketch_oracle, compact_bilinear, compact_bilinear_backward, count_sketch, sample_params, CountSketchParams,
    SketchVector,
};
pub use synth::{generate_synthetic, SynthConfig};
pub use types::{make_rng, scale_features, Dataset, FeatureVector, PairedSample, Seed};

// Guide chapters are compiled and run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/count-sketch.md")]
    mod count_sketch {}
    #[doc = include_str!("../../../book/src/fft.md")]
    mod fft {}
    #[doc = include_str!("../../../book/src/compact-bilinear.md")]
    mod compact_bilinear {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    mod classifier {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
