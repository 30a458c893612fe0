//! Trained model persistence: a single JSON document holding the fusion
//! kind, frozen sketch parameters, and the softmax head.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{predict_proba, sgd_train, ClassifierParams, TrainConfig, Trained};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionKind, FusionMethod};
use crate::sketch::CountSketchParams;
use crate::types::{scale_features, Dataset, FeatureVector, Seed};

pub const FORMAT_VERSION: u32 = 1;

/// Rounds to 9 significant decimal digits, the precision of every real
/// number written to disk.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSeeds {
    /// Source of the sketch parameters (compact fusion only).
    pub hash: Seed,
    pub init: Seed,
    pub shuffle: Seed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub method: FusionMethod,
    pub classifier: ClassifierParams,
    pub alpha: f64,
    pub seeds: ModelSeeds,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    fusion: FusionKind,
    #[serde(rename = "C")]
    c: usize,
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "L")]
    l: usize,
    alpha: f64,
    seeds: ModelSeeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sketch_a: Option<CountSketchParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sketch_b: Option<CountSketchParams>,
    #[serde(rename = "W")]
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Model {
    /// Scales the dataset by `alpha`, builds the fusion function (sampling
    /// sketches from `seeds.hash` if compact) and trains the head.
    pub fn train(
        dataset: &Dataset,
        kind: FusionKind,
        sketch_dim: usize,
        alpha: f64,
        cfg: &TrainConfig,
        seeds: ModelSeeds,
    ) -> Result<(Model, Vec<f64>)> {
        let method = FusionMethod::from_seed(kind, dataset.dim(), sketch_dim, seeds.hash)?;
        let cfg = TrainConfig { shuffle_seed: seeds.shuffle, ..cfg.clone() };
        let Trained { params, loss_trace } = sgd_train(&dataset.scaled(alpha)?, &method, &cfg, seeds.init)?;
        Ok((Model { method, classifier: params, alpha, seeds }, loss_trace))
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn predict_proba(&self, fa: &FeatureVector, fb: &FeatureVector) -> Result<Vec<f64>> {
        let g = fuse(&self.method, &scale_features(fa, self.alpha)?, &scale_features(fb, self.alpha)?)?;
        predict_proba(&self.classifier, g.as_slice())
    }

    pub fn to_json(&self) -> Result<String> {
        let (sketch_a, sketch_b) = match &self.method {
            FusionMethod::CompactBilinear { a, b } => (Some(a.clone()), Some(b.clone())),
            _ => (None, None),
        };
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            fusion: self.method.kind(),
            c: self.method.input_dim(),
            d: self.method.output_dim(),
            l: self.classifier.num_classes(),
            alpha: self.alpha,
            seeds: self.seeds,
            sketch_a,
            sketch_b,
            w: self.classifier.weights().iter().copied().map(round_sig9).collect(),
            b: self.classifier.bias().iter().copied().map(round_sig9).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model format version {}", file.format_version)));
        }
        let method = match (file.fusion, file.sketch_a, file.sketch_b) {
            (FusionKind::CompactBilinear, Some(a), Some(b)) => FusionMethod::compact(a, b)?,
            (FusionKind::CompactBilinear, ..) => {
                return Err(Error::invalid("compact model is missing its sketch parameters"))
            }
            (kind, ..) => FusionMethod::simple(kind, file.c)?,
        };
        if method.input_dim() != file.c || method.output_dim() != file.d {
            return Err(Error::shape(format!(
                "model header says C={} D={} but the fusion parameters give C={} D={}",
                file.c,
                file.d,
                method.input_dim(),
                method.output_dim()
            )));
        }
        if !(file.alpha.is_finite() && file.alpha > 0.0) {
            return Err(Error::invalid(format!("model alpha must be positive, got {}", file.alpha)));
        }
        let classifier = ClassifierParams::new(file.w, file.b, file.d, file.l)?;
        Ok(Model { method, classifier, alpha: file.alpha, seeds: file.seeds })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PairedSample;

    fn data() -> Dataset {
        let s = |a: [f64; 2], b: [f64; 2], l| {
            PairedSample::new(FeatureVector::new(a.to_vec()).unwrap(), FeatureVector::new(b.to_vec()).unwrap(), l).unwrap()
        };
        Dataset::new(vec![s([1.0, 0.0], [0.0, 1.0], 0), s([0.0, 1.0], [1.0, 0.0], 1), s([0.5, 0.5], [0.2, -0.3], 2)], 3, 2)
            .unwrap()
    }

    fn seeds() -> ModelSeeds {
        ModelSeeds { hash: Seed(1), init: Seed(2), shuffle: Seed(3) }
    }

    #[test]
    fn sig9_rounding() {
        assert_eq!(round_sig9(0.1234567891234), 0.123456789);
        assert_eq!(round_sig9(-98765.43210987), -98765.4321);
        assert_eq!(round_sig9(0.0), 0.0);
        assert_eq!(round_sig9(round_sig9(std::f64::consts::PI)), round_sig9(std::f64::consts::PI));
    }

    #[test]
    fn json_roundtrip_every_kind() {
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        for kind in FusionKind::ALL {
            let (model, _) = Model::train(&data(), kind, 4, 2.0, &cfg, seeds()).unwrap();
            let text = model.to_json().unwrap();
            let back = Model::from_json(&text).unwrap();
            assert_eq!(back.method, model.method);
            assert_eq!(back.alpha, 2.0);
            assert_eq!(back.seeds, seeds());
            let rounded: Vec<f64> = model.classifier.weights().iter().copied().map(round_sig9).collect();
            assert_eq!(back.classifier.weights(), &rounded[..]);
            // writing the reloaded model again is byte-identical
            assert_eq!(back.to_json().unwrap(), text);
        }
    }

    #[test]
    fn model_file_fields() {
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let (model, _) = Model::train(&data(), FusionKind::CompactBilinear, 4, 1.0, &cfg, seeds()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["fusion"], "compact");
        assert_eq!((v["C"].as_u64(), v["D"].as_u64(), v["L"].as_u64()), (Some(2), Some(4), Some(3)));
        assert_eq!(v["W"].as_array().unwrap().len(), 12);
        assert_eq!(v["sketch_a"]["h"].as_array().unwrap().len(), 2);
        assert!(v["sketch_b"]["s"].as_array().unwrap().iter().all(|s| s == 1 || s == -1));
    }

    #[test]
    fn rejects_inconsistent_files() {
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let (model, _) = Model::train(&data(), FusionKind::Concat, 4, 1.0, &cfg, seeds()).unwrap();
        let text = model.to_json().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["D"] = 5.into();
        assert!(Model::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["fusion"] = "compact".into();
        assert!(Model::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["fusion"] = "outer".into();
        assert!(Model::from_json(&v.to_string()).is_err());
    }
}
