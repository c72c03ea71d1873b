//! Backbone + head models: a feature MLP over forensic features and a small 3-D convnet over sampled frames.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Graph, NodeId, ParamStore};
use crate::checkpoint;
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::forensics::{extract_feature_vector, FeatureConfig};
use crate::tensor::Tensor;
use crate::video::{resize_plane, sample_frames, Label, ManifestEntry, VideoTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    FeatureMlp,
    Conv3d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Hidden widths (MLP) or per-block channel counts (conv3d).
    pub widths: Vec<usize>,
    /// Class names in logit order: `["real", "fake"]` for detection, generator ids for tracing.
    pub classes: Vec<String>,
    pub features: FeatureConfig,
    /// Sampled frame count and square side of the conv3d input.
    pub frames: usize,
    pub size: usize,
}

pub fn detection_classes() -> Vec<String> {
    vec!["real".into(), "fake".into()]
}

impl BackboneSpec {
    pub fn feature_mlp(classes: Vec<String>) -> Self {
        BackboneSpec {
            kind: BackboneKind::FeatureMlp,
            widths: vec![32, 16],
            classes,
            features: FeatureConfig::default(),
            frames: 16,
            size: 64,
        }
    }

    /// Four conv blocks over a `16 × 1 × 64 × 64` input.
    pub fn conv3d(classes: Vec<String>) -> Self {
        BackboneSpec {
            kind: BackboneKind::Conv3d,
            widths: vec![4, 8, 8, 16],
            ..Self::feature_mlp(classes)
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_detector(&self) -> bool {
        self.classes == detection_classes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid(
                "layer widths must be non-empty and positive",
            ));
        }
        if self.kind == BackboneKind::Conv3d {
            let div = 1usize << self.widths.len();
            if self.frames == 0
                || self.size == 0
                || !self.frames.is_multiple_of(div)
                || !self.size.is_multiple_of(div)
            {
                return Err(Error::invalid(format!(
                    "conv3d input {}x{}x{} must be divisible by {div} for {} pooling blocks",
                    self.frames,
                    self.size,
                    self.size,
                    self.widths.len()
                )));
            }
        }
        Ok(())
    }

    /// Length of the flat per-sample input.
    pub fn input_len(&self) -> usize {
        match self.kind {
            BackboneKind::FeatureMlp => self.features.len(),
            BackboneKind::Conv3d => self.frames * self.size * self.size,
        }
    }

    /// Scalar parameter count: for conv3d `Σ (27·c_in·c_out + c_out) + (c_last + 1)·K`.
    pub fn param_count(&self) -> usize {
        let k = self.num_classes();
        let mut total = 0;
        let mut cin = match self.kind {
            BackboneKind::FeatureMlp => self.features.len(),
            BackboneKind::Conv3d => 1,
        };
        for &c in &self.widths {
            total += match self.kind {
                BackboneKind::FeatureMlp => cin * c + c,
                BackboneKind::Conv3d => 27 * cin * c + c,
            };
            cin = c;
        }
        total + cin * k + k
    }
}

/// Per-feature standardization fitted on training inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("cannot fit a normalizer on zero rows"));
        }
        let d = rows[0].len();
        let mean: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let scale = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalizer { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// `f = w · ε`: backbone ε followed by a linear head w.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: BackboneSpec,
    pub params: ParamStore,
    pub normalizer: Option<Normalizer>,
}

/// Graph handles from one forward pass.
pub struct ForwardPass {
    pub logits: NodeId,
    /// Input node (conv3d only has a meaningful spatial layout).
    pub input: NodeId,
    /// Post-ReLU activation of the last conv block, before pooling.
    pub last_conv: Option<NodeId>,
}

/// Deterministic fan-in-uniform initialization.
pub fn build_model(spec: &BackboneSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    match spec.kind {
        BackboneKind::FeatureMlp => {
            let mut cin = spec.features.len();
            for (i, &c) in spec.widths.iter().enumerate() {
                p.push_fan_in(format!("backbone.{i}.weight"), &[c, cin], cin, &mut r);
                p.push_fan_in(format!("backbone.{i}.bias"), &[c], cin, &mut r);
                cin = c;
            }
        }
        BackboneKind::Conv3d => {
            let mut cin = 1;
            for (i, &c) in spec.widths.iter().enumerate() {
                p.push_fan_in(
                    format!("backbone.{i}.weight"),
                    &[c, cin, 3, 3, 3],
                    27 * cin,
                    &mut r,
                );
                p.push_fan_in(format!("backbone.{i}.bias"), &[c], 27 * cin, &mut r);
                cin = c;
            }
        }
    }
    let last = *spec.widths.last().unwrap_or(&1);
    p.push_fan_in("head.weight", &[spec.num_classes(), last], last, &mut r);
    p.push_fan_in("head.bias", &[spec.num_classes()], last, &mut r);
    Ok(Model {
        spec: spec.clone(),
        params: p,
        normalizer: None,
    })
}

/// Flat model input of a video: forensic features, or `frames × size × size` luma samples.
pub fn prepare_input(spec: &BackboneSpec, video: &VideoTensor) -> Result<Vec<f64>> {
    match spec.kind {
        BackboneKind::FeatureMlp => Ok(extract_feature_vector(video, &spec.features)?.0),
        BackboneKind::Conv3d => {
            let v = sample_frames(video, spec.frames)?;
            let mut out = Vec::with_capacity(spec.input_len());
            for t in 0..v.frames() {
                out.extend(resize_plane(
                    &v.luma(t),
                    v.height(),
                    v.width(),
                    spec.size,
                    spec.size,
                ));
            }
            Ok(out)
        }
    }
}

impl Model {
    /// Builds the forward graph for a batch of raw inputs.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        batch: &[&[f64]],
        input_grad: bool,
    ) -> Result<ForwardPass> {
        let n = batch.len();
        let d = self.spec.input_len();
        if n == 0 || batch.iter().any(|r| r.len() != d) {
            return Err(Error::invalid(format!(
                "expected a non-empty batch of length-{d} inputs"
            )));
        }
        let mut flat = Vec::with_capacity(n * d);
        for row in batch {
            match &self.normalizer {
                Some(norm) => flat.extend(norm.apply(row)),
                None => flat.extend_from_slice(row),
            }
        }
        let s = &self.spec;
        let (input, last_conv, features) = match s.kind {
            BackboneKind::FeatureMlp => {
                let x = Tensor::new([n, d], flat)?;
                let input = if input_grad {
                    g.variable(x)
                } else {
                    g.constant(x)
                };
                let mut h = input;
                for i in 0..s.widths.len() {
                    let z = g.linear(
                        h,
                        p.id(&format!("backbone.{i}.weight")),
                        Some(p.id(&format!("backbone.{i}.bias"))),
                    )?;
                    h = g.relu(z);
                }
                (input, None, h)
            }
            BackboneKind::Conv3d => {
                let x = Tensor::new([n, 1, s.frames, s.size, s.size], flat)?;
                let input = if input_grad {
                    g.variable(x)
                } else {
                    g.constant(x)
                };
                let mut h = input;
                let mut last = None;
                for i in 0..s.widths.len() {
                    let z = g.conv3d(
                        h,
                        p.id(&format!("backbone.{i}.weight")),
                        Some(p.id(&format!("backbone.{i}.bias"))),
                        [1, 1, 1],
                    )?;
                    let a = g.relu(z);
                    last = Some(a);
                    h = g.avg_pool3d(a, [2, 2, 2])?;
                }
                let pooled = g.mean_trailing(h, 2)?;
                (input, last, pooled)
            }
        };
        let logits = g.linear(features, p.id("head.weight"), Some(p.id("head.bias")))?;
        Ok(ForwardPass {
            logits,
            input,
            last_conv,
        })
    }

    /// Logits of one raw input.
    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = self.forward(&mut g, &p, &[input], false)?;
        Ok(g.value(f.logits).data().to_vec())
    }

    /// Class index of a labelled sample under this model's class list.
    pub fn target_of(&self, entry: &ManifestEntry) -> Result<usize> {
        if self.spec.is_detector() {
            return Ok(match entry.label {
                Label::Real => 0,
                Label::Fake => 1,
            });
        }
        let gen = match (entry.label, entry.final_generator()) {
            (Label::Fake, Some(g)) => g,
            _ => {
                return Err(Error::invalid(format!(
                    "{} is not a fake sample; tracing presumes fake input",
                    entry.path
                )))
            }
        };
        self.class_index(gen).ok_or_else(|| {
            Error::invalid(format!(
                "generator `{gen}` of {} is not a model class",
                entry.path
            ))
        })
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.spec.classes.iter().position(|c| c == name)
    }

    /// Writes `<stem>.ckpt` and a `<stem>.json` sidecar carrying the backbone layout, normalizer and `extra` metadata.
    pub fn save(&self, stem: &Path, extra: serde_json::Value) -> Result<()> {
        checkpoint::save(&stem.with_extension("ckpt"), &self.params)?;
        let sidecar = ModelSidecar {
            spec: self.spec.clone(),
            normalizer: self.normalizer.clone(),
            extra,
        };
        let path = stem.with_extension("json");
        fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n")
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(stem: &Path) -> Result<(Self, serde_json::Value)> {
        let path = stem.with_extension("json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: ModelSidecar = serde_json::from_str(&text)?;
        let params = checkpoint::load(&stem.with_extension("ckpt"))?;
        let reference = build_model(&sidecar.spec, 0)?;
        let matches = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape());
        if !matches {
            return Err(Error::format(
                stem.display().to_string(),
                "checkpoint does not match the backbone spec",
            ));
        }
        Ok((
            Model {
                spec: sidecar.spec,
                params,
                normalizer: sidecar.normalizer,
            },
            sidecar.extra,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelSidecar {
    spec: BackboneSpec,
    normalizer: Option<Normalizer>,
    extra: serde_json::Value,
}

/// Prepared model inputs keyed by manifest path.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub entries: Vec<ManifestEntry>,
    pub inputs: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn from_samples(spec: &BackboneSpec, samples: &[Sample]) -> Result<Self> {
        let inputs = samples
            .iter()
            .map(|s| prepare_input(spec, &s.video))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(samples.iter().map(|s| s.entry.clone()).collect(), inputs)
    }

    pub fn from_parts(entries: Vec<ManifestEntry>, inputs: Vec<Vec<f64>>) -> Result<Self> {
        if entries.len() != inputs.len() {
            return Err(Error::invalid(
                "dataset entries and inputs differ in length",
            ));
        }
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.path.clone(), i))
            .collect();
        Ok(Dataset {
            entries,
            inputs,
            index,
        })
    }

    pub fn get(&self, path: &str) -> Result<(&ManifestEntry, &[f64])> {
        let i = *self
            .index
            .get(path)
            .ok_or_else(|| Error::invalid(format!("sample `{path}` is not in the dataset")))?;
        Ok((&self.entries[i], &self.inputs[i]))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
