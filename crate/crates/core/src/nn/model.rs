use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::decode::{decode_argmax, ActivationKind, ActivationMap, PredictedPoint};
use crate::autodiff::{Graph, Real, Tensor};
use crate::error::{ensure, Result};
use crate::ingest::GrayImage;
use crate::losses::spatial_softmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    Regression,
    Pixelwise,
    SpatialSoftmax,
}

impl HeadVariant {
    pub const ALL: [HeadVariant; 3] = [
        HeadVariant::Regression,
        HeadVariant::Pixelwise,
        HeadVariant::SpatialSoftmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadVariant::Regression => "regression",
            HeadVariant::Pixelwise => "pixelwise",
            HeadVariant::SpatialSoftmax => "spatial_softmax",
        }
    }

    pub fn is_map(self) -> bool {
        !matches!(self, HeadVariant::Regression)
    }

    pub fn activation(self) -> Option<ActivationKind> {
        match self {
            HeadVariant::Regression => None,
            HeadVariant::Pixelwise => Some(ActivationKind::Sigmoid),
            HeadVariant::SpatialSoftmax => Some(ActivationKind::SpatialSoftmax),
        }
    }
}

impl std::fmt::Display for HeadVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HeadVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadVariant::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown head variant {s:?}")))
    }
}

/// Residual feature extractor: a patchifying stem followed by
/// `num_blocks` blocks of `conv3×3 → relu → conv3×3 (+ skip) → relu`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub num_blocks: usize,
    pub output_stride: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            in_channels: 1,
            base_channels: 16,
            num_blocks: 4,
            output_stride: 4,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.in_channels >= 1, InvalidArgument, "in_channels must be at least 1");
        ensure!(self.base_channels >= 1, InvalidArgument, "base_channels must be at least 1");
        ensure!(
            self.output_stride.is_power_of_two(),
            InvalidArgument,
            "output_stride {} is not a power of two",
            self.output_stride
        );
        Ok(())
    }

    /// Stem kernel size and padding: non-overlapping patches for stride > 1.
    fn stem(&self) -> (usize, usize) {
        if self.output_stride == 1 {
            (3, 1)
        } else {
            (self.output_stride, 0)
        }
    }

    pub fn map_dims(&self, image_dims: (usize, usize)) -> (usize, usize) {
        (image_dims.0 / self.output_stride, image_dims.1 / self.output_stride)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadVariant,
}

/// A named parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Output of the graph-level forward pass.
#[derive(Clone, Copy, Debug)]
pub enum HeadOutput {
    /// Normalized `(x, y)` in `[0,1]²`, shape `[2]`.
    Point(Tensor),
    /// Raw `h×w` logits.
    Logits(Tensor),
}

/// Feature tensor `c×h×w` produced by the extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub shape: [usize; 3],
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadPrediction {
    Point(PredictedPoint),
    Map(ActivationMap),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub point: PredictedPoint,
    pub map: Option<ActivationMap>,
}

/// Feature extractor plus one detection head, with all parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionModel {
    config: ModelConfig,
    params: Vec<ParamTensor>,
}

fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, gain: f64) -> Vec<f32> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..shape.iter().product::<usize>())
        .map(|_| dist.sample(rng) as f32)
        .collect()
}

impl DetectionModel {
    /// Parameter names and shapes, in storage order.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let b = &config.backbone;
        let c = b.base_channels;
        let (k, _) = b.stem();
        let mut out = vec![
            ("stem.weight".to_string(), vec![c, b.in_channels, k, k]),
            ("stem.bias".to_string(), vec![c]),
        ];
        for i in 0..b.num_blocks {
            for conv in ["conv1", "conv2"] {
                out.push((format!("block{i}.{conv}.weight"), vec![c, c, 3, 3]));
                out.push((format!("block{i}.{conv}.bias"), vec![c]));
            }
        }
        match config.head {
            HeadVariant::Regression => {
                out.push(("head.weight".to_string(), vec![c, 2]));
                out.push(("head.bias".to_string(), vec![2]));
            }
            _ => {
                out.push(("head.weight".to_string(), vec![1, c, 1, 1]));
                out.push(("head.bias".to_string(), vec![1]));
            }
        }
        out
    }

    /// Seeded initialization: He-normal convolutions, residual branches scaled
    /// by `1/√num_blocks`, small head weights, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.backbone.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let residual_gain = 1.0 / (config.backbone.num_blocks.max(1) as f64).sqrt();
        let params = Self::layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let values = if name.ends_with(".bias") {
                    vec![0.0; n]
                } else if name.starts_with("head.") {
                    let dist = Normal::new(0.0, 0.01).expect("finite std");
                    (0..n).map(|_| dist.sample(&mut rng) as f32).collect()
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let gain = if name.ends_with("conv2.weight") {
                        residual_gain
                    } else {
                        1.0
                    };
                    he_normal(&mut rng, &shape, fan_in, gain)
                };
                ParamTensor {
                    name,
                    shape,
                    values,
                }
            })
            .collect();
        Ok(DetectionModel { config, params })
    }

    /// Rebuilds a model from stored buffers, checking them against the layout.
    pub fn from_params(config: ModelConfig, params: Vec<ParamTensor>) -> Result<Self> {
        config.backbone.validate()?;
        let layout = Self::layout(&config);
        ensure!(
            layout.len() == params.len(),
            Checkpoint,
            "expected {} parameter tensors, found {}",
            layout.len(),
            params.len()
        );
        for ((name, shape), p) in layout.iter().zip(&params) {
            ensure!(
                *name == p.name && *shape == p.shape,
                Checkpoint,
                "parameter {} {:?} does not match layout entry {name} {shape:?}",
                p.name,
                p.shape
            );
            ensure!(
                p.values.len() == shape.iter().product::<usize>(),
                Checkpoint,
                "parameter {name} has {} values",
                p.values.len()
            );
        }
        Ok(DetectionModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> HeadVariant {
        self.config.head
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Adds every parameter to `g`, as trainable leaves or as constants.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> Result<Vec<Tensor>> {
        self.params
            .iter()
            .map(|p| {
                let values = p.values.iter().map(|&v| T::cast(v as f64)).collect();
                if trainable {
                    g.param(&p.shape, values)
                } else {
                    g.input(&p.shape, values)
                }
            })
            .collect()
    }

    pub fn image_tensor<T: Real>(&self, g: &mut Graph<T>, image: &GrayImage) -> Result<Tensor> {
        let values = image.pixels.iter().map(|&v| T::cast(v as f64)).collect();
        g.input(&[1, image.height, image.width], values)
    }

    /// Graph-level feature extractor `C×H×W → c×(H/s)×(W/s)`.
    pub fn features_graph<T: Real>(&self, g: &mut Graph<T>, params: &[Tensor], image: Tensor) -> Result<Tensor> {
        let b = &self.config.backbone;
        let shape = g.shape(image).to_vec();
        ensure!(shape.len() == 3, Shape, "image tensor must be C×H×W, got {shape:?}");
        ensure!(
            shape[0] == b.in_channels,
            Shape,
            "model expects {} input channels, image has {}",
            b.in_channels,
            shape[0]
        );
        ensure!(
            shape[1] % b.output_stride == 0 && shape[2] % b.output_stride == 0,
            Shape,
            "image {}×{} is not divisible by output stride {}",
            shape[1],
            shape[2],
            b.output_stride
        );
        let (_, pad) = b.stem();
        let stem = g.conv2d(image, params[0], Some(params[1]), b.output_stride, pad)?;
        let mut x = g.relu(stem);
        for i in 0..b.num_blocks {
            let base = 2 + 4 * i;
            let h = g.conv2d(x, params[base], Some(params[base + 1]), 1, 1)?;
            let h = g.relu(h);
            let h = g.conv2d(h, params[base + 2], Some(params[base + 3]), 1, 1)?;
            let sum = g.add(x, h)?;
            x = g.relu(sum);
        }
        Ok(x)
    }

    /// Graph-level detection head applied to extractor output.
    pub fn head_graph<T: Real>(&self, g: &mut Graph<T>, params: &[Tensor], features: Tensor) -> Result<HeadOutput> {
        let c = self.config.backbone.base_channels;
        let shape = g.shape(features).to_vec();
        ensure!(
            shape.len() == 3 && shape[0] == c,
            Shape,
            "head expects {c}×h×w features, got {shape:?}"
        );
        let n = params.len();
        let (w, b) = (params[n - 2], params[n - 1]);
        match self.config.head {
            HeadVariant::Regression => {
                let pooled = g.avgpool2d(features, shape[1], shape[2])?;
                let row = g.reshape(pooled, &[1, c])?;
                let lin = g.matmul(row, w)?;
                let lin = g.reshape(lin, &[2])?;
                let lin = g.add(lin, b)?;
                Ok(HeadOutput::Point(g.sigmoid(lin)))
            }
            _ => {
                let map = g.conv2d(features, w, Some(b), 1, 0)?;
                Ok(HeadOutput::Logits(g.reshape(map, &[shape[1], shape[2]])?))
            }
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &[Tensor], image: Tensor) -> Result<HeadOutput> {
        let f = self.features_graph(g, params, image)?;
        self.head_graph(g, params, f)
    }

    /// Runs the extractor on one image.
    pub fn extract_features(&self, image: &GrayImage) -> Result<FeatureMap> {
        let mut g = Graph::<f32>::new();
        let params = self.bind(&mut g, false)?;
        let x = self.image_tensor(&mut g, image)?;
        let f = self.features_graph(&mut g, &params, x)?;
        let s = g.shape(f);
        Ok(FeatureMap {
            shape: [s[0], s[1], s[2]],
            values: g.value(f).to_vec(),
        })
    }

    /// Runs the head on extracted features of an `image_dims` image.
    pub fn head_forward(&self, features: &FeatureMap, image_dims: (usize, usize)) -> Result<HeadPrediction> {
        let mut g = Graph::<f32>::new();
        let params = self.bind(&mut g, false)?;
        let f = g.input(&features.shape, features.values.clone())?;
        let out = self.head_graph(&mut g, &params, f)?;
        self.finish(&mut g, out, image_dims)
    }

    fn finish(&self, g: &mut Graph<f32>, out: HeadOutput, image_dims: (usize, usize)) -> Result<HeadPrediction> {
        let (img_h, img_w) = (image_dims.0 as f64, image_dims.1 as f64);
        match out {
            HeadOutput::Point(t) => {
                let v = g.value(t);
                // keep the point strictly inside the image even if the sigmoid saturates
                let x = (v[0] as f64 * img_w).clamp(0.0, img_w - 1e-3);
                let y = (v[1] as f64 * img_h).clamp(0.0, img_h - 1e-3);
                Ok(HeadPrediction::Point(PredictedPoint { x, y, score: f64::NAN }))
            }
            HeadOutput::Logits(t) => {
                let shape = g.shape(t).to_vec();
                let kind = self.config.head.activation().expect("map head");
                let act = match kind {
                    ActivationKind::Sigmoid => g.sigmoid(t),
                    ActivationKind::SpatialSoftmax => spatial_softmax(g, t)?,
                    ActivationKind::Logit => t,
                };
                Ok(HeadPrediction::Map(ActivationMap {
                    h: shape[0],
                    w: shape[1],
                    output_stride: self.config.backbone.output_stride,
                    kind,
                    scores: g.value(act).to_vec(),
                }))
            }
        }
    }

    /// Full inference: point estimate plus the activation map for map heads.
    pub fn predict(&self, image: &GrayImage) -> Result<Prediction> {
        let mut g = Graph::<f32>::new();
        let params = self.bind(&mut g, false)?;
        let x = self.image_tensor(&mut g, image)?;
        let out = self.forward(&mut g, &params, x)?;
        Ok(match self.finish(&mut g, out, image.dims())? {
            HeadPrediction::Point(point) => Prediction { point, map: None },
            HeadPrediction::Map(map) => Prediction {
                point: decode_argmax(&map, image.dims()),
                map: Some(map),
            },
        })
    }
}
