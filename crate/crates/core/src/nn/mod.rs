//! Detection model, targets and decoding.

mod decode;
mod model;
mod target;

pub use decode::{decode_argmax, map_confidence, ActivationKind, ActivationMap, PredictedPoint};
pub use model::{
    BackboneConfig, DetectionModel, FeatureMap, HeadOutput, HeadPrediction, HeadVariant, ModelConfig,
    ParamTensor, Prediction,
};
pub use target::{encode_target, TargetGrid};
