use serde::{Deserialize, Serialize};

/// Post-processing applied to a head's raw logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Logit,
    Sigmoid,
    SpatialSoftmax,
}

/// A 2-D score map at a known output stride.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub h: usize,
    pub w: usize,
    pub output_stride: usize,
    pub kind: ActivationKind,
    pub scores: Vec<f32>,
}

/// A point in image pixels with the head's confidence.
///
/// Regression heads have no confidence output; their `score` is NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictedPoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Row-major index of the largest score; ties resolve to the lowest index.
fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Centre of the highest-scoring cell, in image pixels.
///
/// Panics on an empty map.
pub fn decode_argmax(map: &ActivationMap, image_dims: (usize, usize)) -> PredictedPoint {
    assert!(!map.scores.is_empty(), "decode_argmax on an empty map");
    let best = argmax(&map.scores);
    let (row, col) = (best / map.w, best % map.w);
    let stride = map.output_stride as f64;
    let (img_h, img_w) = (image_dims.0 as f64, image_dims.1 as f64);
    let x = ((col as f64 + 0.5) * stride).min(img_w - 0.5);
    let y = ((row as f64 + 0.5) * stride).min(img_h - 0.5);
    PredictedPoint {
        x,
        y,
        score: map.scores[best] as f64,
    }
}

/// Largest post-activation score; the presence score of a map head.
pub fn map_confidence(map: &ActivationMap) -> f64 {
    assert!(!map.scores.is_empty(), "map_confidence on an empty map");
    map.scores[argmax(&map.scores)] as f64
}
