//! Training objectives for the three detection heads, and the spatial softmax.

use crate::autodiff::{Graph, Real, Tensor};
use crate::error::{ensure, Error, Result};
use crate::nn::TargetGrid;

/// Probability clamp applied before the logarithms of the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// A graph-attached scalar loss plus a few named diagnostics.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub scalar: Tensor,
    pub diagnostics: Vec<(&'static str, f64)>,
}

impl LossValue {
    pub fn value<T: Real>(&self, g: &Graph<T>) -> f64 {
        g.value(self.scalar)[0].widen()
    }

    pub fn diagnostic(&self, name: &str) -> Option<f64> {
        self.diagnostics.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

fn max_value<T: Real>(g: &Graph<T>, t: Tensor) -> Result<T> {
    let v = g.value(t);
    ensure!(!v.is_empty(), InvalidArgument, "empty score map");
    ensure!(
        v.iter().all(|x| x.is_finite()),
        Domain,
        "non-finite logits"
    );
    Ok(v.iter().copied().fold(T::neg_infinity(), T::max))
}

fn check_grid<T: Real>(g: &Graph<T>, t: Tensor, target: &TargetGrid) -> Result<()> {
    let n = g.value(t).len();
    ensure!(
        n == target.h * target.w,
        Shape,
        "map has {n} cells, target grid is {}×{}",
        target.h,
        target.w
    );
    Ok(())
}

/// Softmax taken jointly over every position of a score map.
///
/// The maximum logit is subtracted first; it is a constant of the graph, so
/// the result and its gradient are those of the unshifted softmax.
pub fn spatial_softmax<T: Real>(g: &mut Graph<T>, logits: Tensor) -> Result<Tensor> {
    let m = max_value(g, logits)?;
    let shifted = g.shift(logits, -m);
    let e = g.exp(shifted);
    let total = g.sum(e);
    g.div(e, total)
}

/// Negative log-likelihood of the target cell under the spatial softmax,
/// averaged over the `h·w` cells of the map.
///
/// Computed as `(logsumexp(z) − z_target) / (h·w)`, which stays finite for any
/// finite logits.
pub fn spatial_softmax_nll<T: Real>(
    g: &mut Graph<T>,
    logits: Tensor,
    target: &TargetGrid,
) -> Result<LossValue> {
    check_grid(g, logits, target)?;
    let hot = target.hot_index()?;
    let cells = target.h * target.w;
    let m = max_value(g, logits)?;
    let shifted = g.shift(logits, -m);
    let e = g.exp(shifted);
    let total = g.sum(e);
    let lse = g.log(total)?;
    let shape = g.shape(logits).to_vec();
    let mask = g.input(&shape, target.values.iter().map(|&v| T::cast(v as f64)).collect())?;
    let picked = g.mul(shifted, mask)?;
    let target_logit = g.sum(picked);
    let nll = g.sub(lse, target_logit)?;
    let scalar = g.scale(nll, T::one() / T::cast(cells as f64));
    let target_prob = (g.value(shifted)[hot].widen() - g.value(lse)[0].widen()).exp();
    Ok(LossValue {
        scalar,
        diagnostics: vec![("target_prob", target_prob)],
    })
}

/// Pixel-wise binary cross-entropy with the positive and negative cell sets
/// each carrying half of the total weight.
///
/// `probs` are post-sigmoid scores; they are clamped to `[BCE_EPS, 1 − BCE_EPS]`.
pub fn balanced_bce_loss<T: Real>(
    g: &mut Graph<T>,
    probs: Tensor,
    target: &TargetGrid,
) -> Result<LossValue> {
    check_grid(g, probs, target)?;
    ensure!(
        target.values.iter().all(|&v| v == 0.0 || v == 1.0),
        InvalidTarget,
        "target must be binary"
    );
    let n_pos = target.positives();
    let n_neg = target.values.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidTarget(format!(
            "balanced BCE needs both classes, got {n_pos} positive and {n_neg} negative cells"
        )));
    }
    let (w_pos, w_neg) = (0.5 / n_pos as f64, 0.5 / n_neg as f64);
    let shape = g.shape(probs).to_vec();
    let pos_weights: Vec<T> = target
        .values
        .iter()
        .map(|&v| T::cast(if v == 1.0 { w_pos } else { 0.0 }))
        .collect();
    let neg_weights: Vec<T> = target
        .values
        .iter()
        .map(|&v| T::cast(if v == 1.0 { 0.0 } else { w_neg }))
        .collect();

    let p = g.clamp(probs, T::cast(BCE_EPS), T::cast(1.0 - BCE_EPS));
    let log_p = g.log(p)?;
    let one = g.scalar(T::one());
    let q = g.sub(one, p)?;
    let log_q = g.log(q)?;
    let wp = g.input(&shape, pos_weights)?;
    let wn = g.input(&shape, neg_weights)?;
    let pos_terms = g.mul(log_p, wp)?;
    let neg_terms = g.mul(log_q, wn)?;
    let pos = g.sum(pos_terms);
    let neg = g.sum(neg_terms);
    let both = g.add(pos, neg)?;
    let scalar = g.scale(both, -T::one());

    let pos_part = -g.value(pos)[0].widen();
    let total = g.value(scalar)[0].widen();
    let share = if total > 0.0 { pos_part / total } else { 0.5 };
    Ok(LossValue {
        scalar,
        diagnostics: vec![("positive_share", share)],
    })
}

/// `((x̂ − x)² + (ŷ − y)²) / 2` between normalized coordinates.
pub fn mse_point_loss<T: Real>(g: &mut Graph<T>, pred: Tensor, target: [f64; 2]) -> Result<LossValue> {
    ensure!(
        g.value(pred).len() == 2,
        Shape,
        "point prediction must have 2 values, got shape {:?}",
        g.shape(pred)
    );
    ensure!(
        target.iter().all(|v| (0.0..=1.0).contains(v)),
        InvalidTarget,
        "normalized target {target:?} outside [0,1]²"
    );
    let shape = g.shape(pred).to_vec();
    let t = g.input(&shape, target.iter().map(|&v| T::cast(v)).collect())?;
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq);
    let scalar = g.scale(s, T::cast(0.5));
    let pv = g.value(pred);
    let dist = ((pv[0].widen() - target[0]).powi(2) + (pv[1].widen() - target[1]).powi(2)).sqrt();
    Ok(LossValue {
        scalar,
        diagnostics: vec![("distance", dist)],
    })
}
