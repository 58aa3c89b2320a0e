//! Training loop, optimizers and checkpoints.

mod checkpoint;
mod optim;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor};
use crate::error::{ensure, Error, Result};
use crate::evalkit::{precision_auc, RELATIVE_DELTA};
use crate::ingest::{GrayImage, SampleRecord};
use crate::losses::{balanced_bce_loss, mse_point_loss, spatial_softmax_nll, LossValue};
use crate::nn::{encode_target, BackboneConfig, DetectionModel, HeadOutput, HeadVariant, ModelConfig, ParamTensor};
use crate::synthgen::SyntheticScene;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adam_step, sgd_step, AdamParams, OptimizerKind, OptimizerState};

/// Largest horizontal shift applied when `horizontal_jitter` is on.
const JITTER_PX: i64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub head_variant: HeadVariant,
    pub backbone: BackboneConfig,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub horizontal_jitter: bool,
    /// Relative threshold of the validation precision AUC used for model selection.
    pub val_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamParams::default();
        TrainConfig {
            head_variant: HeadVariant::SpatialSoftmax,
            backbone: BackboneConfig::default(),
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            horizontal_jitter: false,
            val_delta: RELATIVE_DELTA,
        }
    }
}

impl TrainConfig {
    pub fn for_head(head_variant: HeadVariant) -> Self {
        TrainConfig {
            head_variant,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            InvalidArgument,
            "learning_rate must be a non-negative number"
        );
        ensure!(self.batch_size >= 1, InvalidArgument, "batch_size must be at least 1");
        ensure!(
            (0.0..1.0).contains(&self.momentum)
                && (0.0..1.0).contains(&self.beta1)
                && (0.0..1.0).contains(&self.beta2),
            InvalidArgument,
            "momentum and Adam betas must lie in [0, 1)"
        );
        ensure!(self.eps > 0.0, InvalidArgument, "eps must be positive");
        ensure!(self.val_delta > 0.0, InvalidArgument, "val_delta must be positive");
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            head: self.head_variant,
        }
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// An image with its ground-truth point in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub point: (f64, f64),
}

impl Sample {
    pub fn new(image: GrayImage, point: Option<(f64, f64)>, case_id: &str) -> Result<Self> {
        let point = point
            .ok_or_else(|| Error::InvalidArgument(format!("case {case_id} has no ground-truth point")))?;
        let (h, w) = image.dims();
        ensure!(
            point.0 >= 0.0 && point.0 < w as f64 && point.1 >= 0.0 && point.1 < h as f64,
            InvalidTarget,
            "case {case_id}: point {point:?} outside {h}×{w} image"
        );
        Ok(Sample { image, point })
    }

    pub fn from_scene(scene: &SyntheticScene) -> Result<Self> {
        Sample::new(scene.image.clone(), scene.record.point, &scene.record.case_id)
    }

    pub fn from_record(record: &SampleRecord, image: GrayImage) -> Result<Self> {
        ensure!(
            image.dims() == record.image_dims,
            Shape,
            "case {}: image is {:?}, record says {:?}",
            record.case_id,
            image.dims(),
            record.image_dims
        );
        Sample::new(image, record.point, &record.case_id)
    }

    /// Copy shifted right by `dx` pixels with edge replication.
    fn shifted(&self, dx: i64) -> Sample {
        let (h, w) = self.image.dims();
        let mut pixels = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w as i64 {
                let src = (c - dx).clamp(0, w as i64 - 1) as usize;
                pixels.push(self.image.get(r, src));
            }
        }
        let x = (self.point.0 + dx as f64).clamp(0.0, w as f64 - 1e-3);
        Sample {
            image: GrayImage {
                height: h,
                width: w,
                pixels,
            },
            point: (x, self.point.1),
        }
    }
}

/// Head-appropriate loss of `model` on one sample, built on `g`.
pub fn sample_loss<T: Real>(
    model: &DetectionModel,
    g: &mut Graph<T>,
    params: &[Tensor],
    sample: &Sample,
) -> Result<LossValue> {
    let x = model.image_tensor(g, &sample.image)?;
    let (h, w) = sample.image.dims();
    match model.forward(g, params, x)? {
        HeadOutput::Point(p) => mse_point_loss(g, p, [sample.point.0 / w as f64, sample.point.1 / h as f64]),
        HeadOutput::Logits(z) => {
            let dims = (g.shape(z)[0], g.shape(z)[1]);
            let target = encode_target(sample.point, dims, model.config().backbone.output_stride)?;
            if model.head() == HeadVariant::Pixelwise {
                let p = g.sigmoid(z);
                balanced_bce_loss(g, p, &target)
            } else {
                spatial_softmax_nll(g, z, &target)
            }
        }
    }
}

/// Mean per-sample loss without gradient tracking.
pub fn mean_loss(model: &DetectionModel, samples: &[Sample]) -> Result<f64> {
    ensure!(!samples.is_empty(), InvalidArgument, "no samples");
    let mut g = Graph::<f32>::new();
    let mut total = 0.0;
    for s in samples {
        g.reset();
        let params = model.bind(&mut g, false)?;
        total += sample_loss(model, &mut g, &params, s)?.value(&g);
    }
    Ok(total / samples.len() as f64)
}

/// Precision AUC of relative errors at `delta`.
pub fn precision_on(model: &DetectionModel, samples: &[Sample], delta: f64) -> Result<f64> {
    let errors = samples
        .iter()
        .map(|s| {
            let pred = model.predict(&s.image)?.point;
            let (h, w) = s.image.dims();
            Ok((pred.x - s.point.0).hypot(pred.y - s.point.1) / (h as f64).hypot(w as f64))
        })
        .collect::<Result<Vec<f64>>>()?;
    precision_auc(&errors, delta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, measured before each update.
    pub train_loss: f64,
    pub val_precision_auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_precision_auc: f64,
    pub params: Vec<ParamTensor>,
}

/// Complete training state: enough to resume exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Parameters after the last completed epoch.
    pub model: DetectionModel,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochRecord>,
    /// Parameters from the epoch with the best validation precision.
    pub best: Option<BestSnapshot>,
}

impl Checkpoint {
    /// Freshly initialized state before any epoch.
    pub fn initial(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = DetectionModel::new(config.model_config(), config.seed)?;
        let sizes: Vec<usize> = model.params().iter().map(|p| p.values.len()).collect();
        Ok(Checkpoint {
            optimizer: OptimizerState::new(config.optimizer, &sizes),
            config,
            epoch: 0,
            model,
            history: Vec::new(),
            best: None,
        })
    }

    /// The best-validation model, or the latest one before any validation.
    pub fn best_model(&self) -> Result<DetectionModel> {
        match &self.best {
            Some(b) => DetectionModel::from_params(self.config.model_config(), b.params.clone()),
            None => Ok(self.model.clone()),
        }
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 is left to parameter initialization
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn check_sets(train: &[Sample], val: &[Sample]) -> Result<()> {
    ensure!(!train.is_empty(), InvalidArgument, "training set is empty");
    ensure!(!val.is_empty(), InvalidArgument, "validation set is empty");
    Ok(())
}

/// Runs one epoch of mini-batch updates; returns the mean pre-update loss.
fn run_epoch(ckpt: &mut Checkpoint, train: &[Sample], g: &mut Graph<f32>) -> Result<f64> {
    let cfg = ckpt.config.clone();
    let epoch = ckpt.epoch + 1;
    let mut rng = epoch_rng(cfg.seed, ckpt.epoch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let shifts: Vec<i64> = if cfg.horizontal_jitter {
        order.iter().map(|_| rng.random_range(-JITTER_PX..=JITTER_PX)).collect()
    } else {
        vec![0; order.len()]
    };
    let sizes: Vec<usize> = ckpt.model.params().iter().map(|p| p.values.len()).collect();
    let mut total = 0.0;
    for (batch, batch_shifts) in order.chunks(cfg.batch_size).zip(shifts.chunks(cfg.batch_size)) {
        let mut grads: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        for (&i, &dx) in batch.iter().zip(batch_shifts) {
            let jittered;
            let sample = if dx != 0 {
                jittered = train[i].shifted(dx);
                &jittered
            } else {
                &train[i]
            };
            g.reset();
            let params = ckpt.model.bind(g, true)?;
            let loss = sample_loss(&ckpt.model, g, &params, sample)?;
            let value = loss.value(g);
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            total += value;
            g.backward(loss.scalar)?;
            for (acc, &p) in grads.iter_mut().zip(&params) {
                if let Some(gp) = g.grad(p) {
                    for (a, &d) in acc.iter_mut().zip(gp) {
                        *a += d;
                    }
                }
            }
        }
        let scale = 1.0 / batch.len() as f32;
        for acc in &mut grads {
            for a in acc.iter_mut() {
                *a *= scale;
            }
        }
        let mut values: Vec<Vec<f32>> = ckpt
            .model
            .params_mut()
            .iter_mut()
            .map(|p| std::mem::take(&mut p.values))
            .collect();
        let stepped = ckpt
            .optimizer
            .step(&mut values, &grads, cfg.learning_rate, cfg.momentum, cfg.adam());
        for (p, v) in ckpt.model.params_mut().iter_mut().zip(values) {
            p.values = v;
        }
        stepped?;
        if ckpt.model.params().iter().any(|p| p.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
    }
    ckpt.epoch = epoch;
    Ok(total / train.len() as f64)
}

/// Continues training until `ckpt.config.epochs` epochs are complete,
/// calling `on_epoch` after each.
pub fn train_epochs(
    ckpt: &mut Checkpoint,
    train: &[Sample],
    val: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<()> {
    check_sets(train, val)?;
    ckpt.config.validate()?;
    let mut g = Graph::<f32>::new();
    while ckpt.epoch < ckpt.config.epochs {
        let train_loss = run_epoch(ckpt, train, &mut g)?;
        let val_auc = precision_on(&ckpt.model, val, ckpt.config.val_delta)?;
        let rec = EpochRecord {
            epoch: ckpt.epoch,
            train_loss,
            val_precision_auc: val_auc,
        };
        ckpt.history.push(rec);
        if ckpt.best.as_ref().map_or(true, |b| val_auc >= b.val_precision_auc) {
            ckpt.best = Some(BestSnapshot {
                epoch: ckpt.epoch,
                val_precision_auc: val_auc,
                params: ckpt.model.params().to_vec(),
            });
        }
        on_epoch(&rec);
    }
    Ok(())
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(cfg: TrainConfig, train_set: &[Sample], val_set: &[Sample]) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::initial(cfg)?;
    train_epochs(&mut ckpt, train_set, val_set, |_| {})?;
    Ok(ckpt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverfitReport {
    pub initial_loss: f64,
    /// Mean loss over the subset after each epoch.
    pub losses: Vec<f64>,
    /// First epoch whose loss fell below 10% of the initial loss.
    pub reached_at: Option<usize>,
}

/// Trains on `samples` alone until the loss drops below a tenth of its
/// initial value or `max_epochs` pass.
pub fn overfit(cfg: TrainConfig, samples: &[Sample], max_epochs: usize) -> Result<OverfitReport> {
    ensure!(!samples.is_empty(), InvalidArgument, "no samples");
    let mut ckpt = Checkpoint::initial(TrainConfig {
        epochs: max_epochs,
        ..cfg
    })?;
    let initial_loss = mean_loss(&ckpt.model, samples)?;
    let mut g = Graph::<f32>::new();
    let mut losses = Vec::new();
    let mut reached_at = None;
    while ckpt.epoch < max_epochs {
        run_epoch(&mut ckpt, samples, &mut g)?;
        let loss = mean_loss(&ckpt.model, samples)?;
        losses.push(loss);
        if loss < 0.1 * initial_loss {
            reached_at = Some(ckpt.epoch);
            break;
        }
    }
    Ok(OverfitReport {
        initial_loss,
        losses,
        reached_at,
    })
}
