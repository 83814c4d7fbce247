use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::adam::{adam_step, AdamConfig};
use crate::data::SliceTriplet;
use crate::error::{Error, Result};
use crate::loss::{combined_loss, combined_loss_grad, LossWeights};
use crate::metrics::{binarize_plane, mask_dice, BinaryMask, DEFAULT_THRESHOLD};
use crate::network::{save_checkpoint, Network};
use crate::real::Real;
use crate::rng::SplitMix64;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss_weights: LossWeights,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 4, adam: AdamConfig::default(), loss_weights: LossWeights::default(), seed: 0 }
    }
}

impl TrainConfig {
    /// Fifteen epochs at learning rate 3e-3. At the full-scale rate of 1e-4
    /// fifteen epochs leave the small network well short of convergence.
    pub fn desk() -> Self {
        let adam = AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() };
        Self { epochs: 15, adam, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let w = self.loss_weights;
        if w.dice < 0.0 || w.boundary < 0.0 {
            return Err(Error::Config(format!("loss weights must be non-negative, got {w:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean of per-batch training losses.
    pub train_loss: f64,
    /// Mean of per-batch validation losses, eval mode.
    pub val_loss: f64,
    /// Mean per-slice Dice of binarized validation predictions.
    pub val_dice: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub epochs: Vec<EpochLog>,
    /// Index into `epochs` of the first minimum of `val_loss`.
    pub best: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl RunLog {
    pub fn best_epoch(&self) -> Option<&EpochLog> {
        self.best.map(|i| &self.epochs[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_dice\n");
        for e in &self.epochs {
            // 17 significant digits: round-trips an f64 exactly
            writeln!(s, "{},{:.17e},{:.17e},{:.17e}", e.epoch, e.train_loss, e.val_loss, e.val_dice).unwrap();
        }
        s
    }
}

/// Stacks triplets into an `(N, 3, H, W)` input and `(N, 1, H, W)` target.
pub fn stack_batch<R: Real>(items: &[&SliceTriplet]) -> Result<(Tensor4<R>, Tensor4<R>)> {
    let inputs: Vec<&Tensor4<f32>> = items.iter().map(|t| &t.input).collect();
    let targets: Vec<&Tensor4<f32>> = items.iter().map(|t| &t.target).collect();
    Ok((Tensor4::stack_batch(&inputs)?.cast(), Tensor4::stack_batch(&targets)?.cast()))
}

/// Validation pass in eval mode: `(mean batch loss, mean slice dice)`.
pub fn validate<R: Real>(
    net: &Network<R>,
    val: &[SliceTriplet],
    batch_size: usize,
    weights: LossWeights,
) -> Result<(f64, f64)> {
    if val.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut loss = 0.0;
    let mut dice = 0.0;
    let mut batches = 0;
    let refs: Vec<&SliceTriplet> = val.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (x, y) = stack_batch::<R>(chunk)?;
        let p = net.infer(&x)?;
        loss += combined_loss(&y, &p, weights)?.total;
        batches += 1;
        let [_, _, h, w] = p.dims();
        for b in 0..p.batch() {
            let pred = binarize_plane(p.plane(b, 0), h, w, DEFAULT_THRESHOLD);
            let truth = binarize_plane(y.plane(b, 0), h, w, DEFAULT_THRESHOLD);
            dice += mask_dice(&truth, &pred)?;
        }
    }
    Ok((loss / batches as f64, dice / val.len() as f64))
}

/// Trains in place. Saves a checkpoint to `checkpoint` whenever validation
/// loss strictly improves, and leaves the network holding the best
/// parameters when it returns. `on_epoch` sees each epoch as it finishes.
pub fn train_with<R: Real>(
    net: &mut Network<R>,
    train_set: &[SliceTriplet],
    val_set: &[SliceTriplet],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<RunLog> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut rng = SplitMix64::keyed(cfg.seed, "epoch-shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = RunLog { checkpoint: checkpoint.map(Path::to_path_buf), ..Default::default() };
    let mut best: Option<(f64, Vec<Vec<R>>)> = None;
    let mut step = 0u64;
    net.zero_grads();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&SliceTriplet> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (x, y) = stack_batch::<R>(&items)?;
            let p = net.forward_train(&x)?;
            let (loss, grad) = combined_loss_grad(&y, &p, cfg.loss_weights)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite { epoch, batch: bi, value: loss.total });
            }
            net.backward(&grad)?;
            step += 1;
            adam_step(net.params_mut(), &cfg.adam, step)?;
            total += loss.total;
            batches += 1;
        }
        let (val_loss, val_dice) = validate(net, val_set, cfg.batch_size, cfg.loss_weights)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite { epoch, batch: 0, value: val_loss });
        }
        let entry = EpochLog { epoch, train_loss: total / batches as f64, val_loss, val_dice };
        log.epochs.push(entry);
        on_epoch(&entry);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, net.params().iter().map(|p| p.value.clone()).collect()));
            log.best = Some(log.epochs.len() - 1);
            if let Some(path) = checkpoint {
                save_checkpoint(net, path)?;
            }
        }
    }
    if let Some((_, values)) = best {
        for (p, v) in net.params_mut().iter_mut().zip(values) {
            p.value = v;
        }
    }
    Ok(log)
}

pub fn train<R: Real>(
    net: &mut Network<R>,
    train_set: &[SliceTriplet],
    val_set: &[SliceTriplet],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<RunLog> {
    train_with(net, train_set, val_set, cfg, checkpoint, |_| {})
}

/// Binarized predictions for each triplet, in order.
pub fn predict_masks<R: Real>(net: &Network<R>, items: &[&SliceTriplet], batch_size: usize) -> Result<Vec<BinaryMask>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size.max(1)) {
        let (x, _) = stack_batch::<R>(chunk)?;
        let p = net.infer(&x)?;
        let [_, _, h, w] = p.dims();
        out.extend((0..p.batch()).map(|b| binarize_plane(p.plane(b, 0), h, w, DEFAULT_THRESHOLD)));
    }
    Ok(out)
}
