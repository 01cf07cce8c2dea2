use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;

use super::config::PoolingVariant;
use super::network::{BatchSide, EmbedderModel, Mode, SideInput};
use crate::autodiff::{ema_update, Adam, AdamConfig, Graph, NodeId};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng;
use crate::tensor::Tensor;

/// One labelled training utterance with the side inputs its model needs.
#[derive(Clone, Copy, Debug)]
pub struct TrainingUtterance<'a> {
    pub features: &'a FeatureMatrix,
    pub speaker: usize,
    pub side: SideInput<'a>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Frames per training chunk; a batch uses the shortest of this and its
    /// shortest utterance.
    pub chunk_frames: usize,
    pub adam: AdamConfig,
    /// Learning-rate multiplier applied after `patience` epochs without a
    /// validation improvement.
    pub lr_decay: f64,
    pub patience: usize,
    pub min_learning_rate: f64,
    /// Utterances per speaker held out for validation.
    pub validation_per_speaker: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            chunk_frames: 200,
            adam: AdamConfig::default(),
            lr_decay: 0.5,
            patience: 2,
            min_learning_rate: 1e-6,
            validation_per_speaker: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingReport {
    /// Loss of the first batch before any update.
    pub initial_loss: f64,
    /// Mean training loss of each epoch.
    pub train_loss: Vec<f64>,
    /// Mean validation loss after each epoch (empty without held-out data).
    pub validation_loss: Vec<f64>,
    /// Learning rate used in each epoch.
    pub learning_rates: Vec<f64>,
}

fn stack_side(model: &EmbedderModel, batch: &[&TrainingUtterance<'_>]) -> Result<BatchSide> {
    let pool = &model.config().pooling;
    let mut side = BatchSide::default();
    match pool.variant {
        PoolingVariant::BaumWelchAttention => {
            let mut data = Vec::with_capacity(batch.len() * pool.stats_components * pool.stats_dim);
            for u in batch {
                let s = u.side.stats.ok_or(Error::MissingInput("Baum-Welch statistics"))?;
                if s.num_components() != pool.stats_components || s.dim() != pool.stats_dim {
                    return Err(Error::ModelMismatch(format!(
                        "{} x {} statistics for a {} x {} model",
                        s.num_components(),
                        s.dim(),
                        pool.stats_components,
                        pool.stats_dim
                    )));
                }
                data.extend_from_slice(s.first_order());
            }
            side.stats = Some(Tensor::new([batch.len(), pool.stats_components, pool.stats_dim], data)?);
        }
        PoolingVariant::IvectorAttention => {
            let mut data = Vec::with_capacity(batch.len() * pool.ivector_dim);
            for u in batch {
                data.extend_from_slice(u.side.ivector.ok_or(Error::MissingInput("i-vector"))?);
            }
            side.ivectors = Some(Tensor::new([batch.len(), pool.ivector_dim], data)?);
        }
        _ => {}
    }
    Ok(side)
}

/// Training-mode mean cross-entropy of a batch of equal-length utterances,
/// with dropout masks drawn from `seed`. Returns the graph and its loss node
/// so callers can differentiate with respect to the model parameters.
pub fn batch_loss(model: &EmbedderModel, batch: &[TrainingUtterance<'_>], seed: u64) -> Result<(Graph, NodeId)> {
    let first = batch.first().ok_or(Error::Empty("batch_loss"))?;
    let (t, dim) = (first.features.num_frames(), first.features.dim());
    if batch.iter().any(|u| u.features.num_frames() != t || u.features.dim() != dim) {
        return Err(Error::InvalidArgument("batch utterances must share length and dimension".into()));
    }
    let refs: Vec<&TrainingUtterance<'_>> = batch.iter().collect();
    let side = stack_side(model, &refs)?;
    let frames: Vec<f64> = batch.iter().flat_map(|u| u.features.frames().data().iter().copied()).collect();
    let labels: Vec<usize> = batch.iter().map(|u| u.speaker).collect();
    let mut rng = rng::seeded(seed);
    let mut g = Graph::new();
    let x = g.constant(Tensor::new([batch.len(), t, dim], frames)?)?;
    let fw = model.forward(&mut g, x, &side, Mode::Train { rng: &mut rng })?;
    let loss = g.softmax_cross_entropy(fw.logits, &labels)?;
    Ok((g, loss))
}

/// Splits utterance indices into training and validation sets, holding out
/// the last `per_speaker` utterances of every speaker that keeps at least
/// two for training.
fn split(data: &[TrainingUtterance<'_>], per_speaker: usize) -> (Vec<usize>, Vec<usize>) {
    let speakers: BTreeSet<usize> = data.iter().map(|u| u.speaker).collect();
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for s in speakers {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| data[i].speaker == s).collect();
        let held = if idx.len() >= per_speaker + 2 { per_speaker } else { 0 };
        let cut = idx.len() - held;
        train.extend_from_slice(&idx[..cut]);
        valid.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    (train, valid)
}

fn validation_loss(model: &EmbedderModel, data: &[TrainingUtterance<'_>], valid: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in valid {
        let u = &data[i];
        let batch = [u];
        let side = stack_side(model, &batch)?;
        let mut g = Graph::new();
        let frames = u.features.frames().clone();
        let t = frames.shape()[0];
        let x = g.constant(frames.reshape(&[1, t, u.features.dim()])?)?;
        let fw = model.forward(&mut g, x, &side, Mode::Infer)?;
        let loss = g.softmax_cross_entropy(fw.logits, &[u.speaker])?;
        total += g.value(loss).item()?;
    }
    Ok(total / valid.len() as f64)
}

/// Trains the network with Adam on softmax cross-entropy over speakers,
/// using random fixed-length chunks, dropout and L2 weight decay; the
/// learning rate decays on validation plateaus.
pub fn train_embedder(
    mut model: EmbedderModel,
    data: &[TrainingUtterance<'_>],
    config: &TrainConfig,
) -> Result<(EmbedderModel, TrainingReport)> {
    if data.is_empty() {
        return Err(Error::Empty("train_embedder"));
    }
    let classes = model.config().num_speakers;
    let speakers: BTreeSet<usize> = data.iter().map(|u| u.speaker).collect();
    if speakers.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least two speakers".into()));
    }
    if let Some(&label) = speakers.iter().find(|&&s| s >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if config.batch_size < 2 || config.chunk_frames == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 2 and chunks nonempty".into()));
    }
    if data.iter().any(|u| u.features.is_empty()) {
        return Err(Error::Empty("train_embedder: empty utterance"));
    }
    let (train, valid) = split(data, config.validation_per_speaker);
    if train.len() < 2 {
        return Err(Error::InvalidArgument("too few training utterances".into()));
    }
    let mut rng = rng::seeded(config.seed);
    let mut adam = Adam::new(config.adam, model.params());
    let momentum = model.config().bn_momentum;
    let mut report = TrainingReport::default();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut order = train.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&TrainingUtterance<'_>> = chunk.iter().map(|&i| &data[i]).collect();
            let t = batch.iter().map(|u| u.features.num_frames()).min().unwrap().min(config.chunk_frames);
            let dim = batch[0].features.dim();
            let mut frames = Vec::with_capacity(batch.len() * t * dim);
            for u in &batch {
                let start = rng.random_range(0..=u.features.num_frames() - t);
                frames.extend_from_slice(&u.features.frames().data()[start * dim..(start + t) * dim]);
            }
            let labels: Vec<usize> = batch.iter().map(|u| u.speaker).collect();
            let side = stack_side(&model, &batch)?;
            let mut g = Graph::new();
            let x = g.constant(Tensor::new([batch.len(), t, dim], frames)?)?;
            let fw = model.forward(&mut g, x, &side, Mode::Train { rng: &mut rng })?;
            let loss = g.softmax_cross_entropy(fw.logits, &labels)?;
            let value = g.value(loss).item()?;
            if epoch == 0 && steps == 0 {
                report.initial_loss = value;
            }
            let grads = g.backward(loss)?;
            adam.step(model.params_mut(), &grads);
            for (prefix, node) in &fw.batchnorms {
                let (mean, var) = g.batch_stats(*node).expect("training-mode batch norm");
                let store = model.params_mut();
                let mid = store.find(&format!("{prefix}.mean")).expect("running mean");
                ema_update(store.get_mut(mid).value.data_mut(), mean, momentum);
                let vid = store.find(&format!("{prefix}.var")).expect("running variance");
                ema_update(store.get_mut(vid).value.data_mut(), var, momentum);
            }
            epoch_loss += value;
            steps += 1;
        }
        let train_loss = epoch_loss / steps.max(1) as f64;
        report.train_loss.push(train_loss);
        report.learning_rates.push(adam.config.learning_rate);
        let monitored = if valid.is_empty() {
            train_loss
        } else {
            let v = validation_loss(&model, data, &valid)?;
            report.validation_loss.push(v);
            v
        };
        debug!("epoch {epoch}: train loss {train_loss:.4}, monitored {monitored:.4}, lr {}", adam.config.learning_rate);
        if monitored < best {
            best = monitored;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                adam.config.learning_rate = (adam.config.learning_rate * config.lr_decay).max(config.min_learning_rate);
                stale = 0;
            }
        }
    }
    Ok((model, report))
}
