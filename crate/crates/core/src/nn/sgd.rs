use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Classifier, ParamVector};
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_epochs() -> usize {
    1
}

fn default_batch() -> usize {
    32
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be ≥ 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Velocity buffer for momentum SGD.
#[derive(Clone, Debug, Default)]
pub struct MomentumState {
    velocity: Vec<f64>,
}

impl MomentumState {
    pub fn new() -> Self {
        MomentumState::default()
    }
}

/// `v ← m·v + g + decay·w;  w ← w − lr·v`
pub fn sgd_step(
    params: &mut ParamVector,
    grads: &[f64],
    config: &SgdConfig,
    state: &mut MomentumState,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("sgd gradients".into()));
    }
    if state.velocity.len() != params.len() {
        state.velocity = vec![0.0; params.len()];
    }
    for ((w, &g), v) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grads)
        .zip(state.velocity.iter_mut())
    {
        *v = config.momentum * *v + g + config.weight_decay * *w;
        *w -= config.lr * *v;
    }
    params.check_finite()
}

fn gather_rows(images: &Tensor, idx: &[usize]) -> Tensor {
    let d = images.len() / images.shape()[0];
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&images.data()[i * d..(i + 1) * d]);
    }
    Tensor::from_parts(vec![idx.len(), d], data)
}

/// Runs `config.epochs` epochs of shuffled mini-batch SGD with cross-entropy
/// loss. `images` has one image per leading index. Returns the mean batch
/// loss of each epoch.
pub fn train_classifier(
    model: &mut Classifier,
    images: &Tensor,
    labels: &[usize],
    config: &SgdConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    config.validate()?;
    if images.shape()[0] != labels.len() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.shape()[0],
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut state = MomentumState::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let x = model.batch_matrix(&gather_rows(images, chunk))?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let net = model.net();
            let bound = net.bind(&mut g, true);
            let xv = g.constant(x);
            let probs = net.forward(&mut g, &bound, xv)?;
            let loss = g.cross_entropy(probs, &y)?;
            total += g.value(loss).item()?;
            batches += 1;
            let grads = g.backward(loss)?;
            let flat = net.collect_grads(&bound, &grads)?;
            sgd_step(model.net_mut().params_mut(), &flat, config, &mut state)?;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(epoch_losses)
}
