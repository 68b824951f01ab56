use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerPixel {
    pub row: usize,
    pub col: usize,
    pub channel: usize,
    pub value: f64,
}

impl TriggerPixel {
    fn key(&self) -> (usize, usize, usize) {
        (self.row, self.col, self.channel)
    }
}

/// Backdoor pattern: explicit pixel assignments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub pixels: Vec<TriggerPixel>,
}

impl TriggerSpec {
    pub fn new(pixels: Vec<TriggerPixel>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::InvalidArgument("trigger has no pixels".into()));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(&p.value)) {
            return Err(Error::InvalidArgument(format!(
                "trigger value {} outside [0, 1]",
                p.value
            )));
        }
        let mut keys: Vec<_> = pixels.iter().map(TriggerPixel::key).collect();
        keys.sort_unstable();
        keys.dedup();
        if keys.len() != pixels.len() {
            return Err(Error::InvalidArgument("trigger assigns a pixel twice".into()));
        }
        Ok(TriggerSpec { pixels })
    }

    /// `size × size` solid block in the bottom-right corner, `margin` pixels
    /// from both edges, on every channel.
    pub fn corner_block(
        shape: (usize, usize, usize),
        size: usize,
        margin: usize,
        value: f64,
    ) -> Result<Self> {
        let (h, w, ch) = shape;
        if size == 0 || size + margin > h || size + margin > w {
            return Err(Error::InvalidArgument(format!(
                "{size}x{size} trigger with margin {margin} does not fit {h}x{w}"
            )));
        }
        let mut pixels = Vec::with_capacity(size * size * ch);
        for row in h - margin - size..h - margin {
            for col in w - margin - size..w - margin {
                for channel in 0..ch {
                    pixels.push(TriggerPixel {
                        row,
                        col,
                        channel,
                        value,
                    });
                }
            }
        }
        TriggerSpec::new(pixels)
    }

    /// `(row_min, col_min, row_max, col_max)`, inclusive.
    pub fn bounding_box(&self) -> (usize, usize, usize, usize) {
        let rows = self.pixels.iter().map(|p| p.row);
        let cols = self.pixels.iter().map(|p| p.col);
        (
            rows.clone().min().unwrap_or(0),
            cols.clone().min().unwrap_or(0),
            rows.max().unwrap_or(0),
            cols.max().unwrap_or(0),
        )
    }

    pub fn validate_for(&self, shape: (usize, usize, usize)) -> Result<()> {
        let (h, w, ch) = shape;
        match self
            .pixels
            .iter()
            .find(|p| p.row >= h || p.col >= w || p.channel >= ch)
        {
            Some(p) => Err(Error::InvalidArgument(format!(
                "trigger pixel ({}, {}, {}) outside {h}x{w}x{ch} image",
                p.row, p.col, p.channel
            ))),
            None => Ok(()),
        }
    }

    /// Overwrites the trigger pixels of one flat `H·W·Ch` image in place.
    /// The shape must already have been validated.
    pub fn apply(&self, image: &mut [f64], shape: (usize, usize, usize)) {
        let (_, w, ch) = shape;
        for p in &self.pixels {
            image[(p.row * w + p.col) * ch + p.channel] = p.value;
        }
    }
}

/// Stamps `trigger` onto a single image (`H × W × Ch`, or `1 × H × W × Ch`).
pub fn stamp_trigger(image: &Tensor, trigger: &TriggerSpec) -> Result<Tensor> {
    let shape = match image.shape() {
        [h, w, c] | [1, h, w, c] => (*h, *w, *c),
        s => return Err(Error::Shape(format!("expected a single H×W×Ch image, got {s:?}"))),
    };
    trigger.validate_for(shape)?;
    let mut data = image.data().to_vec();
    trigger.apply(&mut data, shape);
    Tensor::new(image.shape().to_vec(), data)
}

/// Data-poisoning policy of an attacker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoisonConfig {
    pub rate: f64,
    pub target: usize,
    pub trigger: TriggerSpec,
}

impl PoisonConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "poison rate must be in (0, 1], got {}",
                self.rate
            )));
        }
        if self.target >= classes {
            return Err(Error::InvalidArgument(format!(
                "target class {} ≥ {classes}",
                self.target
            )));
        }
        Ok(())
    }
}

/// Stamps and relabels `round(rate · n)` (at least one) samples chosen
/// without replacement among those whose label differs from the target.
/// All other samples are returned unchanged.
pub fn poison_client_dataset(shard: &Dataset, config: &PoisonConfig, seed: u64) -> Result<Dataset> {
    if shard.is_empty() {
        return Err(Error::Empty("poisoned shard".into()));
    }
    config.validate(shard.classes())?;
    let shape = shard.image_shape();
    config.trigger.validate_for(shape)?;

    let eligible: Vec<usize> = (0..shard.len())
        .filter(|&i| shard.labels()[i] != config.target)
        .collect();
    let wanted = ((config.rate * shard.len() as f64).round() as usize).max(1);
    let count = wanted.min(eligible.len());

    let mut rng = seed::rng(seed);
    let chosen = sample(&mut rng, eligible.len(), count);

    let p = shard.pixels();
    let mut data = shard.images().data().to_vec();
    let mut labels = shard.labels().to_vec();
    for k in chosen.iter() {
        let i = eligible[k];
        config.trigger.apply(&mut data[i * p..(i + 1) * p], shape);
        labels[i] = config.target;
    }
    let images = Tensor::new(shard.images().shape().to_vec(), data)?;
    Ok(Dataset::from_parts(images, labels, shard.classes()))
}
