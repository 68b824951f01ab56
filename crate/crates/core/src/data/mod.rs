//! Datasets, non-IID partitioning, triggers and poisoning.

mod idx;
mod partition;
mod synth;
mod trigger;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use idx::{load_idx, parse_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use partition::{dirichlet_partition, ClientShard};
pub use synth::{glyph_cells, synth_dataset, NOISE_AMPLITUDE};
pub use trigger::{poison_client_dataset, stamp_trigger, PoisonConfig, TriggerPixel, TriggerSpec};

/// Labeled images, `N × H × W × Ch`, pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Shape(format!(
                "dataset images must be N×H×W×Ch, got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument("dataset needs ≥ 2 classes".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {l} ≥ {classes} classes")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `(height, width, channels)`
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn pixels(&self) -> usize {
        let (h, w, c) = self.image_shape();
        h * w * c
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels();
        &self.images.data()[i * p..(i + 1) * p]
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Empty("dataset subset".into()));
        }
        let p = self.pixels();
        let mut data = Vec::with_capacity(indices.len() * p);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("index {i} ≥ {}", self.len())));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let (h, w, c) = self.image_shape();
        Ok(Dataset {
            images: Tensor::from_parts(vec![indices.len(), h, w, c], data),
            labels,
            classes: self.classes,
        })
    }

    /// First `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    pub(crate) fn from_parts(images: Tensor, labels: Vec<usize>, classes: usize) -> Dataset {
        Dataset {
            images,
            labels,
            classes,
        }
    }
}
