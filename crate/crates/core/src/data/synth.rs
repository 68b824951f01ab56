//! Synthetic glyph dataset for desk-scale experiments.
//!
//! The image is divided into a `g × g` grid of cells with
//! `g = ceil(sqrt(C + 1))`. Class `c` draws a plus-shaped cross centred in
//! cell `c` (row-major). The last cell, in the bottom-right corner, is never
//! used by any class; that is where the default trigger sits. Every pixel
//! then receives uniform noise in `[-0.2, 0.2]` and is clamped to `[0, 1]`.

use rand::Rng as _;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed;

pub const NOISE_AMPLITUDE: f64 = 0.2;

/// Pixel coordinates `(row, col)` of the glyph for class `c`.
pub fn glyph_cells(class: usize, classes: usize, height: usize, width: usize) -> Vec<(usize, usize)> {
    let g = ((classes + 1) as f64).sqrt().ceil() as usize;
    let cell_h = height / g;
    let cell_w = width / g;
    let (gr, gc) = (class / g, class % g);
    let cr = gr * cell_h + cell_h / 2;
    let cc = gc * cell_w + cell_w / 2;
    let arm = (cell_h.min(cell_w) / 2).saturating_sub(1).max(1);
    let mut cells = vec![(cr, cc)];
    for d in 1..=arm {
        if cr >= d {
            cells.push((cr - d, cc));
        }
        if cr + d < height {
            cells.push((cr + d, cc));
        }
        if cc >= d {
            cells.push((cr, cc - d));
        }
        if cc + d < width {
            cells.push((cr, cc + d));
        }
    }
    cells
}

/// `per_class` noisy glyph images for each of `classes` labels, ordered by
/// class. Deterministic in `seed`.
pub fn synth_dataset(
    classes: usize,
    per_class: usize,
    shape: (usize, usize, usize),
    seed: u64,
) -> Result<Dataset> {
    let (h, w, ch) = shape;
    if classes < 2 {
        return Err(Error::InvalidArgument("synthetic dataset needs ≥ 2 classes".into()));
    }
    if per_class == 0 {
        return Err(Error::InvalidArgument("per-class count must be ≥ 1".into()));
    }
    let g = ((classes + 1) as f64).sqrt().ceil() as usize;
    if h < 2 * g || w < 2 * g || ch == 0 {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w}x{ch} images are too small for {classes} glyph cells"
        )));
    }
    let mut rng = seed::rng(seed);
    let pixels = h * w * ch;
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        let mut glyph = vec![0.0; pixels];
        for (r, c) in glyph_cells(class, classes, h, w) {
            for k in 0..ch {
                glyph[(r * w + c) * ch + k] = 1.0;
            }
        }
        for _ in 0..per_class {
            data.extend(glyph.iter().map(|&v| {
                let noise: f64 = rng.random_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
                (v + noise).clamp(0.0, 1.0)
            }));
            labels.push(class);
        }
    }
    let images = Tensor::new(vec![n, h, w, ch], data)?;
    Dataset::new(images, labels, classes)
}
