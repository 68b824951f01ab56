//! Main-task accuracy and attack success rate.

use crate::autodiff::Tensor;
use crate::data::{Dataset, TriggerSpec};
use crate::error::{Error, Result};
use crate::nn::Classifier;

/// Fraction of clean samples whose argmax prediction equals the label.
pub fn eval_main_accuracy(model: &Classifier, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set".into()));
    }
    let predicted = model.predict_labels(test.images())?;
    let correct = predicted
        .iter()
        .zip(test.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Fraction of non-target test samples that the model assigns to `target`
/// once the full trigger is stamped on them.
pub fn eval_attack_success_rate(
    model: &Classifier,
    test: &Dataset,
    trigger: &TriggerSpec,
    target: usize,
) -> Result<f64> {
    let shape = test.image_shape();
    trigger.validate_for(shape)?;
    let eligible: Vec<usize> = (0..test.len())
        .filter(|&i| test.labels()[i] != target)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Empty(format!(
            "no test samples with a label other than the target {target}"
        )));
    }
    let p = test.pixels();
    let mut data = Vec::with_capacity(eligible.len() * p);
    for &i in &eligible {
        let start = data.len();
        data.extend_from_slice(test.image(i));
        trigger.apply(&mut data[start..], shape);
    }
    let (h, w, c) = shape;
    let stamped = Tensor::new(vec![eligible.len(), h, w, c], data)?;
    let hits = model
        .predict_labels(&stamped)?
        .iter()
        .filter(|&&p| p == target)
        .count();
    Ok(hits as f64 / eligible.len() as f64)
}
