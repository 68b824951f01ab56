use std::ops::Range;

use crate::error::{Error, Result};

/// Flat, layout-ordered model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.0.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("parameter vector".into()))
        }
    }

    pub fn check_aligned(&self, other: &ParamVector) -> Result<()> {
        if self.len() == other.len() {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter layouts differ: {} vs {} values",
                self.len(),
                other.len()
            )))
        }
    }

    /// `self − other`
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_aligned(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self + s · other`
    pub fn add_scaled(&self, other: &ParamVector, s: f64) -> Result<ParamVector> {
        self.check_aligned(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect(),
        ))
    }

    pub fn squared_distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// One named tensor inside a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub layer: usize,
    pub name: &'static str,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn is_bias(&self) -> bool {
        self.name == "bias"
    }

    /// `(rows, cols)`; biases report `(1, len)`.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => unreachable!("layout entries are rank 1 or 2"),
        }
    }
}

/// Ordered `(layer, tensor-name)` index map of a parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
}

impl Layout {
    pub(crate) fn for_widths(widths: &[usize]) -> Layout {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (layer, pair) in widths.windows(2).enumerate() {
            let (i, o) = (pair[0], pair[1]);
            entries.push(LayoutEntry {
                layer,
                name: "weight",
                offset,
                shape: vec![i, o],
            });
            offset += i * o;
            entries.push(LayoutEntry {
                layer,
                name: "bias",
                offset,
                shape: vec![o],
            });
            offset += o;
        }
        Layout { entries }
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len())
    }

    /// `(layer, name, position within tensor)` of flat coordinate `k`.
    pub fn locate(&self, k: usize) -> Option<(usize, &'static str, usize)> {
        self.entries
            .iter()
            .find(|e| e.range().contains(&k))
            .map(|e| (e.layer, e.name, k - e.offset))
    }

    /// Canonical text form, used for checkpoint digests.
    pub fn describe(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
                format!("layer{}.{} {} @{}\n", e.layer, e.name, dims.join("x"), e.offset)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let l = Layout::for_widths(&[4, 3, 2]);
        assert_eq!(l.total(), 4 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(l.locate(0), Some((0, "weight", 0)));
        assert_eq!(l.locate(12), Some((0, "bias", 0)));
        assert_eq!(l.locate(15), Some((1, "weight", 0)));
        assert_eq!(l.locate(22), Some((1, "bias", 1)));
        assert_eq!(l.locate(23), None);
    }

    #[test]
    fn arithmetic_checks_alignment() {
        let a = ParamVector::new(vec![1.0, 2.0]);
        let b = ParamVector::new(vec![0.5, 0.5]);
        assert_eq!(a.sub(&b).unwrap().as_slice(), &[0.5, 1.5]);
        assert_eq!(a.add_scaled(&b, 2.0).unwrap().as_slice(), &[2.0, 3.0]);
        assert!(a.sub(&ParamVector::zeros(3)).is_err());
    }
}
