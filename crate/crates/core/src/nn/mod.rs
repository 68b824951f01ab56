//! Model definitions, initialization, training and the flat parameter view.
//!
//! Every network here is a fully connected stack. A model's parameters live
//! in a single [`ParamVector`] ordered layer by layer, weight (row-major,
//! `fan_in × fan_out`) before bias, so two models of the same spec always
//! agree coordinate-for-coordinate.

mod checkpoint;
mod params;
mod sgd;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softmax_rows, Gradients, Graph, Tensor, Var};
use crate::autodiff::gemm;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use params::{Layout, LayoutEntry, ParamVector};
pub use sgd::{sgd_step, train_classifier, MomentumState, SgdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softmax,
    Sigmoid,
}

/// Shape of a fully connected network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: OutputActivation,
}

impl MlpSpec {
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive: {:?}",
                self.widths()
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::for_widths(&self.widths())
    }
}

/// Image classifier: `H·W·Ch → hidden… → C` with softmax output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl ClassifierSpec {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "classifier needs at least 2 classes, got {}",
                self.classes
            )));
        }
        self.mlp().validate()
    }

    pub fn mlp(&self) -> MlpSpec {
        MlpSpec {
            input: self.pixels(),
            hidden: self.hidden.clone(),
            output: self.classes,
            activation: OutputActivation::Softmax,
        }
    }
}

/// Conditional generator: `[z ‖ onehot(label)] → hidden… → H·W·Ch` with a
/// sigmoid output so pixels stay in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub latent: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub hidden: Vec<usize>,
    /// Initial value of every output-layer bias; negative values start the
    /// generator from dark images (`sigmoid(b)` per pixel).
    pub output_bias: f64,
}

impl GeneratorSpec {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn mlp(&self) -> MlpSpec {
        MlpSpec {
            input: self.latent + self.classes,
            hidden: self.hidden.clone(),
            output: self.pixels(),
            activation: OutputActivation::Sigmoid,
        }
    }
}

/// A fully connected network and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParamVector,
}

/// Graph handles for one binding of an [`Mlp`]'s parameters.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut rng = seed::rng(seed);
        let mut values = vec![0.0; layout.total()];
        for entry in layout.entries() {
            if entry.is_bias() {
                continue;
            }
            let (fan_in, fan_out) = entry.dims();
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut values[entry.range()] {
                *v = rng.random_range(-a..a);
            }
        }
        Ok(Mlp {
            spec,
            params: ParamVector::new(values),
        })
    }

    pub fn from_params(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        let expected = spec.layout().total();
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "parameter vector has {} values, spec needs {expected}",
                params.len()
            )));
        }
        params.check_finite()?;
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn layout(&self) -> Layout {
        self.spec.layout()
    }

    /// Places the parameters on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let layout = self.layout();
        let mut layers = Vec::new();
        for pair in layout.entries().chunks(2) {
            let (w, b) = (&pair[0], &pair[1]);
            let wt = Tensor::from_parts(
                vec![w.dims().0, w.dims().1],
                self.params.as_slice()[w.range()].to_vec(),
            );
            let bt = Tensor::from_parts(vec![b.len()], self.params.as_slice()[b.range()].to_vec());
            let (wv, bv) = if trainable {
                (g.param(wt), g.param(bt))
            } else {
                (g.constant(wt), g.constant(bt))
            };
            layers.push((wv, bv));
        }
        BoundMlp { layers }
    }

    /// Forward pass of an `n × input` matrix through the bound parameters.
    pub fn forward(&self, g: &mut Graph, bound: &BoundMlp, x: Var) -> Result<Var> {
        let mut h = x;
        let last = bound.layers.len() - 1;
        for (i, &(w, b)) in bound.layers.iter().enumerate() {
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, b)?;
            h = if i < last {
                g.relu(z)?
            } else {
                match self.spec.activation {
                    OutputActivation::Softmax => g.softmax(z)?,
                    OutputActivation::Sigmoid => g.sigmoid(z)?,
                }
            };
        }
        Ok(h)
    }

    /// Gradient of every parameter, flattened in layout order.
    pub fn collect_grads(&self, bound: &BoundMlp, grads: &Gradients) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.params.len());
        for &(w, b) in &bound.layers {
            for v in [w, b] {
                let t = grads
                    .get(v)
                    .ok_or_else(|| Error::Shape("parameter missing from gradients".into()))?;
                out.extend_from_slice(t.data());
            }
        }
        Ok(out)
    }

    /// Graph-free forward pass, numerically identical to [`Mlp::forward`].
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = x.as_matrix_dims();
        if d != self.spec.input {
            return Err(Error::Shape(format!(
                "input width {d}, network expects {}",
                self.spec.input
            )));
        }
        let layout = self.layout();
        let entries = layout.entries();
        let params = self.params.as_slice();
        let mut h = x.data().to_vec();
        let mut width = d;
        for (li, pair) in entries.chunks(2).enumerate() {
            let (w, b) = (&pair[0], &pair[1]);
            let out_w = w.dims().1;
            let mut z = vec![0.0; n * out_w];
            gemm(n, width, out_w, &h, &params[w.range()], &mut z);
            let bias = &params[b.range()];
            for row in z.chunks_mut(out_w) {
                for (v, bb) in row.iter_mut().zip(bias) {
                    *v += bb;
                }
            }
            if li + 1 < entries.len() / 2 {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            } else {
                z = match self.spec.activation {
                    OutputActivation::Softmax => softmax_rows(&z, out_w),
                    OutputActivation::Sigmoid => z.into_iter().map(sigmoid).collect(),
                };
            }
            h = z;
            width = out_w;
        }
        Tensor::new(vec![n, width], h)
    }
}

/// Image classifier with softmax outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    spec: ClassifierSpec,
    net: Mlp,
}

impl Classifier {
    pub fn init(spec: ClassifierSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = Mlp::init(spec.mlp(), seed)?;
        Ok(Classifier { spec, net })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn flatten(&self) -> ParamVector {
        self.net.params.clone()
    }

    pub fn unflatten(spec: &ClassifierSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        let net = Mlp::from_params(spec.mlp(), params)?;
        Ok(Classifier {
            spec: spec.clone(),
            net,
        })
    }

    /// Reshapes a batch of images (`n × H × W × Ch` or `n × pixels`) into
    /// the `n × pixels` matrix the network consumes.
    pub fn batch_matrix(&self, images: &Tensor) -> Result<Tensor> {
        let p = self.spec.pixels();
        let ok = match images.shape() {
            [_, d] => *d == p,
            [_, h, w, c] => (*h, *w, *c) == (self.spec.height, self.spec.width, self.spec.channels),
            [d] => *d == p,
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!(
                "images {:?} do not match classifier input {}x{}x{}",
                images.shape(),
                self.spec.height,
                self.spec.width,
                self.spec.channels
            )));
        }
        let n = images.len() / p;
        images.reshape(vec![n, p])
    }

    /// Class probabilities, one row per image.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let x = self.batch_matrix(images)?;
        self.net.predict(&x)
    }

    pub fn predict_labels(&self, images: &Tensor) -> Result<Vec<usize>> {
        Ok(self.forward(images)?.argmax_rows())
    }
}

/// `[z ‖ onehot(label)]` rows for the given labels.
pub fn generator_input(z: &Tensor, labels: &[usize], classes: usize) -> Result<Tensor> {
    let (rows, latent) = match z.shape() {
        [r, l] => (*r, *l),
        s => return Err(Error::Shape(format!("latent noise must be rank-2, got {s:?}"))),
    };
    if rows != labels.len() {
        return Err(Error::Shape(format!(
            "{rows} noise vectors for {} labels",
            labels.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * (latent + classes));
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!("label {l} ≥ {classes}")));
        }
        data.extend_from_slice(z.row(r));
        data.extend((0..classes).map(|c| if c == l { 1.0 } else { 0.0 }));
    }
    Tensor::new(vec![rows, latent + classes], data)
}

/// Conditional image generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    spec: GeneratorSpec,
    net: Mlp,
}

impl Generator {
    pub fn init(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        if spec.classes < 2 || spec.latent == 0 {
            return Err(Error::InvalidArgument(
                "generator needs ≥ 2 classes and a positive latent size".into(),
            ));
        }
        if !spec.output_bias.is_finite() {
            return Err(Error::InvalidArgument("generator output bias must be finite".into()));
        }
        let mut net = Mlp::init(spec.mlp(), seed)?;
        let pixels = spec.pixels();
        let params = net.params_mut().as_mut_slice();
        let n = params.len();
        params[n - pixels..].fill(spec.output_bias);
        Ok(Generator { spec, net })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.spec.classes {
            return Err(Error::Shape(format!(
                "generator expects one label per category ({}), got {}",
                self.spec.classes,
                labels.len()
            )));
        }
        Ok(())
    }

    /// One image per label, shaped `C × H × W × Ch`.
    pub fn forward(&self, z: &Tensor, labels: &[usize]) -> Result<Tensor> {
        self.check_labels(labels)?;
        let x = generator_input(z, labels, self.spec.classes)?;
        let out = self.net.predict(&x)?;
        out.reshape(vec![
            labels.len(),
            self.spec.height,
            self.spec.width,
            self.spec.channels,
        ])
    }

    /// Graph version of [`Generator::forward`]; returns the bound
    /// parameters and a `C × pixels` image matrix.
    pub fn forward_graph(&self, g: &mut Graph, z: &Tensor, labels: &[usize]) -> Result<(BoundMlp, Var)> {
        self.check_labels(labels)?;
        let x = g.constant(generator_input(z, labels, self.spec.classes)?);
        let bound = self.net.bind(g, true);
        let out = self.net.forward(g, &bound, x)?;
        Ok((bound, out))
    }
}

/// Standard-normal latent matrix of shape `rows × latent`.
pub fn sample_latent(rows: usize, latent: usize, rng: &mut Rng) -> Result<Tensor> {
    use rand_distr::{Distribution, StandardNormal};
    let data = (0..rows * latent)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::new(vec![rows, latent], data)
}
