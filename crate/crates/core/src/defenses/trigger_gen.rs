//! Data-free trigger-generation defense.
//!
//! Each round the server
//! 1. trains a conditional generator whose image for category `c` looks
//!    ambiguous to the old global model but is confidently `c` for the new
//!    aggregate (knowledge extraction, producing the set `I`);
//! 2. trains a second generator for additive patterns that push every other
//!    extracted image towards `c` while pulling `I_c` away from it (trigger
//!    filtering, producing the set `T`);
//! 3. drops every client model that classifies some `T_c` as `c` with
//!    confidence above `ρ`, and averages the rest (model filtering).
//!
//! All discriminator outputs are softmax probabilities.

use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, Graph, Tensor};
use crate::error::{Error, Result};
use crate::flcore::{fedavg_aggregate, ClientUpdate};
use crate::nn::{
    sample_latent, sgd_step, Classifier, ClassifierSpec, Generator, GeneratorSpec, MomentumState,
    ParamVector, SgdConfig,
};
use crate::seed;

use super::{FilterReport, TriggerHit, Verdict};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenTrainConfig {
    pub epochs: usize,
    /// Gradient steps per epoch.
    pub steps_per_epoch: usize,
    /// Balance between the std and max terms during knowledge extraction.
    pub gamma_extract: f64,
    pub gamma_filter: f64,
    pub lambda_filter: f64,
    pub lr: f64,
    pub momentum: f64,
    pub rho: f64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Initial output-layer bias of both generators.
    pub output_bias: f64,
    /// Run model filtering on the stage-1 images directly (ablation).
    pub skip_trigger_filtering: bool,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        GenTrainConfig {
            epochs: 10,
            steps_per_epoch: 20,
            gamma_extract: 0.9,
            gamma_filter: 0.8,
            lambda_filter: 0.1,
            lr: 0.5,
            momentum: 0.9,
            rho: 0.5,
            latent_dim: 64,
            hidden: vec![256, 512],
            output_bias: -2.0,
            skip_trigger_filtering: false,
        }
    }
}

impl GenTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.gamma_extract) || !open(self.gamma_filter) {
            return Err(Error::Config("γ must lie in (0, 1)".into()));
        }
        if !(self.lambda_filter > 0.0 && self.gamma_filter + self.lambda_filter < 1.0) {
            return Err(Error::Config("λ must be > 0 with γ + λ < 1".into()));
        }
        if !open(self.rho) {
            return Err(Error::Config(format!("ρ must lie in (0, 1), got {}", self.rho)));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("generator epochs and steps must be ≥ 1".into()));
        }
        if !self.output_bias.is_finite() {
            return Err(Error::Config("generator output bias must be finite".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent dimension must be ≥ 1".into()));
        }
        self.optimizer()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn optimizer(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: 0.0,
            epochs: self.epochs,
            batch_size: 1,
        }
    }

    pub fn generator_spec(&self, classifier: &ClassifierSpec) -> GeneratorSpec {
        GeneratorSpec {
            latent: self.latent_dim,
            classes: classifier.classes,
            height: classifier.height,
            width: classifier.width,
            channels: classifier.channels,
            hidden: self.hidden.clone(),
            output_bias: self.output_bias,
        }
    }
}

/// One generated image per category plus the noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedImageSet {
    /// `C × H × W × Ch`, values in `[0, 1]`.
    pub images: Tensor,
    pub z: Tensor,
}

impl GeneratedImageSet {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, c: usize) -> &[f64] {
        let p = self.images.len() / self.len();
        &self.images.data()[c * p..(c + 1) * p]
    }

    fn as_matrix(&self) -> Tensor {
        let n = self.len();
        Tensor::from_parts(vec![n, self.images.len() / n], self.images.data().to_vec())
    }
}

/// Generator output together with the mean loss of every training epoch.
#[derive(Clone, Debug)]
pub struct StageOutput {
    pub set: GeneratedImageSet,
    pub epoch_losses: Vec<f64>,
}

fn check_pair(old: &Classifier, agg: &Classifier) -> Result<()> {
    if old.spec() != agg.spec() {
        return Err(Error::Shape("old and aggregated models have different specs".into()));
    }
    Ok(())
}

/// Shared optimisation loop: `build` records the loss for the current
/// generator output on the graph and returns it.
fn train_generator(
    spec: GeneratorSpec,
    cfg: &GenTrainConfig,
    seed: u64,
    mut build: impl FnMut(&mut Graph, crate::autodiff::Var) -> Result<crate::autodiff::Var>,
) -> Result<StageOutput> {
    let classes = spec.classes;
    let labels: Vec<usize> = (0..classes).collect();
    let mut gen = Generator::init(spec, seed::derive_seed(seed, "generator-init", 0, 0))?;
    let mut noise_rng = seed::rng_for(seed, "generator-noise", 0, 0);
    let z = sample_latent(classes, cfg.latent_dim, &mut noise_rng)?;
    let opt = cfg.optimizer();
    let mut state = MomentumState::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let mut g = Graph::new();
            let (bound, imgs) = gen.forward_graph(&mut g, &z, &labels)?;
            let loss = build(&mut g, imgs)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::NonFinite("generator loss".into()));
            }
            total += value;
            let grads = g.backward(loss)?;
            let flat = gen.net().collect_grads(&bound, &grads)?;
            sgd_step(gen.net_mut().params_mut(), &flat, &opt, &mut state)?;
        }
        epoch_losses.push(total / cfg.steps_per_epoch as f64);
    }

    let images = gen.forward(&z, &labels)?;
    Ok(StageOutput {
        set: GeneratedImageSet { images, z },
        epoch_losses,
    })
}

/// Stage 1. Loss, summed over categories `c`:
/// `γ·std(D1(img_c)) + (1−γ)·(1 − D2(img_c)[c])`.
pub fn knowledge_extraction(
    g_old: &Classifier,
    g_agg: &Classifier,
    cfg: &GenTrainConfig,
    seed: u64,
) -> Result<StageOutput> {
    check_pair(g_old, g_agg)?;
    let classes = g_old.spec().classes;
    let gamma = cfg.gamma_extract;
    let diag: Vec<usize> = (0..classes).collect();
    train_generator(
        cfg.generator_spec(g_old.spec()),
        cfg,
        seed::derive_seed(seed, "stage1", 0, 0),
        |g, imgs| {
            let d1 = g_old.net().bind(g, false);
            let p1 = g_old.net().forward(g, &d1, imgs)?;
            let std = g.population_std(p1)?;
            let std_sum = g.sum(std)?;

            let d2 = g_agg.net().bind(g, false);
            let p2 = g_agg.net().forward(g, &d2, imgs)?;
            let own = g.gather(p2, &diag)?;
            let own_sum = g.sum(own)?;

            // γ·Σ std + (1−γ)·(C − Σ own)
            let a = g.scale(std_sum, gamma)?;
            let b = g.scale(own_sum, -(1.0 - gamma))?;
            let loss = g.add(a, b)?;
            g.add_scalar(loss, (1.0 - gamma) * classes as f64)
        },
    )
}

/// Stage 2. For every category `c`, the candidate pattern is added to each
/// `I_k` with `k ≠ c` and subtracted from `I_c` (results clamped to
/// `[0, 1]`); the loss for `c` is
/// `γ·mean_k std(D1(I'_k)) + λ·mean_{k≠c}(1 − D2(I'_k)[c]) + (1−γ−λ)·D2(I'_c)[c]`.
pub fn trigger_filtering(
    g_old: &Classifier,
    g_agg: &Classifier,
    extracted: &GeneratedImageSet,
    cfg: &GenTrainConfig,
    seed: u64,
) -> Result<StageOutput> {
    check_pair(g_old, g_agg)?;
    let classes = g_old.spec().classes;
    if extracted.len() != classes {
        return Err(Error::Shape(format!(
            "extracted set has {} images for {classes} categories",
            extracted.len()
        )));
    }
    let (gamma, lambda) = (cfg.gamma_filter, cfg.lambda_filter);
    let rows = classes * classes;
    let pixels = g_old.spec().pixels();

    // Row c·C + k of the overlapped batch holds I'_k for candidate c.
    let base = {
        let i = extracted.as_matrix();
        let mut data = Vec::with_capacity(rows * pixels);
        for _ in 0..classes {
            data.extend_from_slice(i.data());
        }
        Tensor::from_parts(vec![rows, pixels], data)
    };
    let signs = {
        let mut data = vec![0.0; rows * classes];
        for c in 0..classes {
            for k in 0..classes {
                data[(c * classes + k) * classes + c] = if k == c { -1.0 } else { 1.0 };
            }
        }
        Tensor::from_parts(vec![rows, classes], data)
    };
    let column: Vec<usize> = (0..rows).map(|r| r / classes).collect();
    let weights = {
        let off = -lambda / (classes - 1) as f64;
        let on = 1.0 - gamma - lambda;
        let data = (0..rows)
            .map(|r| if r / classes == r % classes { on } else { off })
            .collect();
        Tensor::from_parts(vec![rows], data)
    };

    train_generator(
        cfg.generator_spec(g_old.spec()),
        cfg,
        seed::derive_seed(seed, "stage2", 0, 0),
        |g, imgs| {
            let s = g.constant(signs.clone());
            let signed = g.matmul(s, imgs)?;
            let b = g.constant(base.clone());
            let shifted = g.add(b, signed)?;
            let overlapped = g.clamp(shifted, 0.0, 1.0)?;

            let d1 = g_old.net().bind(g, false);
            let p1 = g_old.net().forward(g, &d1, overlapped)?;
            let std = g.population_std(p1)?;
            let std_sum = g.sum(std)?;
            let std_term = g.scale(std_sum, gamma / classes as f64)?;

            let d2 = g_agg.net().bind(g, false);
            let p2 = g_agg.net().forward(g, &d2, overlapped)?;
            let toward = g.gather(p2, &column)?;
            let w = g.constant(weights.clone());
            let weighted = g.mul(toward, w)?;
            let prob_term = g.sum(weighted)?;

            let loss = g.add(std_term, prob_term)?;
            g.add_scalar(loss, lambda * classes as f64)
        },
    )
}

/// Result of model filtering: positions (in the input slice) of the kept
/// updates and the per-client verdicts.
#[derive(Clone, Debug)]
pub struct ModelFilterResult {
    pub kept: Vec<usize>,
    pub report: FilterReport,
}

/// Stage 3. A model is removed as soon as, for some category `c`, its
/// prediction on `T_c` is `c` with probability above `rho`.
pub fn model_filtering(
    updates: &[ClientUpdate],
    spec: &ClassifierSpec,
    triggers: &GeneratedImageSet,
    rho: f64,
) -> Result<ModelFilterResult> {
    if triggers.len() != spec.classes {
        return Err(Error::Shape(format!(
            "trigger set has {} images for {} categories",
            triggers.len(),
            spec.classes
        )));
    }
    let mut kept = Vec::new();
    let mut entries = Vec::with_capacity(updates.len());
    for (pos, u) in updates.iter().enumerate() {
        let model = Classifier::unflatten(spec, u.params.clone())?;
        let probs = model.forward(&triggers.images)?;
        let hit = (0..spec.classes).find_map(|c| {
            let row = probs.row(c);
            (argmax(row) == c && row[c] > rho).then_some(TriggerHit {
                category: c,
                confidence: row[c],
            })
        });
        match hit {
            Some(h) => entries.push((u.client, Verdict::Removed(Some(h)))),
            None => {
                kept.push(pos);
                entries.push((u.client, Verdict::Kept));
            }
        }
    }
    let fallback = kept.is_empty();
    Ok(ModelFilterResult {
        kept,
        report: FilterReport { entries, fallback },
    })
}

/// Artifacts of one trigger-generation defense invocation.
#[derive(Clone, Debug)]
pub struct TriggerGenOutcome {
    pub global: ParamVector,
    pub report: FilterReport,
    pub extracted: StageOutput,
    pub triggers: StageOutput,
}

/// Runs all three stages on one round's updates. When every update is
/// removed the old global model is kept unchanged.
pub fn defend_trigger_generation(
    g_old: &Classifier,
    updates: &[ClientUpdate],
    cfg: &GenTrainConfig,
    seed: u64,
) -> Result<TriggerGenOutcome> {
    cfg.validate()?;
    let aggregated = fedavg_aggregate(updates)?;
    let g_agg = Classifier::unflatten(g_old.spec(), aggregated)?;
    let extracted = knowledge_extraction(g_old, &g_agg, cfg, seed)?;
    let triggers = if cfg.skip_trigger_filtering {
        extracted.clone()
    } else {
        trigger_filtering(g_old, &g_agg, &extracted.set, cfg, seed)?
    };
    let filtered = model_filtering(updates, g_old.spec(), &triggers.set, cfg.rho)?;
    let global = if filtered.kept.is_empty() {
        g_old.flatten()
    } else {
        let kept: Vec<ClientUpdate> = filtered.kept.iter().map(|&i| updates[i].clone()).collect();
        fedavg_aggregate(&kept)?
    };
    Ok(TriggerGenOutcome {
        global,
        report: filtered.report,
        extracted,
        triggers,
    })
}
