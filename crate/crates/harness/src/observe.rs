//! Reproduces the motivating observations on one seed.
//!
//! A base model is trained centrally, then fine-tuned twice on the same
//! subset: once cleanly and once with poisoned samples. Knowledge extraction
//! and trigger filtering run between the base model (D1) and each branch
//! (D2). The poisoned branch's target-category pattern should carry the
//! backdoor: stamped onto clean images it drives the poisoned model, but not
//! the benign one, towards the target.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fltrigger_core::autodiff::Tensor;
use fltrigger_core::config::ExperimentConfig;
use fltrigger_core::data::{poison_client_dataset, Dataset, PoisonConfig};
use fltrigger_core::defenses::{knowledge_extraction, trigger_filtering, GeneratedImageSet};
use fltrigger_core::io::dump_pgm;
use fltrigger_core::metrics::{eval_attack_success_rate, eval_main_accuracy};
use fltrigger_core::nn::{train_classifier, Classifier, SgdConfig};
use fltrigger_core::seed::{derive_seed, rng_for};
use fltrigger_core::{Error, Result};
use rand::seq::index;

#[derive(Clone, Debug)]
pub struct ObserveOptions {
    /// Central training epochs of the base model.
    pub base_epochs: usize,
    /// Size of the subset both branches are fine-tuned on.
    pub finetune_samples: usize,
    /// Clean non-target test images the trigger is stamped onto.
    pub probes: usize,
}

impl Default for ObserveOptions {
    fn default() -> Self {
        ObserveOptions {
            base_epochs: 3,
            finetune_samples: 300,
            probes: 20,
        }
    }
}

/// Generated sets of one branch.
#[derive(Clone, Debug)]
pub struct BranchImages {
    pub extracted: GeneratedImageSet,
    pub triggers: GeneratedImageSet,
}

#[derive(Clone, Debug)]
pub struct BranchModel {
    pub model: Classifier,
    pub ma: f64,
    pub asr: f64,
    pub images: BranchImages,
}

#[derive(Clone, Debug)]
pub struct Observation {
    pub seed: u64,
    pub target: usize,
    pub rho: f64,
    pub base_ma: f64,
    pub benign: BranchModel,
    pub poisoned: BranchModel,
    /// Mean target probability of the poisoned model on the stamped probes.
    pub stamped_poisoned: f64,
    /// Mean target probability of the benign model on the same probes.
    pub stamped_benign: f64,
}

impl Observation {
    /// Poisoned model follows the recovered trigger, benign model does not.
    pub fn holds(&self) -> bool {
        self.stamped_poisoned > self.rho && self.stamped_benign < self.rho
    }
}

fn train_copy(base: &Classifier, data: &Dataset, sgd: &SgdConfig, seed: u64, purpose: &str) -> Result<Classifier> {
    let mut model = base.clone();
    let mut rng = rng_for(seed, purpose, 0, 0);
    train_classifier(&mut model, data.images(), data.labels(), sgd, &mut rng)?;
    Ok(model)
}

fn branch_images(base: &Classifier, branch: &Classifier, cfg: &ExperimentConfig, seed: u64) -> Result<BranchImages> {
    let gen = &cfg.defense.generator;
    let extracted = knowledge_extraction(base, branch, gen, seed)?.set;
    let triggers = trigger_filtering(base, branch, &extracted, gen, seed)?.set;
    Ok(BranchImages { extracted, triggers })
}

/// `clamp(x + pattern)` for every probe image, as one batch.
fn stamp(probes: &Dataset, pattern: &[f64]) -> Result<Tensor> {
    let mut data = probes.images().data().to_vec();
    for row in data.chunks_mut(pattern.len()) {
        for (x, t) in row.iter_mut().zip(pattern) {
            *x = (*x + t).clamp(0.0, 1.0);
        }
    }
    Tensor::new(probes.images().shape().to_vec(), data)
}

fn mean_prob(model: &Classifier, batch: &Tensor, class: usize) -> Result<f64> {
    let probs = model.forward(batch)?;
    let n = probs.rows();
    Ok((0..n).map(|i| probs.row(i)[class]).sum::<f64>() / n as f64)
}

pub fn observe(cfg: &ExperimentConfig, opts: &ObserveOptions) -> Result<Observation> {
    cfg.validate()?;
    if opts.base_epochs == 0 || opts.finetune_samples == 0 || opts.probes == 0 {
        return Err(Error::Config("observe epochs, subset and probe counts must be ≥ 1".into()));
    }
    let seed = cfg.seed;
    let target = cfg.attack.target;
    let (train, test) = cfg.dataset.load(seed)?;
    let trigger = cfg.trigger.build(train.image_shape())?;

    let init = Classifier::init(cfg.classifier_spec(&train), derive_seed(seed, "model-init", 0, 0))?;
    let base_sgd = SgdConfig {
        epochs: opts.base_epochs,
        ..cfg.training.clone()
    };
    let base = train_copy(&init, &train, &base_sgd, seed, "observe-base")?;

    let n = opts.finetune_samples.min(train.len());
    let mut rng = rng_for(seed, "observe-subset", 0, 0);
    let mut picked = index::sample(&mut rng, train.len(), n).into_vec();
    picked.sort_unstable();
    let subset = train.subset(&picked)?;
    let poisoned_subset = poison_client_dataset(
        &subset,
        &PoisonConfig {
            rate: cfg.attack.poison_rate,
            target,
            trigger: trigger.clone(),
        },
        derive_seed(seed, "poison", 0, 0),
    )?;

    // Both branches use the attacker's optimiser so that poisoning is the
    // only difference between them.
    let sgd = &cfg.attack.training;
    let benign_model = train_copy(&base, &subset, sgd, seed, "observe-benign")?;
    let poisoned_model = train_copy(&base, &poisoned_subset, sgd, seed, "observe-poisoned")?;

    let gen_seed = derive_seed(seed, "defense", 0, 0);
    let branch = |model: Classifier| -> Result<BranchModel> {
        Ok(BranchModel {
            ma: eval_main_accuracy(&model, &test)?,
            asr: eval_attack_success_rate(&model, &test, &trigger, target)?,
            images: branch_images(&base, &model, cfg, gen_seed)?,
            model,
        })
    };
    let benign = branch(benign_model)?;
    let poisoned = branch(poisoned_model)?;

    let eligible: Vec<usize> = (0..test.len()).filter(|&i| test.labels()[i] != target).collect();
    let k = opts.probes.min(eligible.len());
    let mut rng = rng_for(seed, "observe-probes", 0, 0);
    let mut chosen: Vec<usize> = index::sample(&mut rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    chosen.sort_unstable();
    let probes = test.subset(&chosen)?;
    let stamped = stamp(&probes, poisoned.images.triggers.image(target))?;

    Ok(Observation {
        seed,
        target,
        rho: cfg.defense.generator.rho,
        base_ma: eval_main_accuracy(&base, &test)?,
        stamped_poisoned: mean_prob(&poisoned.model, &stamped, target)?,
        stamped_benign: mean_prob(&benign.model, &stamped, target)?,
        benign,
        poisoned,
    })
}

/// `P(c | T_c)` for every category.
fn diagonal(model: &Classifier, set: &GeneratedImageSet) -> Result<Vec<f64>> {
    let probs = model.forward(&set.images)?;
    Ok((0..set.len()).map(|c| probs.row(c)[c]).collect())
}

fn fmt_row(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ")
}

pub fn render_report(obs: &Observation) -> Result<String> {
    let mut out = String::new();
    let w = &mut out;
    let t = obs.target;
    writeln!(w, "seed {}  target {t}  rho {}", obs.seed, obs.rho).ok();
    writeln!(w, "base model MA {:.4}", obs.base_ma).ok();
    for (name, b) in [("benign", &obs.benign), ("poisoned", &obs.poisoned)] {
        writeln!(w, "{name} branch MA {:.4} ASR {:.4}", b.ma, b.asr).ok();
    }
    writeln!(w).ok();
    writeln!(w, "cross inference, P(c | T_c) for c = 0..C:").ok();
    for (mname, m) in [("benign", &obs.benign), ("poisoned", &obs.poisoned)] {
        for (sname, s) in [("benign", &obs.benign), ("poisoned", &obs.poisoned)] {
            let d = diagonal(&m.model, &s.images.triggers)?;
            writeln!(w, "  {mname:>8} model on {sname:>8} T: {}", fmt_row(&d)).ok();
        }
    }
    writeln!(w).ok();
    writeln!(w, "poisoned T_{t} stamped onto clean non-target images, mean P({t}):").ok();
    writeln!(w, "  poisoned model {:.4}", obs.stamped_poisoned).ok();
    writeln!(w, "  benign model   {:.4}", obs.stamped_benign).ok();
    writeln!(w, "observation holds: {}", obs.holds()).ok();
    Ok(out)
}

pub const REPORT_FILE: &str = "report.txt";

/// Dumps every generated image as PGM and writes `report.txt` into `dir`.
pub fn write_observation(obs: &Observation, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, b) in [("benign", &obs.benign), ("poisoned", &obs.poisoned)] {
        for (stage, set) in [(1, &b.images.extracted), (2, &b.images.triggers)] {
            let s = set.images.shape();
            for c in 0..set.len() {
                let path = dir.join(format!("{name}_stage{stage}_cat{c}.pgm"));
                dump_pgm(set.image(c), (s[1], s[2], s[3]), &path)?;
            }
        }
    }
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, render_report(obs)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
