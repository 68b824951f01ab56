//! Adversarial client behaviours.
//!
//! * `multiple`: every selected adversary trains on poisoned data each round.
//! * `single`: one adversary that stays benign until the activation round,
//!   then submits a model-replacement update scaled by the number of
//!   selected clients.
//! * `dba`: adversaries poison with disjoint pieces of the trigger.
//! * `neurotoxin`: the poisoned delta is confined to the coordinates the
//!   previous global update changed least.

use serde::{Deserialize, Serialize};

use crate::data::{poison_client_dataset, Dataset, PoisonConfig, TriggerSpec};
use crate::error::{Error, Result};
use crate::flcore::{ClientUpdate, RoundContext};
use crate::nn::{train_classifier, Classifier, ParamVector, SgdConfig};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Multiple,
    Single,
    Dba,
    Neurotoxin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "default_kind")]
    pub kind: AttackKind,
    #[serde(default = "default_target")]
    pub target: usize,
    #[serde(default = "default_poison_rate")]
    pub poison_rate: f64,
    #[serde(default = "default_attacker_sgd")]
    pub training: SgdConfig,
    /// Model-replacement scale; `single` defaults to the selected-client
    /// count, the other kinds to 1.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default = "default_dba_parts")]
    pub dba_parts: usize,
    #[serde(default = "default_mask_ratio")]
    pub mask_ratio: f64,
    /// First round in which a `single` attacker poisons; defaults to the
    /// start of the last 10% of rounds.
    #[serde(default)]
    pub activation_round: Option<usize>,
}

fn default_kind() -> AttackKind {
    AttackKind::None
}

fn default_target() -> usize {
    2
}

fn default_poison_rate() -> f64 {
    0.5
}

fn default_dba_parts() -> usize {
    4
}

fn default_mask_ratio() -> f64 {
    0.25
}

/// MNIST attacker row: 10 local epochs at lr 0.05.
pub fn default_attacker_sgd() -> SgdConfig {
    SgdConfig {
        lr: 0.05,
        momentum: 0.9,
        weight_decay: 0.001,
        epochs: 10,
        batch_size: 32,
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: default_kind(),
            target: default_target(),
            poison_rate: default_poison_rate(),
            training: default_attacker_sgd(),
            scale: None,
            dba_parts: default_dba_parts(),
            mask_ratio: default_mask_ratio(),
            activation_round: None,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.target >= classes {
            return Err(Error::Config(format!(
                "attack target {} ≥ {classes} classes",
                self.target
            )));
        }
        if !(self.poison_rate > 0.0 && self.poison_rate <= 1.0) {
            return Err(Error::Config(format!(
                "poison rate must be in (0, 1], got {}",
                self.poison_rate
            )));
        }
        if let Some(s) = self.scale {
            if !(s >= 1.0) {
                return Err(Error::Config(format!("scale factor must be ≥ 1, got {s}")));
            }
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "mask ratio must be in (0, 1], got {}",
                self.mask_ratio
            )));
        }
        if self.kind == AttackKind::Dba && self.dba_parts < 2 {
            return Err(Error::Config("DBA needs at least 2 trigger parts".into()));
        }
        self.training.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn activation_round(&self, total_rounds: usize) -> usize {
        self.activation_round
            .unwrap_or_else(|| (total_rounds as f64 * 0.9).floor() as usize)
    }
}

/// What an adversarial client knows about itself.
#[derive(Clone, Debug)]
pub struct AdversaryProfile {
    pub config: AttackConfig,
    /// Ordinal among the adversaries (drives DBA part assignment).
    pub ordinal: usize,
    /// Full trigger; DBA adversaries poison with their part of it.
    pub trigger: TriggerSpec,
}

/// `G_old + s · (trained − G_old)`
pub fn scale_update(g_old: &ParamVector, trained: &ParamVector, s: f64) -> Result<ParamVector> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be finite and ≥ 0, got {s}")));
    }
    let delta = trained.sub(g_old)?;
    g_old.add_scaled(&delta, s)
}

/// Splits the trigger's pixels, in row-major `(row, col, channel)` order,
/// into `n_parts` contiguous runs whose sizes differ by at most one (larger
/// runs first).
pub fn dba_assign_subtriggers(trigger: &TriggerSpec, n_parts: usize) -> Result<Vec<TriggerSpec>> {
    if n_parts < 2 {
        return Err(Error::InvalidArgument("DBA needs at least 2 parts".into()));
    }
    let n = trigger.pixels.len();
    if n < n_parts {
        return Err(Error::InvalidArgument(format!(
            "trigger has {n} pixels, cannot split into {n_parts} parts"
        )));
    }
    let mut pixels = trigger.pixels.clone();
    pixels.sort_by_key(|p| (p.row, p.col, p.channel));
    let base = n / n_parts;
    let extra = n % n_parts;
    let mut parts = Vec::with_capacity(n_parts);
    let mut start = 0;
    for i in 0..n_parts {
        let len = base + usize::from(i < extra);
        parts.push(TriggerSpec::new(pixels[start..start + len].to_vec())?);
        start += len;
    }
    Ok(parts)
}

/// Keeps the `ceil(r · dim)` coordinates of `delta` whose reference
/// magnitude is smallest (ties by coordinate index) and zeroes the rest.
pub fn neurotoxin_project(delta: &ParamVector, reference: &ParamVector, r: f64) -> Result<ParamVector> {
    delta.check_aligned(reference)?;
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("mask ratio must be in (0, 1], got {r}")));
    }
    let dim = delta.len();
    let keep = ((r * dim as f64) - 1e-9).ceil().max(1.0) as usize;
    let keep = keep.min(dim);
    let refs = reference.as_slice();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| refs[a].abs().total_cmp(&refs[b].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; dim];
    for &i in &order[..keep] {
        out[i] = delta.as_slice()[i];
    }
    Ok(ParamVector::new(out))
}

/// Local training for an adversarial client: poisoned data, the attacker's
/// own hyperparameters, then the kind-specific post-processing.
pub fn adversarial_local_train(
    global: &Classifier,
    client: usize,
    shard: &Dataset,
    benign_training: &SgdConfig,
    adversary: &AdversaryProfile,
    ctx: &RoundContext,
) -> Result<ClientUpdate> {
    let cfg = &adversary.config;
    let mut rng = seed::rng_for(ctx.master_seed, "local-train", ctx.round as u64, client as u64);

    if cfg.kind == AttackKind::None
        || (cfg.kind == AttackKind::Single && ctx.round < cfg.activation_round(ctx.total_rounds))
    {
        let mut model = global.clone();
        train_classifier(&mut model, shard.images(), shard.labels(), benign_training, &mut rng)?;
        return ClientUpdate::new(client, model.flatten(), shard.len());
    }

    let trigger = match cfg.kind {
        AttackKind::Dba => {
            let parts = dba_assign_subtriggers(&adversary.trigger, cfg.dba_parts)?;
            parts[adversary.ordinal % parts.len()].clone()
        }
        _ => adversary.trigger.clone(),
    };
    let poison = PoisonConfig {
        rate: cfg.poison_rate,
        target: cfg.target,
        trigger,
    };
    let poison_seed = seed::derive_seed(ctx.master_seed, "poison", ctx.round as u64, client as u64);
    let poisoned = poison_client_dataset(shard, &poison, poison_seed)?;

    let mut model = global.clone();
    train_classifier(&mut model, poisoned.images(), poisoned.labels(), &cfg.training, &mut rng)?;
    let g_old = global.flatten();
    let trained = model.flatten();

    let params = match cfg.kind {
        AttackKind::Single => {
            let s = cfg.scale.unwrap_or(ctx.selected_count as f64);
            scale_update(&g_old, &trained, s)?
        }
        AttackKind::Neurotoxin => {
            let delta = trained.sub(&g_old)?;
            let reference = ctx
                .previous_global_update
                .clone()
                .unwrap_or_else(|| ParamVector::zeros(delta.len()));
            let masked = neurotoxin_project(&delta, &reference, cfg.mask_ratio)?;
            let s = cfg.scale.unwrap_or(1.0);
            g_old.add_scaled(&masked, s)?
        }
        _ => match cfg.scale {
            Some(s) if s != 1.0 => scale_update(&g_old, &trained, s)?,
            _ => trained,
        },
    };
    ClientUpdate::new(client, params, shard.len())
}
