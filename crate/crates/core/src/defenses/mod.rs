//! Server-side defenses. Every defense consumes the previous global model
//! and the round's client updates and returns the next global model plus a
//! filter report.

mod robust;
mod trigger_gen;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flcore::{fedavg_aggregate, ClientUpdate};
use crate::nn::{Classifier, ParamVector};

pub use robust::{
    coordinate_median, dp_aggregate, krum_index, krum_scores, krum_select, multi_krum,
    multi_krum_indices, rlr_aggregate, trimmed_mean,
};
pub use trigger_gen::{
    defend_trigger_generation, knowledge_extraction, model_filtering, trigger_filtering,
    GenTrainConfig, GeneratedImageSet, ModelFilterResult, StageOutput, TriggerGenOutcome,
};

/// Why trigger-generation filtering removed a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriggerHit {
    pub category: usize,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Verdict {
    Kept,
    /// Excluded from aggregation; trigger-generation filtering records the
    /// category image that fired, selection rules (Krum family) do not.
    Removed(Option<TriggerHit>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterReport {
    /// `(client id, verdict)` in update order.
    pub entries: Vec<(usize, Verdict)>,
    /// Every update was removed and the old global model was kept.
    pub fallback: bool,
}

impl FilterReport {
    pub fn all_kept(updates: &[ClientUpdate]) -> Self {
        FilterReport {
            entries: updates.iter().map(|u| (u.client, Verdict::Kept)).collect(),
            fallback: false,
        }
    }

    pub fn removed_ids(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|(_, v)| matches!(v, Verdict::Removed(_)))
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn kept_ids(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|(_, v)| matches!(v, Verdict::Kept))
            .map(|(id, _)| *id)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DefenseKind {
    None,
    Krum,
    MultiKrum,
    Median,
    TrimmedMean,
    Rlr,
    Dp,
    TriggerGen,
}

impl DefenseKind {
    pub const ALL: [DefenseKind; 8] = [
        DefenseKind::None,
        DefenseKind::Krum,
        DefenseKind::MultiKrum,
        DefenseKind::Median,
        DefenseKind::TrimmedMean,
        DefenseKind::Rlr,
        DefenseKind::Dp,
        DefenseKind::TriggerGen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::Krum => "krum",
            DefenseKind::MultiKrum => "mkrum",
            DefenseKind::Median => "comed",
            DefenseKind::TrimmedMean => "trimmed_mean",
            DefenseKind::Rlr => "rlr",
            DefenseKind::Dp => "dp",
            DefenseKind::TriggerGen => "trigger_gen",
        }
    }
}

impl fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DefenseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = DefenseKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown defense `{s}` (expected one of {})", known.join(", ")))
            })
    }
}

impl Serialize for DefenseKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DefenseKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    /// Byzantine count assumed by Krum / Multi-Krum; defaults to
    /// `max(1, floor(eta · selected))`.
    pub krum_f: Option<usize>,
    pub mkrum_m: usize,
    pub trim_k: usize,
    pub rlr_theta: f64,
    pub rlr_lr: f64,
    pub dp_sigma: f64,
    pub generator: GenTrainConfig,
    /// Write the generated sets of every round as PGM files.
    pub dump_images: bool,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            kind: DefenseKind::None,
            krum_f: None,
            mkrum_m: 5,
            trim_k: 3,
            rlr_theta: 4.0,
            rlr_lr: 1.0,
            dp_sigma: 0.015,
            generator: GenTrainConfig::default(),
            dump_images: false,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mkrum_m == 0 {
            return Err(Error::Config("mkrum_m must be ≥ 1".into()));
        }
        if !(self.rlr_theta >= 0.0) || !(self.rlr_lr > 0.0) {
            return Err(Error::Config("rlr_theta must be ≥ 0 and rlr_lr > 0".into()));
        }
        if !(self.dp_sigma >= 0.0) {
            return Err(Error::Config("dp_sigma must be ≥ 0".into()));
        }
        // Checked for every kind, so a sweep cannot carry a bad value
        // into a later trigger_gen run.
        self.generator.validate()
    }
}

/// Round facts a defense may need beyond the updates themselves.
#[derive(Clone, Copy, Debug)]
pub struct DefenseContext {
    /// Configured adversary fraction, used for the default Krum `f`.
    pub eta: f64,
}

/// Output of [`defend`].
#[derive(Clone, Debug)]
pub struct DefenseOutcome {
    pub global: ParamVector,
    pub report: FilterReport,
    /// Stage 1 and stage 2 sets, for trigger-generation only.
    pub generated: Option<(GeneratedImageSet, GeneratedImageSet)>,
}

fn krum_f(cfg: &DefenseConfig, ctx: &DefenseContext, n: usize) -> usize {
    cfg.krum_f
        .unwrap_or_else(|| ((ctx.eta * n as f64).floor() as usize).max(1))
}

fn selection_report(updates: &[ClientUpdate], chosen: &[usize]) -> FilterReport {
    FilterReport {
        entries: updates
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let v = if chosen.contains(&i) {
                    Verdict::Kept
                } else {
                    Verdict::Removed(None)
                };
                (u.client, v)
            })
            .collect(),
        fallback: false,
    }
}

/// Dispatches to the configured defense.
///
/// The Krum family clamps `f` (and Multi-Krum's `m`) to the largest values
/// the round's update count supports, so that a small or unlucky selection
/// degrades the rule instead of aborting the round. Trimmed mean clamps `k`
/// the same way.
pub fn defend(
    cfg: &DefenseConfig,
    g_old: &Classifier,
    updates: &[ClientUpdate],
    ctx: &DefenseContext,
    seed: u64,
) -> Result<DefenseOutcome> {
    if updates.is_empty() {
        return Err(Error::Empty("defense received no updates".into()));
    }
    let n = updates.len();
    let simple = |global: ParamVector| DefenseOutcome {
        global,
        report: FilterReport::all_kept(updates),
        generated: None,
    };
    Ok(match cfg.kind {
        DefenseKind::None => simple(fedavg_aggregate(updates)?),
        DefenseKind::Krum => {
            if n < 3 {
                simple(fedavg_aggregate(updates)?)
            } else {
                let f = krum_f(cfg, ctx, n).min(n - 3);
                let i = krum_index(updates, f)?;
                DefenseOutcome {
                    global: updates[i].params.clone(),
                    report: selection_report(updates, &[i]),
                    generated: None,
                }
            }
        }
        DefenseKind::MultiKrum => {
            if n < 3 {
                simple(fedavg_aggregate(updates)?)
            } else {
                let m = cfg.mkrum_m.min(n - 2);
                let f = krum_f(cfg, ctx, n).min(n - 2 - m);
                let chosen = multi_krum_indices(updates, f, m)?;
                DefenseOutcome {
                    global: multi_krum(updates, f, m)?,
                    report: selection_report(updates, &chosen),
                    generated: None,
                }
            }
        }
        DefenseKind::Median => simple(coordinate_median(updates)?),
        DefenseKind::TrimmedMean => {
            let k = cfg.trim_k.min((n - 1) / 2);
            simple(trimmed_mean(updates, k)?)
        }
        DefenseKind::Rlr => simple(rlr_aggregate(
            &g_old.flatten(),
            updates,
            cfg.rlr_theta,
            cfg.rlr_lr,
        )?),
        DefenseKind::Dp => simple(dp_aggregate(updates, cfg.dp_sigma, seed)?),
        DefenseKind::TriggerGen => {
            let out = defend_trigger_generation(g_old, updates, &cfg.generator, seed)?;
            DefenseOutcome {
                global: out.global,
                report: out.report,
                generated: Some((out.extracted.set, out.triggers.set)),
            }
        }
    })
}
