//! FedAvg round engine.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;

use crate::attacks::{adversarial_local_train, AdversaryProfile};
use crate::config::ExperimentConfig;
use crate::data::{dirichlet_partition, Dataset, TriggerSpec};
use crate::defenses::{defend, DefenseContext, DefenseOutcome, GeneratedImageSet};
use crate::error::{Error, Result};
use crate::io::{dump_pgm, write_round_csv};
use crate::metrics::{eval_attack_success_rate, eval_main_accuracy};
use crate::nn::{save_checkpoint, train_classifier, Classifier, ParamVector, SgdConfig};
use crate::seed;

/// A client's post-training model.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    /// Full parameters, not a delta.
    pub params: ParamVector,
    pub samples: usize,
}

impl ClientUpdate {
    pub fn new(client: usize, params: ParamVector, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidArgument(format!(
                "client {client} reported zero samples"
            )));
        }
        params.check_finite()?;
        Ok(ClientUpdate {
            client,
            params,
            samples,
        })
    }
}

#[derive(Clone, Debug)]
pub enum Role {
    Benign,
    Adversarial(AdversaryProfile),
}

#[derive(Clone, Debug)]
pub struct ClientProfile {
    pub id: usize,
    pub shard: Dataset,
    pub role: Role,
    pub training: SgdConfig,
}

impl ClientProfile {
    pub fn is_adversarial(&self) -> bool {
        matches!(self.role, Role::Adversarial(_))
    }
}

/// What a client sees of the current round.
#[derive(Clone, Debug)]
pub struct RoundContext {
    pub master_seed: u64,
    pub round: usize,
    pub total_rounds: usize,
    pub selected_count: usize,
    /// `G_r − G_{r−1}` of the previous round, if any.
    pub previous_global_update: Option<ParamVector>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Sorted.
    pub selected: Vec<usize>,
    /// Subset of `selected`, sorted.
    pub removed: Vec<usize>,
    pub ma: Option<f64>,
    pub asr: Option<f64>,
    pub wall_ms: u64,
}

/// `k` distinct ids drawn uniformly from `pool`, sorted ascending.
pub fn select_clients(pool: &[usize], k: usize, seed: u64, round: usize) -> Result<Vec<usize>> {
    if k > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} clients from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = seed::rng_for(seed, "select", round as u64, 0);
    let mut ids: Vec<usize> = index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Trains a copy of `global` on the client's shard. Adversarial profiles
/// are handled by the attack module.
pub fn local_train(global: &Classifier, profile: &ClientProfile, ctx: &RoundContext) -> Result<ClientUpdate> {
    if profile.shard.is_empty() {
        return Err(Error::Empty(format!("client {} has no data", profile.id)));
    }
    match &profile.role {
        Role::Adversarial(adv) => {
            adversarial_local_train(global, profile.id, &profile.shard, &profile.training, adv, ctx)
        }
        Role::Benign => {
            let mut rng =
                seed::rng_for(ctx.master_seed, "local-train", ctx.round as u64, profile.id as u64);
            let mut model = global.clone();
            train_classifier(
                &mut model,
                profile.shard.images(),
                profile.shard.labels(),
                &profile.training,
                &mut rng,
            )?;
            ClientUpdate::new(profile.id, model.flatten(), profile.shard.len())
        }
    }
}

/// `Σ n_k·w_k / Σ n_k`.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Empty("fedavg needs at least one update".into()))?;
    let mut acc = vec![0.0; first.params.len()];
    let mut total = 0.0;
    for u in updates {
        first.params.check_aligned(&u.params)?;
        let n = u.samples as f64;
        for (a, w) in acc.iter_mut().zip(u.params.as_slice()) {
            *a += n * w;
        }
        total += n;
    }
    for a in &mut acc {
        *a /= total;
    }
    let out = ParamVector::new(acc);
    out.check_finite()?;
    Ok(out)
}

/// One completed round.
#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub record: RoundRecord,
    pub outcome: DefenseOutcome,
}

/// Full simulation state.
#[derive(Clone, Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    test: Dataset,
    clients: Vec<ClientProfile>,
    global: Classifier,
    previous_update: Option<ParamVector>,
    trigger: TriggerSpec,
    records: Vec<RoundRecord>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = config.dataset.load(config.seed)?;
        Self::with_data(config, train, test)
    }

    pub fn with_data(config: ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.validate()?;
        if train.image_shape() != test.image_shape() || train.classes() != test.classes() {
            return Err(Error::Config("train and test sets differ in shape or classes".into()));
        }
        config.attack.validate(train.classes())?;
        let trigger = config.trigger.build(train.image_shape())?;
        let shards = dirichlet_partition(
            &train,
            config.clients,
            config.alpha,
            seed::derive_seed(config.seed, "partition", 0, 0),
        )?;

        let n_adv = config.adversary_count().min(config.clients);
        let mut adv_rng = seed::rng_for(config.seed, "adversaries", 0, 0);
        let mut adversaries: Vec<usize> = index::sample(&mut adv_rng, config.clients, n_adv).into_vec();
        adversaries.sort_unstable();

        let clients = shards
            .into_iter()
            .map(|shard| {
                let role = match adversaries.binary_search(&shard.client) {
                    Ok(ordinal) => Role::Adversarial(AdversaryProfile {
                        config: config.attack.clone(),
                        ordinal,
                        trigger: trigger.clone(),
                    }),
                    Err(_) => Role::Benign,
                };
                Ok(ClientProfile {
                    id: shard.client,
                    shard: train.subset(&shard.indices)?,
                    role,
                    training: config.training.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let global = Classifier::init(
            config.classifier_spec(&train),
            seed::derive_seed(config.seed, "model-init", 0, 0),
        )?;
        Ok(Experiment {
            config,
            test,
            clients,
            global,
            previous_update: None,
            trigger,
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn global(&self) -> &Classifier {
        &self.global
    }

    pub fn set_global(&mut self, model: Classifier) -> Result<()> {
        if model.spec() != self.global.spec() {
            return Err(Error::Shape("replacement global model has a different spec".into()));
        }
        self.global = model;
        Ok(())
    }

    pub fn clients(&self) -> &[ClientProfile] {
        &self.clients
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn trigger(&self) -> &TriggerSpec {
        &self.trigger
    }

    pub fn adversaries(&self) -> Vec<usize> {
        self.clients
            .iter()
            .filter(|c| c.is_adversarial())
            .map(|c| c.id)
            .collect()
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    /// Index of the next round to run.
    pub fn round(&self) -> usize {
        self.records.len()
    }

    pub fn is_finished(&self) -> bool {
        self.round() >= self.config.rounds
    }

    fn context(&self, round: usize, selected: usize) -> RoundContext {
        RoundContext {
            master_seed: self.config.seed,
            round,
            total_rounds: self.config.rounds,
            selected_count: selected,
            previous_global_update: self.previous_update.clone(),
        }
    }

    pub fn select(&self, round: usize) -> Result<Vec<usize>> {
        let pool: Vec<usize> = (0..self.clients.len()).collect();
        select_clients(&pool, self.config.selected_per_round(), self.config.seed, round)
    }

    /// Local training of `selected` against the current global model.
    pub fn local_updates(&self, round: usize, selected: &[usize]) -> Result<Vec<ClientUpdate>> {
        let ctx = self.context(round, selected.len());
        selected
            .iter()
            .map(|&id| local_train(&self.global, &self.clients[id], &ctx))
            .collect()
    }

    /// `(MA, ASR)` of the current global model.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let ma = eval_main_accuracy(&self.global, &self.test)?;
        let asr =
            eval_attack_success_rate(&self.global, &self.test, &self.trigger, self.config.attack.target)?;
        Ok((ma, asr))
    }

    fn should_evaluate(&self, round: usize) -> bool {
        (round + 1).is_multiple_of(self.config.eval_every) || round + 1 == self.config.rounds
    }

    /// Runs the next round. On error the state is left unchanged.
    pub fn run_round(&mut self) -> Result<RoundOutput> {
        let start = Instant::now();
        let round = self.round();
        let selected = self.select(round)?;
        let updates = self.local_updates(round, &selected)?;
        let outcome = defend(
            &self.config.defense,
            &self.global,
            &updates,
            &DefenseContext { eta: self.config.eta },
            seed::derive_seed(self.config.seed, "defense", round as u64, 0),
        )?;
        let next = Classifier::unflatten(self.global.spec(), outcome.global.clone())?;

        let old = std::mem::replace(&mut self.global, next);
        self.previous_update = Some(self.global.flatten().sub(&old.flatten())?);

        let (ma, asr) = if self.should_evaluate(round) {
            let (ma, asr) = self.evaluate()?;
            (Some(ma), Some(asr))
        } else {
            (None, None)
        };
        let mut removed = outcome.report.removed_ids();
        removed.sort_unstable();
        let wall_ms = if self.config.record_wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let record = RoundRecord {
            round,
            selected,
            removed,
            ma,
            asr,
            wall_ms,
        };
        self.records.push(record.clone());
        Ok(RoundOutput { record, outcome })
    }
}

/// Records and final model of a completed experiment.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub final_model: Classifier,
    pub csv_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const FINAL_CHECKPOINT: &str = "final_model.ckpt";

fn dump_set(dir: &Path, round: usize, stage: u8, set: &GeneratedImageSet) -> Result<()> {
    let shape = set.images.shape();
    let s = (shape[1], shape[2], shape[3]);
    for c in 0..set.len() {
        let path = dir.join(format!("round_{round}_stage{stage}_cat{c}.pgm"));
        dump_pgm(set.image(c), s, &path)?;
    }
    Ok(())
}

/// Runs every configured round and writes `rounds.csv` and
/// `final_model.ckpt` into `config.output_dir` (plus generated images when
/// `defense.dump_images` is set).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut exp = Experiment::new(config.clone())?;
    while !exp.is_finished() {
        let out = exp.run_round()?;
        if config.defense.dump_images {
            if let Some((stage1, stage2)) = &out.outcome.generated {
                dump_set(&dir, out.record.round, 1, stage1)?;
                dump_set(&dir, out.record.round, 2, stage2)?;
            }
        }
    }
    let csv_path = dir.join(ROUNDS_CSV);
    write_round_csv(exp.records(), &csv_path)?;
    let checkpoint_path = dir.join(FINAL_CHECKPOINT);
    save_checkpoint(exp.global(), &checkpoint_path)?;
    Ok(ExperimentResult {
        records: exp.records,
        final_model: exp.global,
        csv_path,
        checkpoint_path,
    })
}
