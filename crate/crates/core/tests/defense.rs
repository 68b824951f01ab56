use std::sync::OnceLock;

use fltrigger_core::attacks::AttackKind;
use fltrigger_core::autodiff::Tensor;
use fltrigger_core::config::ExperimentConfig;
use fltrigger_core::defenses::{
    defend, defend_trigger_generation, knowledge_extraction, model_filtering, trigger_filtering,
    DefenseConfig, DefenseContext, DefenseKind, GenTrainConfig, GeneratedImageSet, TriggerHit, Verdict,
};
use fltrigger_core::flcore::{fedavg_aggregate, ClientUpdate, Experiment};
use fltrigger_core::nn::{Classifier, ClassifierSpec, ParamVector};

/// 1×3 single-channel images, no hidden layer, 3 classes. Weight `(i, o)`
/// sits at `3·i + o`, the output bias at `9 + o`.
fn tiny_spec() -> ClassifierSpec {
    ClassifierSpec {
        height: 1,
        width: 3,
        channels: 1,
        hidden: vec![],
        classes: 3,
    }
}

/// Pixel `i` votes for class `map(i)` with logit `w`.
fn wired(w: f64, map: impl Fn(usize) -> usize) -> ClientUpdate {
    let mut p = vec![0.0; 12];
    for i in 0..3 {
        p[3 * i + map(i)] = w;
    }
    ClientUpdate::new(0, ParamVector::new(p), 1).unwrap()
}

/// `T_c` is the one-hot image at pixel `c`.
fn one_hot_triggers() -> GeneratedImageSet {
    let mut data = vec![0.0; 9];
    for c in 0..3 {
        data[3 * c + c] = 1.0;
    }
    GeneratedImageSet {
        images: Tensor::new(vec![3, 1, 3, 1], data).unwrap(),
        z: Tensor::zeros(vec![3, 1]),
    }
}

#[test]
fn filter_removes_confident_own_category() {
    // e^w / (e^w + 2) = 0.55
    let w = (0.55f64 * 2.0 / 0.45).ln();
    let out = model_filtering(&[wired(w, |i| i)], &tiny_spec(), &one_hot_triggers(), 0.5).unwrap();
    assert!(out.kept.is_empty());
    assert!(out.report.fallback);
    match &out.report.entries[0].1 {
        Verdict::Removed(Some(TriggerHit { category, confidence })) => {
            assert_eq!(*category, 0);
            assert!((confidence - 0.55).abs() < 1e-12);
        }
        v => panic!("expected removal, got {v:?}"),
    }
}

#[test]
fn filter_keeps_confident_other_category() {
    let shifted = wired(5.0, |i| (i + 1) % 3);
    let out = model_filtering(&[shifted], &tiny_spec(), &one_hot_triggers(), 0.5).unwrap();
    assert_eq!(out.kept, vec![0]);
    assert!(!out.report.fallback);
    assert_eq!(out.report.entries[0].1, Verdict::Kept);
}

#[test]
fn filter_rejects_wrong_trigger_count() {
    let mut t = one_hot_triggers();
    t.images = Tensor::zeros(vec![2, 1, 3, 1]);
    assert!(model_filtering(&[wired(1.0, |i| i)], &tiny_spec(), &t, 0.5).is_err());
}

fn fast_generator() -> GenTrainConfig {
    GenTrainConfig {
        epochs: 2,
        steps_per_epoch: 3,
        hidden: vec![16],
        latent_dim: 8,
        ..GenTrainConfig::default()
    }
}

#[test]
fn identical_updates_are_never_split() {
    let spec = ClassifierSpec {
        height: 4,
        width: 4,
        channels: 1,
        hidden: vec![8],
        classes: 3,
    };
    let g_old = Classifier::init(spec.clone(), 1).unwrap();
    let model = Classifier::init(spec, 2).unwrap().flatten();
    let ups: Vec<ClientUpdate> = (0..4).map(|i| ClientUpdate::new(i, model.clone(), 5).unwrap()).collect();
    for seed in 0..4 {
        let out = defend_trigger_generation(&g_old, &ups, &fast_generator(), seed).unwrap();
        let removed = out.report.removed_ids().len();
        assert!(removed == 0 || removed == 4, "seed {seed}: {removed} removed");
        if removed == 4 {
            assert!(out.report.fallback);
            assert_eq!(out.global, g_old.flatten());
        } else {
            // Weighted mean of equal vectors, up to rounding.
            let gap = out.global.sub(&model).unwrap().as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(gap < 1e-12, "seed {seed}: {gap}");
        }
    }
}

#[test]
fn every_defense_kind_aggregates_a_round() {
    let spec = ClassifierSpec {
        height: 4,
        width: 4,
        channels: 1,
        hidden: vec![5],
        classes: 3,
    };
    let g_old = Classifier::init(spec.clone(), 1).unwrap();
    let ups: Vec<ClientUpdate> = (0..7)
        .map(|i| ClientUpdate::new(i * 2, Classifier::init(spec.clone(), 10 + i as u64).unwrap().flatten(), 3).unwrap())
        .collect();
    for kind in DefenseKind::ALL {
        let cfg = DefenseConfig {
            kind,
            generator: fast_generator(),
            ..DefenseConfig::default()
        };
        let out = defend(&cfg, &g_old, &ups, &DefenseContext { eta: 0.3 }, 4).unwrap();
        assert_eq!(out.global.len(), g_old.flatten().len(), "{kind}");
        out.global.check_finite().unwrap();
        let ids: Vec<usize> = out.report.entries.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, vec![0, 2, 4, 6, 8, 10, 12], "{kind}");
        assert_eq!(out.generated.is_some(), kind == DefenseKind::TriggerGen, "{kind}");
    }
}

/// Desk-scale round with at least two adversaries, taken after a few
/// defended rounds so that the global model has learned the task.
struct Snapshot {
    g_old: Classifier,
    g_agg: Classifier,
    target: usize,
    gen: GenTrainConfig,
}

fn snapshot() -> &'static Snapshot {
    static SNAP: OnceLock<Snapshot> = OnceLock::new();
    SNAP.get_or_init(|| {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 1;
        cfg.attack.kind = AttackKind::Multiple;
        cfg.defense.kind = DefenseKind::TriggerGen;
        let mut exp = Experiment::new(cfg.clone()).unwrap();
        let adversaries = exp.adversaries();
        loop {
            let r = exp.round();
            let sel = exp.select(r).unwrap();
            let n_adv = sel.iter().filter(|id| adversaries.contains(id)).count();
            if r >= 3 && n_adv >= 2 {
                let ups = exp.local_updates(r, &sel).unwrap();
                let g_old = exp.global().clone();
                let g_agg = Classifier::unflatten(g_old.spec(), fedavg_aggregate(&ups).unwrap()).unwrap();
                return Snapshot {
                    g_old,
                    g_agg,
                    target: cfg.attack.target,
                    gen: cfg.defense.generator.clone(),
                };
            }
            exp.run_round().unwrap();
        }
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

#[test]
fn generated_sets_have_the_dataset_shape() {
    let s = snapshot();
    let i = knowledge_extraction(&s.g_old, &s.g_agg, &s.gen, 0).unwrap();
    let t = trigger_filtering(&s.g_old, &s.g_agg, &i.set, &s.gen, 0).unwrap();
    for set in [&i.set, &t.set] {
        assert_eq!(set.images.shape(), &[10, 16, 16, 1]);
        assert!(set.images.data().iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(set.len(), 10);
    }
    assert_eq!(i.epoch_losses.len(), s.gen.epochs);
}

#[test]
fn generator_losses_decrease() {
    let s = snapshot();
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let i = knowledge_extraction(&s.g_old, &s.g_agg, &s.gen, seed).unwrap();
        let t = trigger_filtering(&s.g_old, &s.g_agg, &i.set, &s.gen, seed).unwrap();
        first.push(i.epoch_losses.last().unwrap() - i.epoch_losses[0]);
        second.push(t.epoch_losses.last().unwrap() - t.epoch_losses[0]);
    }
    assert!(median(first.clone()) <= 0.0, "{first:?}");
    assert!(median(second.clone()) <= 0.0, "{second:?}");
}

#[test]
fn target_pattern_pulls_other_images_to_the_target() {
    let s = snapshot();
    let t = s.target;
    let i = knowledge_extraction(&s.g_old, &s.g_agg, &s.gen, 0).unwrap().set;
    let tr = trigger_filtering(&s.g_old, &s.g_agg, &i, &s.gen, 0).unwrap().set;
    let pattern = tr.image(t);
    let mut plain = Vec::new();
    let mut overlapped = Vec::new();
    for k in (0..10).filter(|&k| k != t) {
        plain.extend_from_slice(i.image(k));
        overlapped.extend(i.image(k).iter().zip(pattern).map(|(x, p)| (x + p).clamp(0.0, 1.0)));
    }
    let mean_target = |data: Vec<f64>| {
        let probs = s.g_agg.forward(&Tensor::new(vec![9, 256], data).unwrap()).unwrap();
        (0..9).map(|r| probs.row(r)[t]).sum::<f64>() / 9.0
    };
    let before = mean_target(plain);
    let after = mean_target(overlapped);
    assert!(after > before, "overlapped {after} vs plain {before}");
}
