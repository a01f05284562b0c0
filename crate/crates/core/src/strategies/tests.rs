use super::*;
use crate::backbone::NetworkConfig;
use crate::datagen::{build_dataset, Dataset, DatasetConfig, DomainSpec, ScarcitySetup, SplitSizes};
use crate::datagen::{sample_scarce_subset, Sample};
use crate::routing::{IndicatorVector, RouteMode};

fn tiny_dataset() -> Dataset {
    let mut c = DatasetConfig::compact(3);
    c.split = SplitSizes {
        train: 8,
        val: 2,
        test: 3,
    };
    c.domains = vec![DomainSpec::identity("src"), c.domains[2].clone()];
    build_dataset(&c).unwrap()
}

fn tiny_schedule(epochs: usize) -> TrainSchedule {
    TrainSchedule {
        epochs,
        iters_per_epoch: 2,
        lr_initial: 1e-2,
        lr_reduced: 1e-3,
        reduce_at_epoch: 1.max(epochs.saturating_sub(1)),
        batch_size: 2,
    }
}

fn cfg() -> NetworkConfig {
    NetworkConfig::unet(2)
}

fn pretrained(ds: &Dataset) -> crate::backbone::SegmentationNetwork<f64> {
    let d = ds.domain("src").unwrap();
    pretrain_baseline::<f64>(&cfg(), &d.train(), &[], &tiny_schedule(2), 1).unwrap().0
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let ds = tiny_dataset();
    let d = ds.domain("src").unwrap();
    let (net, log) = pretrain_baseline::<f32>(&cfg(), &d.train(), &d.val(), &tiny_schedule(0), 5).unwrap();
    let init = crate::backbone::build_network::<f32>(&cfg(), 5).unwrap();
    assert_eq!(net.params(), init.params());
    assert!(log.rows.is_empty());
}

#[test]
fn pretraining_is_bitwise_reproducible_and_follows_the_schedule() {
    let ds = tiny_dataset();
    let d = ds.domain("src").unwrap();
    let s = tiny_schedule(3);
    let (a, log) = pretrain_baseline::<f32>(&cfg(), &d.train(), &d.val(), &s, 9).unwrap();
    let (b, _) = pretrain_baseline::<f32>(&cfg(), &d.train(), &d.val(), &s, 9).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(log.rows.len(), 3);
    for r in &log.rows {
        assert_eq!(r.lr, s.lr_at(r.epoch));
        assert!(r.val_surface_dice.is_some());
    }
    assert!(log.to_csv().starts_with("epoch,lr,train_loss,val_surface_dice\n"));
}

fn changed_blocks(before: &crate::backbone::SegmentationNetwork<f64>, after: &crate::backbone::SegmentationNetwork<f64>) -> Vec<usize> {
    (0..before.num_blocks())
        .filter(|&l| before.block_params(l) != after.block_params(l))
        .collect()
}

#[test]
fn first_k_touches_exactly_the_leading_blocks() {
    let ds = tiny_dataset();
    let net = pretrained(&ds);
    let tgt = ds.domains[1].train();
    let s = TrainSchedule {
        epochs: 2,
        iters_per_epoch: 1,
        reduce_at_epoch: 1,
        ..tiny_schedule(2)
    };
    let (k0, _) = finetune(&net, &StrategyKind::FinetuneFirstK { k: 0 }, &s, &tgt, &[], 0).unwrap();
    assert_eq!(k0.params(), net.params());
    let (k3, _) = finetune(&net, &StrategyKind::FinetuneFirstK { k: 3 }, &s, &tgt, &[], 0).unwrap();
    assert_eq!(changed_blocks(&net, &k3), vec![0, 1, 2]);
    let n = net.num_blocks();
    let mut all = net.clone();
    all.set_all_trainable(true);
    let mut first_n = net.clone();
    first_n.set_trainable_first_k(n).unwrap();
    assert_eq!(all.trainable_mask(), first_n.trainable_mask());
    assert!(finetune(&net, &StrategyKind::FinetuneFirstK { k: n + 1 }, &s, &tgt, &[], 0).is_err());
    assert!(finetune(&net, &StrategyKind::TransferOnly, &s, &tgt, &[], 0).is_err());
}

#[test]
fn dual_path_training_never_touches_the_frozen_copy() {
    let ds = tiny_dataset();
    let net = pretrained(&ds);
    let tgt = ds.domains[1].train();
    let (model, log) = finetune_spottunet(&net, 0.01, 0.5, &tiny_schedule(2), &tgt, &ds.domains[1].val(), 4).unwrap();
    assert_eq!(model.frozen().params(), net.params());
    assert!(model.frozen().trainable_mask().iter().all(|&t| !t));
    assert_ne!(model.tuned().params(), net.params());
    assert_eq!(log.rows.len(), 2);
    assert!(finetune_spottunet(&net, -0.1, 0.5, &tiny_schedule(2), &tgt, &[], 4).is_err());
    assert!(finetune_spottunet(&net, 0.1, 0.0, &tiny_schedule(2), &tgt, &[], 4).is_err());
}

#[test]
fn forced_all_frozen_matches_transfer_only() {
    let ds = tiny_dataset();
    let net = pretrained(&ds);
    let tgt = ds.domains[1].train();
    let (model, _) = finetune_spottunet(&net, 0.0, 1.0, &tiny_schedule(2), &tgt, &[], 2).unwrap();
    let (x, _) = crate::datagen::to_batch::<f64>(&ds.domains[1].test()).unwrap();
    let forced = RouteMode::Forced(IndicatorVector::all_frozen(net.num_blocks()));
    let (a, _) = model.routed_forward(&x, &forced, None).unwrap();
    let b = net.forward(&x).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-6);
}

#[test]
fn histogram_pipeline_is_deterministic_and_near_identity_on_the_source() {
    let ds = tiny_dataset();
    let net = pretrained(&ds);
    let src = ds.domain("src").unwrap();
    let pipe = transfer_with_histogram_matching(&net, &src.train()).unwrap();
    let a = evaluate(&pipe, &src.test()).unwrap();
    assert_eq!(a, evaluate(&pipe, &src.test()).unwrap());
    assert!(transfer_with_histogram_matching(&net, &[]).is_err());
}

#[test]
fn oracle_folds_partition_the_domain() {
    let ds = tiny_dataset();
    let d = ds.domain("src").unwrap();
    let res = run_oracle_cv::<f32>(&cfg(), d, 3, &tiny_schedule(0), 7).unwrap();
    assert_eq!(res.fold_scores.len(), 3);
    let mut all: Vec<usize> = res.folds.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..d.samples.len()).collect::<Vec<_>>());
    assert_eq!(fold_partition(&all, 3, 1).unwrap(), fold_partition(&all, 3, 1).unwrap());
    assert!(run_oracle_cv::<f32>(&cfg(), d, 1, &tiny_schedule(0), 7).is_err());
    assert!(fold_partition(&[1, 2], 3, 0).is_err());
}

#[test]
fn run_directories_round_trip() {
    let ds = tiny_dataset();
    let net = pretrained(&ds);
    let d = &ds.domains[1];
    let ids = sample_scarce_subset(d, ScarcitySetup::Slices(2), 0).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_dir(tmp.path(), "exp", "src__tgt", "transfer_only", 0);
    assert!(read_run_result(&dir).unwrap().is_none());
    let config = RunConfig {
        experiment: "exp".into(),
        source: "src".into(),
        target: d.spec.domain_id.clone(),
        strategy: StrategySpec {
            kind: StrategyKind::TransferOnly,
            schedule: tiny_schedule(0),
            scarcity: Some(ScarcitySetup::Slices(2)),
        },
        seed: 0,
        run_seed: 11,
        baseline_seed: 1,
        finetune_ids: ids,
        test_ids: d.splits.test.clone(),
    };
    let test: Vec<&Sample> = d.test();
    let scores = evaluate(&net, &test).unwrap();
    let result = RunResult {
        mean_surface_dice: mean(&scores),
        per_image: test
            .iter()
            .zip(&scores)
            .map(|(s, &v)| ImageScore {
                sample_id: s.sample_id,
                surface_dice: v,
            })
            .collect(),
        diverged: false,
        fraction_tuned: None,
    };
    write_run(&dir, &config, RunModel::Plain(&net), &TrainLog::default(), &result).unwrap();
    assert!(dir.join("checkpoint/manifest.json").exists());
    assert!(dir.join("log.csv").exists());
    assert_eq!(read_run_config(&dir).unwrap(), config);
    assert_eq!(read_run_result(&dir).unwrap().unwrap(), result);
}
