use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqn_core::config::ModelConfig;
use sqn_core::model::SqnModel;
use sqn_core::tensor::Tape;
use sqn_core::trainer::{masked_loss, train, RetrainMode, TrainConfig, Trainer};
use sqn_core::weak_labels::{class_weights, sample_sparse_labels, SparseLabelSet};
use sqn_core::PointCloud;

/// Two horizontal 2 m x 2 m planes half a meter apart, one class each.
fn plane_pair(per_plane: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for (class, z) in [(0u16, 0.0f32), (1, 0.5)] {
        for _ in 0..per_plane {
            positions.push([rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), z]);
            labels.push(class);
        }
    }
    PointCloud::new(positions, None, Some(labels), 2).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        retrain: RetrainMode::Off,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_planes_reach_full_training_accuracy() {
    let cloud = plane_pair(1000, 1);
    let labels = sample_sparse_labels(&cloud, 0.01, 0).unwrap();
    assert_eq!(labels.len(), 20);
    let model = SqnModel::for_cloud(ModelConfig::default(), &cloud, 0).unwrap();
    let mut trainer = Trainer::new(model, &cloud, &labels, quick(50)).unwrap();
    let log = trainer.run(50).unwrap();
    let first = log.iter().position(|r| r.train_acc == 1.0);
    assert!(first.is_some(), "accuracy per epoch: {:?}", log.iter().map(|r| r.train_acc).collect::<Vec<_>>());

    let positions = labels.positions(&cloud);
    let predicted = trainer.model.predict(&cloud, &positions).unwrap();
    assert_eq!(predicted, labels.labels());
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let cloud = plane_pair(400, 2);
    let labels = sample_sparse_labels(&cloud, 0.05, 0).unwrap();
    let config = quick(0);
    let out = train(&cloud, &labels, &ModelConfig::default(), &config).unwrap();
    let fresh = SqnModel::for_cloud(ModelConfig::default(), &cloud, config.seed).unwrap();
    assert!(out.log.is_empty());
    assert!(out.first_stage.is_none());
    assert_eq!(out.model.to_bytes(), fresh.to_bytes());
}

#[test]
fn resumed_checkpoint_continues_the_same_trajectory() {
    let cloud = plane_pair(400, 3);
    let labels = sample_sparse_labels(&cloud, 0.05, 0).unwrap();
    let config = TrainConfig {
        steps_per_epoch: 2,
        ..quick(3)
    };
    let model = SqnModel::for_cloud(ModelConfig::default(), &cloud, 0).unwrap();
    let mut a = Trainer::new(model, &cloud, &labels, config.clone()).unwrap();
    a.run(3).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.sqnw");
    a.model.save(&path).unwrap();
    let mut b = Trainer::new(SqnModel::load(&path).unwrap(), &cloud, &labels, config).unwrap();

    for _ in 0..3 {
        let (la, lb) = (a.step().unwrap().loss, b.step().unwrap().loss);
        assert!((la - lb).abs() <= 1e-5, "uninterrupted {la} vs resumed {lb}");
    }
    assert_eq!(a.model.to_bytes(), b.model.to_bytes());
}

#[test]
fn balanced_labels_make_weighting_a_no_op() {
    let cloud = plane_pair(400, 4);
    let pairs: Vec<(usize, u16)> = (0..10).map(|i| (i, 0)).chain((400..410).map(|i| (i, 1))).collect();
    let labels = SparseLabelSet::new(pairs, cloud.len(), 2, 0).unwrap();
    let weights = class_weights(&labels, 2);
    assert!(weights.iter().all(|&w| (w - 1.0).abs() < 1e-12), "{weights:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits: Vec<f64> = (0..labels.len() * 2).map(|_| rng.random_range(-3.0..3.0)).collect();
    let loss = |w: &[f64]| {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(sqn_core::tensor::Tensor::new(vec![labels.len(), 2], logits.clone()).unwrap());
        let l = masked_loss(&mut tape, x, labels.labels(), w).unwrap();
        tape.value(l).data()[0]
    };
    assert!((loss(&weights) - loss(&[1.0, 1.0])).abs() <= 1e-6);
}

#[test]
fn retrain_off_skips_the_second_stage() {
    let cloud = plane_pair(300, 6);
    let labels = sample_sparse_labels(&cloud, 0.02, 0).unwrap();
    let out = train(&cloud, &labels, &ModelConfig::default(), &quick(2)).unwrap();
    assert!(out.first_stage.is_none());
    assert_eq!(out.log.len(), 2);

    let on = TrainConfig {
        retrain: RetrainMode::On,
        ..quick(2)
    };
    let out = train(&cloud, &labels, &ModelConfig::default(), &on).unwrap();
    assert_eq!(out.first_stage.as_ref().unwrap().1.len(), 2);
    assert_eq!(out.log.iter().map(|r| r.epoch).collect::<Vec<_>>(), [0, 1, 2, 3]);
}
