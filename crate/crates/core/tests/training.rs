mod common;

use apc::data::{Dataset, InMemoryDataset};
use apc::eval::{cosine_distances, evaluate, heatmap};
use apc::losses::PseudoLabelConfig;
use apc::model::Model;
use apc::patchify::ImageTensor;
use apc::train::{mean_objective, train, TrainConfig};
use apc::ModelConfig;
use common::*;
use ndarray::{array, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg(seed: u64) -> TrainConfig {
    let mut model = ModelConfig::compact(3);
    model.encoder.patch = 8;
    TrainConfig {
        batch_size: 2,
        max_epochs: 1,
        seed,
        ..TrainConfig::new(model)
    }
}

#[test]
fn one_epoch_reduces_training_loss_in_most_seeds() {
    let mut improved = 0;
    for seed in 0..5 {
        let data = small_synthetic(100 + seed, 10, 32);
        let cfg = small_cfg(seed);
        let init = Model::new(cfg.model.clone(), cfg.seed).unwrap();
        let before = mean_objective(&init, &data, &cfg).unwrap();
        let (model, _) = train(&data, None, &cfg, &mut |_, _| Ok(())).unwrap();
        let after = mean_objective(&model, &data, &cfg).unwrap();
        if after < before {
            improved += 1;
        }
    }
    assert!(improved >= 4, "loss fell in only {improved} of 5 seeds");
}

#[test]
fn ground_truth_is_read_only_by_evaluation() {
    let data = small_synthetic(7, 6, 32);
    data.reset_gt_access();
    let cfg = small_cfg(0);
    let (model, _) = train(&data, None, &cfg, &mut |_, _| Ok(())).unwrap();
    assert!(
        !data.any_gt_accessed(),
        "training touched pixel ground truth"
    );
    evaluate(&model, &data, &PseudoLabelConfig::default(), None).unwrap();
    assert!(data.any_gt_accessed());
}

#[test]
fn per_epoch_evaluation_does_not_change_training() {
    let data = small_synthetic(8, 8, 32);
    let mut cfg = small_cfg(1);
    cfg.max_epochs = 2;
    let plain = train(&data, None, &cfg, &mut |_, _| Ok(())).unwrap().1;
    cfg.eval_every_epoch = true;
    let eval: &dyn Dataset = &data;
    let evaluated = train(&data, Some(eval), &cfg, &mut |_, _| Ok(()))
        .unwrap()
        .1;
    assert_eq!(plain.loss_curve(), evaluated.loss_curve());
    assert!(evaluated.epochs.iter().all(|e| e.eval.is_some()));
}

#[test]
fn empty_dataset_is_rejected() {
    let empty = InMemoryDataset {
        samples: vec![],
        n_classes: 3,
    };
    assert!(train(&empty, None, &small_cfg(0), &mut |_, _| Ok(())).is_err());
}

#[test]
fn cosine_distance_hand_built_sets() {
    // two classes, each with two identical members, classes orthogonal
    let emb = array![[1.0, 0.0], [2.0, 0.0], [0.0, 3.0], [0.0, 1.0]];
    let stats = cosine_distances(&emb, &[0, 0, 1, 1], 2).unwrap();
    assert!(stats.intra.unwrap().abs() < 1e-12);
    assert!((stats.inter.unwrap() - 1.0).abs() < 1e-12);

    let same = array![[0.3, 0.4], [0.3, 0.4], [0.3, 0.4]];
    let stats = cosine_distances(&same, &[1, 1, 1], 2).unwrap();
    assert!(stats.intra.unwrap().abs() < 1e-12);
    assert_eq!(stats.skipped, vec![0]);
}

#[test]
fn heatmap_grid_is_the_score_column() {
    let model = Model::new(tiny_model_config(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = ImageTensor::new(Array3::from_shape_simple_fn((16, 16, 3), || {
        rng.gen::<f64>()
    }))
    .unwrap();
    let inf = model.infer(&image).unwrap();
    let map = heatmap(&model, &image, 2).unwrap();
    let column: Vec<f64> = inf.scores.z.column(2).to_vec();
    assert_eq!(map.grid.iter().copied().collect::<Vec<_>>(), column);
    assert_eq!(map.pixels.dim(), (16, 16));
    assert!(map.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(heatmap(&model, &image, 3).is_err());
}
