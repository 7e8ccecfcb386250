//! Compares the analytic gradient of the full training objective with
//! central finite differences on a tiny model.

use apc::data::Sample;
use apc::decoder::DecoderConfig;
use apc::encoder::EncoderConfig;
use apc::losses::ImageLabels;
use apc::model::Model;
use apc::patchify::ImageTensor;
use apc::train::{image_gradients, image_losses, TrainConfig};
use apc::ModelConfig;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> apc::Result<()> {
    let config = ModelConfig {
        encoder: EncoderConfig {
            depth: 1,
            heads: 2,
            width: 8,
            patch: 4,
            lstm_hidden: 4,
            pos_grid: (2, 2),
            ..EncoderConfig::default()
        },
        decoder: DecoderConfig::default_for_depth(1, 6),
        n_classes: 2,
    };
    let model = Model::new(config.clone(), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sample = Sample {
        id: "probe".into(),
        image: ImageTensor::new(Array3::from_shape_simple_fn((8, 8, 3), || rng.gen::<f64>()))?,
        labels: ImageLabels::from_ids(2, &[2])?,
        gt: None,
    };
    let cfg = TrainConfig::new(config);
    let (losses, grads) = image_gradients(&model, &sample, &cfg, None)?;
    println!(
        "objective {:.6} over {} parameter tensors",
        losses.total,
        grads.len()
    );

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, analytic) in &grads {
        let mut probe = model.clone();
        let (mut num, mut diff) = (0.0, 0.0);
        for i in 0..analytic.len() {
            let (r, c) = (i / analytic.ncols(), i % analytic.ncols());
            let orig = model.params.get(name)?[(r, c)];
            let mut at = |v: f64| -> apc::Result<f64> {
                probe.params.get_mut(name).expect("parameter")[(r, c)] = v;
                Ok(image_losses(&probe, &sample, &cfg)?.total)
            };
            let fd = (at(orig + h)? - at(orig - h)?) / (2.0 * h);
            at(orig)?;
            num += fd * fd;
            diff += (fd - analytic[(r, c)]).powi(2);
        }
        let rel = if num > 0.0 {
            (diff / num).sqrt()
        } else {
            diff.sqrt()
        };
        worst = worst.max(rel);
        println!("{name:<24} relative error {rel:.2e}");
    }
    println!("worst {worst:.2e}");
    Ok(())
}
