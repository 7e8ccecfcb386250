//! Trains briefly, then writes per-class probability maps for one image.
//!
//! cargo run --release --example heatmap -- [out dir]

use apc::data::{gen_synthetic, Dataset, SyntheticConfig};
use apc::eval::{heatmap, save_heatmap};
use apc::{ModelConfig, TrainConfig};

fn main() -> apc::Result<()> {
    let out =
        std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "heatmaps".into()));
    std::fs::create_dir_all(&out)?;
    let data = gen_synthetic(&SyntheticConfig {
        seed: 3,
        n_images: 120,
        ..Default::default()
    })?;
    let cfg = TrainConfig {
        max_epochs: 4,
        ..TrainConfig::new(ModelConfig::compact(3))
    };
    let (model, _) = apc::train(&data, None, &cfg, &mut |_, m| {
        println!("epoch {} loss {:.4}", m.epoch, m.mean_loss);
        Ok(())
    })?;

    let sample = data.get(0)?;
    println!("{} is labelled {:?}", sample.id, sample.labels.ids());
    for class in 0..=model.config.n_classes {
        let map = heatmap(&model, &sample.image, class)?;
        let path = out.join(format!("{}_class{class}.png", sample.id));
        save_heatmap(&map, &path)?;
        println!(
            "class {class}: mean {:.3} -> {}",
            map.pixels.mean().unwrap_or(0.0),
            path.display()
        );
    }
    Ok(())
}
