//! Trains the compact model on generated shapes and prints per-epoch metrics.
//!
//! cargo run --release --example train_synthetic -- [epochs] [train images] [seed]

use apc::data::{gen_synthetic, SyntheticConfig};
use apc::{ModelConfig, TrainConfig};

fn main() -> apc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: u64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let (epochs, n_train, seed) = (arg(0, 3) as usize, arg(1, 200) as usize, arg(2, 0));

    let data = gen_synthetic(&SyntheticConfig {
        seed,
        n_images: n_train + 50,
        ..Default::default()
    })?;
    let (train_set, eval_set) = data.split_at(n_train);

    let cfg = TrainConfig {
        max_epochs: epochs,
        seed,
        eval_every_epoch: true,
        ..TrainConfig::new(ModelConfig::compact(3))
    };
    let (_, report) = apc::train(&train_set, Some(&eval_set), &cfg, &mut |_, m| {
        println!(
            "epoch {} loss {:.4} mIoU {:.4} ({:.1}s)",
            m.epoch,
            m.mean_loss,
            m.eval.as_ref().map_or(f64::NAN, |e| e.miou()),
            m.wall_clock_s
        );
        Ok(())
    })?;
    if let Some(ev) = &report.eval {
        println!("per-class IoU {:?}", ev.decoder.per_class_iou);
        println!("pseudo-mask mIoU {:.4}", ev.pseudo.miou);
    }
    Ok(())
}
