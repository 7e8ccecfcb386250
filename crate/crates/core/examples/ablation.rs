//! Pooling ablation on the synthetic benchmark: trains each variant over
//! several seeds and prints the ranked table.
//!
//! cargo run --release --example ablation -- [epochs] [seeds] [all]
//!
//! Without `all` only GAP, GMP, AKP and AKP with the contrast loss are run.

use apc::ablation::{ablate, Variant};
use apc::data::{gen_synthetic, SyntheticConfig};
use apc::{ModelConfig, PoolingMode, TrainConfig};

fn main() -> apc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|s| s.parse().ok()).unwrap_or(6);
    let n_seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let variants = if args.get(2).is_some_and(|s| s == "all") {
        Variant::grid()
    } else {
        vec![
            Variant::new(PoolingMode::Gap, false),
            Variant::new(PoolingMode::Gmp, false),
            Variant::new(PoolingMode::Akp, false),
            Variant::new(PoolingMode::Akp, true),
        ]
    };

    let data = gen_synthetic(&SyntheticConfig {
        seed: 2024,
        n_images: 600,
        ..Default::default()
    })?;
    let (train_set, eval_set) = data.split_at(500);
    let base = TrainConfig {
        max_epochs: epochs,
        ..TrainConfig::new(ModelConfig::compact(3))
    };
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let table = ablate(
        &train_set,
        &eval_set,
        &base,
        &variants,
        &seeds,
        &mut |v, seed, r| {
            eprintln!(
                "{:<8} seed {seed}: mIoU {:.4} intra {:?} ({:.0}s)",
                v.label(),
                r.miou().unwrap_or(f64::NAN),
                r.cosine.as_ref().and_then(|c| c.intra),
                r.wall_clock_s
            );
        },
    )?;
    print!("{}", table.render());
    Ok(())
}
