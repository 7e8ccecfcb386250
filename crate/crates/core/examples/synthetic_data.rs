//! Generates a small synthetic set, writes it in the folder layout and reads
//! it back.
//!
//! cargo run --example synthetic_data -- [out dir]

use apc::data::{
    gen_synthetic, load_voc_format, write_voc_format, Dataset, ShapeClass, SyntheticConfig,
    LABELS_FILE,
};

fn main() -> apc::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synthetic_demo".into());
    let data = gen_synthetic(&SyntheticConfig {
        seed: 7,
        n_images: 8,
        image_size: 64,
        ..Default::default()
    })?;
    let names: Vec<&str> = ShapeClass::ALL.iter().map(|c| c.name()).collect();
    write_voc_format(&out, LABELS_FILE, &data.samples, &names)?;

    let loaded = load_voc_format(&out)?;
    println!(
        "{} images, {} classes in {out}",
        loaded.len(),
        loaded.n_classes()
    );
    for i in 0..loaded.len() {
        let s = loaded.get(i)?;
        let mask = s.gt_mask().expect("mask written");
        let fg = mask.classes.iter().filter(|&&c| c != 0).count();
        println!(
            "{:<5} labels {:?} foreground pixels {fg}",
            s.id,
            s.labels.ids()
        );
    }
    Ok(())
}
