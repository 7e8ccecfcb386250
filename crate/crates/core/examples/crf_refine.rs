//! Mean-field refinement cleaning up a noisy two-region label map.

use apc::crf::{refine, CrfConfig};
use apc::patchify::ImageTensor;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> apc::Result<()> {
    let (h, w) = (24, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // left half dark, right half bright
    let image = ImageTensor::new(Array3::from_shape_fn((h, w, 3), |(_, x, _)| {
        if x < w / 2 {
            0.2
        } else {
            0.8
        }
    }))?;
    let mut probs = Array3::zeros((h, w, 2));
    let mut noisy = 0;
    for y in 0..h {
        for x in 0..w {
            let truth = usize::from(x >= w / 2);
            let flip = rng.gen_bool(0.15);
            noisy += usize::from(flip);
            let label = if flip { 1 - truth } else { truth };
            probs[(y, x, label)] = 0.65;
            probs[(y, x, 1 - label)] = 0.35;
        }
    }
    let refined = refine(probs.view(), &image, &CrfConfig::default())?;
    let wrong = refined
        .classes
        .indexed_iter()
        .filter(|((_, x), &c)| c as usize != usize::from(*x >= w / 2))
        .count();
    println!("mislabelled pixels: {noisy} before, {wrong} after refinement");
    Ok(())
}
