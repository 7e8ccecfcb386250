//! Patch contrast loss on a few embeddings: confident patches of a class are
//! pulled together and pushed away from the patches least likely to hold it.

use apc::head::ClassScores;
use apc::pcl::{cosine_similarity, partition_confidence, pce_loss};
use ndarray::array;

fn main() -> apc::Result<()> {
    let f_out = array![[1.0, 0.1], [0.9, 0.2], [-1.0, 0.0], [0.2, 1.0]];
    // background column first, then one foreground class
    let scores = ClassScores::new(array![
        [0.05, 0.95],
        [0.10, 0.90],
        [0.97, 0.03],
        [0.50, 0.50]
    ])?;
    let partition = partition_confidence(&scores, 0.85)?;
    let class = &partition.classes[1];
    println!("high {:?}, low {:?}", class.high, class.low);
    println!(
        "positive pairs {}, negative pairs {}",
        class.positive_pairs(),
        class.negative_pairs()
    );
    println!(
        "cos(f0, f1) = {:.4}",
        cosine_similarity(f_out.row(0), f_out.row(1))?
    );
    println!(
        "loss for the class: {:.4}",
        pce_loss(f_out.view(), &partition, 1)?
    );

    let collapsed = array![[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [0.2, 1.0]];
    println!(
        "after alignment: {:.4}",
        pce_loss(collapsed.view(), &partition, 1)?
    );
    Ok(())
}
