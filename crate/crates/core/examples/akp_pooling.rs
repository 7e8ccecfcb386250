//! Adaptive-K selection on a hand-made score column, and how the four
//! pooling modes turn patch scores into image scores.

use apc::head::{adaptive_k_select, pool, ClassScores, PoolingConfig, PoolingMode};
use ndarray::{array, Array1};

fn main() -> apc::Result<()> {
    let column: Array1<f64> = array![0.10, 0.92, 0.88, 0.15, 0.86, 0.40, 0.83];
    for theta in [0.0, 0.9, 0.95, 1.0] {
        let sel = adaptive_k_select(column.view(), 6, theta)?;
        println!(
            "theta {theta:<4} -> k = {} patches {:?}, mean {:.4}",
            sel.k(),
            sel.indices,
            sel.mean()
        );
    }

    // three patches, background plus two classes
    let scores = ClassScores::new(array![
        [0.70, 0.20, 0.10],
        [0.05, 0.90, 0.05],
        [0.10, 0.80, 0.10]
    ])?;
    for mode in PoolingMode::ALL {
        let cfg = PoolingConfig {
            mode,
            k: 2,
            theta: 0.9,
        };
        let y: Vec<String> = pool(&scores, &cfg)?
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect();
        println!("{mode:<5} image scores [{}]", y.join(", "));
    }
    Ok(())
}
