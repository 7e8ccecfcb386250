//! Independent reference implementations shared by the integration tests.
//! They favour literal transcription over speed and reuse nothing from the
//! library beyond plain data types.

#![allow(dead_code)]

use apc::data::{gen_synthetic, InMemoryDataset, ShapeClass, SyntheticConfig};
use apc::decoder::DecoderConfig;
use apc::encoder::EncoderConfig;
use apc::patchify::SegMask;
use apc::ModelConfig;
use ndarray::Array2;
use rand::Rng;

/// Indices of the `i` largest values, largest first; ties go to the lower
/// index. Selection by repeated scanning.
pub fn top_i(scores: &[f64], i: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::with_capacity(i);
    for _ in 0..i {
        let mut best: Option<usize> = None;
        for (j, &s) in scores.iter().enumerate() {
            if taken[j] {
                continue;
            }
            if best.is_none_or(|b| s > scores[b]) {
                best = Some(j);
            }
        }
        let b = best.expect("enough scores");
        taken[b] = true;
        out.push(b);
    }
    out
}

fn mean_of(scores: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| scores[i]).sum::<f64>() / idx.len() as f64
}

/// Adaptive K selection for one category, transcribed step by step.
pub fn akp_walker(scores: &[f64], k: usize, theta: f64) -> Vec<usize> {
    let mut selected_elements = top_i(scores, 1);
    for i in 2..=k.min(scores.len()) {
        let current_elements = top_i(scores, i);
        let mean_current = mean_of(scores, &current_elements);
        let mean_selected = mean_of(scores, &selected_elements);
        if mean_current / mean_selected > theta {
            selected_elements = current_elements;
        }
    }
    selected_elements
}

/// Per-class IoU counted pixel by pixel; class ids absent from both masks
/// give `None`. Pixels labelled 255 in the ground truth are skipped.
pub fn miou_oracle(
    preds: &[SegMask],
    gts: &[SegMask],
    n_classes: usize,
) -> (Vec<Option<f64>>, f64) {
    let mut per_class = Vec::with_capacity(n_classes);
    for c in 0..n_classes as u8 {
        let (mut inter, mut union) = (0u64, 0u64);
        for (p, g) in preds.iter().zip(gts) {
            for y in 0..g.height() {
                for x in 0..g.width() {
                    let (pv, gv) = (p.classes[(y, x)], g.classes[(y, x)]);
                    if gv == 255 {
                        continue;
                    }
                    if pv == c && gv == c {
                        inter += 1;
                    }
                    if pv == c || gv == c {
                        union += 1;
                    }
                }
            }
        }
        per_class.push((union > 0).then(|| inter as f64 / union as f64));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per_class, miou)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Contrast error from explicit pair lists: positives are ordered pairs of
/// distinct high-confidence rows, negatives are (high, low) pairs.
pub fn pce_pairwise(f: &[Vec<f64>], high: &[usize], low: &[usize]) -> f64 {
    let mut pos = Vec::new();
    for &i in high {
        for &j in high {
            if i != j {
                pos.push(1.0 - (1.0 + cosine(&f[i], &f[j])) / 2.0);
            }
        }
    }
    let mut neg = Vec::new();
    for &i in high {
        for &j in low {
            neg.push((1.0 + cosine(&f[i], &f[j])) / 2.0);
        }
    }
    let avg = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    avg(&pos) + avg(&neg)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn finite_diff(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[(r, c)];
        probe[(r, c)] = orig + h;
        let up = f(&probe);
        probe[(r, c)] = orig - h;
        let down = f(&probe);
        probe[(r, c)] = orig;
        grad[(r, c)] = (up - down) / (2.0 * h);
    }
    grad
}

/// `|a - b| / max(|a|, |b|)` in the Frobenius norm; 0 when both vanish.
pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let norm = |m: &Array2<f64>| m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&(a - b));
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Random row-stochastic matrix with strictly positive entries.
pub fn random_simplex_rows(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(0.01..1.0));
    for mut r in m.rows_mut() {
        let s = r.sum();
        r /= s;
    }
    m
}

/// Four patches of 4 px, width 8, two foreground classes.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            depth: 1,
            heads: 2,
            width: 8,
            patch: 4,
            mlp_ratio: 2,
            pos_grid: (2, 2),
            pos_embed: true,
            dropout: 0.0,
            lstm_hidden: 4,
            seed: 0,
        },
        decoder: DecoderConfig::default_for_depth(1, 6),
        n_classes: 2,
    }
}

/// Small synthetic set for quick end-to-end runs.
pub fn small_synthetic(seed: u64, n: usize, size: usize) -> InMemoryDataset {
    gen_synthetic(&SyntheticConfig {
        seed,
        n_images: n,
        image_size: size,
        classes: ShapeClass::ALL.to_vec(),
        ..Default::default()
    })
    .expect("synthetic data")
}
