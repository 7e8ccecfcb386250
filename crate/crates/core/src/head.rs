//! Patch classifier and patch-to-image pooling.
//!
//! Scores are a per-patch softmax over classes. Image-level scores come from
//! averaging a per-class selection of patch scores; the selection rule is the
//! pooling mode. Adaptive-K pooling grows the selection from the top-1 score
//! while the mean of the top-i scores stays within ratio `theta` of the
//! current selection's mean.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::encoder::PatchEmbeddings;
use crate::error::{Error, Result};
use crate::graph::softmax_rows;

/// Per-patch class probabilities, `(s, n_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub z: Array2<f64>,
}

impl ClassScores {
    pub fn new(z: Array2<f64>) -> Result<Self> {
        for (i, row) in z.rows().into_iter().enumerate() {
            let sum = row.sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Shape(format!(
                    "score row {i} is not a probability vector"
                )));
            }
        }
        Ok(Self { z })
    }

    pub fn patches(&self) -> usize {
        self.z.nrows()
    }

    pub fn classes(&self) -> usize {
        self.z.ncols()
    }
}

pub fn patch_scores(f_out: &PatchEmbeddings, w: &Array2<f64>) -> Result<ClassScores> {
    if f_out.width() != w.nrows() {
        return Err(Error::Shape(format!(
            "embeddings of width {} against classifier with {} rows",
            f_out.width(),
            w.nrows()
        )));
    }
    Ok(ClassScores {
        z: softmax_rows(f_out.values.dot(w).view()),
    })
}

/// Patches chosen for one class, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct AkpSelection {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl AkpSelection {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Patch indices sorted by descending score, ties by ascending index.
pub fn descending_order(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Adaptive top-k selection over one class column.
pub fn adaptive_k_select(
    scores: ArrayView1<f64>,
    k_max: usize,
    theta: f64,
) -> Result<AkpSelection> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if k_max == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    let order = descending_order(scores);
    let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let limit = k_max.min(sorted.len());

    let mut selected = 1usize;
    for i in 2..=limit {
        let mean_current = mean(&sorted[..i]);
        let mean_selected = mean(&sorted[..selected]);
        // every later step is still evaluated, even after a rejection
        if mean_current / mean_selected > theta {
            selected = i;
        }
    }
    Ok(AkpSelection {
        indices: order[..selected].to_vec(),
        scores: sorted[..selected].to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// Global average pooling.
    Gap,
    /// Global max pooling.
    Gmp,
    /// Average of the top-K scores.
    TopkFixed,
    /// Adaptive-K pooling.
    #[default]
    Akp,
}

impl PoolingMode {
    pub const ALL: [PoolingMode; 4] = [
        PoolingMode::Gap,
        PoolingMode::Gmp,
        PoolingMode::TopkFixed,
        PoolingMode::Akp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoolingMode::Gap => "gap",
            PoolingMode::Gmp => "gmp",
            PoolingMode::TopkFixed => "topk",
            PoolingMode::Akp => "akp",
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gap" => Ok(PoolingMode::Gap),
            "gmp" => Ok(PoolingMode::Gmp),
            "topk" | "topk_fixed" | "top-k" => Ok(PoolingMode::TopkFixed),
            "akp" => Ok(PoolingMode::Akp),
            other => Err(Error::Config(format!(
                "unknown pooling mode `{other}` (expected gap, gmp, topk or akp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub mode: PoolingMode,
    pub k: usize,
    pub theta: f64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            mode: PoolingMode::Akp,
            k: 6,
            theta: 0.9,
        }
    }
}

impl PoolingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!(
                "theta = {} is invalid; theta must be a finite value >= 0",
                self.theta
            )));
        }
        Ok(())
    }

    /// Selected patch indices for one score column.
    pub fn select(&self, column: ArrayView1<f64>) -> Result<Vec<usize>> {
        if column.is_empty() {
            return Err(Error::EmptyScores);
        }
        Ok(match self.mode {
            PoolingMode::Gap => (0..column.len()).collect(),
            PoolingMode::Gmp => descending_order(column)[..1].to_vec(),
            PoolingMode::TopkFixed => {
                let order = descending_order(column);
                order[..self.k.min(order.len())].to_vec()
            }
            PoolingMode::Akp => adaptive_k_select(column, self.k, self.theta)?.indices,
        })
    }

    /// One selection per class column of `z`.
    pub fn select_all(&self, z: &Array2<f64>) -> Result<Vec<Vec<usize>>> {
        z.columns().into_iter().map(|c| self.select(c)).collect()
    }
}

/// Image-level scores: per-class mean of the selected patch scores.
pub fn pool(scores: &ClassScores, cfg: &PoolingConfig) -> Result<Vec<f64>> {
    let selection = cfg.select_all(&scores.z)?;
    Ok(selection
        .iter()
        .enumerate()
        .map(|(c, sel)| sel.iter().map(|&i| scores.z[(i, c)]).sum::<f64>() / sel.len() as f64)
        .collect())
}
