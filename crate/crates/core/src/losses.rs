//! Image-level classification loss, pixel segmentation loss, the weighted
//! training objective and the patch pseudo-labels that supervise the decoder.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::patchify::SegMask;

/// Clamp applied to probabilities before every logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mask value excluded from the segmentation loss.
pub const IGNORE: u8 = 255;

/// Image-level class presence over foreground classes `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageLabels {
    present: Vec<bool>,
}

impl ImageLabels {
    pub fn empty(n_classes: usize) -> Self {
        Self {
            present: vec![false; n_classes],
        }
    }

    /// From foreground class ids (1-based).
    pub fn from_ids(n_classes: usize, ids: &[usize]) -> Result<Self> {
        let mut out = Self::empty(n_classes);
        for &id in ids {
            if id == 0 || id > n_classes {
                return Err(Error::Config(format!(
                    "class id {id} outside 1..={n_classes}"
                )));
            }
            out.present[id - 1] = true;
        }
        Ok(out)
    }

    pub fn n_classes(&self) -> usize {
        self.present.len()
    }

    pub fn has(&self, class_id: usize) -> bool {
        class_id >= 1 && self.present.get(class_id - 1).copied().unwrap_or(false)
    }

    pub fn ids(&self) -> Vec<usize> {
        (1..=self.present.len()).filter(|&c| self.has(c)).collect()
    }

    /// Binary target vector over the foreground classes.
    pub fn targets(&self) -> Vec<f64> {
        self.present
            .iter()
            .map(|&p| f64::from(u8::from(p)))
            .collect()
    }

    /// Targets over `[background, fg_1, ..]`; background is always present.
    pub fn targets_with_background(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.targets()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub seg: f64,
    pub pce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            seg: 0.02,
            pce: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.seg >= 0.0 && self.pce >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be >= 0 (lambda1 = {}, lambda2 = {})",
                self.seg, self.pce
            )));
        }
        Ok(())
    }
}

/// Mean per-class binary cross-entropy.
pub fn mce_loss(y: &[f64], t: &[f64]) -> Result<f64> {
    if y.len() != t.len() || y.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions against {} targets",
            y.len(),
            t.len()
        )));
    }
    Ok(y.iter()
        .zip(t)
        .map(|(&y, &t)| {
            let y = y.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(t * y.ln() + (1.0 - t) * (1.0 - y).ln())
        })
        .sum::<f64>()
        / y.len() as f64)
}

/// Differentiable [`mce_loss`] on a `(1, n)` probability row.
pub fn mce_loss_var(g: &mut Graph, y: Var, t: &[f64]) -> Result<Var> {
    if g.value(y).len() != t.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} targets",
            g.value(y).len(),
            t.len()
        )));
    }
    Ok(g.binary_cross_entropy(y, t.to_vec(), PROB_CLAMP))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegLoss {
    pub value: f64,
    /// Set when every pixel was ignored and the loss defaulted to 0.
    pub all_ignored: bool,
}

fn seg_targets(mask: &SegMask, n_classes: usize) -> Result<Vec<Option<usize>>> {
    mask.classes
        .iter()
        .map(|&c| match c {
            IGNORE => Ok(None),
            c if (c as usize) < n_classes => Ok(Some(c as usize)),
            c => Err(Error::Shape(format!(
                "mask class {c} outside {n_classes} logit channels"
            ))),
        })
        .collect()
}

/// Mean pixel cross-entropy. `pixel_logits` is `(h*w, n_classes)` in
/// row-major pixel order.
pub fn seg_loss(pixel_logits: ArrayView2<f64>, mask: &SegMask) -> Result<SegLoss> {
    let (h, w) = mask.dim();
    if pixel_logits.nrows() != h * w {
        return Err(Error::Shape(format!(
            "{} pixel logits for a {h}x{w} mask",
            pixel_logits.nrows()
        )));
    }
    let targets = seg_targets(mask, pixel_logits.ncols())?;
    if targets.iter().all(Option::is_none) {
        log::warn!("segmentation loss: every pixel is ignored");
        return Ok(SegLoss {
            value: 0.0,
            all_ignored: true,
        });
    }
    let mut g = Graph::new();
    let logits = g.constant(pixel_logits.to_owned());
    let loss = g.cross_entropy_rows(logits, Arc::new(targets));
    Ok(SegLoss {
        value: g.scalar(loss),
        all_ignored: false,
    })
}

/// Differentiable [`seg_loss`].
pub fn seg_loss_var(g: &mut Graph, pixel_logits: Var, mask: &SegMask) -> Result<Var> {
    let (h, w) = mask.dim();
    let logits = g.value(pixel_logits);
    if logits.nrows() != h * w {
        return Err(Error::Shape(format!(
            "{} pixel logits for a {h}x{w} mask",
            logits.nrows()
        )));
    }
    let targets = seg_targets(mask, logits.ncols())?;
    Ok(g.cross_entropy_rows(pixel_logits, Arc::new(targets)))
}

pub fn total_loss(mce: f64, seg: f64, pce_per_class: &[f64], weights: &LossWeights) -> f64 {
    mce + weights.seg * seg + weights.pce * pce_per_class.iter().sum::<f64>()
}

/// Rules turning patch scores into patch pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    /// Minimum foreground score for a patch to take a foreground label.
    pub beta: f64,
    /// Upper edge of the ignore band `[beta, eps)` when enabled.
    pub eps: f64,
    pub ignore_band: bool,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            eps: 0.85,
            ignore_band: false,
        }
    }
}

/// Patch pseudo-labels from scores laid out as `[background, fg_1, ..]`.
/// Patches whose best foreground score is below `beta` become background.
pub fn patch_pseudo_labels(z: &Array2<f64>, cfg: &PseudoLabelConfig) -> Vec<u8> {
    z.rows()
        .into_iter()
        .map(|row| {
            let (best, score) =
                row.iter()
                    .enumerate()
                    .skip(1)
                    .fold((0usize, f64::NEG_INFINITY), |acc, (c, &v)| {
                        if v > acc.1 {
                            (c, v)
                        } else {
                            acc
                        }
                    });
            if best == 0 || score < cfg.beta {
                0
            } else if cfg.ignore_band && score < cfg.eps {
                IGNORE
            } else {
                best as u8
            }
        })
        .collect()
}
