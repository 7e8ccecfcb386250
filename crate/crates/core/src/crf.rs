//! Mean-field refinement of per-pixel class probabilities with a Potts
//! pairwise term weighted by a Gaussian appearance kernel over a truncated
//! square window.

use ndarray::{Array2, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patchify::{ImageTensor, SegMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfConfig {
    pub iters: usize,
    pub pairwise_weight: f64,
    pub color_sigma: f64,
    pub pos_sigma: f64,
    pub radius: usize,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            iters: 5,
            pairwise_weight: 3.0,
            color_sigma: 0.1,
            pos_sigma: 3.0,
            radius: 5,
        }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pairwise_weight >= 0.0 && self.color_sigma > 0.0 && self.pos_sigma > 0.0) {
            return Err(Error::Config(format!(
                "crf needs pairwise_weight >= 0 and positive sigmas, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn argmax_labels(probs: ArrayView3<f64>) -> SegMask {
    let (h, w, _) = probs.dim();
    SegMask::new(Array2::from_shape_fn((h, w), |(y, x)| {
        let px = probs.slice(ndarray::s![y, x, ..]);
        let mut best = 0usize;
        for (l, &v) in px.iter().enumerate() {
            if v > px[best] {
                best = l;
            }
        }
        best as u8
    }))
}

/// Refines `probs` (`(h, w, n_labels)`, rows summing to one) against `image`
/// and returns the arg-max labelling.
pub fn refine(probs: ArrayView3<f64>, image: &ImageTensor, cfg: &CrfConfig) -> Result<SegMask> {
    cfg.validate()?;
    let (h, w, n_labels) = probs.dim();
    if (h, w) != (image.height(), image.width()) {
        return Err(Error::Shape(format!(
            "{h}x{w} probabilities for a {}x{} image",
            image.height(),
            image.width()
        )));
    }
    for y in 0..h {
        for x in 0..w {
            let sum: f64 = probs.slice(ndarray::s![y, x, ..]).sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::NotNormalized {
                    pixel: y * w + x,
                    sum,
                });
            }
        }
    }
    if cfg.iters == 0 || cfg.pairwise_weight == 0.0 {
        return Ok(argmax_labels(probs));
    }

    let unary = probs.mapv(f64::ln);
    let r = cfg.radius as isize;
    let mut spatial = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy != 0 || dx != 0 {
                let d2 = (dy * dy + dx * dx) as f64;
                spatial.push((dy, dx, (-d2 / (2.0 * cfg.pos_sigma * cfg.pos_sigma)).exp()));
            }
        }
    }
    let color_denom = 2.0 * cfg.color_sigma * cfg.color_sigma;

    let mut q: Array3<f64> = probs.to_owned();
    let mut msg = vec![0.0; n_labels];
    for _ in 0..cfg.iters {
        let mut next = Array3::zeros((h, w, n_labels));
        for y in 0..h {
            for x in 0..w {
                msg.iter_mut().for_each(|m| *m = 0.0);
                let ci = image.pixel(y, x);
                for &(dy, dx, ks) in &spatial {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    let cj = image.pixel(ny, nx);
                    let dc: f64 = ci.iter().zip(&cj).map(|(a, b)| (a - b) * (a - b)).sum();
                    let k = ks * (-dc / color_denom).exp();
                    for (l, m) in msg.iter_mut().enumerate() {
                        *m += k * q[(ny, nx, l)];
                    }
                }
                // Potts: label agreement with neighbours lowers the energy
                let mut max = f64::NEG_INFINITY;
                for l in 0..n_labels {
                    let v = unary[(y, x, l)] + cfg.pairwise_weight * msg[l];
                    next[(y, x, l)] = v;
                    max = max.max(v);
                }
                let mut sum = 0.0;
                for l in 0..n_labels {
                    let e = (next[(y, x, l)] - max).exp();
                    next[(y, x, l)] = e;
                    sum += e;
                }
                for l in 0..n_labels {
                    next[(y, x, l)] /= sum;
                }
            }
        }
        q = next;
    }
    Ok(argmax_labels(q.view()))
}
