//! Splitting images into square patches and mapping patch decisions back onto
//! pixels.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RowMixer;

/// RGB image with values in `[0, 1]`, stored as `(h, w, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(Error::Shape(format!(
                "image must be (h>0, w>0, 3), got ({h}, {w}, {c})"
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Shape(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [
            self.data[(y, x, 0)],
            self.data[(y, x, 1)],
            self.data[(y, x, 2)],
        ]
    }

    /// Bilinear resize (pixel-centre aligned).
    pub fn resize(&self, new_h: usize, new_w: usize) -> ImageTensor {
        let (h, w) = (self.height(), self.width());
        if (h, w) == (new_h, new_w) {
            return self.clone();
        }
        let ys = resample_taps(h, new_h);
        let xs = resample_taps(w, new_w);
        let mut out = Array3::zeros((new_h, new_w, 3));
        for (oy, ytaps) in ys.iter().enumerate() {
            for (ox, xtaps) in xs.iter().enumerate() {
                for &(iy, wy) in ytaps {
                    for &(ix, wx) in xtaps {
                        for ch in 0..3 {
                            out[(oy, ox, ch)] += wy * wx * self.data[(iy, ix, ch)];
                        }
                    }
                }
            }
        }
        out.mapv_inplace(|v: f64| v.clamp(0.0, 1.0));
        ImageTensor { data: out }
    }

    /// Resizes to the nearest multiple of `d` in each dimension (at least `d`).
    /// Returns the image unchanged when already divisible.
    pub fn resize_to_multiple(&self, d: usize) -> (ImageTensor, bool) {
        let round = |n: usize| (((n as f64) / d as f64).round() as usize).max(1) * d;
        let (nh, nw) = (round(self.height()), round(self.width()));
        if (nh, nw) == (self.height(), self.width()) {
            (self.clone(), false)
        } else {
            (self.resize(nh, nw), true)
        }
    }
}

/// Row-major decomposition of an image into `d x d` patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Vec<Array3<f64>>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub d: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn dims(&self) -> GridDims {
        GridDims {
            grid_h: self.grid_h,
            grid_w: self.grid_w,
            d: self.d,
        }
    }

    /// Flattens every patch (row, column, channel order) into one row of an
    /// `(s, d*d*3)` token matrix.
    pub fn tokens(&self) -> Array2<f64> {
        let width = self.d * self.d * 3;
        let mut out = Array2::zeros((self.patches.len(), width));
        for (i, p) in self.patches.iter().enumerate() {
            for (j, v) in p.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
        out
    }

    /// Inverse of [`partition`].
    pub fn reassemble(&self) -> ImageTensor {
        let d = self.d;
        let mut data = Array3::zeros((self.grid_h * d, self.grid_w * d, 3));
        for (i, p) in self.patches.iter().enumerate() {
            let (gy, gx) = (i / self.grid_w, i % self.grid_w);
            data.slice_mut(s![gy * d..(gy + 1) * d, gx * d..(gx + 1) * d, ..])
                .assign(p);
        }
        ImageTensor { data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub grid_h: usize,
    pub grid_w: usize,
    pub d: usize,
}

impl GridDims {
    pub fn patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn pixel_h(&self) -> usize {
        self.grid_h * self.d
    }

    pub fn pixel_w(&self) -> usize {
        self.grid_w * self.d
    }
}

pub fn partition(image: &ImageTensor, d: usize) -> Result<PatchGrid> {
    let (h, w) = (image.height(), image.width());
    if d == 0 || h % d != 0 || w % d != 0 {
        return Err(Error::DimensionMismatch { h, w, d });
    }
    let (grid_h, grid_w) = (h / d, w / d);
    let mut patches = Vec::with_capacity(grid_h * grid_w);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            patches.push(
                image
                    .data
                    .slice(s![gy * d..(gy + 1) * d, gx * d..(gx + 1) * d, ..])
                    .to_owned(),
            );
        }
    }
    Ok(PatchGrid {
        patches,
        grid_h,
        grid_w,
        d,
    })
}

/// Pixel-level class mask; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    pub classes: Array2<u8>,
}

impl SegMask {
    pub fn new(classes: Array2<u8>) -> Self {
        Self { classes }
    }

    pub fn height(&self) -> usize {
        self.classes.nrows()
    }

    pub fn width(&self) -> usize {
        self.classes.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.classes.dim()
    }

    pub fn max_class(&self) -> u8 {
        self.classes.iter().copied().max().unwrap_or(0)
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, new_h: usize, new_w: usize) -> SegMask {
        let (h, w) = self.dim();
        let classes = Array2::from_shape_fn((new_h, new_w), |(y, x)| {
            let sy = ((y as f64 + 0.5) * h as f64 / new_h as f64) as usize;
            let sx = ((x as f64 + 0.5) * w as f64 / new_w as f64) as usize;
            self.classes[(sy.min(h - 1), sx.min(w - 1))]
        });
        SegMask { classes }
    }
}

pub fn patch_labels_to_pixel_mask(patch_classes: &[u8], dims: GridDims) -> Result<SegMask> {
    if patch_classes.len() != dims.patches() {
        return Err(Error::Shape(format!(
            "{} patch labels for a {}x{} grid",
            patch_classes.len(),
            dims.grid_h,
            dims.grid_w
        )));
    }
    let d = dims.d;
    let mut classes = Array2::zeros((dims.pixel_h(), dims.pixel_w()));
    for (i, &c) in patch_classes.iter().enumerate() {
        let (gy, gx) = (i / dims.grid_w, i % dims.grid_w);
        classes
            .slice_mut(s![gy * d..(gy + 1) * d, gx * d..(gx + 1) * d])
            .fill(c);
    }
    Ok(SegMask { classes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    #[default]
    Bilinear,
    Nearest,
}

/// 1-D linear interpolation taps from `n_in` samples to `n_out`, with
/// half-pixel alignment and edge clamping.
pub(crate) fn resample_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            let frac = src - lo as f64;
            if hi == lo || frac == 0.0 {
                vec![(lo, 1.0)]
            } else {
                vec![(lo, 1.0 - frac), (hi, frac)]
            }
        })
        .collect()
}

/// Row mixer taking an `(s, k)` patch matrix to an `(h*w, k)` pixel matrix in
/// row-major pixel order.
pub fn grid_upsampler(dims: GridDims, mode: Upsample) -> RowMixer {
    let (ph, pw) = (dims.pixel_h(), dims.pixel_w());
    let mut rows = Vec::with_capacity(ph * pw);
    match mode {
        Upsample::Nearest => {
            for y in 0..ph {
                for x in 0..pw {
                    rows.push(vec![((y / dims.d) * dims.grid_w + x / dims.d, 1.0)]);
                }
            }
        }
        Upsample::Bilinear => {
            let ys = resample_taps(dims.grid_h, ph);
            let xs = resample_taps(dims.grid_w, pw);
            for ytaps in &ys {
                for xtaps in &xs {
                    let mut taps = Vec::with_capacity(4);
                    for &(gy, wy) in ytaps {
                        for &(gx, wx) in xtaps {
                            taps.push((gy * dims.grid_w + gx, wy * wx));
                        }
                    }
                    rows.push(taps);
                }
            }
        }
    }
    RowMixer {
        n_in: dims.patches(),
        rows,
    }
}
