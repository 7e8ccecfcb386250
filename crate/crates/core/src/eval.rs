//! Segmentation metrics, embedding cosine-distance statistics and class
//! heatmaps.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::crf::CrfConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::RowMixer;
use crate::losses::{patch_pseudo_labels, PseudoLabelConfig, IGNORE};
use crate::model::Model;
use crate::patchify::{grid_upsampler, patch_labels_to_pixel_mask, ImageTensor, SegMask, Upsample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// IoU per class id; `None` when the class appears in neither GT nor
    /// prediction.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    /// `confusion[gt][pred]` pixel counts.
    pub confusion: Vec<Vec<u64>>,
}

/// Accumulates a confusion matrix over many mask pairs.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    /// Pixels labelled [`IGNORE`] in the ground truth are skipped.
    pub fn add(&mut self, pred: &SegMask, gt: &SegMask) -> Result<()> {
        if pred.dim() != gt.dim() {
            return Err(Error::Shape(format!(
                "prediction {:?} against ground truth {:?}",
                pred.dim(),
                gt.dim()
            )));
        }
        let n = self.counts.len();
        for (&p, &g) in pred.classes.iter().zip(gt.classes.iter()) {
            if g == IGNORE {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p >= n || g >= n {
                return Err(Error::Shape(format!(
                    "class {} outside {n} classes",
                    p.max(g)
                )));
            }
            self.counts[g][p] += 1;
        }
        Ok(())
    }

    pub fn report(&self) -> MiouReport {
        let n = self.counts.len();
        let per_class_iou: Vec<Option<f64>> = (0..n)
            .map(|c| {
                let tp = self.counts[c][c];
                let fn_: u64 = self.counts[c].iter().sum::<u64>() - tp;
                let fp: u64 = (0..n).map(|g| self.counts[g][c]).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        MiouReport {
            per_class_iou,
            miou,
            confusion: self.counts.clone(),
        }
    }
}

/// Per-class IoU and mIoU from the global confusion matrix. `n_classes`
/// counts the background.
pub fn evaluate_miou(
    pred_masks: &[SegMask],
    gt_masks: &[SegMask],
    n_classes: usize,
) -> Result<MiouReport> {
    if pred_masks.len() != gt_masks.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} ground-truth masks",
            pred_masks.len(),
            gt_masks.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for (p, g) in pred_masks.iter().zip(gt_masks) {
        cm.add(p, g)?;
    }
    Ok(cm.report())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Decoder predictions (CRF-refined when configured).
    pub decoder: MiouReport,
    /// Patch pseudo-labels mapped onto pixels.
    pub pseudo: MiouReport,
    pub images: usize,
    /// Images resized to a multiple of the patch side before inference.
    pub resized_images: usize,
}

impl EvalReport {
    pub fn miou(&self) -> f64 {
        self.decoder.miou
    }
}

/// Evaluates on every sample that carries a ground-truth mask.
pub fn evaluate(
    model: &Model,
    dataset: &dyn Dataset,
    pseudo_cfg: &PseudoLabelConfig,
    crf_cfg: Option<&CrfConfig>,
) -> Result<EvalReport> {
    let n = model.config.outputs();
    let mut dec = ConfusionMatrix::new(n);
    let mut pseudo = ConfusionMatrix::new(n);
    let mut images = 0;
    let mut resized_images = 0;
    for i in 0..dataset.len() {
        let sample = dataset.get(i)?;
        let Some(gt) = sample.gt_mask() else { continue };
        let inf = model.infer(&sample.image)?;
        resized_images += usize::from(inf.resized);
        let pred = model.mask_from_inference(&inf, &sample.image, crf_cfg)?;
        dec.add(&pred, gt)?;
        let labels = patch_pseudo_labels(&inf.scores.z, pseudo_cfg);
        let mut pmask = patch_labels_to_pixel_mask(&labels, inf.grid)?;
        if pmask.dim() != gt.dim() {
            pmask = pmask.resize_nearest(gt.height(), gt.width());
        }
        pseudo.add(&pmask, gt)?;
        images += 1;
    }
    Ok(EvalReport {
        decoder: dec.report(),
        pseudo: pseudo.report(),
        images,
        resized_images,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistance {
    pub class: usize,
    pub patches: usize,
    /// Mean `1 - cos` over ordered same-class pairs.
    pub intra: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineStats {
    pub per_class: Vec<ClassDistance>,
    /// Mean `1 - cos` between every pair of distinct qualifying classes.
    pub inter_pairs: Vec<(usize, usize, f64)>,
    /// Mean of the per-class intra distances.
    pub intra: Option<f64>,
    /// Mean of the pairwise inter-class distances.
    pub inter: Option<f64>,
    /// Classes with fewer than two confident patches.
    pub skipped: Vec<usize>,
}

/// Intra/inter-class cosine distances of labelled embeddings. Rows of
/// `embeddings` pair with `labels`; class ids index `0..n_classes`.
pub fn cosine_distances(
    embeddings: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
) -> Result<CosineStats> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    let e = embeddings.ncols();
    // sum of unit vectors per class: sum_{i != j} cos = |S|^2 - n
    let mut sums = vec![Array1::<f64>::zeros(e); n_classes];
    let mut counts = vec![0usize; n_classes];
    for (row, &c) in embeddings.rows().into_iter().zip(labels) {
        if c >= n_classes {
            return Err(Error::Shape(format!(
                "label {c} outside {n_classes} classes"
            )));
        }
        let norm = row.dot(&row).sqrt();
        if norm <= crate::pcl::NORM_FLOOR {
            return Err(Error::DegenerateEmbedding { row: 0, norm });
        }
        sums[c].scaled_add(1.0 / norm, &row);
        counts[c] += 1;
    }
    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..n_classes {
        let n = counts[c];
        if n < 2 {
            skipped.push(c);
            if n == 1 {
                per_class.push(ClassDistance {
                    class: c,
                    patches: n,
                    intra: None,
                });
            }
            continue;
        }
        let s2 = sums[c].dot(&sums[c]);
        let mean_cos = (s2 - n as f64) / (n * (n - 1)) as f64;
        per_class.push(ClassDistance {
            class: c,
            patches: n,
            intra: Some(1.0 - mean_cos),
        });
    }
    let qualifying: Vec<usize> = (0..n_classes).filter(|&c| counts[c] >= 2).collect();
    let mut inter_pairs = Vec::new();
    for (i, &a) in qualifying.iter().enumerate() {
        for &b in &qualifying[i + 1..] {
            let mean_cos = sums[a].dot(&sums[b]) / (counts[a] * counts[b]) as f64;
            inter_pairs.push((a, b, 1.0 - mean_cos));
        }
    }
    let intras: Vec<f64> = per_class.iter().filter_map(|c| c.intra).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let inters: Vec<f64> = inter_pairs.iter().map(|p| p.2).collect();
    Ok(CosineStats {
        intra: mean(&intras),
        inter: mean(&inters),
        per_class,
        inter_pairs,
        skipped,
    })
}

/// Cosine statistics of refined patch embeddings whose best class score
/// exceeds `eps`, labelled by that class (background included).
pub fn cosine_distance_stats(
    model: &Model,
    dataset: &dyn Dataset,
    eps: f64,
) -> Result<CosineStats> {
    let mut rows: Vec<Array1<f64>> = Vec::new();
    let mut labels = Vec::new();
    for i in 0..dataset.len() {
        let sample = dataset.get(i)?;
        let inf = model.infer(&sample.image)?;
        for (p, z) in inf.scores.z.rows().into_iter().enumerate() {
            let (best, score) =
                z.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc },
                    );
            if score > eps {
                rows.push(inf.f_out.values.row(p).to_owned());
                labels.push(best);
            }
        }
    }
    let width = model.config.encoder.width;
    let mut emb = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        emb.row_mut(i).assign(r);
    }
    cosine_distances(&emb, &labels, model.config.outputs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub class_id: usize,
    /// Class score per patch, `(grid_h, grid_w)`.
    pub grid: Array2<f64>,
    /// Bilinear upsampling to the input resolution.
    pub pixels: Array2<f64>,
}

/// Per-patch probability map for `class_id` (0 is background).
pub fn heatmap(model: &Model, image: &ImageTensor, class_id: usize) -> Result<Heatmap> {
    if class_id > model.config.n_classes {
        return Err(Error::Config(format!(
            "class {class_id} outside 0..={}",
            model.config.n_classes
        )));
    }
    let inf = model.infer(image)?;
    let column = inf.scores.z.column(class_id).to_owned();
    let grid = Array2::from_shape_vec((inf.grid.grid_h, inf.grid.grid_w), column.to_vec())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let mixer: Arc<RowMixer> = Arc::new(grid_upsampler(inf.grid, Upsample::Bilinear));
    let up = mixer.apply(column.insert_axis(ndarray::Axis(1)).view());
    let mut pixels = Array2::from_shape_vec(
        (inf.grid.pixel_h(), inf.grid.pixel_w()),
        up.into_raw_vec_and_offset().0,
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    if pixels.dim() != (image.height(), image.width()) {
        let mut rgb = ndarray::Array3::zeros((pixels.nrows(), pixels.ncols(), 3));
        for ((y, x), v) in pixels.indexed_iter() {
            for c in 0..3 {
                rgb[(y, x, c)] = v.clamp(0.0, 1.0);
            }
        }
        let resized = ImageTensor::new(rgb)?.resize(image.height(), image.width());
        pixels = Array2::from_shape_fn((image.height(), image.width()), |(y, x)| {
            resized.data()[(y, x, 0)]
        });
    }
    Ok(Heatmap {
        class_id,
        grid,
        pixels,
    })
}

/// Writes a heatmap as an 8-bit grayscale PNG.
pub fn save_heatmap(map: &Heatmap, path: impl AsRef<std::path::Path>) -> Result<()> {
    let (h, w) = map.pixels.dim();
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(map.pixels[(y as usize, x as usize)].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path)?;
    Ok(())
}
