//! Training loop: Adam with a two-step learning-rate schedule over the
//! weighted sum of multi-label classification, segmentation and patch
//! contrast losses.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::CrfConfig;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{cosine_distance_stats, evaluate, CosineStats, EvalReport};
use crate::graph::{Graph, Var};
use crate::head::PoolingConfig;
use crate::losses::{
    mce_loss_var, patch_pseudo_labels, seg_loss_var, LossWeights, PseudoLabelConfig,
};
use crate::model::{Model, ModelConfig};
use crate::nn::{Binder, ParamStore};
use crate::patchify::patch_labels_to_pixel_mask;
use crate::pcl::{partition_matrix, pce_loss_var, validate_eps};

/// Tolerance on patch score rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_high: f64,
    pub lr_low: f64,
    /// Epochs trained at `lr_high` before switching to `lr_low`.
    pub high_lr_epochs: usize,
    pub pooling: PoolingConfig,
    /// Confidence threshold of the patch contrast partition.
    pub eps: f64,
    /// Background threshold of the pseudo-labels.
    pub beta: f64,
    pub ignore_band: bool,
    pub weights: LossWeights,
    pub pcl_enabled: bool,
    pub seed: u64,
    /// Evaluate on the held-out set after every epoch (otherwise only after
    /// the last one).
    pub eval_every_epoch: bool,
    /// Mean-field refinement applied to evaluation predictions.
    pub crf: Option<CrfConfig>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            batch_size: 16,
            max_epochs: 15,
            lr_high: 1e-3,
            lr_low: 1e-4,
            high_lr_epochs: 2,
            pooling: PoolingConfig::default(),
            eps: 0.85,
            beta: 0.5,
            ignore_band: false,
            weights: LossWeights::default(),
            pcl_enabled: true,
            seed: 0,
            eval_every_epoch: false,
            crf: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pooling.validate()?;
        self.weights.validate()?;
        validate_eps(self.eps)?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size and epoch count must be >= 1".into(),
            ));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "beta = {} is invalid; the background threshold must lie in (0, 1)",
                self.beta
            )));
        }
        if self.ignore_band && self.beta > self.eps {
            return Err(Error::Config(format!(
                "ignore band [beta, eps) is empty: beta = {} > eps = {}",
                self.beta, self.eps
            )));
        }
        for (name, lr) in [("lr_high", self.lr_high), ("lr_low", self.lr_low)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} = {lr} must be a positive finite number"
                )));
            }
        }
        if let Some(crf) = &self.crf {
            crf.validate()?;
        }
        Ok(())
    }

    pub fn pseudo(&self) -> PseudoLabelConfig {
        PseudoLabelConfig {
            beta: self.beta,
            eps: self.eps,
            ignore_band: self.ignore_band,
        }
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if epoch <= self.high_lr_epochs {
            self.lr_high
        } else {
            self.lr_low
        }
    }
}

/// Adam with bias correction. Moments persist across learning-rate changes.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Array2<f64>>,
        lr: f64,
    ) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                });
        }
    }
}

/// Loss terms of one image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageLosses {
    pub total: f64,
    pub mce: f64,
    pub seg: f64,
    /// Sum of the per-class contrast terms.
    pub pce: f64,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    /// Score rows off the simplex or pooled scores outside `[0, 1]`.
    pub invariant_violations: usize,
}

struct Objective {
    total: Var,
    losses: ImageLosses,
}

fn image_objective(
    model: &Model,
    g: &mut Graph,
    b: &mut Binder,
    sample: &Sample,
    cfg: &TrainConfig,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<Objective> {
    let (image, _) = model.prepare(&sample.image);
    let fwd = model.forward_graph(g, b, &image, rng)?;
    let z = g.value(fwd.z).clone();
    let mut losses = ImageLosses::default();

    losses.invariant_violations += z
        .rows()
        .into_iter()
        .filter(|r| {
            let off = (r.sum() - 1.0).abs();
            off.is_nan() || off > ROW_SUM_TOL
        })
        .count();
    let selection = cfg.pooling.select_all(&z)?;
    let y = g.pool_selected(fwd.z, selection);
    losses.invariant_violations += g
        .value(y)
        .iter()
        .filter(|v| !(0.0..=1.0).contains(*v))
        .count();

    let targets = sample.labels.targets_with_background();
    let mce = mce_loss_var(g, y, &targets)?;

    // pseudo-labels only use classes the image is labelled with
    let mut allowed = z;
    for c in 1..allowed.ncols() {
        if !sample.labels.has(c) {
            allowed.column_mut(c).fill(0.0);
        }
    }
    let patch_labels = patch_pseudo_labels(&allowed, &cfg.pseudo());
    let mask = patch_labels_to_pixel_mask(&patch_labels, fwd.grid)?;
    let seg = seg_loss_var(g, fwd.pixel_logits, &mask)?;

    let seg_w = g.scale(seg, cfg.weights.seg);
    let mut total = g.add(mce, seg_w);
    let mut pce = None;
    if cfg.pcl_enabled {
        let partition = partition_matrix(g.value(fwd.z), cfg.eps)?;
        for c in sample.labels.ids() {
            let part = &partition.classes[c];
            losses.positive_pairs += part.positive_pairs();
            losses.negative_pairs += part.negative_pairs();
            if let Some(term) = pce_loss_var(g, fwd.f_out, &partition, c)? {
                pce = Some(match pce {
                    Some(acc) => g.add(acc, term),
                    None => term,
                });
            }
        }
        if let Some(p) = pce {
            losses.pce = g.scalar(p);
            let weighted = g.scale(p, cfg.weights.pce);
            total = g.add(total, weighted);
        }
    }
    losses.mce = g.scalar(mce);
    losses.seg = g.scalar(seg);
    losses.total = g.scalar(total);
    Ok(Objective { total, losses })
}

/// Loss terms of one sample under the current parameters, without dropout.
pub fn image_losses(model: &Model, sample: &Sample, cfg: &TrainConfig) -> Result<ImageLosses> {
    let mut g = Graph::new();
    let mut b = Binder::new(&model.params, false);
    Ok(image_objective(model, &mut g, &mut b, sample, cfg, None)?.losses)
}

/// Mean per-image objective over a dataset.
pub fn mean_objective(model: &Model, dataset: &dyn Dataset, cfg: &TrainConfig) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let mut acc = 0.0;
    for i in 0..dataset.len() {
        acc += image_losses(model, &dataset.get(i)?, cfg)?.total;
    }
    Ok(acc / dataset.len() as f64)
}

/// Loss and gradients of one sample, keyed by parameter name.
pub fn image_gradients(
    model: &Model,
    sample: &Sample,
    cfg: &TrainConfig,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<(ImageLosses, BTreeMap<String, Array2<f64>>)> {
    let mut g = Graph::new();
    let mut b = Binder::new(&model.params, true);
    let obj = image_objective(model, &mut g, &mut b, sample, cfg, rng)?;
    let mut grads = g.backward(obj.total);
    let out = b
        .bound()
        .filter_map(|(name, &v)| grads.take(v).map(|gr| (name.clone(), gr)))
        .collect();
    Ok((obj.losses, out))
}

/// State captured when the objective or its gradients stop being finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSnapshot {
    pub epoch: usize,
    pub batch: usize,
    pub step: i32,
    pub lr: f64,
    pub reason: String,
    pub sample_ids: Vec<String>,
    /// Per-image losses of the batch up to and including the offending one.
    pub losses: Vec<(String, ImageLosses)>,
    /// L2 norm of each parameter at the time of failure.
    pub param_norms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub steps: i32,
    pub mean_loss: f64,
    pub mean_mce: f64,
    pub mean_seg: f64,
    pub mean_pce: f64,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub eval: Option<EvalReport>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: TrainConfig,
    pub train_images: usize,
    pub epochs: Vec<EpochMetrics>,
    /// Held-out evaluation after the last epoch.
    pub eval: Option<EvalReport>,
    /// Cosine distances of confident patch embeddings on the held-out set.
    pub cosine: Option<CosineStats>,
    pub invariant_violations: usize,
    pub wall_clock_s: f64,
}

impl MetricsReport {
    pub fn miou(&self) -> Option<f64> {
        self.eval.as_ref().map(EvalReport::miou)
    }

    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// Copy with every wall-clock field zeroed, for run-to-run comparisons.
    pub fn without_timing(&self) -> MetricsReport {
        let mut r = self.clone();
        r.wall_clock_s = 0.0;
        for e in &mut r.epochs {
            e.wall_clock_s = 0.0;
        }
        r
    }

    /// One `key=value` line per epoch followed by a summary line.
    pub fn log_lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .epochs
            .iter()
            .map(|e| {
                let mut line = format!(
                    "epoch={} lr={} steps={} loss={:.6} mce={:.6} seg={:.6} pce={:.6} pos_pairs={} neg_pairs={} secs={:.2}",
                    e.epoch,
                    e.lr,
                    e.steps,
                    e.mean_loss,
                    e.mean_mce,
                    e.mean_seg,
                    e.mean_pce,
                    e.positive_pairs,
                    e.negative_pairs,
                    e.wall_clock_s
                );
                if let Some(ev) = &e.eval {
                    line.push_str(&format!(" miou={:.6} pseudo_miou={:.6}", ev.decoder.miou, ev.pseudo.miou));
                }
                line
            })
            .collect();
        let mut summary = format!(
            "final epochs={} invariant_violations={} secs={:.2}",
            self.epochs.len(),
            self.invariant_violations,
            self.wall_clock_s
        );
        if let Some(ev) = &self.eval {
            summary.push_str(&format!(
                " miou={:.6} pseudo_miou={:.6}",
                ev.decoder.miou, ev.pseudo.miou
            ));
        }
        if let Some(cs) = &self.cosine {
            if let (Some(intra), Some(inter)) = (cs.intra, cs.inter) {
                summary.push_str(&format!(" intra={intra:.6} inter={inter:.6}"));
            }
        }
        out.push(summary);
        out
    }
}

fn param_norms(params: &ParamStore) -> BTreeMap<String, f64> {
    params
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect()
}

/// Called after every epoch with the current model.
pub type EpochObserver<'a> = dyn FnMut(&Model, &EpochMetrics) -> Result<()> + 'a;

/// Trains a freshly initialised model. `eval_set` (if any) is scored after the
/// last epoch, or after every epoch when configured; its ground truth is only
/// read there.
pub fn train(
    train_set: &dyn Dataset,
    eval_set: Option<&dyn Dataset>,
    cfg: &TrainConfig,
    observer: &mut EpochObserver<'_>,
) -> Result<(Model, MetricsReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if train_set.n_classes() != cfg.model.n_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            train_set.n_classes(),
            cfg.model.n_classes
        )));
    }
    let start = Instant::now();
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut violations = 0;

    for epoch in 1..=cfg.max_epochs {
        let epoch_start = Instant::now();
        let lr = cfg.lr_for_epoch(epoch);
        order.shuffle(&mut rng);
        let mut sums = ImageLosses::default();
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: BTreeMap<String, Array2<f64>> = BTreeMap::new();
            let mut seen: Vec<(String, ImageLosses)> = Vec::with_capacity(batch.len());
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let sample = train_set.get(idx)?;
                let (losses, image_grads) = image_gradients(&model, &sample, cfg, Some(&mut rng))?;
                seen.push((sample.id.clone(), losses));
                let bad_grad = image_grads
                    .iter()
                    .find(|(_, gr)| gr.iter().any(|x| !x.is_finite()))
                    .map(|(name, _)| name.clone());
                let reason = if !losses.total.is_finite() {
                    Some(format!(
                        "non-finite loss {} on sample {}",
                        losses.total, sample.id
                    ))
                } else {
                    bad_grad.map(|name| {
                        format!("non-finite gradient for {name} on sample {}", sample.id)
                    })
                };
                if let Some(reason) = reason {
                    return Err(Error::Divergence(Box::new(DivergenceSnapshot {
                        epoch,
                        batch: batch_idx,
                        step: adam.steps(),
                        lr,
                        reason,
                        sample_ids: batch
                            .iter()
                            .map(|&i| train_set.get(i).map(|s| s.id))
                            .collect::<Result<_>>()?,
                        losses: seen,
                        param_norms: param_norms(&model.params),
                    })));
                }
                violations += losses.invariant_violations;
                accumulate(&mut sums, &losses);
                for (name, gr) in image_grads {
                    match grads.get_mut(&name) {
                        Some(acc) => acc.scaled_add(scale, &gr),
                        None => {
                            grads.insert(name, gr * scale);
                        }
                    }
                }
            }
            adam.step(&mut model.params, &grads, lr);
        }
        let n = train_set.len() as f64;
        let last = epoch == cfg.max_epochs;
        let eval = match eval_set {
            Some(ds) if cfg.eval_every_epoch || last => {
                Some(evaluate(&model, ds, &cfg.pseudo(), cfg.crf.as_ref())?)
            }
            _ => None,
        };
        let metrics = EpochMetrics {
            epoch,
            lr,
            steps: adam.steps(),
            mean_loss: sums.total / n,
            mean_mce: sums.mce / n,
            mean_seg: sums.seg / n,
            mean_pce: sums.pce / n,
            positive_pairs: sums.positive_pairs,
            negative_pairs: sums.negative_pairs,
            eval,
            wall_clock_s: epoch_start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: loss {:.5}", metrics.mean_loss);
        observer(&model, &metrics)?;
        epochs.push(metrics);
    }

    let eval = epochs.last().and_then(|e| e.eval.clone());
    let cosine = match eval_set {
        Some(ds) => Some(cosine_distance_stats(&model, ds, cfg.eps)?),
        None => None,
    };
    let report = MetricsReport {
        config: cfg.clone(),
        train_images: train_set.len(),
        epochs,
        eval,
        cosine,
        invariant_violations: violations,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

fn accumulate(acc: &mut ImageLosses, x: &ImageLosses) {
    acc.total += x.total;
    acc.mce += x.mce;
    acc.seg += x.seg;
    acc.pce += x.pce;
    acc.positive_pairs += x.positive_pairs;
    acc.negative_pairs += x.negative_pairs;
    acc.invariant_violations += x.invariant_violations;
}
