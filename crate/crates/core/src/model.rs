//! The full network: patch encoder, recurrent refinement, patch classifier
//! and segmentation decoder.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{self, CrfConfig};
use crate::decoder::{self, DecoderConfig, Tap};
use crate::encoder::{self, EncoderConfig, PatchEmbeddings};
use crate::error::{Error, Result};
use crate::graph::{softmax_rows, Graph, Var};
use crate::head::ClassScores;
use crate::nn::{self, Binder, ParamStore};
use crate::patchify::{partition, GridDims, ImageTensor, SegMask};

/// Parameter name of the patch classifier (`e x (n_classes + 1)`).
pub const CLASSIFIER: &str = "head.w";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Foreground classes; scores and logits carry one extra background
    /// column at index 0.
    pub n_classes: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: depth 4, 4 heads, width 192, 16 px patches.
    pub fn desk(n_classes: usize) -> Self {
        let encoder = EncoderConfig::default();
        let decoder = DecoderConfig::default_for_depth(encoder.depth, 64);
        Self {
            encoder,
            decoder,
            n_classes,
        }
    }

    /// A reduced configuration for quick experiments and the benchmark suite.
    pub fn compact(n_classes: usize) -> Self {
        let encoder = EncoderConfig {
            depth: 2,
            heads: 4,
            width: 48,
            lstm_hidden: 24,
            ..EncoderConfig::default()
        };
        let decoder = DecoderConfig::default_for_depth(encoder.depth, 32);
        Self {
            encoder,
            decoder,
            n_classes,
        }
    }

    pub fn outputs(&self) -> usize {
        self.n_classes + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate(self.encoder.depth)?;
        if self.n_classes == 0 || self.n_classes > 254 {
            return Err(Error::Config(format!(
                "n_classes = {} outside 1..=254",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = self.encoder.param_shapes();
        out.push((CLASSIFIER.to_string(), (self.encoder.width, self.outputs())));
        out.extend(
            self.decoder
                .param_shapes(self.encoder.width, self.outputs()),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    pub grid: GridDims,
    pub f_out: Var,
    /// Patch class probabilities `(s, n_classes + 1)`.
    pub z: Var,
    /// Decoder logits `(h * w, n_classes + 1)`.
    pub pixel_logits: Var,
}

/// Value-form forward pass.
#[derive(Debug, Clone)]
pub struct Inference {
    pub grid: GridDims,
    pub f_out: PatchEmbeddings,
    pub scores: ClassScores,
    pub pixel_logits: Array2<f64>,
    /// Whether the input had to be resized to a multiple of the patch side.
    pub resized: bool,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        config.encoder.init_params(&mut params, &mut rng);
        params.insert(
            CLASSIFIER,
            nn::normal(&mut rng, (config.encoder.width, config.outputs()), 0.02),
        );
        config.decoder.init_params(
            &mut params,
            &mut rng,
            config.encoder.width,
            config.outputs(),
        );
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        for (name, shape) in config.param_shapes() {
            params.expect_shape(&name, shape)?;
        }
        Ok(Self { config, params })
    }

    pub fn patch(&self) -> usize {
        self.config.encoder.patch
    }

    /// Resizes to a multiple of the patch side when needed.
    pub fn prepare(&self, image: &ImageTensor) -> (ImageTensor, bool) {
        image.resize_to_multiple(self.patch())
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        image: &ImageTensor,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<ForwardVars> {
        let grid = partition(image, self.patch())?;
        let dims = grid.dims();
        let tokens = g.constant(grid.tokens());
        let enc = encoder::encode_graph(g, b, &self.config.encoder, tokens, dims, rng)?;
        let f_out = encoder::refine_graph(
            g,
            b,
            enc.f_in,
            dims.grid_h,
            dims.grid_w,
            self.config.encoder.lstm_hidden,
        )?;
        let w = b.var(g, CLASSIFIER)?;
        let logits = g.matmul(f_out, w);
        let z = g.softmax_rows(logits);
        let levels: Vec<Var> = self
            .config
            .decoder
            .taps
            .iter()
            .map(|t| match t {
                Tap::Block(i) => enc.blocks[*i],
                Tap::Refined => f_out,
            })
            .collect();
        let pixel_logits = decoder::decode_graph(g, b, &self.config.decoder, &levels, dims)?;
        Ok(ForwardVars {
            grid: dims,
            f_out,
            z,
            pixel_logits,
        })
    }

    pub fn infer(&self, image: &ImageTensor) -> Result<Inference> {
        let (image, resized) = self.prepare(image);
        let mut g = Graph::new();
        let mut b = Binder::new(&self.params, false);
        let fwd = self.forward_graph(&mut g, &mut b, &image, None)?;
        Ok(Inference {
            grid: fwd.grid,
            f_out: PatchEmbeddings::new(g.value(fwd.f_out).clone())?,
            scores: ClassScores {
                z: g.value(fwd.z).clone(),
            },
            pixel_logits: g.value(fwd.pixel_logits).clone(),
            resized,
        })
    }

    /// Decoder arg-max mask at the input resolution, optionally CRF-refined.
    pub fn predict_mask(
        &self,
        image: &ImageTensor,
        crf_cfg: Option<&CrfConfig>,
    ) -> Result<SegMask> {
        let inf = self.infer(image)?;
        self.mask_from_inference(&inf, image, crf_cfg)
    }

    /// Same as [`Model::predict_mask`] for an inference already computed on
    /// `image`.
    pub fn mask_from_inference(
        &self,
        inf: &Inference,
        image: &ImageTensor,
        crf_cfg: Option<&CrfConfig>,
    ) -> Result<SegMask> {
        let (h, w) = (inf.grid.pixel_h(), inf.grid.pixel_w());
        let probs = softmax_rows(inf.pixel_logits.view());
        let mask = match crf_cfg {
            Some(cfg) => {
                let probs3 = Array3::from_shape_vec(
                    (h, w, self.config.outputs()),
                    probs.into_raw_vec_and_offset().0,
                )
                .map_err(|e| Error::Shape(e.to_string()))?;
                let (prepared, _) = self.prepare(image);
                crf::refine(probs3.view(), &prepared, cfg)?
            }
            None => SegMask::new(Array2::from_shape_fn((h, w), |(y, x)| {
                let row = probs.row(y * w + x);
                let mut best = 0usize;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best as u8
            })),
        };
        if mask.dim() == (image.height(), image.width()) {
            Ok(mask)
        } else {
            Ok(mask.resize_nearest(image.height(), image.width()))
        }
    }
}
