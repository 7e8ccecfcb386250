//! MLP segmentation head over several encoder feature levels.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::PatchEmbeddings;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{self, Binder, ParamStore};
use crate::patchify::{grid_upsampler, GridDims, Upsample};

/// Where a decoder input level comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    /// Residual stream after transformer block `i`.
    Block(usize),
    /// Refined embeddings after the recurrent pass.
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub taps: Vec<Tap>,
    pub proj_dim: usize,
    pub upsample: Upsample,
}

impl DecoderConfig {
    /// Last two transformer blocks plus the refined embeddings.
    pub fn default_for_depth(depth: usize, proj_dim: usize) -> Self {
        let mut taps: Vec<Tap> = (depth.saturating_sub(2)..depth).map(Tap::Block).collect();
        taps.push(Tap::Refined);
        Self {
            taps,
            proj_dim,
            upsample: Upsample::Bilinear,
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::Config("decoder needs at least one tap".into()));
        }
        if let Some(Tap::Block(i)) = self
            .taps
            .iter()
            .find(|t| matches!(t, Tap::Block(i) if *i >= depth))
        {
            return Err(Error::Config(format!(
                "decoder taps block {i} of an encoder with depth {depth}"
            )));
        }
        if self.proj_dim == 0 {
            return Err(Error::Config("decoder proj_dim must be > 0".into()));
        }
        Ok(())
    }

    pub fn param_shapes(&self, width: usize, n_out: usize) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        for level in 0..self.taps.len() {
            out.push((format!("dec.level{level}.w"), (width, self.proj_dim)));
            out.push((format!("dec.level{level}.b"), (1, self.proj_dim)));
        }
        let fused = self.taps.len() * self.proj_dim;
        out.push(("dec.fuse.w".into(), (fused, self.proj_dim)));
        out.push(("dec.fuse.b".into(), (1, self.proj_dim)));
        out.push(("dec.cls.w".into(), (self.proj_dim, n_out)));
        out.push(("dec.cls.b".into(), (1, n_out)));
        out
    }

    pub fn init_params(
        &self,
        store: &mut ParamStore,
        rng: &mut impl Rng,
        width: usize,
        n_out: usize,
    ) {
        for level in 0..self.taps.len() {
            nn::init_linear(
                store,
                rng,
                &format!("dec.level{level}"),
                width,
                self.proj_dim,
            );
        }
        nn::init_linear(
            store,
            rng,
            "dec.fuse",
            self.taps.len() * self.proj_dim,
            self.proj_dim,
        );
        nn::init_linear(store, rng, "dec.cls", self.proj_dim, n_out);
    }
}

/// Per-level projection, concatenation, fusion MLP and upsampling to
/// `(pixel_h * pixel_w, n_out)` logits.
pub fn decode_graph(
    g: &mut Graph,
    b: &mut Binder,
    cfg: &DecoderConfig,
    levels: &[Var],
    grid: GridDims,
) -> Result<Var> {
    if levels.len() != cfg.taps.len() {
        return Err(Error::Shape(format!(
            "{} feature levels for {} decoder taps",
            levels.len(),
            cfg.taps.len()
        )));
    }
    let mut projected = Vec::with_capacity(levels.len());
    for (i, &level) in levels.iter().enumerate() {
        if g.value(level).nrows() != grid.patches() {
            return Err(Error::Shape(format!(
                "level {i} has {} rows for {} patches",
                g.value(level).nrows(),
                grid.patches()
            )));
        }
        projected.push(nn::linear(g, b, &format!("dec.level{i}"), level)?);
    }
    let cat = if projected.len() == 1 {
        projected[0]
    } else {
        g.concat_cols(&projected)
    };
    let h = nn::linear(g, b, "dec.fuse", cat)?;
    let h = g.gelu(h);
    let patch_logits = nn::linear(g, b, "dec.cls", h)?;
    let up = grid_upsampler(grid, cfg.upsample);
    Ok(g.mix_rows(patch_logits, Arc::new(up)))
}

/// Eval-mode decoder forward pass; returns `(pixel_h * pixel_w, n_out)` logits.
pub fn decode(
    levels: &[PatchEmbeddings],
    grid: GridDims,
    cfg: &DecoderConfig,
    params: &ParamStore,
) -> Result<Array2<f64>> {
    let width = levels
        .first()
        .map(PatchEmbeddings::width)
        .ok_or_else(|| Error::Shape("no feature levels".into()))?;
    let n_out = params.get("dec.cls.w")?.ncols();
    for (name, shape) in cfg.param_shapes(width, n_out) {
        params.expect_shape(&name, shape)?;
    }
    let mut g = Graph::new();
    let mut b = Binder::new(params, false);
    let vars: Vec<Var> = levels
        .iter()
        .map(|l| g.constant(l.values.clone()))
        .collect();
    let out = decode_graph(&mut g, &mut b, cfg, &vars, grid)?;
    Ok(g.value(out).clone())
}
