//! Pooling-strategy and contrast-loss ablations over several seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::head::PoolingMode;
use crate::train::{train, MetricsReport, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub pooling: PoolingMode,
    pub pcl: bool,
}

impl Variant {
    pub fn new(pooling: PoolingMode, pcl: bool) -> Self {
        Self { pooling, pcl }
    }

    pub fn label(&self) -> String {
        if self.pcl {
            format!("{}+pcl", self.pooling)
        } else {
            self.pooling.to_string()
        }
    }

    /// Every pooling mode with and without the contrast loss.
    pub fn grid() -> Vec<Variant> {
        [false, true]
            .into_iter()
            .flat_map(|pcl| {
                PoolingMode::ALL
                    .into_iter()
                    .map(move |p| Variant::new(p, pcl))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub miou: f64,
    pub pseudo_miou: f64,
    pub intra: Option<f64>,
    pub inter: Option<f64>,
    pub invariant_violations: usize,
    pub wall_clock_s: f64,
}

impl SeedRun {
    fn from_report(seed: u64, r: &MetricsReport) -> Self {
        let eval = r.eval.as_ref();
        Self {
            seed,
            miou: eval.map_or(f64::NAN, |e| e.decoder.miou),
            pseudo_miou: eval.map_or(f64::NAN, |e| e.pseudo.miou),
            intra: r.cosine.as_ref().and_then(|c| c.intra),
            inter: r.cosine.as_ref().and_then(|c| c.inter),
            invariant_violations: r.invariant_violations,
            wall_clock_s: r.wall_clock_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub runs: Vec<SeedRun>,
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

impl VariantResult {
    pub fn median_miou(&self) -> Option<f64> {
        median(self.runs.iter().map(|r| r.miou))
    }

    pub fn median_pseudo_miou(&self) -> Option<f64> {
        median(self.runs.iter().map(|r| r.pseudo_miou))
    }

    pub fn median_intra(&self) -> Option<f64> {
        median(self.runs.iter().filter_map(|r| r.intra))
    }

    pub fn median_inter(&self) -> Option<f64> {
        median(self.runs.iter().filter_map(|r| r.inter))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// In the order the variants were requested.
    pub rows: Vec<VariantResult>,
}

impl AblationTable {
    pub fn get(&self, variant: Variant) -> Option<&VariantResult> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Rows sorted by median mIoU, best first.
    pub fn ranked(&self) -> Vec<&VariantResult> {
        let mut rows: Vec<&VariantResult> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            let key = |r: &VariantResult| r.median_miou().unwrap_or(f64::NEG_INFINITY);
            key(b).total_cmp(&key(a))
        });
        rows
    }

    pub fn render(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4} {:<10} {:>10} {:>12} {:>8} {:>8}  per-seed mIoU",
            "rank", "variant", "median", "pseudo", "intra", "inter"
        );
        for (i, row) in self.ranked().into_iter().enumerate() {
            let seeds: Vec<String> = row.runs.iter().map(|r| format!("{:.4}", r.miou)).collect();
            let _ = writeln!(
                out,
                "{:<4} {:<10} {:>10} {:>12} {:>8} {:>8}  {}",
                i + 1,
                row.variant.label(),
                fmt(row.median_miou()),
                fmt(row.median_pseudo_miou()),
                fmt(row.median_intra()),
                fmt(row.median_inter()),
                seeds.join(" ")
            );
        }
        out
    }
}

/// Trains every variant once per seed on the same data and order, and
/// scores it on `eval_set`. `progress` sees each finished run.
pub fn ablate(
    train_set: &dyn Dataset,
    eval_set: &dyn Dataset,
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    progress: &mut dyn FnMut(Variant, u64, &MetricsReport),
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.pooling.mode = variant.pooling;
            cfg.pcl_enabled = variant.pcl;
            cfg.seed = seed;
            let (_, report) = train(train_set, Some(eval_set), &cfg, &mut |_, _| Ok(()))?;
            progress(variant, seed, &report);
            runs.push(SeedRun::from_report(seed, &report));
        }
        rows.push(VariantResult { variant, runs });
    }
    Ok(AblationTable { rows })
}
