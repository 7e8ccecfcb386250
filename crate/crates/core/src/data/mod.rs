//! Samples, datasets and their on-disk layout.

mod synthetic;
mod voc;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

pub use synthetic::{gen_synthetic, ShapeClass, SyntheticConfig};
pub use voc::{
    load_voc_format, write_voc_format, VocDataset, VocOptions, CLASSES_FILE, LABELS_FILE, VAL_FILE,
};

use crate::error::Result;
use crate::losses::ImageLabels;
use crate::patchify::{ImageTensor, SegMask};

/// Pixel ground truth kept for evaluation. Every read is recorded so tests
/// can prove training never touches it.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    mask: Arc<SegMask>,
    accessed: Arc<AtomicBool>,
}

impl GroundTruth {
    pub fn new(mask: SegMask) -> Self {
        Self {
            mask: Arc::new(mask),
            accessed: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn mask(&self) -> &SegMask {
        self.accessed.store(true, Ordering::SeqCst);
        &self.mask
    }

    pub fn was_accessed(&self) -> bool {
        self.accessed.load(Ordering::SeqCst)
    }

    pub fn reset_access(&self) {
        self.accessed.store(false, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub labels: ImageLabels,
    pub gt: Option<GroundTruth>,
}

impl Sample {
    /// Evaluation-only access to the pixel ground truth.
    pub fn gt_mask(&self) -> Option<&SegMask> {
        self.gt.as_ref().map(GroundTruth::mask)
    }
}

pub trait Dataset {
    fn len(&self) -> usize;

    fn get(&self, index: usize) -> Result<Sample>;

    /// Number of foreground classes.
    fn n_classes(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fully materialised dataset.
#[derive(Debug, Clone)]
pub struct InMemoryDataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
}

impl InMemoryDataset {
    pub fn any_gt_accessed(&self) -> bool {
        self.samples
            .iter()
            .any(|s| s.gt.as_ref().is_some_and(GroundTruth::was_accessed))
    }

    pub fn reset_gt_access(&self) {
        for s in &self.samples {
            if let Some(gt) = &s.gt {
                gt.reset_access();
            }
        }
    }

    pub fn split_at(mut self, n: usize) -> (InMemoryDataset, InMemoryDataset) {
        let rest = self.samples.split_off(n.min(self.samples.len()));
        (
            self.clone(),
            InMemoryDataset {
                samples: rest,
                n_classes: self.n_classes,
            },
        )
    }
}

impl Dataset for InMemoryDataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        self.samples.get(index).cloned().ok_or_else(|| {
            crate::error::Error::Shape(format!(
                "sample {index} out of range for {} samples",
                self.samples.len()
            ))
        })
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }
}
