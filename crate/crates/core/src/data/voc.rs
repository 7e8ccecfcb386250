//! Folder datasets with image-level labels.
//!
//! ```text
//! root/
//!   labels.txt        one line per image: `<id>[,<class id>]*`
//!   val.txt           optional held-out split, same grammar
//!   classes.txt       optional, one class name per line (line i -> id i)
//!   images/<id>.png   RGB
//!   masks/<id>.png    optional, single channel, pixel value = class id
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};

use super::{Dataset, GroundTruth, Sample};
use crate::error::{Error, Result};
use crate::losses::ImageLabels;
use crate::patchify::{ImageTensor, SegMask};

pub const LABELS_FILE: &str = "labels.txt";
pub const VAL_FILE: &str = "val.txt";
pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VocOptions {
    /// Labels file inside the root, `labels.txt` when unset.
    pub labels_file: Option<String>,
    /// Foreground class count; read from `classes.txt` (or the largest id)
    /// when unset.
    pub n_classes: Option<usize>,
    /// Resize every image (and mask) to `(h, w)`.
    pub resize: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Entry {
    id: String,
    class_ids: Vec<usize>,
}

/// Lazily loaded folder dataset; images are decoded on [`Dataset::get`].
#[derive(Debug, Clone)]
pub struct VocDataset {
    root: PathBuf,
    entries: Vec<Entry>,
    n_classes: usize,
    resize: Option<(usize, usize)>,
}

fn parse_labels(path: &Path) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |msg: String| Error::MalformedLabels {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let mut fields = line.split(',').map(str::trim);
        let id = fields.next().unwrap_or_default();
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(malformed(format!("invalid image id `{id}`")));
        }
        let mut class_ids = Vec::new();
        for f in fields {
            let c: usize = f
                .parse()
                .map_err(|_| malformed(format!("class id `{f}` is not a non-negative integer")))?;
            if c == 0 {
                return Err(malformed("class id 0 is reserved for background".into()));
            }
            class_ids.push(c);
        }
        entries.push(Entry {
            id: id.to_string(),
            class_ids,
        });
    }
    Ok(entries)
}

impl VocDataset {
    pub fn open(root: impl AsRef<Path>, opts: &VocOptions) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let labels_path = root.join(opts.labels_file.as_deref().unwrap_or(LABELS_FILE));
        let entries = parse_labels(&labels_path)?;

        let missing: Vec<String> = entries
            .iter()
            .filter(|e| !root.join("images").join(format!("{}.png", e.id)).is_file())
            .map(|e| e.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingImages(missing));
        }

        let max_id = entries
            .iter()
            .flat_map(|e| e.class_ids.iter().copied())
            .max()
            .unwrap_or(0);
        let n_classes = match opts.n_classes {
            Some(n) => n,
            None => {
                let classes = root.join(CLASSES_FILE);
                if classes.is_file() {
                    fs::read_to_string(classes)?
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .count()
                } else {
                    max_id
                }
            }
        };
        if max_id > n_classes {
            return Err(Error::MalformedLabels {
                path: labels_path,
                line: 0,
                msg: format!("class id {max_id} exceeds the {n_classes} known classes"),
            });
        }
        Ok(Self {
            root,
            entries,
            n_classes,
            resize: opts.resize,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

fn read_image(path: &Path) -> Result<ImageTensor> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
    });
    ImageTensor::new(data)
}

fn read_mask(path: &Path) -> Result<SegMask> {
    let gray = image::open(path)?.to_luma8();
    let (w, h) = gray.dimensions();
    Ok(SegMask::new(Array2::from_shape_fn(
        (h as usize, w as usize),
        |(y, x)| gray.get_pixel(x as u32, y as u32)[0],
    )))
}

impl Dataset for VocDataset {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        let entry = self.entries.get(index).ok_or_else(|| {
            Error::Shape(format!(
                "sample {index} out of range for {} samples",
                self.entries.len()
            ))
        })?;
        let mut image = read_image(&self.root.join("images").join(format!("{}.png", entry.id)))?;
        let mask_path = self.root.join("masks").join(format!("{}.png", entry.id));
        let mut mask = if mask_path.is_file() {
            Some(read_mask(&mask_path)?)
        } else {
            None
        };
        if let Some((h, w)) = self.resize {
            image = image.resize(h, w);
            mask = mask.map(|m| m.resize_nearest(h, w));
        }
        Ok(Sample {
            id: entry.id.clone(),
            image,
            labels: ImageLabels::from_ids(self.n_classes, &entry.class_ids)?,
            gt: mask.map(GroundTruth::new),
        })
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }
}

pub fn load_voc_format(root: impl AsRef<Path>) -> Result<VocDataset> {
    VocDataset::open(root, &VocOptions::default())
}

fn to_rgb8(image: &ImageTensor) -> RgbImage {
    let data = image.data();
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let px = |c| {
            (data[(y as usize, x as usize, c)] * 255.0)
                .round()
                .clamp(0.0, 255.0) as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

pub(crate) fn mask_to_gray(mask: &SegMask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        image::Luma([mask.classes[(y as usize, x as usize)]])
    })
}

/// Writes samples in the folder layout. `labels_file` names the list file
/// (e.g. [`LABELS_FILE`] or [`VAL_FILE`]); images and masks share folders.
pub fn write_voc_format<'a>(
    root: impl AsRef<Path>,
    labels_file: &str,
    samples: impl IntoIterator<Item = &'a Sample>,
    class_names: &[&str],
) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("masks"))?;
    let mut labels = fs::File::create(root.join(labels_file))?;
    for s in samples {
        let mut line = s.id.clone();
        for id in s.labels.ids() {
            line.push_str(&format!(",{id}"));
        }
        writeln!(labels, "{line}")?;
        to_rgb8(&s.image).save(root.join("images").join(format!("{}.png", s.id)))?;
        if let Some(gt) = &s.gt {
            mask_to_gray(&gt.mask).save(root.join("masks").join(format!("{}.png", s.id)))?;
        }
    }
    let mut classes = fs::File::create(root.join(CLASSES_FILE))?;
    for name in class_names {
        writeln!(classes, "{name}")?;
    }
    Ok(())
}
