//! Datasets, splits, batching and augmentation.

mod pnm;
mod synth;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::Task;

pub use pnm::{load_index, read_image, write_mask_pgm};
pub use synth::{synth_classification, synth_segmentation, TINY_AREA_FRACTION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format {
                what: "split tag",
                detail: format!("{s:?} is not train, val or test"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    /// Binary `1×H×W` mask.
    Mask(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `C×H×W`.
    pub image: Tensor,
    pub label: Label,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    /// 2 for segmentation (background, foreground).
    pub n_classes: usize,
    pub samples: Vec<Sample>,
}

/// A stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `B×C×H×W`.
    pub images: Tensor,
    /// One-hot `B×K` labels or `B×1×H×W` masks.
    pub target: Tensor,
    /// Class indices; empty for segmentation.
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[C, H, W]` of the first image.
    pub fn in_shape(&self) -> Result<[usize; 3]> {
        let s = self
            .samples
            .first()
            .ok_or_else(|| Error::Contract("empty dataset has no input shape".into()))?
            .image
            .shape();
        Ok([s[0], s[1], s[2]])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            if let Label::Class(c) = s.label {
                counts[c] += 1;
            }
        }
        counts
    }

    /// Samples tagged with `split`.
    pub fn tagged(&self, split: Split) -> Dataset {
        Dataset {
            task: self.task,
            n_classes: self.n_classes,
            samples: self
                .samples
                .iter()
                .filter(|s| s.split == Some(split))
                .cloned()
                .collect(),
        }
    }

    /// Stacks the samples at `indices` into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let images: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].image).collect();
        let images = Tensor::stack(&images)?;
        let (target, labels) = match self.task {
            Task::Classification => {
                let k = self.n_classes;
                let labels = indices
                    .iter()
                    .map(|&i| match self.samples[i].label {
                        Label::Class(c) => Ok(c),
                        Label::Mask(_) => Err(Error::Contract("mask label in a classification set".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let t = Tensor::from_fn(&[labels.len(), k], |j| {
                    if labels[j / k] == j % k {
                        1.0
                    } else {
                        0.0
                    }
                });
                (t, labels)
            }
            Task::Segmentation => {
                let masks = indices
                    .iter()
                    .map(|&i| match &self.samples[i].label {
                        Label::Mask(m) => Ok(m),
                        Label::Class(_) => Err(Error::Contract("class label in a segmentation set".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Tensor::stack(&masks)?, vec![])
            }
        };
        Ok(Batch {
            images,
            target,
            labels,
        })
    }

    /// Hex SHA-256 over task, shapes, pixel bits and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}:{}:{}", self.task, self.n_classes, self.len()));
        for s in &self.samples {
            for d in s.image.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in s.image.data() {
                h.update(v.to_bits().to_le_bytes());
            }
            match &s.label {
                Label::Class(c) => h.update((*c as u64).to_le_bytes()),
                Label::Mask(m) => {
                    for v in m.data() {
                        h.update([u8::from(*v > 0.5)]);
                    }
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Split sizes for `n` samples at 75:10:15.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n * 75 + 50) / 100;
    let val = (n * 10 + 50) / 100;
    (train, val, n - train - val)
}

/// Disjoint, exhaustive 75:10:15 split. Classification sets are
/// stratified: samples are shuffled within each class and interleaved
/// round-robin, so every prefix keeps the class balance within one sample.
pub fn split(ds: &Dataset, seed: u64) -> (Dataset, Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match ds.task {
        Task::Classification => {
            let mut by_class: Vec<Vec<usize>> = vec![vec![]; ds.n_classes];
            for (i, s) in ds.samples.iter().enumerate() {
                if let Label::Class(c) = s.label {
                    by_class[c].push(i);
                }
            }
            for v in &mut by_class {
                v.shuffle(&mut rng);
            }
            let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
            (0..longest)
                .flat_map(|r| by_class.iter().filter_map(move |v| v.get(r).copied()))
                .collect()
        }
        Task::Segmentation => {
            let mut v: Vec<usize> = (0..ds.len()).collect();
            v.shuffle(&mut rng);
            v
        }
    };
    let (n_train, n_val, _) = split_sizes(ds.len());
    let take = |range: std::ops::Range<usize>, tag: Split| Dataset {
        task: ds.task,
        n_classes: ds.n_classes,
        samples: order[range]
            .iter()
            .map(|&i| Sample {
                split: Some(tag),
                ..ds.samples[i].clone()
            })
            .collect(),
    };
    (
        take(0..n_train, Split::Train),
        take(n_train..n_train + n_val, Split::Val),
        take(n_train + n_val..ds.len(), Split::Test),
    )
}

/// Spatial transform applied identically to an image and its mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Transform {
    hflip: bool,
    vflip: bool,
    /// Quarter turns counter-clockwise.
    quarter_turns: usize,
}

impl Transform {
    fn draw(rng: &mut ChaCha8Rng, square: bool) -> Self {
        let hflip = rng.gen_bool(0.5);
        let vflip = rng.gen_bool(0.5);
        let k = rng.gen_range(0..4);
        Transform {
            hflip,
            vflip,
            quarter_turns: if square { k } else { k & !1 },
        }
    }

    /// Applies to a `B×C×H×W` slab at sample `b`.
    fn apply(&self, t: &Tensor, b: usize) -> Vec<f32> {
        let s = t.shape();
        let (c, h, w) = (s[1], s[2], s[3]);
        let plane = h * w;
        let src = &t.data()[b * c * plane..(b + 1) * c * plane];
        let mut out = vec![0.0; c * plane];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let (mut sy, mut sx) = (y, x);
                    // Output (y, x) reads from the source pixel that lands
                    // there after flips and then rotation.
                    for _ in 0..self.quarter_turns {
                        // inverse of one CCW turn on a square grid
                        (sy, sx) = (sx, h - 1 - sy);
                    }
                    if self.vflip {
                        sy = h - 1 - sy;
                    }
                    if self.hflip {
                        sx = w - 1 - sx;
                    }
                    out[ch * plane + y * w + x] = src[ch * plane + sy * w + sx];
                }
            }
        }
        out
    }
}

/// Random flips (each p = 0.5) and quarter turns (each of 0–3 with
/// p = 0.25) per sample; masks follow their images.
pub fn augment(batch: &Batch, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = batch.images.shape();
    let square = s[2] == s[3];
    let mut images = Vec::with_capacity(batch.images.numel());
    let mut masks = Vec::new();
    let seg = batch.target.rank() == 4;
    for b in 0..s[0] {
        let tf = Transform::draw(&mut rng, square);
        images.extend(tf.apply(&batch.images, b));
        if seg {
            masks.extend(tf.apply(&batch.target, b));
        }
    }
    Ok(Batch {
        images: Tensor::new(s, images)?,
        target: if seg {
            Tensor::new(batch.target.shape(), masks)?
        } else {
            batch.target.clone()
        },
        labels: batch.labels.clone(),
    })
}

/// Epoch-wise shuffled mini-batch index lists; the last batch may be short.
pub fn batch_order(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
