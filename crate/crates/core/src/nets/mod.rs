//! Desk-scale teacher and student architectures.
//!
//! Classification uses plain conv blocks followed by global average pooling
//! and a linear head; segmentation uses a two-level encoder-decoder with skip
//! connections. Each network declares one feature tap: the last conv block
//! for classifiers, the first decoder conv for segmenters.

mod adapter;
pub mod checkpoint;
mod params;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::Task;

pub use adapter::AdapterBlock;
pub use params::{Bound, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capacity {
    Teacher,
    Student,
}

/// Layer whose activation a network exports for feature sharing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTap {
    pub network: String,
    pub layer: String,
    /// `D × N × N` (channels, height, width), batch axis excluded.
    pub shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
enum Arch {
    Classifier {
        widths: Vec<usize>,
        pooled: usize,
        n_classes: usize,
    },
    Segmenter {
        widths: (usize, usize),
    },
}

/// Result of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `B×K` class logits or `B×1×H×W` pixel logits.
    pub logits: Var,
    pub taps: BTreeMap<String, Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    name: String,
    capacity: Capacity,
    in_shape: [usize; 3],
    arch: Arch,
    params: ParamSet,
    tap_layer: String,
}

const CLASSIFIER_TEACHER: [usize; 4] = [16, 32, 64, 64];
const CLASSIFIER_STUDENT: [usize; 2] = [8, 16];
const SEGMENTER_TEACHER: (usize, usize) = (16, 32);
const SEGMENTER_STUDENT: (usize, usize) = (8, 16);

impl Network {
    /// Teacher: 4 conv blocks (16, 32, 64, 64); student: 2 blocks (8, 16).
    /// The first two blocks halve the resolution.
    pub fn build_classifier(
        name: &str,
        capacity: Capacity,
        in_shape: [usize; 3],
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Contract(format!(
                "classifier needs at least 2 classes, got {n_classes}"
            )));
        }
        let [c, h, w] = in_shape;
        if c == 0 || h < 4 || w < 4 {
            return Err(Error::Contract(format!(
                "classifier input {in_shape:?} must have channels and at least 4×4 pixels"
            )));
        }
        let widths: Vec<usize> = match capacity {
            Capacity::Teacher => CLASSIFIER_TEACHER.to_vec(),
            Capacity::Student => CLASSIFIER_STUDENT.to_vec(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut cin = c;
        for (i, &wd) in widths.iter().enumerate() {
            params.push(
                format!("block{}.w", i + 1),
                params::he_uniform(&mut rng, &[wd, cin, 3, 3], cin * 9),
            );
            params.push(format!("block{}.b", i + 1), Tensor::zeros(&[wd]));
            cin = wd;
        }
        params.push("head.w", params::he_uniform(&mut rng, &[cin, n_classes], cin));
        params.push("head.b", Tensor::zeros(&[n_classes]));
        let tap_layer = format!("block{}", widths.len());
        Ok(Network {
            name: name.to_owned(),
            capacity,
            in_shape,
            arch: Arch::Classifier {
                widths,
                pooled: 2,
                n_classes,
            },
            params,
            tap_layer,
        })
    }

    /// Two-level encoder-decoder with skip connections and a sigmoid head.
    /// Teacher widths (16, 32), student (8, 16).
    pub fn build_segmenter(
        name: &str,
        capacity: Capacity,
        in_shape: [usize; 3],
        seed: u64,
    ) -> Result<Self> {
        let [c, h, w] = in_shape;
        if c == 0 || h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Contract(format!(
                "segmenter input {in_shape:?}: height and width must be positive multiples of 4"
            )));
        }
        let (w1, w2) = match capacity {
            Capacity::Teacher => SEGMENTER_TEACHER,
            Capacity::Student => SEGMENTER_STUDENT,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut conv = |params: &mut ParamSet, name: &str, cout: usize, cin: usize| {
            params.push(
                format!("{name}.w"),
                params::he_uniform(&mut rng, &[cout, cin, 3, 3], cin * 9),
            );
            params.push(format!("{name}.b"), Tensor::zeros(&[cout]));
        };
        conv(&mut params, "enc1", w1, c);
        conv(&mut params, "enc2", w2, w1);
        conv(&mut params, "bottleneck", w2, w2);
        conv(&mut params, "dec1", w1, 2 * w2);
        conv(&mut params, "head", 1, 2 * w1);
        Ok(Network {
            name: name.to_owned(),
            capacity,
            in_shape,
            arch: Arch::Segmenter { widths: (w1, w2) },
            params,
            tap_layer: "dec1".into(),
        })
    }

    /// Builds the architecture matching `task`.
    pub fn build(
        task: Task,
        name: &str,
        capacity: Capacity,
        in_shape: [usize; 3],
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        match task {
            Task::Classification => {
                Self::build_classifier(name, capacity, in_shape, n_classes, seed)
            }
            Task::Segmentation => Self::build_segmenter(name, capacity, in_shape, seed),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    pub fn task(&self) -> Task {
        match self.arch {
            Arch::Classifier { .. } => Task::Classification,
            Arch::Segmenter { .. } => Task::Segmentation,
        }
    }

    pub fn in_shape(&self) -> [usize; 3] {
        self.in_shape
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }

    /// The network's exported feature tap.
    pub fn feature_tap(&self) -> FeatureTap {
        let [_, h, w] = self.in_shape;
        let shape = match &self.arch {
            Arch::Classifier { widths, pooled, .. } => {
                let div = 1usize << pooled;
                [*widths.last().expect("non-empty widths"), h / div, w / div]
            }
            Arch::Segmenter { widths } => [widths.0, h / 2, w / 2],
        };
        FeatureTap {
            network: self.name.clone(),
            layer: self.tap_layer.clone(),
            shape,
        }
    }

    /// Looks up a declared tap by layer name.
    pub fn tap(&self, layer: &str) -> Result<FeatureTap> {
        let tap = self.feature_tap();
        if tap.layer == layer {
            Ok(tap)
        } else {
            Err(Error::Config(format!(
                "network {} has no tap at layer {layer} (declared: {})",
                self.name, tap.layer
            )))
        }
    }

    pub fn bind<E: Element>(&self, g: &mut Graph<E>, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    /// Records the forward pass and returns logits together with every tap
    /// activation from the same pass.
    pub fn forward<E: Element>(&self, g: &mut Graph<E>, p: &Bound, x: Var) -> Result<Forward> {
        let xs = g.shape(x);
        if xs.len() != 4 || xs[1..] != self.in_shape {
            return Err(Error::dim("forward", xs, &self.in_shape));
        }
        let mut taps = BTreeMap::new();
        let logits = match &self.arch {
            Arch::Classifier { widths, pooled, .. } => {
                let mut h = x;
                for i in 0..widths.len() {
                    let name = format!("block{}", i + 1);
                    h = conv_relu(g, p, &name, h)?;
                    if i < *pooled {
                        h = g.max_pool2d(h, 2)?;
                    }
                    if name == self.tap_layer {
                        taps.insert(name, h);
                    }
                }
                let pooled = g.mean_spatial(h)?;
                let z = g.matmul(pooled, p.get("head.w")?)?;
                g.add_row_bias(z, p.get("head.b")?)?
            }
            Arch::Segmenter { .. } => {
                let e1 = conv_relu(g, p, "enc1", x)?;
                let p1 = g.max_pool2d(e1, 2)?;
                let e2 = conv_relu(g, p, "enc2", p1)?;
                let p2 = g.max_pool2d(e2, 2)?;
                let b = conv_relu(g, p, "bottleneck", p2)?;
                let u2 = g.upsample_nearest2d(b, 2)?;
                let c2 = g.concat_channels(u2, e2)?;
                let d1 = conv_relu(g, p, "dec1", c2)?;
                taps.insert("dec1".to_owned(), d1);
                let u1 = g.upsample_nearest2d(d1, 2)?;
                let c1 = g.concat_channels(u1, e1)?;
                let z = g.conv2d(c1, p.get("head.w")?, 1, 1)?;
                g.add_channel_bias(z, p.get("head.b")?)?
            }
        };
        Ok(Forward { logits, taps })
    }

    /// Probabilities from logits at temperature `t`: softmax over classes
    /// or a per-pixel sigmoid.
    pub fn probabilities<E: Element>(&self, g: &mut Graph<E>, logits: Var, t: f64) -> Result<Var> {
        match self.arch {
            Arch::Classifier { .. } => g.softmax(logits, t),
            Arch::Segmenter { .. } => g.sigmoid_t(logits, t),
        }
    }

    /// Gradient-free forward returning probabilities and tap activations.
    pub fn forward_with_taps(&self, x: &Tensor) -> Result<(Tensor, BTreeMap<String, Tensor>)> {
        let mut g = Graph::<f32>::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv)?;
        let probs = self.probabilities(&mut g, out.logits, 1.0)?;
        let taps = out
            .taps
            .iter()
            .map(|(k, v)| (k.clone(), g.value(*v).clone()))
            .collect();
        Ok((g.value(probs).clone(), taps))
    }

    /// Gradient-free forward returning probabilities only.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_taps(x)?.0)
    }
}

fn conv_relu<E: Element>(g: &mut Graph<E>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let z = g.conv2d(x, p.get(&format!("{name}.w"))?, 1, 1)?;
    let z = g.add_channel_bias(z, p.get(&format!("{name}.b"))?)?;
    Ok(g.relu(z))
}

#[cfg(test)]
mod tests;
