//! Seeded synthetic stand-ins for tissue-patch classification and lesion
//! segmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Label, Sample};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::Task;

/// Largest mask area, as a fraction of the image, counted as a tiny region.
pub const TINY_AREA_FRACTION: f64 = 0.02;

const CLS_NOISE: f64 = 0.3;
const SEG_NOISE: f64 = 0.3;

/// Balanced two-class images with 3 channels.
///
/// Class 1 holds blobs carrying a fine checker texture in a pink tint;
/// class 0 holds smooth grey decoy blobs. Both share a low-frequency
/// background, random amplitudes and pixel noise, so faint samples overlap.
pub fn synth_classification(n: usize, resolution: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || resolution < 4 {
        return Err(Error::Contract(format!(
            "synth_classification needs n > 0 and resolution ≥ 4, got {n}, {resolution}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, CLS_NOISE).expect("valid σ");
    let r = resolution;
    let samples = (0..n)
        .map(|i| {
            let class = i % 2;
            let mut img = vec![0.0f64; 3 * r * r];
            background(&mut rng, &mut img, r);
            for _ in 0..rng.gen_range(1..=2) {
                let cy = rng.gen_range(0.25..0.75) * r as f64;
                let cx = rng.gen_range(0.25..0.75) * r as f64;
                let sigma = rng.gen_range(0.12..0.2) * r as f64;
                let amp = rng.gen_range(0.3..1.0);
                let phase = rng.gen_range(0..2);
                let tint: [f64; 3] = if class == 1 {
                    [1.0, 0.45, 0.8]
                } else {
                    [0.7, 0.7, 0.7]
                };
                for y in 0..r {
                    for x in 0..r {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        let g = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                        let tex = if class == 1 {
                            if (x + y + phase) % 2 == 0 {
                                1.3
                            } else {
                                0.3
                            }
                        } else {
                            0.8
                        };
                        for (c, t) in tint.iter().enumerate() {
                            img[(c * r + y) * r + x] += g * tex * t;
                        }
                    }
                }
            }
            for v in &mut img {
                *v += noise.sample(&mut rng);
            }
            Sample {
                image: Tensor::from_f64(&[3, r, r], &img).expect("shape matches"),
                label: Label::Class(class),
                split: None,
            }
        })
        .collect();
    Ok(Dataset {
        task: Task::Classification,
        n_classes: 2,
        samples,
    })
}

fn background(rng: &mut ChaCha8Rng, img: &mut [f64], r: usize) {
    let fy = rng.gen_range(0.5..1.5);
    let fx = rng.gen_range(0.5..1.5);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp = rng.gen_range(0.05..0.25);
    let offset = rng.gen_range(-0.2..0.2);
    let k = std::f64::consts::TAU / r as f64;
    for c in 0..3 {
        let w = 0.8 + 0.1 * c as f64;
        for y in 0..r {
            for x in 0..r {
                img[(c * r + y) * r + x] =
                    offset + w * amp * (k * (fy * y as f64 + fx * x as f64) + phase).sin();
            }
        }
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    /// Rotation in radians.
    theta: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

fn ellipse(rng: &mut ChaCha8Rng, r: usize, radius: std::ops::Range<f64>) -> Ellipse {
    let rf = r as f64;
    let ry = rng.gen_range(radius.clone());
    let rx = rng.gen_range(radius);
    let margin = ry.max(rx) + 1.0;
    Ellipse {
        cy: rng.gen_range(margin..(rf - margin).max(margin + 1e-3)),
        cx: rng.gen_range(margin..(rf - margin).max(margin + 1e-3)),
        ry,
        rx,
        theta: rng.gen_range(0.0..std::f64::consts::PI),
    }
}

/// Single-channel images with 1–3 bright ellipses on a noisy, shaded
/// background; masks are the exact ellipse union. Every fourth sample
/// (and any other sample whose draw happens to be small) contains a tiny
/// region of at most 2% of the image area.
pub fn synth_segmentation(n: usize, resolution: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || resolution < 16 {
        return Err(Error::Contract(format!(
            "synth_segmentation needs n > 0 and resolution ≥ 16, got {n}, {resolution}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SEG_NOISE).expect("valid σ");
    let r = resolution;
    let rf = r as f64;
    // πab ≤ 2% of r² with a, b ≤ tiny_max
    let tiny_max = (TINY_AREA_FRACTION * rf * rf / std::f64::consts::PI).sqrt() * 0.95;
    let samples = (0..n)
        .map(|i| {
            let mut shapes = Vec::new();
            if i % 4 == 0 {
                shapes.push(ellipse(&mut rng, r, 1.2..tiny_max));
            }
            let extra = rng.gen_range(usize::from(shapes.is_empty())..=2);
            for _ in 0..extra {
                // Keep the tiny region separate so it stays tiny.
                let mut e = ellipse(&mut rng, r, 0.08 * rf..0.25 * rf);
                for _ in 0..50 {
                    let clear = shapes.first().is_none_or(|t: &Ellipse| {
                        let d = ((e.cy - t.cy).powi(2) + (e.cx - t.cx).powi(2)).sqrt();
                        i % 4 != 0 || d > e.ry.max(e.rx) + t.ry.max(t.rx) + 2.0
                    });
                    if clear {
                        break;
                    }
                    e = ellipse(&mut rng, r, 0.08 * rf..0.25 * rf);
                }
                shapes.push(e);
            }
            let mut mask = vec![0.0f64; r * r];
            for y in 0..r {
                for x in 0..r {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    if shapes.iter().any(|e| e.contains(py, px)) {
                        mask[y * r + x] = 1.0;
                    }
                }
            }
            let contrast = rng.gen_range(0.6..1.2);
            let (gy, gx) = (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
            let img: Vec<f64> = (0..r * r)
                .map(|p| {
                    let (y, x) = ((p / r) as f64 / rf - 0.5, (p % r) as f64 / rf - 0.5);
                    gy * y + gx * x + contrast * mask[p] + noise.sample(&mut rng)
                })
                .collect();
            Sample {
                image: Tensor::from_f64(&[1, r, r], &img).expect("shape matches"),
                label: Label::Mask(Tensor::from_f64(&[1, r, r], &mask).expect("shape matches")),
                split: None,
            }
        })
        .collect();
    Ok(Dataset {
        task: Task::Segmentation,
        n_classes: 2,
        samples,
    })
}

/// Connected foreground regions of a binary `H×W` mask, as pixel counts.
#[cfg(test)]
pub(crate) fn region_areas(mask: &[f32], h: usize, w: usize) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut areas = Vec::new();
    for start in 0..mask.len() {
        if seen[start] || mask[start] < 0.5 {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut area = 0;
        while let Some(p) = stack.pop() {
            area += 1;
            let (y, x) = (p / w, p % w);
            let mut push = |q: usize| {
                if !seen[q] && mask[q] >= 0.5 {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                push(p - w);
            }
            if y + 1 < h {
                push(p + w);
            }
            if x > 0 {
                push(p - 1);
            }
            if x + 1 < w {
                push(p + 1);
            }
        }
        areas.push(area);
    }
    areas
}
