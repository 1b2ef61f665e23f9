//! Directory-of-PNM ingestion and mask dumps.
//!
//! The index file has one line per sample: `image,label,split`, where
//! `image` is a PGM/PPM path, `label` is a class index (classification) or a
//! PGM mask path (segmentation) and `split` is `train`, `val` or `test`.
//! Relative paths resolve against the index file's directory. Lines that
//! start with `#` are ignored.

use std::path::Path;

use image::{DynamicImage, GrayImage};

use super::{Dataset, Label, Sample, Split};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::Task;

fn bad_index(detail: String) -> Error {
    Error::Format {
        what: "dataset index",
        detail,
    }
}

/// Reads a PGM as `1×H×W` or a PPM as `3×H×W`, scaled to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, raw): (usize, Vec<u8>) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        other => (3, other.to_rgb8().into_raw()),
    };
    // interleaved HWC to planar CHW
    let data = (0..c * h * w)
        .map(|i| {
            let (ch, p) = (i / (h * w), i % (h * w));
            f32::from(raw[p * c + ch]) / 255.0
        })
        .collect();
    Tensor::new(&[c, h, w], data)
}

/// Writes a binary mask (`> 0.5` is foreground) as an 8-bit PGM.
pub fn write_mask_pgm(path: &Path, mask: &[f32], h: usize, w: usize) -> Result<()> {
    if mask.len() != h * w {
        return Err(Error::dim("write_mask_pgm", &[mask.len()], &[h, w]));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let px: Vec<u8> = mask.iter().map(|v| if *v > 0.5 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(w as u32, h as u32, px).expect("buffer matches extent");
    img.save_with_format(path, image::ImageFormat::Pnm)?;
    Ok(())
}

/// Loads every sample listed in `index`, keeping its split tag.
pub fn load_index(index: &Path, task: Task) -> Result<Dataset> {
    let base = index.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(index)?;
    let mut samples = Vec::new();
    let mut max_class = 1;
    let mut shape: Option<Vec<usize>> = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(bad_index(format!(
                "record {}: expected image,label,split, got {} fields",
                line + 1,
                rec.len()
            )));
        }
        let image = read_image(&base.join(&rec[0]))?;
        match &shape {
            Some(s) if s.as_slice() != image.shape() => {
                return Err(bad_index(format!(
                    "record {}: image {:?} differs from {:?}",
                    line + 1,
                    image.shape(),
                    s
                )))
            }
            Some(_) => {}
            None => shape = Some(image.shape().to_vec()),
        }
        let label = match task {
            Task::Classification => {
                let c: usize = rec[1]
                    .parse()
                    .map_err(|e| bad_index(format!("record {}: class {:?}: {e}", line + 1, &rec[1])))?;
                max_class = max_class.max(c);
                Label::Class(c)
            }
            Task::Segmentation => {
                let m = read_image(&base.join(&rec[1]))?;
                let s = image.shape();
                if m.shape() != [1, s[1], s[2]] {
                    return Err(bad_index(format!(
                        "record {}: mask {:?} does not match image {:?}",
                        line + 1,
                        m.shape(),
                        s
                    )));
                }
                let bin = m.data().iter().map(|v| if *v > 0.5 { 1.0 } else { 0.0 }).collect();
                Label::Mask(Tensor::new(m.shape(), bin)?)
            }
        };
        samples.push(Sample {
            image,
            label,
            split: Some(rec[2].parse::<Split>()?),
        });
    }
    Ok(Dataset {
        task,
        n_classes: max_class + 1,
        samples,
    })
}
