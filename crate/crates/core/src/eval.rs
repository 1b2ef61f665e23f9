//! Student ensembles and evaluation metrics.

use std::collections::BTreeMap;

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::nets::Network;
use crate::Task;

/// Foreground threshold for probability masks.
pub const MASK_THRESHOLD: f32 = 0.5;

/// Row name used for the ensemble in reports.
pub const ENSEMBLE: &str = "Ensemble";

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-class maximum over the students' probability vectors, then argmax.
pub fn ensemble_classify(preds: &[&[f32]]) -> Result<usize> {
    let first = preds
        .first()
        .ok_or_else(|| Error::Contract("ensemble of zero students".into()))?;
    let mut best = first.to_vec();
    for p in &preds[1..] {
        if p.len() != best.len() {
            return Err(Error::dim("ensemble_classify", &[best.len()], &[p.len()]));
        }
        for (b, v) in best.iter_mut().zip(p.iter()) {
            *b = b.max(*v);
        }
    }
    Ok(argmax(&best))
}

pub fn threshold(p: &[f32]) -> Vec<bool> {
    p.iter().map(|v| *v > MASK_THRESHOLD).collect()
}

/// Pixelwise union of the thresholded student maps.
pub fn ensemble_mask(maps: &[&[f32]]) -> Result<Vec<bool>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Contract("ensemble of zero students".into()))?;
    let mut out = threshold(first);
    for m in &maps[1..] {
        if m.len() != out.len() {
            return Err(Error::dim("ensemble_mask", &[out.len()], &[m.len()]));
        }
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o |= *v > MASK_THRESHOLD;
        }
    }
    Ok(out)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlap {
    pub iou: f64,
    pub f_score: f64,
}

/// IoU and F-score of one mask pair; two empty masks score 1.
pub fn overlap(pred: &[bool], truth: &[bool]) -> Overlap {
    let (mut inter, mut p, mut t) = (0usize, 0usize, 0usize);
    for (a, b) in pred.iter().zip(truth) {
        inter += usize::from(*a && *b);
        p += usize::from(*a);
        t += usize::from(*b);
    }
    if p + t == 0 {
        return Overlap {
            iou: 1.0,
            f_score: 1.0,
        };
    }
    Overlap {
        iou: inter as f64 / (p + t - inter) as f64,
        f_score: 2.0 * inter as f64 / (p + t) as f64,
    }
}

/// Fraction of true foreground recovered; 1 when the truth is empty.
pub fn recall(pred: &[bool], truth: &[bool]) -> f64 {
    let t = truth.iter().filter(|b| **b).count();
    if t == 0 {
        return 1.0;
    }
    let hit = pred.iter().zip(truth).filter(|(a, b)| **a && **b).count();
    hit as f64 / t as f64
}

/// Metric name → value, e.g. `accuracy` or `iou` and `f_score`.
pub type Metrics = BTreeMap<String, f64>;

/// Dataset-level metrics: accuracy, or mean per-sample IoU and F-score.
pub fn segmentation_metrics(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Metrics {
    let n = truth.len().max(1) as f64;
    let (mut iou, mut f) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let o = overlap(p, t);
        iou += o.iou;
        f += o.f_score;
    }
    [("iou".to_owned(), iou / n), ("f_score".to_owned(), f / n)].into()
}

pub fn classification_metrics(pred: &[usize], truth: &[usize]) -> Metrics {
    [("accuracy".to_owned(), accuracy(pred, truth))].into()
}

const EVAL_BATCH: usize = 64;

/// Probabilities of `net` on every sample, one tensor per sample.
fn predict_all(net: &Network, ds: &Dataset) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let batch = ds.batch(chunk)?;
        let p = net.predict(&batch.images)?;
        let per = p.numel() / chunk.len();
        out.extend(p.data().chunks(per).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Metrics of every network in `nets` plus the ensemble of `students`.
pub fn evaluate(nets: &BTreeMap<String, Network>, students: &[&str], ds: &Dataset) -> Result<BTreeMap<String, Metrics>> {
    let preds: BTreeMap<&str, Vec<Vec<f32>>> = nets
        .iter()
        .map(|(k, n)| Ok((k.as_str(), predict_all(n, ds)?)))
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    match ds.task {
        Task::Classification => {
            let truth: Vec<usize> = ds
                .samples
                .iter()
                .map(|s| match s.label {
                    Label::Class(c) => c,
                    Label::Mask(_) => usize::MAX,
                })
                .collect();
            for (k, p) in &preds {
                let pred: Vec<usize> = p.iter().map(|v| argmax(v)).collect();
                out.insert(k.to_string(), classification_metrics(&pred, &truth));
            }
            let pred = (0..ds.len())
                .map(|i| {
                    let each: Vec<&[f32]> = students.iter().map(|s| preds[s][i].as_slice()).collect();
                    ensemble_classify(&each)
                })
                .collect::<Result<Vec<_>>>()?;
            out.insert(ENSEMBLE.to_owned(), classification_metrics(&pred, &truth));
        }
        Task::Segmentation => {
            let truth: Vec<Vec<bool>> = ds
                .samples
                .iter()
                .map(|s| match &s.label {
                    Label::Mask(m) => threshold(m.data()),
                    Label::Class(_) => vec![],
                })
                .collect();
            for (k, p) in &preds {
                let pred: Vec<Vec<bool>> = p.iter().map(|v| threshold(v)).collect();
                out.insert(k.to_string(), segmentation_metrics(&pred, &truth));
            }
            let pred = (0..ds.len())
                .map(|i| {
                    let each: Vec<&[f32]> = students.iter().map(|s| preds[s][i].as_slice()).collect();
                    ensemble_mask(&each)
                })
                .collect::<Result<Vec<_>>>()?;
            out.insert(ENSEMBLE.to_owned(), segmentation_metrics(&pred, &truth));
        }
    }
    Ok(out)
}

/// Ensemble masks of `students` for every sample, for PGM dumps.
pub fn ensemble_masks(nets: &BTreeMap<String, Network>, students: &[&str], ds: &Dataset) -> Result<Vec<Vec<bool>>> {
    let preds = students
        .iter()
        .map(|s| {
            let net = nets
                .get(*s)
                .ok_or_else(|| Error::Config(format!("no network named {s}")))?;
            predict_all(net, ds)
        })
        .collect::<Result<Vec<_>>>()?;
    (0..ds.len())
        .map(|i| {
            let each: Vec<&[f32]> = preds.iter().map(|p| p[i].as_slice()).collect();
            ensemble_mask(&each)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn ensemble_classify_examples() {
        let a = [0.6f32, 0.4];
        let b = [0.3f32, 0.7];
        assert_eq!(ensemble_classify(&[&a, &b]).unwrap(), 1);
        assert_eq!(ensemble_classify(&[&a, &a]).unwrap(), 0);
        assert_eq!(ensemble_classify(&[&b]).unwrap(), 1);
        assert_eq!(ensemble_classify(&[&[0.5f32, 0.5]]).unwrap(), 0);
        assert!(ensemble_classify(&[]).is_err());
    }

    #[test]
    fn ensemble_mask_examples() {
        let a = [0.9f32, 0.1, 0.8, 0.2];
        let b = [0.1f32, 0.9, 0.2, 0.1];
        let empty = [0.0f32; 4];
        assert_eq!(ensemble_mask(&[&a, &a]).unwrap(), threshold(&a));
        let u = ensemble_mask(&[&a, &b]).unwrap();
        assert_eq!(u.iter().filter(|v| **v).count(), 3);
        assert_eq!(ensemble_mask(&[&a, &empty]).unwrap(), threshold(&a));
    }

    #[test]
    fn metric_examples() {
        let t = [true, true, false, false];
        assert_eq!(overlap(&t, &t), Overlap { iou: 1.0, f_score: 1.0 });
        let p = [true, false, true, false];
        let o = overlap(&p, &t);
        assert!((o.iou - 1.0 / 3.0).abs() < 1e-12);
        assert!((o.f_score - 0.5).abs() < 1e-12);
        let none = [false; 4];
        assert_eq!(overlap(&none, &t), Overlap { iou: 0.0, f_score: 0.0 });
        assert_eq!(overlap(&none, &none), Overlap { iou: 1.0, f_score: 1.0 });
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1]), 1.0);
        assert!((accuracy(&[0, 0, 1], &[0, 1, 1]) - 2.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn union_is_superset_and_never_loses_recall(
            a in prop::collection::vec(0.0f32..1.0, 16),
            b in prop::collection::vec(0.0f32..1.0, 16),
            t in prop::collection::vec(any::<bool>(), 16),
        ) {
            let u = ensemble_mask(&[&a, &b]).unwrap();
            for m in [&a, &b] {
                let own = threshold(m);
                prop_assert!(own.iter().zip(&u).all(|(x, y)| !x || *y));
                prop_assert!(recall(&u, &t) >= recall(&own, &t));
            }
        }

        #[test]
        fn classify_is_order_invariant(a in prop::collection::vec(0.0f32..1.0, 3), b in prop::collection::vec(0.0f32..1.0, 3)) {
            prop_assert_eq!(ensemble_classify(&[&a, &b]).unwrap(), ensemble_classify(&[&b, &a]).unwrap());
        }
    }
}
