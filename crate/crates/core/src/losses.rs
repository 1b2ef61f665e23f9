//! Loss primitives recorded on a [`Graph`].
//!
//! Every loss reduces to a scalar with a batch mean, so weights stay
//! comparable across batch sizes and resolutions. Knowledge received from
//! another network (the first argument of the KL terms) is detached here.

use crate::autodiff::{Element, Graph, Var};
use crate::error::{Error, Result};

/// Default focusing parameter of the focal loss.
pub const FOCAL_TAU: f64 = 2.0;
/// Additive smoothing of the dice ratio.
pub const EPS_DICE: f64 = 1.0;

/// Per-class probabilities `B×C` produced at `temperature`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbVector {
    pub probs: Var,
    pub temperature: f64,
}

/// Per-pixel foreground probabilities `B×1×H×W` produced at `temperature`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelMap {
    pub probs: Var,
    pub temperature: f64,
}

/// Softmax of `logits / t` over the last axis.
pub fn softmax_t<E: Element>(g: &mut Graph<E>, logits: Var, t: f64) -> Result<ProbVector> {
    Ok(ProbVector {
        probs: g.softmax(logits, t)?,
        temperature: t,
    })
}

/// Sigmoid of `logits / t`, pixelwise.
pub fn pixel_map<E: Element>(g: &mut Graph<E>, logits: Var, t: f64) -> Result<PixelMap> {
    Ok(PixelMap {
        probs: g.sigmoid_t(logits, t)?,
        temperature: t,
    })
}

fn same_shape<E: Element>(g: &Graph<E>, op: &'static str, a: Var, b: Var) -> Result<usize> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb || sa.is_empty() {
        return Err(Error::dim(op, sa, sb));
    }
    Ok(sa[0])
}

fn batch_mean<E: Element>(g: &mut Graph<E>, total: Var, batch: usize) -> Var {
    g.scale(total, 1.0 / batch as f64)
}

/// `-Σ (y log p + (1-y) log(1-p))` over classes, averaged over the batch.
/// `y` is one-hot with the same shape as the prediction.
pub fn cross_entropy<E: Element>(g: &mut Graph<E>, pred: &ProbVector, y: Var) -> Result<Var> {
    let b = same_shape(g, "cross_entropy", pred.probs, y)?;
    let terms = binary_log_likelihood(g, pred.probs, y)?;
    let s = g.sum(terms);
    Ok(g.scale(s, -1.0 / b as f64))
}

/// `y log p + (1-y) log(1-p)`, elementwise.
fn binary_log_likelihood<E: Element>(g: &mut Graph<E>, p: Var, y: Var) -> Result<Var> {
    let lp = g.log(p);
    let q = g.one_minus(p);
    let lq = g.log(q);
    let ny = g.one_minus(y);
    let a = g.mul(y, lp)?;
    let c = g.mul(ny, lq)?;
    g.add(a, c)
}

/// `Σ target · log(target / source)`, averaged over the batch. The target
/// is detached: gradients flow into `source` only.
pub fn kl_div<E: Element>(g: &mut Graph<E>, target: &ProbVector, source: &ProbVector) -> Result<Var> {
    let b = same_shape(g, "kl_div", target.probs, source.probs)?;
    let t = g.detach(target.probs);
    let lt = g.log(t);
    let ls = g.log(source.probs);
    let d = g.sub(lt, ls)?;
    let w = g.mul(t, d)?;
    let s = g.sum(w);
    Ok(batch_mean(g, s, b))
}

/// Binary KL per pixel, `t log(t/s) + (1-t) log((1-t)/(1-s))`, averaged
/// over every pixel of the batch. The target is detached.
pub fn pixel_kl_div<E: Element>(g: &mut Graph<E>, target: &PixelMap, source: &PixelMap) -> Result<Var> {
    same_shape(g, "pixel_kl_div", target.probs, source.probs)?;
    let t = g.detach(target.probs);
    let own = g.one_minus(t);
    let pos = {
        let lt = g.log(t);
        let ls = g.log(source.probs);
        let d = g.sub(lt, ls)?;
        g.mul(t, d)?
    };
    let neg = {
        let lt = g.log(own);
        let q = g.one_minus(source.probs);
        let ls = g.log(q);
        let d = g.sub(lt, ls)?;
        g.mul(own, d)?
    };
    let both = g.add(pos, neg)?;
    Ok(g.mean(both))
}

/// Mean of squared elementwise differences. A shape mismatch usually
/// means an adapter is missing upstream.
pub fn feature_mse<E: Element>(g: &mut Graph<E>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "feature_mse", a, b)?;
    let d = g.sub(a, b)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Binary focal loss, mean over pixels: foreground pixels contribute
/// `(1-p)^τ · -log p`, background pixels `p^τ · -log(1-p)`.
pub fn focal_loss<E: Element>(g: &mut Graph<E>, pred: &PixelMap, gt: Var, tau: f64) -> Result<Var> {
    if !(tau >= 0.0) {
        return Err(Error::Contract(format!("focal τ must be non-negative, got {tau}")));
    }
    same_shape(g, "focal_loss", pred.probs, gt)?;
    let p = pred.probs;
    let q = g.one_minus(p);
    let fg = {
        let w = g.powf(q, tau);
        let l = g.log(p);
        let t = g.mul(w, l)?;
        g.mul(gt, t)?
    };
    let bg = {
        let w = g.powf(p, tau);
        let l = g.log(q);
        let t = g.mul(w, l)?;
        let ngt = g.one_minus(gt);
        g.mul(ngt, t)?
    };
    let both = g.add(fg, bg)?;
    let m = g.mean(both);
    Ok(g.scale(m, -1.0))
}

/// `1 - (2Σpg + ε) / (Σp² + Σg² + ε)` per sample, averaged over the batch.
pub fn dice_loss<E: Element>(g: &mut Graph<E>, pred: &PixelMap, gt: Var) -> Result<Var> {
    let b = same_shape(g, "dice_loss", pred.probs, gt)?;
    let p = pred.probs;
    let pg = g.mul(p, gt)?;
    let inter = g.sum_per_sample(pg)?;
    let num = g.scale(inter, 2.0);
    let num = g.add_scalar(num, EPS_DICE);
    let p2 = g.square(p);
    let g2 = g.square(gt);
    let sp = g.sum_per_sample(p2)?;
    let sg = g.sum_per_sample(g2)?;
    let den = g.add(sp, sg)?;
    let den = g.add_scalar(den, EPS_DICE);
    let ratio = g.div(num, den)?;
    let loss = g.one_minus(ratio);
    let s = g.sum(loss);
    Ok(batch_mean(g, s, b))
}

/// Focal plus dice, unweighted.
pub fn fd_loss<E: Element>(g: &mut Graph<E>, pred: &PixelMap, gt: Var, tau: f64) -> Result<Var> {
    let f = focal_loss(g, pred, gt, tau)?;
    let d = dice_loss(g, pred, gt)?;
    g.add(f, d)
}
