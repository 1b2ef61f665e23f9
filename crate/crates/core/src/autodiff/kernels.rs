//! Dense loops shared by the forward and backward rules.
//!
//! Every reduction (dot products, sums) accumulates in `f64` and rounds once
//! when the result is stored, so results do not depend on SIMD width.

use super::Element;

/// `c[m×n] = a[m×k] · b[k×n]`, all row-major.
pub fn gemm<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    gemm_into(a, b, m, k, n, &mut out);
    out
}

/// Column-block width of [`gemm_into`]; keeps the active slab of `b` cache
/// resident. Blocking does not change the per-element summation order.
const COL_BLOCK: usize = 64;

pub fn gemm_into<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let a64: Vec<f64> = a.iter().map(|v| v.wide()).collect();
    let mut slab = vec![0.0f64; k * COL_BLOCK];
    let mut acc = vec![0.0f64; m * COL_BLOCK];
    for j0 in (0..n).step_by(COL_BLOCK) {
        let nb = COL_BLOCK.min(n - j0);
        for kk in 0..k {
            let src = &b[kk * n + j0..kk * n + j0 + nb];
            for (d, s) in slab[kk * nb..(kk + 1) * nb].iter_mut().zip(src) {
                *d = s.wide();
            }
        }
        acc[..m * nb].iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let row = &mut acc[i * nb..(i + 1) * nb];
            for (kk, &aik) in a64[i * k..(i + 1) * k].iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (c, &bv) in row.iter_mut().zip(&slab[kk * nb..(kk + 1) * nb]) {
                    *c += aik * bv;
                }
            }
            for (o, &c) in out[i * n + j0..i * n + j0 + nb].iter_mut().zip(row.iter()) {
                *o = E::from_wide(c);
            }
        }
    }
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ` as row-by-row dot products.
///
/// Each dot product sums eight interleaved lanes and then folds them in a
/// fixed order, so the result is the same on every target.
pub fn gemm_nt<A: Element, B: Element>(a: &[A], b: &[B], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let a64: Vec<f64> = a.iter().map(|v| v.wide()).collect();
    let b64: Vec<f64> = b.iter().map(|v| v.wide()).collect();
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        let ar = &a64[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(ar, &b64[j * k..(j + 1) * k]);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let mut s = 0.0;
    for l in lanes {
        s += l;
    }
    s + tail
}

pub fn transpose<E: Element>(a: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut out = vec![E::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds one image `C×H×W` into a `(C·k·k) × (H'·W')` patch matrix.
pub fn im2col<E: Element>(img: &[E], g: &ConvGeom) -> Vec<E> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let mut cols = vec![E::zero(); g.patch_len() * p];
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &img[(c * g.height + iy as usize) * g.width..];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto a `C×H×W` buffer.
pub fn col2im_add(cols: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = (c * g.height + iy as usize) * g.width;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            img[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Sum of a slice, accumulated in `f64`.
pub fn sum64<E: Element>(xs: &[E]) -> f64 {
    xs.iter().map(|v| v.wide()).sum()
}
