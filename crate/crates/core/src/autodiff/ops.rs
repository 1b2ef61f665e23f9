use super::kernels::{self, ConvGeom};
use super::{Element, Graph, Op, Var, EPS_LOG};
use crate::error::{Error, Result};

/// How a binary elementwise op pairs its operands.
#[derive(Clone, Copy)]
enum Pairing {
    Same,
    LhsScalar,
    RhsScalar,
}

fn is_scalar_shape(shape: &[usize]) -> bool {
    shape.is_empty()
}

fn to64<E: Element>(xs: &[E]) -> Vec<f64> {
    xs.iter().map(|v| v.wide()).collect()
}

impl<E: Element> Graph<E> {
    fn pairing(&self, op: &'static str, a: Var, b: Var) -> Result<(Pairing, Vec<usize>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok((Pairing::Same, sa.to_vec()))
        } else if is_scalar_shape(sa) {
            Ok((Pairing::LhsScalar, sb.to_vec()))
        } else if is_scalar_shape(sb) {
            Ok((Pairing::RhsScalar, sa.to_vec()))
        } else {
            Err(Error::dim(op, sa, sb))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (pairing, shape) = self.pairing(name, a, b)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<E> = match pairing {
            Pairing::Same => da
                .iter()
                .zip(db)
                .map(|(x, y)| E::from_wide(f(x.wide(), y.wide())))
                .collect(),
            Pairing::LhsScalar => {
                let s = da[0].wide();
                db.iter().map(|y| E::from_wide(f(s, y.wide()))).collect()
            }
            Pairing::RhsScalar => {
                let s = db[0].wide();
                da.iter().map(|x| E::from_wide(f(x.wide(), s))).collect()
            }
        };
        Ok(self.record(shape, data, op))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|v| E::from_wide(f(v.wide()))).collect();
        self.record(shape, data, op)
    }

    /// Matrix product of `m×k` and `k×n` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.record(vec![m, n], data, Op::Matmul(a, b)))
    }

    /// Zero-padded cross-correlation of `B×C×H×W` input with `D×C×k×k` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] {
            return Err(Error::dim("conv2d", &sx, &sw));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be >= 1".into()));
        }
        let k = sw[2];
        if k > sx[2] + 2 * pad || k > sx[3] + 2 * pad {
            return Err(Error::dim("conv2d", &sx, &sw));
        }
        let geom = ConvGeom {
            channels: sx[1],
            height: sx[2],
            width: sx[3],
            kernel: k,
            stride,
            pad,
        };
        let (batch, d) = (sx[0], sw[0]);
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let p = oh * ow;
        let img_len = geom.channels * geom.height * geom.width;
        let mut out = vec![E::zero(); batch * d * p];
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            for b in 0..batch {
                let cols = kernels::im2col(&xd[b * img_len..(b + 1) * img_len], &geom);
                kernels::gemm_into(
                    wd,
                    &cols,
                    d,
                    geom.patch_len(),
                    p,
                    &mut out[b * d * p..(b + 1) * d * p],
                );
            }
        }
        Ok(self.record(
            vec![batch, d, oh, ow],
            out,
            Op::Conv2d { x, w, stride, pad },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.scale(x, -1.0);
        self.add_scalar(n, 1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.sigmoid_t(x, 1.0)
            .expect("temperature 1 is always valid")
    }

    /// `σ(x / T)`
    pub fn sigmoid_t(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Contract(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(self.unary(
            x,
            |v| sigmoid(v / temperature),
            Op::Sigmoid { x, temperature },
        ))
    }

    /// Natural log with the input clamped to at least [`EPS_LOG`].
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(EPS_LOG).ln(), Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(x, |v| v.powf(p), Op::Powf(x, p))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = kernels::sum64(self.value(x).data());
        self.record(vec![], vec![E::from_wide(s)], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = kernels::sum64(t.data()) / t.numel() as f64;
        self.record(vec![], vec![E::from_wide(s)], Op::Mean(x))
    }

    /// Sums everything but the leading axis: `B×… → B`.
    pub fn sum_per_sample(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let Some(&b) = t.shape().first() else {
            return Err(Error::Contract("sum_per_sample on a scalar".into()));
        };
        let stride = t.numel() / b;
        let data = t
            .data()
            .chunks(stride)
            .map(|c| E::from_wide(kernels::sum64(c)))
            .collect();
        Ok(self.record(vec![b], data, Op::SumPerSample(x)))
    }

    /// Global average pooling: `B×C×H×W → B×C`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 4 {
            return Err(Error::dim("mean_spatial", s, &[0, 0, 0, 0]));
        }
        let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
        let data = t
            .data()
            .chunks(hw)
            .map(|ch| E::from_wide(kernels::sum64(ch) / hw as f64))
            .collect();
        Ok(self.record(vec![b, c], data, Op::MeanSpatial(x)))
    }

    /// Non-overlapping `k×k` max pooling (stride `k`, floor on the border).
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape().to_vec();
        if s.len() != 4 || k == 0 || k > s[2] || k > s[3] {
            return Err(Error::dim("max_pool2d", &s, &[k, k]));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / k, w / k);
        let xd = t.data();
        let mut data = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = base + (oy * k + dy) * w + ox * k + dx;
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    data.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.record(vec![b, c, oh, ow], data, Op::MaxPool2d { x, argmax }))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape().to_vec();
        if s.len() != 4 || factor == 0 {
            return Err(Error::dim("upsample_nearest2d", &s, &[factor]));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let xd = t.data();
        let mut data = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            for oy in 0..oh {
                let row = &xd[plane * h * w + (oy / factor) * w..][..w];
                for ox in 0..ow {
                    data.push(row[ox / factor]);
                }
            }
        }
        Ok(self.record(vec![b, c, oh, ow], data, Op::Upsample { x, factor }))
    }

    /// Concatenates two `B×C×H×W` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::dim("concat_channels", &sa, &sb));
        }
        let (batch, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(batch * (ca + cb) * hw);
        for i in 0..batch {
            data.extend_from_slice(&da[i * ca * hw..(i + 1) * ca * hw]);
            data.extend_from_slice(&db[i * cb * hw..(i + 1) * cb * hw]);
        }
        Ok(self.record(
            vec![batch, ca + cb, sa[2], sa[3]],
            data,
            Op::ConcatChannels(a, b),
        ))
    }

    /// Row-wise softmax of `x / T` over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Contract(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let t = self.value(x);
        let Some(&c) = t.shape().last() else {
            return Err(Error::Contract("softmax of a scalar".into()));
        };
        let shape = t.shape().to_vec();
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(c) {
            let z: Vec<f64> = row.iter().map(|v| v.wide() / temperature).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            data.extend(e.iter().map(|v| E::from_wide(v / s)));
        }
        Ok(self.record(shape, data, Op::Softmax { x, temperature }))
    }

    /// Adds a per-channel bias `[C]` to a `B×C×H×W` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 4 || sb != [sx[1]] {
            return Err(Error::dim("add_channel_bias", &sx, &sb));
        }
        let hw = sx[2] * sx[3];
        let c = sx[1];
        let bd = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| E::from_wide(v.wide() + bd[(i / hw) % c].wide()))
            .collect();
        Ok(self.record(sx, data, Op::AddChannelBias(x, bias)))
    }

    /// Adds a bias row `[N]` to each row of a `B×N` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::dim("add_row_bias", &sx, &sb));
        }
        let n = sx[1];
        let bd = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| E::from_wide(v.wide() + bd[i % n].wide()))
            .collect();
        Ok(self.record(sx, data, Op::AddRowBias(x, bias)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::dim("reshape", t.shape(), shape));
        }
        let data = t.data().to_vec();
        Ok(self.record(shape.to_vec(), data, Op::Reshape(x)))
    }

    /// Backward rule of node `idx` given its upstream gradient.
    pub(super) fn propagate(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let wants = |v: Var| self.nodes[v.0].value.requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, contrib: Vec<f64>| {
            let slot = &mut grads[v.0];
            match slot {
                Some(buf) => buf.iter_mut().zip(contrib).for_each(|(b, c)| *b += c),
                None => *slot = Some(contrib),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if wants(*a) {
                    let bt = kernels::transpose(&to64(val(*b)), k, n);
                    acc(*a, kernels::gemm(g, &bt, m, n, k));
                }
                if wants(*b) {
                    let at = kernels::transpose(&to64(val(*a)), m, k);
                    acc(*b, kernels::gemm(&at, g, k, m, n));
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (sx, sw) = (self.shape(*x).to_vec(), self.shape(*w).to_vec());
                let geom = ConvGeom {
                    channels: sx[1],
                    height: sx[2],
                    width: sx[3],
                    kernel: sw[2],
                    stride: *stride,
                    pad: *pad,
                };
                let (batch, d) = (sx[0], sw[0]);
                let p = geom.out_h() * geom.out_w();
                let plen = geom.patch_len();
                let img_len = geom.channels * geom.height * geom.width;
                let xd = val(*x);
                let w64 = to64(val(*w));
                let wt = kernels::transpose(&w64, d, plen);
                let mut dw = wants(*w).then(|| vec![0.0f64; d * plen]);
                let mut dx = wants(*x).then(|| vec![0.0f64; xd.len()]);
                for b in 0..batch {
                    let gb = &g[b * d * p..(b + 1) * d * p];
                    if let Some(dw) = dw.as_mut() {
                        let cols = kernels::im2col(&xd[b * img_len..(b + 1) * img_len], &geom);
                        let part = kernels::gemm_nt(gb, &cols, d, p, plen);
                        dw.iter_mut().zip(part).for_each(|(a, v)| *a += v);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dcols = kernels::gemm(&wt, gb, plen, d, p);
                        kernels::col2im_add(&dcols, &geom, &mut dx[b * img_len..(b + 1) * img_len]);
                    }
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (pairing, _) = self.pairing("add", *a, *b)?;
                if wants(*a) {
                    acc(*a, reduce_for(pairing, true, g.to_vec()));
                }
                if wants(*b) {
                    acc(*b, reduce_for(pairing, false, g.iter().map(|v| sign * v).collect()));
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let is_div = matches!(node.op, Op::Div(..));
                let (pairing, _) = self.pairing("mul", *a, *b)?;
                let n = g.len();
                let at = |i: usize| match pairing {
                    Pairing::LhsScalar => val(*a)[0].wide(),
                    _ => val(*a)[i].wide(),
                };
                let bt = |i: usize| match pairing {
                    Pairing::RhsScalar => val(*b)[0].wide(),
                    _ => val(*b)[i].wide(),
                };
                if wants(*a) {
                    let c: Vec<f64> = (0..n)
                        .map(|i| if is_div { g[i] / bt(i) } else { g[i] * bt(i) })
                        .collect();
                    acc(*a, reduce_for(pairing, true, c));
                }
                if wants(*b) {
                    let c: Vec<f64> = (0..n)
                        .map(|i| {
                            if is_div {
                                -g[i] * at(i) / (bt(i) * bt(i))
                            } else {
                                g[i] * at(i)
                            }
                        })
                        .collect();
                    acc(*b, reduce_for(pairing, false, c));
                }
            }
            Op::Scale(x, s) => {
                if wants(*x) {
                    acc(*x, g.iter().map(|v| v * s).collect());
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if wants(*x) {
                    acc(*x, g.to_vec());
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xd = val(*x);
                    acc(
                        *x,
                        g.iter()
                            .zip(xd)
                            .map(|(gv, xv)| if xv.wide() > 0.0 { *gv } else { 0.0 })
                            .collect(),
                    );
                }
            }
            Op::Sigmoid { x, temperature } => {
                if wants(*x) {
                    acc(
                        *x,
                        g.iter()
                            .zip(out)
                            .map(|(gv, y)| {
                                let y = y.wide();
                                gv * y * (1.0 - y) / temperature
                            })
                            .collect(),
                    );
                }
            }
            Op::Log(x) => {
                if wants(*x) {
                    acc(
                        *x,
                        g.iter()
                            .zip(val(*x))
                            .map(|(gv, xv)| {
                                let xv = xv.wide();
                                if xv > EPS_LOG {
                                    gv / xv
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    );
                }
            }
            Op::Exp(x) => {
                if wants(*x) {
                    acc(*x, g.iter().zip(out).map(|(gv, y)| gv * y.wide()).collect());
                }
            }
            Op::Square(x) => {
                if wants(*x) {
                    acc(
                        *x,
                        g.iter()
                            .zip(val(*x))
                            .map(|(gv, xv)| 2.0 * gv * xv.wide())
                            .collect(),
                    );
                }
            }
            Op::Powf(x, p) => {
                if wants(*x) {
                    let p = *p;
                    acc(
                        *x,
                        g.iter()
                            .zip(val(*x))
                            .map(|(gv, xv)| {
                                if p == 0.0 {
                                    0.0
                                } else {
                                    gv * p * xv.wide().powf(p - 1.0)
                                }
                            })
                            .collect(),
                    );
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    acc(*x, vec![g[0]; self.value(*x).numel()]);
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let n = self.value(*x).numel();
                    acc(*x, vec![g[0] / n as f64; n]);
                }
            }
            Op::SumPerSample(x) => {
                if wants(*x) {
                    let n = self.value(*x).numel();
                    let stride = n / g.len();
                    acc(*x, (0..n).map(|i| g[i / stride]).collect());
                }
            }
            Op::MeanSpatial(x) => {
                if wants(*x) {
                    let s = self.shape(*x);
                    let hw = s[2] * s[3];
                    let n = self.value(*x).numel();
                    acc(*x, (0..n).map(|i| g[i / hw] / hw as f64).collect());
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if wants(*x) {
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    for (gv, &src) in g.iter().zip(argmax) {
                        dx[src] += gv;
                    }
                    acc(*x, dx);
                }
            }
            Op::Upsample { x, factor } => {
                if wants(*x) {
                    let s = self.shape(*x);
                    let (h, w) = (s[2], s[3]);
                    let (oh, ow) = (h * factor, w * factor);
                    let mut dx = vec![0.0; self.value(*x).numel()];
                    for (plane, gp) in g.chunks(oh * ow).enumerate() {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dx[plane * h * w + (oy / factor) * w + ox / factor] +=
                                    gp[oy * ow + ox];
                            }
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::ConcatChannels(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                let per = (ca + cb) * hw;
                if wants(*a) {
                    let mut da = Vec::with_capacity(batch * ca * hw);
                    for i in 0..batch {
                        da.extend_from_slice(&g[i * per..i * per + ca * hw]);
                    }
                    acc(*a, da);
                }
                if wants(*b) {
                    let mut db = Vec::with_capacity(batch * cb * hw);
                    for i in 0..batch {
                        db.extend_from_slice(&g[i * per + ca * hw..(i + 1) * per]);
                    }
                    acc(*b, db);
                }
            }
            Op::Softmax { x, temperature } => {
                if wants(*x) {
                    let c = *self.shape(*x).last().unwrap_or(&1);
                    let mut dx = Vec::with_capacity(g.len());
                    for (grow, yrow) in g.chunks(c).zip(out.chunks(c)) {
                        let dot: f64 = grow
                            .iter()
                            .zip(yrow)
                            .map(|(gv, y)| gv * y.wide())
                            .sum();
                        dx.extend(
                            grow.iter()
                                .zip(yrow)
                                .map(|(gv, y)| y.wide() * (gv - dot) / temperature),
                        );
                    }
                    acc(*x, dx);
                }
            }
            Op::AddChannelBias(x, bias) => {
                if wants(*x) {
                    acc(*x, g.to_vec());
                }
                if wants(*bias) {
                    let s = self.shape(*x);
                    let (c, hw) = (s[1], s[2] * s[3]);
                    let mut db = vec![0.0; c];
                    for (i, gv) in g.iter().enumerate() {
                        db[(i / hw) % c] += gv;
                    }
                    acc(*bias, db);
                }
            }
            Op::AddRowBias(x, bias) => {
                if wants(*x) {
                    acc(*x, g.to_vec());
                }
                if wants(*bias) {
                    let n = self.shape(*x)[1];
                    let mut db = vec![0.0; n];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % n] += gv;
                    }
                    acc(*bias, db);
                }
            }
        }
        Ok(())
    }
}

fn reduce_for(pairing: Pairing, lhs: bool, contrib: Vec<f64>) -> Vec<f64> {
    let scalar_side = matches!(
        (pairing, lhs),
        (Pairing::LhsScalar, true) | (Pairing::RhsScalar, false)
    );
    if scalar_side {
        vec![contrib.iter().sum()]
    } else {
        contrib
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
