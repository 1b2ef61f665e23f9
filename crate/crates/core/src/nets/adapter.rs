use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{self, Bound, ParamSet};
use super::FeatureTap;
use crate::autodiff::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Trainable 1×1 convolution that maps a teacher feature map onto a
/// student's tap shape, followed by max pooling or nearest upsampling when
/// the spatial sizes differ by an integer factor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterBlock {
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    params: ParamSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Resample {
    None,
    Pool(usize),
    Upsample(usize),
}

fn resample_for(from: [usize; 3], to: [usize; 3]) -> Result<Resample> {
    let (fh, fw, th, tw) = (from[1], from[2], to[1], to[2]);
    if fh == th && fw == tw {
        Ok(Resample::None)
    } else if fh > th && fh % th == 0 && fw % tw == 0 && fh / th == fw / tw {
        Ok(Resample::Pool(fh / th))
    } else if th > fh && th % fh == 0 && tw % fw == 0 && th / fh == tw / fw {
        Ok(Resample::Upsample(th / fh))
    } else {
        Err(Error::Config(format!(
            "cannot adapt spatial size {fh}×{fw} to {th}×{tw} by an integer factor"
        )))
    }
}

impl AdapterBlock {
    /// He-initialised adapter from `from`'s tap shape to `to`'s.
    pub fn new(from: &FeatureTap, to: &FeatureTap, seed: u64) -> Result<Self> {
        resample_for(from.shape, to.shape)?;
        let (cin, cout) = (from.shape[0], to.shape[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.push("adapter.w", params::he_uniform(&mut rng, &[cout, cin, 1, 1], cin));
        params.push("adapter.b", Tensor::zeros(&[cout]));
        Ok(AdapterBlock {
            in_shape: from.shape,
            out_shape: to.shape,
            params,
        })
    }

    /// Channel-preserving adapter whose 1×1 kernel is the identity matrix.
    pub fn identity(shape: [usize; 3]) -> Self {
        let c = shape[0];
        let mut params = ParamSet::new();
        params.push(
            "adapter.w",
            Tensor::from_fn(&[c, c, 1, 1], |i| if i / c == i % c { 1.0 } else { 0.0 }),
        );
        params.push("adapter.b", Tensor::zeros(&[c]));
        AdapterBlock {
            in_shape: shape,
            out_shape: shape,
            params,
        }
    }

    pub fn in_shape(&self) -> [usize; 3] {
        self.in_shape
    }

    pub fn out_shape(&self) -> [usize; 3] {
        self.out_shape
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind<E: Element>(&self, g: &mut Graph<E>, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    /// Maps a `B×C_t×H_t×W_t` teacher feature map to `B×C_s×H_s×W_s`.
    pub fn forward<E: Element>(&self, g: &mut Graph<E>, p: &Bound, t_feat: Var) -> Result<Var> {
        let s = g.shape(t_feat);
        if s.len() != 4 || s[1..] != self.in_shape {
            return Err(Error::dim("adapt", s, &self.in_shape));
        }
        let z = g.conv2d(t_feat, p.get("adapter.w")?, 1, 0)?;
        let z = g.add_channel_bias(z, p.get("adapter.b")?)?;
        match resample_for(self.in_shape, self.out_shape)? {
            Resample::None => Ok(z),
            Resample::Pool(k) => g.max_pool2d(z, k),
            Resample::Upsample(k) => g.upsample_nearest2d(z, k),
        }
    }

    /// Gradient-free application to a concrete tensor.
    pub fn adapt(&self, t_feat: &Tensor) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(t_feat.clone());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }
}
