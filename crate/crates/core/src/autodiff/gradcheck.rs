//! Central finite-difference checking of the backward rules.
//!
//! The checker only ever evaluates the forward pass of the function under
//! test; the analytic side comes from [`Graph::backward`]. Everything runs in
//! `f64` so that a step of `1e-4` is far above rounding noise.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Finite-difference step used by the gradient suites.
pub const STEP: f64 = 1e-4;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)` per input.
    pub rel_err: Vec<f64>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.rel_err.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares analytic gradients of `f` w.r.t. every tensor in `inputs`
/// against central differences with step `h`.
///
/// `f` receives the inputs as graph leaves (in order) and must return a
/// scalar.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let root = f(&mut g, &vars)?;
    if !g.value(root).is_scalar() {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            g.grad(*v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.param(t)).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.value(root).item())
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut rel_err = Vec::with_capacity(inputs.len());
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(a.len());
        for j in 0..a.len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
        rel_err.push(relative_error(a, &numeric));
    }
    Ok(GradCheck { rel_err })
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
