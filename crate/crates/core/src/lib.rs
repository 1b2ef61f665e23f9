//! Knowledge distillation and mutual learning with mixed knowledge channels.
//!
//! One teacher and up to two students exchange either softened predictions
//! or intermediate feature maps along the edges of a [`sharing::SharingPlan`].
//! The crate bundles a small reverse-mode differentiation engine, desk-scale
//! networks, the loss primitives, training schedules and an experiment CLI.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod nets;
pub mod sharing;
pub mod train;

use serde::{Deserialize, Serialize};

pub use autodiff::{Element, Graph, Tensor, Var};
pub use error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}
