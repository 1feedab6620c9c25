//! Hierarchical multi-label image classification with per-label class tokens,
//! a graph branch over the label taxonomy and a BYOL self-supervised branch.

pub mod classification;
pub mod data;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod hierarchy;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod ssl;
pub mod training;

pub use error::{Error, Result};
pub use hierarchy::{EdgeList, LabelHierarchy, LabelVector, LevelStats};
