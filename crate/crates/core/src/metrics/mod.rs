//! Evaluation metrics over leaf labels.

pub mod nmi;
pub mod pr;
pub mod ranking;
pub mod ranks;

pub use nmi::{kmeans, knn_nmi, nmi, NmiReport};
pub use pr::{auprc, micro_pr_curve, MetricRecord};
pub use ranking::ranking_loss;
pub use ranks::average_ranks;
