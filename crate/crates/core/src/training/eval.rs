//! Inference and test-set metrics.

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::classification::classify;
use crate::data::Sample;
use crate::encoder;
use crate::error::{Error, Result};
use crate::hierarchy::LabelHierarchy;
use crate::metrics::{auprc, knn_nmi, micro_pr_curve, ranking_loss, MetricRecord, NmiReport};
use crate::numerics::tape::sigmoid;
use crate::numerics::{Real, Tape, Tensor};

const EVAL_BATCH: usize = 64;

/// Per-sample model outputs.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub n: usize,
    /// Sigmoid scores `[n, M_model]`.
    pub scores: Vec<f64>,
    /// `f_CLS`, `[n, d]`.
    pub pooled_cls: Vec<f64>,
    /// `z̃_CLS`, `[n, M_model, d]`.
    pub cls: Vec<f64>,
    pub embed_dim: usize,
    pub num_labels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub n: usize,
    pub auprc: f64,
    pub ranking_loss: f64,
    pub nmi: Option<NmiReport>,
}

/// Supervised-head scores and embeddings for `samples`, unaugmented.
pub fn predict<T: Real>(model: &Model<T>, samples: &[Sample]) -> Result<Predictions> {
    let (m, d) = (model.num_labels(), model.encoder.embed_dim);
    let mut p = Predictions {
        n: samples.len(),
        scores: Vec::with_capacity(samples.len() * m),
        pooled_cls: Vec::with_capacity(samples.len() * d),
        cls: Vec::with_capacity(samples.len() * m * d),
        embed_dim: d,
        num_labels: m,
    };
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<Tensor<T>> = chunk
            .iter()
            .map(|s| model.config.model.normalize(&s.image.cast()))
            .collect();
        let images = Tensor::stack(&images)?;
        let mut tape = Tape::new();
        let bound = tape.bind(&model.online, false);
        let out = encoder::forward(&mut tape, &bound, &model.encoder, &images)?;
        let logits = classify(&mut tape, &bound, out.pooled_cls)?;
        p.scores.extend(tape.value(logits).map(sigmoid).to_f64_vec());
        p.pooled_cls.extend(tape.value(out.pooled_cls).to_f64_vec());
        p.cls.extend(tape.value(out.cls).to_f64_vec());
    }
    Ok(p)
}

/// Leaf-column metric record of `predictions` against the samples' labels.
pub fn leaf_record<T: Real>(model: &Model<T>, full: &LabelHierarchy, p: &Predictions, samples: &[Sample]) -> Result<MetricRecord> {
    let columns = leaf_columns(model, full)?;
    let mut scores = Vec::with_capacity(p.n * columns.len());
    let mut targets = Vec::with_capacity(scores.capacity());
    for (i, s) in samples.iter().enumerate() {
        for &(leaf, col) in &columns {
            scores.push(p.scores[i * p.num_labels + col]);
            targets.push(s.labels.get(leaf));
        }
    }
    MetricRecord::new(p.n, columns.len(), scores, targets)
}

/// `(full leaf id, model column)` for every leaf of `full`.
fn leaf_columns<T: Real>(model: &Model<T>, full: &LabelHierarchy) -> Result<Vec<(usize, usize)>> {
    full.leaf_ids()
        .iter()
        .map(|&leaf| {
            model
                .label_map
                .iter()
                .position(|&g| g == leaf)
                .map(|col| (leaf, col))
                .ok_or_else(|| Error::Shape(format!("model has no column for leaf '{}'", full.name(leaf))))
        })
        .collect()
}

/// NMI of k-means clusters over the label tokens of every active leaf of
/// every sample, scored at each hierarchy level with `k` = that level's size.
pub fn token_nmi<T: Real>(
    model: &Model<T>,
    full: &LabelHierarchy,
    p: &Predictions,
    samples: &[Sample],
    seed: u64,
) -> Result<NmiReport> {
    let columns = leaf_columns(model, full)?;
    let d = p.embed_dim;
    let levels = full.depth();
    let mut points = Vec::new();
    let mut labels: Vec<Vec<usize>> = vec![Vec::new(); levels];
    for (i, s) in samples.iter().enumerate() {
        for &(leaf, col) in &columns {
            if !s.labels.get(leaf) {
                continue;
            }
            let off = (i * p.num_labels + col) * d;
            points.extend_from_slice(&p.cls[off..off + d]);
            for (level, l) in labels.iter_mut().enumerate() {
                let a = full
                    .ancestor_at(leaf, level + 1)
                    .ok_or_else(|| Error::MalformedHierarchy(format!("leaf '{}' is above level {}", full.name(leaf), level + 1)))?;
                l.push(a);
            }
        }
    }
    knn_nmi(&points, d, &labels, full.level_sizes(), seed)
}

pub fn evaluate<T: Real>(model: &Model<T>, full: &LabelHierarchy, samples: &[Sample], with_nmi: bool) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let p = predict(model, samples)?;
    let record = leaf_record(model, full, &p, samples)?;
    let nmi = if with_nmi {
        Some(token_nmi(model, full, &p, samples, model.config.seed)?)
    } else {
        None
    };
    Ok(EvalReport {
        variant: model.variant.to_string(),
        n: samples.len(),
        auprc: auprc(&micro_pr_curve(&record)?)?,
        ranking_loss: ranking_loss(&record),
        nmi,
    })
}
