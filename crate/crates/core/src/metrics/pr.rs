//! Micro-averaged precision-recall curve and its trapezoidal area.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::hierarchy::{LabelHierarchy, LabelVector};

/// Scores and binary targets for `n` samples over `labels` columns, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub n: usize,
    pub labels: usize,
    pub scores: Vec<f64>,
    pub targets: Vec<bool>,
}

impl MetricRecord {
    pub fn new(n: usize, labels: usize, scores: Vec<f64>, targets: Vec<bool>) -> Result<Self> {
        if scores.len() != n * labels || targets.len() != n * labels {
            return shape_err(format!(
                "{} scores and {} targets for {n}x{labels}",
                scores.len(),
                targets.len()
            ));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("metric scores".into()));
        }
        Ok(Self {
            n,
            labels,
            scores,
            targets,
        })
    }

    /// Leaf columns of full `[n, M]` scores against closed label vectors.
    pub fn leaves_only(h: &LabelHierarchy, scores: &[f64], targets: &[LabelVector]) -> Result<Self> {
        let m = h.len();
        if scores.len() != targets.len() * m {
            return shape_err(format!("{} scores for {} samples of {m} labels", scores.len(), targets.len()));
        }
        let leaves = h.leaf_ids();
        let mut s = Vec::with_capacity(targets.len() * leaves.len());
        let mut t = Vec::with_capacity(s.capacity());
        for (i, y) in targets.iter().enumerate() {
            for &l in leaves {
                s.push(scores[i * m + l]);
                t.push(y.get(l));
            }
        }
        Self::new(targets.len(), leaves.len(), s, t)
    }

    pub fn row(&self, i: usize) -> (&[f64], &[bool]) {
        let r = i * self.labels..(i + 1) * self.labels;
        (&self.scores[r.clone()], &self.targets[r])
    }
}

/// Points `(recall, precision)`, starting at `(0, 1)`. One point per distinct
/// score, highest first, stopping at the first threshold that reaches full recall.
pub fn micro_pr_curve(record: &MetricRecord) -> Result<Vec<(f64, f64)>> {
    let positives = record.targets.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut cells: Vec<(f64, bool)> = record.scores.iter().copied().zip(record.targets.iter().copied()).collect();
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < cells.len() {
        let s = cells[i].0;
        while i < cells.len() && cells[i].0 == s {
            if cells[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
        if tp == positives {
            break;
        }
    }
    Ok(curve)
}

/// Trapezoidal area under `(recall, precision)` points.
pub fn auprc(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::Empty("precision-recall curve needs at least two points".into()));
    }
    Ok(curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_case() {
        let r = MetricRecord::new(1, 2, vec![0.9, 0.1], vec![true, false]).unwrap();
        let c = micro_pr_curve(&r).unwrap();
        assert_eq!(c, vec![(0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(auprc(&c).unwrap(), 1.0);
    }

    #[test]
    fn perfect_and_constant_scores() {
        let r = MetricRecord::new(2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![true, false, true, false, false, true])
            .unwrap();
        let c = micro_pr_curve(&r).unwrap();
        assert!(c.contains(&(1.0, 1.0)));
        assert_eq!(auprc(&c).unwrap(), 1.0);

        let r = MetricRecord::new(2, 2, vec![0.5; 4], vec![true, false, false, false]).unwrap();
        assert_eq!(micro_pr_curve(&r).unwrap(), vec![(0.0, 1.0), (1.0, 0.25)]);
    }

    #[test]
    fn errors() {
        let r = MetricRecord::new(1, 2, vec![0.3, 0.2], vec![false, false]).unwrap();
        assert!(matches!(micro_pr_curve(&r), Err(Error::NoPositives)));
        assert!(auprc(&[(0.0, 1.0)]).is_err());
        assert!(MetricRecord::new(1, 2, vec![0.3], vec![true, false]).is_err());
    }

    #[test]
    fn independent_scores_approach_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 100_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let targets: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let prevalence = targets.iter().filter(|&&t| t).count() as f64 / n as f64;
        let r = MetricRecord::new(n, 1, scores, targets).unwrap();
        let a = auprc(&micro_pr_curve(&r).unwrap()).unwrap();
        assert!((a - prevalence).abs() < 0.02, "{a} vs {prevalence}");
    }
}
