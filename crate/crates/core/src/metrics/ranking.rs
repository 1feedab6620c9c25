//! Multi-label ranking loss.

use crate::metrics::pr::MetricRecord;

/// Pairs `(p, n)` with `p` positive, `n` negative and `score[p] <= score[n]`.
pub fn misordered_pairs(scores: &[f64], targets: &[bool]) -> (usize, usize) {
    let mut neg: Vec<f64> = scores
        .iter()
        .zip(targets)
        .filter(|(_, &t)| !t)
        .map(|(&s, _)| s)
        .collect();
    neg.sort_by(f64::total_cmp);
    let mut bad = 0;
    let mut pos = 0;
    for (&s, &t) in scores.iter().zip(targets) {
        if t {
            pos += 1;
            bad += neg.len() - neg.partition_point(|&x| x < s);
        }
    }
    (bad, pos * neg.len())
}

/// Mean over samples of the misordered-pair fraction; samples without a
/// positive or without a negative count as zero.
pub fn ranking_loss(record: &MetricRecord) -> f64 {
    if record.n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..record.n {
        let (s, t) = record.row(i);
        let (bad, pairs) = misordered_pairs(s, t);
        if pairs > 0 {
            total += bad as f64 / pairs as f64;
        }
    }
    total / record.n as f64
}
