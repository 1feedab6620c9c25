//! Average ranks of variants across settings.

use crate::error::{Error, Result};

/// `table[v][s]` is variant `v`'s score in setting `s`. Rank 1 is best; tied
/// values share the mean of their ranks. Returns the mean rank per variant.
pub fn average_ranks(table: &[Vec<f64>], higher_is_better: bool) -> Result<Vec<f64>> {
    let v = table.len();
    if v == 0 {
        return Err(Error::Empty("rank table".into()));
    }
    let s = table[0].len();
    if s == 0 || table.iter().any(|r| r.len() != s) {
        return Err(Error::InvalidConfig("every variant needs a value in every setting".into()));
    }
    if table.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("missing or non-finite cell in rank table".into()));
    }
    let mut sums = vec![0.0; v];
    for col in 0..s {
        let mut order: Vec<usize> = (0..v).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (table[a][col], table[b][col]);
            if higher_is_better {
                y.total_cmp(&x)
            } else {
                x.total_cmp(&y)
            }
        });
        let mut i = 0;
        while i < v {
            let mut j = i;
            while j + 1 < v && table[order[j + 1]][col] == table[order[i]][col] {
                j += 1;
            }
            let shared = (i + j) as f64 / 2.0 + 1.0;
            for &k in &order[i..=j] {
                sums[k] += shared;
            }
            i = j + 1;
        }
    }
    Ok(sums.into_iter().map(|x| x / s as f64).collect())
}
