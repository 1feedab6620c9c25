//! Supervised head over the pooled label tokens and the masked BCE loss shared
//! with the graph branch.

use rand::Rng;

use crate::encoder::linear;
use crate::error::{shape_err, Error, Result};
use crate::hierarchy::LabelVector;
use crate::numerics::{trunc_normal, Bound, ParameterStore, Real, Role, Tape, Tensor, Var};

/// Targets for a batch plus which rows carry labels.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLabels<T> {
    /// `[B, M]`; unlabeled rows are zero.
    pub targets: Tensor<T>,
    pub labeled: Vec<bool>,
}

impl<T: Real> BatchLabels<T> {
    pub fn new(targets: Tensor<T>, labeled: Vec<bool>) -> Result<Self> {
        if targets.ndim() != 2 || targets.shape()[0] != labeled.len() {
            return shape_err(format!(
                "targets {:?} with {} mask entries",
                targets.shape(),
                labeled.len()
            ));
        }
        Ok(Self { targets, labeled })
    }

    /// Rows from label vectors; `None` marks an unlabeled sample.
    pub fn from_vectors(rows: &[Option<&LabelVector>], m: usize) -> Result<Self> {
        let mut data = vec![T::zero(); rows.len() * m];
        let mut labeled = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            labeled.push(row.is_some());
            if let Some(v) = row {
                if v.len() != m {
                    return shape_err(format!("label vector of length {} for M = {m}", v.len()));
                }
                for j in v.active() {
                    data[i * m + j] = T::one();
                }
            }
        }
        Self::new(Tensor::new(&[rows.len(), m], data)?, labeled)
    }

    pub fn batch_size(&self) -> usize {
        self.labeled.len()
    }

    pub fn num_labels(&self) -> usize {
        self.targets.shape()[1]
    }

    /// `B_l`.
    pub fn num_labeled(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labeled
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn init_params<T: Real, R: Rng>(
    prefix: &str,
    in_dim: usize,
    num_labels: usize,
    rng: &mut R,
) -> ParameterStore<T> {
    let mut p = ParameterStore::new(Role::Online);
    p.insert(format!("{prefix}.weight"), trunc_normal(rng, &[in_dim, num_labels], 0.02));
    p.insert(format!("{prefix}.bias"), Tensor::zeros(&[num_labels]));
    p
}

/// `p_s`: logits `[B, M]` from pooled label tokens `[B, d]`.
pub fn classify<T: Real>(tape: &mut Tape<T>, params: &Bound, pooled_cls: Var) -> Result<Var> {
    linear(tape, params, "classifier", pooled_cls)
}

/// Mean binary cross-entropy over the labeled rows of `logits`, averaged over
/// every label of every labeled sample. Unlabeled rows never enter the graph.
pub fn bce_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &BatchLabels<T>) -> Result<Var> {
    if tape.shape(logits) != labels.targets.shape() {
        return shape_err(format!(
            "logits {:?} vs targets {:?}",
            tape.shape(logits),
            labels.targets.shape()
        ));
    }
    let idx = labels.labeled_indices();
    if idx.is_empty() {
        return Err(Error::Empty("no labeled samples in batch".into()));
    }
    let (z, y) = if idx.len() == labels.batch_size() {
        (logits, labels.targets.clone())
    } else {
        (tape.index_select(logits, &idx)?, labels.targets.select_rows(&idx)?)
    };
    let y = tape.constant(y);
    // softplus(z) − y·z = −[y log σ(z) + (1 − y) log(1 − σ(z))]
    let sp = tape.softplus(z)?;
    let yz = tape.mul(y, z)?;
    let per = tape.sub(sp, yz)?;
    tape.mean(per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss_of(z: &[f64], y: &[f64], mask: &[bool]) -> (f64, Vec<f64>) {
        let b = mask.len();
        let m = z.len() / b;
        let mut tape = Tape::<f64>::new();
        let zt = tape.parameter("z", Tensor::from_f64(&[b, m], z).unwrap(), true);
        let labels = BatchLabels::new(Tensor::from_f64(&[b, m], y).unwrap(), mask.to_vec()).unwrap();
        let l = bce_loss(&mut tape, zt, &labels).unwrap();
        let v = tape.value(l).data()[0];
        let g = tape.backward(l).unwrap();
        (v, g.get("z").unwrap().data().to_vec())
    }

    #[test]
    fn affine_head() {
        let mut p = ParameterStore::<f64>::new(Role::Online);
        p.insert("classifier.weight", Tensor::from_f64(&[1, 1], &[2.0]).unwrap());
        p.insert("classifier.bias", Tensor::from_f64(&[1], &[1.0]).unwrap());
        let mut tape = Tape::new();
        let bound = tape.bind(&p, false);
        let f = tape.constant(Tensor::from_f64(&[1, 1], &[3.0]).unwrap());
        let z = classify(&mut tape, &bound, f).unwrap();
        assert_eq!(tape.value(z).data(), &[7.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_params::<f64, _>("classifier", 768, 30, &mut rng);
        let mut tape = Tape::new();
        let bound = tape.bind(&p, false);
        let f = tape.constant(Tensor::zeros(&[16, 768]));
        let z = classify(&mut tape, &bound, f).unwrap();
        assert_eq!(tape.shape(z), &[16, 30]);
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_values() {
        let (l, _) = loss_of(&[0.0], &[1.0], &[true]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = loss_of(&[20.0, -20.0, 20.0], &[1.0, 0.0, 1.0], &[true]);
        assert!(l < 1e-8);
        let (l, _) = loss_of(&[1000.0, -1000.0], &[0.0, 1.0], &[true]);
        assert!((l - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn masking_is_exact() {
        let z = [0.3, -1.2, 2.0, 0.7, 5.0, -3.0, 0.1, 0.9];
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let (full, g) = loss_of(&z, &y, &[true, false, true, false]);
        let (sub, _) = loss_of(&[z[0], z[1], z[4], z[5]], &[y[0], y[1], y[4], y[5]], &[true, true]);
        assert_eq!(full.to_bits(), sub.to_bits());
        assert_eq!(&g[2..4], &[0.0, 0.0]);
        assert_eq!(&g[6..8], &[0.0, 0.0]);
        for i in [0, 1, 4, 5] {
            let expected = (sigmoid(z[i]) - y[i]) / 4.0;
            assert!((g[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn no_labeled_rows_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[2, 1]));
        let labels = BatchLabels::new(Tensor::zeros(&[2, 1]), vec![false, false]).unwrap();
        assert!(bce_loss(&mut tape, z, &labels).is_err());
    }
}
