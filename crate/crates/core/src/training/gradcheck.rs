//! Finite-difference checks of every branch loss on a tiny model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig, Variant};
use super::model::{Bindings, LossVars, Model, StepInputs, TARGET_PREFIX};
use crate::classification::BatchLabels;
use crate::error::{Error, Result};
use crate::hierarchy::LabelHierarchy;
use crate::numerics::{gradcheck_store, Tensor, Var};

const TINY_HIERARCHY: &str = "root_a:\n  - leaf_b\n  - leaf_c\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCheck {
    pub loss: String,
    pub max_rel_error: f64,
    pub worst_parameter: String,
    pub coordinates: usize,
}

/// Tiny full model: `d = 8`, one block, three labels, four patches, batch of
/// two with the first sample labeled.
pub fn tiny_setup(seed: u64) -> Result<(Model<f64>, StepInputs<f64>)> {
    let h = LabelHierarchy::parse(TINY_HIERARCHY)?;
    let cfg = TrainConfig {
        variant: Variant::Helm,
        seed,
        model: ModelConfig {
            pixel_mean: Some(0.0),
            pixel_std: Some(1.0),
            embed_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
            patch_size: 4,
            graph_hidden: Some(4),
            byol_out: Some(4),
            byol_hidden: Some(8),
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let model = Model::<f64>::new(&h, &cfg, 8, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6C);
    let mut image = || {
        let data: Vec<f64> = (0..2 * 3 * 8 * 8).map(|_| rng.gen::<f64>()).collect();
        Tensor::from_f64(&[2, 3, 8, 8], &data)
    };
    let (images, view1, view2) = (image()?, image()?, image()?);
    let targets = Tensor::from_f64(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0])?;
    let labels = BatchLabels::new(targets, vec![true, false])?;
    let inputs = StepInputs {
        images,
        labels,
        view1: Some(view1),
        view2: Some(view2),
    };
    Ok((model, inputs))
}

/// Check `L_s`, `L_g`, `L_b` and `L` against central differences with step `eps`.
pub fn check_losses(seed: u64, eps: f64) -> Result<Vec<LossCheck>> {
    let (model, inputs) = tiny_setup(seed)?;
    let target = model.target.clone().ok_or_else(|| Error::MissingParameter("target store".into()))?;
    let picks: [(&str, fn(&LossVars) -> Option<Var>); 4] = [
        ("L_s", |l| l.supervised),
        ("L_g", |l| l.graph),
        ("L_b", |l| l.byol),
        ("L", |l| Some(l.total)),
    ];
    picks
        .iter()
        .map(|(name, pick)| {
            let report = gradcheck_store(
                |tape, bound| {
                    let b = Bindings {
                        online: bound.clone(),
                        target: Some(tape.bind_as(&target, TARGET_PREFIX, false)),
                    };
                    let losses = model.compose_loss(tape, &b, &inputs, 0)?;
                    pick(&losses).ok_or_else(|| Error::Empty(format!("{name} did not run")))
                },
                &model.online,
                eps,
            )?;
            Ok(LossCheck {
                loss: name.to_string(),
                max_rel_error: report.max_rel_error,
                worst_parameter: report.worst_parameter,
                coordinates: report.coordinates,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_branch_passes() {
        for c in check_losses(3, 1e-6).unwrap() {
            assert!(c.max_rel_error < 1e-3, "{c:?}");
            assert!(c.coordinates > 0);
        }
    }
}
