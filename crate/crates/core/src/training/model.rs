//! Model state for one variant and the composite loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use crate::classification::{self, bce_loss, classify, BatchLabels};
use crate::data::sample_seed;
use crate::encoder::{self, EncoderConfig, EncoderOutput};
use crate::error::{Error, Result};
use crate::graph::{self, GraphBranch, GraphConfig};
use crate::hierarchy::LabelHierarchy;
use crate::numerics::{Bound, Checkpoint, ParameterStore, Real, Role, Tape, Tensor, Var};
use crate::ssl::{byol, byol_loss, target_store, ByolFeature};

pub const TARGET_PREFIX: &str = "target.";

/// Parameter counts per branch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub encoder: usize,
    pub classifier: usize,
    pub graph: usize,
    pub byol: usize,
    pub target: usize,
    /// Everything the optimizer updates.
    pub trainable: usize,
}

/// Inputs of one step. `images` feed the supervised and graph branches; the
/// views are present only when BYOL is active.
#[derive(Clone, Debug)]
pub struct StepInputs<T> {
    pub images: Tensor<T>,
    pub labels: BatchLabels<T>,
    pub view1: Option<Tensor<T>>,
    pub view2: Option<Tensor<T>>,
}

/// Tape handles of the branch losses; `None` for a branch that did not run.
#[derive(Clone, Debug)]
pub struct LossVars {
    pub supervised: Option<Var>,
    pub graph: Option<Var>,
    pub byol: Option<Var>,
    pub total: Var,
}

/// Online parameters bound on a tape, plus the target store when present.
#[derive(Clone, Debug)]
pub struct Bindings {
    pub online: Bound,
    pub target: Option<Bound>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub variant: Variant,
    pub config: TrainConfig,
    /// Hierarchy of the model's label tokens.
    pub hierarchy: LabelHierarchy,
    /// Model label id to id in the dataset hierarchy.
    pub label_map: Vec<usize>,
    pub encoder: EncoderConfig,
    pub graph: Option<GraphBranch<T>>,
    pub online: ParameterStore<T>,
    pub target: Option<ParameterStore<T>>,
}

fn branch_failure<T: Real>(e: Error, tape: &Tape<T>, step: usize, branch: &str) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged {
            step,
            branch: branch.to_string(),
            max_activation: tape.max_abs_activation(),
        },
        other => other,
    }
}

impl<T: Real> Model<T> {
    /// Fresh parameters for `config.variant` over the dataset hierarchy `full`.
    pub fn new(full: &LabelHierarchy, config: &TrainConfig, image_size: usize, channels: usize) -> Result<Self> {
        config.validate()?;
        let variant = config.variant;
        let (hierarchy, label_map) = if variant.use_hierarchy() {
            (full.clone(), (0..full.len()).collect())
        } else {
            (full.leaves_only(), full.leaf_ids().to_vec())
        };
        let mc = &config.model;
        let encoder = EncoderConfig {
            image_size,
            patch_size: mc.patch_size,
            channels,
            embed_dim: mc.embed_dim,
            depth: mc.depth,
            heads: mc.heads,
            mlp_ratio: mc.mlp_ratio,
            num_labels: hierarchy.len(),
        };
        encoder.validate()?;
        let m = hierarchy.len();
        let d = mc.embed_dim;

        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, 0x1417));
        let mut online = encoder::init_params(&encoder, &mut rng)?;
        online.merge(classification::init_params("classifier", d, m, &mut rng));
        let graph = if variant.use_graph() {
            let gc = GraphConfig {
                layers: mc.graph_layers,
                hidden_dim: mc.graph_hidden(),
                add_reverse: mc.add_reverse_edges,
                add_self_loops: mc.add_self_loops,
            };
            online.merge(graph::init_params(&gc, d, m, &mut rng)?);
            Some(GraphBranch::new(gc, &hierarchy)?)
        } else {
            None
        };
        let target = if variant.use_byol() {
            online.merge(byol::init_params(d, mc.byol_hidden(), mc.byol_out(), &mut rng));
            Some(target_store(&online))
        } else {
            None
        };
        Ok(Self {
            variant,
            config: config.clone(),
            hierarchy,
            label_map,
            encoder,
            graph,
            online,
            target,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.hierarchy.len()
    }

    pub fn param_counts(&self) -> ParamCounts {
        ParamCounts {
            encoder: self.online.count("encoder."),
            classifier: self.online.count("classifier."),
            graph: self.online.count("graph."),
            byol: self.online.count("byol."),
            target: self.target.as_ref().map_or(0, |t| t.count("")),
            trainable: self.online.count(""),
        }
    }

    /// Bind the online store with gradients and the target store under
    /// [`TARGET_PREFIX`], with gradients only if `target_grad`.
    pub fn bind(&self, tape: &mut Tape<T>, target_grad: bool) -> Bindings {
        Bindings {
            online: tape.bind(&self.online, true),
            target: self
                .target
                .as_ref()
                .map(|t| tape.bind_as(t, TARGET_PREFIX, target_grad)),
        }
    }

    fn feature(&self, out: &EncoderOutput) -> Var {
        match self.config.model.byol_feature {
            ByolFeature::PooledPatches => out.pooled_patches,
            ByolFeature::PooledCls => out.pooled_cls,
        }
    }

    fn byol_direction(
        &self,
        tape: &mut Tape<T>,
        b: &Bindings,
        online_view: &Tensor<T>,
        target_view: &Tensor<T>,
    ) -> Result<Var> {
        let target = b
            .target
            .as_ref()
            .ok_or_else(|| Error::MissingParameter("target store".into()))?;
        let on = encoder::forward(tape, &b.online, &self.encoder, online_view)?;
        let f = self.feature(&on);
        let z = byol::head(tape, &b.online, "byol.projector", f)?;
        let q = byol::head(tape, &b.online, "byol.predictor", z)?;
        let tg = encoder::forward(tape, target, &self.encoder, target_view)?;
        let f = self.feature(&tg);
        let zt = byol::head(tape, target, "byol.projector", f)?;
        byol_loss(tape, q, zt)
    }

    fn weighted(tape: &mut Tape<T>, x: Var, w: f64) -> Result<Var> {
        if w == 1.0 {
            Ok(x)
        } else {
            tape.scale(x, w)
        }
    }

    /// Forward every active branch and sum the weighted losses. Branches of the
    /// variant that are switched off never run; `L_s` and `L_g` are skipped for
    /// batches without labeled samples. A non-finite value inside a branch is
    /// reported as [`Error::Diverged`] tagged with `step`.
    pub fn compose_loss(
        &self,
        tape: &mut Tape<T>,
        b: &Bindings,
        inputs: &StepInputs<T>,
        step: usize,
    ) -> Result<LossVars> {
        let w = &self.config.weights;
        let labeled = inputs.labels.num_labeled() > 0;
        let mut terms = Vec::new();
        let (mut supervised, mut graph_loss, mut byol_term) = (None, None, None);

        if labeled {
            let out = encoder::forward(tape, &b.online, &self.encoder, &inputs.images)
                .map_err(|e| branch_failure(e, tape, step, "supervised"))?;
            let ls = classify(tape, &b.online, out.pooled_cls)
                .and_then(|z| bce_loss(tape, z, &inputs.labels))
                .map_err(|e| branch_failure(e, tape, step, "supervised"))?;
            supervised = Some(ls);
            terms.push(Self::weighted(tape, ls, w.supervised)?);
            if let Some(g) = &self.graph {
                let lg = g
                    .forward(tape, &b.online, out.cls)
                    .and_then(|z| bce_loss(tape, z, &inputs.labels))
                    .map_err(|e| branch_failure(e, tape, step, "graph"))?;
                graph_loss = Some(lg);
                terms.push(Self::weighted(tape, lg, w.graph)?);
            }
        }

        if self.variant.use_byol() {
            let (v1, v2) = match (&inputs.view1, &inputs.view2) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Empty("BYOL views".into())),
            };
            let lb = (|| {
                let forward = self.byol_direction(tape, b, v1, v2)?;
                if !self.config.model.byol_symmetric {
                    return Ok(forward);
                }
                let back = self.byol_direction(tape, b, v2, v1)?;
                let s = tape.add(forward, back)?;
                tape.scale(s, 0.5)
            })()
            .map_err(|e| branch_failure(e, tape, step, "byol"))?;
            byol_term = Some(lb);
            terms.push(Self::weighted(tape, lb, w.byol)?);
        }

        let total = match terms.split_first() {
            None => tape.constant(Tensor::scalar(T::zero())),
            Some((&first, rest)) => {
                let mut acc = first;
                for &t in rest {
                    acc = tape.add(acc, t)?;
                }
                acc
            }
        };
        Ok(LossVars {
            supervised,
            graph: graph_loss,
            byol: byol_term,
            total,
        })
    }

    /// Checkpoint with online tensors, target tensors under [`TARGET_PREFIX`]
    /// and enough metadata to rebuild the model.
    pub fn to_checkpoint(&self, full: &LabelHierarchy) -> Result<Checkpoint<T>> {
        let meta = CheckpointMeta {
            variant: self.variant,
            labels: full.labels().to_vec(),
            parents: (0..full.len()).map(|i| full.parent(i)).collect(),
            image_size: self.encoder.image_size,
            channels: self.encoder.channels,
            config: self.config.clone(),
        };
        let mut ck = Checkpoint::new(serde_json::to_value(&meta)?);
        for (name, t) in self.online.iter() {
            ck.tensors.insert(name.to_string(), t.clone());
        }
        if let Some(target) = &self.target {
            for (name, t) in target.iter() {
                ck.tensors.insert(format!("{TARGET_PREFIX}{name}"), t.clone());
            }
        }
        Ok(ck)
    }

    /// Rebuild a model from a checkpoint, checking it against `full`.
    pub fn from_checkpoint(ck: &Checkpoint<T>, full: &LabelHierarchy) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(ck.metadata.clone())?;
        if meta.labels != full.labels() || (0..full.len()).any(|i| meta.parents[i] != full.parent(i)) {
            return Err(Error::Checkpoint("checkpoint was trained on a different hierarchy".into()));
        }
        let mut model = Self::new(full, &meta.config, meta.image_size, meta.channels)?;
        let mut online = ParameterStore::new(Role::Online);
        let mut target = ParameterStore::new(Role::Target);
        for (name, t) in &ck.tensors {
            match name.strip_prefix(TARGET_PREFIX) {
                Some(n) => target.insert(n, t.clone()),
                None => online.insert(name.clone(), t.clone()),
            }
        }
        model.online.check_paired(&online)?;
        model.online = online;
        if let Some(expected) = &model.target {
            expected.check_paired(&target)?;
            model.target = Some(target);
        } else if !target.is_empty() {
            return Err(Error::Checkpoint("unexpected target tensors".into()));
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    variant: Variant,
    labels: Vec<String>,
    parents: Vec<Option<usize>>,
    image_size: usize,
    channels: usize,
    config: TrainConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::config::ModelConfig;

    fn toy() -> LabelHierarchy {
        LabelHierarchy::parse(include_str!("../../assets/toy.yaml")).unwrap()
    }

    fn config(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            model: ModelConfig {
                pixel_mean: Some(0.2),
                pixel_std: Some(0.2),
                embed_dim: 8,
                depth: 1,
                heads: 2,
                mlp_ratio: 2,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let h = toy();
        for variant in Variant::ALL {
            let m = Model::<f32>::new(&h, &config(variant), 16, 3).unwrap();
            let bytes = m.to_checkpoint(&h).unwrap().to_bytes().unwrap();
            let back = Model::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), &h).unwrap();
            assert_eq!(back.online, m.online);
            assert_eq!(back.target, m.target);
            assert_eq!(back.label_map, m.label_map);
            assert_eq!(back.config, m.config);
        }
    }

    #[test]
    fn checkpoint_rejects_other_hierarchy() {
        let h = toy();
        let m = Model::<f32>::new(&h, &config(Variant::Hmlc), 16, 3).unwrap();
        let ck = m.to_checkpoint(&h).unwrap();
        let other = LabelHierarchy::parse("a: [b, c]\n").unwrap();
        assert!(matches!(Model::from_checkpoint(&ck, &other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn flat_variant_uses_leaf_columns() {
        let h = toy();
        let m = Model::<f32>::new(&h, &config(Variant::Mlc), 16, 3).unwrap();
        assert_eq!(m.label_map, h.leaf_ids());
        assert_eq!(m.num_labels(), 8);
        let m = Model::<f32>::new(&h, &config(Variant::Hmlc), 16, 3).unwrap();
        assert_eq!(m.num_labels(), 14);
    }

    #[test]
    fn unlabeled_batch_skips_supervised_terms() {
        let h = toy();
        let m = Model::<f64>::new(&h, &config(Variant::Helm), 16, 3).unwrap();
        let img = Tensor::from_f64(&[2, 3, 16, 16], &vec![0.3; 2 * 3 * 256]).unwrap();
        let view = Tensor::from_f64(&[2, 3, 16, 16], &(0..1536).map(|i| (i % 7) as f64 / 7.0).collect::<Vec<_>>()).unwrap();
        let labels = BatchLabels::new(Tensor::zeros(&[2, 14]), vec![false, false]).unwrap();
        let inputs = StepInputs {
            images: img,
            labels,
            view1: Some(view.clone()),
            view2: Some(view),
        };
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, false);
        let l = m.compose_loss(&mut tape, &b, &inputs, 0).unwrap();
        assert!(l.supervised.is_none() && l.graph.is_none());
        let (lb, total) = (tape.value(l.byol.unwrap()).data()[0], tape.value(l.total).data()[0]);
        assert_eq!(lb, total);
    }
}
