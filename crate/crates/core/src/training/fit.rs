//! Training loop: batching, augmentation, optimizer and EMA steps, logs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::batch::{compose_batches, steps_per_epoch, BatchPlan};
use super::config::TrainConfig;
use super::model::{Model, ParamCounts, StepInputs};
use crate::classification::BatchLabels;
use crate::data::{sample_seed, Sample, SplitPlan};
use crate::error::{Error, Result};
use crate::hierarchy::LabelHierarchy;
use crate::numerics::{cosine_lr, AdamW, Gradients, Real, Tape, Tensor};
use crate::ssl::{augment, ema_update};

/// Branch losses of one step. Inactive or skipped branches report 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub step: usize,
    pub lr: f64,
    #[serde(rename = "L_s")]
    pub l_s: f64,
    #[serde(rename = "L_g")]
    pub l_g: f64,
    #[serde(rename = "L_b")]
    pub l_b: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

/// Order of the state-changing phases inside one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepEvent {
    Forward,
    Backward,
    Optimizer,
    Ema,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub losses: LossBundle,
    pub events: Vec<StepEvent>,
}

/// One line of the per-epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_s")]
    pub l_s: f64,
    #[serde(rename = "L_g")]
    pub l_g: f64,
    #[serde(rename = "L_b")]
    pub l_b: f64,
    #[serde(rename = "L")]
    pub l: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub param_count: usize,
}

/// Stable per-(epoch, sample, view) augmentation seed.
pub fn augmentation_seed(seed: u64, epoch: usize, index: usize, view: u64) -> u64 {
    let key = ((epoch as u64) << 40) ^ ((index as u64) << 2) ^ view;
    sample_seed(seed ^ 0xA46_3E1, key)
}

/// Mean and standard deviation over every pixel of the selected samples.
pub fn pixel_stats(samples: &[Sample], indices: &[usize]) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for &i in indices {
        for &v in samples[i].image.data() {
            let v = v as f64;
            n += 1;
            sum += v;
            sq += v * v;
        }
    }
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = sum / n as f64;
    (mean, (sq / n as f64 - mean * mean).max(0.0).sqrt())
}

pub struct Trainer<'a, T> {
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
    pub samples: &'a [Sample],
    pub plan: SplitPlan,
    /// Completed steps.
    pub step: usize,
    pub total_steps: usize,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(
        full: &LabelHierarchy,
        config: &TrainConfig,
        samples: &'a [Sample],
        plan: SplitPlan,
    ) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Empty("training set".into()))?;
        let shape = first.image.shape();
        if shape.len() != 3 || shape[1] != shape[2] {
            return Err(Error::Shape(format!("expected square [C, H, W] images, got {shape:?}")));
        }
        if let Some(bad) = samples.iter().position(|s| s.image.shape() != shape) {
            return Err(Error::Shape(format!("sample {bad} differs in shape from sample 0")));
        }
        if plan.labeled.iter().chain(&plan.unlabeled).any(|&i| i >= samples.len()) {
            return Err(Error::InvalidConfig("split refers past the end of the dataset".into()));
        }
        let mut config = config.clone();
        if config.model.pixel_mean.is_none() || config.model.pixel_std.is_none() {
            let pool: Vec<usize> = plan.labeled.iter().chain(&plan.unlabeled).copied().collect();
            let (mean, std) = pixel_stats(samples, &pool);
            config.model.pixel_mean.get_or_insert(mean);
            config.model.pixel_std.get_or_insert(if std > 0.0 { std } else { 1.0 });
        }
        let model = Model::new(full, &config, shape[1], shape[0])?;
        let total_steps =
            config.epochs * steps_per_epoch(&plan, config.batch_size, config.variant.semi_supervised());
        Ok(Self {
            model,
            optimizer: AdamW::new(config.optimizer),
            samples,
            plan,
            step: 0,
            total_steps,
        })
    }

    fn config(&self) -> &TrainConfig {
        &self.model.config
    }

    pub fn batches(&self, epoch: usize) -> Result<Vec<BatchPlan>> {
        let c = self.config();
        compose_batches(
            &self.plan,
            c.batch_size,
            c.variant.semi_supervised(),
            c.labeled_per_batch,
            c.seed,
            epoch,
        )
    }

    fn stack(&self, batch: &BatchPlan, epoch: usize, view: u64) -> Result<Tensor<T>> {
        let c = self.config();
        let policy = match view {
            0 if c.augment_supervised => Some(&c.weak),
            0 => None,
            1 => Some(c.policy(c.model.view1)),
            _ => Some(c.policy(c.model.view2)),
        };
        let images = batch
            .indices
            .iter()
            .map(|&i| {
                let img: Tensor<T> = self.samples[i].image.cast();
                let img = match policy {
                    Some(p) => augment(&img, p, augmentation_seed(c.seed, epoch, i, view))?,
                    None => img,
                };
                Ok(c.model.normalize(&img))
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&images)
    }

    /// Images, labels and views for one batch.
    pub fn inputs(&self, batch: &BatchPlan, epoch: usize) -> Result<StepInputs<T>> {
        let rows: Vec<_> = batch
            .indices
            .iter()
            .zip(&batch.labeled)
            .map(|(&i, &l)| l.then(|| &self.samples[i].labels))
            .collect();
        let m = self.model.num_labels();
        let mut targets = Vec::with_capacity(rows.len() * m);
        for r in &rows {
            match r {
                Some(v) => targets.extend(v.project(&self.model.label_map)),
                None => targets.extend(std::iter::repeat(0.0).take(m)),
            }
        }
        let labels = BatchLabels::new(Tensor::from_f64(&[rows.len(), m], &targets)?, batch.labeled.clone())?;
        let byol = self.model.variant.use_byol();
        Ok(StepInputs {
            images: self.stack(batch, epoch, 0)?,
            labels,
            view1: if byol { Some(self.stack(batch, epoch, 1)?) } else { None },
            view2: if byol { Some(self.stack(batch, epoch, 2)?) } else { None },
        })
    }

    /// Forward, backward, AdamW on the online store, then EMA on the target.
    pub fn train_step(&mut self, inputs: &StepInputs<T>) -> Result<StepReport> {
        let step = self.step;
        let lr = cosine_lr(step, self.total_steps.max(1), self.config().base_lr)?;
        let mut events = vec![StepEvent::Forward];
        let mut tape = Tape::new();
        let bindings = self.model.bind(&mut tape, false);
        let loss = self.model.compose_loss(&mut tape, &bindings, inputs, step)?;
        let value = |v: Option<_>| v.map_or(0.0, |v| tape.value(v).data()[0].as_f64());
        let losses = LossBundle {
            step,
            lr,
            l_s: value(loss.supervised),
            l_g: value(loss.graph),
            l_b: value(loss.byol),
            l: tape.value(loss.total).data()[0].as_f64(),
        };
        if !losses.l.is_finite() {
            return Err(Error::Diverged {
                step,
                branch: "total".into(),
                max_activation: tape.max_abs_activation(),
            });
        }
        let max_activation = tape.max_abs_activation();
        let diverged = |e: Error| match e {
            Error::NonFinite(_) => Error::Diverged {
                step,
                branch: "backward".into(),
                max_activation,
            },
            other => other,
        };
        let all = tape.backward(loss.total).map_err(diverged)?;
        events.push(StepEvent::Backward);
        let mut grads = Gradients::default();
        for (name, g) in all.iter() {
            if self.model.online.contains(name) {
                if !g.is_finite() {
                    return Err(diverged(Error::NonFinite(format!("gradient of {name}"))));
                }
                grads.insert(name.to_string(), g.clone());
            }
        }
        self.optimizer.step(&mut self.model.online, &grads, step as u64 + 1, lr)?;
        events.push(StepEvent::Optimizer);
        if let Some(target) = &mut self.model.target {
            ema_update(&self.model.online, target, self.model.config.model.ema_tau)?;
            events.push(StepEvent::Ema);
        }
        self.step += 1;
        Ok(StepReport { losses, events })
    }

    /// One pass over the epoch's batches; returns the per-step losses.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<Vec<LossBundle>> {
        let batches = self.batches(epoch)?;
        let mut out = Vec::with_capacity(batches.len());
        for b in &batches {
            let inputs = self.inputs(b, epoch)?;
            out.push(self.train_step(&inputs)?.losses);
        }
        Ok(out)
    }
}

/// Result of [`fit`]: the trained model, per-epoch and per-step logs.
/// Wall-clock times are kept apart from the logs so that the logs depend
/// only on the configuration.
pub struct FitOutput<T> {
    pub model: Model<T>,
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<LossBundle>,
    pub epoch_seconds: Vec<f64>,
    pub params: ParamCounts,
}

fn epoch_log(epoch: usize, steps: &[LossBundle], param_count: usize) -> EpochLog {
    let n = steps.len().max(1) as f64;
    let mean = |f: fn(&LossBundle) -> f64| steps.iter().map(f).sum::<f64>() / n;
    EpochLog {
        epoch,
        l_s: mean(|s| s.l_s),
        l_g: mean(|s| s.l_g),
        l_b: mean(|s| s.l_b),
        l: mean(|s| s.l),
        lr: steps.last().map_or(0.0, |s| s.lr),
        param_count,
    }
}

/// Train for `config.epochs` epochs. `on_epoch` sees every epoch log as it
/// is produced.
pub fn fit<T: Real>(
    full: &LabelHierarchy,
    config: &TrainConfig,
    samples: &[Sample],
    plan: SplitPlan,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutput<T>> {
    let mut trainer = Trainer::<T>::new(full, config, samples, plan)?;
    let params = trainer.model.param_counts();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = Vec::new();
    let mut epoch_seconds = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let losses = trainer.run_epoch(epoch)?;
        epoch_seconds.push(start.elapsed().as_secs_f64());
        let log = epoch_log(epoch, &losses, params.trainable);
        log::info!("epoch {epoch}: L = {:.5}", log.l);
        on_epoch(&log);
        epochs.push(log);
        steps.extend(losses);
    }
    Ok(FitOutput {
        model: trainer.model,
        epochs,
        steps,
        epoch_seconds,
        params,
    })
}

/// JSON-lines rendering of any serializable records.
pub fn to_jsonl<S: Serialize>(records: &[S]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_split_with_test, SyntheticSpec};
    use crate::training::config::{ModelConfig, Variant};

    fn setup() -> (LabelHierarchy, Vec<Sample>, SplitPlan) {
        let h = LabelHierarchy::parse(include_str!("../../assets/toy.yaml")).unwrap();
        let spec = SyntheticSpec {
            image_size: 16,
            ..SyntheticSpec::default()
        };
        let samples = generate_synthetic(&h, &spec, 24, 1).unwrap();
        let plan = make_split_with_test(24, 8, 0.25, 1).unwrap();
        (h, samples, plan)
    }

    fn config(variant: Variant, epochs: usize) -> TrainConfig {
        TrainConfig {
            variant,
            epochs,
            batch_size: 4,
            model: ModelConfig {
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
    fn ema_follows_the_optimizer() {
        let (h, samples, plan) = setup();
        let mut t = Trainer::<f32>::new(&h, &config(Variant::HelmB, 1), &samples, plan).unwrap();
        let batch = t.batches(0).unwrap().remove(0);
        let inputs = t.inputs(&batch, 0).unwrap();
        let before = t.model.target.clone().unwrap();
        let report = t.train_step(&inputs).unwrap();
        use StepEvent::*;
        assert_eq!(report.events, vec![Forward, Backward, Optimizer, Ema]);
        // The target moved toward the updated online weights, not the old ones.
        let tau = t.model.config.model.ema_tau;
        let after = t.model.target.as_ref().unwrap();
        for (name, x) in after.iter() {
            let (x0, o) = (before.get(name).unwrap(), t.model.online.get(name).unwrap());
            for ((a, b), c) in x.data().iter().zip(x0.data()).zip(o.data()) {
                let want = tau * *b as f64 + (1.0 - tau) * *c as f64;
                assert!((*a as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn supervised_variants_have_no_ema_step() {
        let (h, samples, plan) = setup();
        let mut t = Trainer::<f32>::new(&h, &config(Variant::HelmG, 1), &samples, plan).unwrap();
        let batch = t.batches(0).unwrap().remove(0);
        let inputs = t.inputs(&batch, 0).unwrap();
        let r = t.train_step(&inputs).unwrap();
        assert_eq!(r.events.last(), Some(&StepEvent::Optimizer));
        assert!(r.losses.l_g > 0.0 && r.losses.l_b == 0.0);
    }

    #[test]
    fn zero_epochs_keeps_the_initial_model() {
        let (h, samples, plan) = setup();
        let cfg = config(Variant::Helm, 0);
        let out = fit::<f32>(&h, &cfg, &samples, plan.clone(), |_| {}).unwrap();
        assert!(out.epochs.is_empty() && out.steps.is_empty());
        let fresh = Trainer::<f32>::new(&h, &cfg, &samples, plan).unwrap();
        assert_eq!(out.model.online, fresh.model.online);
        assert_eq!(out.model.target, fresh.model.target);
    }

    #[test]
    fn hmlc_logs_only_the_supervised_loss() {
        let (h, samples, plan) = setup();
        let out = fit::<f32>(&h, &config(Variant::Hmlc, 2), &samples, plan, |_| {}).unwrap();
        assert_eq!(out.epochs.len(), 2);
        for s in &out.steps {
            assert_eq!((s.l_g, s.l_b), (0.0, 0.0));
            assert_eq!(s.l, s.l_s);
        }
    }

    #[test]
    fn learning_rate_follows_the_cosine_schedule() {
        let (h, samples, plan) = setup();
        let cfg = config(Variant::HelmG, 3);
        let out = fit::<f32>(&h, &cfg, &samples, plan, |_| {}).unwrap();
        let total = out.steps.len();
        assert_eq!(out.steps[0].lr, cfg.base_lr);
        for (i, s) in out.steps.iter().enumerate() {
            let want = cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * i as f64 / total as f64).cos());
            assert!((s.lr - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_statistics_are_estimated_from_the_training_pool() {
        let (h, samples, plan) = setup();
        let t = Trainer::<f32>::new(&h, &config(Variant::Hmlc, 1), &samples, plan.clone()).unwrap();
        let pool: Vec<f64> = plan
            .labeled
            .iter()
            .chain(&plan.unlabeled)
            .flat_map(|&i| samples[i].image.to_f64_vec())
            .collect();
        let mean = pool.iter().sum::<f64>() / pool.len() as f64;
        let var = pool.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pool.len() as f64;
        let m = &t.model.config.model;
        assert!((m.pixel_mean.unwrap() - mean).abs() < 1e-9);
        assert!((m.pixel_std.unwrap() - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn mismatched_images_rejected() {
        let (h, mut samples, plan) = setup();
        samples[3].image = Tensor::zeros(&[3, 8, 8]);
        assert!(matches!(
            Trainer::<f32>::new(&h, &config(Variant::Hmlc, 1), &samples, plan),
            Err(Error::Shape(_))
        ));
    }
}
