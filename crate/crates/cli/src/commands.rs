use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use helm_core::data::{dump_dataset, load_dataset, Sample};
use helm_core::hierarchy::HierarchySummary;
use helm_core::io::write_atomic;
use helm_core::numerics::Checkpoint;
use helm_core::training::gradcheck::{check_losses, LossCheck};
use helm_core::training::{evaluate, fit, predict, to_jsonl, EvalReport, Model, ParamCounts, Variant};
use helm_core::{Error, LabelHierarchy, Result};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, RunConfig};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const STEP_LOG: &str = "steps.jsonl";
pub const RESOLVED_CONFIG: &str = "config.resolved.yaml";
pub const SUMMARY: &str = "summary.json";

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

/// Command-line overrides applied on top of a loaded [`RunConfig`].
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub variant: Option<Variant>,
    pub ratio: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(v) = self.variant {
            cfg.train.variant = v;
        }
        if let Some(r) = self.ratio {
            cfg.train.ratio = r;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
    }
}

pub fn validate_hierarchy(path: &Path) -> Result<HierarchySummary> {
    Ok(LabelHierarchy::from_file(path)?.summary())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratedData {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub train: usize,
    pub test: usize,
}

/// Render the synthetic dataset of `cfg` to `out/train` and `out/test`.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<GeneratedData> {
    if !matches!(cfg.dataset, DatasetSource::Synthetic(_)) {
        return Err(Error::InvalidConfig("gen-data needs a synthetic dataset source".into()));
    }
    cfg.validate()?;
    let prepared = cfg.prepare()?;
    let mut train_ids: Vec<usize> = prepared.plan.labeled.iter().chain(&prepared.plan.unlabeled).copied().collect();
    train_ids.sort_unstable();
    let pick = |ids: &[usize]| -> Vec<Sample> { ids.iter().map(|&i| prepared.samples[i].clone()).collect() };
    let (train, test) = (pick(&train_ids), pick(&prepared.plan.test));
    Ok(GeneratedData {
        train_manifest: dump_dataset(&out.join("train"), &train, &prepared.hierarchy)?,
        test_manifest: dump_dataset(&out.join("test"), &test, &prepared.hierarchy)?,
        train: train.len(),
        test: test.len(),
    })
}

/// Contents of `summary.json` in a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub ratio: f64,
    pub seed: u64,
    pub epochs: usize,
    pub steps: usize,
    pub params: ParamCounts,
    pub mean_epoch_seconds: f64,
    pub test: Option<EvalReport>,
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Train per `cfg` and write checkpoint, logs, resolved config and summary
/// into `cfg.out`.
pub fn train(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let prepared = cfg.prepare()?;
    let out = &cfg.out;
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let result = fit::<f32>(&prepared.hierarchy, &cfg.train, &prepared.samples, prepared.plan.clone(), |e| {
        log::info!("epoch {} L_s {:.5} L_g {:.5} L_b {:.5}", e.epoch, e.l_s, e.l_g, e.l_b)
    })?;
    log::info!("trained in {:.1?}", start.elapsed());

    let ck = result.model.to_checkpoint(&prepared.hierarchy)?;
    write_atomic(&out.join(CHECKPOINT), &ck.to_bytes()?)?;
    write_atomic(&out.join(TRAIN_LOG), to_jsonl(&result.epochs)?.as_bytes())?;
    write_atomic(&out.join(STEP_LOG), to_jsonl(&result.steps)?.as_bytes())?;

    let mut resolved = cfg.clone();
    resolved.train = result.model.config.clone();
    resolved.hierarchy = absolute(&resolved.hierarchy);
    if let DatasetSource::Manifest(m) = &mut resolved.dataset {
        m.train = absolute(&m.train);
        m.test = m.test.as_deref().map(absolute);
    }
    resolved.out = absolute(out);
    write_atomic(&out.join(RESOLVED_CONFIG), resolved.to_yaml()?.as_bytes())?;

    let test = prepared.test_samples();
    let report = if test.is_empty() {
        None
    } else {
        Some(evaluate(&result.model, &prepared.hierarchy, &test, true)?)
    };
    let n = result.epochs.len();
    let summary = RunSummary {
        variant: cfg.train.variant,
        ratio: cfg.train.ratio,
        seed: cfg.train.seed,
        epochs: n,
        steps: result.steps.len(),
        params: result.params,
        mean_epoch_seconds: result.epoch_seconds.iter().sum::<f64>() / n.max(1) as f64,
        test: report,
    };
    write_atomic(&out.join(SUMMARY), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

pub fn load_checkpoint(path: &Path, hierarchy: &LabelHierarchy) -> Result<Model<f32>> {
    let ck = Checkpoint::<f32>::from_bytes(&std::fs::read(path)?)?;
    Model::from_checkpoint(&ck, hierarchy)
}

/// Evaluate a checkpoint on `samples`, optionally writing `f_CLS` rows as CSV.
pub fn eval(
    model: &Model<f32>,
    hierarchy: &LabelHierarchy,
    samples: &[Sample],
    embeddings: Option<&Path>,
) -> Result<EvalReport> {
    let report = evaluate(model, hierarchy, samples, true)?;
    if let Some(path) = embeddings {
        write_atomic(path, embeddings_csv(model, samples)?.as_bytes())?;
    }
    Ok(report)
}

pub fn embeddings_csv(model: &Model<f32>, samples: &[Sample]) -> Result<String> {
    let p = predict(model, samples)?;
    let d = p.embed_dim;
    let mut out = String::from("id");
    for j in 0..d {
        write!(out, ",f{j}").expect("writing to a String");
    }
    out.push('\n');
    for (i, row) in p.pooled_cls.chunks(d).enumerate() {
        write!(out, "{i}").expect("writing to a String");
        for v in row {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Evaluation samples: the test split of a run config or an explicit manifest.
pub fn eval_samples(cfg: Option<&RunConfig>, manifest: Option<&Path>, hierarchy: &LabelHierarchy) -> Result<Vec<Sample>> {
    match (manifest, cfg) {
        (Some(m), _) => load_dataset(m, hierarchy),
        (None, Some(cfg)) => {
            let test = cfg.prepare()?.test_samples();
            if test.is_empty() {
                return Err(Error::Empty("config has no test samples; pass --manifest".into()));
            }
            Ok(test)
        }
        (None, None) => Err(Error::InvalidConfig("eval needs --config or --manifest".into())),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub passed: bool,
    pub losses: Vec<LossCheck>,
}

pub fn gradcheck(seed: u64) -> Result<GradcheckReport> {
    let losses = check_losses(seed, 1e-6)?;
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        passed: losses.iter().all(|l| l.max_rel_error < GRADCHECK_TOLERANCE),
        losses,
    })
}
