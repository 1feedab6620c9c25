use std::path::{Path, PathBuf};

use helm_core::data::{
    generate_synthetic, load_dataset, make_split, make_split_with_test, Sample, SplitPlan, SyntheticSpec,
};
use helm_core::training::TrainConfig;
use helm_core::{Error, LabelHierarchy, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    #[serde(default)]
    pub spec: SyntheticSpec,
    /// Total samples, test samples included.
    pub samples: usize,
    pub test_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSource {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    Manifest(ManifestSource),
}

/// One experiment: hierarchy, data, training settings and output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub hierarchy: PathBuf,
    #[serde(with = "serde_yaml::with::singleton_map")]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Loaded samples with the split into labeled, unlabeled and test indices.
pub struct Prepared {
    pub hierarchy: LabelHierarchy,
    pub samples: Vec<Sample>,
    pub plan: SplitPlan,
}

impl Prepared {
    pub fn test_samples(&self) -> Vec<Sample> {
        self.plan.test.iter().map(|&i| self.samples[i].clone()).collect()
    }
}

impl RunConfig {
    pub fn from_yaml(text: &str) -> Result<Self> {
        Ok(serde_yaml::from_str(text)?)
    }

    /// Parse `path`, resolving relative paths inside it against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_yaml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.hierarchy = base.join(&cfg.hierarchy);
        cfg.out = base.join(&cfg.out);
        if let DatasetSource::Manifest(m) = &mut cfg.dataset {
            m.train = base.join(&m.train);
            m.test = m.test.as_ref().map(|t| base.join(t));
        }
        Ok(cfg)
    }

    pub fn to_yaml(&self) -> Result<String> {
        Ok(serde_yaml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DatasetSource::Synthetic(s) = &self.dataset {
            if s.test_samples >= s.samples {
                return Err(Error::InvalidConfig("test_samples must be smaller than samples".into()));
            }
        }
        Ok(())
    }

    pub fn load_hierarchy(&self) -> Result<LabelHierarchy> {
        LabelHierarchy::from_file(&self.hierarchy)
    }

    /// Load or generate the data. Synthetic test samples depend only on the
    /// data seed; the labeled subset is drawn with the training seed.
    pub fn prepare(&self) -> Result<Prepared> {
        let hierarchy = self.load_hierarchy()?;
        let (ratio, seed) = (self.train.ratio, self.train.seed);
        let (samples, plan) = match &self.dataset {
            DatasetSource::Synthetic(s) => {
                let samples = generate_synthetic(&hierarchy, &s.spec, s.samples, s.seed)?;
                let fixed = make_split_with_test(s.samples, s.test_samples, 1.0, s.seed)?;
                let pool = fixed.labeled;
                let mut plan = make_split(pool.len(), ratio, seed)?;
                for ids in [&mut plan.labeled, &mut plan.unlabeled] {
                    ids.iter_mut().for_each(|i| *i = pool[*i]);
                }
                plan.test = fixed.test;
                (samples, plan)
            }
            DatasetSource::Manifest(m) => {
                let mut samples = load_dataset(&m.train, &hierarchy)?;
                let mut plan = make_split(samples.len(), ratio, seed)?;
                if let Some(test) = &m.test {
                    let test = load_dataset(test, &hierarchy)?;
                    plan.test = (samples.len()..samples.len() + test.len()).collect();
                    samples.extend(test);
                }
                (samples, plan)
            }
        };
        Ok(Prepared {
            hierarchy,
            samples,
            plan,
        })
    }
}
