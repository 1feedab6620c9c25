use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamWConfig, Real, Tensor};
use crate::ssl::{AugmentationPolicy, ByolFeature, PolicyKind};

/// Loss-component configurations of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Flat multi-label over leaves, `L_s` only.
    Mlc,
    /// Full hierarchy, `L_s` only.
    Hmlc,
    /// `L_s + L_g`.
    HelmG,
    /// `L_s + L_b`.
    HelmB,
    /// `L_s + L_g + L_b`.
    Helm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Mlc, Variant::Hmlc, Variant::HelmG, Variant::HelmB, Variant::Helm];

    pub fn use_hierarchy(self) -> bool {
        self != Variant::Mlc
    }

    pub fn use_graph(self) -> bool {
        matches!(self, Variant::HelmG | Variant::Helm)
    }

    pub fn use_byol(self) -> bool {
        matches!(self, Variant::HelmB | Variant::Helm)
    }

    /// Whether batches draw on the unlabeled pool.
    pub fn semi_supervised(self) -> bool {
        self.use_graph() || self.use_byol()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mlc => "mlc",
            Variant::Hmlc => "hmlc",
            Variant::HelmG => "helm-g",
            Variant::HelmB => "helm-b",
            Variant::Helm => "helm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Pixels enter the encoder as `(x - pixel_mean) / pixel_std`. Unset
    /// values are estimated from the training pool.
    pub pixel_mean: Option<f64>,
    pub pixel_std: Option<f64>,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch_size: usize,
    pub graph_layers: usize,
    /// Defaults to `embed_dim / 4`.
    pub graph_hidden: Option<usize>,
    pub add_reverse_edges: bool,
    pub add_self_loops: bool,
    /// Defaults to `embed_dim / 2`.
    pub byol_out: Option<usize>,
    /// Defaults to `4 · byol_out`.
    pub byol_hidden: Option<usize>,
    pub ema_tau: f64,
    pub byol_symmetric: bool,
    pub byol_feature: ByolFeature,
    pub view1: PolicyKind,
    pub view2: PolicyKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pixel_mean: None,
            pixel_std: None,
            embed_dim: 32,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            patch_size: 8,
            graph_layers: 2,
            graph_hidden: None,
            add_reverse_edges: true,
            add_self_loops: true,
            byol_out: None,
            byol_hidden: None,
            ema_tau: 0.996,
            byol_symmetric: false,
            byol_feature: ByolFeature::PooledPatches,
            view1: PolicyKind::Strong,
            view2: PolicyKind::Weak,
        }
    }
}

impl ModelConfig {
    pub fn normalize<T: Real>(&self, image: &Tensor<T>) -> Tensor<T> {
        let (m, s) = (
            T::lit(self.pixel_mean.unwrap_or(0.0)),
            T::lit(self.pixel_std.unwrap_or(1.0)),
        );
        image.map(|x| (x - m) / s)
    }

    pub fn graph_hidden(&self) -> usize {
        self.graph_hidden.unwrap_or((self.embed_dim / 4).max(1))
    }

    pub fn byol_out(&self) -> usize {
        self.byol_out.unwrap_or((self.embed_dim / 2).max(1))
    }

    pub fn byol_hidden(&self) -> usize {
        self.byol_hidden.unwrap_or(4 * self.byol_out())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub supervised: f64,
    pub graph: f64,
    pub byol: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            supervised: 1.0,
            graph: 1.0,
            byol: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub ratio: f64,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub weights: LossWeights,
    /// Apply the weak policy to the supervised input.
    pub augment_supervised: bool,
    /// Labeled samples per mixed batch; `None` mixes in proportion to the pools.
    pub labeled_per_batch: Option<usize>,
    pub model: ModelConfig,
    pub weak: AugmentationPolicy,
    pub strong: AugmentationPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Helm,
            epochs: 100,
            batch_size: 16,
            base_lr: 5e-3,
            ratio: 0.05,
            seed: 0,
            optimizer: AdamWConfig {
                weight_decay: 0.05,
                ..AdamWConfig::default()
            },
            weights: LossWeights::default(),
            augment_supervised: true,
            labeled_per_batch: None,
            model: ModelConfig::default(),
            weak: AugmentationPolicy::weak(),
            strong: AugmentationPolicy::strong(),
        }
    }
}

impl TrainConfig {
    pub fn policy(&self, kind: PolicyKind) -> &AugmentationPolicy {
        match kind {
            PolicyKind::Weak => &self.weak,
            PolicyKind::Strong => &self.strong,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.variant.semi_supervised() && self.batch_size < 2 && self.ratio < 1.0 {
            return bad("batch_size must be at least 2 when unlabeled data is mixed in");
        }
        if self.labeled_per_batch.is_some_and(|k| k == 0 || k >= self.batch_size) {
            return bad("labeled_per_batch must lie in [1, batch_size)");
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return bad("ratio must lie in (0, 1]");
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return bad("base_lr must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.model.ema_tau) {
            return bad("ema_tau must lie in [0, 1]");
        }
        let w = &self.weights;
        if [w.supervised, w.graph, w.byol].iter().any(|x| !x.is_finite()) {
            return bad("loss weights must be finite");
        }
        if self.model.pixel_std.is_some_and(|s| !(s > 0.0 && s.is_finite()))
            || self.model.pixel_mean.is_some_and(|m| !m.is_finite())
        {
            return bad("pixel_std must be positive and pixel_mean finite");
        }
        if self.model.graph_layers == 0 {
            return bad("graph_layers must be positive");
        }
        self.weak.validate()?;
        self.strong.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_flags() {
        let rows: Vec<(bool, bool, bool)> = Variant::ALL
            .iter()
            .map(|v| (v.use_hierarchy(), v.use_graph(), v.use_byol()))
            .collect();
        assert_eq!(
            rows,
            vec![
                (false, false, false),
                (true, false, false),
                (true, true, false),
                (true, false, true),
                (true, true, true)
            ]
        );
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("helm-x".parse::<Variant>().is_err());
    }

    #[test]
    fn yaml_round_trip_and_unknown_keys() {
        let cfg = TrainConfig::default();
        let text = serde_yaml::to_string(&cfg).unwrap();
        assert_eq!(serde_yaml::from_str::<TrainConfig>(&text).unwrap(), cfg);
        assert!(serde_yaml::from_str::<TrainConfig>("epochs: 3\nbogus: 1\n").is_err());
        let partial: TrainConfig = serde_yaml::from_str("variant: hmlc\nmodel: {depth: 1}\n").unwrap();
        assert_eq!(partial.variant, Variant::Hmlc);
        assert_eq!(partial.model.depth, 1);
        assert_eq!(partial.model.graph_hidden(), 8);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            ratio: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
