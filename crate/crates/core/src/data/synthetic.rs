//! Synthetic hierarchical images.
//!
//! Every leaf owns one cell of a square grid. A sample draws a uniform number of
//! distinct leaves and paints, for each, a textured block in that leaf's cell.
//! Block colour is shared by a colour family per top-level ancestor and shifted
//! per intermediate ancestor, so siblings look alike; the stripe frequency and
//! orientation of the texture are leaf-specific. Gaussian noise is added last.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{LabelHierarchy, LabelVector};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub channels: usize,
    /// Inclusive range of leaves drawn per sample.
    pub leaves_per_sample: (usize, usize),
    pub noise_std: f64,
    pub background: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            leaves_per_sample: (1, 3),
            noise_std: 0.1,
            background: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[C, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub labels: LabelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Motif {
    pub leaf: usize,
    /// Top-left pixel and side of the block.
    pub top: usize,
    pub left: usize,
    pub side: usize,
    pub rgb: [f64; 3],
    pub frequency: f64,
    pub vertical: bool,
}

/// One motif per leaf, indexed like `h.leaf_ids()`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotifTable {
    pub motifs: Vec<Motif>,
}

impl MotifTable {
    pub fn new(h: &LabelHierarchy, image_size: usize) -> Result<Self> {
        let leaves = h.leaf_ids();
        let grid = (leaves.len() as f64).sqrt().ceil() as usize;
        let cell = image_size / grid.max(1);
        if cell < 2 {
            return Err(Error::InvalidConfig(format!(
                "motif table incomplete: {} leaves do not fit distinct cells of a {image_size}px image",
                leaves.len()
            )));
        }
        let margin = cell / 8;
        let side = cell - 2 * margin;
        let tops = h.level_range(1).len().max(1);
        let mut motifs = Vec::with_capacity(leaves.len());
        for (i, &leaf) in leaves.iter().enumerate() {
            let family = h.ancestor_at(leaf, 1).unwrap_or(leaf);
            let mut hue = family as f64 / tops as f64;
            // Intermediate ancestors shift the hue inside the family's band.
            let band = 0.5 / tops as f64;
            for level in 2..=h.level(leaf) {
                let a = h.ancestor_at(leaf, level).unwrap();
                let siblings = match h.parent(a) {
                    Some(p) => h.children(p),
                    None => &[],
                };
                let pos = siblings.iter().position(|&s| s == a).unwrap_or(0);
                let n = siblings.len().max(1);
                hue += band * (pos as f64 + 0.5) / n as f64 / (level - 1) as f64;
            }
            let sib_pos = h
                .parent(leaf)
                .map(|p| h.children(p).iter().position(|&s| s == leaf).unwrap_or(0))
                .unwrap_or(i);
            motifs.push(Motif {
                leaf,
                top: (i / grid) * cell + margin,
                left: (i % grid) * cell + margin,
                side,
                rgb: hsv_to_rgb(hue.fract(), 0.85, 0.95),
                frequency: 1.0 + sib_pos as f64,
                vertical: sib_pos % 2 == 1,
            });
        }
        Ok(Self { motifs })
    }

    pub fn for_leaf(&self, leaf: usize) -> Option<&Motif> {
        self.motifs.iter().find(|m| m.leaf == leaf)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// SplitMix64 finaliser of `(seed, index)`; the per-sample seed.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Paint the motifs of `leaves` without noise.
pub fn render(spec: &SyntheticSpec, table: &MotifTable, leaves: &[usize]) -> Result<Tensor<f32>> {
    let (c, n) = (spec.channels, spec.image_size);
    let mut px = vec![spec.background; c * n * n];
    for &leaf in leaves {
        let m = table
            .for_leaf(leaf)
            .ok_or_else(|| Error::InvalidConfig(format!("motif table incomplete: no motif for label {leaf}")))?;
        for y in 0..m.side {
            for x in 0..m.side {
                let t = if m.vertical { x } else { y } as f64 / m.side as f64;
                let stripe = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * m.frequency * t).cos();
                for ch in 0..c {
                    let base = if c == 3 { m.rgb[ch] } else { m.rgb.iter().sum::<f64>() / 3.0 };
                    px[(ch * n + m.top + y) * n + m.left + x] = base * stripe;
                }
            }
        }
    }
    Tensor::from_f64(&[c, n, n], &px)
}

/// `n` samples; sample `i` depends only on `(spec, h, seed, i)`.
pub fn generate_synthetic(h: &LabelHierarchy, spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Empty("synthetic dataset of zero samples".into()));
    }
    let (lo, hi) = spec.leaves_per_sample;
    let n_leaves = h.leaf_ids().len();
    if lo == 0 || lo > hi || hi > n_leaves {
        return Err(Error::InvalidConfig(format!(
            "leaves_per_sample ({lo}, {hi}) must satisfy 1 <= min <= max <= {n_leaves}"
        )));
    }
    if spec.noise_std < 0.0 || spec.channels == 0 {
        return Err(Error::InvalidConfig("noise_std must be non-negative and channels positive".into()));
    }
    let table = MotifTable::new(h, spec.image_size)?;
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, i as u64));
            let k = rng.gen_range(lo..=hi);
            let mut leaves: Vec<usize> = sample_indices(&mut rng, n_leaves, k)
                .into_iter()
                .map(|j| h.leaf_ids()[j])
                .collect();
            leaves.sort_unstable();
            let mut image = render(spec, &table, &leaves)?;
            if spec.noise_std > 0.0 {
                for v in image.data_mut() {
                    *v = (*v as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                }
            }
            Ok(Sample {
                image,
                labels: h.closure_of_ids(&leaves),
            })
        })
        .collect()
}
