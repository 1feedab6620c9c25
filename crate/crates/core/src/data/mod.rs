//! Datasets: synthetic generation, image files, manifests and split planning.

pub mod image;
pub mod manifest;
pub mod split;
pub mod synthetic;

pub use manifest::{dump_dataset, load_dataset, load_manifest, ManifestEntry};
pub use split::{make_split, make_split_with_test, SplitPlan};
pub use synthetic::{generate_synthetic, sample_seed, Sample, SyntheticSpec};
