//! Self-supervised branch: view augmentation and BYOL.

pub mod augment;
pub mod byol;

pub use augment::{augment, AugmentationPolicy, PolicyKind};
pub use byol::{byol_loss, ema_update, target_store, ByolFeature};
