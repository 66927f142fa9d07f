//! Manifest parsing, image conforming, augmentation, splitting and synthetic data.

pub mod augment;
pub mod manifest;
pub mod preprocess;
pub mod split;
pub mod synth;

pub use augment::{augment_image, augment_study, expand_minority_class, AugParams, AugmentationKind};
pub use manifest::{load_manifest, parse_manifest, ManifestRow, SplitTag};
pub use preprocess::{conform, encode_png, load_image, preprocess_image, resize_bilinear};
pub use split::{split_dataset, split_indices, SplitSpec, StratifyBy};
pub use synth::{septal_band_mask, septal_band_mean, synth_cohort, synth_other_view, synth_study, write_synthetic_dataset};
