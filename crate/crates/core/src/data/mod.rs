//! Dataset pipeline: manifests, patches, whitening, augmentation, splits.

pub mod augment;
pub mod balance;
pub mod manifest;
pub mod patch;
pub mod prepare;
pub mod raster;
pub mod split;
pub mod store;
pub mod whiten;

pub use augment::{augment, AugmentConfig, AugmentPolicy, AugmentRecord, GeometricOp};
pub use balance::balance;
pub use manifest::{load_manifest, write_manifest, DatasetTag, ImageRecord, ManifestAudit, Subset, View};
pub use patch::{extract_all, extract_patches, Patch};
pub use prepare::{prepare, PipelineConfig, PreparedData};
pub use raster::RgbImage;
pub use split::{split, Side, SplitManifest, SplitUnit};
pub use whiten::{compute_whitening_stats, StatsScope, WhiteningStats};
