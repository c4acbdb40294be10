//! Category-wise semantic segmentation with a learned fusion network.
//!
//! Classes are grouped into categories, one segmentation model is trained per
//! category, and a small ensemble network fuses the stacked category masks
//! back into a full label mask.

pub mod datakit;
pub mod digest;
pub mod ensemble;
pub mod error;
pub mod evalkit;
pub mod mask;
pub mod nn;
pub mod scalar;
pub mod segtrain;
pub mod taxonomy;

pub use error::{Error, Result};
pub use mask::{CategoryMask, LabelMask};
pub use scalar::Scalar;
pub use taxonomy::{
    build_remap_table, build_remap_tables, overlay_fuse, preset_strategy, remap_all, remap_label,
    validate_strategy, Category, ClassInfo, ClassTaxonomy, DivisionStrategy, RemapTable,
    ValidationReport, Violation,
};

pub use ensemble::{EnsembleModel, Normalization, PseudoImage};
pub use evalkit::{ConfusionMatrix, IouReport};
pub use nn::{ArchSpec, SegNet, Tensor3};
pub use segtrain::{Checkpoint, TrainConfig};

pub type SegNet32 = nn::SegNet<f32>;
pub type SegNet64 = nn::SegNet<f64>;
pub type Tensor32 = nn::Tensor3<f32>;
pub type Tensor64 = nn::Tensor3<f64>;
pub type Checkpoint32 = segtrain::Checkpoint<f32>;
pub type Checkpoint64 = segtrain::Checkpoint<f64>;
pub type EnsembleModel32 = ensemble::EnsembleModel<f32>;
pub type EnsembleModel64 = ensemble::EnsembleModel<f64>;
pub type TrainSet32 = segtrain::TrainSet<f32>;
pub type TrainSet64 = segtrain::TrainSet<f64>;
