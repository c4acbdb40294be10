//! Minimal CPU tensor kernels and the segmentation network built from them.

pub mod loss;
pub mod net;
mod ops;
pub mod params;
pub mod tensor;

pub use loss::{pseudo_labels, softmax_cross_entropy, CrossEntropy};
pub use net::{ArchSpec, Cache, Mode, SegNet};
pub use params::{ParamEntry, ParamStore};
pub use tensor::Tensor3;
