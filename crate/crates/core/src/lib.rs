//! Training and per-pixel saliency for small unsupervised image-fusion
//! networks.
//!
//! A [`FusionModel`] fuses two registered grayscale images. Keeping its
//! forward pass alive as a [`RetainedPass`] makes every Jacobian image a
//! single backward pass through the saved activations, and guidance images
//! a batch of such passes.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the common `f64` instantiations.
//!
//! ```
//! use fuselens_core::{data, saliency, ModelF64, ModelKind};
//!
//! let pair = &data::synth_pairs::<f64>(&data::SyntheticSpec::new(32, 1), 1)?[0];
//! let model = ModelF64::build(ModelKind::DeepFuse, 7);
//! let pass = model.retain(&pair.x1, &pair.x2)?;
//! let (dx1, dx2) = saliency::jacobian_pair(&pass, 529)?;
//! assert_eq!(dx1.values.shape(), pair.x1.shape());
//! # let _ = dx2;
//! # Ok::<(), fuselens_core::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod graph;
pub mod image;
pub mod models;
pub mod saliency;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var, Window};
pub use image::{Image, ImageShape, Modality, Pixel};
pub use models::checkpoint::{Checkpoint, TrainingMetadata};
pub use models::{build_model, FusionModel, ModelKind, RetainedPass};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use training::{LossConfig, LossReport, TrainRunConfig};

pub type TensorF64 = Tensor<f64>;
pub type TensorF32 = Tensor<f32>;
pub type ImageF64 = Image<f64>;
pub type ImageF32 = Image<f32>;
pub type GraphF64 = Graph<f64>;
pub type ModelF64 = FusionModel<f64>;
pub type ModelF32 = FusionModel<f32>;
pub type PassF64 = RetainedPass<f64>;
pub type CheckpointF64 = Checkpoint<f64>;
pub type ImagePairF64 = data::ImagePair<f64>;
