// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod objectives;
pub mod ops;
pub mod params;
pub mod routing;
pub mod scalar;
pub mod seeding;
pub mod tensor;
pub mod strategies;

pub use error::{Error, Result};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Network32 = backbone::SegmentationNetwork<f32>;
pub type Network64 = backbone::SegmentationNetwork<f64>;
pub type Policy32 = routing::PolicyNetwork<f32>;
pub type Policy64 = routing::PolicyNetwork<f64>;
pub type DualPath32 = routing::DualPathModel<f32>;
pub type DualPath64 = routing::DualPathModel<f64>;
