//! Deterministic federated-learning simulator with dual clustered feature
//! contrast, FINCH clustering and adversarial training.
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix it to `f64`.

pub mod adversarial;
pub mod contrast;
pub mod datagen;
pub mod error;
pub mod federation;
pub mod finch;
pub mod numerics;
pub mod scalar;
pub mod signals;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor2<f64>;
pub type Model = numerics::ModelParams<f64>;
pub type Grads = numerics::Gradients<f64>;
pub type Data = datagen::Dataset<f64>;
pub type Client = datagen::ClientDataset<f64>;
pub type Bank = contrast::SignalBank<f64>;
pub type Context = contrast::ContrastContext<f64>;

pub type Tensor32 = numerics::Tensor2<f32>;
pub type Model32 = numerics::ModelParams<f32>;
pub type Data32 = datagen::Dataset<f32>;
