//! Differentially private federated optimization: a Rényi-DP accountant for
//! two-level subsampled Gaussian training, a simulator for SCAFFOLD- and
//! FedAvg-style algorithms with clipping and noise, models, data generation
//! and evaluation metrics.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! accountant works in `f64` only.

pub mod accountant;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};

pub type LogRegF64 = models::LogReg<f64>;
pub type LogRegF32 = models::LogReg<f32>;
pub type MlpF64 = models::Mlp<f64>;
pub type MlpF32 = models::Mlp<f32>;
pub type DatasetF64 = data::FederatedDataset<f64>;
pub type DatasetF32 = data::FederatedDataset<f32>;
