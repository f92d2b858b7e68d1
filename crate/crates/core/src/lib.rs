//! Incremental event-type discovery.
//!
//! A base set of labeled event embeddings trains an autoencoder with a
//! semi-supervised clustering head. Pending events are triaged by
//! reconstruction error into known types, deferred events and anomalies;
//! anomalies are clustered into candidate new types, named from topic-model
//! keywords and added to a type registry for the next round.

pub mod anomaly;
pub mod autoencoder;
pub mod cluster_suite;
pub mod data_model;
pub mod embedding;
pub mod error;
pub mod eval_metrics;
pub mod matrix;
pub mod naming;
pub mod persist;
pub mod pipeline;
pub mod scalar;
pub mod semi_dec;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Autoencoder = autoencoder::MlpParams<f64>;
pub type Autoencoder32 = autoencoder::MlpParams<f32>;
pub type Centroids = semi_dec::Centroids<f64>;
pub type Gmm = cluster_suite::GmmModel<f64>;
pub type Embeddings = embedding::EmbeddingMatrix<f64>;
