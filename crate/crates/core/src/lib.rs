//! Incremental implicit SDF mapping on a sparse octree feature grid.
//!
//! Range scans with known poses are turned into supervised samples along each
//! beam, a multi-resolution corner-feature grid is decoded into signed
//! distance by a small MLP, and both are fitted with a sigmoid/BCE objective
//! plus Eikonal and importance-weighted anchor regularization. Meshes come out
//! of marching cubes; the evaluator scores them against ground truth.

mod binio;
pub mod dataset_io;
pub mod decoder;
pub mod error;
pub mod evaluator;
pub mod field;
pub mod mesher;
pub mod pipeline;
pub mod sampler;
pub mod synthetic;
pub mod trainer;

pub use error::{MapError, Result};
pub use decoder::{Activation, MlpConfig, MlpDecoder};
pub use field::{Contribution, FeatureField, FieldLayout, QueryResult};
pub use sampler::{Sample, SampleKind, SamplerConfig};
pub use trainer::{LossConfig, TrainConfig, TrainReport, Trainer};

pub type Vec3 = nalgebra::Vector3<f64>;
