//! Paired cross-modal retrieval with two-stage translation training.
//!
//! Six small MLPs make up a [`DstcModel`]: an encoder and a classifier per
//! modality plus two translators between the embedding spaces. Training first
//! fits the encoders and classifiers with cross-entropy, then fits the
//! translators (and fine-tunes the encoders) against frozen classifiers.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod eval;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

mod binio;

pub use data::{Batch, PairedDataset, Split, SyntheticSpec};
pub use error::{Error, Result};
pub use eval::{Direction, RetrievalReport};
pub use loss::{LossBreakdown, LossTerm, LossWeights, Metric, TermCoefficients};
pub use model::{ArchPreset, DstcModel, ModelGrads, PresetName, Subnet};
pub use nn::{Mlp, MlpSpec, Mode};
pub use optim::{AdamConfig, AdamState, TrainMask};
pub use tensor::Matrix;
pub use train::{TrainConfig, TrainHistory};
