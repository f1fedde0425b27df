//! Sequential recommendation with bidirectional selective state-space
//! blocks and a learnable frequency-domain filter.
//!
//! The crate is self-contained: a small reverse-mode tensor engine, the
//! layers the model needs, data ingestion, training and ranking evaluation.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod fft;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{EchoMambaModel, ModelConfig};
pub use params::{ParamId, ParamStore, Session};
pub use scalar::{Precision, Scalar};
pub use tensor::{ComplexTensor, Tape, Tensor, Var};
pub use train::{TrainConfig, Trainer};
