//! Stacked LSTM sentence classifiers with residual wiring, bidirectionality,
//! embed average pooling and Monte Carlo dropout inference.

pub mod adam;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mc;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use adam::{Adam, AdamConfig, AdamState};
pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use model::{
    count_parameters, Classifier, ClassifierParams, Direction, DropoutMasks, ForwardOutput, Mode, ModelConfig,
    OutputGate, ResidualMode,
};
pub use rng::{Rng, RngState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
