//! LSTM classifier: configuration, parameters, and forward/backward passes.

mod classifier;
mod config;
mod lstm;
mod params;
mod pooling;

pub use classifier::{Classifier, DropoutMasks, ForwardOutput, Mode};
pub use config::{
    count_parameters, keep_prob_from_drop, preset, Direction, ModelConfig, OutputGate, ResidualMode, PRESET_NAMES,
};
pub use lstm::{bidirectional_forward, cell_step, stack_forward, CellState, StackOutput};
pub use params::{Affine, CellWeights, ClassifierParams, Gate, ParamGrads, INIT_BOUND};
pub use pooling::embed_average_pool;
