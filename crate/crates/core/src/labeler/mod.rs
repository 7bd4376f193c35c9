//! The sequence labeler: subword embeddings, a bidirectional LSTM, a linear
//! emission layer and a linear-chain CRF with exact inference.

pub mod crf;
mod model;
mod train;

pub use crf::{forward_backward, path_score, viterbi, ForwardBackward, Row, Transitions};
pub(crate) use model::Forward;
pub use model::{
    nll_and_gradient, predict, predict_encoded, ConfidenceVector, LabelerModel, ModelMeta,
    Prediction,
};
pub use train::{mean_nll, token_accuracy, train, EpochLog, TrainConfig, TrainOutcome};
