//! Layers with hand-written forward and backward passes, initialization and
//! losses.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod lstm;
mod params;
pub mod pool;
pub mod sequential;

pub use activation::{relu, sigmoid};
pub use conv::{conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward};
pub use dense::{dense_backward, dense_forward};
pub use gradcheck::{grad_check, relative_error, GradCheck};
pub use init::{mix_seed, xavier_init, xavier_limit};
pub use loss::{mse_loss, softmax, softmax_cross_entropy};
pub use lstm::{
    lstm_sequence, lstm_sequence_backward, lstm_sequence_states, lstm_sequence_states_backward, lstm_step,
    lstm_step_backward,
};
pub use params::ParamSet;
pub use pool::{maxpool_backward, maxpool_forward};
pub use sequential::{Layer, Sequential};
