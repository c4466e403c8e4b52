//! Acoustic model: a conv front end, a bidirectional LSTM stack with a
//! per-frame softmax, and a noise-type classifier fed from one tapped
//! recurrent layer.

mod check;
mod checkpoint;
mod config;
mod network;
mod params;


pub use check::{joint_loss_and_grad, tiny_config, tiny_model_gradcheck, GRADCHECK_STEP};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::{ConvSpec, ModelConfig};
pub use network::{cross_entropy, infer, infer_noise, Forward, Network};
pub use params::{
    init_params, layout, param_groups, BiLstmIndex, LayerId, Layout, ModelParams, Param, ParamGroup, ParamSpec,
    ParamTag,
};
