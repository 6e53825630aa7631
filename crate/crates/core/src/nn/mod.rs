//! Minimal trainable neural toolkit: tensors, a reverse-mode tape, layers,
//! NAdam and gradient clipping.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{softmax_rows, Gradients, Graph, Var};
pub use layers::{
    additive_attention_pool, init_additive, init_linear, init_mhsa, init_mlp, mlp_forward,
    multi_head_self_attention, Activation, AttentionOutput, PoolOutput,
};
pub use optim::{nadam_step, NadamConfig, OptimizerState};
pub use params::{clip_gradient_norm, GradStore, ParamStore};
pub use tensor::Tensor;
