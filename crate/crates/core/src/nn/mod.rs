//! Small dense tensor tape with the attention, normalisation, graph
//! convolution and BEV sampling kernels used by the decoder.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, GradReport};
pub use graph::{Activation, Gradients, Graph, Var};
pub use kernels::{attention_bias, bev_cross_attention, biased_self_attention, ffn, gcn_layer, linear, BevGrid};
pub use params::ParamStore;
pub use tensor::{row_normalize, softmax_rows, Tensor};
