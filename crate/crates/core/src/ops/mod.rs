//! Forward and hand-written backward passes for every operation the
//! network needs.

mod activations;
mod conv;
mod linear;
mod norm;
mod pooling;
mod shape;

pub use activations::{
    log_sum_exp2, relu, relu_backward, sigmoid, sigmoid_backward, softmax_channels,
    softmax_channels_backward,
};
pub use conv::{
    conv2d, conv2d_backward, conv2d_out_dims, conv2d_transpose, conv2d_transpose_backward, Padding,
};
pub use linear::{linear, linear_backward};
pub use norm::{BatchNorm, BatchNormCache, NormMode};
pub use pooling::{masked_max, masked_max_backward, masked_max_with_argmax};
pub use shape::{
    add, bias_add, bias_add_backward, concat_channels, concat_channels_backward, nearest_upsample,
    nearest_upsample_backward,
};
