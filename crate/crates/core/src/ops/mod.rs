//! Reference forward and backward operators.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shuffle;
pub mod upsample;

pub use activation::{activate, activation_backward, leaky_relu, relu, relu6, relu_backward, Activation, DARKNET_LEAKY_SLOPE};
pub use conv::{conv2d, conv2d_backward, conv_out_extent, conv_output_shape, depthwise_separable_conv, ConvGrads, ConvParams, ConvWeights};
pub use loss::{argmax_channel, cross_entropy_loss, loss_backward, softmax_channel, CrossEntropy};
pub use norm::{batchnorm_infer, batchnorm_train, bn_backward_infer, bn_backward_train, BatchNormParams, BnTrainCache};
pub use pool::{avgpool2d, avgpool2d_backward, global_avgpool, global_avgpool_backward, maxpool2d, maxpool2d_backward, PoolParams};
pub use shuffle::{channel_shuffle, channel_unshuffle};
pub use upsample::{bilinear_upsample, upsample_backward};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Splits a channel-concat gradient back into the slots of its inputs.
pub fn concat_backward<T: Scalar>(grad_out: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let mut start = 0;
    channels
        .iter()
        .map(|&c| {
            let g = grad_out.slice_channels(start, c);
            start += c;
            g
        })
        .collect()
}
