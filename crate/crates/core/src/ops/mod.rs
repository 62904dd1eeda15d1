//! Layer kernels: forward and backward passes for every operation the
//! network composes.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod pool;
pub mod reshape;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, BatchNormState, BnCache,
};
pub use conv::{
    conv2d_backward, conv2d_forward, sepconv2d_backward, sepconv2d_forward,
    sepconv2d_forward_with_mid, ConvGrads, ConvKernel, SepConvGrads, SepConvKernel,
};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use loss::{softmax_xent, SoftmaxXent};
pub use pool::{
    maxpool4x4s2_backward, maxpool4x4s2_forward, pool_out_dim, pool_pad_before, ArgmaxMap,
};
pub use reshape::{
    flatten_backward, flatten_forward, global_avg_pool_backward, global_avg_pool_forward,
};
