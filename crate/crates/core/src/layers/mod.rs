//! Differentiable primitives: convolution, batch normalization, maxout,
//! pooling, ReLU, dropout, and the softmax cross-entropy head. Each has an
//! explicit forward/backward pair; forward passes are pure and return
//! whatever cache the backward pass needs.

pub mod batchnorm;
pub mod conv;
pub mod dropout;
pub mod maxout;
pub mod pool;
pub mod relu;
pub mod softmax;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_update_running, BatchNormLayer, BnCache,
    BnGrads, Mode,
};
pub use conv::{conv_backward, conv_forward, ConvGrads, ConvLayer};
pub use dropout::{dropout_backward, dropout_forward, dropout_mask};
pub use maxout::{MaxoutCache, MaxoutJoin};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool3_backward, maxpool3_forward, pooled_size,
    PoolCache,
};
pub use relu::{relu_backward, relu_forward};
pub use softmax::{argmax_classes, softmax_probs, softmax_xent};
