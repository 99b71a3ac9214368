//! Toy-scale neural building blocks with hand-rolled backpropagation:
//! dense layers, dilated 2-D convolution, max-pool/unpool, stand-alone
//! self-attention, metric and regression losses, finite-difference
//! gradient checking, and the two training pipelines built from them.

mod attention;
mod conv;
mod dense;
mod gradcheck;
mod io;
mod loss;
mod pool;
mod tensor;

pub mod datagen;
pub mod train;

pub use attention::SasaLayer;
pub use conv::{
    conv2d_backward, conv2d_forward, effective_kernel_size, zero_interleave_kernel, Conv2dLayer,
};
pub use dense::DenseLayer;
pub use gradcheck::{finite_diff_check, gradcheck_suite, GradCheckCase, GradCheckReport};
pub use io::{load_model, save_model};
pub use loss::{
    contrastive_loss, contrastive_loss_grad, embedding_distance, mse_padded_loss,
    mse_padded_loss_grad,
};
pub use pool::{max_pool2d, max_unpool2d, PoolMask};
pub use tensor::Tensor;
pub use train::{
    inflection_targets, matrix_to_input, train_inflection_regressor, train_path_regressor,
    InflectionNet, PathHeadKind, PathLossKind, PathNet, ToyModel, TrainConfig, TrainReport,
};
