//! Encoder-decoder segmentation network with hand-written backpropagation.

mod model;
mod ops;
mod tensor;
mod train;
mod weights;

pub use model::{layer_plan, ForwardCache, Gradients, Layer, LayerKind, UNetConfig, UNetParams};
pub use ops::{
    bce_logit_grad, bce_loss, concat_skip, conv3x3_relu, conv3x3_relu_backward, maxpool2x2,
    maxpool2x2_backward, project, project_backward, sigmoid, split_channels, upconv2x2,
    upconv2x2_backward,
};
pub use tensor::{Scalar, Tensor};
pub use train::{
    images_to_tensor, masks_to_tensor, predict_mask, predict_masks, predict_probabilities,
    probabilities_to_mask, train, train_with, EpochRecord, History,
};
pub use weights::{load_params, load_params_file, save_params, save_params_file, TensorEntry, WeightsHeader, MAGIC};
