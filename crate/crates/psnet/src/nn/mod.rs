//! Minimal tensor engine with hand-written reverse-mode gradients for the
//! layer set of the heat-map network.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;

pub use gradcheck::{adjoint_gap, finite_difference, gradcheck_suite, CheckKind, CheckResult, ADJOINT_TOLERANCE, FD_STEP, FD_TOLERANCE};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use layers::{
    concat_channels, concat_channels_backward, conv2d, conv2d_backward, maxpool2, maxpool2_backward, patch_axes,
    relu, relu_backward, sepconv4d, sepconv4d_backward, transposed_conv2, transposed_conv2_backward,
    upsample_nearest2, Padding,
};
pub use loss::{batch_loss, heatmap_target, mse_heatmap_loss, TARGET_SCALE};
pub use network::{Network, NetworkConfig, ParamSpec, Tape};
pub use optim::{OptimizerState, RmsPropConfig};
pub use tensor::{Real, Tensor};
