pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod shape;

pub use conv::{
    conv2d, conv2d_forward, conv_transpose2d, conv_transpose2d_forward, ConvSpec, ConvTransposeSpec, Padding,
};
pub use elementwise::{add, clamp, dot_const, mean, relu, scale, sum};
pub use norm::{batch_norm, BatchNormState, NormMode};
pub use shape::{concat_channels, crop, slice_channels, upsample_nearest, upsample_nearest_tensor};
