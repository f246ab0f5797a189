//! Search-free block motion estimation with a multi-stage convolutional
//! predictor, classical block-matching baselines, a self-supervised training
//! pipeline and encoder-facing MV export.

pub mod analysis;
pub mod blockmatch;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod frame;
pub mod model;
pub mod mv;
pub mod mvcodec;
pub mod quality;
pub mod selftest;
pub mod synthetic;
pub mod training;
pub mod triplet;
pub mod video;
pub mod warp;

pub use error::{Error, Result};
pub use frame::Frame;
pub use mv::{IntMvField, Mv, MvField, MvFieldSet, RefDir, BLOCK_SIZES, MV_CLIP};
pub use triplet::FrameTriplet;
