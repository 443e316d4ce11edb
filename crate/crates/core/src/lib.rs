//! TopoTag fiducial markers: generation, detection, decoding and pose estimation.

// Negated comparisons below deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod generator;
pub mod geometry;
pub mod image;
pub mod pose;
pub mod segmentation;
pub mod selftest;
pub mod synth;
pub mod tagmodel;
pub mod topology;

pub use decoder::{detect, DecodeParams, Detection};
pub use error::{Error, Result};
pub use generator::{render_tag, RenderOptions};
pub use image::GrayImage;
pub use pose::{estimate_pose, CameraIntrinsics, Pose};
pub use segmentation::SegmentationParams;
pub use tagmodel::{BitString, TagFamily, TagId};
pub use topology::FilterParams;
