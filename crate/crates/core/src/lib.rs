//! Zero-shot building segmentation of labeled point clouds through
//! equirectangular images.
//!
//! The workflow: project a cloud around a reference point into a 360° image
//! while recording which points fell into which pixel ([`projection`],
//! [`mapping`]); hand the image to any 2D segmenter and read back its building
//! masks ([`masks`], or [`oracle`] for ground-truth masks); lift the masks onto
//! the points ([`backproject`]); and score the result ([`eval`]).

pub mod backproject;
pub mod cloud;
pub mod config;
pub mod eval;
pub mod image;
pub mod mapping;
pub mod masks;
pub mod oracle;
pub mod pipeline;
pub mod projection;
pub mod synthetic;

pub use backproject::{backproject, DepthMode, PredictionSet};
pub use cloud::{load_point_cloud, save_labeled_cloud, CloudFormat, LabeledCloud};
pub use mapping::{read_mapping, write_mapping, PixelMapping};
pub use masks::{merge_masks, read_mask_pgm, write_mask_pgm, Mask};
pub use projection::{project_scene, ReferencePoint};
