//! Two-stage sparse-view camera pose estimation.
//!
//! A coarse stage regresses one pose per view from globally pooled image
//! features; a refinement stage then probes 3D points inside the estimated
//! capture volume, projects them into every view, and lets an LSTM predict
//! pose updates from the sampled features.

pub mod autodiff;
pub mod camera;
pub mod error;
pub mod evalsuite;
pub mod geometry;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod posenet;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
pub use camera::{CameraView, Image, Intrinsics};
pub use geometry::Pose;
pub use posenet::{ModelConfig, SparsePose};
pub use synthdata::{DatasetConfig, SceneSample};
pub use trainer::{Precision, TrainConfig, Trainer};
