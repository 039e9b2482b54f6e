//! Event-assisted deblurring with 3D Gaussian splatting, on the CPU.
//!
//! A blurry frame plus the events recorded during its exposure are turned
//! into latent sharp frames with the event double integral ([`edi`]). A
//! Gaussian scene is then optimized so that the average of several
//! slightly displaced renders ([`ade`] predicts the displacements)
//! reproduces the blurry frame, while the log-difference between the first
//! and last render reproduces the integrated events ([`losses`]).
//! [`event_sim`] synthesizes ground-truth data for all of it.

pub mod ade;
pub mod dataset;
pub mod edi;
pub mod error;
pub mod event_sim;
pub mod geometry;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use geometry::{covariance_from, quat_to_rotmat, CameraView, Gaussian, GaussianCloud, Pose, Quat};
pub use image::{luminance, Image};
