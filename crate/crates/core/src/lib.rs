//! Geometry, tracks, synthetic data and metrics for dual-stream camera/object
//! controllable video generation.
//!
//! Everything in this crate is plain CPU code with 64-bit geometry; the
//! learned parts live in `dualcam-model`.

pub mod eval;
pub mod frame;
pub mod geom;
pub mod io;
pub mod rng;
pub mod synth;
pub mod tracks;

pub use frame::{Clip, Image};
pub use geom::{CameraIntrinsics, CameraPath, CameraPose, DepthMap, GeomError};
pub use tracks::{Role, TrackSet, TrajectoryMap};
