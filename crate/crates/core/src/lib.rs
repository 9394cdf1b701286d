//! Coarse-to-fine gaze estimation.
//!
//! A face image yields a basic gaze direction; two eye images, fused by an
//! additive attention component and coupled to the face path through a
//! gated state, yield a residual that refines it. The crate carries its own
//! reverse-mode autodiff tape so every layer can be verified against finite
//! differences.

pub mod checks;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod model;
pub mod params;
pub mod tensor;
pub mod training;
pub mod weights;

pub use error::{Error, Result};
pub use params::{BufferId, ParamId, ParamStore};
pub use tensor::{Scalar, Tape, Tensor, Var};
