//! Cascaded view-prompt tuning for neural radiance fields, desk scale.
//!
//! A radiance field is trained in stages: stage 0 is a plain field, and each
//! later stage is conditioned on the RGB images the previous stage rendered
//! for every training/validation/test pose (its "prompt bank"). Everything
//! runs on CPU in f64 against small procedural scenes with an analytic
//! ground-truth renderer, so the whole pipeline is checkable end to end.

pub mod autodiff;
pub mod camera;
pub mod encoding;
pub mod img;
pub mod error;
pub mod util;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
